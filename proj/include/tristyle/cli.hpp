#pragma once

#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tristyle/errors.hpp"

namespace tristyle::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kValidation = 3, kNumerical = 4 };

int exit_code_for(ErrorKind kind);

// Resolves one subcommand's settings. Precedence, highest first: command-line
// flags, TRISTYLE_<KEY> environment variables, the JSON config file (either a
// flat object or one keyed by subcommand name), then built-in defaults.
class Settings {
 public:
  using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

  Settings(std::string command, nlohmann::json defaults, nlohmann::json file, std::map<std::string, std::string> flags,
           EnvLookup env = process_env);

  static std::optional<std::string> process_env(const std::string& name);
  static std::string env_name(const std::string& key);

  nlohmann::json get(const std::string& key) const;
  std::string str(const std::string& key) const;
  int integer(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::uint64_t seed() const;
  // Every known key with its resolved value and source.
  nlohmann::json resolved() const;

 private:
  std::pair<nlohmann::json, std::string> lookup(const std::string& key) const;

  std::string command_;
  nlohmann::json defaults_;
  nlohmann::json file_;
  std::map<std::string, std::string> flags_;
  EnvLookup env_;
};

// Runs the tool with argv-style arguments (args[0] is the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tristyle::cli
