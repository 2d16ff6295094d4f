#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "tristyle/tensor.hpp"

namespace tristyle {

// SHA-256 of the 8-bit RGB pixels and dimensions, independent of PNG encoding.
std::string image_content_hash(const Tensor& image);

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

class StyleLexicon {
 public:
  static StyleLexicon load(const std::filesystem::path& path);
  static StyleLexicon load_default();
  static StyleLexicon from_entries(std::vector<std::string> entries, std::string version);

  const std::string& version() const { return version_; }
  bool is_style_token(const std::string& word) const { return tokens_.count(word) > 0; }
  // Multi-word entries, longest first, each as a token sequence.
  const std::vector<std::vector<std::string>>& phrases() const { return phrases_; }
  // Style tokens and phrases present in a caption.
  std::vector<std::string> violations(const std::string& caption) const;

 private:
  std::string version_;
  std::set<std::string> tokens_;
  std::vector<std::vector<std::string>> phrases_;
};

bool is_function_word(const std::string& word);

class Captioner {
 public:
  virtual ~Captioner() = default;
  virtual std::string id() const = 0;
  virtual std::string caption(const Tensor& image) const = 0;
  // Reads the image first; unreadable files are invalid input.
  std::string caption_file(const std::filesystem::path& path) const;
};

// Fixture table keyed by image_content_hash.
class MockCaptioner : public Captioner {
 public:
  MockCaptioner() = default;
  explicit MockCaptioner(std::map<std::string, std::string> table) : table_(std::move(table)) {}
  static MockCaptioner load(const std::filesystem::path& fixture_json);

  void add(const Tensor& image, const std::string& caption) { table_[image_content_hash(image)] = caption; }
  std::string id() const override { return "mock-captioner"; }
  std::string caption(const Tensor& image) const override;
  nlohmann::json to_json() const;

 private:
  std::map<std::string, std::string> table_;
};

struct HttpEndpoint {
  std::string host = "127.0.0.1";
  int port = 0;
  int timeout_ms = 5000;
  int attempts = 2;
};

// POST /caption {"image": base64 PNG} -> {"caption": ...}
class HttpCaptioner : public Captioner {
 public:
  explicit HttpCaptioner(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}
  std::string id() const override;
  std::string caption(const Tensor& image) const override;

 private:
  HttpEndpoint endpoint_;
};

class EditClient {
 public:
  virtual ~EditClient() = default;
  virtual std::string id() const = 0;
  virtual std::string edit(const std::string& text, const std::string& instruction) const = 0;
};

// POST /edit {"text", "instruction"} -> {"text": ...}
class HttpEditClient : public EditClient {
 public:
  explicit HttpEditClient(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}
  std::string id() const override;
  std::string edit(const std::string& text, const std::string& instruction) const override;

 private:
  HttpEndpoint endpoint_;
};

class StyleStripper {
 public:
  virtual ~StyleStripper() = default;
  virtual std::string id() const = 0;
  // Raises degenerate-caption when nothing but style remains.
  virtual std::string strip(const std::string& caption) const = 0;
};

// Deletes lexicon phrases and tokens, then trims dangling function words.
class RuleStripper : public StyleStripper {
 public:
  explicit RuleStripper(StyleLexicon lexicon) : lexicon_(std::move(lexicon)) {}
  std::string id() const override { return "rule-fallback"; }
  std::string strip(const std::string& caption) const override;

 private:
  StyleLexicon lexicon_;
};

inline constexpr const char* kStripInstructionVersion = "strip-v1";
const std::string& strip_instruction();

// Asks an edit client to delete style descriptors, validates the answer
// against the lexicon, re-prompts once, then gives up.
class LlmStripper : public StyleStripper {
 public:
  LlmStripper(const EditClient& client, StyleLexicon lexicon) : client_(client), lexicon_(std::move(lexicon)) {}
  std::string id() const override { return client_.id(); }
  std::string strip(const std::string& caption) const override;

 private:
  const EditClient& client_;
  StyleLexicon lexicon_;
};

struct CaptionPair {
  std::string t_clip;
  std::string t_wo_style;
  std::string captioner_id;
  std::string stripper_id;
  std::string image_hash;
  std::string image_ref;

  nlohmann::json to_json() const;
  static CaptionPair from_json(const nlohmann::json& j);
};

// JSON-lines store keyed by (image hash, captioner id, stripper id).
class PairStore {
 public:
  explicit PairStore(std::filesystem::path path);

  const CaptionPair* find(const std::string& image_hash, const std::string& captioner_id,
                          const std::string& stripper_id) const;
  // Appends unless the key is present; returns the stored pair either way.
  CaptionPair put(const CaptionPair& pair);
  std::vector<CaptionPair> all() const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::map<std::string, CaptionPair> pairs_;
  std::vector<std::string> order_;
};

CaptionPair build_training_pair(const std::filesystem::path& image, const Captioner& captioner,
                                const StyleStripper& stripper, PairStore* store = nullptr);

}  // namespace tristyle
