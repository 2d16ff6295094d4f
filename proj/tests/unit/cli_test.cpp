#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "curation_fixture.hpp"
#include "tiny_models.hpp"
#include "tristyle/cli.hpp"

using namespace tristyle;
using fixtures::TempDir;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
  nlohmann::json out_json() const { return nlohmann::json::parse(out); }
  nlohmann::json err_json() const { return nlohmann::json::parse(err); }
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "tristyle");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

cli::Settings::EnvLookup env_of(std::map<std::string, std::string> vars) {
  return [vars](const std::string& k) -> std::optional<std::string> {
    const auto it = vars.find(k);
    if (it == vars.end()) return std::nullopt;
    return it->second;
  };
}

}  // namespace

TEST(Settings, PrecedenceFlagEnvConfigDefault) {
  const nlohmann::json defaults = {{"steps", 10}, {"lr", 0.5}, {"name", "x"}, {"flag", false}};
  const nlohmann::json file = {{"train", {{"steps", 30}, {"lr", 0.25}}}, {"name", "from-file"}};
  const cli::Settings s("train", defaults, file, {{"steps", "50"}},
                        env_of({{"TRISTYLE_STEPS", "40"}, {"TRISTYLE_LR", "0.125"}}));
  EXPECT_EQ(s.integer("steps"), 50);
  EXPECT_DOUBLE_EQ(s.real("lr"), 0.125);
  EXPECT_EQ(s.str("name"), "from-file");
  EXPECT_FALSE(s.flag("flag"));
  const auto r = s.resolved();
  EXPECT_EQ(r.at("steps").at("source"), "flag");
  EXPECT_EQ(r.at("lr").at("source"), "env");
  EXPECT_EQ(r.at("name").at("source"), "config");
  EXPECT_EQ(r.at("flag").at("source"), "default");
}

TEST(Settings, ConfigForOtherCommandIsIgnored) {
  const cli::Settings s("train", {{"steps", 10}}, {{"other", {{"steps", 99}}}}, {}, env_of({}));
  EXPECT_EQ(s.integer("steps"), 10);
}

TEST(Settings, ValuesAreTypedAgainstDefaults) {
  const cli::Settings s("x", {{"n", 1}, {"on", false}, {"r", 1.0}}, {}, {{"on", "true"}},
                        env_of({{"TRISTYLE_N", "seven"}, {"TRISTYLE_R", "2"}}));
  EXPECT_TRUE(s.flag("on"));
  EXPECT_DOUBLE_EQ(s.real("r"), 2.0);
  EXPECT_THROW(s.integer("n"), Error);
  EXPECT_THROW(s.get("missing"), Error);
  EXPECT_EQ(cli::Settings::env_name("t_s-small"), "TRISTYLE_T_S_SMALL");
}

TEST(ExitCodes, Mapping) {
  EXPECT_EQ(cli::exit_code_for(ErrorKind::InvalidInput), cli::kValidation);
  EXPECT_EQ(cli::exit_code_for(ErrorKind::Quota), cli::kValidation);
  EXPECT_EQ(cli::exit_code_for(ErrorKind::Numerical), cli::kNumerical);
  EXPECT_EQ(cli::exit_code_for(ErrorKind::UndefinedMetric), cli::kNumerical);
  EXPECT_EQ(cli::exit_code_for(ErrorKind::Io), cli::kFailure);
}

TEST(Cli, HelpVersionAndUsage) {
  const auto help = run({"--help"});
  EXPECT_EQ(help.code, 0);
  for (const char* cmd : {"train-ae", "train-denoiser", "caption", "finetune", "generate", "curate", "serve",
                          "transfer", "stylize", "coloredit", "sweep", "evaluate"})
    EXPECT_NE(help.out.find(cmd), std::string::npos) << cmd;
  const auto version = run({"--version"});
  EXPECT_EQ(version.code, 0);
  EXPECT_NE(version.out.find(TRISTYLE_VERSION), std::string::npos);
  EXPECT_EQ(run({"--bogus"}).code, 2);
  EXPECT_EQ(run({"transfer", "--no-such-flag"}).code, 2);
  EXPECT_EQ(run({}).code, 2);
}

TEST(Cli, ThresholdOrderRejectedBeforeLoading) {
  TempDir dir("cli-ts");
  const auto r = run({"transfer", "--out", (dir / "o").string(), "--t-s-small", "30", "--t-s-large", "20", "--ae",
                      (dir / "missing-ae.ckpt").string()});
  EXPECT_EQ(r.code, 3);
  const auto e = r.err_json();
  EXPECT_EQ(e.at("error"), "invalid-input");
  EXPECT_EQ(e.at("details").at("invariant"), "0 < t_s_small < t_s_large <= T");
  EXPECT_EQ(e.at("command"), "transfer");
}

TEST(Cli, MissingCheckpointIsReported) {
  TempDir dir("cli-miss");
  const auto r = run({"transfer", "--out", (dir / "o").string(), "--ae", (dir / "nope.ckpt").string(), "--content",
                      (dir / "c.png").string()});
  EXPECT_NE(r.code, 0);
  EXPECT_FALSE(r.err.empty());
}

TEST(Cli, CurateWorkflowWithManifest) {
  TempDir dir("cli-curate");
  const auto ref = fixtures::write_reference(dir / "img");
  const auto recs = fixtures::write_candidates(dir / "img" / "c", 1, 4);
  {
    std::ofstream os(dir / "cands.jsonl");
    for (const auto& r : recs) os << r.to_json().dump() << '\n';
  }
  const std::string store = (dir / "store").string(), out = (dir / "run").string();
  const auto created = run({"curate", "--out", out, "--store", store, "--action", "create", "--image",
                            ref.image.string(), "--caption", ref.caption, "--quota-12", "2", "--quota-23", "2"});
  ASSERT_EQ(created.code, 0) << created.err;
  const std::string id = created.out_json().at("id");
  EXPECT_EQ(run({"curate", "--out", out, "--store", store, "--action", "add", "--session", id, "--candidates",
                 (dir / "cands.jsonl").string()})
                .out_json()
                .at("added"),
            4);
  const auto over = run({"curate", "--out", out, "--store", store, "--action", "select", "--session", id, "--ids",
                         recs[0].id + "," + recs[1].id + "," + recs[2].id});
  EXPECT_EQ(over.code, 3);
  EXPECT_EQ(over.err_json().at("error"), "quota");
  EXPECT_EQ(run({"curate", "--out", out, "--store", store, "--action", "promote", "--session", id}).code, 3);
  EXPECT_EQ(run({"curate", "--out", out, "--store", store, "--action", "select", "--session", id, "--all"}).code, 0);
  const auto promoted = run({"curate", "--out", out, "--store", store, "--action", "promote", "--session", id});
  ASSERT_EQ(promoted.code, 0) << promoted.err;
  EXPECT_EQ(promoted.out_json().at("size"), 3);

  std::ifstream is(dir / "run" / "run_manifest.json");
  const auto manifest = nlohmann::json::parse(is);
  EXPECT_EQ(manifest.at("command"), "curate");
  EXPECT_EQ(manifest.at("config").at("action").at("value"), "promote");
  EXPECT_EQ(manifest.at("config").at("action").at("source"), "flag");
  EXPECT_EQ(manifest.at("config").at("page").at("source"), "default");
  EXPECT_TRUE(manifest.contains("tool_version"));
  EXPECT_TRUE(manifest.at("timings").contains("total_ms"));
}

TEST(Cli, ConfigFileFeedsSettings) {
  TempDir dir("cli-config");
  const auto ref = fixtures::write_reference(dir / "img");
  {
    std::ofstream os(dir / "cfg.json");
    os << nlohmann::json{{"curate", {{"quota_12", 7}, {"caption", "a red boat"}}}}.dump();
  }
  const auto r = run({"curate", "--config", (dir / "cfg.json").string(), "--out", (dir / "run").string(), "--store",
                      (dir / "store").string(), "--action", "create", "--image", ref.image.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out_json().at("quota"), 7);
  EXPECT_EQ(r.out_json().at("reference").at("caption"), "a red boat");
}

TEST(Cli, MakeDataThenCaptionStripsStyle) {
  TempDir dir("cli-data");
  const std::string data = (dir / "data").string();
  ASSERT_EQ(run({"make-data", "--out", data, "--count", "4", "--held-out", "2"}).code, 0);
  const auto r = run({"caption", "--out", (dir / "cap").string(), "--image", data + "/style/reference.png",
                      "--fixture", data + "/caption_fixture.json"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream is(dir / "cap" / "pairs.jsonl");
  std::string line;
  ASSERT_TRUE(std::getline(is, line));
  const auto pair = nlohmann::json::parse(line);
  EXPECT_EQ(pair.at("t_wo_style"), "a blue house beside a tree");
  EXPECT_EQ(pair.at("stripper"), "rule-fallback");
}
