#include "tristyle/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include <CLI11.hpp>

#include "tristyle/hashing.hpp"
#include "tristyle/hf_curation.hpp"
#include "tristyle/image_io.hpp"
#include "tristyle/lora_finetune.hpp"
#include "tristyle/models.hpp"
#include "tristyle/rng.hpp"
#include "tristyle/semantic_caption.hpp"
#include "tristyle/synth.hpp"
#include "tristyle/text.hpp"
#include "tristyle/train.hpp"
#include "tristyle/triple_pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace tristyle::cli {

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput:
    case ErrorKind::Precondition:
    case ErrorKind::Quota:
    case ErrorKind::DegenerateCaption:
    case ErrorKind::NotFound:
    case ErrorKind::State: return kValidation;
    case ErrorKind::Numerical:
    case ErrorKind::UndefinedMetric: return kNumerical;
    default: return kFailure;
  }
}

Settings::Settings(std::string command, json defaults, json file, std::map<std::string, std::string> flags,
                   EnvLookup env)
    : command_(std::move(command)),
      defaults_(std::move(defaults)),
      file_(std::move(file)),
      flags_(std::move(flags)),
      env_(std::move(env)) {}

std::optional<std::string> Settings::process_env(const std::string& name) {
  const char* v = std::getenv(name.c_str());
  if (!v) return std::nullopt;
  return std::string(v);
}

std::string Settings::env_name(const std::string& key) {
  std::string out = "TRISTYLE_";
  for (char c : key) out.push_back(c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  return out;
}

namespace {

// Raw text from flags or the environment; typed later against the default.
json typed(const std::string& raw, const json& like, const std::string& key) {
  if (like.is_string()) return raw;
  if (like.is_boolean()) {
    std::string v = raw;
    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    fail(ErrorKind::InvalidInput, "setting '" + key + "' expects a boolean, got '" + raw + "'");
  }
  try {
    std::size_t used = 0;
    if (like.is_number_integer()) {
      const long long n = std::stoll(raw, &used);
      if (used == raw.size()) return n;
    } else if (like.is_number()) {
      const double d = std::stod(raw, &used);
      if (used == raw.size()) return d;
    } else {
      return json::parse(raw);
    }
  } catch (const std::exception&) {
  }
  fail(ErrorKind::InvalidInput, "setting '" + key + "' expects a number, got '" + raw + "'");
}

}  // namespace

std::pair<json, std::string> Settings::lookup(const std::string& key) const {
  const json like = defaults_.contains(key) ? defaults_.at(key) : json("");
  if (const auto it = flags_.find(key); it != flags_.end()) return {typed(it->second, like, key), "flag"};
  if (const auto v = env_(env_name(key))) return {typed(*v, like, key), "env"};
  if (file_.is_object()) {
    if (file_.contains(command_) && file_[command_].is_object() && file_[command_].contains(key))
      return {file_[command_][key], "config"};
    if (file_.contains(key) && !file_[key].is_object()) return {file_[key], "config"};
  }
  if (defaults_.contains(key)) return {defaults_.at(key), "default"};
  fail(ErrorKind::InvalidInput, "unknown setting '" + key + "' for " + command_);
}

json Settings::get(const std::string& key) const { return lookup(key).first; }

std::string Settings::str(const std::string& key) const {
  const json v = get(key);
  return v.is_string() ? v.get<std::string>() : v.dump();
}

int Settings::integer(const std::string& key) const {
  const json v = get(key);
  if (!v.is_number_integer()) fail(ErrorKind::InvalidInput, "setting '" + key + "' must be an integer");
  return v.get<int>();
}

double Settings::real(const std::string& key) const {
  const json v = get(key);
  if (!v.is_number()) fail(ErrorKind::InvalidInput, "setting '" + key + "' must be a number");
  return v.get<double>();
}

bool Settings::flag(const std::string& key) const {
  const json v = get(key);
  if (!v.is_boolean()) fail(ErrorKind::InvalidInput, "setting '" + key + "' must be a boolean");
  return v.get<bool>();
}

std::uint64_t Settings::seed() const {
  const json v = get("seed");
  if (!v.is_number_integer() || v.get<long long>() < 0)
    fail(ErrorKind::InvalidInput, "seed must be a non-negative integer");
  return v.get<std::uint64_t>();
}

json Settings::resolved() const {
  json out = json::object();
  for (const auto& [key, _] : defaults_.items()) {
    const auto [value, source] = lookup(key);
    out[key] = {{"value", value}, {"source", source}};
  }
  return out;
}

namespace {

struct Option {
  std::string key;
  json fallback;
  std::string help;
};

struct Context {
  const Settings& s;
  fs::path out;
  std::ostream& stdout_;
  json inputs = json::object();
  json artifacts = json::array();
  json extra = json::object();

  fs::path input(const std::string& key, bool required = true) {
    const std::string v = s.str(key);
    if (v.empty()) {
      if (required) fail(ErrorKind::InvalidInput, "--" + key + " is required");
      return {};
    }
    const fs::path p(v);
    if (!fs::exists(p)) fail(ErrorKind::NotFound, key + " path " + p.string() + " does not exist", {{key, v}});
    if (fs::is_regular_file(p)) inputs[p.string()] = sha256_file(p);
    return p;
  }
  void artifact(const fs::path& p) { artifacts.push_back(p.string()); }
};

using Handler = std::function<void(Context&)>;

struct Command {
  std::string name;
  std::string help;
  std::vector<Option> options;
  Handler handler;
};

std::string flag_name(const std::string& key) {
  std::string f = key;
  std::replace(f.begin(), f.end(), '_', '-');
  return "--" + f;
}

std::vector<fs::path> image_inputs(const fs::path& p) {
  if (fs::is_directory(p)) {
    auto files = list_pngs(p);
    if (files.empty()) fail(ErrorKind::InvalidInput, "no PNG images in " + p.string());
    return files;
  }
  return {p};
}

Tensor load_batch(const std::vector<fs::path>& files) {
  std::vector<Tensor> images;
  for (const auto& f : files) images.push_back(read_png(f));
  return stack_images(images);
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) fail(ErrorKind::Io, "cannot write " + path.string());
  os << j.dump(2) << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) fail(ErrorKind::Io, "cannot write " + path.string());
  os << text;
}

// captions.jsonl rows: {"image": file name relative to the directory, "caption"}.
LatentDataset captioned_dir(const fs::path& dir, const Autoencoder& ae, Context& ctx) {
  const fs::path index = dir / "captions.jsonl";
  std::ifstream is(index);
  if (!is) fail(ErrorKind::NotFound, "no captions.jsonl in " + dir.string());
  ctx.inputs[index.string()] = sha256_file(index);
  std::vector<Tensor> images;
  LatentDataset data;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const json row = json::parse(line);
    images.push_back(read_png(dir / row.at("image").get<std::string>()));
    data.captions.push_back(row.at("caption").get<std::string>());
  }
  if (images.empty()) fail(ErrorKind::InvalidInput, index.string() + " lists no images");
  data.latents = ae.encode(stack_images(images));
  return data;
}

const std::vector<Option> kModelOptions = {
    {"ae", "runs/ae/ae.ckpt", "autoencoder checkpoint"},
    {"denoiser", "runs/denoiser/denoiser.ckpt", "denoiser checkpoint"},
};

const std::vector<Option> kPipelineOptions = {
    {"lora", "", "LoRA adapter checkpoint"},
    {"content", "", "content PNG or directory of PNGs"},
    {"prompt", "", "prompt for the main and style passes"},
    {"inversion_prompt", "", "prompt for inversion (defaults to --prompt)"},
    {"t_s_small", 15, "small threshold, as an inference-step index"},
    {"t_s_large", 30, "large threshold, as an inference-step index"},
    {"beta", 0.6, "query fusion weight of the inversion queries"},
    {"guidance", 1.0, "classifier-free guidance scale"},
    {"steps", 50, "DDIM inference steps"},
    {"no_lora", false, "run the style pass without the adapter"},
    {"no_swap_kv", false, "keep the main pass keys and values"},
    {"no_fuse_query", false, "keep the main pass queries"},
    {"adain", false, "experimental: match initial latent statistics to the style latent"},
};

std::vector<Option> concat(std::initializer_list<std::vector<Option>> parts) {
  std::vector<Option> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

PipelineConfig pipeline_config(const Settings& s, const DenoiserConfig& dc) {
  PipelineConfig c = PipelineConfig::defaults(dc);
  c.inference_steps = s.integer("steps");
  c.t_s_small = s.integer("t_s_small");
  c.t_s_large = s.integer("t_s_large");
  c.prompt = s.str("prompt");
  if (const auto inv = s.str("inversion_prompt"); !inv.empty()) c.inversion_prompt = inv;
  c.guidance = static_cast<float>(s.real("guidance"));
  c.use_lora = !s.flag("no_lora");
  c.seed = s.seed();
  c.policy.beta = static_cast<float>(s.real("beta"));
  c.policy.swap_kv = !s.flag("no_swap_kv");
  c.policy.fuse_query = !s.flag("no_fuse_query");
  c.experimental_adain = s.flag("adain");
  return c;
}

// Threshold, prompt and policy checks need no weights, so they run first.
void prevalidate(const Settings& s) {
  DenoiserConfig dc;
  dc.vocab_size = Vocabulary::standard().size();
  pipeline_config(s, dc).validate(dc);
}

void write_images(Context& ctx, const Tensor& images, const std::vector<fs::path>& names, const std::string& dir) {
  const fs::path out = ctx.out / dir;
  fs::create_directories(out);
  for (int i = 0; i < images.dim(0); ++i) {
    const fs::path p = out / names[static_cast<std::size_t>(i)].filename();
    write_png(p, image_at(images, i));
    ctx.artifact(p);
  }
}

void run_pipeline(Context& ctx, const std::string& mode) {
  prevalidate(ctx.s);
  const auto files = image_inputs(ctx.input("content"));
  const ModelBundle models = ModelBundle::load(ctx.input("ae"), ctx.input("denoiser"));
  std::optional<LoraAdapter> lora;
  if (const fs::path lp = ctx.input("lora", false); !lp.empty()) lora = load_lora(lp);
  PipelineConfig config = pipeline_config(ctx.s, models.denoiser.config());
  if (lora) config.lora_id = ctx.s.str("lora");
  const TriplePipeline pipe(models, lora ? &*lora : nullptr);
  const Tensor content = load_batch(files);
  TransferResult r;
  if (mode == "transfer")
    r = pipe.image_style_transfer(content, config);
  else if (mode == "stylize")
    r = pipe.text_stylization(content, config.prompt, config);
  else
    r = pipe.color_edit(content, config.prompt, config);
  write_images(ctx, r.images, files, "images");
  write_json(ctx.out / "result.json", r.to_json());
  ctx.artifact(ctx.out / "result.json");
  ctx.stdout_ << r.to_json().dump() << '\n';
}

void cmd_make_data(Context& ctx) {
  const auto& s = ctx.s;
  const int count = s.integer("count"), held = s.integer("held_out");
  if (count < 1 || held < 0) fail(ErrorKind::InvalidInput, "count must be positive and held_out non-negative");
  const std::uint64_t seed = s.seed();
  json fixture = json::object();
  auto write_set = [&](const std::string& name, const std::vector<Scene>& scenes) {
    const fs::path dir = ctx.out / name;
    fs::create_directories(dir);
    std::ofstream index(dir / "captions.jsonl", std::ios::trunc);
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      char file[32];
      std::snprintf(file, sizeof file, "scene_%05zu.png", i);
      write_png(dir / file, scenes[i].image);
      index << json{{"image", file}, {"caption", scenes[i].caption}}.dump() << '\n';
      fixture[image_content_hash(scenes[i].image)] = scenes[i].caption;
    }
    ctx.artifact(dir);
  };
  write_set("train", make_scenes(count, seed));
  if (held > 0) write_set("heldout", make_scenes(held, seed + 1));
  const Scene ref = reference_style_scene();
  const fs::path ref_png = ctx.out / "style" / "reference.png";
  fs::create_directories(ref_png.parent_path());
  write_png(ref_png, ref.image);
  fixture[image_content_hash(ref.image)] = ref.caption;
  write_json(ctx.out / "style" / "reference.json", {{"id", "reference"}, {"image", ref_png.string()}, {"caption", ref.caption}});
  write_json(ctx.out / "caption_fixture.json", fixture);
  ctx.artifact(ref_png);
  ctx.artifact(ctx.out / "caption_fixture.json");
  ctx.stdout_ << json{{"train", count}, {"heldout", held}, {"reference", ref_png.string()}}.dump() << '\n';
}

void cmd_train_ae(Context& ctx) {
  const auto& s = ctx.s;
  const fs::path data = ctx.input("data");
  const Tensor images = load_batch(image_inputs(data));
  Autoencoder ae(AutoencoderConfig{}, derive_seed(s.seed(), "ae-init"));
  OptimizerConfig opt;
  opt.lr = static_cast<float>(s.real("lr"));
  opt.batch = s.integer("batch");
  opt.seed = derive_seed(s.seed(), "ae-train");
  const TrainTrace trace = train_autoencoder(ae, images, s.integer("steps"), opt);
  const json summary{{"initial_loss", trace.smoothed_initial()},
                     {"final_loss", trace.smoothed_final()},
                     {"reconstruction_mae", reconstruction_mae(ae, images)},
                     {"latent_scale", ae.latent_scale()}};
  save_autoencoder(ctx.out / "ae.ckpt", ae, {{"train", summary}});
  write_json(ctx.out / "trace.json", trace.to_json());
  ctx.artifact(ctx.out / "ae.ckpt");
  ctx.artifact(ctx.out / "trace.json");
  ctx.extra["summary"] = summary;
  ctx.stdout_ << summary.dump() << '\n';
}

void cmd_train_denoiser(Context& ctx) {
  const auto& s = ctx.s;
  const Autoencoder ae = load_autoencoder(ctx.input("ae"));
  const LatentDataset data = captioned_dir(ctx.input("data"), ae, ctx);
  DenoiserConfig dc;
  dc.base_channels = s.integer("base_channels");
  dc.vocab_size = Vocabulary::standard().size();
  const Denoiser model(dc, derive_seed(s.seed(), "denoiser-init"));
  const auto schedule = NoiseSchedule::linear();
  OptimizerConfig opt;
  opt.lr = static_cast<float>(s.real("lr"));
  opt.batch = s.integer("batch");
  opt.cond_dropout = static_cast<float>(s.real("cond_dropout"));
  opt.seed = derive_seed(s.seed(), "denoiser-train");
  const TrainTrace trace = train_denoiser(model, data, schedule, s.integer("steps"), opt);
  const json summary{{"initial_loss", trace.smoothed_initial()}, {"final_loss", trace.smoothed_final()}};
  save_denoiser(ctx.out / "denoiser.ckpt", model, schedule, {{"train", summary}});
  write_json(ctx.out / "trace.json", trace.to_json());
  ctx.artifact(ctx.out / "denoiser.ckpt");
  ctx.artifact(ctx.out / "trace.json");
  ctx.extra["summary"] = summary;
  ctx.stdout_ << summary.dump() << '\n';
}

HttpEndpoint endpoint(const Settings& s, const std::string& prefix) {
  HttpEndpoint ep;
  ep.host = s.str(prefix + "_host");
  ep.port = s.integer(prefix + "_port");
  ep.timeout_ms = s.integer("timeout_ms");
  if (ep.port <= 0) fail(ErrorKind::InvalidInput, "--" + prefix + "-port is required for the http client");
  return ep;
}

void cmd_caption(Context& ctx) {
  const auto& s = ctx.s;
  const auto files = image_inputs(ctx.input("image"));
  const std::string lex_path = s.str("lexicon");
  const StyleLexicon lexicon = lex_path.empty() ? StyleLexicon::load_default() : StyleLexicon::load(lex_path);

  std::unique_ptr<Captioner> captioner;
  if (s.str("captioner") == "mock")
    captioner = std::make_unique<MockCaptioner>(MockCaptioner::load(ctx.input("fixture")));
  else if (s.str("captioner") == "http")
    captioner = std::make_unique<HttpCaptioner>(endpoint(s, "captioner"));
  else
    fail(ErrorKind::InvalidInput, "captioner must be 'mock' or 'http', got '" + s.str("captioner") + "'");

  std::unique_ptr<EditClient> llm;
  std::unique_ptr<StyleStripper> stripper;
  if (s.str("stripper") == "rule") {
    stripper = std::make_unique<RuleStripper>(lexicon);
  } else if (s.str("stripper") == "llm") {
    llm = std::make_unique<HttpEditClient>(endpoint(s, "llm"));
    stripper = std::make_unique<LlmStripper>(*llm, lexicon);
  } else {
    fail(ErrorKind::InvalidInput, "stripper must be 'rule' or 'llm', got '" + s.str("stripper") + "'");
  }

  const std::string pairs = s.str("pairs");
  PairStore store(pairs.empty() ? ctx.out / "pairs.jsonl" : fs::path(pairs));
  json rows = json::array();
  for (const auto& f : files) rows.push_back(build_training_pair(f, *captioner, *stripper, &store).to_json());
  ctx.artifact(store.path());
  ctx.extra["lexicon_version"] = lexicon.version();
  ctx.extra["strip_instruction"] = kStripInstructionVersion;
  ctx.stdout_ << (rows.size() == 1 ? rows[0] : rows).dump() << '\n';
}

StageQuotas quotas_from(const Settings& s) {
  StageQuotas q;
  q.stage1_to_2 = s.integer("quota_12");
  q.stage2_to_3 = s.integer("quota_23");
  if (q.stage1_to_2 < 1 || q.stage2_to_3 < 1) fail(ErrorKind::InvalidInput, "stage quotas must be positive");
  return q;
}

void cmd_finetune(Context& ctx) {
  const auto& s = ctx.s;
  const int stage = s.integer("stage");
  if (stage < 1 || stage > 3) fail(ErrorKind::InvalidInput, "stage must be 1, 2 or 3");
  const StageQuotas quotas = quotas_from(s);
  StageDataset dataset;
  if (const fs::path dp = ctx.input("dataset", false); !dp.empty()) {
    dataset = StageDataset::load(dp);
    if (dataset.stage != stage)
      fail(ErrorKind::InvalidInput, "dataset is for stage " + std::to_string(dataset.stage) + ", not " +
                                        std::to_string(stage));
  } else {
    if (stage != 1) fail(ErrorKind::InvalidInput, "stages 2 and 3 need --dataset from a promotion");
    if (s.str("caption").empty()) fail(ErrorKind::InvalidInput, "--caption is required with --image");
    dataset = StageDataset{1, {{"reference", ctx.input("image"), s.str("caption")}}};
  }
  dataset.validate(quotas);
  for (const auto& it : dataset.items) ctx.inputs[it.image.string()] = sha256_file(it.image);

  const ModelBundle models = ModelBundle::load(ctx.input("ae"), ctx.input("denoiser"));
  FinetuneConfig cfg;
  cfg.steps = s.integer("steps") > 0 ? s.integer("steps") : FinetuneConfig::default_steps(stage);
  cfg.lr = static_cast<float>(s.real("lr"));
  cfg.batch = s.integer("batch");
  cfg.rank = s.integer("rank");
  cfg.scale = static_cast<float>(s.real("lora_scale"));
  cfg.seed = s.seed();
  cfg.cond_dropout = static_cast<float>(s.real("cond_dropout"));

  LoraAdapter adapter;
  const fs::path prev = ctx.input("lora", false);
  if (!prev.empty() && !s.flag("retrain")) {
    adapter = load_lora(prev);
    if (adapter.manifest().stage != stage - 1 && adapter.manifest().stage != stage)
      fail(ErrorKind::State, "adapter was trained through stage " + std::to_string(adapter.manifest().stage) +
                                 "; cannot resume into stage " + std::to_string(stage),
           {{"adapter_stage", adapter.manifest().stage}, {"stage", stage}});
  } else {
    if (stage > 1 && !s.flag("retrain"))
      fail(ErrorKind::InvalidInput, "stage " + std::to_string(stage) + " resumes the previous adapter; pass --lora or --retrain");
    adapter = fresh_adapter(models.denoiser, cfg);
  }
  const TrainTrace trace = finetune_stage(models, adapter, dataset, cfg, quotas);
  const fs::path out = ctx.out / ("lora_stage" + std::to_string(stage) + ".ckpt");
  save_lora(out, adapter);
  write_json(ctx.out / "trace.json", trace.to_json());
  ctx.artifact(out);
  const json summary{{"stage", stage},
                     {"dataset_size", dataset.size()},
                     {"dataset_hash", adapter.manifest().dataset_hash},
                     {"steps", cfg.steps},
                     {"initial_loss", trace.smoothed_initial()},
                     {"final_loss", trace.smoothed_final()},
                     {"adapter", out.string()}};
  ctx.extra["summary"] = summary;
  ctx.stdout_ << summary.dump() << '\n';
}

void cmd_generate(Context& ctx) {
  const auto& s = ctx.s;
  const ModelBundle models = ModelBundle::load(ctx.input("ae"), ctx.input("denoiser"));
  const LoraAdapter adapter = load_lora(ctx.input("lora"));
  const int stage = s.integer("stage") > 0 ? s.integer("stage") : std::max(1, adapter.manifest().stage);
  const auto recs = generate_candidates(models, adapter, s.str("prompt"), s.integer("n"), s.seed(), stage,
                                        ctx.out / "candidates", s.integer("steps"));
  ctx.artifact(ctx.out / "candidates" / "candidates.jsonl");
  ctx.stdout_ << json{{"generated", recs.size()}, {"stage", stage},
                      {"manifest", (ctx.out / "candidates" / "candidates.jsonl").string()}}
                     .dump()
              << '\n';
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void cmd_curate(Context& ctx) {
  const auto& s = ctx.s;
  CurationStore store(s.str("store"));
  const std::string action = s.str("action"), session = s.str("session");
  auto need_session = [&] {
    if (session.empty()) fail(ErrorKind::InvalidInput, "--session is required for " + action);
  };
  json result;
  if (action == "create") {
    StageItem ref;
    if (const fs::path rp = ctx.input("reference", false); !rp.empty()) {
      std::ifstream is(rp);
      const json j = json::parse(is);
      ref = {j.at("id").get<std::string>(), j.at("image").get<std::string>(), j.at("caption").get<std::string>()};
    } else {
      ref = {s.str("reference_id"), ctx.input("image"), s.str("caption")};
    }
    result = store.create_session(s.str("name"), ref, quotas_from(s)).status();
  } else if (action == "add") {
    need_session();
    std::ifstream is(ctx.input("candidates"));
    std::vector<CandidateRecord> recs;
    std::string line;
    while (std::getline(is, line))
      if (!line.empty()) recs.push_back(CandidateRecord::from_json(json::parse(line)));
    result = {{"added", store.add_candidates(session, recs)}};
  } else if (action == "list") {
    need_session();
    result = store.list_candidates(session, s.integer("stage"), s.integer("page")).to_json();
  } else if (action == "select" || action == "deselect") {
    need_session();
    std::vector<std::string> ids = split_list(s.str("ids"));
    if (s.flag("all")) {
      ids.clear();
      const auto sess = store.session(session);
      const int quota = sess.stage < 3 ? sess.quotas.quota_after(sess.stage) : 0;
      for (const auto& [id, c] : sess.candidates)
        if (c.record.stage == sess.stage && static_cast<int>(ids.size()) < quota) ids.push_back(id);
    }
    result = (action == "select" ? store.select(session, ids) : store.deselect(session, ids)).to_json();
  } else if (action == "promote") {
    need_session();
    const auto ds = store.promote(session);
    result = {{"stage", ds.stage}, {"size", ds.size()}, {"dataset", store.dataset_path(session, ds.stage).string()}};
    ctx.artifact(store.dataset_path(session, ds.stage));
  } else if (action == "status") {
    need_session();
    result = store.session(session).status();
  } else {
    fail(ErrorKind::InvalidInput, "action must be one of create, add, list, select, deselect, promote, status");
  }
  ctx.stdout_ << result.dump() << '\n';
}

void cmd_serve(Context& ctx);

void cmd_sweep(Context& ctx) {
  const auto& s = ctx.s;
  std::vector<std::pair<int, int>> grid;
  for (const auto& cell : split_list(s.str("grid"))) {
    const auto colon = cell.find(':');
    if (colon == std::string::npos) fail(ErrorKind::InvalidInput, "grid cells look like small:large, got '" + cell + "'");
    try {
      grid.emplace_back(std::stoi(cell.substr(0, colon)), std::stoi(cell.substr(colon + 1)));
    } catch (const std::exception&) {
      fail(ErrorKind::InvalidInput, "grid cell '" + cell + "' is not two integers");
    }
  }
  if (grid.empty()) fail(ErrorKind::InvalidInput, "--grid is empty");
  const auto files = image_inputs(ctx.input("content"));
  const auto refs = image_inputs(ctx.input("style_refs"));
  const ModelBundle models = ModelBundle::load(ctx.input("ae"), ctx.input("denoiser"));
  std::optional<LoraAdapter> lora;
  if (const fs::path lp = ctx.input("lora", false); !lp.empty()) lora = load_lora(lp);
  const PipelineConfig config = pipeline_config(s, models.denoiser.config());
  const TriplePipeline pipe(models, lora ? &*lora : nullptr);
  const auto embedder = make_embedder(s.str("embedder"), &models.ae);
  const PerceptualDistance perceptual(&models.ae, &models.denoiser);
  const SweepReport report = pipe.threshold_sweep(load_batch(files), grid, config, load_batch(refs), *embedder, perceptual);
  write_text(ctx.out / "sweep.csv", report.csv());
  write_png(ctx.out / "sweep_grid.png", report.grid);
  ctx.artifact(ctx.out / "sweep.csv");
  ctx.artifact(ctx.out / "sweep_grid.png");
  ctx.stdout_ << report.csv();
}

void cmd_evaluate(Context& ctx) {
  const auto& s = ctx.s;
  const Tensor samples = load_batch(image_inputs(ctx.input("samples")));
  const Tensor refs = load_batch(image_inputs(ctx.input("refs")));
  const Autoencoder ae = load_autoencoder(ctx.input("ae"));
  std::optional<Denoiser> den;
  if (const fs::path dp = ctx.input("denoiser", false); !dp.empty()) den = load_denoiser(dp);
  const auto embedder = make_embedder(s.str("embedder"), &ae);
  const std::string config_hash = sha256_hex(s.resolved().dump()).substr(0, 16);

  std::vector<MetricReport> reports;
  auto report = [&](const std::string& metric, const std::string& emb, auto&& compute) {
    MetricReport r{metric, 0.0, samples.dim(0), refs.dim(0), emb, config_hash, {}};
    try {
      r.value = compute(r.warnings);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::UndefinedMetric && e.kind() != ErrorKind::InvalidInput) throw;
      r.value = std::numeric_limits<double>::quiet_NaN();
      r.warnings.push_back(e.what());
    }
    reports.push_back(r);
  };
  const Embeddings es = embedder->embed_images(samples), er = embedder->embed_images(refs);
  report("fid", embedder->name(), [&](std::vector<std::string>& w) { return frechet_distance(es, er, &w); });
  report("image_similarity", embedder->name(),
         [&](std::vector<std::string>&) { return pairwise_similarity_score(es, er); });
  if (const std::string prompt = s.str("prompt"); !prompt.empty()) {
    const auto color = make_embedder("color", nullptr);
    report("text_similarity", color->name(),
           [&](std::vector<std::string>&) { return text_image_score(samples, prompt, *color); });
  }
  const PerceptualDistance perceptual(&ae, den ? &*den : nullptr);
  report("intra_cluster_lpips", den ? "perceptual(ae+denoiser)" : "perceptual(ae)", [&](std::vector<std::string>&) {
    return intra_cluster_from_distances(perceptual.matrix(samples, refs), perceptual.matrix(samples, samples));
  });
  json arr = json::array();
  for (const auto& r : reports) arr.push_back(r.to_json());
  write_json(ctx.out / "metrics.json", arr);
  write_text(ctx.out / "metrics.csv", reports_csv(reports));
  ctx.artifact(ctx.out / "metrics.json");
  ctx.artifact(ctx.out / "metrics.csv");
  ctx.stdout_ << arr.dump() << '\n';
}

const std::vector<Option> kHttpOptions = {
    {"captioner_host", "127.0.0.1", "captioning service host"},
    {"captioner_port", 0, "captioning service port"},
    {"llm_host", "127.0.0.1", "edit service host"},
    {"llm_port", 0, "edit service port"},
    {"timeout_ms", 5000, "per-request timeout"},
};

std::vector<Command> commands() {
  const std::vector<Option> quotas = {{"quota_12", 50, "selections to leave stage 1"},
                                      {"quota_23", 50, "selections to leave stage 2"}};
  return {
      {"make-data",
       "render the synthetic scene corpus and the reference style image",
       {{"out", "runs/data", "run directory"}, {"count", 512, "training scenes"}, {"held_out", 64, "held-out scenes"},
        {"seed", 11, "root seed"}},
       cmd_make_data},
      {"train-ae",
       "train the image autoencoder",
       {{"out", "runs/ae", "run directory"}, {"data", "runs/data/train", "directory of training PNGs"},
        {"steps", 1500, "optimizer steps"}, {"batch", 16, "batch size"}, {"lr", 2e-3, "learning rate"},
        {"seed", 1, "root seed"}},
       cmd_train_ae},
      {"train-denoiser",
       "train the text-conditioned latent denoiser",
       {{"out", "runs/denoiser", "run directory"}, {"ae", "runs/ae/ae.ckpt", "autoencoder checkpoint"},
        {"data", "runs/data/train", "directory with PNGs and captions.jsonl"}, {"steps", 3000, "optimizer steps"},
        {"batch", 8, "batch size"}, {"lr", 1e-3, "learning rate"}, {"cond_dropout", 0.1, "caption dropout rate"},
        {"base_channels", 32, "denoiser width"}, {"seed", 2, "root seed"}},
       cmd_train_denoiser},
      {"caption",
       "caption an image and strip its style words",
       concat({{{"out", "runs/caption", "run directory"}, {"image", "", "PNG or directory"},
                {"captioner", "mock", "mock or http"}, {"fixture", "runs/data/caption_fixture.json", "mock captioner table"},
                {"stripper", "rule", "rule or llm"}, {"lexicon", "", "style lexicon (default: bundled)"},
                {"pairs", "", "pair store (default: <out>/pairs.jsonl)"}, {"seed", 0, "root seed"}},
               kHttpOptions}),
       cmd_caption},
      {"finetune",
       "train one stage of the LoRA adapter",
       concat({{{"out", "runs/finetune", "run directory"}},
               kModelOptions,
               {{"stage", 1, "stage 1, 2 or 3"}, {"dataset", "", "stage dataset JSON from a promotion"},
                {"image", "", "stage-1 reference image"}, {"caption", "", "stage-1 caption"},
                {"lora", "", "adapter to resume"}, {"retrain", false, "start from a fresh adapter"},
                {"steps", 0, "steps (0: 1000 for stage 1, 800 otherwise)"}, {"lr", 1e-3, "learning rate"},
                {"batch", 4, "batch size"}, {"rank", 8, "adapter rank"}, {"lora_scale", 1.0, "adapter scale"},
                {"cond_dropout", 0.1, "caption dropout rate"}, {"seed", 3, "root seed"}},
               quotas}),
       cmd_finetune},
      {"generate",
       "sample candidate images with an adapter",
       concat({{{"out", "runs/generate", "run directory"}},
               kModelOptions,
               {{"lora", "", "adapter checkpoint"}, {"prompt", "", "prompt"}, {"n", 50, "candidates"},
                {"stage", 0, "stage tag (0: adapter stage)"}, {"steps", 50, "DDIM steps"}, {"seed", 1000, "first seed"}}}),
       cmd_generate},
      {"curate",
       "operate a curation store without the HTTP service",
       concat({{{"out", "runs/curate", "run directory"}, {"store", "runs/curation", "store directory"},
                {"action", "status", "create, add, list, select, deselect, promote or status"},
                {"session", "", "session id"}, {"name", "", "session name"},
                {"reference", "", "reference JSON {id, image, caption}"}, {"reference_id", "reference", "reference id"},
                {"image", "", "reference image"}, {"caption", "", "reference caption"},
                {"candidates", "", "candidates.jsonl to add"}, {"ids", "", "comma-separated candidate ids"},
                {"all", false, "select the first quota candidates by id"}, {"stage", 0, "stage to list"},
                {"page", 0, "page to list"}, {"seed", 0, "root seed"}},
               quotas}),
       cmd_curate},
      {"serve",
       "serve the curation HTTP API",
       {{"out", "runs/serve", "run directory"}, {"store", "runs/curation", "store directory"},
        {"host", "127.0.0.1", "bind address"}, {"port", 8080, "port"}, {"seed", 0, "root seed"}},
       cmd_serve},
      {"transfer",
       "image style transfer",
       concat({{{"out", "runs/transfer", "run directory"}, {"seed", 0, "root seed"}}, kModelOptions, kPipelineOptions}),
       [](Context& c) { run_pipeline(c, "transfer"); }},
      {"stylize",
       "text-driven stylization",
       concat({{{"out", "runs/stylize", "run directory"}, {"seed", 0, "root seed"}}, kModelOptions, kPipelineOptions}),
       [](Context& c) { run_pipeline(c, "stylize"); }},
      {"coloredit",
       "color edit driven by a prompt naming a color",
       concat({{{"out", "runs/coloredit", "run directory"}, {"seed", 0, "root seed"}}, kModelOptions, kPipelineOptions}),
       [](Context& c) { run_pipeline(c, "coloredit"); }},
      {"sweep",
       "threshold sweep",
       concat({{{"out", "runs/sweep", "run directory"}, {"seed", 0, "root seed"},
                {"style_refs", "", "style reference PNG or directory"},
                {"grid", "10:40,20:40,30:40", "small:large threshold pairs"},
                {"embedder", "ae-stats", "style embedder"}},
               kModelOptions, kPipelineOptions}),
       cmd_sweep},
      {"evaluate",
       "metrics for a sample set against references",
       {{"out", "runs/evaluate", "run directory"}, {"samples", "", "sample PNGs"}, {"refs", "", "reference PNGs"},
        {"ae", "runs/ae/ae.ckpt", "autoencoder checkpoint"}, {"denoiser", "", "denoiser checkpoint for perceptual features"},
        {"prompt", "", "prompt for the text score"}, {"embedder", "ae-stats", "image embedder"},
        {"seed", 0, "root seed"}},
       cmd_evaluate},
  };
}

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream is(path);
  if (!is) fail(ErrorKind::NotFound, "config file " + path + " not found");
  try {
    json j = json::parse(is);
    if (!j.is_object()) fail(ErrorKind::InvalidInput, "config file " + path + " must hold a JSON object");
    return j;
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidInput, "config file " + path + " is not valid JSON: " + e.what());
  }
}

void write_manifest(Context& ctx, const std::string& command, double millis) {
  const json manifest{{"command", command},
                      {"config", ctx.s.resolved()},
                      {"seeds", {{"root", ctx.s.seed()}}},
                      {"inputs", ctx.inputs},
                      {"artifacts", ctx.artifacts},
                      {"timings", {{"total_ms", millis}}},
                      {"tool_version", TRISTYLE_VERSION},
                      {"extra", ctx.extra}};
  write_json(ctx.out / "run_manifest.json", manifest);
}

void cmd_serve(Context& ctx) {
  CurationStore store(ctx.s.str("store"));
  CurationServer server(store);
  write_manifest(ctx, "serve", 0.0);
  ctx.stdout_ << json{{"listening", ctx.s.str("host") + ":" + std::to_string(ctx.s.integer("port"))},
                      {"api", "/api/v1"}}
                     .dump()
              << std::endl;
  server.run(ctx.s.str("host"), ctx.s.integer("port"));
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Toy latent-diffusion style transfer laboratory", args.empty() ? "tristyle" : args[0]};
  app.set_version_flag("--version", TRISTYLE_VERSION);
  app.require_subcommand(1);

  const auto cmds = commands();
  struct Bound {
    std::map<std::string, std::string> strings;
    std::map<std::string, bool> bools;
    std::map<std::string, CLI::Option*> opts;
    std::string config;
  };
  std::vector<Bound> bound(cmds.size());
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < cmds.size(); ++i) {
    auto* sub = app.add_subcommand(cmds[i].name, cmds[i].help);
    auto& b = bound[i];
    sub->add_option("--config", b.config, "JSON config file");
    for (const auto& o : cmds[i].options) {
      const std::string help = o.help + " [default: " + (o.fallback.is_string() ? o.fallback.get<std::string>()
                                                                                  : o.fallback.dump()) +
                               ", env: " + Settings::env_name(o.key) + "]";
      if (o.fallback.is_boolean())
        b.opts[o.key] = sub->add_flag(flag_name(o.key), b.bools[o.key], help);
      else
        b.opts[o.key] = sub->add_option(flag_name(o.key), b.strings[o.key], help);
    }
    subs.push_back(sub);
  }

  std::vector<std::string> rest(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
  std::reverse(rest.begin(), rest.end());
  try {
    app.parse(rest);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kOk : kUsage;
  }

  for (std::size_t i = 0; i < cmds.size(); ++i) {
    if (!subs[i]->parsed()) continue;
    const auto& cmd = cmds[i];
    auto& b = bound[i];
    const auto t0 = std::chrono::steady_clock::now();
    try {
      std::map<std::string, std::string> flags;
      json defaults = json::object();
      for (const auto& o : cmd.options) {
        defaults[o.key] = o.fallback;
        if (b.opts[o.key]->count() == 0) continue;
        flags[o.key] = o.fallback.is_boolean() ? (b.bools[o.key] ? "true" : "false") : b.strings[o.key];
      }
      std::string config_path = b.config;
      if (config_path.empty())
        if (const auto env = Settings::process_env("TRISTYLE_CONFIG")) config_path = *env;
      const Settings settings(cmd.name, defaults, load_config_file(config_path), flags);
      Context ctx{settings, settings.str("out"), out};
      if (!config_path.empty()) ctx.inputs[config_path] = sha256_file(config_path);
      fs::create_directories(ctx.out);
      cmd.handler(ctx);
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      if (cmd.name != "serve") write_manifest(ctx, cmd.name, ms);
      return kOk;
    } catch (const Error& e) {
      json j = e.to_json();
      j["command"] = cmd.name;
      err << j.dump() << std::endl;
      return exit_code_for(e.kind());
    } catch (const json::exception& e) {
      err << json{{"error", "invalid-input"}, {"message", e.what()}, {"command", cmd.name}}.dump() << std::endl;
      return kValidation;
    } catch (const std::exception& e) {
      err << json{{"error", "io"}, {"message", e.what()}, {"command", cmd.name}}.dump() << std::endl;
      return kFailure;
    }
  }
  return kUsage;
}

}  // namespace tristyle::cli
