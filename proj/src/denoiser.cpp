#include "tristyle/denoiser.hpp"

#include <algorithm>
#include <cmath>

#include "tristyle/errors.hpp"

namespace tristyle {

std::vector<std::string> DenoiserConfig::decoder_attention_layers() const {
  std::vector<std::string> names;
  for (int level = static_cast<int>(channel_mult.size()) - 1; level >= 0; --level) {
    if (std::find(attention_levels.begin(), attention_levels.end(), level) == attention_levels.end()) continue;
    for (int j = 0; j < decoder_blocks; ++j) names.push_back("up" + std::to_string(level) + ".attn" + std::to_string(j));
  }
  return names;
}

std::vector<std::string> DenoiserConfig::all_attention_layers() const {
  std::vector<std::string> names;
  for (int level = 0; level < static_cast<int>(channel_mult.size()); ++level)
    if (std::find(attention_levels.begin(), attention_levels.end(), level) != attention_levels.end())
      names.push_back("down" + std::to_string(level) + ".attn");
  names.push_back("mid.attn");
  for (auto& n : decoder_attention_layers()) names.push_back(n);
  return names;
}

void DenoiserConfig::validate() const {
  require(latent_channels > 0 && base_channels > 0 && !channel_mult.empty(), "denoiser config: empty widths");
  require(latent_size % (1 << (channel_mult.size() - 1)) == 0, "latent size incompatible with U-Net depth");
  require(decoder_blocks >= 1, "denoiser config: decoder_blocks must be >= 1");
  require(!decoder_attention_layers().empty(), "denoiser config: decoder must contain at least one self-attention layer");
  require(vocab_size > 0, "denoiser config: vocab_size must be positive");
  for (int m : channel_mult) {
    require(base_channels * m % heads == 0, "denoiser config: width not divisible by heads");
    require(base_channels * m % groups == 0, "denoiser config: width not divisible by groups");
  }
}

nlohmann::json DenoiserConfig::to_json() const {
  return {{"latent_channels", latent_channels}, {"latent_size", latent_size},   {"base_channels", base_channels},
          {"channel_mult", channel_mult},       {"attention_levels", attention_levels},
          {"decoder_blocks", decoder_blocks},   {"heads", heads},               {"time_dim", time_dim},
          {"text_dim", text_dim},               {"context_length", context_length},
          {"vocab_size", vocab_size},           {"groups", groups},
          {"decoder_attention_layers", decoder_attention_layers()}};
}

DenoiserConfig DenoiserConfig::from_json(const nlohmann::json& j) {
  DenoiserConfig c;
  c.latent_channels = j.value("latent_channels", c.latent_channels);
  c.latent_size = j.value("latent_size", c.latent_size);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.channel_mult = j.value("channel_mult", c.channel_mult);
  c.attention_levels = j.value("attention_levels", c.attention_levels);
  c.decoder_blocks = j.value("decoder_blocks", c.decoder_blocks);
  c.heads = j.value("heads", c.heads);
  c.time_dim = j.value("time_dim", c.time_dim);
  c.text_dim = j.value("text_dim", c.text_dim);
  c.context_length = j.value("context_length", c.context_length);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.groups = j.value("groups", c.groups);
  return c;
}

namespace {

struct ResBlock {
  nn::GroupNorm gn1, gn2;
  nn::Conv2d conv1, conv2, skip;
  nn::Linear temb;
  bool has_skip = false;

  ResBlock(int in, int out, int time_dim, int groups, Rng& rng)
      : gn1(in, groups),
        gn2(out, groups),
        conv1(in, out, 3, 1, 1, rng, 1.4f),
        conv2(out, out, 3, 1, 1, rng, 0.5f),
        temb(time_dim, out, true, rng),
        has_skip(in != out) {
    if (has_skip) skip = nn::Conv2d(in, out, 1, 1, 0, rng);
  }

  ag::Var operator()(const ag::Var& x, const ag::Var& temb_act) const {
    ag::Var h = conv1(ag::silu(gn1(x)));
    h = ag::add_channel_bias(h, temb(temb_act));
    h = conv2(ag::silu(gn2(h)));
    return ag::add(has_skip ? skip(x) : x, h);
  }

  void collect(const std::string& p, nn::ParamList& out) const {
    gn1.collect(p + ".gn1", out);
    conv1.collect(p + ".conv1", out);
    temb.collect(p + ".temb", out);
    gn2.collect(p + ".gn2", out);
    conv2.collect(p + ".conv2", out);
    if (has_skip) skip.collect(p + ".skip", out);
  }
};

struct AttnBlock {
  std::string name;
  int width = 0;
  int heads = 1;
  bool decoder = false;
  nn::LayerNorm ln1, ln2, ln3;
  nn::Linear q, k, v, out, cq, ck, cv, cout, ff1, ff2;

  AttnBlock(std::string name_, int width_, int text_dim, int heads_, bool decoder_, Rng& rng)
      : name(std::move(name_)),
        width(width_),
        heads(heads_),
        decoder(decoder_),
        ln1(width_),
        ln2(width_),
        ln3(width_),
        q(width_, width_, false, rng),
        k(width_, width_, false, rng),
        v(width_, width_, false, rng),
        out(width_, width_, true, rng, 0.5f),
        cq(width_, width_, false, rng),
        ck(text_dim, width_, false, rng),
        cv(text_dim, width_, false, rng),
        cout(width_, width_, true, rng, 0.5f),
        ff1(width_, 2 * width_, true, rng, 1.4f),
        ff2(2 * width_, width_, true, rng, 0.5f) {}

  ag::Var operator()(const ag::Var& x, const ag::Var& context, int timestep, const HookList& hooks,
                     const LoraAdapter* lora) const {
    const int hgt = x.dim(2), wid = x.dim(3);
    const float scale = 1.0f / std::sqrt(static_cast<float>(width / heads));
    ag::Var t = ag::to_tokens(x);

    ag::Var h = ln1(t);
    ag::Var qs = project(h, q, name + ".self.q", lora);
    ag::Var ks = project(h, k, name + ".self.k", lora);
    ag::Var vs = project(h, v, name + ".self.v", lora);
    if (!hooks.empty()) {
      Tensor qt = qs.value(), kt = ks.value(), vt = vs.value();
      const AttentionSite site{name, timestep, decoder};
      for (AttentionHook* hook : hooks) hook->on_self_attention(site, qt, kt, vt);
      qs = ag::constant(std::move(qt));
      ks = ag::constant(std::move(kt));
      vs = ag::constant(std::move(vt));
    }
    t = ag::add(t, project(ag::attention(qs, ks, vs, heads, scale), out, name + ".self.out", lora));

    h = ln2(t);
    ag::Var qc = project(h, cq, name + ".cross.q", lora);
    ag::Var kc = project(context, ck, name + ".cross.k", lora);
    ag::Var vc = project(context, cv, name + ".cross.v", lora);
    t = ag::add(t, project(ag::attention(qc, kc, vc, heads, scale), cout, name + ".cross.out", lora));

    h = ln3(t);
    t = ag::add(t, ff2(ag::silu(ff1(h))));
    return ag::from_tokens(t, hgt, wid);
  }

  void targets(int text_dim, std::vector<LoraTarget>& out_targets) const {
    for (const char* p : {".self.q", ".self.k", ".self.v", ".self.out", ".cross.q", ".cross.out"})
      out_targets.push_back({name + p, width, width});
    out_targets.push_back({name + ".cross.k", text_dim, width});
    out_targets.push_back({name + ".cross.v", text_dim, width});
  }

  void collect(nn::ParamList& o) const {
    ln1.collect(name + ".ln1", o);
    q.collect(name + ".self.q", o);
    k.collect(name + ".self.k", o);
    v.collect(name + ".self.v", o);
    out.collect(name + ".self.out", o);
    ln2.collect(name + ".ln2", o);
    cq.collect(name + ".cross.q", o);
    ck.collect(name + ".cross.k", o);
    cv.collect(name + ".cross.v", o);
    cout.collect(name + ".cross.out", o);
    ln3.collect(name + ".ln3", o);
    ff1.collect(name + ".ff1", o);
    ff2.collect(name + ".ff2", o);
  }
};

Tensor sinusoidal(std::span<const int> timesteps, int dim) {
  const int half = dim / 2;
  Tensor out({static_cast<int>(timesteps.size()), dim});
  for (std::size_t b = 0; b < timesteps.size(); ++b)
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      const double arg = timesteps[b] * freq;
      out[b * dim + i] = static_cast<float>(std::sin(arg));
      out[b * dim + half + i] = static_cast<float>(std::cos(arg));
    }
  return out;
}

}  // namespace

struct Denoiser::Impl {
  TextEncoder text;
  nn::Linear time1, time2;
  nn::Conv2d conv_in, conv_out;
  nn::GroupNorm norm_out;
  std::vector<ResBlock> down_res;
  std::vector<std::unique_ptr<AttnBlock>> down_attn;  // null where a level has no attention
  std::vector<nn::Conv2d> downsample;
  std::unique_ptr<ResBlock> mid_res;
  std::unique_ptr<AttnBlock> mid_attn;
  // up_res[level][j], up_attn[level][j]
  std::vector<std::vector<ResBlock>> up_res;
  std::vector<std::vector<std::unique_ptr<AttnBlock>>> up_attn;
  std::vector<nn::Conv2d> upsample_conv;  // indexed by level (>0)

  ag::Var run(const DenoiserConfig& cfg, const ag::Var& x, std::span<const int> timesteps, const ag::Var& context,
              const HookList& hooks, const LoraAdapter* lora, std::vector<Tensor>* features) const {
    const int levels = static_cast<int>(cfg.channel_mult.size());
    const int site_t = timesteps.empty() ? 0 : timesteps[0];
    ag::Var temb = ag::constant(sinusoidal(timesteps, cfg.time_dim / 2));
    temb = ag::silu(time2(ag::silu(time1(temb))));

    ag::Var h = conv_in(x);
    if (features) features->push_back(h.value());
    std::vector<ag::Var> skips;
    for (int level = 0; level < levels; ++level) {
      h = down_res[static_cast<std::size_t>(level)](h, temb);
      if (const auto& a = down_attn[static_cast<std::size_t>(level)]) h = (*a)(h, context, site_t, hooks, lora);
      skips.push_back(h);
      if (features) features->push_back(h.value());
      if (level + 1 < levels) h = downsample[static_cast<std::size_t>(level)](h);
    }
    if (features) return h;

    h = (*mid_res)(h, temb);
    h = (*mid_attn)(h, context, site_t, hooks, lora);

    for (int level = levels - 1; level >= 0; --level) {
      const auto lv = static_cast<std::size_t>(level);
      for (int j = 0; j < cfg.decoder_blocks; ++j) {
        const auto jj = static_cast<std::size_t>(j);
        ag::Var in = j == 0 ? ag::concat_channels(h, skips[lv]) : h;
        h = up_res[lv][jj](in, temb);
        if (const auto& a = up_attn[lv][jj]) h = (*a)(h, context, site_t, hooks, lora);
      }
      if (level > 0) h = upsample_conv[lv](ag::upsample2x(h));
    }
    return conv_out(ag::silu(norm_out(h)));
  }
};

Denoiser::Denoiser() = default;
Denoiser::~Denoiser() = default;
Denoiser::Denoiser(Denoiser&&) noexcept = default;
Denoiser& Denoiser::operator=(Denoiser&&) noexcept = default;

Denoiser::Denoiser(const DenoiserConfig& config, std::uint64_t seed)
    : config_(config), loaded_(true), impl_(std::make_unique<Impl>()) {
  config_.validate();
  Rng rng(seed, "denoiser");
  auto& m = *impl_;
  const int levels = static_cast<int>(config_.channel_mult.size());
  auto width = [&](int level) { return config_.base_channels * config_.channel_mult[static_cast<std::size_t>(level)]; };
  auto has_attn = [&](int level) {
    return std::find(config_.attention_levels.begin(), config_.attention_levels.end(), level) !=
           config_.attention_levels.end();
  };

  m.text = TextEncoder(config_.vocab_size, config_.text_dim, config_.context_length, rng);
  m.time1 = nn::Linear(config_.time_dim / 2, config_.time_dim, true, rng);
  m.time2 = nn::Linear(config_.time_dim, config_.time_dim, true, rng);
  m.conv_in = nn::Conv2d(config_.latent_channels, width(0), 3, 1, 1, rng);

  int ch = width(0);
  for (int level = 0; level < levels; ++level) {
    m.down_res.emplace_back(ch, width(level), config_.time_dim, config_.groups, rng);
    ch = width(level);
    m.down_attn.push_back(has_attn(level) ? std::make_unique<AttnBlock>("down" + std::to_string(level) + ".attn", ch,
                                                                        config_.text_dim, config_.heads, false, rng)
                                          : nullptr);
    if (level + 1 < levels) m.downsample.emplace_back(ch, ch, 3, 2, 1, rng);
  }
  m.mid_res = std::make_unique<ResBlock>(ch, ch, config_.time_dim, config_.groups, rng);
  m.mid_attn = std::make_unique<AttnBlock>("mid.attn", ch, config_.text_dim, config_.heads, false, rng);

  m.up_res.resize(static_cast<std::size_t>(levels));
  m.up_attn.resize(static_cast<std::size_t>(levels));
  m.upsample_conv.resize(static_cast<std::size_t>(levels));
  for (int level = levels - 1; level >= 0; --level) {
    const auto lv = static_cast<std::size_t>(level);
    for (int j = 0; j < config_.decoder_blocks; ++j) {
      const int in = j == 0 ? ch + width(level) : width(level);
      m.up_res[lv].emplace_back(in, width(level), config_.time_dim, config_.groups, rng);
      m.up_attn[lv].push_back(has_attn(level) ? std::make_unique<AttnBlock>(
                                                    "up" + std::to_string(level) + ".attn" + std::to_string(j),
                                                    width(level), config_.text_dim, config_.heads, true, rng)
                                              : nullptr);
      ch = width(level);
    }
    if (level > 0) {
      m.upsample_conv[lv] = nn::Conv2d(ch, width(level - 1), 3, 1, 1, rng);
      ch = width(level - 1);
    }
  }
  m.norm_out = nn::GroupNorm(ch, config_.groups);
  m.conv_out = nn::Conv2d(ch, config_.latent_channels, 3, 1, 1, rng, 0.1f);
}

const TextEncoder& Denoiser::text_encoder() const {
  if (!loaded_) fail(ErrorKind::State, "denoiser weights are not loaded");
  return impl_->text;
}

ag::Var Denoiser::forward(const ag::Var& x, std::span<const int> timesteps, const ag::Var& context,
                          const HookList& hooks, const LoraAdapter* lora) const {
  if (!loaded_) fail(ErrorKind::State, "denoiser weights are not loaded");
  const Shape expected{x.value().rank() == 4 ? x.dim(0) : -1, config_.latent_channels, config_.latent_size,
                       config_.latent_size};
  if (x.shape() != expected)
    fail(ErrorKind::InvalidInput, "latent shape " + shape_string(x.shape()) + " does not match denoiser input " +
                                      shape_string(expected));
  require(timesteps.size() == static_cast<std::size_t>(x.dim(0)), "one timestep per sample is required");
  require(context.value().rank() == 3 && context.dim(0) == x.dim(0) && context.dim(2) == config_.text_dim,
          "context shape " + shape_string(context.shape()) + " does not match the batch");
  return impl_->run(config_, x, timesteps, context, hooks, lora, nullptr);
}

Tensor Denoiser::predict_noise(const Tensor& x, int timestep, const Tensor& context, const HookList& hooks,
                               const LoraAdapter* lora) const {
  if (!loaded_) fail(ErrorKind::State, "denoiser weights are not loaded");
  require(x.rank() == 4, "predict_noise expects [N, C, H, W]");
  const int n = x.dim(0);
  Tensor ctx = context;
  if (context.rank() == 2) {
    std::vector<Tensor> copies(static_cast<std::size_t>(n), context.reshaped({1, context.dim(0), context.dim(1)}));
    ctx = concat_batch(copies);
  }
  ag::NoGradGuard guard;
  std::vector<int> ts(static_cast<std::size_t>(n), timestep);
  return forward(ag::constant(x), ts, ag::constant(std::move(ctx)), hooks, lora).value();
}

Tensor Denoiser::context_for(const std::string& prompt, int n) const {
  const Tensor one = text_encoder().embed(prompt).vector;
  std::vector<Tensor> copies(static_cast<std::size_t>(n), one.reshaped({1, one.dim(0), one.dim(1)}));
  return concat_batch(copies);
}

std::vector<Tensor> Denoiser::encoder_features(const Tensor& x) const {
  if (!loaded_) fail(ErrorKind::State, "denoiser weights are not loaded");
  ag::NoGradGuard guard;
  const int n = x.dim(0);
  std::vector<int> ts(static_cast<std::size_t>(n), 0);
  std::vector<Tensor> feats;
  impl_->run(config_, ag::constant(x), ts, ag::constant(context_for("", n)), {}, nullptr, &feats);
  return feats;
}

std::vector<LoraTarget> Denoiser::lora_targets() const {
  std::vector<LoraTarget> out;
  const auto& m = *impl_;
  for (const auto& a : m.down_attn)
    if (a) a->targets(config_.text_dim, out);
  m.mid_attn->targets(config_.text_dim, out);
  for (int level = static_cast<int>(config_.channel_mult.size()) - 1; level >= 0; --level)
    for (const auto& a : m.up_attn[static_cast<std::size_t>(level)])
      if (a) a->targets(config_.text_dim, out);
  return out;
}

nn::ParamList Denoiser::params() const {
  nn::ParamList o;
  if (!impl_) return o;
  const auto& m = *impl_;
  m.text.collect("text", o);
  m.time1.collect("time1", o);
  m.time2.collect("time2", o);
  m.conv_in.collect("conv_in", o);
  for (std::size_t i = 0; i < m.down_res.size(); ++i) {
    m.down_res[i].collect("down" + std::to_string(i) + ".res", o);
    if (m.down_attn[i]) m.down_attn[i]->collect(o);
    if (i < m.downsample.size()) m.downsample[i].collect("down" + std::to_string(i) + ".downsample", o);
  }
  m.mid_res->collect("mid.res", o);
  m.mid_attn->collect(o);
  for (int level = static_cast<int>(m.up_res.size()) - 1; level >= 0; --level) {
    const auto lv = static_cast<std::size_t>(level);
    for (std::size_t j = 0; j < m.up_res[lv].size(); ++j) {
      m.up_res[lv][j].collect("up" + std::to_string(level) + ".res" + std::to_string(j), o);
      if (m.up_attn[lv][j]) m.up_attn[lv][j]->collect(o);
    }
    if (level > 0) m.upsample_conv[lv].collect("up" + std::to_string(level) + ".upsample", o);
  }
  m.norm_out.collect("norm_out", o);
  m.conv_out.collect("conv_out", o);
  return o;
}

}  // namespace tristyle
