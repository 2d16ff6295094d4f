#include "tristyle/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>

#include "tristyle/errors.hpp"
#include "tristyle/rng.hpp"

namespace tristyle {

namespace {

constexpr int kSize = 64;
using Rgb = std::array<float, 3>;

class Canvas {
 public:
  Canvas() : img_({3, kSize, kSize}) {}

  void set(int x, int y, const Rgb& c) {
    if (x < 0 || y < 0 || x >= kSize || y >= kSize) return;
    for (int ch = 0; ch < 3; ++ch) img_[(static_cast<std::size_t>(ch) * kSize + y) * kSize + x] = c[ch];
  }

  void rect(int x0, int y0, int x1, int y1, const Rgb& c) {
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) set(x, y, c);
  }

  void circle(float cx, float cy, float r, const Rgb& c) {
    for (int y = static_cast<int>(cy - r) - 1; y <= static_cast<int>(cy + r) + 1; ++y)
      for (int x = static_cast<int>(cx - r) - 1; x <= static_cast<int>(cx + r) + 1; ++x)
        if ((x + 0.5f - cx) * (x + 0.5f - cx) + (y + 0.5f - cy) * (y + 0.5f - cy) <= r * r) set(x, y, c);
  }

  void triangle(float ax, float ay, float bx, float by, float cx, float cy, const Rgb& c) {
    const int x0 = static_cast<int>(std::floor(std::min({ax, bx, cx})));
    const int x1 = static_cast<int>(std::ceil(std::max({ax, bx, cx})));
    const int y0 = static_cast<int>(std::floor(std::min({ay, by, cy})));
    const int y1 = static_cast<int>(std::ceil(std::max({ay, by, cy})));
    auto edge = [](float px, float py, float qx, float qy, float x, float y) {
      return (qx - px) * (y - py) - (qy - py) * (x - px);
    };
    const float area = edge(ax, ay, bx, by, cx, cy);
    if (area == 0.0f) return;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const float px = x + 0.5f, py = y + 0.5f;
        const float w0 = edge(bx, by, cx, cy, px, py) / area;
        const float w1 = edge(cx, cy, ax, ay, px, py) / area;
        const float w2 = edge(ax, ay, bx, by, px, py) / area;
        if (w0 >= 0 && w1 >= 0 && w2 >= 0) set(x, y, c);
      }
  }

  Tensor take() { return std::move(img_); }

 private:
  Tensor img_;
};

Rgb shade(const Rgb& c, float f) { return {c[0] * f, c[1] * f, c[2] * f}; }

Rgb to_rgb(const std::string& color) {
  const auto v = color_rgb(color);
  return {v[0], v[1], v[2]};
}

// Draws an object whose ground contact point is (x, ground).
void draw(Canvas& cv, const std::string& noun, const Rgb& c, float x, float ground, float s) {
  const Rgb dark{0.18f, 0.12f, 0.08f};
  if (noun == "house") {
    const float w = 20 * s, h = 15 * s;
    cv.rect(static_cast<int>(x - w / 2), static_cast<int>(ground - h), static_cast<int>(x + w / 2),
            static_cast<int>(ground), c);
    cv.triangle(x - w / 2 - 2, ground - h, x + w / 2 + 2, ground - h, x, ground - h - 10 * s, shade(c, 0.55f));
    cv.rect(static_cast<int>(x - 2 * s), static_cast<int>(ground - 7 * s), static_cast<int>(x + 2 * s),
            static_cast<int>(ground), dark);
  } else if (noun == "tree") {
    cv.rect(static_cast<int>(x - 2 * s), static_cast<int>(ground - 11 * s), static_cast<int>(x + 2 * s),
            static_cast<int>(ground), {0.4f, 0.26f, 0.13f});
    cv.circle(x, ground - 15 * s, 8.5f * s, c);
  } else if (noun == "mountain") {
    cv.triangle(x - 17 * s, ground, x + 17 * s, ground, x, ground - 26 * s, c);
    cv.triangle(x - 5 * s, ground - 18.5f * s, x + 5 * s, ground - 18.5f * s, x, ground - 26 * s, {0.97f, 0.97f, 0.97f});
  } else if (noun == "boat") {
    cv.triangle(x - 13 * s, ground - 5 * s, x - 8 * s, ground, x - 8 * s, ground - 5 * s, c);
    cv.rect(static_cast<int>(x - 8 * s), static_cast<int>(ground - 5 * s), static_cast<int>(x + 8 * s),
            static_cast<int>(ground), c);
    cv.triangle(x + 8 * s, ground - 5 * s, x + 8 * s, ground, x + 13 * s, ground - 5 * s, c);
    cv.rect(static_cast<int>(x), static_cast<int>(ground - 20 * s), static_cast<int>(x + 1), static_cast<int>(ground - 5 * s),
            dark);
    cv.triangle(x + 1, ground - 19 * s, x + 1, ground - 7 * s, x + 9 * s, ground - 7 * s, {0.95f, 0.95f, 0.92f});
  } else if (noun == "sun") {
    cv.circle(x, ground, 7.0f * s, c);
  } else if (noun == "dog") {
    cv.rect(static_cast<int>(x - 7 * s), static_cast<int>(ground - 9 * s), static_cast<int>(x + 6 * s),
            static_cast<int>(ground - 4 * s), c);
    for (float lx : {-6.0f, -3.0f, 2.0f, 5.0f})
      cv.rect(static_cast<int>(x + lx * s), static_cast<int>(ground - 4 * s), static_cast<int>(x + (lx + 1.5f) * s),
              static_cast<int>(ground), shade(c, 0.7f));
    cv.circle(x + 7 * s, ground - 10 * s, 3.5f * s, c);
  } else {
    fail(ErrorKind::InvalidInput, "unknown scene noun '" + noun + "'");
  }
}

}  // namespace

const std::vector<std::string>& scene_nouns() {
  static const std::vector<std::string> nouns{"house", "tree", "mountain", "boat", "sun", "dog"};
  return nouns;
}

const std::vector<std::string>& scene_colors() {
  static const std::vector<std::string> colors{"red", "green", "blue", "yellow", "purple", "orange", "white", "pink"};
  return colors;
}

std::vector<float> color_rgb(const std::string& color) {
  static const std::map<std::string, std::vector<float>> table{
      {"red", {0.86f, 0.12f, 0.12f}},   {"green", {0.15f, 0.65f, 0.2f}},  {"blue", {0.14f, 0.3f, 0.85f}},
      {"yellow", {0.95f, 0.85f, 0.15f}}, {"purple", {0.55f, 0.2f, 0.7f}}, {"orange", {0.95f, 0.55f, 0.1f}},
      {"white", {0.95f, 0.95f, 0.95f}},  {"black", {0.08f, 0.08f, 0.08f}}, {"brown", {0.45f, 0.28f, 0.12f}},
      {"pink", {0.95f, 0.5f, 0.7f}},     {"gray", {0.5f, 0.5f, 0.5f}}};
  const auto it = table.find(color);
  if (it == table.end()) fail(ErrorKind::InvalidInput, "unknown color '" + color + "'");
  return it->second;
}

std::string caption_for(const SceneSpec& spec) {
  auto article = [](const std::string& next) {
    return std::string(next.find_first_of("aeiou") == 0 ? "an " : "a ");
  };
  std::string c = article(spec.color) + spec.color + " " + spec.noun;
  if (!spec.companion.empty()) {
    const std::string first = spec.name_companion_color ? spec.companion_color : spec.companion;
    c += " beside " + article(first);
    if (spec.name_companion_color) c += spec.companion_color + " ";
    c += spec.companion;
  }
  return c;
}

Scene render_scene(const SceneSpec& spec) {
  Rng rng(spec.layout_seed, "layout");
  Canvas cv;
  const int horizon = 38 + rng.uniform_int(0, 8);
  const float tone = rng.uniform(-0.06f, 0.06f);
  for (int y = 0; y < horizon; ++y) {
    const float g = static_cast<float>(y) / static_cast<float>(horizon);
    cv.rect(0, y, kSize, y + 1, {0.55f + tone + 0.2f * g, 0.72f + tone + 0.15f * g, 0.92f + 0.05f * g});
  }
  const bool water = spec.noun == "boat" || spec.companion == "boat";
  const Rgb ground = water ? Rgb{0.25f, 0.45f + tone, 0.6f} : Rgb{0.55f + tone, 0.62f, 0.38f};
  cv.rect(0, horizon, kSize, kSize, ground);

  const float s = rng.uniform(0.9f, 1.15f);
  auto place = [&](const std::string& noun, const std::string& color, float x) {
    const float base = noun == "sun" ? 12.0f + rng.uniform(0.0f, 6.0f) : horizon + 8.0f + rng.uniform(0.0f, 6.0f);
    draw(cv, noun, to_rgb(color), x, std::min(base, 62.0f), s);
  };
  if (spec.companion.empty()) {
    place(spec.noun, spec.color, 32.0f + rng.uniform(-6.0f, 6.0f));
  } else {
    const bool left = rng.uniform() < 0.5f;
    // The companion is drawn first so the named object stays in front.
    place(spec.companion, spec.companion_color, (left ? 46.0f : 18.0f) + rng.uniform(-3.0f, 3.0f));
    place(spec.noun, spec.color, (left ? 20.0f : 44.0f) + rng.uniform(-3.0f, 3.0f));
  }
  return {cv.take(), caption_for(spec), spec};
}

SceneSpec random_spec(std::uint64_t seed) {
  Rng rng(seed, "scene");
  const auto& nouns = scene_nouns();
  const auto& colors = scene_colors();
  SceneSpec spec;
  spec.noun = nouns[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(nouns.size()) - 1))];
  spec.color = colors[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(colors.size()) - 1))];
  if (rng.uniform() < 0.7f) {
    do {
      spec.companion = nouns[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(nouns.size()) - 1))];
    } while (spec.companion == spec.noun);
    spec.companion_color = colors[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(colors.size()) - 1))];
    spec.name_companion_color = rng.uniform() < 0.7f;
  }
  spec.layout_seed = derive_seed(seed, "layout");
  return spec;
}

std::vector<Scene> make_scenes(int count, std::uint64_t seed) {
  require(count >= 0, "scene count must be non-negative");
  std::vector<Scene> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(render_scene(random_spec(derive_seed(seed, "scene" + std::to_string(i)))));
  return out;
}

Tensor apply_style(const Tensor& image) {
  require(image.rank() == 3 && image.dim(0) == 3, "apply_style expects a [3, H, W] image");
  const int h = image.dim(1), w = image.dim(2);
  auto px = [&](int c, int y, int x) {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    return image[(static_cast<std::size_t>(c) * h + y) * w + x];
  };
  static const std::array<Rgb, 4> palette{Rgb{0.08f, 0.12f, 0.35f}, Rgb{0.15f, 0.42f, 0.52f},
                                          Rgb{0.93f, 0.74f, 0.22f}, Rgb{1.0f, 0.94f, 0.78f}};
  Tensor out({3, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      Rgb blur{};
      for (int c = 0; c < 3; ++c) {
        float s = 0.0f;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) s += px(c, y + dy, x + dx);
        blur[static_cast<std::size_t>(c)] = s / 9.0f;
      }
      const float lum = 0.299f * blur[0] + 0.587f * blur[1] + 0.114f * blur[2];
      const float pos = std::pow(std::clamp(lum, 0.0f, 1.0f), 1.6f) * 3.0f;
      const int k = std::min(2, static_cast<int>(pos));
      const float f = pos - static_cast<float>(k);
      const float stroke = std::sin(0.9f * static_cast<float>(x + y) + 1.7f * std::sin(0.35f * static_cast<float>(y)) +
                                    1.3f * std::sin(0.27f * static_cast<float>(x)));
      for (int c = 0; c < 3; ++c) {
        const auto cu = static_cast<std::size_t>(c);
        const float pal = (1.0f - f) * palette[static_cast<std::size_t>(k)][cu] + f * palette[static_cast<std::size_t>(k + 1)][cu];
        const float v = (0.45f * blur[cu] + 0.55f * pal) * (1.0f + 0.14f * stroke);
        out[(static_cast<std::size_t>(c) * h + y) * w + x] = std::clamp(v, 0.0f, 1.0f);
      }
    }
  }
  return out;
}

Scene reference_style_scene() {
  SceneSpec spec{"house", "blue", "tree", "green", false, 7};
  Scene s = render_scene(spec);
  s.image = apply_style(s.image);
  s.caption += std::string(", ") + kStylePhrase;
  return s;
}

}  // namespace tristyle
