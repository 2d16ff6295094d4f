#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tristyle/tensor.hpp"

namespace tristyle {

// Caption suffix describing apply_style's look.
inline constexpr const char* kStylePhrase = "oil painting style";

struct SceneSpec {
  std::string noun;
  std::string color;
  std::string companion;        // empty: no second object
  std::string companion_color;
  bool name_companion_color = true;
  std::uint64_t layout_seed = 0;  // jitters positions and background
};

struct Scene {
  Tensor image;  // [3, 64, 64]
  std::string caption;
  SceneSpec spec;
};

const std::vector<std::string>& scene_nouns();
const std::vector<std::string>& scene_colors();
// RGB of a vocabulary color word.
std::vector<float> color_rgb(const std::string& color);

std::string caption_for(const SceneSpec& spec);
Scene render_scene(const SceneSpec& spec);
// Deterministic random scene for a seed.
SceneSpec random_spec(std::uint64_t seed);
std::vector<Scene> make_scenes(int count, std::uint64_t seed);

// The fixed "oil painting" look: palette remap by luminance, slight blur and
// a diagonal stroke texture.
Tensor apply_style(const Tensor& image);

// The reference style image: a blue house beside a tree, stylized.
Scene reference_style_scene();

}  // namespace tristyle
