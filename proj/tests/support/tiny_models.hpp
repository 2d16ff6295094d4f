#pragma once

#include <filesystem>
#include <cmath>
#include <string>

#include <unistd.h>

#include "tristyle/models.hpp"
#include "tristyle/rng.hpp"
#include "tristyle/text.hpp"

namespace tristyle::fixtures {

// Untrained, narrow models: fast enough for unit tests of wiring and invariants.
inline DenoiserConfig tiny_denoiser_config() {
  DenoiserConfig c;
  c.base_channels = 8;
  c.time_dim = 16;
  c.text_dim = 8;
  c.vocab_size = Vocabulary::standard().size();
  return c;
}

inline ModelBundle tiny_bundle(std::uint64_t seed = 1) {
  AutoencoderConfig ac;
  ac.hidden = 16;
  ac.mid = 8;
  return ModelBundle{Autoencoder(ac, seed), Denoiser(tiny_denoiser_config(), seed + 1), NoiseSchedule::linear()};
}

// Images in [0, 1] with smooth structure, [n, 3, 64, 64].
inline Tensor random_images(int n, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({n, 3, 64, 64});
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) {
      const float a = rng.uniform(), b = rng.uniform(0.02f, 0.2f), p = rng.uniform(0.0f, 6.0f);
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) t.at(i, c, y, x) = 0.5f + 0.4f * a * std::sin(b * (x + y) + p);
    }
  return t;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("tristyle-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter()++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  static int& counter() {
    static int n = 0;
    return n;
  }
  std::filesystem::path path_;
};

}  // namespace tristyle::fixtures
