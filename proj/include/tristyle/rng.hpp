#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "tristyle/tensor.hpp"

namespace tristyle {

// All randomness descends from one root seed. Independent named streams are
// derived by hashing the stream label into the seed, so adding a new consumer
// never shifts the draws of an existing one.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return splitmix64(root ^ splitmix64(h));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t root, std::string_view label) : engine_(derive_seed(root, label)) {}

  float normal() { return normal_(engine_); }
  float uniform(float lo = 0.0f, float hi = 1.0f) { return lo + (hi - lo) * unit_(engine_); }
  int uniform_int(int lo, int hi_inclusive) {
    return std::uniform_int_distribution<int>(lo, hi_inclusive)(engine_);
  }
  std::mt19937_64& engine() { return engine_; }

  Tensor normal_tensor(Shape shape, float stddev = 1.0f) {
    Tensor t(std::move(shape));
    for (float& v : t.values()) v = stddev * normal();
    return t;
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<float> normal_{0.0f, 1.0f};
  std::uniform_real_distribution<float> unit_{0.0f, 1.0f};
};

}  // namespace tristyle
