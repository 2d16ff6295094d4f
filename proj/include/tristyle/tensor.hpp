#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include <boost/align/aligned_allocator.hpp>

namespace tristyle {

using Shape = std::vector<int>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major float tensor. Images and latents use NCHW. Storage is
// 64-byte aligned so vectorized reductions sum in the same order every call.
class Tensor {
 public:
  using Storage = std::vector<float, boost::alignment::aligned_allocator<float, 64>>;

  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float* data() noexcept { return data_.data(); }
  const float* data() const noexcept { return data_.data(); }
  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }
  Storage& storage() noexcept { return data_; }
  const Storage& storage() const noexcept { return data_; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  // NCHW accessor.
  float& at(int n, int c, int h, int w);
  float at(int n, int c, int h, int w) const;

  Tensor reshaped(Shape shape) const;
  // Slice [begin, end) along axis 0.
  Tensor slice_batch(int begin, int end) const;
  void fill(float value);
  bool all_finite() const;

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

 private:
  Shape shape_;
  Storage data_;
};

// Stacks tensors of equal shape along axis 0 (each input keeps its own leading axis).
Tensor concat_batch(std::span<const Tensor> parts);

bool same_shape(const Tensor& a, const Tensor& b);
// Bitwise equality of shape and payload.
bool bit_equal(const Tensor& a, const Tensor& b);
float max_abs_diff(const Tensor& a, const Tensor& b);
double mean_abs_diff(const Tensor& a, const Tensor& b);
double mean(const Tensor& t);
double stddev(const Tensor& t);
double l2_distance(const Tensor& a, const Tensor& b);

}  // namespace tristyle
