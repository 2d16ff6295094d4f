#include "tristyle/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "tristyle/errors.hpp"

namespace tristyle {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    require(d >= 0, "negative dimension in shape " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : shape_(std::move(shape)), data_(values.begin(), values.end()) {
  require(data_.size() == shape_numel(shape_),
          "tensor payload size " + std::to_string(data_.size()) + " does not match shape " + shape_string(shape_));
}

int Tensor::dim(int axis) const {
  if (axis < 0) axis += rank();
  require(axis >= 0 && axis < rank(), "axis out of range for shape " + shape_string(shape_));
  return shape_[static_cast<std::size_t>(axis)];
}

float& Tensor::at(int n, int c, int h, int w) {
  return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

float Tensor::at(int n, int c, int h, int w) const {
  return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

Tensor Tensor::reshaped(Shape shape) const {
  require(shape_numel(shape) == data_.size(),
          "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

Tensor Tensor::slice_batch(int begin, int end) const {
  require(rank() >= 1 && begin >= 0 && begin <= end && end <= shape_[0], "batch slice out of range");
  const std::size_t stride = shape_[0] ? data_.size() / shape_[0] : 0;
  Shape s = shape_;
  s[0] = end - begin;
  return Tensor(std::move(s), std::vector<float>(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                                                 data_.begin() + static_cast<std::ptrdiff_t>(end * stride)));
}

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

Tensor concat_batch(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_batch needs at least one tensor");
  Shape shape = parts.front().shape();
  int total = 0;
  std::vector<float> values;
  for (const Tensor& p : parts) {
    Shape a(p.shape().begin() + 1, p.shape().end());
    Shape b(shape.begin() + 1, shape.end());
    require(a == b, "concat_batch shape mismatch");
    total += p.dim(0);
    values.insert(values.end(), p.storage().begin(), p.storage().end());
  }
  shape[0] = total;
  return Tensor(std::move(shape), std::move(values));
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  require(same_shape(a, b), "max_abs_diff shape mismatch");
  float m = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double mean_abs_diff(const Tensor& a, const Tensor& b) {
  require(same_shape(a, b), "mean_abs_diff shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(static_cast<double>(a[i]) - b[i]);
  return a.empty() ? 0.0 : s / static_cast<double>(a.size());
}

double mean(const Tensor& t) {
  double s = 0.0;
  for (float v : t.values()) s += v;
  return t.empty() ? 0.0 : s / static_cast<double>(t.size());
}

double stddev(const Tensor& t) {
  const double m = mean(t);
  double s = 0.0;
  for (float v : t.values()) s += (v - m) * (v - m);
  return t.empty() ? 0.0 : std::sqrt(s / static_cast<double>(t.size()));
}

double l2_distance(const Tensor& a, const Tensor& b) {
  require(same_shape(a, b), "l2_distance shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace tristyle
