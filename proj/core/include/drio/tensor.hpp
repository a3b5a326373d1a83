#pragma once

#include <cstddef>
#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

namespace drio {

struct Shape3 {
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t t = 0;

  std::size_t size() const { return n * d * t; }
  std::size_t sample_size() const { return d * t; }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

/// Dense (sample, feature, time) array stored sample-major: index
/// ((i * D) + d) * T + t. This matches the on-disk layout.
template <typename T>
class Tensor3 {
 public:
  using value_type = T;

  Tensor3() = default;
  explicit Tensor3(Shape3 shape, T fill = T{}) : shape_(shape), data_(shape.size(), fill) {}
  Tensor3(std::size_t n, std::size_t d, std::size_t t, T fill = T{})
      : Tensor3(Shape3{n, d, t}, fill) {}

  const Shape3& shape() const { return shape_; }
  std::size_t n() const { return shape_.n; }
  std::size_t d() const { return shape_.d; }
  std::size_t t() const { return shape_.t; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(std::size_t i, std::size_t d, std::size_t t) const {
    return (i * shape_.d + d) * shape_.t + t;
  }
  T& operator()(std::size_t i, std::size_t d, std::size_t t) { return data_[index(i, d, t)]; }
  const T& operator()(std::size_t i, std::size_t d, std::size_t t) const {
    return data_[index(i, d, t)];
  }
  T& operator[](std::size_t flat) { return data_[flat]; }
  const T& operator[](std::size_t flat) const { return data_[flat]; }

  std::span<T> sample(std::size_t i) {
    return std::span<T>(data_).subspan(i * shape_.sample_size(), shape_.sample_size());
  }
  std::span<const T> sample(std::size_t i) const {
    return std::span<const T>(data_).subspan(i * shape_.sample_size(), shape_.sample_size());
  }

  std::span<T> flat() { return data_; }
  std::span<const T> flat() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  Shape3 shape_;
  std::vector<T> data_;
};

using RealTensor = Tensor3<double>;
using MaskTensor = Tensor3<std::uint8_t>;

/// Copies the listed samples (in order) into a new tensor.
template <typename T>
Tensor3<T> gather_samples(const Tensor3<T>& src, std::span<const std::size_t> indices) {
  Tensor3<T> out(indices.size(), src.d(), src.t());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    auto from = src.sample(indices[k]);
    auto to = out.sample(k);
    std::copy(from.begin(), from.end(), to.begin());
  }
  return out;
}

/// Number of ones in a mask.
std::size_t count_ones(const MaskTensor& mask);

/// Throws ValidationError unless every entry is 0 or 1.
void require_binary(const MaskTensor& mask, const char* what);

/// values * mask, entrywise.
RealTensor apply_mask(const RealTensor& values, const MaskTensor& mask);

}  // namespace drio
