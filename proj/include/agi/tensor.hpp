#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "agi/common.hpp"
#include "agi/rng.hpp"

namespace agi {

// Dense row-major N-dimensional array. Values are contiguous; the last
// axis varies fastest. Tensors are plain values: copyable, movable, no
// aliasing between distinct objects.
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor is float32/float64 only");

 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape)
      : shape_(std::move(shape)), data_(checked_numel(shape_), T(0)) {}

  Tensor(std::vector<int64_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check(int64_t(data_.size()) == checked_numel(shape_),
          "tensor data length " + std::to_string(data_.size()) +
              " does not match shape " + shape_str(shape_));
  }

  static Tensor full(std::vector<int64_t> shape, T v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  const std::vector<int64_t>& shape() const { return shape_; }
  int rank() const { return int(shape_.size()); }
  int64_t dim(int i) const { return shape_[size_t(i)]; }
  int64_t numel() const { return int64_t(data_.size()); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](int64_t i) { return data_[size_t(i)]; }
  const T& operator[](int64_t i) const { return data_[size_t(i)]; }

  // Multi-index access; intended for tests and small code paths.
  template <typename... Ix>
  T& at(Ix... ix) {
    return data_[size_t(offset_of({int64_t(ix)...}))];
  }
  template <typename... Ix>
  const T& at(Ix... ix) const {
    return data_[size_t(offset_of({int64_t(ix)...}))];
  }

  // Same data, new shape (element count must match).
  Tensor reshaped(std::vector<int64_t> new_shape) const {
    check(checked_numel(new_shape) == numel(),
          "reshape " + shape_str(shape_) + " -> " + shape_str(new_shape) +
              " changes element count");
    Tensor out;
    out.shape_ = std::move(new_shape);
    out.data_ = data_;
    return out;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (int64_t i = 0; i < numel(); ++i) out[i] = U(data_[size_t(i)]);
    return out;
  }

  static int64_t checked_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
      check(d >= 0, "negative axis length in shape " + shape_str(shape));
      n *= d;
    }
    return n;
  }

 private:
  int64_t offset_of(std::initializer_list<int64_t> ix) const {
    int64_t off = 0;
    size_t a = 0;
    for (int64_t i : ix) {
      off = off * shape_[a] + i;
      ++a;
    }
    return off;
  }

  std::vector<int64_t> shape_;
  std::vector<T> data_;
};

template <typename T>
Tensor<T> rand_uniform(Rng& rng, std::vector<int64_t> shape, T lo, T hi) {
  Tensor<T> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = T(rng.uniform(double(lo), double(hi)));
  return t;
}

template <typename T>
Tensor<T> rand_normal(Rng& rng, std::vector<int64_t> shape, T stddev) {
  Tensor<T> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = T(rng.normal() * double(stddev));
  return t;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.same_shape(b), "max_abs_diff shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) return false;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace agi
