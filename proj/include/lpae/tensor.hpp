#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "lpae/common.hpp"
#include "lpae/rng.hpp"

namespace lpae {

// Dense row-major tensor. Value type; copies copy the buffer. The shape is
// fixed at construction.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(shape), v_(shape.numel(), fill) {}

  static Tensor from(Shape shape, std::vector<T> values) {
    if (shape.numel() != values.size())
      throw ShapeError("tensor data size " + std::to_string(values.size()) +
                       " does not match shape " + shape.str());
    Tensor t;
    t.shape_ = shape;
    t.v_ = std::move(values);
    return t;
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return shape_.rank(); }
  std::size_t dim(int i) const { return shape_[i]; }
  std::size_t size() const { return v_.size(); }
  bool empty() const { return v_.empty(); }

  T* data() { return v_.data(); }
  const T* data() const { return v_.data(); }
  std::vector<T>& vec() { return v_; }
  const std::vector<T>& vec() const { return v_; }

  T& operator[](std::size_t i) { return v_[i]; }
  const T& operator[](std::size_t i) const { return v_[i]; }

  // (b, c, y, x) accessor for rank-4 tensors.
  T& at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) {
    return v_[((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  const T& at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
    return v_[((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  // (c, y, x) accessor for rank-3 images.
  T& at(std::size_t c, std::size_t y, std::size_t x) {
    return v_[(c * shape_[1] + y) * shape_[2] + x];
  }
  const T& at(std::size_t c, std::size_t y, std::size_t x) const {
    return v_[(c * shape_[1] + y) * shape_[2] + x];
  }

  void fill(T v) { std::fill(v_.begin(), v_.end(), v); }

  bool all_finite() const {
    for (const T& x : v_)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  T max_abs() const {
    T m = T(0);
    for (const T& x : v_) m = std::max(m, static_cast<T>(std::abs(x)));
    return m;
  }

  double mean() const {
    if (v_.empty()) return 0.0;
    double s = 0.0;
    for (const T& x : v_) s += static_cast<double>(x);
    return s / static_cast<double>(v_.size());
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    std::vector<U> data(v_.size());
    for (std::size_t i = 0; i < v_.size(); ++i) data[i] = static_cast<U>(v_[i]);
    return Tensor<U>::from(shape_, std::move(data));
  }

 private:
  Shape shape_;
  std::vector<T> v_;

  template <typename U>
  friend class Tensor;
};

template <typename T>
void check_finite(const Tensor<T>& t, const char* what) {
  if (!finite_checks()) return;
  if (!t.all_finite()) throw NumericError(std::string("non-finite values in ") + what);
}

template <typename T>
Tensor<T> random_normal(Shape shape, Pcg32& rng, T stddev = T(1), T mean = T(0)) {
  Tensor<T> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = mean + stddev * static_cast<T>(rng.normal());
  return t;
}

template <typename T>
Tensor<T> random_uniform(Shape shape, Pcg32& rng, T lo = T(0), T hi = T(1)) {
  Tensor<T> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = lo + (hi - lo) * static_cast<T>(rng.next_double());
  return t;
}

}  // namespace lpae
