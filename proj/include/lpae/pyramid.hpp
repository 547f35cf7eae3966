#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "lpae/tensor.hpp"

namespace lpae {

// 5-tap generating kernel, applied separably. The constraints (unit sum,
// symmetry, and equal 0.5 mass on the even and odd tap subsets) make both
// reduce and expand preserve constant images exactly.
class Kernel5 {
 public:
  static Kernel5 classic() { return from_a(0.4); }

  static Kernel5 from_a(double a) {
    return Kernel5({0.25 - a / 2, 0.25, a, 0.25, 0.25 - a / 2});
  }

  static Kernel5 from_taps(const std::array<double, 5>& w) { return Kernel5(w); }

  double operator[](int m) const { return w_[static_cast<std::size_t>(m + 2)]; }
  const std::array<double, 5>& taps() const { return w_; }

 private:
  explicit Kernel5(const std::array<double, 5>& w) : w_(w) {
    const double tol = 1e-9;
    if (std::abs(w[0] + w[1] + w[2] + w[3] + w[4] - 1.0) > tol)
      throw DegenerateInput("kernel taps must sum to 1");
    if (std::abs(w[0] - w[4]) > tol || std::abs(w[1] - w[3]) > tol)
      throw DegenerateInput("kernel must be symmetric");
    if (std::abs(w[0] + w[2] + w[4] - 0.5) > tol || std::abs(w[1] + w[3] - 0.5) > tol)
      throw DegenerateInput("even and odd kernel tap subsets must each sum to 0.5");
  }

  std::array<double, 5> w_;
};

template <typename T>
struct GaussianPyramid {
  std::vector<Tensor<T>> levels;  // levels[0] finest ... levels[n] coarsest
};

template <typename T>
struct LaplacianPyramid {
  std::vector<Tensor<T>> levels;  // band images l_0..l_{n-1}, residual l_n
};

namespace detail {

// Mirror-without-edge-repeat indexing, iterated so any offset lands in range.
inline std::size_t reflect(long i, long n) {
  if (n == 1) return 0;
  const long period = 2 * (n - 1);
  long m = i % period;
  if (m < 0) m += period;
  if (m >= n) m = period - m;
  return static_cast<std::size_t>(m);
}

inline std::size_t half_up(std::size_t d) { return (d + 1) / 2; }

}  // namespace detail

// Low-pass filter and downsample: out(i,j) = sum_{m,n} w(m)w(n) img(2i+m, 2j+n),
// with reflected borders; output dims are ceil(input/2). Separable, applied
// per channel.
template <typename T>
Tensor<T> reduce(const Tensor<T>& img, const Kernel5& k) {
  if (img.shape().rank() != 3) throw ShapeError("reduce: image must be channels x h x w");
  const std::size_t ch = img.shape()[0], h = img.shape()[1], w = img.shape()[2];
  if (h < 2 || w < 2)
    throw DegenerateInput("reduce: image dims must be at least 2, got " +
                          std::to_string(h) + "x" + std::to_string(w));
  const std::size_t oh = detail::half_up(h), ow = detail::half_up(w);

  Tensor<T> out(Shape{ch, oh, ow});
  std::vector<double> tmp(h * ow);  // horizontally filtered, full row set
  for (std::size_t c = 0; c < ch; ++c) {
    const T* plane = img.data() + c * h * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t j = 0; j < ow; ++j) {
        double acc = 0;
        for (int n = -2; n <= 2; ++n)
          acc += k[n] * plane[y * w + detail::reflect(static_cast<long>(2 * j) + n,
                                                      static_cast<long>(w))];
        tmp[y * ow + j] = acc;
      }
    T* oplane = out.data() + c * oh * ow;
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double acc = 0;
        for (int m = -2; m <= 2; ++m)
          acc += k[m] * tmp[detail::reflect(static_cast<long>(2 * i) + m,
                                            static_cast<long>(h)) * ow + j];
        oplane[i * ow + j] = static_cast<T>(acc);
      }
  }
  check_finite(out, "reduce");
  return out;
}

// Upsample to the given target dims:
// out(i,j) = 4 * sum w(m)w(n) img((i-m)/2, (j-n)/2), keeping only terms with
// integer coordinates, reflected at borders. ceil(target/2) must equal the
// input dims (the target resolves the ambiguity of ceil-halving).
template <typename T>
Tensor<T> expand(const Tensor<T>& img, std::size_t target_h, std::size_t target_w,
                 const Kernel5& k) {
  if (img.shape().rank() != 3) throw ShapeError("expand: image must be channels x h x w");
  const std::size_t ch = img.shape()[0], h = img.shape()[1], w = img.shape()[2];
  if (detail::half_up(target_h) != h || detail::half_up(target_w) != w)
    throw ShapeError("expand: target " + std::to_string(target_h) + "x" +
                     std::to_string(target_w) + " does not halve to input " +
                     std::to_string(h) + "x" + std::to_string(w));

  Tensor<T> out(Shape{ch, target_h, target_w});
  std::vector<double> tmp(h * target_w);  // column-expanded, source row set
  for (std::size_t c = 0; c < ch; ++c) {
    const T* plane = img.data() + c * h * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t j = 0; j < target_w; ++j) {
        double acc = 0;
        for (int n = -2; n <= 2; ++n) {
          const long num = static_cast<long>(j) - n;
          if (num % 2 != 0) continue;
          acc += k[n] * plane[y * w + detail::reflect(num / 2, static_cast<long>(w))];
        }
        tmp[y * target_w + j] = 2 * acc;
      }
    T* oplane = out.data() + c * target_h * target_w;
    for (std::size_t i = 0; i < target_h; ++i)
      for (std::size_t j = 0; j < target_w; ++j) {
        double acc = 0;
        for (int m = -2; m <= 2; ++m) {
          const long num = static_cast<long>(i) - m;
          if (num % 2 != 0) continue;
          acc += k[m] * tmp[detail::reflect(num / 2, static_cast<long>(h)) * target_w + j];
        }
        oplane[i * target_w + j] = static_cast<T>(2 * acc);
      }
  }
  check_finite(out, "expand");
  return out;
}

// Successively reduced copies g_0..g_{n_levels-1}. The coarsest level must
// stay at least 4x4.
template <typename T>
GaussianPyramid<T> gaussian_pyramid(const Tensor<T>& img, int n_levels, const Kernel5& k) {
  if (img.shape().rank() != 3)
    throw ShapeError("gaussian_pyramid: image must be channels x h x w");
  if (n_levels < 2) throw DegenerateInput("gaussian_pyramid: need at least 2 levels");
  std::size_t h = img.shape()[1], w = img.shape()[2];
  for (int l = 1; l < n_levels; ++l) {
    h = detail::half_up(h);
    w = detail::half_up(w);
  }
  if (h < 4 || w < 4)
    throw DegenerateInput("gaussian_pyramid: " + std::to_string(n_levels) +
                          " levels leaves coarsest at " + std::to_string(h) + "x" +
                          std::to_string(w) + ", need at least 4x4");

  GaussianPyramid<T> gp;
  gp.levels.reserve(static_cast<std::size_t>(n_levels));
  gp.levels.push_back(img);
  for (int l = 1; l < n_levels; ++l) gp.levels.push_back(reduce(gp.levels.back(), k));
  return gp;
}

// Band-pass differences l_k = g_k - expand(g_{k+1}) plus the low-frequency
// residual l_n = g_n.
template <typename T>
LaplacianPyramid<T> build_laplacian(const GaussianPyramid<T>& gp, const Kernel5& k) {
  if (gp.levels.size() < 2) throw DegenerateInput("build_laplacian: need at least 2 levels");
  LaplacianPyramid<T> lp;
  lp.levels.reserve(gp.levels.size());
  for (std::size_t l = 0; l + 1 < gp.levels.size(); ++l) {
    const Tensor<T>& g = gp.levels[l];
    Tensor<T> up = expand(gp.levels[l + 1], g.shape()[1], g.shape()[2], k);
    Tensor<T> band(g.shape());
    for (std::size_t i = 0; i < band.size(); ++i) band[i] = g[i] - up[i];
    lp.levels.push_back(std::move(band));
  }
  lp.levels.push_back(gp.levels.back());
  return lp;
}

template <typename T>
LaplacianPyramid<T> build_laplacian(const Tensor<T>& img, int n_levels, const Kernel5& k) {
  return build_laplacian(gaussian_pyramid(img, n_levels, k), k);
}

// Inverse transform: iterate g_k = l_k + expand(g_{k+1}) from the residual down.
template <typename T>
Tensor<T> collapse(const LaplacianPyramid<T>& lp, const Kernel5& k) {
  if (lp.levels.empty()) throw ShapeError("collapse: empty pyramid");
  for (std::size_t l = 0; l + 1 < lp.levels.size(); ++l) {
    const Shape& fine = lp.levels[l].shape();
    const Shape& coarse = lp.levels[l + 1].shape();
    if (fine.rank() != 3 || coarse.rank() != 3 || fine[0] != coarse[0] ||
        detail::half_up(fine[1]) != coarse[1] || detail::half_up(fine[2]) != coarse[2])
      throw ShapeError("collapse: level " + std::to_string(l + 1) + " shape " +
                       coarse.str() + " does not chain from " + fine.str());
  }
  Tensor<T> g = lp.levels.back();
  for (std::size_t l = lp.levels.size() - 1; l-- > 0;) {
    const Tensor<T>& band = lp.levels[l];
    Tensor<T> up = expand(g, band.shape()[1], band.shape()[2], k);
    for (std::size_t i = 0; i < up.size(); ++i) up[i] += band[i];
    g = std::move(up);
  }
  return g;
}

}  // namespace lpae
