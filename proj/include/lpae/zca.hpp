#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "lpae/checkpoint.hpp"
#include "lpae/gemm.hpp"
#include "lpae/tensor.hpp"

#ifdef LPAE_USE_LAPACK
#include <lapacke.h>
#endif

namespace lpae {

// Whitening transform fitted on (possibly spatially downsampled) training
// data. factor > 1 marks the coarse variant used for large images: the
// whitening matrix acts on factor-x-factor block averages and the correction
// is replicated back, i.e. out = dx + up((W - I) down(dx)). At factor 1 this
// is exactly W dx.
struct ZCAStats {
  Tensor<double> mean;  // full-dimension mean vector
  Tensor<double> w;     // (Dc, Dc) symmetric whitening matrix
  double epsilon = 1e-2;
  std::size_t factor = 1;
  std::size_t channels = 0, side = 0;  // image geometry; 0 for matrix-level stats
};

namespace detail {

// Symmetric eigendecomposition of row-major a (n x n): ascending eigenvalues
// in evals, eigenvector j in column j of a.
inline void sym_eig(std::vector<double>& a, std::vector<double>& evals, std::size_t n) {
#ifdef LPAE_USE_LAPACK
  evals.assign(n, 0.0);
  const auto info = LAPACKE_dsyevd(LAPACK_ROW_MAJOR, 'V', 'U', static_cast<int>(n),
                                   a.data(), static_cast<int>(n), evals.data());
  if (info != 0)
    throw NumericError("eigendecomposition failed (dsyevd info " + std::to_string(info) + ")");
#else
  // Cyclic Jacobi; adequate for the small matrices used without LAPACK.
  evals.assign(n, 0.0);
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off < 1e-22) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1.0 / std::sqrt(t * t + 1), s = t * c;
        for (std::size_t i = 0; i < n; ++i) {
          const double aip = a[i * n + p], aiq = a[i * n + q];
          a[i * n + p] = c * aip - s * aiq;
          a[i * n + q] = s * aip + c * aiq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double api = a[p * n + i], aqi = a[q * n + i];
          a[p * n + i] = c * api - s * aqi;
          a[q * n + i] = s * api + c * aqi;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vip = v[i * n + p], viq = v[i * n + q];
          v[i * n + p] = c * vip - s * viq;
          v[i * n + q] = s * vip + c * viq;
        }
      }
  }
  for (std::size_t i = 0; i < n; ++i) evals[i] = a[i * n + i];
  a = v;
#endif
}

// W = E (L + eps I)^(-1/2) E^T from the covariance eigendecomposition.
inline Tensor<double> whitening_from_cov(std::vector<double> cov, std::size_t d,
                                         double epsilon) {
  std::vector<double> evals;
  sym_eig(cov, evals, d);
  // scale eigenvector columns by (lambda + eps)^(-1/4), then W = B B^T
  for (std::size_t j = 0; j < d; ++j) {
    const double lam = evals[j] > 0 ? evals[j] : 0.0;
    const double s = std::pow(lam + epsilon, -0.25);
    for (std::size_t i = 0; i < d; ++i) cov[i * d + j] *= s;
  }
  Tensor<double> w(Shape{d, d});
  gemm<double>(false, true, static_cast<int>(d), static_cast<int>(d), static_cast<int>(d),
               1.0, cov.data(), static_cast<int>(d), cov.data(), static_cast<int>(d), 0.0,
               w.data(), static_cast<int>(d));
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) {
      const double sym = 0.5 * (w[i * d + j] + w[j * d + i]);
      w[i * d + j] = sym;
      w[j * d + i] = sym;
    }
  return w;
}

// factor-x-factor block averages of a (C,S,S) vector, flattened
inline void down_block(const double* full, double* coarse, std::size_t ch, std::size_t s,
                       std::size_t f) {
  const std::size_t cs = s / f;
  const double inv = 1.0 / static_cast<double>(f * f);
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t y = 0; y < cs; ++y)
      for (std::size_t x = 0; x < cs; ++x) {
        double acc = 0;
        for (std::size_t dy = 0; dy < f; ++dy)
          for (std::size_t dx = 0; dx < f; ++dx)
            acc += full[(c * s + y * f + dy) * s + x * f + dx];
        coarse[(c * cs + y) * cs + x] = acc * inv;
      }
}

inline void up_block_add(const double* coarse, double* full, std::size_t ch, std::size_t s,
                         std::size_t f) {
  const std::size_t cs = s / f;
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x)
        full[(c * s + y) * s + x] += coarse[(c * cs + y / f) * cs + x / f];
}

inline std::size_t zca_factor_for(std::size_t side) {
  std::size_t f = 1;
  while (side / f > 32) {
    f *= 2;
    if (side % f != 0)
      throw DegenerateInput("image side " + std::to_string(side) +
                            " not divisible by the ZCA downsample factor");
  }
  return f;
}

}  // namespace detail

// Fit on row vectors of X (N, D).
inline ZCAStats zca_fit_matrix(const Tensor<double>& x, double epsilon = 1e-2) {
  if (x.shape().rank() != 2) throw ShapeError("zca_fit_matrix: need (N, D)");
  if (epsilon <= 0) throw DegenerateInput("zca epsilon must be positive");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  if (n < 2) throw DegenerateInput("zca_fit_matrix: need at least 2 samples");

  ZCAStats st;
  st.epsilon = epsilon;
  st.mean = Tensor<double>(Shape{d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) st.mean[j] += x[i * d + j];
  for (std::size_t j = 0; j < d; ++j) st.mean[j] /= static_cast<double>(n);

  std::vector<double> centered(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) centered[i * d + j] = x[i * d + j] - st.mean[j];
  std::vector<double> cov(d * d);
  gemm<double>(true, false, static_cast<int>(d), static_cast<int>(d), static_cast<int>(n),
               1.0 / static_cast<double>(n), centered.data(), static_cast<int>(d),
               centered.data(), static_cast<int>(d), 0.0, cov.data(), static_cast<int>(d));
  st.w = detail::whitening_from_cov(std::move(cov), d, epsilon);
  return st;
}

inline Tensor<double> zca_apply_matrix(const ZCAStats& st, const Tensor<double>& x) {
  if (x.shape().rank() != 2) throw ShapeError("zca_apply_matrix: need (N, D)");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  if (st.mean.size() != d || st.factor != 1)
    throw ShapeError("zca_apply_matrix: stats do not match a " + std::to_string(d) +
                     "-dimensional matrix input");
  std::vector<double> centered(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) centered[i * d + j] = x[i * d + j] - st.mean[j];
  Tensor<double> out(Shape{n, d});
  gemm<double>(false, false, static_cast<int>(n), static_cast<int>(d), static_cast<int>(d),
               1.0, centered.data(), static_cast<int>(d), st.w.data(), static_cast<int>(d),
               0.0, out.data(), static_cast<int>(d));
  return out;
}

// Fit on an image batch (N, C, S, S). Sides above 32 pixels are whitened at a
// power-of-two block scale to keep the covariance tractable.
inline ZCAStats zca_fit(const Tensor<float>& images, double epsilon = 1e-2) {
  if (images.shape().rank() != 4) throw ShapeError("zca_fit: need (N, C, S, S)");
  if (epsilon <= 0) throw DegenerateInput("zca epsilon must be positive");
  const std::size_t n = images.shape()[0], ch = images.shape()[1];
  const std::size_t s = images.shape()[2];
  if (images.shape()[3] != s) throw ShapeError("zca_fit: images must be square");
  if (n < 2) throw DegenerateInput("zca_fit: need at least 2 samples");
  const std::size_t f = detail::zca_factor_for(s);
  const std::size_t d_full = ch * s * s;
  const std::size_t cs = s / f, dc = ch * cs * cs;

  ZCAStats st;
  st.epsilon = epsilon;
  st.factor = f;
  st.channels = ch;
  st.side = s;
  st.mean = Tensor<double>(Shape{d_full});
  for (std::size_t i = 0; i < n; ++i) {
    const float* p = images.data() + i * d_full;
    for (std::size_t j = 0; j < d_full; ++j) st.mean[j] += p[j];
  }
  for (std::size_t j = 0; j < d_full; ++j) st.mean[j] /= static_cast<double>(n);

  std::vector<double> dx(d_full), coarse(n * dc);
  for (std::size_t i = 0; i < n; ++i) {
    const float* p = images.data() + i * d_full;
    for (std::size_t j = 0; j < d_full; ++j) dx[j] = p[j] - st.mean[j];
    detail::down_block(dx.data(), coarse.data() + i * dc, ch, s, f);
  }
  std::vector<double> cov(dc * dc);
  gemm<double>(true, false, static_cast<int>(dc), static_cast<int>(dc), static_cast<int>(n),
               1.0 / static_cast<double>(n), coarse.data(), static_cast<int>(dc),
               coarse.data(), static_cast<int>(dc), 0.0, cov.data(), static_cast<int>(dc));
  st.w = detail::whitening_from_cov(std::move(cov), dc, epsilon);
  return st;
}

inline Tensor<float> zca_apply(const ZCAStats& st, const Tensor<float>& images) {
  if (images.shape().rank() != 4) throw ShapeError("zca_apply: need (N, C, S, S)");
  const std::size_t n = images.shape()[0], ch = images.shape()[1];
  const std::size_t s = images.shape()[2];
  if (ch != st.channels || s != st.side || images.shape()[3] != s)
    throw ShapeError("zca_apply: stats were fitted for " + std::to_string(st.channels) +
                     "x" + std::to_string(st.side) + "x" + std::to_string(st.side) +
                     " images");
  const std::size_t f = st.factor;
  const std::size_t d_full = ch * s * s;
  const std::size_t cs = s / f, dc = ch * cs * cs;

  std::vector<double> dx(n * d_full), coarse(n * dc), whitened(n * dc);
  for (std::size_t i = 0; i < n; ++i) {
    const float* p = images.data() + i * d_full;
    for (std::size_t j = 0; j < d_full; ++j) dx[i * d_full + j] = p[j] - st.mean[j];
    detail::down_block(dx.data() + i * d_full, coarse.data() + i * dc, ch, s, f);
  }
  gemm<double>(false, false, static_cast<int>(n), static_cast<int>(dc), static_cast<int>(dc),
               1.0, coarse.data(), static_cast<int>(dc), st.w.data(), static_cast<int>(dc),
               0.0, whitened.data(), static_cast<int>(dc));

  Tensor<float> out(images.shape());
  for (std::size_t i = 0; i < n; ++i) {
    double* full = dx.data() + i * d_full;
    double* corr = whitened.data() + i * dc;
    for (std::size_t j = 0; j < dc; ++j) corr[j] -= coarse[i * dc + j];  // (W - I) c
    detail::up_block_add(corr, full, ch, s, f);
    float* o = out.data() + i * d_full;
    for (std::size_t j = 0; j < d_full; ++j) o[j] = static_cast<float>(full[j]);
  }
  check_finite(out, "zca_apply");
  return out;
}

inline void put_zca(Archive& a, const ZCAStats& st, const std::string& prefix = "zca") {
  a.put(prefix + ".mean", st.mean);
  a.put(prefix + ".w", st.w);
  Tensor<double> eps(Shape{1});
  eps[0] = st.epsilon;
  a.put(prefix + ".epsilon", eps);
  a.put_u64(prefix + ".factor", st.factor);
  a.put_u64(prefix + ".channels", st.channels);
  a.put_u64(prefix + ".side", st.side);
}

inline ZCAStats get_zca(const Archive& a, const std::string& prefix = "zca") {
  ZCAStats st;
  st.mean = a.get<double>(prefix + ".mean");
  st.w = a.get<double>(prefix + ".w");
  st.epsilon = a.get<double>(prefix + ".epsilon")[0];
  st.factor = a.get_u64(prefix + ".factor");
  st.channels = a.get_u64(prefix + ".channels");
  st.side = a.get_u64(prefix + ".side");
  return st;
}

}  // namespace lpae
