#pragma once

#include <cmath>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "lpae/autograd.hpp"
#include "lpae/gemm.hpp"
#include "lpae/tensor.hpp"

namespace lpae {

namespace detail {

// im2col for "same" padding of k/2 and output dims ceil(in/stride).
// cols has shape (Cin*K*K, oH*oW), row-major.
template <typename T>
void im2col(const T* x, std::size_t c_in, std::size_t h, std::size_t w,
            std::size_t k, std::size_t stride, T* cols) {
  const long pad = static_cast<long>(k / 2);
  const std::size_t oh = (h - 1) / stride + 1;
  const std::size_t ow = (w - 1) / stride + 1;
  T* out = cols;
  for (std::size_t ci = 0; ci < c_in; ++ci) {
    const T* plane = x + ci * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = static_cast<long>(oy * stride) - pad + static_cast<long>(ky);
          if (iy < 0 || iy >= static_cast<long>(h)) {
            std::memset(out, 0, ow * sizeof(T));
            out += ow;
            continue;
          }
          const T* row = plane + static_cast<std::size_t>(iy) * w;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long ix = static_cast<long>(ox * stride) - pad + static_cast<long>(kx);
            *out++ = (ix < 0 || ix >= static_cast<long>(w)) ? T(0)
                                                            : row[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

// Transpose of im2col: scatter-add columns back into the padded image.
template <typename T>
void col2im_add(const T* cols, std::size_t c_in, std::size_t h, std::size_t w,
                std::size_t k, std::size_t stride, T* x) {
  const long pad = static_cast<long>(k / 2);
  const std::size_t oh = (h - 1) / stride + 1;
  const std::size_t ow = (w - 1) / stride + 1;
  const T* in = cols;
  for (std::size_t ci = 0; ci < c_in; ++ci) {
    T* plane = x + ci * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = static_cast<long>(oy * stride) - pad + static_cast<long>(ky);
          if (iy < 0 || iy >= static_cast<long>(h)) {
            in += ow;
            continue;
          }
          T* row = plane + static_cast<std::size_t>(iy) * w;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long ix = static_cast<long>(ox * stride) - pad + static_cast<long>(kx);
            if (ix >= 0 && ix < static_cast<long>(w)) row[static_cast<std::size_t>(ix)] += *in;
            ++in;
          }
        }
      }
    }
  }
}

inline void check_conv_args(std::size_t k, std::size_t kw, int stride) {
  if (k != kw) throw ShapeError("conv kernel must be square");
  if (k != 1 && k != 3 && k != 5)
    throw ShapeError("conv kernel size must be 1, 3 or 5, got " + std::to_string(k));
  if (stride != 1 && stride != 2)
    throw ShapeError("conv stride must be 1 or 2, got " + std::to_string(stride));
}

}  // namespace detail

// Strided correlation with "same" zero padding (pad = k/2), so the output is
// ceil(in/stride) per spatial axis. x (B,Cin,H,W), w (Cout,Cin,K,K), b (Cout).
template <typename T>
Var<T> conv2d(Tape<T>& tape, const Var<T>& x, const Var<T>& w, const Var<T>& b,
              int stride) {
  const Shape& xs = x.value().shape();
  const Shape& ws = w.value().shape();
  if (xs.rank() != 4 || ws.rank() != 4) throw ShapeError("conv2d: need rank-4 x and w");
  detail::check_conv_args(ws[2], ws[3], stride);
  if (xs[1] != ws[1])
    throw ShapeError("conv2d: input has " + std::to_string(xs[1]) +
                     " channels but kernel expects " + std::to_string(ws[1]));
  if (b.value().shape() != Shape{ws[0]})
    throw ShapeError("conv2d: bias must have one entry per output channel");

  const std::size_t batch = xs[0], c_in = xs[1], h = xs[2], wd = xs[3];
  const std::size_t c_out = ws[0], k = ws[2];
  const std::size_t s = static_cast<std::size_t>(stride);
  const std::size_t oh = (h - 1) / s + 1, ow = (wd - 1) / s + 1;
  const std::size_t ckk = c_in * k * k, opix = oh * ow;

  Tensor<T> out(Shape{batch, c_out, oh, ow});
  std::vector<T> cols(ckk * opix);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    const T* xb = x.value().data() + bi * c_in * h * wd;
    T* yb = out.data() + bi * c_out * opix;
    detail::im2col(xb, c_in, h, wd, k, s, cols.data());
    gemm<T>(false, false, static_cast<int>(c_out), static_cast<int>(opix),
            static_cast<int>(ckk), T(1), w.value().data(), static_cast<int>(ckk),
            cols.data(), static_cast<int>(opix), T(0), yb, static_cast<int>(opix));
    for (std::size_t oc = 0; oc < c_out; ++oc) {
      const T bias = b.value()[oc];
      T* row = yb + oc * opix;
      for (std::size_t p = 0; p < opix; ++p) row[p] += bias;
    }
  }
  check_finite(out, "conv2d");

  Var<T> y(std::move(out), detail::any_requires<T>({&x, &w, &b}));
  if (tape.recording() && y.requires_grad()) {
    auto xn = x.node(), wn = w.node(), bn = b.node(), yn = y.node();
    tape.record([xn, wn, bn, yn, s, k]() {
      if (!yn->grad_live) return;
      const Shape& xs2 = xn->value.shape();
      const std::size_t batch = xs2[0], c_in = xs2[1], h = xs2[2], wd = xs2[3];
      const std::size_t c_out = yn->value.shape()[1];
      const std::size_t oh = yn->value.shape()[2], ow = yn->value.shape()[3];
      const std::size_t ckk = c_in * k * k, opix = oh * ow;
      std::vector<T> cols(ckk * opix), dcols;
      if (xn->requires_grad) dcols.resize(ckk * opix);
      for (std::size_t bi = 0; bi < batch; ++bi) {
        const T* gy = yn->grad.data() + bi * c_out * opix;
        if (bn->requires_grad) {
          T* db = bn->ensure_grad().data();
          for (std::size_t oc = 0; oc < c_out; ++oc) {
            T s2 = T(0);
            const T* row = gy + oc * opix;
            for (std::size_t p = 0; p < opix; ++p) s2 += row[p];
            db[oc] += s2;
          }
        }
        if (wn->requires_grad || xn->requires_grad)
          detail::im2col(xn->value.data() + bi * c_in * h * wd, c_in, h, wd, k, s,
                         cols.data());
        if (wn->requires_grad) {
          gemm<T>(false, true, static_cast<int>(c_out), static_cast<int>(ckk),
                  static_cast<int>(opix), T(1), gy, static_cast<int>(opix),
                  cols.data(), static_cast<int>(opix), T(1),
                  wn->ensure_grad().data(), static_cast<int>(ckk));
        }
        if (xn->requires_grad) {
          gemm<T>(true, false, static_cast<int>(ckk), static_cast<int>(opix),
                  static_cast<int>(c_out), T(1), wn->value.data(),
                  static_cast<int>(ckk), gy, static_cast<int>(opix), T(0),
                  dcols.data(), static_cast<int>(opix));
          detail::col2im_add(dcols.data(), c_in, h, wd, k, s,
                             xn->ensure_grad().data() + bi * c_in * h * wd);
        }
      }
    });
  }
  return y;
}

// Transposed convolution. z (B,Cz,h,w), w (Cz,Cout,K,K), b (Cout); the output
// is (B,Cout,stride*h,stride*w). With stride s and kernel w this is exactly
// the adjoint of conv2d(.., w, s) on an (s*h, s*w) input, so a stride-2
// deconv doubles the spatial dims.
template <typename T>
Var<T> deconv2d(Tape<T>& tape, const Var<T>& z, const Var<T>& w, const Var<T>& b,
                int stride) {
  const Shape& zs = z.value().shape();
  const Shape& ws = w.value().shape();
  if (zs.rank() != 4 || ws.rank() != 4) throw ShapeError("deconv2d: need rank-4 z and w");
  detail::check_conv_args(ws[2], ws[3], stride);
  if (zs[1] != ws[0])
    throw ShapeError("deconv2d: input has " + std::to_string(zs[1]) +
                     " channels but kernel expects " + std::to_string(ws[0]));
  if (b.value().shape() != Shape{ws[1]})
    throw ShapeError("deconv2d: bias must have one entry per output channel");

  const std::size_t batch = zs[0], c_z = zs[1], h = zs[2], wd = zs[3];
  const std::size_t c_out = ws[1], k = ws[2];
  const std::size_t s = static_cast<std::size_t>(stride);
  const std::size_t th = h * s, tw = wd * s;  // output ("conv input") dims
  const std::size_t ckk = c_out * k * k, zpix = h * wd;

  Tensor<T> out(Shape{batch, c_out, th, tw});
  std::vector<T> cols(ckk * zpix);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    const T* zb = z.value().data() + bi * c_z * zpix;
    T* ob = out.data() + bi * c_out * th * tw;
    gemm<T>(true, false, static_cast<int>(ckk), static_cast<int>(zpix),
            static_cast<int>(c_z), T(1), w.value().data(), static_cast<int>(ckk),
            zb, static_cast<int>(zpix), T(0), cols.data(), static_cast<int>(zpix));
    detail::col2im_add(cols.data(), c_out, th, tw, k, s, ob);
    for (std::size_t oc = 0; oc < c_out; ++oc) {
      const T bias = b.value()[oc];
      T* plane = ob + oc * th * tw;
      for (std::size_t p = 0; p < th * tw; ++p) plane[p] += bias;
    }
  }
  check_finite(out, "deconv2d");

  Var<T> y(std::move(out), detail::any_requires<T>({&z, &w, &b}));
  if (tape.recording() && y.requires_grad()) {
    auto zn = z.node(), wn = w.node(), bn = b.node(), yn = y.node();
    tape.record([zn, wn, bn, yn, s, k]() {
      if (!yn->grad_live) return;
      const std::size_t batch = zn->value.shape()[0], c_z = zn->value.shape()[1];
      const std::size_t h = zn->value.shape()[2], wd = zn->value.shape()[3];
      const std::size_t c_out = yn->value.shape()[1];
      const std::size_t th = yn->value.shape()[2], tw = yn->value.shape()[3];
      const std::size_t ckk = c_out * k * k, zpix = h * wd;
      std::vector<T> cols(ckk * zpix);
      for (std::size_t bi = 0; bi < batch; ++bi) {
        const T* gy = yn->grad.data() + bi * c_out * th * tw;
        const T* zb = zn->value.data() + bi * c_z * zpix;
        if (bn->requires_grad) {
          T* db = bn->ensure_grad().data();
          for (std::size_t oc = 0; oc < c_out; ++oc) {
            T s2 = T(0);
            const T* plane = gy + oc * th * tw;
            for (std::size_t p = 0; p < th * tw; ++p) s2 += plane[p];
            db[oc] += s2;
          }
        }
        if (zn->requires_grad || wn->requires_grad)
          detail::im2col(gy, c_out, th, tw, k, s, cols.data());
        if (zn->requires_grad) {
          // dz = conv2d forward of the output gradient with the same kernel
          gemm<T>(false, false, static_cast<int>(c_z), static_cast<int>(zpix),
                  static_cast<int>(ckk), T(1), wn->value.data(),
                  static_cast<int>(ckk), cols.data(), static_cast<int>(zpix),
                  T(1), zn->ensure_grad().data() + bi * c_z * zpix,
                  static_cast<int>(zpix));
        }
        if (wn->requires_grad) {
          gemm<T>(false, true, static_cast<int>(c_z), static_cast<int>(ckk),
                  static_cast<int>(zpix), T(1), zb, static_cast<int>(zpix),
                  cols.data(), static_cast<int>(zpix), T(1),
                  wn->ensure_grad().data(), static_cast<int>(ckk));
        }
      }
    });
  }
  return y;
}

template <typename T>
Var<T> relu(Tape<T>& tape, const Var<T>& x) {
  Tensor<T> out(x.value().shape());
  const T* in = x.value().data();
  T* o = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] = in[i] > T(0) ? in[i] : T(0);
  check_finite(out, "relu");

  Var<T> y(std::move(out), x.requires_grad());
  if (tape.recording() && y.requires_grad()) {
    auto xn = x.node(), yn = y.node();
    tape.record([xn, yn]() {
      if (!yn->grad_live) return;
      const T* in2 = xn->value.data();
      const T* g = yn->grad.data();
      T* dx = xn->ensure_grad().data();
      for (std::size_t i = 0; i < xn->value.size(); ++i)
        if (in2[i] > T(0)) dx[i] += g[i];
    });
  }
  return y;
}

// Learnable per-channel affine plus running statistics for eval mode.
template <typename T>
struct BNState {
  Var<T> gamma, beta;
  Tensor<T> running_mean, running_var;
  T momentum = T(0.9);
  T epsilon = T(1e-5);

  explicit BNState(std::size_t channels, T momentum_ = T(0.9), T epsilon_ = T(1e-5))
      : gamma(Tensor<T>(Shape{channels}, T(1)), true),
        beta(Tensor<T>(Shape{channels}, T(0)), true),
        running_mean(Shape{channels}, T(0)),
        running_var(Shape{channels}, T(1)),
        momentum(momentum_),
        epsilon(epsilon_) {
    if (epsilon <= T(0)) throw DegenerateInput("batch norm epsilon must be positive");
  }
};

// Train mode normalizes with batch statistics over (batch, h, w) per channel
// and folds them into the running averages; eval mode is a fixed affine map
// built from the running statistics.
template <typename T>
Var<T> batch_norm(Tape<T>& tape, const Var<T>& x, BNState<T>& st, Mode mode) {
  const Shape& xs = x.value().shape();
  if (xs.rank() != 4) throw ShapeError("batch_norm: need rank-4 input");
  const std::size_t batch = xs[0], ch = xs[1], h = xs[2], w = xs[3];
  if (st.gamma.value().size() != ch)
    throw ShapeError("batch_norm: state has " + std::to_string(st.gamma.value().size()) +
                     " channels, input has " + std::to_string(ch));
  const std::size_t plane = h * w;
  const std::size_t n = batch * plane;

  Tensor<T> out(xs);
  auto xhat = std::make_shared<Tensor<T>>(xs);
  auto invstd = std::make_shared<std::vector<T>>(ch);

  if (mode == Mode::train) {
    if (batch < 2) throw DegenerateInput("batch_norm: train mode needs batch >= 2");
    for (std::size_t c = 0; c < ch; ++c) {
      double sum = 0, sq = 0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = x.value().data() + (b * ch + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sum += p[i];
          sq += static_cast<double>(p[i]) * p[i];
        }
      }
      const double mean = sum / static_cast<double>(n);
      double var = sq / static_cast<double>(n) - mean * mean;
      if (var < 0) var = 0;  // numerical floor
      const T istd = T(1) / std::sqrt(static_cast<T>(var) + st.epsilon);
      (*invstd)[c] = istd;
      st.running_mean[c] = st.momentum * st.running_mean[c] + (T(1) - st.momentum) * static_cast<T>(mean);
      st.running_var[c] = st.momentum * st.running_var[c] + (T(1) - st.momentum) * static_cast<T>(var);
      const T g = st.gamma.value()[c], bta = st.beta.value()[c], mu = static_cast<T>(mean);
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = x.value().data() + (b * ch + c) * plane;
        T* xh = xhat->data() + (b * ch + c) * plane;
        T* o = out.data() + (b * ch + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          xh[i] = (p[i] - mu) * istd;
          o[i] = g * xh[i] + bta;
        }
      }
    }
  } else {
    for (std::size_t c = 0; c < ch; ++c) {
      const T istd = T(1) / std::sqrt(std::max(st.running_var[c], T(0)) + st.epsilon);
      (*invstd)[c] = istd;
      const T g = st.gamma.value()[c], bta = st.beta.value()[c], mu = st.running_mean[c];
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = x.value().data() + (b * ch + c) * plane;
        T* xh = xhat->data() + (b * ch + c) * plane;
        T* o = out.data() + (b * ch + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          xh[i] = (p[i] - mu) * istd;
          o[i] = g * xh[i] + bta;
        }
      }
    }
  }
  check_finite(out, "batch_norm");

  Var<T> y(std::move(out), detail::any_requires<T>({&x, &st.gamma, &st.beta}));
  if (tape.recording() && y.requires_grad()) {
    auto xn = x.node(), gn = st.gamma.node(), btn = st.beta.node(), yn = y.node();
    tape.record([xn, gn, btn, yn, xhat, invstd, mode]() {
      if (!yn->grad_live) return;
      const Shape& xs2 = xn->value.shape();
      const std::size_t batch = xs2[0], ch = xs2[1], plane = xs2[2] * xs2[3];
      const std::size_t n = batch * plane;
      for (std::size_t c = 0; c < ch; ++c) {
        double dg = 0, db = 0;
        for (std::size_t b = 0; b < batch; ++b) {
          const T* g = yn->grad.data() + (b * ch + c) * plane;
          const T* xh = xhat->data() + (b * ch + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            dg += static_cast<double>(g[i]) * xh[i];
            db += g[i];
          }
        }
        if (gn->requires_grad) gn->ensure_grad()[c] += static_cast<T>(dg);
        if (btn->requires_grad) btn->ensure_grad()[c] += static_cast<T>(db);
        if (!xn->requires_grad) continue;
        const T gamma_istd = gn->value[c] * (*invstd)[c];
        if (mode == Mode::train) {
          const T mean_dy = static_cast<T>(db / static_cast<double>(n));
          const T mean_dy_xhat = static_cast<T>(dg / static_cast<double>(n));
          for (std::size_t b = 0; b < batch; ++b) {
            const T* g = yn->grad.data() + (b * ch + c) * plane;
            const T* xh = xhat->data() + (b * ch + c) * plane;
            T* dx = xn->ensure_grad().data() + (b * ch + c) * plane;
            for (std::size_t i = 0; i < plane; ++i)
              dx[i] += gamma_istd * (g[i] - mean_dy - xh[i] * mean_dy_xhat);
          }
        } else {
          for (std::size_t b = 0; b < batch; ++b) {
            const T* g = yn->grad.data() + (b * ch + c) * plane;
            T* dx = xn->ensure_grad().data() + (b * ch + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) dx[i] += gamma_istd * g[i];
          }
        }
      }
    });
  }
  return y;
}

// Nearest-neighbour upsampling by an integer factor >= 2.
template <typename T>
Var<T> upsample_nn(Tape<T>& tape, const Var<T>& x, int factor) {
  if (factor < 2) throw DegenerateInput("upsample_nn: factor must be >= 2");
  const Shape& xs = x.value().shape();
  if (xs.rank() != 4) throw ShapeError("upsample_nn: need rank-4 input");
  const std::size_t f = static_cast<std::size_t>(factor);
  const std::size_t bc = xs[0] * xs[1], h = xs[2], w = xs[3];

  Tensor<T> out(Shape{xs[0], xs[1], h * f, w * f});
  for (std::size_t p = 0; p < bc; ++p) {
    const T* in = x.value().data() + p * h * w;
    T* o = out.data() + p * h * f * w * f;
    for (std::size_t y = 0; y < h * f; ++y) {
      const T* row = in + (y / f) * w;
      for (std::size_t xcol = 0; xcol < w * f; ++xcol) o[y * w * f + xcol] = row[xcol / f];
    }
  }
  check_finite(out, "upsample_nn");

  Var<T> y(std::move(out), x.requires_grad());
  if (tape.recording() && y.requires_grad()) {
    auto xn = x.node(), yn = y.node();
    tape.record([xn, yn, f]() {
      if (!yn->grad_live) return;
      const Shape& xs2 = xn->value.shape();
      const std::size_t bc = xs2[0] * xs2[1], h = xs2[2], w = xs2[3];
      for (std::size_t p = 0; p < bc; ++p) {
        const T* g = yn->grad.data() + p * h * f * w * f;
        T* dx = xn->ensure_grad().data() + p * h * w;
        for (std::size_t y2 = 0; y2 < h * f; ++y2)
          for (std::size_t x2 = 0; x2 < w * f; ++x2)
            dx[(y2 / f) * w + x2 / f] += g[y2 * w * f + x2];
      }
    });
  }
  return y;
}

// Concatenation along the channel axis.
template <typename T>
Var<T> concat_channels(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  const Shape& as = a.value().shape();
  const Shape& bs = b.value().shape();
  if (as.rank() != 4 || bs.rank() != 4) throw ShapeError("concat_channels: need rank-4 inputs");
  if (as[0] != bs[0] || as[2] != bs[2] || as[3] != bs[3])
    throw ShapeError("concat_channels: batch/spatial mismatch " + as.str() + " vs " + bs.str());
  const std::size_t batch = as[0], ca = as[1], cb = bs[1], plane = as[2] * as[3];

  Tensor<T> out(Shape{batch, ca + cb, as[2], as[3]});
  for (std::size_t bi = 0; bi < batch; ++bi) {
    std::memcpy(out.data() + bi * (ca + cb) * plane, a.value().data() + bi * ca * plane,
                ca * plane * sizeof(T));
    std::memcpy(out.data() + (bi * (ca + cb) + ca) * plane,
                b.value().data() + bi * cb * plane, cb * plane * sizeof(T));
  }

  Var<T> y(std::move(out), detail::any_requires<T>({&a, &b}));
  if (tape.recording() && y.requires_grad()) {
    auto an = a.node(), bn = b.node(), yn = y.node();
    tape.record([an, bn, yn, batch, ca, cb, plane]() {
      if (!yn->grad_live) return;
      for (std::size_t bi = 0; bi < batch; ++bi) {
        const T* g = yn->grad.data() + bi * (ca + cb) * plane;
        if (an->requires_grad) {
          T* da = an->ensure_grad().data() + bi * ca * plane;
          for (std::size_t i = 0; i < ca * plane; ++i) da[i] += g[i];
        }
        if (bn->requires_grad) {
          T* db = bn->ensure_grad().data() + bi * cb * plane;
          for (std::size_t i = 0; i < cb * plane; ++i) db[i] += g[ca * plane + i];
        }
      }
    });
  }
  return y;
}

// Grid geometry for the pooled-feature settings: 4, 9 and 16 values per map
// are square grids; 24 values uses 4 rows by 6 columns.
inline std::pair<int, int> pool_grid(int values_per_map) {
  switch (values_per_map) {
    case 4: return {2, 2};
    case 9: return {3, 3};
    case 16: return {4, 4};
    case 24: return {4, 6};
    default:
      throw DegenerateInput("unsupported values-per-map " + std::to_string(values_per_map) +
                            " (expected 4, 9, 16 or 24)");
  }
}

template <typename T>
Var<T> grid_max_pool(Tape<T>& tape, const Var<T>& x, int gh, int gw);

// Pools each map down to the requested number of values (4, 9, 16 or 24).
template <typename T>
Var<T> grid_max_pool(Tape<T>& tape, const Var<T>& x, int values_per_map) {
  auto [gh, gw] = pool_grid(values_per_map);
  return grid_max_pool(tape, x, gh, gw);
}

// Partitions each map into a gh x gw grid with cell boundaries at
// round(i*H/gh) and takes the max per cell. Output is (batch, C*gh*gw) with
// column order (channel, cell_row, cell_col).
template <typename T>
Var<T> grid_max_pool(Tape<T>& tape, const Var<T>& x, int gh, int gw) {
  const Shape& xs = x.value().shape();
  if (xs.rank() != 4) throw ShapeError("grid_max_pool: need rank-4 input");
  const std::size_t batch = xs[0], ch = xs[1], h = xs[2], w = xs[3];
  if (gh < 1 || gw < 1 || h < static_cast<std::size_t>(gh) || w < static_cast<std::size_t>(gw))
    throw DegenerateInput("grid_max_pool: grid " + std::to_string(gh) + "x" +
                          std::to_string(gw) + " larger than map " + std::to_string(h) +
                          "x" + std::to_string(w));
  auto bound = [](std::size_t i, std::size_t dim, std::size_t g) {
    return (2 * i * dim + g) / (2 * g);  // round(i*dim/g), half away from zero
  };
  const std::size_t cells = static_cast<std::size_t>(gh) * static_cast<std::size_t>(gw);

  Tensor<T> out(Shape{batch, ch * cells});
  auto argmax = std::make_shared<std::vector<std::size_t>>(batch * ch * cells);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    for (std::size_t c = 0; c < ch; ++c) {
      const T* plane = x.value().data() + (bi * ch + c) * h * w;
      for (std::size_t gy = 0; gy < static_cast<std::size_t>(gh); ++gy) {
        const std::size_t y0 = bound(gy, h, gh), y1 = bound(gy + 1, h, gh);
        for (std::size_t gx = 0; gx < static_cast<std::size_t>(gw); ++gx) {
          const std::size_t x0 = bound(gx, w, gw), x1 = bound(gx + 1, w, gw);
          T best = plane[y0 * w + x0];
          std::size_t best_i = y0 * w + x0;
          for (std::size_t y = y0; y < y1; ++y)
            for (std::size_t x2 = x0; x2 < x1; ++x2)
              if (plane[y * w + x2] > best) {
                best = plane[y * w + x2];
                best_i = y * w + x2;
              }
          const std::size_t col = (c * gh + gy) * gw + gx;
          out.data()[bi * ch * cells + col] = best;
          (*argmax)[bi * ch * cells + col] = (bi * ch + c) * h * w + best_i;
        }
      }
    }
  }

  Var<T> y(std::move(out), x.requires_grad());
  if (tape.recording() && y.requires_grad()) {
    auto xn = x.node(), yn = y.node();
    tape.record([xn, yn, argmax]() {
      if (!yn->grad_live) return;
      T* dx = xn->ensure_grad().data();
      const T* g = yn->grad.data();
      for (std::size_t i = 0; i < argmax->size(); ++i) dx[(*argmax)[i]] += g[i];
    });
  }
  return y;
}

// Mean over all elements of the squared difference.
template <typename T>
Var<T> mse_loss(Tape<T>& tape, const Var<T>& pred, const Var<T>& target) {
  if (pred.value().shape() != target.value().shape())
    throw ShapeError("mse_loss: shape mismatch " + pred.value().shape().str() + " vs " +
                     target.value().shape().str());
  const std::size_t n = pred.value().size();
  if (n == 0) throw DegenerateInput("mse_loss: empty input");
  double acc = 0;
  const T* p = pred.value().data();
  const T* t = target.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(p[i]) - t[i];
    acc += d * d;
  }
  Tensor<T> out(Shape{1});
  out[0] = static_cast<T>(acc / static_cast<double>(n));
  check_finite(out, "mse_loss");

  Var<T> y(std::move(out), detail::any_requires<T>({&pred, &target}));
  if (tape.recording() && y.requires_grad()) {
    auto pn = pred.node(), tn = target.node(), yn = y.node();
    tape.record([pn, tn, yn, n]() {
      if (!yn->grad_live) return;
      const T scale = yn->grad[0] * T(2) / static_cast<T>(n);
      const T* p2 = pn->value.data();
      const T* t2 = tn->value.data();
      if (pn->requires_grad) {
        T* dp = pn->ensure_grad().data();
        for (std::size_t i = 0; i < n; ++i) dp[i] += scale * (p2[i] - t2[i]);
      }
      if (tn->requires_grad) {
        T* dt = tn->ensure_grad().data();
        for (std::size_t i = 0; i < n; ++i) dt[i] -= scale * (p2[i] - t2[i]);
      }
    });
  }
  return y;
}

// Mean negative log-softmax of the true class, stabilized by max-subtraction.
// logits (B, C), labels in [0, C).
template <typename T>
Var<T> softmax_cross_entropy(Tape<T>& tape, const Var<T>& logits,
                             const std::vector<int>& labels) {
  const Shape& ls = logits.value().shape();
  if (ls.rank() != 2) throw ShapeError("softmax_cross_entropy: need rank-2 logits");
  const std::size_t batch = ls[0], classes = ls[1];
  if (labels.size() != batch)
    throw ShapeError("softmax_cross_entropy: batch " + std::to_string(batch) + " but " +
                     std::to_string(labels.size()) + " labels");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= classes)
      throw DegenerateInput("softmax_cross_entropy: label " + std::to_string(l) +
                            " out of range [0, " + std::to_string(classes) + ")");

  auto probs = std::make_shared<Tensor<T>>(ls);
  double loss = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    const T* row = logits.value().data() + b * classes;
    T mx = row[0];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    double denom = 0;
    for (std::size_t c = 0; c < classes; ++c)
      denom += std::exp(static_cast<double>(row[c] - mx));
    const double log_denom = std::log(denom);
    for (std::size_t c = 0; c < classes; ++c)
      probs->data()[b * classes + c] =
          static_cast<T>(std::exp(static_cast<double>(row[c] - mx)) / denom);
    loss -= static_cast<double>(row[static_cast<std::size_t>(labels[b])] - mx) - log_denom;
  }
  Tensor<T> out(Shape{1});
  out[0] = static_cast<T>(loss / static_cast<double>(batch));
  check_finite(out, "softmax_cross_entropy");

  Var<T> y(std::move(out), logits.requires_grad());
  if (tape.recording() && y.requires_grad()) {
    auto ln = logits.node(), yn = y.node();
    auto lab = std::make_shared<std::vector<int>>(labels);
    tape.record([ln, yn, probs, lab]() {
      if (!yn->grad_live) return;
      const std::size_t batch = ln->value.shape()[0], classes = ln->value.shape()[1];
      const T scale = yn->grad[0] / static_cast<T>(batch);
      T* dl = ln->ensure_grad().data();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < classes; ++c) {
          T p = probs->data()[b * classes + c];
          if (c == static_cast<std::size_t>((*lab)[b])) p -= T(1);
          dl[b * classes + c] += scale * p;
        }
    });
  }
  return y;
}

// Fully connected map y = x*w + b for the linear probe. x (B,D), w (D,C), b (C).
template <typename T>
Var<T> linear(Tape<T>& tape, const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const Shape& xs = x.value().shape();
  const Shape& ws = w.value().shape();
  if (xs.rank() != 2 || ws.rank() != 2) throw ShapeError("linear: need rank-2 x and w");
  if (xs[1] != ws[0])
    throw ShapeError("linear: x has " + std::to_string(xs[1]) + " features, w expects " +
                     std::to_string(ws[0]));
  if (b.value().shape() != Shape{ws[1]})
    throw ShapeError("linear: bias must have one entry per output");
  const std::size_t batch = xs[0], d = xs[1], c = ws[1];

  Tensor<T> out(Shape{batch, c});
  gemm<T>(false, false, static_cast<int>(batch), static_cast<int>(c),
          static_cast<int>(d), T(1), x.value().data(), static_cast<int>(d),
          w.value().data(), static_cast<int>(c), T(0), out.data(), static_cast<int>(c));
  for (std::size_t bi = 0; bi < batch; ++bi)
    for (std::size_t j = 0; j < c; ++j) out.data()[bi * c + j] += b.value()[j];
  check_finite(out, "linear");

  Var<T> y(std::move(out), detail::any_requires<T>({&x, &w, &b}));
  if (tape.recording() && y.requires_grad()) {
    auto xn = x.node(), wn = w.node(), bn = b.node(), yn = y.node();
    tape.record([xn, wn, bn, yn, batch, d, c]() {
      if (!yn->grad_live) return;
      const T* g = yn->grad.data();
      if (xn->requires_grad)
        gemm<T>(false, true, static_cast<int>(batch), static_cast<int>(d),
                static_cast<int>(c), T(1), g, static_cast<int>(c), wn->value.data(),
                static_cast<int>(c), T(1), xn->ensure_grad().data(), static_cast<int>(d));
      if (wn->requires_grad)
        gemm<T>(true, false, static_cast<int>(d), static_cast<int>(c),
                static_cast<int>(batch), T(1), xn->value.data(), static_cast<int>(d), g,
                static_cast<int>(c), T(1), wn->ensure_grad().data(), static_cast<int>(c));
      if (bn->requires_grad) {
        T* db = bn->ensure_grad().data();
        for (std::size_t bi = 0; bi < batch; ++bi)
          for (std::size_t j = 0; j < c; ++j) db[j] += g[bi * c + j];
      }
    });
  }
  return y;
}

// Elementwise sum of two same-shaped tensors.
template <typename T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  if (a.value().shape() != b.value().shape())
    throw ShapeError("add: shape mismatch " + a.value().shape().str() + " vs " +
                     b.value().shape().str());
  Tensor<T> out(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  check_finite(out, "add");

  Var<T> y(std::move(out), detail::any_requires<T>({&a, &b}));
  if (tape.recording() && y.requires_grad()) {
    auto an = a.node(), bn = b.node(), yn = y.node();
    tape.record([an, bn, yn]() {
      if (!yn->grad_live) return;
      if (an->requires_grad) detail::accumulate(*an, yn->grad);
      if (bn->requires_grad) detail::accumulate(*bn, yn->grad);
    });
  }
  return y;
}

// Sum of all elements, as a scalar.
template <typename T>
Var<T> sum(Tape<T>& tape, const Var<T>& x) {
  double s = 0;
  for (std::size_t i = 0; i < x.value().size(); ++i) s += x.value()[i];
  Tensor<T> out(Shape{1});
  out[0] = static_cast<T>(s);
  check_finite(out, "sum");

  Var<T> y(std::move(out), x.requires_grad());
  if (tape.recording() && y.requires_grad()) {
    auto xn = x.node(), yn = y.node();
    tape.record([xn, yn]() {
      if (!yn->grad_live) return;
      const T g = yn->grad[0];
      T* dx = xn->ensure_grad().data();
      for (std::size_t i = 0; i < xn->value.size(); ++i) dx[i] += g;
    });
  }
  return y;
}

}  // namespace lpae
