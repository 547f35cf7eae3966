#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lpae/arch.hpp"
#include "lpae/ops.hpp"
#include "lpae/pyramid.hpp"
#include "lpae/rng.hpp"

namespace lpae {

// One conv or deconv layer with its optional batch norm. The final decoder
// layer of every level is linear (no BN, no ReLU): its output approximates a
// signed whitened target.
template <typename T>
struct ConvLayer {
  Var<T> w, b;
  std::optional<BNState<T>> bn;
  int kernel = 3;
  int stride = 1;
  bool transposed = false;
  bool linear_out = false;
};

template <typename T>
struct LevelNet {
  std::vector<ConvLayer<T>> enc, dec;
  // Index of the encoder layer after whose output the upsampled code of the
  // next-coarser level is concatenated; -1 on the coarsest level.
  int merge_point = -1;
};

template <typename T>
struct LpaeModel {
  ArchitectureSpec spec;
  std::size_t input_h = 0, input_w = 0;
  bool use_bn = true;
  Kernel5 kernel = Kernel5::classic();
  std::vector<LevelNet<T>> levels;  // index 0 = finest

  int scales() const { return static_cast<int>(levels.size()); }
  std::uint64_t arch_hash() const { return spec.hash(input_h, input_w, use_bn); }
};

template <typename T>
struct DcaeModel {
  ArchitectureSpec spec;
  std::size_t input_h = 0, input_w = 0;
  bool use_bn = true;
  std::vector<ConvLayer<T>> enc, dec;

  std::uint64_t arch_hash() const { return spec.hash(input_h, input_w, use_bn); }
};

enum class ParamRole { kernel, bias, gamma, beta };

template <typename T>
struct ParamRef {
  std::string name;
  Var<T> var;
  ParamRole role = ParamRole::kernel;
};

template <typename T>
struct BNRef {
  std::string name;  // layer prefix, e.g. "level0.enc1"
  BNState<T>* state = nullptr;
};

namespace detail {

inline std::size_t conv_out(std::size_t d, int stride) {
  return (d - 1) / static_cast<std::size_t>(stride) + 1;
}

template <typename T>
ConvLayer<T> make_layer(const LayerSpec& ls, std::size_t in_ch, bool transposed,
                        bool linear_out, bool use_bn) {
  ConvLayer<T> l;
  l.kernel = ls.kernel;
  l.stride = ls.stride;
  l.transposed = transposed;
  l.linear_out = linear_out;
  const auto k = static_cast<std::size_t>(ls.kernel);
  const auto out_ch = static_cast<std::size_t>(ls.maps);
  const Shape ws = transposed ? Shape{in_ch, out_ch, k, k} : Shape{out_ch, in_ch, k, k};
  l.w = Var<T>(Tensor<T>(ws), true);
  l.b = Var<T>(Tensor<T>(Shape{out_ch}), true);
  if (use_bn && !linear_out) l.bn.emplace(out_ch);
  return l;
}

template <typename T>
void collect_layer_params(const std::string& prefix, ConvLayer<T>& l,
                          std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + ".w", l.w, ParamRole::kernel});
  out.push_back({prefix + ".b", l.b, ParamRole::bias});
  if (l.bn) {
    out.push_back({prefix + ".bn.gamma", l.bn->gamma, ParamRole::gamma});
    out.push_back({prefix + ".bn.beta", l.bn->beta, ParamRole::beta});
  }
}

}  // namespace detail

// Learnable parameters in a stable construction order (used by the optimizer
// and the checkpoint format).
template <typename T>
std::vector<ParamRef<T>> parameters(LpaeModel<T>& m) {
  std::vector<ParamRef<T>> out;
  for (std::size_t k = 0; k < m.levels.size(); ++k) {
    const std::string lv = "level" + std::to_string(k);
    for (std::size_t i = 0; i < m.levels[k].enc.size(); ++i)
      detail::collect_layer_params(lv + ".enc" + std::to_string(i), m.levels[k].enc[i], out);
    for (std::size_t i = 0; i < m.levels[k].dec.size(); ++i)
      detail::collect_layer_params(lv + ".dec" + std::to_string(i), m.levels[k].dec[i], out);
  }
  return out;
}

template <typename T>
std::vector<ParamRef<T>> parameters(DcaeModel<T>& m) {
  std::vector<ParamRef<T>> out;
  for (std::size_t i = 0; i < m.enc.size(); ++i)
    detail::collect_layer_params("enc" + std::to_string(i), m.enc[i], out);
  for (std::size_t i = 0; i < m.dec.size(); ++i)
    detail::collect_layer_params("dec" + std::to_string(i), m.dec[i], out);
  return out;
}

template <typename T>
std::vector<BNRef<T>> bn_refs(LpaeModel<T>& m) {
  std::vector<BNRef<T>> out;
  for (std::size_t k = 0; k < m.levels.size(); ++k) {
    const std::string lv = "level" + std::to_string(k);
    for (std::size_t i = 0; i < m.levels[k].enc.size(); ++i)
      if (m.levels[k].enc[i].bn)
        out.push_back({lv + ".enc" + std::to_string(i), &*m.levels[k].enc[i].bn});
    for (std::size_t i = 0; i < m.levels[k].dec.size(); ++i)
      if (m.levels[k].dec[i].bn)
        out.push_back({lv + ".dec" + std::to_string(i), &*m.levels[k].dec[i].bn});
  }
  return out;
}

template <typename T>
std::vector<BNRef<T>> bn_refs(DcaeModel<T>& m) {
  std::vector<BNRef<T>> out;
  for (std::size_t i = 0; i < m.enc.size(); ++i)
    if (m.enc[i].bn) out.push_back({"enc" + std::to_string(i), &*m.enc[i].bn});
  for (std::size_t i = 0; i < m.dec.size(); ++i)
    if (m.dec[i].bn) out.push_back({"dec" + std::to_string(i), &*m.dec[i].bn});
  return out;
}

// Count of scalar learnables: conv/deconv weights, biases, BN gamma and beta.
template <typename T>
std::size_t count_params(LpaeModel<T>& m) {
  std::size_t n = 0;
  for (const ParamRef<T>& p : parameters(m)) n += p.var.value().size();
  return n;
}

template <typename T>
std::size_t count_params(DcaeModel<T>& m) {
  std::size_t n = 0;
  for (const ParamRef<T>& p : parameters(m)) n += p.var.value().size();
  return n;
}

// Kernel weights ~ N(0, std^2); biases and BN beta zero; BN gamma one.
// Deterministic given the seed and the parameter order.
template <typename T>
void init_weights(std::vector<ParamRef<T>>& params, T stddev, std::uint64_t seed) {
  if (!(stddev > T(0))) throw DegenerateInput("init_weights: stddev must be positive");
  Pcg32 rng(seed);
  for (ParamRef<T>& p : params) {
    Tensor<T>& v = p.var.value();
    switch (p.role) {
      case ParamRole::kernel:
        for (std::size_t i = 0; i < v.size(); ++i)
          v[i] = stddev * static_cast<T>(rng.normal());
        break;
      case ParamRole::gamma:
        v.fill(T(1));
        break;
      default:
        v.fill(T(0));
    }
  }
}

// Builds the multi-level model at a given input size: chases resolutions
// through the stride chains, places each cross-level merge after the earliest
// encoder layer whose output resolution is twice that of the next-coarser
// code, widens the following layer's input accordingly, and initializes all
// parameters.
template <typename T>
LpaeModel<T> build_lpae(const ArchitectureSpec& spec, std::size_t input_h,
                        std::size_t input_w, std::uint64_t seed, T init_std = T(0.02),
                        bool use_bn = true) {
  if (spec.kind != ModelKind::lpae) throw ArchError("build_lpae: spec is not an LPAE");
  const std::size_t n = spec.levels.size();

  LpaeModel<T> m;
  m.spec = spec;
  m.input_h = input_h;
  m.input_w = input_w;
  m.use_bn = use_bn;
  m.levels.resize(n);

  // per-level input dims (the pyramid level sizes)
  std::vector<std::pair<std::size_t, std::size_t>> in_dims(n);
  in_dims[0] = {input_h, input_w};
  for (std::size_t k = 1; k < n; ++k)
    in_dims[k] = {(in_dims[k - 1].first + 1) / 2, (in_dims[k - 1].second + 1) / 2};

  std::pair<std::size_t, std::size_t> code_dims{};  // dims of h_{k+1} while at level k
  std::size_t code_ch = 0;
  for (std::size_t k = n; k-- > 0;) {
    const LevelSpec& ls = spec.levels[k];
    LevelNet<T>& net = m.levels[k];

    // encoder resolution chain
    std::vector<std::pair<std::size_t, std::size_t>> out_dims(ls.encoder.size());
    auto d = in_dims[k];
    for (std::size_t i = 0; i < ls.encoder.size(); ++i) {
      d = {detail::conv_out(d.first, ls.encoder[i].stride),
           detail::conv_out(d.second, ls.encoder[i].stride)};
      out_dims[i] = d;
    }

    if (k + 1 < n) {
      const std::pair<std::size_t, std::size_t> want{2 * code_dims.first,
                                                     2 * code_dims.second};
      int mp = -1;
      for (std::size_t i = 0; i < out_dims.size(); ++i)
        if (out_dims[i] == want) {
          mp = static_cast<int>(i);
          break;
        }
      if (mp < 0)
        throw ArchError("level " + std::to_string(k) + ": no encoder layer produces " +
                        std::to_string(want.first) + "x" + std::to_string(want.second) +
                        " maps for the level-" + std::to_string(k + 1) + " merge");
      if (mp + 1 == static_cast<int>(ls.encoder.size()))
        throw ArchError("level " + std::to_string(k) +
                        ": only the final encoder layer matches the merge resolution");
      net.merge_point = mp;
    }

    std::size_t in_ch = 3;
    for (std::size_t i = 0; i < ls.encoder.size(); ++i) {
      net.enc.push_back(detail::make_layer<T>(ls.encoder[i], in_ch, false, false, use_bn));
      in_ch = static_cast<std::size_t>(ls.encoder[i].maps);
      if (static_cast<int>(i) == net.merge_point) in_ch += code_ch;
    }

    // decoder: deconv chain from h_k back to the level's input resolution
    std::size_t dec_ch = static_cast<std::size_t>(ls.encoder.back().maps);
    auto dd = out_dims.back();
    for (std::size_t i = 0; i < ls.decoder.size(); ++i) {
      const bool last = (i + 1 == ls.decoder.size());
      net.dec.push_back(detail::make_layer<T>(ls.decoder[i], dec_ch, true, last, use_bn));
      dec_ch = static_cast<std::size_t>(ls.decoder[i].maps);
      dd = {dd.first * static_cast<std::size_t>(ls.decoder[i].stride),
            dd.second * static_cast<std::size_t>(ls.decoder[i].stride)};
    }
    if (dd != in_dims[k])
      throw ArchError("level " + std::to_string(k) + ": decoder reaches " +
                      std::to_string(dd.first) + "x" + std::to_string(dd.second) +
                      " but the level input is " + std::to_string(in_dims[k].first) + "x" +
                      std::to_string(in_dims[k].second));

    code_dims = out_dims.back();
    code_ch = static_cast<std::size_t>(ls.encoder.back().maps);
  }

  auto params = parameters(m);
  init_weights(params, init_std, seed);
  return m;
}

template <typename T>
DcaeModel<T> build_dcae(const ArchitectureSpec& spec, std::size_t input_h,
                        std::size_t input_w, std::uint64_t seed, T init_std = T(0.02),
                        bool use_bn = true) {
  if (spec.kind != ModelKind::dcae) throw ArchError("build_dcae: spec is not a DCAE");
  const LevelSpec& ls = spec.levels[0];

  DcaeModel<T> m;
  m.spec = spec;
  m.input_h = input_h;
  m.input_w = input_w;
  m.use_bn = use_bn;

  std::size_t in_ch = 3;
  auto d = std::pair{input_h, input_w};
  for (const LayerSpec& l : ls.encoder) {
    m.enc.push_back(detail::make_layer<T>(l, in_ch, false, false, use_bn));
    in_ch = static_cast<std::size_t>(l.maps);
    d = {detail::conv_out(d.first, l.stride), detail::conv_out(d.second, l.stride)};
  }
  for (std::size_t i = 0; i < ls.decoder.size(); ++i) {
    const bool last = (i + 1 == ls.decoder.size());
    m.dec.push_back(detail::make_layer<T>(ls.decoder[i], in_ch, true, last, use_bn));
    in_ch = static_cast<std::size_t>(ls.decoder[i].maps);
    d = {d.first * static_cast<std::size_t>(ls.decoder[i].stride),
         d.second * static_cast<std::size_t>(ls.decoder[i].stride)};
  }
  if (d != std::pair{input_h, input_w})
    throw ArchError("decoder reaches " + std::to_string(d.first) + "x" +
                    std::to_string(d.second) + " but the input is " +
                    std::to_string(input_h) + "x" + std::to_string(input_w));

  auto params = parameters(m);
  init_weights(params, init_std, seed);
  return m;
}

template <typename T>
Var<T> run_layer(Tape<T>& tape, ConvLayer<T>& l, const Var<T>& x, Mode mode) {
  Var<T> y = l.transposed ? deconv2d(tape, x, l.w, l.b, l.stride)
                          : conv2d(tape, x, l.w, l.b, l.stride);
  if (l.bn) y = batch_norm(tape, y, *l.bn, mode);
  if (!l.linear_out) y = relu(tape, y);
  return y;
}

namespace detail {

template <typename T>
Var<T> run_encoder(Tape<T>& tape, LevelNet<T>& lev, const Var<T>& input,
                   const Var<T>* merge_in, Mode mode,
                   std::vector<Var<T>>* collect = nullptr) {
  Var<T> x = input;
  for (std::size_t i = 0; i < lev.enc.size(); ++i) {
    x = run_layer(tape, lev.enc[i], x, mode);
    if (collect) collect->push_back(x);
    if (static_cast<int>(i) == lev.merge_point)
      x = concat_channels(tape, x, upsample_nn(tape, *merge_in, 2));
  }
  return x;
}

}  // namespace detail

// Per-level pyramid batches: lap[k] and gauss[k] are (B, 3, h_k, w_k).
template <typename T>
struct PyramidBatch {
  std::vector<Tensor<T>> lap, gauss;
};

template <typename T>
PyramidBatch<T> batch_pyramids(const Tensor<T>& images, int n_levels, const Kernel5& k) {
  const Shape& s = images.shape();
  if (s.rank() != 4) throw ShapeError("batch_pyramids: need a (B,C,H,W) batch");
  const std::size_t batch = s[0], ch = s[1];

  PyramidBatch<T> out;
  for (std::size_t b = 0; b < batch; ++b) {
    Tensor<T> img(Shape{ch, s[2], s[3]});
    std::copy_n(images.data() + b * img.size(), img.size(), img.data());
    GaussianPyramid<T> gp = gaussian_pyramid(img, n_levels, k);
    if (b == 0) {
      for (const Tensor<T>& g : gp.levels) {
        Shape ls{batch, ch, g.shape()[1], g.shape()[2]};
        out.lap.emplace_back(ls);
        out.gauss.emplace_back(ls);
      }
    }
    for (std::size_t l = 0; l < gp.levels.size(); ++l) {
      const Tensor<T>& g = gp.levels[l];
      std::copy_n(g.data(), g.size(), out.gauss[l].data() + b * g.size());
      T* dst = out.lap[l].data() + b * g.size();
      if (l + 1 < gp.levels.size()) {
        Tensor<T> up = expand(gp.levels[l + 1], g.shape()[1], g.shape()[2], k);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] = g[i] - up[i];
      } else {
        std::copy_n(g.data(), g.size(), dst);
      }
    }
  }
  return out;
}

template <typename T>
struct LpaeOutput {
  std::vector<Var<T>> h;       // codes, index 0 = finest level
  std::vector<Var<T>> recon;   // per-level reconstructions of the Gaussian levels
  std::vector<Var<T>> loss_k;  // per-level scalars
  Var<T> loss;                 // sum over levels
};

// Top-down forward pass: the coarsest code is computed first and feeds the
// finer levels through the merge points. Each decoder reconstructs its
// Gaussian level; the total loss is the sum of the per-level losses.
template <typename T>
LpaeOutput<T> forward_lpae(Tape<T>& tape, LpaeModel<T>& m,
                           const std::vector<Tensor<T>>& lap_batch,
                           const std::vector<Tensor<T>>& gauss_batch, Mode mode) {
  const std::size_t n = m.levels.size();
  if (lap_batch.size() != n || gauss_batch.size() != n)
    throw ShapeError("forward_lpae: expected " + std::to_string(n) +
                     " pyramid levels, got " + std::to_string(lap_batch.size()) + "/" +
                     std::to_string(gauss_batch.size()));

  LpaeOutput<T> out;
  out.h.resize(n);
  out.recon.resize(n);
  out.loss_k.resize(n);
  for (std::size_t k = n; k-- > 0;) {
    Var<T> input(lap_batch[k]);
    const Var<T>* merge = (k + 1 < n) ? &out.h[k + 1] : nullptr;
    out.h[k] = detail::run_encoder(tape, m.levels[k], input, merge, mode);
    Var<T> d = out.h[k];
    for (ConvLayer<T>& layer : m.levels[k].dec) d = run_layer(tape, layer, d, mode);
    Var<T> target(gauss_batch[k]);
    if (d.value().shape() != target.value().shape())
      throw ArchError("level " + std::to_string(k) + ": reconstruction shape " +
                      d.value().shape().str() + " vs target " +
                      target.value().shape().str());
    out.recon[k] = d;
    out.loss_k[k] = mse_loss(tape, d, target);
  }
  out.loss = out.loss_k[0];
  for (std::size_t k = 1; k < n; ++k) out.loss = add(tape, out.loss, out.loss_k[k]);
  return out;
}

// Convenience wrapper building the pyramids from an image batch.
template <typename T>
LpaeOutput<T> forward_lpae(Tape<T>& tape, LpaeModel<T>& m, const Tensor<T>& images,
                           Mode mode) {
  PyramidBatch<T> pb = batch_pyramids(images, m.scales(), m.kernel);
  return forward_lpae(tape, m, pb.lap, pb.gauss, mode);
}

template <typename T>
struct DcaeOutput {
  Var<T> code, recon, loss;
};

template <typename T>
DcaeOutput<T> forward_dcae(Tape<T>& tape, DcaeModel<T>& m, const Tensor<T>& images,
                           Mode mode) {
  DcaeOutput<T> out;
  Var<T> x(images);
  for (ConvLayer<T>& layer : m.enc) x = run_layer(tape, layer, x, mode);
  out.code = x;
  for (ConvLayer<T>& layer : m.dec) x = run_layer(tape, layer, x, mode);
  if (x.value().shape() != images.shape())
    throw ArchError("reconstruction shape " + x.value().shape().str() +
                    " differs from input " + images.shape().str());
  out.recon = x;
  Var<T> target(images);
  out.loss = mse_loss(tape, x, target);
  return out;
}

// Post-ReLU output of every encoder layer, outer index = level (a single
// entry for DCAE). Used by the feature extractor; run with mode = eval.
template <typename T>
std::vector<std::vector<Var<T>>> encoder_activations(Tape<T>& tape, LpaeModel<T>& m,
                                                     const std::vector<Tensor<T>>& lap_batch,
                                                     Mode mode) {
  const std::size_t n = m.levels.size();
  if (lap_batch.size() != n)
    throw ShapeError("encoder_activations: expected " + std::to_string(n) + " levels");
  std::vector<std::vector<Var<T>>> acts(n);
  std::vector<Var<T>> codes(n);
  for (std::size_t k = n; k-- > 0;) {
    Var<T> input(lap_batch[k]);
    const Var<T>* merge = (k + 1 < n) ? &codes[k + 1] : nullptr;
    codes[k] = detail::run_encoder(tape, m.levels[k], input, merge, mode, &acts[k]);
  }
  return acts;
}

template <typename T>
std::vector<std::vector<Var<T>>> encoder_activations(Tape<T>& tape, DcaeModel<T>& m,
                                                     const Tensor<T>& images, Mode mode) {
  std::vector<std::vector<Var<T>>> acts(1);
  Var<T> x(images);
  for (ConvLayer<T>& layer : m.enc) {
    x = run_layer(tape, layer, x, mode);
    acts[0].push_back(x);
  }
  return acts;
}

}  // namespace lpae
