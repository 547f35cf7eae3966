#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "lpae/checkpoint.hpp"
#include "lpae/data.hpp"
#include "lpae/model.hpp"

namespace lpae {

struct TrainConfig {
  std::size_t batch_size = 50;
  double learning_rate = 0.001;
  double init_std = 0.02;
  int epochs = 30;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  std::uint64_t seed = 1;
  bool use_bn = true;

  void validate() const {
    if (batch_size == 0 || learning_rate <= 0 || init_std <= 0 || epochs <= 0 ||
        beta1 <= 0 || beta2 <= 0 || adam_eps <= 0)
      throw DegenerateInput("train config fields must be positive");
    if (beta1 >= 1 || beta2 >= 1)
      throw DegenerateInput("adam betas must be in (0, 1)");
    if (use_bn && batch_size < 2)
      throw DegenerateInput("batch size must be at least 2 with batch norm on");
  }
};

// Adam with bias correction over a fixed parameter list. Parameters with no
// accumulated gradient are treated as having gradient zero.
template <typename T>
class Adam {
 public:
  Adam(std::vector<ParamRef<T>> params, T lr, T beta1 = T(0.9), T beta2 = T(0.999),
       T eps = T(1e-8))
      : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (ParamRef<T>& p : params_) {
      m_.emplace_back(p.var.value().shape());
      v_.emplace_back(p.var.value().shape());
    }
  }

  void zero_grad() {
    for (ParamRef<T>& p : params_) p.var.zero_grad();
  }

  void step() {
    ++t_;
    const T bc1 = T(1) - std::pow(b1_, static_cast<T>(t_));
    const T bc2 = T(1) - std::pow(b2_, static_cast<T>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor<T>& val = params_[i].var.value();
      const bool live = params_[i].var.has_grad();
      const Tensor<T>* g = live ? &params_[i].var.grad() : nullptr;
      if (live && !g->all_finite())
        throw NumericError("non-finite gradient for parameter " + params_[i].name);
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      for (std::size_t j = 0; j < val.size(); ++j) {
        const T gj = live ? (*g)[j] : T(0);
        m[j] = b1_ * m[j] + (T(1) - b1_) * gj;
        v[j] = b2_ * v[j] + (T(1) - b2_) * gj * gj;
        const T mhat = m[j] / bc1;
        const T vhat = v[j] / bc2;
        val[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  std::uint64_t t() const { return t_; }
  const std::vector<ParamRef<T>>& params() const { return params_; }

  void serialize(Archive& a) const {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      a.put("adam.m." + params_[i].name, m_[i]);
      a.put("adam.v." + params_[i].name, v_[i]);
    }
    a.put_u64("adam.t", t_);
  }

  void deserialize(const Archive& a) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i] = a.get<T>("adam.m." + params_[i].name);
      v_[i] = a.get<T>("adam.v." + params_[i].name);
      if (m_[i].shape() != params_[i].var.value().shape() ||
          v_[i].shape() != params_[i].var.value().shape())
        throw FormatError("optimizer state shape mismatch for " + params_[i].name);
    }
    t_ = a.get_u64("adam.t");
  }

 private:
  std::vector<ParamRef<T>> params_;
  std::vector<Tensor<T>> m_, v_;
  std::uint64_t t_ = 0;
  T lr_, b1_, b2_, eps_;
};

template <typename T>
struct StepLosses {
  Var<T> total;
  std::vector<Var<T>> per_level;
};

template <typename T>
StepLosses<T> compute_losses(Tape<T>& tape, LpaeModel<T>& m, const Tensor<T>& images,
                             Mode mode) {
  LpaeOutput<T> out = forward_lpae(tape, m, images, mode);
  return {out.loss, out.loss_k};
}

template <typename T>
StepLosses<T> compute_losses(Tape<T>& tape, DcaeModel<T>& m, const Tensor<T>& images,
                             Mode mode) {
  DcaeOutput<T> out = forward_dcae(tape, m, images, mode);
  return {out.loss, {}};
}

struct StepRow {
  std::size_t step = 0;  // global, 0-based
  std::size_t epoch = 0;
  double total = 0;
  std::vector<double> levels;
};

struct TrainLog {
  std::vector<StepRow> rows;
  std::vector<double> epoch_mean;                // mean total loss per epoch
  std::vector<std::vector<double>> epoch_level_mean;  // [epoch][level]
  bool diverged = false;
  std::string divergence_message;
  bool converged = false;

  std::string csv_header(std::size_t n_levels) const {
    std::string h = "step,epoch,loss_total";
    for (std::size_t k = 0; k < n_levels; ++k) h += ",loss_" + std::to_string(k);
    return h;
  }

  std::string to_csv() const {
    const std::size_t n_levels = rows.empty() ? 0 : rows.front().levels.size();
    std::string out = csv_header(n_levels) + "\n";
    char buf[64];
    for (const StepRow& r : rows) {
      out += std::to_string(r.step) + "," + std::to_string(r.epoch);
      std::snprintf(buf, sizeof(buf), ",%.9g", r.total);
      out += buf;
      for (double v : r.levels) {
        std::snprintf(buf, sizeof(buf), ",%.9g", v);
        out += buf;
      }
      out += "\n";
    }
    return out;
  }
};

// Serializes everything needed to resume: parameters, BN running statistics,
// optimizer moments, the seed, and the position in the schedule. All shuffle
// orders are derived statelessly from (seed, epoch), so seed plus position is
// the complete RNG state.
struct ResumeInfo {
  std::uint64_t seed = 0;
  std::uint64_t next_epoch = 0;
  std::uint64_t global_step = 0;
};

template <typename T, typename M>
Archive checkpoint_archive(M& model, const Adam<T>* opt, const ResumeInfo& info) {
  Archive a;
  a.arch_hash = model.arch_hash();
  const std::string text = model.spec.canonical();
  Tensor<std::uint8_t> arch_text(Shape{text.size()});
  for (std::size_t i = 0; i < text.size(); ++i)
    arch_text[i] = static_cast<std::uint8_t>(text[i]);
  a.put("arch.text", arch_text);
  a.put_u64("arch.input_h", model.input_h);
  a.put_u64("arch.input_w", model.input_w);
  a.put_u64("arch.use_bn", model.use_bn ? 1 : 0);
  for (ParamRef<T>& p : parameters(model)) a.put(p.name, p.var.value());
  for (BNRef<T>& b : bn_refs(model)) {
    a.put(b.name + ".bn.running_mean", b.state->running_mean);
    a.put(b.name + ".bn.running_var", b.state->running_var);
  }
  if (opt) opt->serialize(a);
  a.put_u64("train.seed", info.seed);
  a.put_u64("train.next_epoch", info.next_epoch);
  a.put_u64("train.global_step", info.global_step);
  return a;
}

template <typename T, typename M>
ResumeInfo apply_checkpoint(const Archive& a, M& model, Adam<T>* opt) {
  if (a.arch_hash != model.arch_hash())
    throw FormatError("checkpoint architecture hash mismatch: file " +
                      std::to_string(a.arch_hash) + ", model " +
                      std::to_string(model.arch_hash()));
  for (ParamRef<T>& p : parameters(model)) {
    Tensor<T> t = a.get<T>(p.name);
    if (t.shape() != p.var.value().shape())
      throw FormatError("parameter shape mismatch for " + p.name);
    p.var.value() = std::move(t);
  }
  for (BNRef<T>& b : bn_refs(model)) {
    b.state->running_mean = a.get<T>(b.name + ".bn.running_mean");
    b.state->running_var = a.get<T>(b.name + ".bn.running_var");
  }
  if (opt) opt->deserialize(a);
  ResumeInfo info;
  info.seed = a.get_u64("train.seed");
  info.next_epoch = a.get_u64("train.next_epoch");
  info.global_step = a.get_u64("train.global_step");
  return info;
}

inline std::string archive_arch_text(const Archive& a) {
  Tensor<std::uint8_t> t = a.get<std::uint8_t>("arch.text");
  std::string s(t.size(), '\0');
  for (std::size_t i = 0; i < t.size(); ++i) s[i] = static_cast<char>(t[i]);
  return s;
}

// Runs epochs [start_epoch, cfg.epochs). One optimizer step per batch; short
// final batches are dropped. On divergence (non-finite loss, activation or
// gradient) the loop stops, flags the log, and writes the last finite state
// to divergence_ckpt when a path is given.
template <typename T, typename M>
TrainLog train(M& model, Adam<T>& opt, const Dataset& data, const TrainConfig& cfg,
               std::uint64_t start_epoch = 0,
               const std::function<void(const StepRow&)>& on_step = nullptr,
               const std::string& divergence_ckpt = "") {
  cfg.validate();
  if (data.size() == 0) throw DegenerateInput("train: empty dataset");
  if (cfg.batch_size > data.size())
    throw DegenerateInput("train: batch size exceeds dataset size");

  TrainLog log;
  const std::size_t steps_per_epoch = data.size() / cfg.batch_size;
  std::size_t global_step = start_epoch * steps_per_epoch;

  Archive snapshot =
      checkpoint_archive(model, &opt, ResumeInfo{cfg.seed, start_epoch, global_step});
  auto save_divergence = [&](std::size_t epoch) {
    log.diverged = true;
    bool params_finite = true;
    for (ParamRef<T>& p : parameters(model))
      if (!p.var.value().all_finite()) params_finite = false;
    if (!divergence_ckpt.empty()) {
      if (params_finite)
        checkpoint_archive(model, &opt, ResumeInfo{cfg.seed, epoch, global_step})
            .save(divergence_ckpt);
      else
        snapshot.save(divergence_ckpt);
    }
  };

  for (std::uint64_t epoch = start_epoch; epoch < static_cast<std::uint64_t>(cfg.epochs);
       ++epoch) {
    double epoch_sum = 0;
    std::vector<double> level_sum;
    std::size_t epoch_steps = 0;
    for (const auto& idx : batch_indices(data.size(), cfg.batch_size, cfg.seed, epoch)) {
      Batch b = gather(data, idx);
      Tensor<T> images = b.images.template cast<T>();
      StepRow row;
      row.step = global_step;
      row.epoch = epoch;
      try {
        Tape<T> tape;
        StepLosses<T> losses = compute_losses(tape, model, images, Mode::train);
        row.total = static_cast<double>(losses.total.value()[0]);
        for (Var<T>& lk : losses.per_level)
          row.levels.push_back(static_cast<double>(lk.value()[0]));
        if (!std::isfinite(row.total)) throw NumericError("loss is not finite");
        opt.zero_grad();
        backward(tape, losses.total);
        opt.step();
      } catch (const NumericError& e) {
        log.divergence_message = e.what();
        save_divergence(epoch);
        return log;
      }
      ++global_step;
      ++epoch_steps;
      epoch_sum += row.total;
      if (level_sum.size() < row.levels.size()) level_sum.resize(row.levels.size(), 0.0);
      for (std::size_t k = 0; k < row.levels.size(); ++k) level_sum[k] += row.levels[k];
      if (on_step) on_step(row);
      log.rows.push_back(std::move(row));
    }
    log.epoch_mean.push_back(epoch_sum / static_cast<double>(epoch_steps));
    std::vector<double> lm;
    for (double s : level_sum) lm.push_back(s / static_cast<double>(epoch_steps));
    log.epoch_level_mean.push_back(std::move(lm));
    snapshot = checkpoint_archive(model, &opt, ResumeInfo{cfg.seed, epoch + 1, global_step});
  }

  if (log.epoch_mean.size() >= 2)
    log.converged = log.epoch_mean.back() < 0.9 * log.epoch_mean.front();
  else
    log.converged = !log.diverged;
  return log;
}

}  // namespace lpae
