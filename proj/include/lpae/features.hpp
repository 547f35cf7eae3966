#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include "lpae/data.hpp"
#include "lpae/model.hpp"
#include "lpae/train.hpp"
#include "lpae/zca.hpp"

namespace lpae {

struct FeatureColumn {
  int level = 0;    // -1 for raw-pixel features
  int layer = 0;
  int channel = 0;
  int cell = 0;
};

struct FeatureMatrix {
  Tensor<float> values;  // (N, D)
  std::vector<FeatureColumn> column_map;

  std::size_t rows() const { return values.shape()[0]; }
  std::size_t cols() const { return values.shape()[1]; }

  std::string column_map_csv() const {
    std::string out = "col,level,layer,channel,cell\n";
    for (std::size_t i = 0; i < column_map.size(); ++i) {
      const FeatureColumn& c = column_map[i];
      out += std::to_string(i) + "," + std::to_string(c.level) + "," +
             std::to_string(c.layer) + "," + std::to_string(c.channel) + "," +
             std::to_string(c.cell) + "\n";
    }
    return out;
  }

  // Column subset restricted to the given levels, in the original order.
  FeatureMatrix select_levels(const std::vector<int>& levels) const {
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < column_map.size(); ++i)
      if (std::find(levels.begin(), levels.end(), column_map[i].level) != levels.end())
        keep.push_back(i);
    FeatureMatrix out;
    out.values = Tensor<float>(Shape{rows(), keep.size()});
    for (std::size_t r = 0; r < rows(); ++r)
      for (std::size_t j = 0; j < keep.size(); ++j)
        out.values[r * keep.size() + j] = values[r * cols() + keep[j]];
    for (std::size_t j : keep) out.column_map.push_back(column_map[j]);
    return out;
  }
};

namespace detail {

template <typename T>
void pool_into(const Var<T>& act, int level, int layer, int values_per_map,
               FeatureMatrix& fm, std::size_t row0, std::size_t col0, bool map_cols) {
  const auto [gh, gw] = pool_grid(values_per_map);
  const Shape& s = act.value().shape();
  if (s[2] < static_cast<std::size_t>(gh) || s[3] < static_cast<std::size_t>(gw))
    throw DegenerateInput("values-per-map " + std::to_string(values_per_map) +
                          " needs a " + std::to_string(gh) + "x" + std::to_string(gw) +
                          " grid but level " + std::to_string(level) + " encoder layer " +
                          std::to_string(layer) + " maps are " + std::to_string(s[2]) +
                          "x" + std::to_string(s[3]));
  Tape<T> tape;
  tape.set_recording(false);
  Var<T> pooled = grid_max_pool(tape, act, gh, gw);
  const std::size_t batch = s[0], width = pooled.value().shape()[1];
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < width; ++j)
      fm.values[(row0 + b) * fm.cols() + col0 + j] =
          static_cast<float>(pooled.value()[b * width + j]);
  if (map_cols) {
    const int cells = gh * gw;
    for (std::size_t j = 0; j < width; ++j)
      fm.column_map[col0 + j] = {level, layer, static_cast<int>(j) / cells,
                                 static_cast<int>(j) % cells};
  }
}

}  // namespace detail

// Pooled post-ReLU activations of every encoder layer in the included levels,
// flattened and concatenated; eval mode, processed in batches. include_levels
// empty means all levels.
template <typename T>
FeatureMatrix extract_features(LpaeModel<T>& model, const Dataset& ds, int values_per_map,
                               std::vector<int> include_levels = {},
                               std::size_t batch_size = 50) {
  if (include_levels.empty())
    for (int k = 0; k < model.scales(); ++k) include_levels.push_back(k);
  std::sort(include_levels.begin(), include_levels.end());
  for (int k : include_levels)
    if (k < 0 || k >= model.scales())
      throw DegenerateInput("include level " + std::to_string(k) + " out of range");

  std::size_t total_cols = 0;
  for (int k : include_levels)
    for (const LayerSpec& l : model.spec.levels[static_cast<std::size_t>(k)].encoder)
      total_cols += static_cast<std::size_t>(l.maps) * static_cast<std::size_t>(values_per_map);

  FeatureMatrix fm;
  fm.values = Tensor<float>(Shape{ds.size(), total_cols});
  fm.column_map.resize(total_cols);

  for (std::size_t at = 0; at < ds.size(); at += batch_size) {
    const std::size_t n = std::min(batch_size, ds.size() - at);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), at);
    Batch b = gather(ds, idx);
    Tensor<T> images = b.images.template cast<T>();
    PyramidBatch<T> pb = batch_pyramids(images, model.scales(), model.kernel);
    Tape<T> tape;
    tape.set_recording(false);
    auto acts = encoder_activations(tape, model, pb.lap, Mode::eval);
    std::size_t col = 0;
    for (int k : include_levels)
      for (std::size_t li = 0; li < acts[static_cast<std::size_t>(k)].size(); ++li) {
        const Var<T>& act = acts[static_cast<std::size_t>(k)][li];
        detail::pool_into(act, k, static_cast<int>(li), values_per_map, fm, at, col,
                          at == 0);
        col += act.value().shape()[1] * static_cast<std::size_t>(values_per_map);
      }
  }
  return fm;
}

template <typename T>
FeatureMatrix extract_features(DcaeModel<T>& model, const Dataset& ds, int values_per_map,
                               std::vector<int> include_levels = {},
                               std::size_t batch_size = 50) {
  if (!include_levels.empty() && include_levels != std::vector<int>{0})
    throw DegenerateInput("a deep CAE has a single level");

  std::size_t total_cols = 0;
  for (const LayerSpec& l : model.spec.levels[0].encoder)
    total_cols += static_cast<std::size_t>(l.maps) * static_cast<std::size_t>(values_per_map);

  FeatureMatrix fm;
  fm.values = Tensor<float>(Shape{ds.size(), total_cols});
  fm.column_map.resize(total_cols);

  for (std::size_t at = 0; at < ds.size(); at += batch_size) {
    const std::size_t n = std::min(batch_size, ds.size() - at);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), at);
    Batch b = gather(ds, idx);
    Tensor<T> images = b.images.template cast<T>();
    Tape<T> tape;
    tape.set_recording(false);
    auto acts = encoder_activations(tape, model, images, Mode::eval);
    std::size_t col = 0;
    for (std::size_t li = 0; li < acts[0].size(); ++li) {
      detail::pool_into(acts[0][li], 0, static_cast<int>(li), values_per_map, fm, at, col,
                        at == 0);
      col += acts[0][li].value().shape()[1] * static_cast<std::size_t>(values_per_map);
    }
  }
  return fm;
}

// Whitened pixels as a feature matrix: the no-learning baseline.
inline FeatureMatrix raw_pixel_features(const ZCAStats& st, const Dataset& ds) {
  Tensor<float> white = zca_apply(st, ds.images);
  const std::size_t n = ds.size(), d = white.size() / n;
  FeatureMatrix fm;
  fm.values = Tensor<float>(Shape{n, d});
  std::copy_n(white.data(), n * d, fm.values.data());
  fm.column_map.resize(d);
  for (std::size_t j = 0; j < d; ++j)
    fm.column_map[j] = {-1, 0, static_cast<int>(j), 0};
  return fm;
}

struct ProbeConfig {
  double learning_rate = 0.001;
  int epochs = 100;
  std::size_t batch_size = 50;
  std::uint64_t seed = 1;
  double init_std = 0.01;
};

// Multinomial softmax classifier, trained without regularization.
struct ProbeModel {
  Tensor<float> w;  // (D, classes)
  Tensor<float> b;  // (classes)
  int classes = 0;
};

inline ProbeModel train_probe(const FeatureMatrix& features, const std::vector<int>& labels,
                              const ProbeConfig& cfg) {
  const std::size_t n = features.rows(), d = features.cols();
  if (labels.size() != n)
    throw ShapeError("train_probe: " + std::to_string(n) + " rows but " +
                     std::to_string(labels.size()) + " labels");
  int classes = 0;
  for (int l : labels) {
    if (l < 0) throw DegenerateInput("train_probe: negative label");
    classes = std::max(classes, l + 1);
  }
  if (classes < 2) throw DegenerateInput("train_probe: need at least 2 classes");
  std::size_t batch = std::min(cfg.batch_size, n);

  Pcg32 rng(cfg.seed);
  Tensor<float> w0(Shape{d, static_cast<std::size_t>(classes)});
  for (std::size_t i = 0; i < w0.size(); ++i)
    w0[i] = static_cast<float>(cfg.init_std * rng.normal());
  Var<float> w(std::move(w0), true);
  Var<float> b(Tensor<float>(Shape{static_cast<std::size_t>(classes)}), true);

  Adam<float> opt({{"probe.w", w, ParamRole::kernel}, {"probe.b", b, ParamRole::bias}},
                  static_cast<float>(cfg.learning_rate));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& idx : batch_indices(n, batch, cfg.seed, static_cast<std::uint64_t>(epoch))) {
      Tensor<float> x(Shape{idx.size(), d});
      std::vector<int> y;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy_n(features.values.data() + idx[i] * d, d, x.data() + i * d);
        y.push_back(labels[idx[i]]);
      }
      Tape<float> tape;
      Var<float> xv(std::move(x));
      Var<float> loss = softmax_cross_entropy(tape, linear(tape, xv, w, b), y);
      opt.zero_grad();
      backward(tape, loss);
      opt.step();
    }
  }

  ProbeModel probe;
  probe.w = w.value();
  probe.b = b.value();
  probe.classes = classes;
  return probe;
}

inline double evaluate(const ProbeModel& probe, const FeatureMatrix& features,
                       const std::vector<int>& labels) {
  const std::size_t n = features.rows(), d = features.cols();
  if (labels.size() != n || probe.w.shape()[0] != d)
    throw ShapeError("evaluate: feature/label/probe dimension mismatch");
  const auto classes = static_cast<std::size_t>(probe.classes);
  std::size_t correct = 0;
  std::vector<float> logits(classes);
  for (std::size_t i = 0; i < n; ++i) {
    const float* x = features.values.data() + i * d;
    for (std::size_t c = 0; c < classes; ++c) logits[c] = probe.b[c];
    for (std::size_t j = 0; j < d; ++j) {
      const float xj = x[j];
      if (xj == 0.0f) continue;
      const float* wr = probe.w.data() + j * classes;
      for (std::size_t c = 0; c < classes; ++c) logits[c] += xj * wr[c];
    }
    const std::size_t arg = static_cast<std::size_t>(
        std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (static_cast<int>(arg) == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

struct RepeatStats {
  std::vector<double> accuracies;
  double mean = 0, stddev = 0;
};

// The repeat protocol: re-train the probe with varied seeds and report
// mean and sample standard deviation of the test accuracy.
inline RepeatStats probe_repeats(const FeatureMatrix& train_f, const std::vector<int>& train_y,
                                 const FeatureMatrix& test_f, const std::vector<int>& test_y,
                                 const ProbeConfig& cfg, int repeats = 6) {
  if (repeats < 1) throw DegenerateInput("repeats must be positive");
  RepeatStats st;
  for (int r = 0; r < repeats; ++r) {
    ProbeConfig c = cfg;
    c.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(r));
    ProbeModel probe = train_probe(train_f, train_y, c);
    st.accuracies.push_back(evaluate(probe, test_f, test_y));
  }
  st.mean = std::accumulate(st.accuracies.begin(), st.accuracies.end(), 0.0) /
            static_cast<double>(repeats);
  double sq = 0;
  for (double a : st.accuracies) sq += (a - st.mean) * (a - st.mean);
  st.stddev = repeats > 1 ? std::sqrt(sq / static_cast<double>(repeats - 1)) : 0.0;
  return st;
}

struct AblationRow {
  std::string name;
  int values_per_map = 0;
  std::size_t columns = 0;
  RepeatStats stats;
};

struct AblationReport {
  std::vector<AblationRow> rows;

  std::string to_csv() const {
    std::string out = "setting,values_per_map,columns,accuracy_mean,accuracy_std";
    const std::size_t reps = rows.empty() ? 0 : rows.front().stats.accuracies.size();
    for (std::size_t r = 0; r < reps; ++r) out += ",accuracy_run" + std::to_string(r);
    out += "\n";
    char buf[64];
    for (const AblationRow& r : rows) {
      out += r.name + "," + std::to_string(r.values_per_map) + "," +
             std::to_string(r.columns);
      std::snprintf(buf, sizeof(buf), ",%.6f,%.6f", r.stats.mean, r.stats.stddev);
      out += buf;
      for (double a : r.stats.accuracies) {
        std::snprintf(buf, sizeof(buf), ",%.6f", a);
        out += buf;
      }
      out += "\n";
    }
    return out;
  }
};

// Each level alone, each leave-one-level-out complement, and the whole set:
// 2n+1 rows for an n-level model.
template <typename T>
AblationReport level_ablation(LpaeModel<T>& model, const Dataset& train_ds,
                              const Dataset& test_ds, int values_per_map,
                              const ProbeConfig& cfg, int repeats = 6) {
  if (!train_ds.labeled() || !test_ds.labeled())
    throw DegenerateInput("level ablation needs labeled data");
  FeatureMatrix train_f = extract_features(model, train_ds, values_per_map);
  FeatureMatrix test_f = extract_features(model, test_ds, values_per_map);

  AblationReport rep;
  auto run = [&](const std::string& name, const std::vector<int>& levels) {
    FeatureMatrix tr = train_f.select_levels(levels);
    FeatureMatrix te = test_f.select_levels(levels);
    AblationRow row;
    row.name = name;
    row.values_per_map = values_per_map;
    row.columns = tr.cols();
    row.stats = probe_repeats(tr, train_ds.labels, te, test_ds.labels, cfg, repeats);
    rep.rows.push_back(std::move(row));
  };

  const int n = model.scales();
  for (int k = 0; k < n; ++k) run("level" + std::to_string(k), {k});
  for (int k = 0; k < n; ++k) {
    std::vector<int> rest;
    for (int j = 0; j < n; ++j)
      if (j != k) rest.push_back(j);
    run("without_level" + std::to_string(k), rest);
  }
  std::vector<int> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), 0);
  run("all_levels", all);
  return rep;
}

// One evaluation per pooled-value setting.
template <typename T, typename M>
AblationReport dim_ablation(M& model, const Dataset& train_ds, const Dataset& test_ds,
                            const std::vector<int>& values_list, const ProbeConfig& cfg,
                            int repeats = 6) {
  if (!train_ds.labeled() || !test_ds.labeled())
    throw DegenerateInput("dim ablation needs labeled data");
  AblationReport rep;
  for (int v : values_list) {
    FeatureMatrix train_f = extract_features(model, train_ds, v);
    FeatureMatrix test_f = extract_features(model, test_ds, v);
    AblationRow row;
    row.name = "values" + std::to_string(v);
    row.values_per_map = v;
    row.columns = train_f.cols();
    row.stats = probe_repeats(train_f, train_ds.labels, test_f, test_ds.labels, cfg, repeats);
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

inline void put_features(Archive& a, const FeatureMatrix& fm,
                         const std::string& prefix = "features") {
  a.put(prefix + ".values", fm.values);
  Tensor<std::int64_t> cm(Shape{fm.column_map.size(), 4});
  for (std::size_t i = 0; i < fm.column_map.size(); ++i) {
    cm[i * 4 + 0] = fm.column_map[i].level;
    cm[i * 4 + 1] = fm.column_map[i].layer;
    cm[i * 4 + 2] = fm.column_map[i].channel;
    cm[i * 4 + 3] = fm.column_map[i].cell;
  }
  a.put(prefix + ".column_map", cm);
}

inline FeatureMatrix get_features(const Archive& a, const std::string& prefix = "features") {
  FeatureMatrix fm;
  fm.values = a.get<float>(prefix + ".values");
  Tensor<std::int64_t> cm = a.get<std::int64_t>(prefix + ".column_map");
  fm.column_map.resize(cm.shape()[0]);
  for (std::size_t i = 0; i < fm.column_map.size(); ++i)
    fm.column_map[i] = {static_cast<int>(cm[i * 4 + 0]), static_cast<int>(cm[i * 4 + 1]),
                        static_cast<int>(cm[i * 4 + 2]), static_cast<int>(cm[i * 4 + 3])};
  return fm;
}

}  // namespace lpae
