#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "lpae/image_io.hpp"
#include "lpae/rng.hpp"
#include "lpae/tensor.hpp"

namespace lpae {

// In-memory dataset: square RGB images in [0,1] plus optional labels.
struct Dataset {
  Tensor<float> images;     // (N, 3, S, S)
  std::vector<int> labels;  // empty when unlabeled
  std::string split;

  std::size_t size() const { return images.shape().rank() ? images.shape()[0] : 0; }
  std::size_t side() const { return images.shape()[2]; }
  bool labeled() const { return !labels.empty(); }
};

namespace detail {

constexpr std::size_t cifar_record = 1 + 3 * 32 * 32;

inline void append_cifar_file(const std::string& path, std::vector<std::uint8_t>& raw) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  if (bytes == 0 || bytes % cifar_record != 0)
    throw FormatError(path + ": size " + std::to_string(bytes) +
                      " is not a multiple of the 3073-byte record");
  const std::size_t off = raw.size();
  raw.resize(off + bytes);
  in.read(reinterpret_cast<char*>(raw.data() + off), static_cast<std::streamsize>(bytes));
  if (!in) throw IoError("read failed: " + path);
}

}  // namespace detail

// Parses the binary batch format: per record 1 label byte then 3072 pixel
// bytes (channel-planar R,G,B, each 32x32 row-major), scaled to [0,1].
// `dir` may also be a single .bin file. max_images 0 loads everything.
inline Dataset load_cifar10(const std::string& dir, std::size_t max_images = 0) {
  namespace fs = std::filesystem;
  std::vector<std::uint8_t> raw;
  if (fs::is_regular_file(dir)) {
    detail::append_cifar_file(dir, raw);
  } else if (fs::is_directory(dir)) {
    std::vector<std::string> files;
    for (const auto& ent : fs::directory_iterator(dir))
      if (ent.is_regular_file() && ent.path().extension() == ".bin")
        files.push_back(ent.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoError("no .bin batch files in " + dir);
    for (const std::string& f : files) detail::append_cifar_file(f, raw);
  } else {
    throw IoError("no such file or directory: " + dir);
  }

  std::size_t n = raw.size() / detail::cifar_record;
  if (max_images && max_images < n) n = max_images;

  Dataset ds;
  ds.split = "cifar10";
  ds.images = Tensor<float>(Shape{n, 3, 32, 32});
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = raw.data() + i * detail::cifar_record;
    if (rec[0] > 9)
      throw FormatError("record " + std::to_string(i) + ": label byte " +
                        std::to_string(rec[0]) + " out of range");
    ds.labels[i] = rec[0];
    float* dst = ds.images.data() + i * 3 * 32 * 32;
    for (std::size_t p = 0; p < 3 * 32 * 32; ++p)
      dst[p] = static_cast<float>(rec[1 + p]) / 255.0f;
  }
  return ds;
}

// Writes the same binary format (values quantized to bytes). Loading the
// result reproduces a byte-backed dataset exactly.
inline void save_cifar10(const std::string& path, const Dataset& ds) {
  if (ds.images.shape().rank() != 4 || ds.images.shape()[1] != 3 ||
      ds.images.shape()[2] != 32 || ds.images.shape()[3] != 32)
    throw ShapeError("save_cifar10: dataset must be (N,3,32,32)");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  const std::size_t n = ds.size();
  std::vector<std::uint8_t> rec(detail::cifar_record);
  for (std::size_t i = 0; i < n; ++i) {
    rec[0] = static_cast<std::uint8_t>(ds.labeled() ? ds.labels[i] : 0);
    const float* src = ds.images.data() + i * 3 * 32 * 32;
    for (std::size_t p = 0; p < 3 * 32 * 32; ++p) {
      float v = std::clamp(src[p], 0.0f, 1.0f);
      rec[1 + p] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    out.write(reinterpret_cast<const char*>(rec.data()),
              static_cast<std::streamsize>(rec.size()));
  }
  if (!out) throw IoError("write failed: " + path);
}

// Loads root/<class>/<image> with sorted class directories as label ids.
// Grayscale images are replicated to 3 channels; all images must share one
// square size.
inline Dataset load_image_folder(const std::string& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IoError("no such directory: " + root);
  std::vector<std::string> classes;
  for (const auto& ent : fs::directory_iterator(root))
    if (ent.is_directory()) classes.push_back(ent.path().filename().string());
  std::sort(classes.begin(), classes.end());
  if (classes.empty()) throw IoError("no class subdirectories in " + root);

  std::vector<std::pair<std::string, int>> files;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::vector<std::string> names;
    for (const auto& ent : fs::directory_iterator(fs::path(root) / classes[c]))
      if (ent.is_regular_file()) names.push_back(ent.path().string());
    std::sort(names.begin(), names.end());
    for (std::string& nm : names) files.emplace_back(std::move(nm), static_cast<int>(c));
  }
  if (files.empty()) throw IoError("no image files under " + root);

  Dataset ds;
  ds.split = "folder";
  for (std::size_t i = 0; i < files.size(); ++i) {
    Tensor<float> img = load_image(files[i].first);
    const std::size_t h = img.shape()[1], w = img.shape()[2];
    if (h != w)
      throw FormatError(files[i].first + ": image must be square, got " +
                        std::to_string(h) + "x" + std::to_string(w));
    if (i == 0) {
      ds.images = Tensor<float>(Shape{files.size(), 3, h, w});
    } else if (h != ds.side()) {
      throw FormatError(files[i].first + ": size " + std::to_string(h) +
                        " differs from first image " + std::to_string(ds.side()));
    }
    float* dst = ds.images.data() + i * 3 * h * w;
    if (img.shape()[0] == 3) {
      std::copy_n(img.data(), 3 * h * w, dst);
    } else {
      for (std::size_t c = 0; c < 3; ++c) std::copy_n(img.data(), h * w, dst + c * h * w);
    }
    ds.labels.push_back(files[i].second);
  }
  return ds;
}

enum class SyntheticKind { gaussian_blobs, stripes_circles, filtered_noise };

inline SyntheticKind synthetic_kind_from(const std::string& name) {
  if (name == "gaussian-blobs") return SyntheticKind::gaussian_blobs;
  if (name == "stripes-circles") return SyntheticKind::stripes_circles;
  if (name == "filtered-noise") return SyntheticKind::filtered_noise;
  throw DegenerateInput("unknown synthetic dataset kind '" + name + "'");
}

namespace detail {

inline void draw_blobs(float* img, std::size_t s, Pcg32& rng) {
  const int blobs = 2 + static_cast<int>(rng.next_below(3));
  std::fill_n(img, 3 * s * s, 0.1f);
  for (int bi = 0; bi < blobs; ++bi) {
    const double cx = rng.next_double() * static_cast<double>(s);
    const double cy = rng.next_double() * static_cast<double>(s);
    const double sigma = (0.08 + 0.17 * rng.next_double()) * static_cast<double>(s);
    double amp[3];
    for (double& a : amp) a = 0.3 + 0.7 * rng.next_double();
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x) {
        const double d2 = (static_cast<double>(x) - cx) * (static_cast<double>(x) - cx) +
                          (static_cast<double>(y) - cy) * (static_cast<double>(y) - cy);
        const double g = std::exp(-d2 / (2 * sigma * sigma));
        for (std::size_t c = 0; c < 3; ++c)
          img[c * s * s + y * s + x] += static_cast<float>(amp[c] * g);
      }
  }
  for (std::size_t i = 0; i < 3 * s * s; ++i) img[i] = std::clamp(img[i], 0.0f, 1.0f);
}

// Class 0: straight sinusoidal gratings at a random orientation.
// Class 1: concentric rings around a random center, same frequency band.
// Locally the two look alike (oriented edges), so raw pixels separate them
// poorly, while curvature-sensitive learned features do much better.
inline void draw_stripes_or_circles(float* img, std::size_t s, int label, Pcg32& rng) {
  const double freq = 2.5 + 2.5 * rng.next_double();  // cycles per image
  const double phase = rng.next_double() * 6.283185307179586;
  const double theta = rng.next_double() * 3.141592653589793;
  const double cx = (0.25 + 0.5 * rng.next_double()) * static_cast<double>(s);
  const double cy = (0.25 + 0.5 * rng.next_double()) * static_cast<double>(s);
  const double two_pi = 6.283185307179586;
  double amp[3];
  for (double& a : amp) a = 0.3 + 0.1 * rng.next_double();
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) {
      double t;
      if (label == 0) {
        t = (static_cast<double>(x) * std::cos(theta) +
             static_cast<double>(y) * std::sin(theta)) /
            static_cast<double>(s);
      } else {
        const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
        t = std::sqrt(dx * dx + dy * dy) / static_cast<double>(s);
      }
      const double v = std::sin(two_pi * freq * t + phase);
      for (std::size_t c = 0; c < 3; ++c) {
        const double noisy = 0.5 + amp[c] * v + 0.02 * rng.normal();
        img[c * s * s + y * s + x] = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
      }
    }
}

// White noise blurred by a separable Gaussian: cheap stand-in with a natural
// low-frequency bias, used for codec training.
inline void draw_filtered_noise(float* img, std::size_t s, Pcg32& rng) {
  const double sigma = 0.6 + 1.4 * rng.next_double();
  const int r = static_cast<int>(std::ceil(2.5 * sigma));
  std::vector<double> taps(static_cast<std::size_t>(2 * r + 1));
  double tsum = 0;
  for (int i = -r; i <= r; ++i) {
    taps[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
    tsum += taps[static_cast<std::size_t>(i + r)];
  }
  for (double& t : taps) t /= tsum;

  std::vector<double> base(s * s), tmp(s * s), chan(s * s);
  for (double& v : base) v = rng.normal();
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < s * s; ++i) chan[i] = 0.7 * base[i] + 0.3 * rng.normal();
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x) {
        double acc = 0;
        for (int i = -r; i <= r; ++i) {
          long xi = static_cast<long>(x) + i;
          xi = std::clamp<long>(xi, 0, static_cast<long>(s) - 1);
          acc += taps[static_cast<std::size_t>(i + r)] * chan[y * s + static_cast<std::size_t>(xi)];
        }
        tmp[y * s + x] = acc;
      }
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x) {
        double acc = 0;
        for (int i = -r; i <= r; ++i) {
          long yi = static_cast<long>(y) + i;
          yi = std::clamp<long>(yi, 0, static_cast<long>(s) - 1);
          acc += taps[static_cast<std::size_t>(i + r)] * tmp[static_cast<std::size_t>(yi) * s + x];
        }
        // blurring shrinks the variance; rescale into a visible range
        img[c * s * s + y * s + x] =
            static_cast<float>(std::clamp(0.5 + acc * (0.25 * (1.0 + sigma)), 0.0, 1.0));
      }
  }
}

}  // namespace detail

// Deterministic synthetic corpora. stripes_circles is 2-class and labeled
// (even indices class 0, odd class 1); the other kinds are unlabeled.
inline Dataset synthetic_dataset(SyntheticKind kind, std::size_t n, std::size_t size,
                                 std::uint64_t seed) {
  if (n == 0) throw DegenerateInput("synthetic_dataset: n must be positive");
  if (size < 8) throw DegenerateInput("synthetic_dataset: size must be at least 8");
  Dataset ds;
  ds.images = Tensor<float>(Shape{n, 3, size, size});
  switch (kind) {
    case SyntheticKind::gaussian_blobs: ds.split = "gaussian-blobs"; break;
    case SyntheticKind::stripes_circles: ds.split = "stripes-circles"; break;
    case SyntheticKind::filtered_noise: ds.split = "filtered-noise"; break;
  }
  for (std::size_t i = 0; i < n; ++i) {
    Pcg32 rng(mix_seed(seed, i));  // per-image stream: content independent of n
    float* img = ds.images.data() + i * 3 * size * size;
    switch (kind) {
      case SyntheticKind::gaussian_blobs:
        detail::draw_blobs(img, size, rng);
        break;
      case SyntheticKind::stripes_circles: {
        const int label = static_cast<int>(i % 2);
        detail::draw_stripes_or_circles(img, size, label, rng);
        ds.labels.push_back(label);
        break;
      }
      case SyntheticKind::filtered_noise:
        detail::draw_filtered_noise(img, size, rng);
        break;
    }
  }
  return ds;
}

// Shuffled index batches for one epoch; the trailing short batch is dropped.
// The shuffle seed folds in the epoch, so different epochs use different
// orders while staying reproducible.
inline std::vector<std::vector<std::size_t>> batch_indices(std::size_t n,
                                                           std::size_t batch_size,
                                                           std::uint64_t seed,
                                                           std::uint64_t epoch) {
  if (batch_size == 0 || batch_size > n)
    throw DegenerateInput("batch size " + std::to_string(batch_size) +
                          " invalid for dataset of " + std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Pcg32 rng(mix_seed(seed, epoch));
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t at = 0; at + batch_size <= n; at += batch_size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                     order.begin() + static_cast<std::ptrdiff_t>(at + batch_size));
  return out;
}

struct Batch {
  Tensor<float> images;
  std::vector<int> labels;
};

inline Batch gather(const Dataset& ds, const std::vector<std::size_t>& idx) {
  const std::size_t s = ds.side();
  Batch b;
  b.images = Tensor<float>(Shape{idx.size(), 3, s, s});
  const std::size_t stride = 3 * s * s;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= ds.size()) throw ShapeError("gather: index out of range");
    std::copy_n(ds.images.data() + idx[i] * stride, stride, b.images.data() + i * stride);
    if (ds.labeled()) b.labels.push_back(ds.labels[idx[i]]);
  }
  return b;
}

inline std::vector<Batch> batches(const Dataset& ds, std::size_t batch_size,
                                  std::uint64_t seed, std::uint64_t epoch) {
  std::vector<Batch> out;
  for (const auto& idx : batch_indices(ds.size(), batch_size, seed, epoch))
    out.push_back(gather(ds, idx));
  return out;
}

}  // namespace lpae
