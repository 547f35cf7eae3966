#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>

namespace lpae {

// Error taxonomy. Everything the library throws derives from Error so
// callers can catch one type at the CLI boundary.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct DegenerateInput : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct ArchError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

enum class Mode { train, eval };

// Dense shape, rank 0..4. Axis meaning by convention:
// rank 4 = (batch, channels, height, width), rank 2 = (batch, features),
// rank 3 = (channels, height, width) for single images.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims) {
    if (dims.size() > 4) throw ShapeError("shape rank > 4");
    for (std::size_t d : dims) d_[static_cast<std::size_t>(rank_++)] = d;
  }

  int rank() const { return rank_; }
  std::size_t operator[](int i) const { return d_[static_cast<std::size_t>(i)]; }
  std::size_t& operator[](int i) { return d_[static_cast<std::size_t>(i)]; }

  std::size_t numel() const {
    std::size_t n = 1;
    for (int i = 0; i < rank_; ++i) n *= d_[static_cast<std::size_t>(i)];
    return n;
  }

  bool operator==(const Shape& o) const {
    if (rank_ != o.rank_) return false;
    for (int i = 0; i < rank_; ++i)
      if ((*this)[i] != o[i]) return false;
    return true;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    std::string s = "(";
    for (int i = 0; i < rank_; ++i) {
      if (i) s += ", ";
      s += std::to_string((*this)[i]);
    }
    return s + ")";
  }

 private:
  std::array<std::size_t, 4> d_{};
  int rank_ = 0;
};

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

// FNV-1a, used for architecture hashes.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

// Global switch for post-op NaN/Inf scans. On by default; the gradient
// checker leaves it on, hot loops may disable it locally.
inline bool& finite_checks() {
  static bool enabled = true;
  return enabled;
}

}  // namespace lpae
