#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <ctime>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lpae/common.hpp"

namespace lpae {

namespace detail {

// Plain SHA-1, enough for content addressing (not used for security).
class Sha1 {
 public:
  void update(const unsigned char* data, std::size_t len) {
    total_ += len;
    while (len > 0) {
      const std::size_t take = std::min<std::size_t>(64 - fill_, len);
      std::memcpy(buf_.data() + fill_, data, take);
      fill_ += take;
      data += take;
      len -= take;
      if (fill_ == 64) {
        block();
        fill_ = 0;
      }
    }
  }

  std::string hex_digest() {
    const std::uint64_t bits = total_ * 8;
    unsigned char pad = 0x80;
    update(&pad, 1);
    unsigned char zero = 0;
    while (fill_ != 56) update(&zero, 1);
    unsigned char len[8];
    for (int i = 0; i < 8; ++i) len[i] = static_cast<unsigned char>(bits >> (56 - 8 * i));
    update(len, 8);
    std::string out;
    for (std::uint32_t word : h_)
      for (int i = 3; i >= 0; --i) {
        static const char* digits = "0123456789abcdef";
        out += digits[(word >> (8 * i + 4)) & 0xf];
        out += digits[(word >> (8 * i)) & 0xf];
      }
    return out;
  }

 private:
  void block() {
    std::uint32_t w[80];
    for (int i = 0; i < 16; ++i)
      w[i] = (std::uint32_t(buf_[4 * i]) << 24) | (std::uint32_t(buf_[4 * i + 1]) << 16) |
             (std::uint32_t(buf_[4 * i + 2]) << 8) | std::uint32_t(buf_[4 * i + 3]);
    for (int i = 16; i < 80; ++i) {
      const std::uint32_t v = w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16];
      w[i] = (v << 1) | (v >> 31);
    }
    std::uint32_t a = h_[0], b = h_[1], c = h_[2], d = h_[3], e = h_[4];
    for (int i = 0; i < 80; ++i) {
      std::uint32_t f, k;
      if (i < 20) {
        f = (b & c) | (~b & d);
        k = 0x5a827999u;
      } else if (i < 40) {
        f = b ^ c ^ d;
        k = 0x6ed9eba1u;
      } else if (i < 60) {
        f = (b & c) | (b & d) | (c & d);
        k = 0x8f1bbcdcu;
      } else {
        f = b ^ c ^ d;
        k = 0xca62c1d6u;
      }
      const std::uint32_t t = ((a << 5) | (a >> 27)) + f + e + k + w[i];
      e = d;
      d = c;
      c = (b << 30) | (b >> 2);
      b = a;
      a = t;
    }
    h_[0] += a;
    h_[1] += b;
    h_[2] += c;
    h_[3] += d;
    h_[4] += e;
  }

  std::array<std::uint32_t, 5> h_ = {0x67452301u, 0xefcdab89u, 0x98badcfeu, 0x10325476u,
                                     0xc3d2e1f0u};
  std::array<unsigned char, 64> buf_ = {};
  std::size_t fill_ = 0;
  std::uint64_t total_ = 0;
};

}  // namespace detail

// SHA-1 of "blob <size>\0<content>", the same id `git hash-object` prints.
inline std::string git_blob_hash(const std::string& content) {
  detail::Sha1 h;
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  h.update(reinterpret_cast<const unsigned char*>(header.data()), header.size());
  h.update(reinterpret_cast<const unsigned char*>(content.data()), content.size());
  return h.hex_digest();
}

inline std::string git_blob_hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return git_blob_hash(ss.str());
}

struct ManifestInput {
  std::string path;
  std::string hash;
};

// Record of one tool invocation: enough to audit what ran and to replay it.
struct RunManifest {
  std::string command;                  // subcommand name
  std::vector<std::string> arguments;   // argv as given
  nlohmann::json config;                // resolved option values
  std::vector<ManifestInput> inputs;    // content-hashed input files
  std::vector<std::string> outputs;     // files the run wrote
  std::string started;                  // UTC, ISO 8601
  double duration_seconds = 0;
  bool converged = true;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["command"] = command;
    j["arguments"] = arguments;
    j["config"] = config;
    j["inputs"] = nlohmann::json::array();
    for (const ManifestInput& in : inputs)
      j["inputs"].push_back({{"path", in.path}, {"hash", in.hash}});
    j["outputs"] = outputs;
    j["started"] = started;
    j["duration_seconds"] = duration_seconds;
    j["converged"] = converged;
    return j;
  }

  static RunManifest from_json(const nlohmann::json& j) {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.arguments = j.at("arguments").get<std::vector<std::string>>();
    m.config = j.at("config");
    for (const nlohmann::json& in : j.at("inputs"))
      m.inputs.push_back({in.at("path").get<std::string>(), in.at("hash").get<std::string>()});
    m.outputs = j.at("outputs").get<std::vector<std::string>>();
    m.started = j.value("started", "");
    m.duration_seconds = j.value("duration_seconds", 0.0);
    m.converged = j.value("converged", true);
    return m;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << to_json().dump(2) << "\n";
  }

  static RunManifest load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ": " + e.what());
    }
    try {
      return from_json(j);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ": " + e.what());
    }
  }

  void add_input(const std::string& path) { inputs.push_back({path, git_blob_hash_file(path)}); }
};

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Scoped timer that fills in the timing fields of a manifest.
class ManifestTimer {
 public:
  explicit ManifestTimer(RunManifest& m) : m_(m), t0_(std::chrono::steady_clock::now()) {
    m_.started = utc_timestamp();
  }
  void stop() {
    m_.duration_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  RunManifest& m_;
  std::chrono::steady_clock::time_point t0_;
};

}  // namespace lpae
