#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "lpae/tensor.hpp"

namespace lpae {

// Named-array container behind checkpoints, feature matrices and ZCA stats.
// On disk: magic "LPAE", version u32, architecture hash u64, array count u32,
// then per array: name length u32, name bytes, dtype u8, rank u32, dims u64[],
// raw little-endian values. Entry order is preserved, so save -> load -> save
// reproduces the file byte for byte.
class Archive {
 public:
  static constexpr std::uint32_t version = 1;

  std::uint64_t arch_hash = 0;

  template <typename T>
  void put(const std::string& name, const Tensor<T>& t) {
    Entry e;
    e.name = name;
    e.dtype = dtype_of<T>();
    for (int i = 0; i < t.shape().rank(); ++i)
      e.dims.push_back(static_cast<std::uint64_t>(t.shape()[i]));
    e.raw.resize(t.size() * sizeof(T));
    for (std::size_t i = 0; i < t.size(); ++i) encode_le(t[i], e.raw.data() + i * sizeof(T));
    insert(std::move(e));
  }

  void put_u64(const std::string& name, std::uint64_t v) {
    Tensor<std::uint64_t> t(Shape{1});
    t[0] = v;
    put(name, t);
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return entries_.size(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const Entry& e : entries_) out.push_back(e.name);
    return out;
  }

  template <typename T>
  Tensor<T> get(const std::string& name) const {
    const Entry& e = find(name);
    if (e.dtype != dtype_of<T>())
      throw FormatError("array '" + name + "' has dtype tag " + std::to_string(e.dtype) +
                        ", not the requested type");
    Shape s = shape_of(e);
    Tensor<T> t(s);
    if (e.raw.size() != t.size() * sizeof(T))
      throw FormatError("array '" + name + "' payload size mismatch");
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = decode_le<T>(e.raw.data() + i * sizeof(T));
    return t;
  }

  std::uint64_t get_u64(const std::string& name) const {
    Tensor<std::uint64_t> t = get<std::uint64_t>(name);
    if (t.size() != 1) throw FormatError("array '" + name + "' is not a scalar");
    return t[0];
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out.write("LPAE", 4);
    write_u32(out, version);
    write_u64(out, arch_hash);
    write_u32(out, static_cast<std::uint32_t>(entries_.size()));
    for (const Entry& e : entries_) {
      write_u32(out, static_cast<std::uint32_t>(e.name.size()));
      out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      out.put(static_cast<char>(e.dtype));
      write_u32(out, static_cast<std::uint32_t>(e.dims.size()));
      for (std::uint64_t d : e.dims) write_u64(out, d);
      out.write(reinterpret_cast<const char*>(e.raw.data()),
                static_cast<std::streamsize>(e.raw.size()));
    }
    if (!out) throw IoError("write failed: " + path);
  }

  static Archive load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "LPAE", 4) != 0)
      throw FormatError(path + ": not a checkpoint archive (bad magic)");
    const std::uint32_t ver = read_u32(in, path);
    if (ver != version)
      throw FormatError(path + ": format version " + std::to_string(ver) +
                        ", expected " + std::to_string(version));
    Archive a;
    a.arch_hash = read_u64(in, path);
    const std::uint32_t count = read_u32(in, path);
    for (std::uint32_t i = 0; i < count; ++i) {
      Entry e;
      const std::uint32_t name_len = read_u32(in, path);
      if (name_len > 4096) throw FormatError(path + ": implausible name length");
      e.name.resize(name_len);
      in.read(e.name.data(), name_len);
      int dt = in.get();
      if (dt < 1 || dt > 5) throw FormatError(path + ": bad dtype tag");
      e.dtype = static_cast<std::uint8_t>(dt);
      const std::uint32_t rank = read_u32(in, path);
      if (rank > 4) throw FormatError(path + ": rank > 4");
      std::uint64_t n = 1;
      for (std::uint32_t r = 0; r < rank; ++r) {
        e.dims.push_back(read_u64(in, path));
        n *= e.dims.back();
      }
      static constexpr std::size_t elem_size[6] = {0, 4, 8, 8, 8, 1};
      e.raw.resize(n * elem_size[e.dtype]);
      in.read(reinterpret_cast<char*>(e.raw.data()),
              static_cast<std::streamsize>(e.raw.size()));
      if (!in) throw FormatError(path + ": truncated array '" + e.name + "'");
      a.insert(std::move(e));
    }
    return a;
  }

 private:
  struct Entry {
    std::string name;
    std::uint8_t dtype = 0;
    std::vector<std::uint64_t> dims;
    std::vector<unsigned char> raw;
  };

  template <typename T>
  static constexpr std::uint8_t dtype_of() {
    if constexpr (std::is_same_v<T, float>) return 1;
    else if constexpr (std::is_same_v<T, double>) return 2;
    else if constexpr (std::is_same_v<T, std::int64_t>) return 3;
    else if constexpr (std::is_same_v<T, std::uint64_t>) return 4;
    else if constexpr (std::is_same_v<T, std::uint8_t>) return 5;
    else static_assert(sizeof(T) == 0, "unsupported archive dtype");
  }

  static Shape shape_of(const Entry& e) {
    if (e.dims.empty()) return Shape{1};
    Shape s;
    switch (e.dims.size()) {
      case 1: s = Shape{e.dims[0]}; break;
      case 2: s = Shape{e.dims[0], e.dims[1]}; break;
      case 3: s = Shape{e.dims[0], e.dims[1], e.dims[2]}; break;
      case 4: s = Shape{e.dims[0], e.dims[1], e.dims[2], e.dims[3]}; break;
      default: throw FormatError("array '" + e.name + "' has rank > 4");
    }
    return s;
  }

  template <typename T>
  static void encode_le(T v, unsigned char* out) {
    if constexpr (std::is_same_v<T, float>) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      for (int i = 0; i < 4; ++i) out[i] = static_cast<unsigned char>(bits >> (8 * i));
    } else if constexpr (std::is_same_v<T, double>) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      for (int i = 0; i < 8; ++i) out[i] = static_cast<unsigned char>(bits >> (8 * i));
    } else if constexpr (sizeof(T) == 1) {
      out[0] = static_cast<unsigned char>(v);
    } else {
      auto bits = static_cast<std::uint64_t>(v);
      for (std::size_t i = 0; i < sizeof(T); ++i)
        out[i] = static_cast<unsigned char>(bits >> (8 * i));
    }
  }

  template <typename T>
  static T decode_le(const unsigned char* in) {
    if constexpr (std::is_same_v<T, float>) {
      std::uint32_t bits = 0;
      for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(in[i]) << (8 * i);
      float v;
      std::memcpy(&v, &bits, 4);
      return v;
    } else if constexpr (std::is_same_v<T, double>) {
      std::uint64_t bits = 0;
      for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(in[i]) << (8 * i);
      double v;
      std::memcpy(&v, &bits, 8);
      return v;
    } else if constexpr (sizeof(T) == 1) {
      return static_cast<T>(in[0]);
    } else {
      std::uint64_t bits = 0;
      for (std::size_t i = 0; i < sizeof(T); ++i)
        bits |= static_cast<std::uint64_t>(in[i]) << (8 * i);
      return static_cast<T>(bits);
    }
  }

  static void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 4);
  }
  static void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
  }
  static std::uint32_t read_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw FormatError(path + ": truncated header");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  static std::uint64_t read_u64(std::istream& in, const std::string& path) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw FormatError(path + ": truncated header");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }

  void insert(Entry e) {
    if (index_.count(e.name))
      throw FormatError("duplicate array name '" + e.name + "'");
    index_[e.name] = entries_.size();
    entries_.push_back(std::move(e));
  }

  const Entry& find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw FormatError("missing array '" + name + "'");
    return entries_[it->second];
  }

  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace lpae
