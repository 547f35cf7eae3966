#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lpae/common.hpp"

namespace lpae {

enum class ModelKind { lpae, dcae };

// One "K*K*M,S" entry: K x K kernel, M output maps, stride S.
struct LayerSpec {
  int kernel = 3;
  int maps = 0;
  int stride = 1;

  bool operator==(const LayerSpec&) const = default;
};

struct LevelSpec {
  int index = 0;
  std::vector<LayerSpec> encoder;
  std::vector<LayerSpec> decoder;
};

// Parsed architecture file. LPAE specs hold one LevelSpec per scale, index 0
// (finest) first; DCAE specs hold a single unindexed encoder/decoder pair.
struct ArchitectureSpec {
  ModelKind kind = ModelKind::lpae;
  std::vector<LevelSpec> levels;

  int scales() const { return static_cast<int>(levels.size()); }

  // Normalized text form, used for hashing and in error messages.
  std::string canonical() const {
    std::ostringstream out;
    auto emit = [&out](const std::vector<LayerSpec>& layers) {
      for (std::size_t i = 0; i < layers.size(); ++i) {
        if (i) out << "|";
        out << layers[i].kernel << "*" << layers[i].kernel << "*" << layers[i].maps
            << "," << layers[i].stride;
      }
      out << "\n";
    };
    if (kind == ModelKind::lpae) {
      out << "scales: " << levels.size() << "\n";
      for (const LevelSpec& l : levels) {
        out << "level " << l.index << " encoder: ";
        emit(l.encoder);
        out << "level " << l.index << " decoder: ";
        emit(l.decoder);
      }
    } else {
      out << "encoder: ";
      emit(levels[0].encoder);
      out << "decoder: ";
      emit(levels[0].decoder);
    }
    return out.str();
  }

  // Content hash tying a checkpoint to (architecture, input size, BN on/off).
  std::uint64_t hash(std::size_t input_h, std::size_t input_w, bool use_bn) const {
    const std::string c = canonical();
    std::uint64_t h = fnv1a64(c.data(), c.size());
    const std::uint64_t dims[2] = {input_h, input_w};
    h = fnv1a64(dims, sizeof(dims), h);
    const std::uint8_t bn = use_bn ? 1 : 0;
    return fnv1a64(&bn, 1, h);
  }
};

namespace detail {

struct ArchCursor {
  const std::string& line;
  int line_no;
  std::size_t pos;  // 0-based offset into line

  [[noreturn]] void fail(const std::string& what) const {
    throw ArchError("line " + std::to_string(line_no) + ", column " +
                    std::to_string(pos + 1) + ": " + what);
  }

  void skip_ws() {
    while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t')) ++pos;
  }

  bool at_end() {
    skip_ws();
    return pos >= line.size();
  }

  int read_int(const char* what) {
    skip_ws();
    if (pos >= line.size() || !std::isdigit(static_cast<unsigned char>(line[pos])))
      fail(std::string("expected ") + what);
    long v = 0;
    while (pos < line.size() && std::isdigit(static_cast<unsigned char>(line[pos]))) {
      v = v * 10 + (line[pos] - '0');
      if (v > 1000000) fail(std::string(what) + " out of range");
      ++pos;
    }
    return static_cast<int>(v);
  }

  void expect(char c) {
    skip_ws();
    if (pos >= line.size() || line[pos] != c)
      fail(std::string("expected '") + c + "'");
    ++pos;
  }
};

inline std::vector<LayerSpec> parse_layer_list(const std::string& line, int line_no,
                                               std::size_t start) {
  ArchCursor cur{line, line_no, start};
  std::vector<LayerSpec> layers;
  while (!cur.at_end()) {
    if (!layers.empty() && (line[cur.pos] == '|' || line[cur.pos] == ',')) ++cur.pos;
    if (cur.at_end()) break;
    const std::size_t spec_pos = cur.pos;
    LayerSpec ls;
    const int k1 = cur.read_int("kernel size");
    cur.expect('*');
    const int k2 = cur.read_int("kernel size");
    cur.expect('*');
    ls.maps = cur.read_int("map count");
    cur.expect(',');
    ls.stride = cur.read_int("stride");
    cur.pos = spec_pos;  // report semantic errors at the start of the spec
    if (k1 != k2) cur.fail("kernel must be square, got " + std::to_string(k1) + "*" +
                           std::to_string(k2));
    if (k1 != 3 && k1 != 5) cur.fail("kernel size must be 3 or 5, got " + std::to_string(k1));
    if (ls.stride != 1 && ls.stride != 2)
      cur.fail("stride must be 1 or 2, got " + std::to_string(ls.stride));
    if (ls.maps < 1) cur.fail("map count must be positive");
    ls.kernel = k1;
    cur.pos = spec_pos;
    cur.read_int("");
    cur.expect('*');
    cur.read_int("");
    cur.expect('*');
    cur.read_int("");
    cur.expect(',');
    cur.read_int("");
    layers.push_back(ls);
  }
  return layers;
}

}  // namespace detail

// Parses the line-oriented architecture grammar:
//   scales: N
//   level K encoder: K*K*M,S | K*K*M,S | ...
//   level K decoder: ...
// DCAE files use bare "encoder:" / "decoder:" lines and no scales header.
// '#' starts a comment. Layer separators may be '|' or ','.
inline ArchitectureSpec parse_arch(const std::string& text) {
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  int scales = -1;
  std::map<int, LevelSpec> levels;
  std::vector<LayerSpec> flat_enc, flat_dec;
  bool has_flat_enc = false, has_flat_dec = false;

  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw;
    if (const std::size_t hash = line.find('#'); hash != std::string::npos)
      line.resize(hash);
    detail::ArchCursor cur{line, line_no, 0};
    if (cur.at_end()) continue;

    if (line.compare(cur.pos, 7, "scales:") == 0) {
      cur.pos += 7;
      if (scales != -1) cur.fail("duplicate scales line");
      scales = cur.read_int("scale count");
      if (scales < 2) cur.fail("need at least 2 scales");
      if (!cur.at_end()) cur.fail("trailing text after scale count");
    } else if (line.compare(cur.pos, 5, "level") == 0) {
      cur.pos += 5;
      const int idx = cur.read_int("level index");
      cur.skip_ws();
      bool enc;
      if (line.compare(cur.pos, 8, "encoder:") == 0) {
        enc = true;
        cur.pos += 8;
      } else if (line.compare(cur.pos, 8, "decoder:") == 0) {
        enc = false;
        cur.pos += 8;
      } else {
        cur.fail("expected 'encoder:' or 'decoder:'");
      }
      auto layers = detail::parse_layer_list(line, line_no, cur.pos);
      LevelSpec& ls = levels[idx];
      ls.index = idx;
      auto& dst = enc ? ls.encoder : ls.decoder;
      if (!dst.empty()) cur.fail("duplicate definition for this level side");
      if (layers.empty()) cur.fail("empty layer list");
      dst = std::move(layers);
    } else if (line.compare(cur.pos, 8, "encoder:") == 0) {
      cur.pos += 8;
      if (has_flat_enc) cur.fail("duplicate encoder line");
      flat_enc = detail::parse_layer_list(line, line_no, cur.pos);
      if (flat_enc.empty()) cur.fail("empty layer list");
      has_flat_enc = true;
    } else if (line.compare(cur.pos, 8, "decoder:") == 0) {
      cur.pos += 8;
      if (has_flat_dec) cur.fail("duplicate decoder line");
      flat_dec = detail::parse_layer_list(line, line_no, cur.pos);
      if (flat_dec.empty()) cur.fail("empty layer list");
      has_flat_dec = true;
    } else {
      cur.fail("unrecognized line");
    }
  }

  ArchitectureSpec spec;
  if (scales != -1 || !levels.empty()) {
    if (has_flat_enc || has_flat_dec)
      throw ArchError("cannot mix level lines with bare encoder/decoder lines");
    if (scales == -1) throw ArchError("missing 'scales:' line");
    for (int i = 0; i < scales; ++i) {
      auto it = levels.find(i);
      if (it == levels.end())
        throw ArchError("missing definition for level " + std::to_string(i));
      if (it->second.encoder.empty())
        throw ArchError("level " + std::to_string(i) + " has no encoder");
      if (it->second.decoder.empty())
        throw ArchError("level " + std::to_string(i) + " has no decoder");
      spec.levels.push_back(it->second);
    }
    if (static_cast<int>(levels.size()) != scales)
      throw ArchError("level indices exceed declared scale count");
    spec.kind = ModelKind::lpae;
  } else {
    if (!has_flat_enc || !has_flat_dec)
      throw ArchError("architecture needs both encoder and decoder");
    spec.kind = ModelKind::dcae;
    LevelSpec ls;
    ls.index = 0;
    ls.encoder = std::move(flat_enc);
    ls.decoder = std::move(flat_dec);
    spec.levels.push_back(std::move(ls));
  }

  for (const LevelSpec& l : spec.levels)
    if (l.decoder.back().maps != 3)
      throw ArchError("final decoder layer of " +
                      (spec.kind == ModelKind::lpae
                           ? "level " + std::to_string(l.index)
                           : std::string("the network")) +
                      " must produce 3 maps, got " + std::to_string(l.decoder.back().maps));
  return spec;
}

inline ArchitectureSpec load_arch(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open architecture file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_arch(buf.str());
  } catch (const ArchError& e) {
    throw ArchError(path + ": " + e.what());
  }
}

// Total encoder maps across all levels: the maps available to the feature
// extractor.
inline int count_feature_maps(const ArchitectureSpec& spec) {
  int total = 0;
  for (const LevelSpec& l : spec.levels)
    for (const LayerSpec& ls : l.encoder) total += ls.maps;
  return total;
}

// The shallower architecture obtained by dropping the coarsest level, e.g.
// 4-scales minus its level 3 gives the 3-scales network.
inline ArchitectureSpec drop_coarsest_level(const ArchitectureSpec& spec) {
  if (spec.kind != ModelKind::lpae || spec.scales() < 3)
    throw ArchError("drop_coarsest_level: need an LPAE spec with at least 3 scales");
  ArchitectureSpec out;
  out.kind = ModelKind::lpae;
  out.levels.assign(spec.levels.begin(), spec.levels.end() - 1);
  return out;
}

}  // namespace lpae
