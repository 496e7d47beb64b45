#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <numeric>
#include <string>
#include <vector>

#include "gs2d/errors.hpp"
#include "gs2d/quantization.hpp"
#include "gs2d/splat.hpp"

namespace gs2d {

inline constexpr char kMagic[4] = {'G', 'S', '2', 'C'};
inline constexpr std::uint8_t kVersionQuantized = 1;
inline constexpr std::uint8_t kVersionFloatScene = 2;

/// Canonical compressed scene. Gaussians are stored in bitwidth-group order
/// (ascending hard bitwidth, original order preserved within a group), and
/// covariance ranges live per group and per component.
struct QuantizedScene {
  int width = 0;
  int height = 0;
  int position_bits = 12;
  float pos_min = -1.f;
  float pos_max = 1.f;

  struct Group {
    std::uint8_t bits = 6;
    std::uint32_t count = 0;
    // min(l1), min(l2), min(l3), max(l1), max(l2), max(l3)
    std::array<float, 6> range{};
  };
  std::vector<Group> groups;

  std::vector<std::uint16_t> pos_codes;      // 2N
  std::vector<std::uint32_t> cov_codes;      // 3N
  int rvq_stages = 0;
  int rvq_k = 0;
  std::vector<std::uint16_t> book_codes;     // stages * k * 3
  std::vector<std::uint32_t> color_indices;  // stage-major, stages * N

  std::size_t size() const { return pos_codes.size() / 2; }

  /// Dequantizes every parameter; the exact routine the decoder uses, so
  /// encoder-side reporting and decoded output agree bit for bit.
  GaussianScene dequantize() const {
    const std::size_t n = size();
    GaussianScene scene;
    scene.width = width;
    scene.height = height;
    scene.mu.resize(2 * n);
    scene.chol.resize(3 * n);
    scene.color.assign(3 * n, 0.f);

    const double pos_q = static_cast<double>((1u << position_bits) - 1);
    const double pos_s = (static_cast<double>(pos_max) - pos_min) / pos_q;
    for (std::size_t j = 0; j < 2 * n; ++j)
      scene.mu[j] =
          static_cast<float>(pos_s * pos_codes[j] + static_cast<double>(pos_min));

    std::size_t i = 0;
    for (const Group& g : groups) {
      const double q = static_cast<double>((1u << g.bits) - 1);
      for (std::uint32_t m = 0; m < g.count; ++m, ++i) {
        for (int c = 0; c < 3; ++c) {
          const double lo = g.range[c], hi = g.range[3 + c];
          const double s = (hi - lo) / q;
          scene.chol[3 * i + c] = static_cast<float>(
              s > 0.0 ? s * cov_codes[3 * i + c] + lo : lo);
        }
      }
    }

    for (int stage = 0; stage < rvq_stages; ++stage)
      for (std::size_t j = 0; j < n; ++j) {
        const std::uint32_t idx = color_indices[static_cast<std::size_t>(stage) * n + j];
        for (int c = 0; c < 3; ++c)
          scene.color[3 * j + c] +=
              book_decode(book_codes[(static_cast<std::size_t>(stage) * rvq_k + idx) * 3 + c]);
      }
    return scene;
  }
};

/// Groups Gaussians by hard bitwidth and re-derives covariance codes against
/// per-group per-component ranges fitted to the dequantized values. Position
/// codes and color indices carry over (their quantizers are already shared).
inline QuantizedScene canonicalize(const QuantizerState& st,
                                   const QuantizeResult& qr, int width,
                                   int height) {
  const std::size_t n = qr.pos_codes.size() / 2;
  QuantizedScene out;
  out.width = width;
  out.height = height;
  out.position_bits = st.cfg.position_bits;
  out.rvq_stages = st.book.stages;
  out.rvq_k = st.book.k;

  out.book_codes.resize(st.book.entries.size());
  for (std::size_t e = 0; e < st.book.entries.size(); ++e)
    out.book_codes[e] = book_code(st.book.entries[e]);

  // Stable order: ascending hard bitwidth, original index within.
  std::vector<std::uint32_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0u);
  std::stable_sort(perm.begin(), perm.end(),
                   [&](std::uint32_t a, std::uint32_t b) {
                     return hard_bitwidth(st.bits[a]) < hard_bitwidth(st.bits[b]);
                   });

  out.pos_codes.resize(2 * n);
  out.cov_codes.resize(3 * n);
  out.color_indices.resize(static_cast<std::size_t>(st.book.stages) * n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint32_t i = perm[r];
    out.pos_codes[2 * r] = qr.pos_codes[2 * i];
    out.pos_codes[2 * r + 1] = qr.pos_codes[2 * i + 1];
    for (int stage = 0; stage < st.book.stages; ++stage)
      out.color_indices[static_cast<std::size_t>(stage) * n + r] =
          qr.color_indices[static_cast<std::size_t>(stage) * n + i];
  }

  std::size_t r = 0;
  while (r < n) {
    const int bits = hard_bitwidth(st.bits[perm[r]]);
    std::size_t r_end = r;
    while (r_end < n && hard_bitwidth(st.bits[perm[r_end]]) == bits) ++r_end;

    QuantizedScene::Group grp;
    grp.bits = static_cast<std::uint8_t>(bits);
    grp.count = static_cast<std::uint32_t>(r_end - r);
    for (int c = 0; c < 3; ++c) {
      float lo = qr.dequantized.chol[3 * perm[r] + c];
      float hi = lo;
      for (std::size_t m = r; m < r_end; ++m) {
        const float v = qr.dequantized.chol[3 * perm[m] + c];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      grp.range[c] = lo;
      grp.range[3 + c] = hi;
    }
    const double q = static_cast<double>((1u << bits) - 1);
    for (std::size_t m = r; m < r_end; ++m)
      for (int c = 0; c < 3; ++c) {
        const double lo = grp.range[c], hi = grp.range[3 + c];
        const double s = (hi - lo) / q;
        const double v = qr.dequantized.chol[3 * perm[m] + c];
        out.cov_codes[3 * m + c] =
            s > 0.0 ? static_cast<std::uint32_t>(std::clamp(
                          round_half_even((v - lo) / s), 0.0, q))
                    : 0u;
      }
    out.groups.push_back(grp);
    r = r_end;
  }
  return out;
}

namespace detail {

class ByteWriter {
 public:
  explicit ByteWriter(std::vector<std::uint8_t>& out) : out_(out) {}

  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    out_.push_back(v & 0xff);
    out_.push_back(v >> 8);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back((v >> (8 * i)) & 0xff);
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  /// MSB-first bit packing; callers align() at section boundaries.
  void bits(std::uint32_t value, int nbits) {
    for (int i = nbits - 1; i >= 0; --i) {
      acc_ = (acc_ << 1) | ((value >> i) & 1u);
      if (++fill_ == 8) {
        out_.push_back(static_cast<std::uint8_t>(acc_));
        acc_ = 0;
        fill_ = 0;
      }
    }
  }
  void align() {
    if (fill_) {
      out_.push_back(static_cast<std::uint8_t>(acc_ << (8 - fill_)));
      acc_ = 0;
      fill_ = 0;
    }
  }

 private:
  std::vector<std::uint8_t>& out_;
  std::uint32_t acc_ = 0;
  int fill_ = 0;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size)
      : data_(data), size_(size) {}

  void section(const char* name) { section_ = name; }
  std::size_t offset() const { return pos_; }

  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    const std::uint16_t v = data_[pos_] | (data_[pos_ + 1] << 8);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }

  std::uint32_t bits(int nbits) {
    std::uint32_t v = 0;
    for (int i = 0; i < nbits; ++i) {
      if (fill_ == 0) {
        need(1);
        acc_ = data_[pos_++];
        fill_ = 8;
      }
      v = (v << 1) | ((acc_ >> (fill_ - 1)) & 1u);
      --fill_;
    }
    return v;
  }
  void align() { fill_ = 0; }

  void expect_end() {
    if (pos_ != size_)
      throw CorruptionError(section_, pos_, "trailing bytes after payload");
  }

 private:
  void need(std::size_t k) {
    if (pos_ + k > size_)
      throw CorruptionError(section_, pos_, "stream truncated");
  }

  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::uint8_t acc_ = 0;
  int fill_ = 0;
  std::string section_ = "header";
};

inline int index_bits(int k) {
  int b = 0;
  while ((1 << b) < k) ++b;
  return b;  // 0 when k == 1: no payload needed
}

}  // namespace detail

/// Serializes a canonical QuantizedScene. Header and tables are fixed-width
/// little-endian; code payloads are packed MSB-first and byte-aligned per
/// section. Output is byte-identical for identical input.
inline std::vector<std::uint8_t> encode(const QuantizedScene& q) {
  std::uint64_t total = 0;
  for (const auto& g : q.groups) total += g.count;
  if (total != q.size())
    throw std::invalid_argument("encode: group counts do not cover the scene");

  std::vector<std::uint8_t> bytes;
  detail::ByteWriter w(bytes);
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u8(kVersionQuantized);
  w.u32(static_cast<std::uint32_t>(q.width));
  w.u32(static_cast<std::uint32_t>(q.height));
  w.u32(static_cast<std::uint32_t>(q.size()));
  w.u8(static_cast<std::uint8_t>(q.groups.size()));
  w.u8(static_cast<std::uint8_t>(q.position_bits));
  w.u8(static_cast<std::uint8_t>(q.rvq_stages));
  w.u16(static_cast<std::uint16_t>(q.rvq_k));
  w.f32(q.pos_min);
  w.f32(q.pos_max);

  // Group table: the per-group metadata is just (bitwidth, member count).
  for (const auto& g : q.groups) {
    w.u8(g.bits);
    w.u32(g.count);
  }
  for (const auto& g : q.groups)
    for (const float v : g.range) w.f32(v);

  for (const std::uint16_t c : q.book_codes) w.u16(c);

  for (const std::uint16_t c : q.pos_codes) {
    if (c >= (1u << q.position_bits))
      throw std::logic_error("encode: position code exceeds its field width");
    w.bits(c, q.position_bits);
  }
  w.align();

  std::size_t i = 0;
  for (const auto& g : q.groups)
    for (std::uint32_t m = 0; m < g.count; ++m, ++i)
      for (int c = 0; c < 3; ++c) {
        if (q.cov_codes[3 * i + c] >= (1u << g.bits))
          throw std::logic_error("encode: covariance code exceeds its field width");
        w.bits(q.cov_codes[3 * i + c], g.bits);
      }
  w.align();

  const int ib = detail::index_bits(q.rvq_k);
  if (ib > 0)
    for (const std::uint32_t idx : q.color_indices) {
      if (idx >= static_cast<std::uint32_t>(q.rvq_k))
        throw std::logic_error("encode: color index exceeds the codebook size");
      w.bits(idx, ib);
    }
  w.align();
  return bytes;
}

inline QuantizedScene decode(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes.data(), bytes.size());
  r.section("header");
  char magic[4];
  for (char& c : magic) c = static_cast<char>(r.u8());
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("decode: bad magic, not a GS2C stream");
  const std::uint8_t version = r.u8();
  if (version != kVersionQuantized)
    throw FormatError("decode: unsupported stream version " +
                      std::to_string(version));

  QuantizedScene q;
  q.width = static_cast<int>(r.u32());
  q.height = static_cast<int>(r.u32());
  const std::uint32_t n = r.u32();
  const int group_count = r.u8();
  q.position_bits = r.u8();
  q.rvq_stages = r.u8();
  q.rvq_k = r.u16();
  q.pos_min = r.f32();
  q.pos_max = r.f32();
  if (q.width < 0 || q.height < 0 || q.position_bits < 1 ||
      q.position_bits > 16)
    throw FormatError("decode: header fields out of range");

  r.section("group table");
  std::uint64_t total = 0;
  int prev_bits = 0;
  for (int g = 0; g < group_count; ++g) {
    QuantizedScene::Group grp;
    grp.bits = r.u8();
    grp.count = r.u32();
    if (grp.bits < 1 || grp.bits > 30 || grp.bits <= prev_bits)
      throw CorruptionError("group table", r.offset(),
                            "group bitwidths must be strictly increasing");
    prev_bits = grp.bits;
    total += grp.count;
    q.groups.push_back(grp);
  }
  if (total != n)
    throw CorruptionError("group table", r.offset(),
                          "group counts do not sum to the Gaussian count");

  // The header fully determines the stream length; check it before any
  // payload allocation so corrupt headers cannot request huge buffers. A
  // short stream is reported against the section the cut falls in.
  int ib_check = 0;
  while ((1 << ib_check) < q.rvq_k) ++ib_check;
  std::uint64_t cov_bits = 0;
  for (const auto& grp : q.groups) cov_bits += 3ull * grp.bits * grp.count;
  const std::uint64_t ranges_end = r.offset() + q.groups.size() * 24;
  const std::uint64_t book_end =
      ranges_end + static_cast<std::uint64_t>(q.rvq_stages) * q.rvq_k * 3 * 2;
  const std::uint64_t pos_end = book_end + (2ull * n * q.position_bits + 7) / 8;
  const std::uint64_t cov_end = pos_end + (cov_bits + 7) / 8;
  const std::uint64_t expected =
      cov_end + (static_cast<std::uint64_t>(q.rvq_stages) * n * ib_check + 7) / 8;
  if (bytes.size() < expected) {
    const std::uint64_t at = bytes.size();
    const char* cut = at < ranges_end ? "group ranges"
                      : at < book_end ? "codebooks"
                      : at < pos_end  ? "position codes"
                      : at < cov_end  ? "covariance codes"
                                      : "color indices";
    throw CorruptionError(cut, at, "stream truncated");
  }
  if (bytes.size() > expected)
    throw CorruptionError("trailer", expected, "trailing bytes after payload");

  r.section("group ranges");
  for (auto& grp : q.groups)
    for (float& v : grp.range) v = r.f32();

  r.section("codebooks");
  q.book_codes.resize(static_cast<std::size_t>(q.rvq_stages) * q.rvq_k * 3);
  for (auto& c : q.book_codes) c = r.u16();

  r.section("position codes");
  q.pos_codes.resize(2 * static_cast<std::size_t>(n));
  for (auto& c : q.pos_codes)
    c = static_cast<std::uint16_t>(r.bits(q.position_bits));
  r.align();

  r.section("covariance codes");
  q.cov_codes.resize(3 * static_cast<std::size_t>(n));
  std::size_t i = 0;
  for (const auto& grp : q.groups)
    for (std::uint32_t m = 0; m < grp.count; ++m, ++i)
      for (int c = 0; c < 3; ++c) q.cov_codes[3 * i + c] = r.bits(grp.bits);
  r.align();

  r.section("color indices");
  const int ib = detail::index_bits(q.rvq_k);
  q.color_indices.resize(static_cast<std::size_t>(q.rvq_stages) * n);
  for (auto& idx : q.color_indices) {
    idx = ib > 0 ? r.bits(ib) : 0u;
    if (idx >= static_cast<std::uint32_t>(q.rvq_k))
      throw CorruptionError("color indices", r.offset(),
                            "index exceeds the codebook size");
  }
  r.align();
  r.expect_end();
  return q;
}

/// Compressed size in bits per pixel.
inline double bpp(const std::vector<std::uint8_t>& bytes, int width,
                  int height) {
  return static_cast<double>(bytes.size()) * 8.0 /
         (static_cast<double>(width) * height);
}

/// Bytes of grouping metadata (bitwidth + member count per group).
inline std::size_t group_table_bytes(const QuantizedScene& q) {
  return q.groups.size() * 5;
}

// --- Float scene container (fit output, version 2) --------------------------

inline std::vector<std::uint8_t> encode_scene(const GaussianScene& scene) {
  std::vector<std::uint8_t> bytes;
  detail::ByteWriter w(bytes);
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u8(kVersionFloatScene);
  w.u32(static_cast<std::uint32_t>(scene.width));
  w.u32(static_cast<std::uint32_t>(scene.height));
  w.u32(static_cast<std::uint32_t>(scene.size()));
  for (const float v : scene.mu) w.f32(v);
  for (const float v : scene.chol) w.f32(v);
  for (const float v : scene.color) w.f32(v);
  return bytes;
}

inline GaussianScene decode_scene(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes.data(), bytes.size());
  r.section("scene header");
  char magic[4];
  for (char& c : magic) c = static_cast<char>(r.u8());
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("decode_scene: bad magic, not a GS2C stream");
  if (r.u8() != kVersionFloatScene)
    throw FormatError("decode_scene: not a float scene stream");
  GaussianScene scene;
  scene.width = static_cast<int>(r.u32());
  scene.height = static_cast<int>(r.u32());
  const std::uint32_t n = r.u32();
  r.section("scene payload");
  scene.mu.resize(2 * static_cast<std::size_t>(n));
  scene.chol.resize(3 * static_cast<std::size_t>(n));
  scene.color.resize(3 * static_cast<std::size_t>(n));
  for (auto& v : scene.mu) v = r.f32();
  for (auto& v : scene.chol) v = r.f32();
  for (auto& v : scene.color) v = r.f32();
  r.expect_end();
  return scene;
}

inline std::uint8_t peek_version(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 5 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError("not a GS2C stream");
  return bytes[4];
}

// --- File helpers ------------------------------------------------------------

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw IoError("cannot open '" + path + "' for reading");
  std::fseek(fp, 0, SEEK_END);
  const long size = std::ftell(fp);
  std::fseek(fp, 0, SEEK_SET);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(std::max(0L, size)));
  const std::size_t got = bytes.empty() ? 0 : std::fread(bytes.data(), 1, bytes.size(), fp);
  std::fclose(fp);
  if (got != bytes.size()) throw IoError("short read on '" + path + "'");
  return bytes;
}

inline void write_file(const std::string& path,
                       const std::vector<std::uint8_t>& bytes) {
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot open '" + path + "' for writing");
  const std::size_t put =
      bytes.empty() ? 0 : std::fwrite(bytes.data(), 1, bytes.size(), fp);
  std::fclose(fp);
  if (put != bytes.size()) throw IoError("short write on '" + path + "'");
}

}  // namespace gs2d
