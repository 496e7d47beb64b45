#include "gs2d/codec.hpp"

#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <set>

#include "gs2d/quantization.hpp"
#include "test_utils.hpp"

using namespace gs2d;

namespace {

/// Random canonical scene: strictly increasing group bitwidths in [6,16],
/// codes within their field widths, codebooks on the 16-bit grid.
QuantizedScene random_quantized_scene(std::uint64_t seed, int max_groups = 4) {
  Rng rng(seed);
  QuantizedScene q;
  q.width = 32 + static_cast<int>(rng.below(64));
  q.height = 32 + static_cast<int>(rng.below(64));
  q.position_bits = 12;
  q.rvq_stages = 2;
  q.rvq_k = 1 + static_cast<int>(rng.below(8));

  const int n_groups = 1 + static_cast<int>(rng.below(max_groups));
  std::set<int> bit_choices;
  while (static_cast<int>(bit_choices.size()) < n_groups)
    bit_choices.insert(6 + static_cast<int>(rng.below(11)));

  std::size_t n = 0;
  for (const int bits : bit_choices) {
    QuantizedScene::Group g;
    g.bits = static_cast<std::uint8_t>(bits);
    g.count = 1 + static_cast<std::uint32_t>(rng.below(20));
    for (int c = 0; c < 3; ++c) {
      const float lo = static_cast<float>(rng.uniform(0.001, 2.0));
      g.range[c] = lo;
      g.range[3 + c] = lo + static_cast<float>(rng.uniform(0.01, 3.0));
    }
    n += g.count;
    q.groups.push_back(g);
  }

  q.pos_codes.resize(2 * n);
  for (auto& c : q.pos_codes)
    c = static_cast<std::uint16_t>(rng.below(1u << q.position_bits));
  q.cov_codes.resize(3 * n);
  std::size_t i = 0;
  for (const auto& g : q.groups)
    for (std::uint32_t m = 0; m < g.count; ++m, ++i)
      for (int c = 0; c < 3; ++c)
        q.cov_codes[3 * i + c] =
            static_cast<std::uint32_t>(rng.below(1u << g.bits));
  q.book_codes.resize(static_cast<std::size_t>(q.rvq_stages) * q.rvq_k * 3);
  for (auto& c : q.book_codes)
    c = static_cast<std::uint16_t>(rng.below(65536));
  q.color_indices.resize(static_cast<std::size_t>(q.rvq_stages) * n);
  for (auto& idx : q.color_indices)
    idx = static_cast<std::uint32_t>(rng.below(q.rvq_k));
  return q;
}

void expect_identical(const QuantizedScene& a, const QuantizedScene& b) {
  ASSERT_EQ(a.width, b.width);
  ASSERT_EQ(a.height, b.height);
  ASSERT_EQ(a.position_bits, b.position_bits);
  ASSERT_EQ(std::bit_cast<std::uint32_t>(a.pos_min),
            std::bit_cast<std::uint32_t>(b.pos_min));
  ASSERT_EQ(std::bit_cast<std::uint32_t>(a.pos_max),
            std::bit_cast<std::uint32_t>(b.pos_max));
  ASSERT_EQ(a.groups.size(), b.groups.size());
  for (std::size_t g = 0; g < a.groups.size(); ++g) {
    ASSERT_EQ(a.groups[g].bits, b.groups[g].bits);
    ASSERT_EQ(a.groups[g].count, b.groups[g].count);
    for (int c = 0; c < 6; ++c)
      ASSERT_EQ(std::bit_cast<std::uint32_t>(a.groups[g].range[c]),
                std::bit_cast<std::uint32_t>(b.groups[g].range[c]));
  }
  ASSERT_EQ(a.pos_codes, b.pos_codes);
  ASSERT_EQ(a.cov_codes, b.cov_codes);
  ASSERT_EQ(a.rvq_stages, b.rvq_stages);
  ASSERT_EQ(a.rvq_k, b.rvq_k);
  ASSERT_EQ(a.book_codes, b.book_codes);
  ASSERT_EQ(a.color_indices, b.color_indices);
}

std::size_t expected_stream_bytes(const QuantizedScene& q) {
  const std::size_t n = q.size();
  const std::size_t header = 30;
  const std::size_t table = q.groups.size() * 5;
  const std::size_t ranges = q.groups.size() * 24;
  const std::size_t book = q.book_codes.size() * 2;
  const std::size_t pos = (2 * n * q.position_bits + 7) / 8;
  std::size_t cov_bits = 0;
  for (const auto& g : q.groups) cov_bits += 3ull * g.bits * g.count;
  const std::size_t cov = (cov_bits + 7) / 8;
  int ib = 0;
  while ((1 << ib) < q.rvq_k) ++ib;
  const std::size_t idx = (q.rvq_stages * n * ib + 7) / 8;
  return header + table + ranges + book + pos + cov + idx;
}

TEST(Codec, RoundTripIsBitExact) {
  for (int trial = 0; trial < 25; ++trial) {
    const QuantizedScene q = random_quantized_scene(1000 + trial);
    const auto bytes = encode(q);
    const QuantizedScene back = decode(bytes);
    expect_identical(q, back);

    const GaussianScene a = q.dequantize();
    const GaussianScene b = back.dequantize();
    ASSERT_EQ(a.mu, b.mu);
    ASSERT_EQ(a.chol, b.chol);
    ASSERT_EQ(a.color, b.color);
    const ImageBuffer ra = render(a), rb = render(b);
    ASSERT_EQ(ra.data, rb.data);
  }
}

TEST(Codec, EncodeIsDeterministic) {
  const QuantizedScene q = random_quantized_scene(77);
  EXPECT_EQ(encode(q), encode(q));
  const QuantizedScene copy = q;
  EXPECT_EQ(encode(q), encode(copy));
}

TEST(Codec, StreamSizeFormulaHoldsExactly) {
  for (int trial = 0; trial < 25; ++trial) {
    const QuantizedScene q = random_quantized_scene(2000 + trial);
    EXPECT_EQ(encode(q).size(), expected_stream_bytes(q));
  }
}

TEST(Codec, SingleGaussianSixBitAccounting) {
  QuantizedScene q;
  q.width = q.height = 16;
  q.position_bits = 12;
  q.rvq_stages = 1;
  q.rvq_k = 1;
  QuantizedScene::Group g;
  g.bits = 6;
  g.count = 1;
  g.range = {0.5f, 0.f, 0.5f, 1.5f, 0.1f, 1.5f};
  q.groups.push_back(g);
  q.pos_codes = {100, 200};
  q.cov_codes = {63, 0, 31};
  q.book_codes = {32768, 33000, 34000};
  q.color_indices = {0};

  const auto bytes = encode(q);
  // Header 30 + table 5 + ranges 24 + book 6 + positions 3 (24 bits) +
  // covariance 3 (18 bits -> 3 bytes) + indices 0.
  EXPECT_EQ(bytes.size(), 30u + 5 + 24 + 6 + 3 + 3);
  const QuantizedScene back = decode(bytes);
  expect_identical(q, back);

  // Covariance dequantization against the group range arithmetic.
  const GaussianScene scene = back.dequantize();
  EXPECT_FLOAT_EQ(scene.chol[0], 0.5f + 63.f * (1.5f - 0.5f) / 63.f);
  EXPECT_FLOAT_EQ(scene.chol[1], 0.f);
  EXPECT_FLOAT_EQ(scene.chol[2],
                  static_cast<float>(0.5 + 31.0 * (1.5 - 0.5) / 63.0));
}

TEST(Codec, EmptySceneIsHeaderOnly) {
  QuantizedScene q;
  q.width = 768;
  q.height = 512;
  q.rvq_stages = 0;
  q.rvq_k = 0;
  const auto bytes = encode(q);
  EXPECT_EQ(bytes.size(), 30u);
  EXPECT_LT(bpp(bytes, 768, 512), 0.001);

  const QuantizedScene back = decode(bytes);
  EXPECT_EQ(back.size(), 0u);
  EXPECT_EQ(back.dequantize().size(), 0u);
}

TEST(Codec, BadMagicIsFormatError) {
  const QuantizedScene q = random_quantized_scene(3);
  auto bytes = encode(q);
  bytes[0] ^= 0x01;  // single-bit corruption in the magic
  EXPECT_THROW(decode(bytes), FormatError);
}

TEST(Codec, TruncationReportsSectionAndOffset) {
  const QuantizedScene q = random_quantized_scene(4);
  const auto bytes = encode(q);
  bool saw_cov_section = false;
  for (const std::size_t keep :
       {bytes.size() - 1, bytes.size() / 2, std::size_t{40}, std::size_t{10}}) {
    std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + keep);
    try {
      decode(cut);
      FAIL() << "decode should reject a truncated stream of " << keep;
    } catch (const CorruptionError& e) {
      EXPECT_LE(e.byte_offset(), keep);
      EXPECT_FALSE(e.section().empty());
      saw_cov_section |= e.section() == "covariance codes" ||
                         e.section() == "color indices";
    } catch (const FormatError&) {
      // Very short prefixes die on the header checks instead.
      EXPECT_LT(keep, std::size_t{30});
    }
  }
  EXPECT_TRUE(saw_cov_section);
}

TEST(Codec, TrailingGarbageRejected) {
  const QuantizedScene q = random_quantized_scene(5);
  auto bytes = encode(q);
  bytes.push_back(0xAB);
  EXPECT_THROW(decode(bytes), CorruptionError);
}

TEST(Codec, NonIncreasingGroupBitsRejected) {
  QuantizedScene q = random_quantized_scene(6, 3);
  if (q.groups.size() < 2) q = random_quantized_scene(8, 3);
  ASSERT_GE(q.groups.size(), 2u);
  auto bytes = encode(q);
  // Swap the first two 5-byte group-table records in place; the table starts
  // right after the 30-byte header.
  for (int i = 0; i < 5; ++i) std::swap(bytes[30 + i], bytes[35 + i]);
  EXPECT_THROW(decode(bytes), CorruptionError);
}

TEST(Codec, OverWideCodeIsAnInternalError) {
  QuantizedScene q = random_quantized_scene(7, 1);
  q.cov_codes[0] = 1u << q.groups[0].bits;  // one bit too wide
  EXPECT_THROW(encode(q), std::logic_error);
}

TEST(Codec, BppArithmetic) {
  const std::vector<std::uint8_t> kilobyte(1000, 0);
  EXPECT_DOUBLE_EQ(bpp(kilobyte, 100, 80), 1.0);
}

TEST(Codec, PayloadScalesLinearlyWithGaussianCount) {
  QuantizedScene q1 = random_quantized_scene(9, 1);
  ASSERT_EQ(q1.groups.size(), 1u);
  QuantizedScene q2 = q1;
  // Double the membership of the single group.
  q2.groups[0].count *= 2;
  q2.pos_codes.insert(q2.pos_codes.end(), q1.pos_codes.begin(), q1.pos_codes.end());
  q2.cov_codes.insert(q2.cov_codes.end(), q1.cov_codes.begin(), q1.cov_codes.end());
  const std::size_t n = q1.size();
  std::vector<std::uint32_t> doubled(2 * q1.color_indices.size());
  for (int stage = 0; stage < q1.rvq_stages; ++stage)
    for (std::size_t rep = 0; rep < 2; ++rep)
      for (std::size_t i = 0; i < n; ++i)
        doubled[stage * 2 * n + rep * n + i] = q1.color_indices[stage * n + i];
  q2.color_indices = std::move(doubled);

  int ib = 0;
  while ((1 << ib) < q1.rvq_k) ++ib;
  const double per_gaussian_bits =
      3.0 * q1.groups[0].bits + 2.0 * q1.position_bits + q1.rvq_stages * ib;
  const double delta_bits =
      8.0 * (static_cast<double>(encode(q2).size()) - encode(q1).size());
  EXPECT_NEAR(delta_bits, per_gaussian_bits * n, 3 * 8.0);  // byte padding
}

TEST(Canonicalize, GroupsAreOrderedAndRangesTight) {
  GaussianScene scene;
  scene.width = scene.height = 24;
  Rng rng(15);
  for (int i = 0; i < 40; ++i) {
    Gaussian2D g;
    g.mu = {static_cast<float>(rng.uniform(-0.9, 0.9)),
            static_cast<float>(rng.uniform(-0.9, 0.9))};
    g.chol = {static_cast<float>(rng.uniform(0.3, 3.0)),
              static_cast<float>(rng.uniform(-0.8, 0.8)),
              static_cast<float>(rng.uniform(0.3, 3.0))};
    g.color = {static_cast<float>(rng.uniform(0.0, 1.0)),
               static_cast<float>(rng.uniform(0.0, 1.0)),
               static_cast<float>(rng.uniform(0.0, 1.0))};
    scene.push_back(g);
  }
  QuantizerConfig cfg;
  cfg.rvq_k = 16;
  QuantizerState st = init_quantizer(scene, cfg, 2);
  for (std::size_t i = 0; i < scene.size(); ++i)
    st.bits[i] = static_cast<float>(6 + rng.below(11));
  const QuantizeResult qr = quantize_scene(scene, st);
  const QuantizedScene q = canonicalize(st, qr, scene.width, scene.height);

  ASSERT_EQ(q.size(), scene.size());
  std::uint32_t total = 0;
  int prev = 0;
  for (const auto& g : q.groups) {
    EXPECT_GT(g.bits, prev);
    prev = g.bits;
    total += g.count;
    for (int c = 0; c < 3; ++c) EXPECT_LE(g.range[c], g.range[3 + c]);
  }
  EXPECT_EQ(total, scene.size());

  // Group-range requantization stays within half a step of the per-Gaussian
  // dequantized values it was refit to.
  const GaussianScene deq = q.dequantize();
  std::size_t row = 0;
  for (const auto& g : q.groups) {
    const double qmax = static_cast<double>((1u << g.bits) - 1);
    for (std::uint32_t m = 0; m < g.count; ++m, ++row) {
      for (int c = 0; c < 3; ++c) {
        const double step =
            (static_cast<double>(g.range[3 + c]) - g.range[c]) / qmax;
        bool found = false;
        for (std::size_t i = 0; i < scene.size() && !found; ++i)
          found = std::abs(qr.dequantized.chol[3 * i + c] -
                           deq.chol[3 * row + c]) <= step / 2 + 1e-6;
        EXPECT_TRUE(found) << "row " << row << " component " << c;
      }
    }
  }

  // Round trip of the canonical form is the identity.
  const QuantizedScene back = decode(encode(q));
  expect_identical(q, back);
}

TEST(SceneContainer, FloatSceneRoundTrip) {
  const GaussianScene scene = gs2d::testing::safe_random_scene(20, 16, 9, 51);
  const auto bytes = encode_scene(scene);
  EXPECT_EQ(peek_version(bytes), kVersionFloatScene);
  const GaussianScene back = decode_scene(bytes);
  EXPECT_EQ(back.width, scene.width);
  EXPECT_EQ(back.height, scene.height);
  EXPECT_EQ(back.mu, scene.mu);
  EXPECT_EQ(back.chol, scene.chol);
  EXPECT_EQ(back.color, scene.color);
}

TEST(SceneContainer, VersionsAreMutuallyExclusive) {
  const GaussianScene scene = gs2d::testing::safe_random_scene(8, 8, 2, 3);
  const auto scene_bytes = encode_scene(scene);
  EXPECT_THROW(decode(scene_bytes), FormatError);

  const QuantizedScene q = random_quantized_scene(1);
  const auto stream_bytes = encode(q);
  EXPECT_THROW(decode_scene(stream_bytes), FormatError);
}

TEST(GroupTable, MetadataStaysSmall) {
  // Even the maximal 11-group table is 55 bytes of grouping metadata.
  QuantizedScene q;
  for (int bits = 6; bits <= 16; ++bits) {
    QuantizedScene::Group g;
    g.bits = static_cast<std::uint8_t>(bits);
    g.count = 0;
    q.groups.push_back(g);
  }
  EXPECT_EQ(group_table_bytes(q), 55u);
}

}  // namespace
