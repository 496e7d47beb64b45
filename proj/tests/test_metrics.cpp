#include "gs2d/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "test_utils.hpp"

using namespace gs2d;

namespace {

TEST(Psnr, IdenticalImagesAreInfinite) {
  const ImageBuffer img = gs2d::testing::random_image(8, 8, 3, 1);
  EXPECT_TRUE(std::isinf(psnr(img, img)));
}

TEST(Psnr, UniformOffsetsGiveTwentyAndFortyDb) {
  ImageBuffer a(16, 16, 1, 0.5f);
  ImageBuffer b(16, 16, 1, 0.6f);
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-4);
  ImageBuffer c(16, 16, 1, 0.51f);
  EXPECT_NEAR(psnr(a, c), 40.0, 1e-3);
}

TEST(Psnr, DecreasesWithNoiseAmplitude) {
  const ImageBuffer base(32, 32, 3, 0.5f);
  double prev = std::numeric_limits<double>::infinity();
  for (const float amp : {0.01f, 0.02f, 0.05f, 0.1f, 0.2f}) {
    ImageBuffer noisy = base;
    Rng rng(7);
    for (float& v : noisy.data)
      v += amp * static_cast<float>(2.0 * rng.uniform() - 1.0);
    const double p = psnr(base, noisy.clamped01());
    EXPECT_LT(p, prev);
    prev = p;
  }
}

TEST(Psnr, RejectsShapeMismatch) {
  EXPECT_THROW(psnr(ImageBuffer(4, 4, 3), ImageBuffer(4, 4, 1)),
               std::invalid_argument);
}

// --- Brute-force MS-SSIM oracle ----------------------------------------------

struct OracleMeans {
  double ssim, cs;
};

/// Direct non-separable windowed SSIM on one plane: every output pixel loops
/// the full 11x11 window.
OracleMeans ssim_plane_oracle(const std::vector<double>& p1,
                              const std::vector<double>& p2, int w, int h) {
  constexpr int half = 5;
  constexpr double c1 = 1e-4, c2 = 9e-4;
  std::vector<double> win(11);
  double wsum = 0;
  for (int i = 0; i < 11; ++i) {
    const double d = i - 5.0;
    win[i] = std::exp(-d * d / 4.5);
    wsum += win[i];
  }
  for (double& v : win) v /= wsum;

  double ssim_acc = 0, cs_acc = 0;
  std::int64_t count = 0;
  for (int y = half; y < h - half; ++y)
    for (int x = half; x < w - half; ++x) {
      double mu1 = 0, mu2 = 0, m11 = 0, m22 = 0, m12 = 0;
      for (int j = -half; j <= half; ++j)
        for (int i = -half; i <= half; ++i) {
          const double wgt = win[j + half] * win[i + half];
          const double v1 = p1[static_cast<std::size_t>(y + j) * w + (x + i)];
          const double v2 = p2[static_cast<std::size_t>(y + j) * w + (x + i)];
          mu1 += wgt * v1;
          mu2 += wgt * v2;
          m11 += wgt * v1 * v1;
          m22 += wgt * v2 * v2;
          m12 += wgt * v1 * v2;
        }
      const double s11 = m11 - mu1 * mu1, s22 = m22 - mu2 * mu2,
                   s12 = m12 - mu1 * mu2;
      const double cs = (2 * s12 + c2) / (s11 + s22 + c2);
      ssim_acc += cs * (2 * mu1 * mu2 + c1) / (mu1 * mu1 + mu2 * mu2 + c1);
      cs_acc += cs;
      ++count;
    }
  return {ssim_acc / count, cs_acc / count};
}

double ms_ssim_oracle(const ImageBuffer& a, const ImageBuffer& b) {
  constexpr std::array<double, 5> weights{0.0448, 0.2856, 0.3001, 0.2363,
                                          0.1333};
  int levels = 0;
  for (int dim = std::min(a.width, a.height); dim >= 11 && levels < 5; dim /= 2)
    ++levels;
  double wsum = 0;
  for (int l = 0; l < levels; ++l) wsum += weights[l];

  const std::size_t plane = a.plane_size();
  double value = 0;
  for (int ch = 0; ch < a.channels; ++ch) {
    std::vector<double> p1(a.data.begin() + ch * plane,
                           a.data.begin() + (ch + 1) * plane);
    std::vector<double> p2(b.data.begin() + ch * plane,
                           b.data.begin() + (ch + 1) * plane);
    int w = a.width, h = a.height;
    double acc = 1.0;
    for (int l = 0; l < levels; ++l) {
      const OracleMeans m = ssim_plane_oracle(p1, p2, w, h);
      const double term =
          l + 1 == levels ? std::max(m.ssim, 0.0) : std::max(m.cs, 0.0);
      acc *= std::pow(term, weights[l] / wsum);
      if (l + 1 < levels) {
        // 2x2 mean pool in place.
        const int ow = w / 2, oh = h / 2;
        std::vector<double> d1(static_cast<std::size_t>(ow) * oh);
        std::vector<double> d2(d1.size());
        for (int y = 0; y < oh; ++y)
          for (int x = 0; x < ow; ++x) {
            const std::size_t s = static_cast<std::size_t>(2 * y) * w + 2 * x;
            d1[static_cast<std::size_t>(y) * ow + x] =
                0.25 * (p1[s] + p1[s + 1] + p1[s + w] + p1[s + w + 1]);
            d2[static_cast<std::size_t>(y) * ow + x] =
                0.25 * (p2[s] + p2[s + 1] + p2[s + w] + p2[s + w + 1]);
          }
        p1 = std::move(d1);
        p2 = std::move(d2);
        w = ow;
        h = oh;
      }
    }
    value += acc;
  }
  return value / a.channels;
}

TEST(MsSsim, IdenticalImagesScoreOne) {
  const ImageBuffer img = gs2d::testing::structured_image(192, 180, 3);
  EXPECT_NEAR(ms_ssim(img, img), 1.0, 1e-12);
}

TEST(MsSsim, InversionScoresLow) {
  const ImageBuffer img = gs2d::testing::structured_image(192, 180, 5);
  ImageBuffer inv = img;
  for (float& v : inv.data) v = 1.f - v;
  EXPECT_LT(ms_ssim(img, inv), 0.5);
}

TEST(MsSsim, MatchesBruteForceOracle) {
  const ImageBuffer a = gs2d::testing::structured_image(192, 180, 7);
  ImageBuffer b = a;
  Rng rng(8);
  for (float& v : b.data)
    v = std::clamp(v + 0.05f * static_cast<float>(2 * rng.uniform() - 1), 0.f,
                   1.f);
  const MsSsimResult r = ms_ssim_detail(a, b);
  EXPECT_EQ(r.scales_used, 5);
  EXPECT_NEAR(r.value, ms_ssim_oracle(a, b), 1e-8);
}

TEST(MsSsim, ReducedScalesOnSmallImages) {
  const ImageBuffer a = gs2d::testing::structured_image(64, 64, 1);
  ImageBuffer b = a;
  Rng rng(2);
  for (float& v : b.data)
    v = std::clamp(v + 0.1f * static_cast<float>(2 * rng.uniform() - 1), 0.f, 1.f);
  const MsSsimResult r = ms_ssim_detail(a, b);
  EXPECT_EQ(r.scales_used, 3);  // 64 -> 32 -> 16, then 8 < 11
  EXPECT_GT(r.value, 0.0);
  EXPECT_LE(r.value, 1.0);
  EXPECT_NEAR(r.value, ms_ssim_oracle(a, b), 1e-8);
}

TEST(MsSsim, TooSmallIsContractViolation) {
  const ImageBuffer tiny(8, 8, 1, 0.5f);
  EXPECT_THROW(ms_ssim(tiny, tiny), std::invalid_argument);
}

// --- Bjontegaard -------------------------------------------------------------

std::vector<RdPoint> cubic_curve(const std::array<double, 4>& coef,
                                 const std::vector<double>& qualities) {
  // log10(bpp) = c0 + c1 q + c2 q^2 + c3 q^3, exactly on the fit model.
  std::vector<RdPoint> pts;
  for (const double q : qualities) {
    const double lr = coef[0] + q * (coef[1] + q * (coef[2] + q * coef[3]));
    pts.push_back({std::pow(10.0, lr), q});
  }
  return pts;
}

TEST(BdRate, IdenticalCurvesAreZero) {
  const auto ref = cubic_curve({-2.0, 0.05, -3e-4, 1e-6}, {30, 34, 38, 42});
  EXPECT_DOUBLE_EQ(bd_rate(ref, ref), 0.0);
  EXPECT_DOUBLE_EQ(bd_psnr(ref, ref), 0.0);
}

TEST(BdRate, DoubledRateIsPlusHundredPercent) {
  const auto ref = cubic_curve({-2.0, 0.05, -3e-4, 1e-6}, {30, 34, 38, 42});
  auto test = ref;
  for (auto& p : test) p.bpp *= 2.0;
  EXPECT_NEAR(bd_rate(ref, test), 100.0, 1e-9);
  EXPECT_NEAR(bd_rate(test, ref), -50.0, 1e-9);
}

TEST(BdPsnr, ConstantOffsetIsExact) {
  const auto ref = cubic_curve({-2.0, 0.05, -3e-4, 1e-6}, {30, 34, 38, 42});
  auto test = ref;
  for (auto& p : test) p.quality += 1.0;
  EXPECT_NEAR(bd_psnr(ref, test), 1.0, 1e-6);
}

TEST(BdRate, MatchesSymbolicIntegralOnPolynomialCurves) {
  // Two known cubics in quality; the average log-rate difference over the
  // overlap has a closed form evaluated here with exact antiderivatives.
  const std::array<double, 4> ca{-2.2, 0.045, -2e-4, 8e-7};
  const std::array<double, 4> cb{-2.5, 0.050, -1e-4, 5e-7};
  const std::vector<double> qa{30, 33, 37, 42};
  const std::vector<double> qb{31, 35, 39, 41.5};
  const auto ref = cubic_curve(ca, qa);
  const auto test = cubic_curve(cb, qb);

  const double lo = 31.0, hi = 41.5;
  auto integral = [&](const std::array<double, 4>& c) {
    auto anti = [&](double q) {
      return c[0] * q + c[1] * q * q / 2 + c[2] * q * q * q / 3 +
             c[3] * q * q * q * q / 4;
    };
    return anti(hi) - anti(lo);
  };
  const double delta = (integral(cb) - integral(ca)) / (hi - lo);
  const double expected = (std::pow(10.0, delta) - 1.0) * 100.0;

  const double got = bd_rate(ref, test);
  EXPECT_NEAR(got, expected, std::abs(expected) * 1e-3 + 1e-6);
}

TEST(BdPsnr, MatchesSymbolicIntegralOnPolynomialCurves) {
  // Quality as a cubic of log-rate for both curves.
  const std::array<double, 4> ca{25.0, 9.0, 1.5, 0.2};
  const std::array<double, 4> cb{26.0, 8.5, 1.2, 0.1};
  auto curve = [](const std::array<double, 4>& c,
                  const std::vector<double>& lrs) {
    std::vector<RdPoint> pts;
    for (const double lr : lrs) {
      const double q = c[0] + lr * (c[1] + lr * (c[2] + lr * c[3]));
      pts.push_back({std::pow(10.0, lr), q});
    }
    return pts;
  };
  const std::vector<double> la{-1.0, -0.6, -0.3, 0.1};
  const std::vector<double> lb{-0.9, -0.5, -0.2, 0.05};
  const auto ref = curve(ca, la);
  const auto test = curve(cb, lb);

  const double lo = -0.9, hi = 0.05;
  auto integral = [&](const std::array<double, 4>& c) {
    auto anti = [&](double x) {
      return c[0] * x + c[1] * x * x / 2 + c[2] * x * x * x / 3 +
             c[3] * x * x * x * x / 4;
    };
    return anti(hi) - anti(lo);
  };
  const double expected = (integral(cb) - integral(ca)) / (hi - lo);
  EXPECT_NEAR(bd_psnr(ref, test), expected, 0.01);
}

TEST(BdPsnr, ApproximatelyAntisymmetric) {
  const auto a = cubic_curve({-2.0, 0.05, -3e-4, 1e-6}, {30, 34, 38, 42});
  const auto b = cubic_curve({-2.1, 0.048, -2e-4, 9e-7}, {31, 34.5, 38.5, 41});
  EXPECT_NEAR(bd_psnr(a, b) + bd_psnr(b, a), 0.0, 0.02);
}

TEST(Bd, ErrorsOnBadCurves) {
  const auto good = cubic_curve({-2.0, 0.05, -3e-4, 1e-6}, {30, 34, 38, 42});
  auto three = good;
  three.pop_back();
  EXPECT_THROW(bd_rate(good, three), std::invalid_argument);

  auto dup = good;
  dup[1].quality = dup[0].quality;
  EXPECT_THROW(bd_rate(good, dup), std::invalid_argument);

  const auto far = cubic_curve({-2.0, 0.05, -3e-4, 1e-6}, {50, 54, 58, 62});
  EXPECT_THROW(bd_rate(good, far), std::domain_error);

  auto nonpos = good;
  nonpos[0].bpp = 0.0;
  EXPECT_THROW(bd_rate(good, nonpos), std::invalid_argument);
}

}  // namespace
