#include "gs2d/losses.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "test_utils.hpp"

using namespace gs2d;

namespace {

/// Direct loop implementation of the weighted gradient discrepancy, built on
/// the brute-force Sobel; shares nothing with the production path.
double geometry_loss_oracle(const ImageBuffer& recon, const ImageBuffer& target) {
  const GradientField gp = gs2d::testing::sobel_oracle(
      grayscale_f64(recon), recon.width, recon.height);
  const GradientField gt = gs2d::testing::sobel_oracle(
      grayscale_f64(target), target.width, target.height);
  double acc = 0;
  for (std::size_t p = 0; p < gp.gx.size(); ++p) {
    const double dx = (gp.gx[p] - gt.gx[p]) * (gp.gx[p] - gt.gx[p]);
    const double dy = (gp.gy[p] - gt.gy[p]) * (gp.gy[p] - gt.gy[p]);
    acc += std::abs(gt.gx[p]) * dx + std::abs(gt.gy[p]) * dy;
  }
  return acc / (static_cast<double>(recon.width) * recon.height);
}

TEST(MseLoss, ZeroAtIdentityAndHandValue) {
  const ImageBuffer img = gs2d::testing::random_image(6, 4, 3, 1);
  const auto [zero, dz] = mse_loss(img, img);
  EXPECT_EQ(zero, 0.0);
  for (const float v : dz.data) EXPECT_EQ(v, 0.f);

  ImageBuffer target(6, 4, 3, 0.25f);
  ImageBuffer recon(6, 4, 3, 0.375f);  // exact dyadic offset 0.125
  const auto [loss, d] = mse_loss(recon, target);
  EXPECT_DOUBLE_EQ(loss, 0.125 * 0.125);
  for (const float v : d.data)
    EXPECT_FLOAT_EQ(v, 2.f * 0.125f / (6 * 4 * 3));

  ImageBuffer recon2(6, 4, 3, 0.35f);
  ImageBuffer target2(6, 4, 3, 0.25f);
  EXPECT_NEAR(mse_loss(recon2, target2).first, 0.01, 1e-8);
}

TEST(MseLoss, RejectsShapeMismatch) {
  EXPECT_THROW(mse_loss(ImageBuffer(2, 2, 3), ImageBuffer(2, 3, 3)),
               std::invalid_argument);
}

TEST(MseLoss, GradientMatchesFiniteDifferences) {
  ImageBuffer recon = gs2d::testing::random_image(4, 4, 3, 7);
  const ImageBuffer target = gs2d::testing::random_image(4, 4, 3, 8);
  const auto [loss, d] = mse_loss(recon, target);
  (void)loss;
  const double h = 1e-5;
  for (std::size_t i = 0; i < recon.data.size(); ++i) {
    const float saved = recon.data[i];
    const float hi = static_cast<float>(saved + h);
    const float lo = static_cast<float>(saved - h);
    recon.data[i] = hi;
    const double up = mse_loss(recon, target).first;
    recon.data[i] = lo;
    const double dn = mse_loss(recon, target).first;
    recon.data[i] = saved;
    const double fd = (up - dn) / (static_cast<double>(hi) - lo);
    ASSERT_NEAR(d.data[i], fd, std::abs(fd) * 1e-6 + 1e-12);
  }
}

TEST(GeometryLoss, ZeroWhenReconEqualsTarget) {
  const ImageBuffer img = gs2d::testing::structured_image(16, 12, 3);
  const auto [loss, d] = geometry_loss(img, img);
  EXPECT_EQ(loss, 0.0);
  for (const float v : d.data) EXPECT_EQ(v, 0.f);
}

TEST(GeometryLoss, FlatTargetContributesNothing) {
  const ImageBuffer target(10, 10, 3, 0.5f);
  const ImageBuffer recon = gs2d::testing::random_image(10, 10, 3, 5);
  const auto [loss, d] = geometry_loss(recon, target);
  EXPECT_EQ(loss, 0.0);
  for (const float v : d.data) EXPECT_EQ(v, 0.f);
}

TEST(GeometryLoss, MatchesBruteForceOracle) {
  const ImageBuffer recon = gs2d::testing::random_image(8, 8, 3, 11);
  const ImageBuffer target = gs2d::testing::random_image(8, 8, 3, 12);
  const auto [loss, d] = geometry_loss(recon, target);
  (void)d;
  EXPECT_NEAR(loss, geometry_loss_oracle(recon, target), 1e-10);
}

TEST(GeometryLoss, AsymmetricInItsArguments) {
  const ImageBuffer a = gs2d::testing::structured_image(24, 24, 9);
  const ImageBuffer b = gs2d::testing::random_image(24, 24, 3, 10);
  const double ab = geometry_loss(a, b).first;
  const double ba = geometry_loss(b, a).first;
  EXPECT_GT(std::abs(ab - ba), 1e-6);
}

TEST(GeometryLoss, GradientMatchesFiniteDifferences) {
  for (int trial = 0; trial < 10; ++trial) {
    ImageBuffer recon = gs2d::testing::random_image(8, 8, 3, 100 + trial);
    const ImageBuffer target = gs2d::testing::random_image(8, 8, 3, 200 + trial);
    const GeometryRef ref = make_geometry_ref(target);
    const auto [loss, d] = geometry_loss(recon, ref);
    (void)loss;
    const double h = 1e-5;
    double worst = 0;
    for (std::size_t i = 0; i < recon.data.size(); ++i) {
      const float saved = recon.data[i];
      const float hi = static_cast<float>(saved + h);
      const float lo = static_cast<float>(saved - h);
      recon.data[i] = hi;
      const double up = geometry_loss(recon, ref).first;
      recon.data[i] = lo;
      const double dn = geometry_loss(recon, ref).first;
      recon.data[i] = saved;
      const double fd = (up - dn) / (static_cast<double>(hi) - lo);
      const double rel =
          std::abs(d.data[i] - fd) / std::max(std::abs(fd), 1e-8);
      worst = std::max(worst, rel);
      ASSERT_LT(rel, 1e-5) << "trial " << trial << " entry " << i;
    }
  }
}

TEST(GeometryLoss, SingleChannelReconSupported) {
  const ImageBuffer recon = gs2d::testing::random_image(8, 8, 1, 3);
  const ImageBuffer target = gs2d::testing::random_image(8, 8, 1, 4);
  const auto [loss, d] = geometry_loss(recon, target);
  EXPECT_GT(loss, 0.0);
  EXPECT_EQ(d.channels, 1);
}

TEST(TrainLoss, ZeroWeightReducesToMse) {
  const ImageBuffer recon = gs2d::testing::random_image(8, 8, 3, 21);
  const ImageBuffer target = gs2d::testing::random_image(8, 8, 3, 22);
  const LossReport r = train_loss(recon, target, 0.0);
  const auto [m, dm] = mse_loss(recon, target);
  EXPECT_EQ(r.total, m);
  EXPECT_EQ(r.mse, m);
  EXPECT_EQ(r.d_image.data, dm.data);
}

TEST(TrainLoss, FlatTargetMakesGeometryVanish) {
  const ImageBuffer recon = gs2d::testing::random_image(8, 8, 3, 23);
  const ImageBuffer target(8, 8, 3, 0.6f);
  const LossReport r = train_loss(recon, target, 0.06);
  EXPECT_EQ(r.geometry, 0.0);
  EXPECT_EQ(r.total, r.mse);
}

TEST(TrainLoss, AdditivityInvariantHolds) {
  const ImageBuffer recon = gs2d::testing::random_image(9, 7, 3, 31);
  const ImageBuffer target = gs2d::testing::random_image(9, 7, 3, 32);
  const LossReport r = train_loss(recon, target, 0.06);
  EXPECT_NEAR(r.total, r.mse + 0.06 * r.geometry, 1e-12);
  EXPECT_GT(r.geometry, 0.0);

  const auto [m, dm] = mse_loss(recon, target);
  const auto [g, dg] = geometry_loss(recon, target);
  EXPECT_DOUBLE_EQ(r.mse, m);
  EXPECT_DOUBLE_EQ(r.geometry, g);
  for (std::size_t i = 0; i < dm.data.size(); ++i)
    ASSERT_NEAR(r.d_image.data[i], dm.data[i] + 0.06 * dg.data[i], 1e-8);
}

TEST(TuneLoss, ReducesToTrainLossWithoutExtraTerms) {
  const ImageBuffer recon = gs2d::testing::random_image(8, 6, 3, 41);
  const ImageBuffer target = gs2d::testing::random_image(8, 6, 3, 42);
  const LossReport tune = tune_loss(recon, target, 0.06, 0.0, 8.0, 0.0, 0.5);
  const LossReport train = train_loss(recon, target, 0.06);
  EXPECT_EQ(tune.total, train.total);
  EXPECT_EQ(tune.d_image.data, train.d_image.data);
}

TEST(TuneLoss, BitwidthTermScalesAsExpected) {
  const ImageBuffer recon = gs2d::testing::random_image(8, 6, 3, 43);
  const ImageBuffer target = gs2d::testing::random_image(8, 6, 3, 44);
  const LossReport base = tune_loss(recon, target, 0.06, 0.0, 8.0, 0.0, 0.0);
  const LossReport with_b = tune_loss(recon, target, 0.06, 0.0012, 8.0, 0.0, 0.0);
  EXPECT_NEAR(with_b.total - base.total, 0.0096, 1e-12);
}

TEST(TuneLoss, ReportInvariantOnRandomInputs) {
  Rng rng(55);
  for (int trial = 0; trial < 10; ++trial) {
    const ImageBuffer recon = gs2d::testing::random_image(6, 6, 3, 600 + trial);
    const ImageBuffer target = gs2d::testing::random_image(6, 6, 3, 700 + trial);
    const double lg = rng.uniform(), lb = rng.uniform(), lr = rng.uniform();
    const double vb = rng.uniform(6.0, 16.0), vr = rng.uniform();
    const LossReport r = tune_loss(recon, target, lg, lb, vb, lr, vr);
    EXPECT_EQ(r.bitwidth, vb);
    EXPECT_EQ(r.residual, vr);
    EXPECT_NEAR(r.total, r.mse + lg * r.geometry + lb * vb + lr * vr, 1e-12);
  }
}

}  // namespace
