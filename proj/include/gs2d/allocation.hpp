#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "gs2d/image.hpp"
#include "gs2d/rng.hpp"
#include "gs2d/segmentation.hpp"
#include "gs2d/splat.hpp"

namespace gs2d {

/// Parameters of the allocation schedule. Base ratios are stored normalized;
/// defaults follow 6:2:1 with gamma = 10 and onset 10,000. The threshold
/// coefficients are calibrated so a 768x512 image yields N_t = 70,000.
struct AllocationConfig {
  std::array<double, 3> phi{6.0 / 9.0, 2.0 / 9.0, 1.0 / 9.0};
  double gamma = 10.0;
  std::int64_t n0 = 10000;
  double threshold_k = 0.6445;
  double threshold_alpha = 0.9;

  void validate() const {
    if (!(phi[0] >= phi[1] && phi[1] >= phi[2] && phi[2] > 0))
      throw std::invalid_argument("AllocationConfig: need phi1>=phi2>=phi3>0");
    if (std::abs(phi[0] + phi[1] + phi[2] - 1.0) > 1e-9)
      throw std::invalid_argument("AllocationConfig: ratios must sum to 1");
    if (threshold_alpha <= 0 || threshold_alpha >= 1 || threshold_k <= 0 ||
        gamma <= 0 || n0 < 0)
      throw std::invalid_argument("AllocationConfig: parameter out of range");
  }
};

/// N_t = round(k * (H*W)^alpha): the point count past which accumulated
/// blending starts to self-interfere, sublinear in resolution.
inline std::int64_t threshold_count(int width, int height,
                                    const AllocationConfig& cfg) {
  if (width < 1 || height < 1)
    throw std::invalid_argument("threshold_count: empty image");
  const double hw = static_cast<double>(width) * height;
  return static_cast<std::int64_t>(
      std::llround(cfg.threshold_k * std::pow(hw, cfg.threshold_alpha)));
}

/// phi_i(n) = (1-s)*phi_i + s/3 with s = clamp(((n-n0)/(N_t-n0))^gamma; 0, 1).
/// Base ratios below n0, uniform at and beyond N_t.
inline std::array<double, 3> dynamic_ratios(std::int64_t n, std::int64_t n_t,
                                            const AllocationConfig& cfg) {
  if (n < 1) throw std::invalid_argument("dynamic_ratios: n must be >= 1");
  if (n_t <= cfg.n0)
    throw std::invalid_argument("dynamic_ratios: requires N_t > n0");
  const double t =
      static_cast<double>(n - cfg.n0) / static_cast<double>(n_t - cfg.n0);
  const double s = t <= 0.0 ? 0.0 : std::min(std::pow(t, cfg.gamma), 1.0);
  std::array<double, 3> out;
  for (int i = 0; i < 3; ++i) out[i] = (1.0 - s) * cfg.phi[i] + s / 3.0;
  return out;
}

/// One placed point: position plus the local point spacing of its region,
/// from which the initial kernel scale is derived.
struct AllocatedPoint {
  std::array<float, 2> position;
  float spacing;  // sqrt(region pixels / region budget), pixels
};

/// Splits the descending-variance region ranking into three near-equal
/// categories, gives category i floor(n*phi_i) points split evenly over its
/// regions (earlier-ranked regions take the extras), hands the flooring
/// leftovers to the most complex regions one by one, then samples each
/// point uniformly among its region's pixels.
///
/// Returned positions are pixel centers (x+0.5, y+0.5). Sampling uses an
/// independent substream per region, derived from (seed, region_id).
inline std::vector<AllocatedPoint> allocate_positions_scaled(
    const SegmentationMap& seg,
    const std::vector<std::pair<std::int32_t, double>>& ranked, std::int64_t n,
    const std::array<double, 3>& ratios, std::uint64_t seed) {
  const int r_total = static_cast<int>(ranked.size());
  if (seg.region_count < 3 || r_total != seg.region_count)
    throw std::invalid_argument(
        "allocate_positions: need a full ranking over >= 3 regions");
  if (n < 1) throw std::invalid_argument("allocate_positions: n must be >= 1");

  const int c1 = (r_total + 2) / 3;
  const int c2 = (r_total - c1 + 1) / 2;
  const int c3 = r_total - c1 - c2;
  const std::array<int, 3> cat_size{c1, c2, c3};
  std::array<std::int64_t, 3> cat_budget;
  std::int64_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    cat_budget[i] = static_cast<std::int64_t>(
        std::floor(static_cast<double>(n) * ratios[i]));
    assigned += cat_budget[i];
  }

  // Per-region budgets in ranked order.
  std::vector<std::int64_t> budget(r_total, 0);
  int base_rank = 0;
  for (int i = 0; i < 3; ++i) {
    if (cat_size[i] > 0) {
      const std::int64_t per = cat_budget[i] / cat_size[i];
      const std::int64_t extra = cat_budget[i] % cat_size[i];
      for (int r = 0; r < cat_size[i]; ++r)
        budget[base_rank + r] = per + (r < extra ? 1 : 0);
    }
    base_rank += cat_size[i];
  }
  for (std::int64_t leftover = n - assigned, r = 0; leftover > 0;
       --leftover, ++r)
    ++budget[r % r_total];

  std::vector<AllocatedPoint> points;
  points.reserve(n);
  for (int r = 0; r < r_total; ++r) {
    if (!budget[r]) continue;
    const std::int32_t region = ranked[r].first;
    const auto& pix = seg.region_pixels[region];
    const float spacing = static_cast<float>(
        std::sqrt(static_cast<double>(pix.size()) / budget[r]));
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(region)));
    for (std::int64_t j = 0; j < budget[r]; ++j) {
      const std::int32_t p = pix[rng.below(pix.size())];
      points.push_back({{static_cast<float>(p % seg.width + 0.5f),
                         static_cast<float>(p / seg.width + 0.5f)},
                        spacing});
    }
  }
  return points;
}

inline std::vector<std::array<float, 2>> allocate_positions(
    const SegmentationMap& seg,
    const std::vector<std::pair<std::int32_t, double>>& ranked, std::int64_t n,
    const std::array<double, 3>& ratios, std::uint64_t seed) {
  std::vector<std::array<float, 2>> positions;
  positions.reserve(n);
  for (const auto& p : allocate_positions_scaled(seg, ranked, n, ratios, seed))
    positions.push_back(p.position);
  return positions;
}

namespace detail {

/// Bilinear sample at continuous pixel coordinates (centers at k+0.5),
/// clamped at the borders.
inline std::array<float, 3> bilinear_sample(const ImageBuffer& img, double px,
                                            double py) {
  const double fx = std::clamp(px - 0.5, 0.0, static_cast<double>(img.width - 1));
  const double fy = std::clamp(py - 0.5, 0.0, static_cast<double>(img.height - 1));
  const int x0 = std::min(static_cast<int>(fx), img.width - 1);
  const int y0 = std::min(static_cast<int>(fy), img.height - 1);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double ax = fx - x0, ay = fy - y0;
  std::array<float, 3> out{};
  for (int c = 0; c < 3; ++c) {
    const int cc = img.channels == 1 ? 0 : c;
    const double v00 = img.at(x0, y0, cc), v10 = img.at(x1, y0, cc);
    const double v01 = img.at(x0, y1, cc), v11 = img.at(x1, y1, cc);
    out[c] = static_cast<float>((1 - ay) * ((1 - ax) * v00 + ax * v10) +
                                ay * ((1 - ax) * v01 + ax * v11));
  }
  return out;
}

}  // namespace detail

/// Density-aware variant: each point becomes an isotropic Gaussian sized to
/// half its local spacing (clamped to [min_scale, max_scale]) so neighbors
/// overlap moderately everywhere regardless of how uneven the allocation is.
/// Colors are image samples divided by the local accumulated-blending
/// overlap, 2*pi*scale^2 / spacing^2.
inline GaussianScene init_scene_scaled(const ImageBuffer& img,
                                       const std::vector<AllocatedPoint>& points,
                                       double min_scale, double max_scale) {
  GaussianScene scene;
  scene.width = img.width;
  scene.height = img.height;
  scene.mu.reserve(2 * points.size());
  scene.chol.reserve(3 * points.size());
  scene.color.reserve(3 * points.size());
  for (const auto& pt : points) {
    const auto& p = pt.position;
    if (p[0] < 0 || p[0] > img.width || p[1] < 0 || p[1] > img.height)
      throw std::invalid_argument("init_scene: position outside the image");
    const double scale =
        std::clamp(0.5 * pt.spacing, min_scale, std::max(min_scale, max_scale));
    const double overlap = 2.0 * std::numbers::pi * scale * scale /
                           (static_cast<double>(pt.spacing) * pt.spacing);
    const float gain = static_cast<float>(1.0 / std::max(1.0, overlap));
    scene.mu.push_back(static_cast<float>(2.0 * p[0] / img.width - 1.0));
    scene.mu.push_back(static_cast<float>(2.0 * p[1] / img.height - 1.0));
    scene.chol.push_back(static_cast<float>(scale));
    scene.chol.push_back(0.f);
    scene.chol.push_back(static_cast<float>(scale));
    const auto c = detail::bilinear_sample(img, p[0], p[1]);
    scene.color.push_back(c[0] * gain);
    scene.color.push_back(c[1] * gain);
    scene.color.push_back(c[2] * gain);
  }
  return scene;
}

/// Builds the starting scene: isotropic Gaussians of the given pixel scale at
/// the sampled positions, colored by the local image sample divided by the
/// expected accumulated-blending overlap (each kernel integrates to
/// 2*pi*scale^2, so a uniform field would otherwise render ~overlap times too
/// bright).
inline GaussianScene init_scene(const ImageBuffer& img,
                                const std::vector<std::array<float, 2>>& positions,
                                double init_scale) {
  GaussianScene scene;
  scene.width = img.width;
  scene.height = img.height;
  const std::size_t n = positions.size();
  scene.mu.reserve(2 * n);
  scene.chol.reserve(3 * n);
  scene.color.reserve(3 * n);

  const double overlap = n == 0
                             ? 1.0
                             : static_cast<double>(n) * 2.0 * std::numbers::pi *
                                   init_scale * init_scale /
                                   (static_cast<double>(img.width) * img.height);
  const float color_scale = static_cast<float>(1.0 / std::max(1.0, overlap));

  for (const auto& p : positions) {
    if (p[0] < 0 || p[0] > img.width || p[1] < 0 || p[1] > img.height)
      throw std::invalid_argument("init_scene: position outside the image");
    scene.mu.push_back(static_cast<float>(2.0 * p[0] / img.width - 1.0));
    scene.mu.push_back(static_cast<float>(2.0 * p[1] / img.height - 1.0));
    scene.chol.push_back(static_cast<float>(init_scale));
    scene.chol.push_back(0.f);
    scene.chol.push_back(static_cast<float>(init_scale));
    const auto c = detail::bilinear_sample(img, p[0], p[1]);
    scene.color.push_back(c[0] * color_scale);
    scene.color.push_back(c[1] * color_scale);
    scene.color.push_back(c[2] * color_scale);
  }
  return scene;
}

}  // namespace gs2d
