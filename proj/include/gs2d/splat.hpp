#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "gs2d/image.hpp"
#include "gs2d/parallel.hpp"

namespace gs2d {

/// Lower bound for the Cholesky diagonal (l1, l3), in pixels. Keeps
/// Sigma = L L^T positive definite.
inline constexpr float kMinScale = 1e-3f;

/// One anisotropic 2D Gaussian: position in normalized [-1,1]^2 coordinates,
/// lower-triangular Cholesky factor (l1, l2, l3) in pixel units, and
/// unbounded RGB color coefficients.
struct Gaussian2D {
  std::array<float, 2> mu{0.f, 0.f};
  std::array<float, 3> chol{1.f, 0.f, 1.f};
  std::array<float, 3> color{0.f, 0.f, 0.f};
};

/// Ordered Gaussian set plus the raster dimensions it targets. Parameters are
/// stored as parallel arrays (mu: 2N, chol: 3N, color: 3N).
struct GaussianScene {
  int width = 0;
  int height = 0;
  std::vector<float> mu;
  std::vector<float> chol;
  std::vector<float> color;

  std::size_t size() const { return mu.size() / 2; }

  Gaussian2D get(std::size_t i) const {
    return {{mu[2 * i], mu[2 * i + 1]},
            {chol[3 * i], chol[3 * i + 1], chol[3 * i + 2]},
            {color[3 * i], color[3 * i + 1], color[3 * i + 2]}};
  }

  void push_back(const Gaussian2D& g) {
    mu.insert(mu.end(), g.mu.begin(), g.mu.end());
    chol.insert(chol.end(), g.chol.begin(), g.chol.end());
    color.insert(color.end(), g.color.begin(), g.color.end());
  }
};

/// Gradients w.r.t. every scene parameter, same layout as GaussianScene.
struct SceneGradients {
  std::vector<double> d_mu;
  std::vector<double> d_chol;
  std::vector<double> d_color;

  explicit SceneGradients(std::size_t n = 0)
      : d_mu(2 * n, 0.0), d_chol(3 * n, 0.0), d_color(3 * n, 0.0) {}
};

/// Sigma = L L^T = [[l1^2, l1*l2], [l1*l2, l2^2 + l3^2]], row-major.
inline std::array<double, 4> covariance(const Gaussian2D& g) {
  const double l1 = g.chol[0], l2 = g.chol[1], l3 = g.chol[2];
  return {l1 * l1, l1 * l2, l1 * l2, l2 * l2 + l3 * l3};
}

namespace detail {

/// Contributions with sigma above this are dropped (weight < 1e-13); applied
/// identically in the forward and backward passes.
inline constexpr double kSigmaCutoff = 30.0;

/// exp(-s) for s in [0, kSigmaCutoff], ~1e-11 relative error. Branch-free
/// polynomial 2^f reduction; keeps the rasterizer off libm's hot path.
inline double exp_neg(double s) {
  const double x = s * 1.4426950408889634;  // s * log2(e)
  const double nf = std::nearbyint(x);
  const double f = nf - x;  // 2^f with f in [-0.5, 0.5]
  const int n = static_cast<int>(nf);
  // Taylor expansion of 2^f = e^(f ln2), degree 9.
  constexpr double c1 = 0.6931471805599453, c2 = 0.2402265069591007,
                   c3 = 0.05550410866482158, c4 = 0.009618129107628477,
                   c5 = 0.0013333558146428443, c6 = 1.540353039338161e-4,
                   c7 = 1.5252733804059837e-5, c8 = 1.3215486790144305e-6,
                   c9 = 1.0178086009239699e-7;
  const double p =
      1.0 +
      f * (c1 +
           f * (c2 +
                f * (c3 +
                     f * (c4 +
                          f * (c5 +
                               f * (c6 + f * (c7 + f * (c8 + f * c9))))))));
  const double scale =
      std::bit_cast<double>(static_cast<std::uint64_t>(1023 - n) << 52);
  return p * scale;
}

/// Per-Gaussian quantities precomputed for rasterization: position in pixel
/// coordinates, the inverse covariance, and the clipped 3-sigma pixel box.
struct SplatGeom {
  double px, py;        // center, pixel coordinates
  double a, b, c;       // Sigma^{-1} = [[a,b],[b,c]]
  int x0, x1, y0, y1;   // inclusive pixel index bounds; x0 > x1 means empty
};

inline SplatGeom splat_geometry(const GaussianScene& s, std::size_t i) {
  SplatGeom g;
  g.px = (s.mu[2 * i] + 1.0) * 0.5 * s.width;
  g.py = (s.mu[2 * i + 1] + 1.0) * 0.5 * s.height;
  const double l1 = s.chol[3 * i], l2 = s.chol[3 * i + 1],
               l3 = s.chol[3 * i + 2];
  const double det = l1 * l1 * l3 * l3;  // det(Sigma) = (l1*l3)^2
  const double sxx = l1 * l1, sxy = l1 * l2, syy = l2 * l2 + l3 * l3;
  if (det <= 0.0 || !std::isfinite(det)) {
    g = {0, 0, 0, 0, 0, 1, 0, -1, 0};  // empty box: skip this Gaussian
    return g;
  }
  g.a = syy / det;
  g.b = -sxy / det;
  g.c = sxx / det;
  // Tight AABB of the 3-sigma ellipse: +-3*sqrt(Sigma_xx), +-3*sqrt(Sigma_yy).
  // |l1|: a decoded diagonal can come out negative, which leaves Sigma = LL^T
  // positive definite all the same.
  const double hx = 3.0 * std::abs(l1), hy = 3.0 * std::sqrt(syy);
  g.x0 = std::max(0, static_cast<int>(std::ceil(g.px - hx - 0.5)));
  g.x1 = std::min(s.width - 1, static_cast<int>(std::floor(g.px + hx - 0.5)));
  g.y0 = std::max(0, static_cast<int>(std::ceil(g.py - hy - 0.5)));
  g.y1 = std::min(s.height - 1, static_cast<int>(std::floor(g.py + hy - 0.5)));
  return g;
}

}  // namespace detail

/// Accumulated-blending rasterizer, full-precision accumulators: pixel-major
/// RGB triples of sum_i c'_i * exp(-sigma_i), sigma_i = (1/2) d^T Sigma^{-1} d
/// with d = x_k - mu_i in pixel units.
///
/// Parallel over tiles; within a pixel, Gaussians accumulate in index order
/// into double precision, so the result is independent of thread count.
inline std::vector<double> render_f64(const GaussianScene& scene,
                                      int tile_size = 16) {
  const int w = scene.width, h = scene.height;
  if (w <= 0 || h <= 0)
    throw std::invalid_argument("render: scene has empty raster");
  std::vector<double> acc(static_cast<std::size_t>(w) * h * 3, 0.0);
  const std::size_t n = scene.size();

  std::vector<detail::SplatGeom> geom(n);
  for (std::size_t i = 0; i < n; ++i)
    geom[i] = detail::splat_geometry(scene, i);

  const int tx = (w + tile_size - 1) / tile_size;
  const int ty = (h + tile_size - 1) / tile_size;
  std::vector<std::vector<std::int32_t>> tile_lists(
      static_cast<std::size_t>(tx) * ty);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& g = geom[i];
    if (g.x0 > g.x1 || g.y0 > g.y1) continue;
    for (int tj = g.y0 / tile_size; tj <= g.y1 / tile_size; ++tj)
      for (int ti = g.x0 / tile_size; ti <= g.x1 / tile_size; ++ti)
        tile_lists[static_cast<std::size_t>(tj) * tx + ti].push_back(
            static_cast<std::int32_t>(i));
  }

  parallel_for(0, static_cast<std::int64_t>(tx) * ty, [&](std::int64_t t) {
    const int ti = static_cast<int>(t % tx), tj = static_cast<int>(t / tx);
    const int tx0 = ti * tile_size, ty0 = tj * tile_size;
    const int tw = std::min(tile_size, w - tx0), th = std::min(tile_size, h - ty0);

    for (const std::int32_t i : tile_lists[t]) {
      const auto& g = geom[i];
      const double cr = scene.color[3 * i], cg = scene.color[3 * i + 1],
                   cb = scene.color[3 * i + 2];
      const int rx0 = std::max(g.x0, tx0), rx1 = std::min(g.x1, tx0 + tw - 1);
      const int ry0 = std::max(g.y0, ty0), ry1 = std::min(g.y1, ty0 + th - 1);
      const double half_a = 0.5 * g.a;
      for (int y = ry0; y <= ry1; ++y) {
        const double dy = y + 0.5 - g.py;
        // sigma(dx) = (half_a*dx + b*dy)*dx + half_c*dy^2: evaluated per
        // pixel so iterations stay independent and pipeline.
        const double lin = g.b * dy;
        const double cst = 0.5 * g.c * dy * dy;
        double* row = acc.data() + (static_cast<std::size_t>(y) * w + rx0) * 3;
        for (int x = rx0; x <= rx1; ++x, row += 3) {
          const double dx = x + 0.5 - g.px;  // independent of tile clipping
          const double sigma = (half_a * dx + lin) * dx + cst;
          if (sigma < detail::kSigmaCutoff) {
            const double wgt = detail::exp_neg(std::max(sigma, 0.0));
            row[0] += cr * wgt;
            row[1] += cg * wgt;
            row[2] += cb * wgt;
          }
        }
      }
    }
  });
  return acc;
}

/// Float image view of render_f64; values are NOT clamped (clamp at export).
inline ImageBuffer render(const GaussianScene& scene, int tile_size = 16) {
  const std::vector<double> acc = render_f64(scene, tile_size);
  ImageBuffer out(scene.width, scene.height, 3);
  const std::size_t plane = out.plane_size();
  for (std::size_t p = 0; p < plane; ++p) {
    out.data[p] = static_cast<float>(acc[3 * p]);
    out.data[plane + p] = static_cast<float>(acc[3 * p + 1]);
    out.data[2 * plane + p] = static_cast<float>(acc[3 * p + 2]);
  }
  return out;
}

/// Analytic adjoint of render() under the same truncation. d_output holds
/// dLoss/dPixel for the pre-clamp render (3 channels). Parallel over
/// Gaussians; each accumulates over its own pixels in row-major order.
inline SceneGradients render_backward(const GaussianScene& scene,
                                      const ImageBuffer& d_output) {
  const int w = scene.width, h = scene.height;
  if (d_output.width != w || d_output.height != h || d_output.channels != 3)
    throw std::invalid_argument("render_backward: gradient shape mismatch");
  const std::size_t n = scene.size();
  SceneGradients grads(n);
  const std::size_t plane = d_output.plane_size();
  const float* g0 = d_output.data.data();
  const float* g1 = g0 + plane;
  const float* g2 = g0 + 2 * plane;

  parallel_for(0, static_cast<std::int64_t>(n), [&](std::int64_t i) {
    const auto g = detail::splat_geometry(scene, i);
    if (g.x0 > g.x1 || g.y0 > g.y1) return;
    const double l1 = scene.chol[3 * i], l2 = scene.chol[3 * i + 1],
                 l3 = scene.chol[3 * i + 2];
    const double cr = scene.color[3 * i], cg = scene.color[3 * i + 1],
                 cb = scene.color[3 * i + 2];

    double d_px = 0, d_py = 0, d_l1 = 0, d_l2 = 0, d_l3 = 0;
    double d_cr = 0, d_cg = 0, d_cb = 0;

    const double half_a = 0.5 * g.a;
    const double inv_l1 = 1.0 / l1, inv_l3 = 1.0 / l3;
    const double l2_over_l3 = l2 * inv_l3;
    for (int y = g.y0; y <= g.y1; ++y) {
      const double dy = y + 0.5 - g.py;
      const double lin = g.b * dy;
      const double cst = 0.5 * g.c * dy * dy;
      const double vy_base = g.c * dy;
      const std::size_t row = static_cast<std::size_t>(y) * w;
      for (int x = g.x0; x <= g.x1; ++x) {
        const double dx = x + 0.5 - g.px;
        const double sigma = (half_a * dx + lin) * dx + cst;
        if (sigma < detail::kSigmaCutoff) {
          const double wgt = detail::exp_neg(std::max(sigma, 0.0));
          const std::size_t p = row + x;
          const double ur = g0[p], ug = g1[p], ub = g2[p];
          d_cr += wgt * ur;
          d_cg += wgt * ug;
          d_cb += wgt * ub;
          const double coef = (ur * cr + ug * cg + ub * cb) * wgt;
          // v = Sigma^{-1} d; dC/dmu_px = c' * w * v  (d = x - mu).
          const double vx = g.a * dx + lin;
          const double vy = g.b * dx + vy_base;
          d_px += coef * vx;
          d_py += coef * vy;
          // Whitened offset y = L^T v; dsigma/dl in terms of y:
          //   dsigma/dl1 = -y1^2/l1 + y1 y2 l2/(l1 l3)
          //   dsigma/dl2 = -y1 y2 / l3
          //   dsigma/dl3 = -y2^2 / l3
          const double y1 = l1 * vx + l2 * vy;
          const double y2 = l3 * vy;
          const double t12 = y1 * y2;
          d_l1 += coef * (y1 * y1 - t12 * l2_over_l3) * inv_l1;
          d_l2 += coef * t12 * inv_l3;
          d_l3 += coef * (y2 * y2) * inv_l3;
        }
      }
    }

    grads.d_mu[2 * i] = d_px * 0.5 * w;  // mu is stored normalized
    grads.d_mu[2 * i + 1] = d_py * 0.5 * h;
    grads.d_chol[3 * i] = d_l1;
    grads.d_chol[3 * i + 1] = d_l2;
    grads.d_chol[3 * i + 2] = d_l3;
    grads.d_color[3 * i] = d_cr;
    grads.d_color[3 * i + 1] = d_cg;
    grads.d_color[3 * i + 2] = d_cb;
  });
  return grads;
}

}  // namespace gs2d
