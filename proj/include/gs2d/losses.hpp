#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "gs2d/image.hpp"

namespace gs2d {

/// Scalar loss terms plus the gradient of the total w.r.t. the rendered
/// image. bitwidth/residual are carried for reporting; their gradients flow
/// through quantizer parameters, not the image.
struct LossReport {
  double total = 0.0;
  double mse = 0.0;
  double geometry = 0.0;
  double bitwidth = 0.0;
  double residual = 0.0;
  ImageBuffer d_image;
};

/// Mean squared error over all H*W*C entries; d_image = 2(recon-target)/(HWC).
inline std::pair<double, ImageBuffer> mse_loss(const ImageBuffer& recon,
                                               const ImageBuffer& target) {
  if (!recon.same_shape(target))
    throw std::invalid_argument("mse_loss: dimension mismatch");
  const std::size_t n = recon.data.size();
  ImageBuffer d(recon.width, recon.height, recon.channels);
  double sum = 0.0;
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double e = static_cast<double>(recon.data[i]) - target.data[i];
    sum += e * e;
    d.data[i] = static_cast<float>(2.0 * e * inv);
  }
  return {sum * inv, std::move(d)};
}

/// Target-side quantities of the geometry loss; constant during training, so
/// callers fitting one image should build this once.
struct GeometryRef {
  int width = 0, height = 0;
  std::vector<double> gx, gy;  // target Sobel responses
  std::vector<double> wx, wy;  // |gx|, |gy|
};

inline GeometryRef make_geometry_ref(const ImageBuffer& target) {
  const GradientField g =
      sobel(grayscale_f64(target), target.width, target.height);
  GeometryRef ref;
  ref.width = g.width;
  ref.height = g.height;
  ref.gx = g.gx;
  ref.gy = g.gy;
  ref.wx.resize(g.gx.size());
  ref.wy.resize(g.gy.size());
  for (std::size_t p = 0; p < g.gx.size(); ++p) {
    ref.wx[p] = std::abs(g.gx[p]);
    ref.wy[p] = std::abs(g.gy[p]);
  }
  return ref;
}

/// Gradient-domain discrepancy weighted by the target's gradient magnitude:
///   L = (1/HW) sum( |Gx|(G'x-Gx)^2 + |Gy|(G'y-Gy)^2 ),
/// with G from the target and G' from the reconstruction, both on grayscale.
/// The weights are functions of the target only and carry no gradient.
inline std::pair<double, ImageBuffer> geometry_loss(const ImageBuffer& recon,
                                                    const GeometryRef& ref) {
  if (recon.width != ref.width || recon.height != ref.height)
    throw std::invalid_argument("geometry_loss: dimension mismatch");
  const int w = recon.width, h = recon.height;
  const std::size_t plane = static_cast<std::size_t>(w) * h;

  const GradientField gp = sobel(grayscale_f64(recon), w, h);

  double loss = 0.0;
  const double norm = 1.0 / static_cast<double>(plane);
  std::vector<double> ax(plane), ay(plane);  // dL/dG'x, dL/dG'y
  for (std::size_t p = 0; p < plane; ++p) {
    const double ex = gp.gx[p] - ref.gx[p];
    const double ey = gp.gy[p] - ref.gy[p];
    loss += ref.wx[p] * ex * ex + ref.wy[p] * ey * ey;
    ax[p] = 2.0 * norm * ref.wx[p] * ex;
    ay[p] = 2.0 * norm * ref.wy[p] * ey;
  }
  loss *= norm;

  // Adjoint of the 3x3 Sobel with replicate padding: scatter each output's
  // taps back onto the clamped source pixel.
  static constexpr int kOff[3] = {-1, 0, 1};
  static constexpr double kKx[3][3] = {
      {-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  std::vector<double> d_gray(plane, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t q = static_cast<std::size_t>(y) * w + x;
      if (ax[q] == 0.0 && ay[q] == 0.0) continue;
      for (int j = 0; j < 3; ++j) {
        const int sy = std::clamp(y + kOff[j], 0, h - 1);
        for (int i = 0; i < 3; ++i) {
          const int sx = std::clamp(x + kOff[i], 0, w - 1);
          // Ky = Kx^T.
          d_gray[static_cast<std::size_t>(sy) * w + sx] +=
              kKx[j][i] * ax[q] + kKx[i][j] * ay[q];
        }
      }
    }

  ImageBuffer d(w, h, recon.channels);
  if (recon.channels == 1) {
    for (std::size_t p = 0; p < plane; ++p)
      d.data[p] = static_cast<float>(d_gray[p]);
  } else {
    for (std::size_t p = 0; p < plane; ++p) {
      d.data[p] = static_cast<float>(kGrayR * d_gray[p]);
      d.data[plane + p] = static_cast<float>(kGrayG * d_gray[p]);
      d.data[2 * plane + p] = static_cast<float>(kGrayB * d_gray[p]);
    }
  }
  return {loss, std::move(d)};
}

inline std::pair<double, ImageBuffer> geometry_loss(const ImageBuffer& recon,
                                                    const ImageBuffer& target) {
  return geometry_loss(recon, make_geometry_ref(target));
}

/// L_train = L_MSE + lambda_g * L_g.
inline LossReport train_loss(const ImageBuffer& recon,
                             const ImageBuffer& target, double lambda_g,
                             const GeometryRef* ref = nullptr) {
  LossReport r;
  auto [m, dm] = mse_loss(recon, target);
  r.mse = m;
  r.d_image = std::move(dm);
  if (lambda_g != 0.0) {
    auto [g, dg] =
        ref ? geometry_loss(recon, *ref) : geometry_loss(recon, target);
    r.geometry = g;
    for (std::size_t i = 0; i < r.d_image.data.size(); ++i)
      r.d_image.data[i] += static_cast<float>(lambda_g * dg.data[i]);
  } else {
    // Still report the diagnostic value; it just carries no gradient weight.
    r.geometry = 0.0;
  }
  r.total = r.mse + lambda_g * r.geometry;
  return r;
}

/// L_tune = L_train + lambda_b * L_b + lambda_r * L_r. The extra terms are
/// scalars here; their gradients enter through the quantizer parameters.
inline LossReport tune_loss(const ImageBuffer& recon, const ImageBuffer& target,
                            double lambda_g, double lambda_b, double loss_b,
                            double lambda_r, double loss_r,
                            const GeometryRef* ref = nullptr) {
  LossReport r = train_loss(recon, target, lambda_g, ref);
  r.bitwidth = loss_b;
  r.residual = loss_r;
  r.total = r.mse + lambda_g * r.geometry + lambda_b * loss_b + lambda_r * loss_r;
  return r;
}

}  // namespace gs2d
