#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "gs2d/allocation.hpp"
#include "gs2d/codec.hpp"
#include "gs2d/image.hpp"
#include "gs2d/losses.hpp"
#include "gs2d/metrics.hpp"
#include "gs2d/quantization.hpp"
#include "gs2d/segmentation.hpp"
#include "gs2d/splat.hpp"

namespace gs2d {

/// Adam with bias correction. Moments are kept in double; parameters stay in
/// their native float storage. Non-finite gradients skip that parameter's
/// update for the step and are counted.
class Adam {
 public:
  Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<float> params, std::span<const double> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size())
      throw std::invalid_argument("Adam::step: shape mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = grads[i];
      if (!std::isfinite(g)) {
        ++skipped_;
        m_[i] *= beta1_;
        v_[i] *= beta2_;
        continue;
      }
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
      const double update =
          lr_ * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + eps_);
      params[i] = static_cast<float>(params[i] - update);
    }
  }

  std::int64_t step_count() const { return t_; }
  std::int64_t skipped_updates() const { return skipped_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::vector<double> m_, v_;
  std::int64_t t_ = 0;
  std::int64_t skipped_ = 0;
};

enum class InitMode { kStructureGuided, kRandom };

struct FitConfig {
  std::int64_t n_gaussians = 10000;
  int iterations = 20000;
  double lr_position = 1e-3;
  double lr_color = 1e-2;
  double lr_cholesky = 2e-3;
  double lr_quantizer = 1e-3;
  double lambda_g = 0.06;
  std::uint64_t seed = 0;
  InitMode init = InitMode::kStructureGuided;
  AllocationConfig alloc;

  int slic_regions = 0;  // 0: max(64, round(HW/1024))
  double slic_compactness = 10.0;
  int slic_iterations = 10;
  double init_scale = 0.0;  // pixels; 0: derived from density and SLIC spacing
  int log_interval = 100;

  int tune_iterations = 10000;
  double lambda_b = 0.0012;
  double lambda_r = 1.0;
  QuantizerConfig quant;

  void validate() const {
    if (n_gaussians < 1 || iterations < 0 || tune_iterations < 0)
      throw std::invalid_argument("FitConfig: counts out of range");
    if (lambda_g < 0 || lambda_b < 0 || lambda_r < 0)
      throw std::invalid_argument("FitConfig: loss weights must be >= 0");
    alloc.validate();
  }
};

struct HistoryRow {
  int iteration = 0;
  double total = 0, mse = 0, geometry = 0, bitwidth = 0, residual = 0;
  double psnr = 0;
};
using History = std::vector<HistoryRow>;

namespace detail {

inline ImageBuffer ensure_rgb(const ImageBuffer& img) {
  if (img.channels == 3) return img;
  ImageBuffer out(img.width, img.height, 3);
  const std::size_t plane = img.plane_size();
  for (int c = 0; c < 3; ++c)
    std::copy(img.data.begin(), img.data.begin() + plane,
              out.data.begin() + c * plane);
  return out;
}

inline void project_scene(GaussianScene& scene) {
  for (std::size_t j = 0; j < scene.mu.size(); ++j)
    scene.mu[j] = std::clamp(scene.mu[j], -1.f, 1.f);
  for (std::size_t i = 0; i < scene.size(); ++i) {
    scene.chol[3 * i] = std::max(scene.chol[3 * i], kMinScale);
    scene.chol[3 * i + 2] = std::max(scene.chol[3 * i + 2], kMinScale);
  }
}

}  // namespace detail

/// Builds the starting scene for an image: structure-guided placement from
/// the SLIC/variance ranking and the dynamic ratio schedule, or seeded
/// uniform-random placement for ablations. Both size each kernel to half its
/// local point spacing, so only the placement differs.
inline GaussianScene initialize_scene(const ImageBuffer& image,
                                      const FitConfig& cfg) {
  const int w = image.width, h = image.height;
  const std::int64_t hw = static_cast<std::int64_t>(w) * h;
  const int regions =
      cfg.slic_regions > 0
          ? cfg.slic_regions
          : std::max<int>(64, static_cast<int>(std::llround(hw / 1024.0)));
  const double slic_spacing = std::sqrt(static_cast<double>(hw) / regions);
  // Scale bounds: never below a pixel, never wider than a quarter SLIC cell
  // (keeps the largest kernels from dominating rasterization cost).
  const double max_scale =
      cfg.init_scale > 0 ? cfg.init_scale : std::max(2.0, 0.25 * slic_spacing);
  const double min_scale = cfg.init_scale > 0 ? cfg.init_scale : 1.0;

  std::vector<AllocatedPoint> points;
  if (cfg.init == InitMode::kRandom) {
    Rng rng(mix_seed(cfg.seed, 0x7A11D));
    const float spacing = static_cast<float>(
        std::sqrt(static_cast<double>(hw) / cfg.n_gaussians));
    points.reserve(cfg.n_gaussians);
    for (std::int64_t i = 0; i < cfg.n_gaussians; ++i) {
      const std::int64_t p = static_cast<std::int64_t>(rng.below(hw));
      points.push_back({{static_cast<float>(p % w + 0.5f),
                         static_cast<float>(p / w + 0.5f)},
                        spacing});
    }
  } else {
    const SegmentationMap seg = slic_segment(
        image, regions, cfg.slic_compactness, cfg.slic_iterations, cfg.seed);
    const GradientField grad = sobel(to_grayscale(image));
    const auto ranked = region_variances(seg, grad);
    const std::int64_t n_t = threshold_count(w, h, cfg.alloc);
    std::array<double, 3> ratios;
    if (n_t > cfg.alloc.n0) {
      ratios = dynamic_ratios(cfg.n_gaussians, n_t, cfg.alloc);
    } else {
      // Degenerate schedule window (tiny images): step straight to uniform
      // at the threshold.
      ratios = cfg.n_gaussians >= n_t
                   ? std::array<double, 3>{1.0 / 3, 1.0 / 3, 1.0 / 3}
                   : cfg.alloc.phi;
    }
    points =
        allocate_positions_scaled(seg, ranked, cfg.n_gaussians, ratios, cfg.seed);
  }
  return init_scene_scaled(image, points, min_scale, max_scale);
}

struct FitResult {
  GaussianScene scene;
  History history;
};

/// Overfits a Gaussian scene to one image with the combined MSE + geometry
/// objective. Deterministic for a given config and seed.
inline FitResult fit(const ImageBuffer& image, const FitConfig& cfg) {
  cfg.validate();
  const ImageBuffer target = detail::ensure_rgb(image);
  FitResult out;
  out.scene = initialize_scene(image, cfg);
  GaussianScene& scene = out.scene;
  const std::size_t n = scene.size();

  const GeometryRef geo = make_geometry_ref(target);
  Adam opt_mu(2 * n, cfg.lr_position);
  Adam opt_chol(3 * n, cfg.lr_cholesky);
  Adam opt_color(3 * n, cfg.lr_color);

  for (int it = 1; it <= cfg.iterations; ++it) {
    const ImageBuffer recon = render(scene);
    const LossReport loss = train_loss(recon, target, cfg.lambda_g, &geo);
    const SceneGradients grads = render_backward(scene, loss.d_image);

    opt_mu.step(scene.mu, grads.d_mu);
    opt_chol.step(scene.chol, grads.d_chol);
    opt_color.step(scene.color, grads.d_color);
    detail::project_scene(scene);

    if (it % cfg.log_interval == 0 || it == cfg.iterations) {
      HistoryRow row;
      row.iteration = it;
      row.total = loss.total;
      row.mse = loss.mse;
      row.geometry = loss.geometry;
      row.psnr = psnr(recon.clamped01(), target);
      out.history.push_back(row);
    }
  }
  return out;
}

struct FinetuneResult {
  QuantizedScene quantized;
  QuantizerState state;
  History history;
};

/// Quantization-aware fine-tuning: every iteration re-quantizes the scene,
/// renders the dequantized parameters, and backpropagates through the
/// straight-through estimators into the raw parameters, the per-Gaussian
/// quantizer ranges and soft bitwidths, and the color codebooks.
inline FinetuneResult finetune(const GaussianScene& input,
                               const ImageBuffer& image, const FitConfig& cfg) {
  cfg.validate();
  if (input.size() == 0)
    throw std::invalid_argument("finetune: empty scene");
  const ImageBuffer target = detail::ensure_rgb(image);
  const GeometryRef geo = make_geometry_ref(target);

  GaussianScene scene = input;
  FinetuneResult out;
  QuantizerState& st = out.state;
  st = init_quantizer(scene, cfg.quant, mix_seed(cfg.seed, 0x0F17E));
  const std::size_t n = scene.size();

  Adam opt_mu(2 * n, cfg.lr_position);
  Adam opt_chol(3 * n, cfg.lr_cholesky);
  Adam opt_color(3 * n, cfg.lr_color);
  Adam opt_vmin(n, cfg.lr_quantizer);
  Adam opt_vmax(n, cfg.lr_quantizer);
  Adam opt_bits(n, cfg.lr_quantizer);
  Adam opt_book(st.book.entries.size(), cfg.lr_quantizer);

  for (int it = 1; it <= cfg.tune_iterations; ++it) {
    const QuantizeResult qr = quantize_scene(scene, st);
    const ImageBuffer recon = render(qr.dequantized);
    const LossReport loss =
        tune_loss(recon, target, cfg.lambda_g, cfg.lambda_b, qr.loss_b,
                  cfg.lambda_r, qr.loss_r, &geo);
    const SceneGradients upstream = render_backward(qr.dequantized, loss.d_image);
    const QuantizerGrads qg =
        quantize_backward(scene, st, qr, upstream, cfg.lambda_b, cfg.lambda_r);

    opt_mu.step(scene.mu, qg.d_scene.d_mu);
    opt_chol.step(scene.chol, qg.d_scene.d_chol);
    opt_color.step(scene.color, qg.d_scene.d_color);
    opt_vmin.step(st.cov_vmin, qg.d_vmin);
    opt_vmax.step(st.cov_vmax, qg.d_vmax);
    opt_bits.step(st.bits, qg.d_bits);
    opt_book.step(st.book.entries, qg.d_book);

    detail::project_scene(scene);
    for (std::size_t i = 0; i < n; ++i) {
      st.bits[i] = std::clamp(st.bits[i], static_cast<float>(st.cfg.bit_min),
                              static_cast<float>(st.cfg.bit_max));
      if (st.cov_vmax[i] - st.cov_vmin[i] < 1e-6f)
        st.cov_vmax[i] = st.cov_vmin[i] + 1e-6f;
    }
    // Entries live on the serialization grid so the colors rendered during
    // tuning are exactly the ones a decoder reconstructs.
    for (float& e : st.book.entries) e = book_snap(e);

    if (it % cfg.log_interval == 0 || it == cfg.tune_iterations) {
      HistoryRow row;
      row.iteration = it;
      row.total = loss.total;
      row.mse = loss.mse;
      row.geometry = loss.geometry;
      row.bitwidth = loss.bitwidth;
      row.residual = loss.residual;
      row.psnr = psnr(recon.clamped01(), target);
      out.history.push_back(row);
    }
  }

  const QuantizeResult final_qr = quantize_scene(scene, st);
  out.quantized = canonicalize(st, final_qr, scene.width, scene.height);
  return out;
}

}  // namespace gs2d
