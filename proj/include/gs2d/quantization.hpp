#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "gs2d/rng.hpp"
#include "gs2d/splat.hpp"

namespace gs2d {

/// Round to nearest, ties to even. Spelled out rather than relying on the
/// floating-point environment so results are identical everywhere.
inline double round_half_even(double x) {
  const double f = std::floor(x);
  const double r = x - f;
  if (r > 0.5) return f + 1.0;
  if (r < 0.5) return f;
  return std::fmod(f, 2.0) == 0.0 ? f : f + 1.0;
}

/// Uniform quantizer range [v_min, v_max] with bitwidth b. For the plain
/// (fixed-width) quantizer b holds the integer bitwidth; for the adaptive
/// quantizer b is the learnable soft bitwidth and the forward pass rounds it.
struct LsqParams {
  double v_min = 0.0;
  double v_max = 1.0;
  double b = 8.0;
};

inline int hard_bitwidth(double b) {
  return static_cast<int>(round_half_even(b));
}

struct LsqResult {
  std::uint32_t code = 0;
  double v_hat = 0.0;
};

/// code = clamp(round((v - Z)/s), 0, Q), v_hat = s*code + Z, with Z = v_min,
/// s = (v_max - v_min)/Q, Q = 2^B - 1. A degenerate range (v_max == v_min)
/// maps everything to code 0 / v_min.
inline LsqResult lsq_forward(double v, const LsqParams& p) {
  const int bits = hard_bitwidth(p.b);
  if (bits < 1 || bits > 30)
    throw std::invalid_argument("lsq_forward: bitwidth outside [1, 30]");
  if (p.v_max < p.v_min)
    throw std::invalid_argument("lsq_forward: v_max < v_min");
  const double q = static_cast<double>((1u << bits) - 1);
  const double s = (p.v_max - p.v_min) / q;
  if (s <= 0.0) return {0, p.v_min};
  const double t = std::clamp(round_half_even((v - p.v_min) / s), 0.0, q);
  return {static_cast<std::uint32_t>(t), s * t + p.v_min};
}

struct LsqGrads {
  double d_v_min = 0.0;
  double d_v_max = 0.0;
  double d_b = 0.0;
  double d_v = 0.0;  // straight-through factor: 1 in range, 0 outside
};

/// Straight-through gradients of the dequantized value:
///   in range (v_min <= v <= v_max):
///     d/dv_max = t/Q - (v - v_min)/(sQ)
///     d/dv_min = -t/Q + (v - v_min)/(sQ)
///     d/db     = (2^B ln2 / Q) * (v - v_hat)
///   out of range:
///     d/dv_max = t/Q,  d/dv_min = 1 - t/Q,  d/db = (2^B ln2 / Q) * (-s t)
/// where t is the clamped integer code.
inline LsqGrads lsq_backward(double v, const LsqParams& p) {
  const int bits = hard_bitwidth(p.b);
  if (bits < 1 || bits > 30)
    throw std::invalid_argument("lsq_backward: bitwidth outside [1, 30]");
  const double q = static_cast<double>((1u << bits) - 1);
  const double s = (p.v_max - p.v_min) / q;
  LsqGrads g;
  if (s <= 0.0) return g;
  const LsqResult f = lsq_forward(v, p);
  const double t = static_cast<double>(f.code);
  const double pow_ln = std::ldexp(std::numbers::ln2, bits) / q;  // 2^B ln2 / Q
  if (v >= p.v_min && v <= p.v_max) {
    const double frac = (v - p.v_min) / (s * q);
    g.d_v_max = t / q - frac;
    g.d_v_min = -t / q + frac;
    g.d_b = pow_ln * (v - f.v_hat);
    g.d_v = 1.0;
  } else {
    g.d_v_max = t / q;
    g.d_v_min = 1.0 - t / q;
    g.d_b = pow_ln * (-s * t);
    g.d_v = 0.0;
  }
  return g;
}

/// Mean hard bitwidth over the set; each soft bitwidth sees a 1/N gradient
/// through the straight-through estimator.
inline double bitwidth_loss(const std::vector<LsqParams>& params) {
  if (params.empty())
    throw std::invalid_argument("bitwidth_loss: empty parameter list");
  double sum = 0.0;
  for (const auto& p : params) sum += hard_bitwidth(p.b);
  return sum / static_cast<double>(params.size());
}

inline double bitwidth_loss(const std::vector<float>& soft_bits) {
  if (soft_bits.empty())
    throw std::invalid_argument("bitwidth_loss: empty parameter list");
  double sum = 0.0;
  for (const float b : soft_bits) sum += hard_bitwidth(b);
  return sum / static_cast<double>(soft_bits.size());
}

// --- Residual vector quantization for colors ------------------------------

/// Serialization grid for codebook entries: 16-bit fixed point in [-4, 4).
inline constexpr double kBookLo = -4.0;
inline constexpr double kBookStep = 8.0 / 65536.0;

inline std::uint16_t book_code(double v) {
  return static_cast<std::uint16_t>(
      std::clamp(round_half_even((v - kBookLo) / kBookStep), 0.0, 65535.0));
}

inline float book_decode(std::uint16_t c) {
  return static_cast<float>(kBookLo + c * kBookStep);
}

inline float book_snap(double v) { return book_decode(book_code(v)); }

/// Stage-wise codebooks; entries live on the 16-bit serialization grid so the
/// colors used during tuning match the decoded ones exactly.
struct RvqCodebook {
  int stages = 0;
  int k = 0;
  std::vector<float> entries;  // stages * k * 3, stage-major

  const float* entry(int stage, int idx) const {
    return entries.data() + (static_cast<std::size_t>(stage) * k + idx) * 3;
  }
  float* entry(int stage, int idx) {
    return entries.data() + (static_cast<std::size_t>(stage) * k + idx) * 3;
  }
};

/// Stage-wise k-means with seeded k-means++ starts: stage 0 fits the colors,
/// each later stage fits the residuals so far. Ties go to the lowest index;
/// empty clusters keep their previous centroid.
inline RvqCodebook rvq_fit(const std::vector<float>& colors, int stages, int k,
                           int iterations, std::uint64_t seed) {
  if (colors.empty() || colors.size() % 3 != 0)
    throw std::invalid_argument("rvq_fit: colors must be a non-empty 3-vector list");
  if (stages < 1 || k < 1) throw std::invalid_argument("rvq_fit: bad config");
  const std::size_t n = colors.size() / 3;

  RvqCodebook book;
  book.stages = stages;
  book.k = k;
  book.entries.assign(static_cast<std::size_t>(stages) * k * 3, 0.f);

  std::vector<double> residual(colors.begin(), colors.end());
  std::vector<double> centroids(static_cast<std::size_t>(k) * 3);
  std::vector<std::int32_t> assign(n);
  std::vector<double> min_d2(n);

  for (int stage = 0; stage < stages; ++stage) {
    Rng rng(mix_seed(seed, 0x52565100u + static_cast<std::uint64_t>(stage)));

    // k-means++ seeding over the residuals.
    const std::size_t first = rng.below(n);
    for (int c = 0; c < 3; ++c) centroids[c] = residual[3 * first + c];
    for (std::size_t i = 0; i < n; ++i) {
      double d2 = 0;
      for (int c = 0; c < 3; ++c) {
        const double d = residual[3 * i + c] - centroids[c];
        d2 += d * d;
      }
      min_d2[i] = d2;
      assign[i] = 0;
    }
    for (int j = 1; j < k; ++j) {
      double total = 0;
      for (std::size_t i = 0; i < n; ++i) total += min_d2[i];
      std::size_t pick = 0;
      if (total > 0) {
        double u = rng.uniform() * total;
        for (std::size_t i = 0; i < n; ++i) {
          u -= min_d2[i];
          if (u <= 0) {
            pick = i;
            break;
          }
        }
      } else {
        pick = rng.below(n);
      }
      for (int c = 0; c < 3; ++c)
        centroids[3 * j + c] = residual[3 * pick + c];
      for (std::size_t i = 0; i < n; ++i) {
        double d2 = 0;
        for (int c = 0; c < 3; ++c) {
          const double d = residual[3 * i + c] - centroids[3 * j + c];
          d2 += d * d;
        }
        if (d2 < min_d2[i]) {
          min_d2[i] = d2;
          assign[i] = j;
        }
      }
    }

    std::vector<double> acc(static_cast<std::size_t>(k) * 3);
    std::vector<std::int64_t> cnt(k);
    for (int it = 0; it < iterations; ++it) {
      for (std::size_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::int32_t best_j = 0;
        for (int j = 0; j < k; ++j) {
          double d2 = 0;
          for (int c = 0; c < 3; ++c) {
            const double d = residual[3 * i + c] - centroids[3 * j + c];
            d2 += d * d;
          }
          if (d2 < best) {
            best = d2;
            best_j = j;
          }
        }
        assign[i] = best_j;
      }
      std::fill(acc.begin(), acc.end(), 0.0);
      std::fill(cnt.begin(), cnt.end(), 0);
      for (std::size_t i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) acc[3 * assign[i] + c] += residual[3 * i + c];
        ++cnt[assign[i]];
      }
      for (int j = 0; j < k; ++j)
        if (cnt[j])
          for (int c = 0; c < 3; ++c)
            centroids[3 * j + c] = acc[3 * j + c] / cnt[j];
    }

    // Snap to the serialization grid, then peel the residual off.
    for (int j = 0; j < k; ++j)
      for (int c = 0; c < 3; ++c)
        book.entry(stage, j)[c] = book_snap(centroids[3 * j + c]);
    for (std::size_t i = 0; i < n; ++i) {
      const float* e = book.entry(stage, assign[i]);
      for (int c = 0; c < 3; ++c) residual[3 * i + c] -= e[c];
    }
  }
  return book;
}

struct RvqEncodeResult {
  std::vector<std::uint32_t> indices;  // stage-major: stage * n + i
  std::vector<float> quantized;        // 3n
  double loss_r = 0.0;                 // mean squared error over all entries
};

/// Greedy per-stage nearest-centroid on the running residual; quantized color
/// is the sum of the chosen entries. Ties pick the lowest index.
inline RvqEncodeResult rvq_encode(const std::vector<float>& colors,
                                  const RvqCodebook& book) {
  if (colors.size() % 3 != 0)
    throw std::invalid_argument("rvq_encode: colors must be 3-vectors");
  const std::size_t n = colors.size() / 3;
  RvqEncodeResult out;
  out.indices.assign(static_cast<std::size_t>(book.stages) * n, 0);
  out.quantized.assign(3 * n, 0.f);

  double err = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double res[3] = {colors[3 * i], colors[3 * i + 1], colors[3 * i + 2]};
    float q[3] = {0.f, 0.f, 0.f};
    for (int stage = 0; stage < book.stages; ++stage) {
      double best = std::numeric_limits<double>::infinity();
      std::int32_t best_j = 0;
      for (int j = 0; j < book.k; ++j) {
        const float* e = book.entry(stage, j);
        double d2 = 0;
        for (int c = 0; c < 3; ++c) {
          const double d = res[c] - e[c];
          d2 += d * d;
        }
        if (d2 < best) {
          best = d2;
          best_j = j;
        }
      }
      out.indices[static_cast<std::size_t>(stage) * n + i] = best_j;
      const float* e = book.entry(stage, best_j);
      for (int c = 0; c < 3; ++c) {
        res[c] -= e[c];
        q[c] += e[c];
      }
    }
    for (int c = 0; c < 3; ++c) {
      out.quantized[3 * i + c] = q[c];
      const double d = static_cast<double>(q[c]) - colors[3 * i + c];
      err += d * d;
    }
  }
  out.loss_r = n ? err / static_cast<double>(3 * n) : 0.0;
  return out;
}

// --- Whole-scene quantization state ----------------------------------------

struct QuantizerConfig {
  int position_bits = 12;
  double bit_min = 6.0;
  double bit_max = 16.0;
  double init_bitwidth = 8.0;
  int rvq_stages = 2;
  int rvq_k = 256;
  int rvq_iterations = 10;
};

/// Learnable quantizer state during fine-tuning: a shared fixed-range
/// position quantizer, one (v_min, v_max, soft bitwidth) triple per Gaussian
/// covering its three covariance entries, and the color codebooks.
struct QuantizerState {
  QuantizerConfig cfg;
  std::vector<float> cov_vmin, cov_vmax;  // per Gaussian
  std::vector<float> bits;                // per Gaussian soft bitwidth
  RvqCodebook book;

  LsqParams position_params() const {
    return {-1.0, 1.0, static_cast<double>(cfg.position_bits)};
  }
  LsqParams covariance_params(std::size_t i) const {
    return {cov_vmin[i], cov_vmax[i], bits[i]};
  }
};

/// Ranges from each Gaussian's own covariance values, soft bitwidths at the
/// configured start, codebooks fitted to the current colors.
inline QuantizerState init_quantizer(const GaussianScene& scene,
                                     const QuantizerConfig& cfg,
                                     std::uint64_t seed) {
  const std::size_t n = scene.size();
  if (n == 0) throw std::invalid_argument("init_quantizer: empty scene");
  QuantizerState st;
  st.cfg = cfg;
  st.cfg.rvq_k = std::min<int>(cfg.rvq_k, static_cast<int>(n));
  st.cov_vmin.resize(n);
  st.cov_vmax.resize(n);
  st.bits.assign(n, static_cast<float>(cfg.init_bitwidth));
  for (std::size_t i = 0; i < n; ++i) {
    const float* l = &scene.chol[3 * i];
    float lo = std::min({l[0], l[1], l[2]});
    float hi = std::max({l[0], l[1], l[2]});
    if (hi - lo < 1e-6f) {
      lo -= 5e-7f;
      hi += 5e-7f;
    }
    st.cov_vmin[i] = lo;
    st.cov_vmax[i] = hi;
  }
  st.book = rvq_fit(scene.color, st.cfg.rvq_stages, st.cfg.rvq_k,
                    st.cfg.rvq_iterations, seed);
  return st;
}

struct QuantizeResult {
  GaussianScene dequantized;
  std::vector<std::uint16_t> pos_codes;     // 2n
  std::vector<std::uint32_t> cov_codes;     // 3n
  std::vector<std::uint32_t> color_indices; // stage-major
  double loss_b = 0.0;
  double loss_r = 0.0;
};

/// Runs every parameter through its quantizer: positions through the shared
/// fixed-bit quantizer, covariance entries through their Gaussian's adaptive
/// quantizer, colors through the codebooks. The dequantized scene is what
/// rendering and encoding both consume.
inline QuantizeResult quantize_scene(const GaussianScene& scene,
                                     const QuantizerState& st) {
  const std::size_t n = scene.size();
  QuantizeResult out;
  out.dequantized.width = scene.width;
  out.dequantized.height = scene.height;
  out.dequantized.mu.resize(2 * n);
  out.dequantized.chol.resize(3 * n);
  out.pos_codes.resize(2 * n);
  out.cov_codes.resize(3 * n);

  const LsqParams pp = st.position_params();
  for (std::size_t j = 0; j < 2 * n; ++j) {
    const LsqResult r = lsq_forward(scene.mu[j], pp);
    out.pos_codes[j] = static_cast<std::uint16_t>(r.code);
    out.dequantized.mu[j] = static_cast<float>(r.v_hat);
  }

  double bit_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const LsqParams cp = st.covariance_params(i);
    bit_sum += hard_bitwidth(cp.b);
    for (int c = 0; c < 3; ++c) {
      const LsqResult r = lsq_forward(scene.chol[3 * i + c], cp);
      out.cov_codes[3 * i + c] = r.code;
      out.dequantized.chol[3 * i + c] = static_cast<float>(r.v_hat);
    }
  }
  out.loss_b = n ? bit_sum / static_cast<double>(n) : 0.0;

  RvqEncodeResult rvq = rvq_encode(scene.color, st.book);
  out.color_indices = std::move(rvq.indices);
  out.dequantized.color = std::move(rvq.quantized);
  out.loss_r = rvq.loss_r;
  return out;
}

/// Gradients flowing back through the quantizers.
struct QuantizerGrads {
  SceneGradients d_scene;               // to the raw scene parameters
  std::vector<double> d_vmin, d_vmax, d_bits;  // per Gaussian
  std::vector<double> d_book;           // stages * k * 3
};

/// Chains upstream gradients (w.r.t. the dequantized scene) through the
/// straight-through rules, and adds the bitwidth and residual loss terms:
///  - raw values get the straight-through pass (zero when out of range),
///  - per-Gaussian ranges and soft bitwidths get the quantizer derivative,
///  - soft bitwidths additionally get lambda_b / N,
///  - colors get the residual pull lambda_r * 2(c - c_hat)/(3N) and codebook
///    entries the mirrored term.
inline QuantizerGrads quantize_backward(const GaussianScene& scene,
                                        const QuantizerState& st,
                                        const QuantizeResult& qr,
                                        const SceneGradients& upstream,
                                        double lambda_b, double lambda_r) {
  const std::size_t n = scene.size();
  QuantizerGrads g;
  g.d_scene = SceneGradients(n);
  g.d_vmin.assign(n, 0.0);
  g.d_vmax.assign(n, 0.0);
  g.d_bits.assign(n, 0.0);
  g.d_book.assign(st.book.entries.size(), 0.0);

  // Positions: clamped into the fixed range, so the pass-through is always 1.
  for (std::size_t j = 0; j < 2 * n; ++j)
    g.d_scene.d_mu[j] = upstream.d_mu[j];

  const double db_bitloss = n ? lambda_b / static_cast<double>(n) : 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const LsqParams cp = st.covariance_params(i);
    g.d_bits[i] = db_bitloss;
    for (int c = 0; c < 3; ++c) {
      const double v = scene.chol[3 * i + c];
      const double up = upstream.d_chol[3 * i + c];
      const LsqGrads lg = lsq_backward(v, cp);
      g.d_scene.d_chol[3 * i + c] = up * lg.d_v;
      g.d_vmin[i] += up * lg.d_v_min;
      g.d_vmax[i] += up * lg.d_v_max;
      g.d_bits[i] += up * lg.d_b;
    }
  }

  const double res_norm = n ? lambda_r * 2.0 / static_cast<double>(3 * n) : 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) {
      const double diff = static_cast<double>(qr.dequantized.color[3 * i + c]) -
                          scene.color[3 * i + c];
      // Straight-through for the render path plus the commitment pull.
      g.d_scene.d_color[3 * i + c] =
          upstream.d_color[3 * i + c] - res_norm * diff;
      for (int stage = 0; stage < st.book.stages; ++stage) {
        const std::uint32_t idx =
            qr.color_indices[static_cast<std::size_t>(stage) * n + i];
        g.d_book[(static_cast<std::size_t>(stage) * st.book.k + idx) * 3 + c] +=
            res_norm * diff;
      }
    }
  }
  return g;
}

}  // namespace gs2d
