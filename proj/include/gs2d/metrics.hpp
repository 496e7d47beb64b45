#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "gs2d/image.hpp"

namespace gs2d {

/// 10*log10(1/mse) on [0,1]-valued images; identical inputs report +infinity.
inline double psnr(const ImageBuffer& a, const ImageBuffer& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("psnr: dimension mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(a.data.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(size);
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - (size - 1) / 2.0;
    w[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

/// Separable valid-region convolution of one plane.
inline std::vector<double> conv_valid(const std::vector<double>& img, int w,
                                      int h, const std::vector<double>& win) {
  const int k = static_cast<int>(win.size());
  const int ow = w - k + 1, oh = h - k + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < k; ++i) s += win[i] * img[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(ow) * oh);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < k; ++i) s += win[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

/// 2x2 mean pooling, trailing odd row/column dropped.
inline void downsample2(std::vector<double>& img, int& w, int& h) {
  const int ow = w / 2, oh = h / 2;
  std::vector<double> out(static_cast<std::size_t>(ow) * oh);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x)
      out[static_cast<std::size_t>(y) * ow + x] =
          0.25 * (img[static_cast<std::size_t>(2 * y) * w + 2 * x] +
                  img[static_cast<std::size_t>(2 * y) * w + 2 * x + 1] +
                  img[static_cast<std::size_t>(2 * y + 1) * w + 2 * x] +
                  img[static_cast<std::size_t>(2 * y + 1) * w + 2 * x + 1]);
  img = std::move(out);
  w = ow;
  h = oh;
}

struct SsimMeans {
  double ssim = 0.0;
  double cs = 0.0;
};

inline SsimMeans ssim_plane(const std::vector<double>& p1,
                            const std::vector<double>& p2, int w, int h,
                            const std::vector<double>& win) {
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const std::size_t n = p1.size();
  std::vector<double> sq1(n), sq2(n), pr(n);
  for (std::size_t i = 0; i < n; ++i) {
    sq1[i] = p1[i] * p1[i];
    sq2[i] = p2[i] * p2[i];
    pr[i] = p1[i] * p2[i];
  }
  const auto mu1 = conv_valid(p1, w, h, win);
  const auto mu2 = conv_valid(p2, w, h, win);
  const auto m11 = conv_valid(sq1, w, h, win);
  const auto m22 = conv_valid(sq2, w, h, win);
  const auto m12 = conv_valid(pr, w, h, win);
  double ssim_sum = 0.0, cs_sum = 0.0;
  for (std::size_t i = 0; i < mu1.size(); ++i) {
    const double v1 = m11[i] - mu1[i] * mu1[i];
    const double v2 = m22[i] - mu2[i] * mu2[i];
    const double cov = m12[i] - mu1[i] * mu2[i];
    const double cs = (2.0 * cov + c2) / (v1 + v2 + c2);
    const double lum = (2.0 * mu1[i] * mu2[i] + c1) /
                       (mu1[i] * mu1[i] + mu2[i] * mu2[i] + c1);
    ssim_sum += lum * cs;
    cs_sum += cs;
  }
  return {ssim_sum / mu1.size(), cs_sum / mu1.size()};
}

}  // namespace detail

struct MsSsimResult {
  double value = 0.0;
  int scales_used = 0;
};

/// Multi-scale SSIM: 11x11 Gaussian window (sigma 1.5), per-channel, scales
/// chained by 2x2 mean pooling, exponents (0.0448, 0.2856, 0.3001, 0.2363,
/// 0.1333). Images smaller than 11*2^4 on a side use fewer scales with the
/// leading weights renormalized; scales_used records the count.
inline MsSsimResult ms_ssim_detail(const ImageBuffer& a, const ImageBuffer& b) {
  if (!a.same_shape(b))
    throw std::invalid_argument("ms_ssim: dimension mismatch");
  constexpr int kWin = 11;
  constexpr std::array<double, 5> kWeights{0.0448, 0.2856, 0.3001, 0.2363,
                                           0.1333};
  int levels = 0;
  for (int dim = std::min(a.width, a.height); dim >= kWin && levels < 5;
       dim /= 2)
    ++levels;
  if (levels == 0)
    throw std::invalid_argument("ms_ssim: image too small for an 11x11 window");
  double wsum = 0.0;
  for (int l = 0; l < levels; ++l) wsum += kWeights[l];

  const auto win = detail::gaussian_window(kWin, 1.5);
  const std::size_t plane = a.plane_size();

  double value = 0.0;
  for (int ch = 0; ch < a.channels; ++ch) {
    std::vector<double> p1(a.data.begin() + ch * plane,
                           a.data.begin() + (ch + 1) * plane);
    std::vector<double> p2(b.data.begin() + ch * plane,
                           b.data.begin() + (ch + 1) * plane);
    int w = a.width, h = a.height;
    double channel_value = 1.0;
    for (int l = 0; l < levels; ++l) {
      const auto m = detail::ssim_plane(p1, p2, w, h, win);
      // Negative structural terms would make fractional powers undefined;
      // clamp at zero (drives the product to zero for anti-correlated pairs).
      const double term = l + 1 == levels ? std::max(m.ssim, 0.0)
                                          : std::max(m.cs, 0.0);
      channel_value *= std::pow(term, kWeights[l] / wsum);
      if (l + 1 < levels) {
        int w2 = w, h2 = h;
        detail::downsample2(p1, w2, h2);
        detail::downsample2(p2, w, h);
      }
    }
    value += channel_value;
  }
  MsSsimResult out;
  out.value = value / a.channels;
  out.scales_used = levels;
  return out;
}

inline double ms_ssim(const ImageBuffer& a, const ImageBuffer& b) {
  return ms_ssim_detail(a, b).value;
}

// --- Bjontegaard deltas ------------------------------------------------------

struct RdPoint {
  double bpp = 0.0;
  double quality = 0.0;  // dB for PSNR-based deltas
};

namespace detail {

/// Least-squares cubic fit of y(x) with a centered abscissa; returns
/// coefficients of 1, (x-c), (x-c)^2, (x-c)^3 plus the center c.
struct Cubic {
  std::array<double, 4> coef{};
  double center = 0.0;

  double integral(double lo, double hi) const {
    auto anti = [&](double x) {
      const double t = x - center;
      return coef[0] * t + coef[1] * t * t / 2 + coef[2] * t * t * t / 3 +
             coef[3] * t * t * t * t / 4;
    };
    return anti(hi) - anti(lo);
  }
};

inline Cubic fit_cubic(const std::vector<double>& xs,
                       const std::vector<double>& ys) {
  Cubic c;
  const std::size_t n = xs.size();
  for (const double x : xs) c.center += x;
  c.center /= static_cast<double>(n);

  double a[4][5] = {};
  for (std::size_t i = 0; i < n; ++i) {
    const double t = xs[i] - c.center;
    const double pw[4] = {1.0, t, t * t, t * t * t};
    for (int r = 0; r < 4; ++r) {
      for (int cc = 0; cc < 4; ++cc) a[r][cc] += pw[r] * pw[cc];
      a[r][4] += pw[r] * ys[i];
    }
  }
  // Gaussian elimination with partial pivoting on the 4x4 normal equations.
  for (int col = 0; col < 4; ++col) {
    int piv = col;
    for (int r = col + 1; r < 4; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    if (std::abs(a[piv][col]) < 1e-30)
      throw std::invalid_argument("bd fit: degenerate curve");
    if (piv != col)
      for (int cc = 0; cc < 5; ++cc) std::swap(a[piv][cc], a[col][cc]);
    for (int r = 0; r < 4; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (int cc = col; cc < 5; ++cc) a[r][cc] -= f * a[col][cc];
    }
  }
  for (int r = 0; r < 4; ++r) c.coef[r] = a[r][4] / a[r][r];
  return c;
}

inline void validate_curve(const std::vector<RdPoint>& pts, const char* who) {
  if (pts.size() < 4)
    throw std::invalid_argument(std::string(who) + ": need at least 4 points");
  for (const auto& p : pts) {
    if (!(p.bpp > 0.0))
      throw std::invalid_argument(std::string(who) + ": bpp must be positive");
  }
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j)
      if (pts[i].quality == pts[j].quality)
        throw std::invalid_argument(std::string(who) +
                                    ": quality values must be distinct");
}

}  // namespace detail

/// Classic Bjontegaard rate delta: cubic fits of log10(bpp) over quality,
/// averaged over the overlapping quality interval; positive means the test
/// curve spends more rate than the reference.
inline double bd_rate(const std::vector<RdPoint>& reference,
                      const std::vector<RdPoint>& test) {
  detail::validate_curve(reference, "bd_rate");
  detail::validate_curve(test, "bd_rate");
  auto fit = [](const std::vector<RdPoint>& pts) {
    std::vector<double> q, lr;
    for (const auto& p : pts) {
      q.push_back(p.quality);
      lr.push_back(std::log10(p.bpp));
    }
    return detail::fit_cubic(q, lr);
  };
  auto qrange = [](const std::vector<RdPoint>& pts) {
    double lo = pts[0].quality, hi = pts[0].quality;
    for (const auto& p : pts) {
      lo = std::min(lo, p.quality);
      hi = std::max(hi, p.quality);
    }
    return std::pair{lo, hi};
  };
  const auto [rlo, rhi] = qrange(reference);
  const auto [tlo, thi] = qrange(test);
  const double lo = std::max(rlo, tlo), hi = std::min(rhi, thi);
  if (!(hi > lo)) throw std::domain_error("bd_rate: no quality overlap");
  const detail::Cubic fr = fit(reference), ft = fit(test);
  const double delta = (ft.integral(lo, hi) - fr.integral(lo, hi)) / (hi - lo);
  return (std::pow(10.0, delta) - 1.0) * 100.0;
}

/// Dual delta: quality fitted over log10(bpp), averaged over the overlapping
/// log-rate interval; positive means the test curve is better at equal rate.
inline double bd_psnr(const std::vector<RdPoint>& reference,
                      const std::vector<RdPoint>& test) {
  detail::validate_curve(reference, "bd_psnr");
  detail::validate_curve(test, "bd_psnr");
  auto fit = [](const std::vector<RdPoint>& pts) {
    std::vector<double> lr, q;
    for (const auto& p : pts) {
      lr.push_back(std::log10(p.bpp));
      q.push_back(p.quality);
    }
    return detail::fit_cubic(lr, q);
  };
  auto rrange = [](const std::vector<RdPoint>& pts) {
    double lo = std::log10(pts[0].bpp), hi = lo;
    for (const auto& p : pts) {
      lo = std::min(lo, std::log10(p.bpp));
      hi = std::max(hi, std::log10(p.bpp));
    }
    return std::pair{lo, hi};
  };
  const auto [rlo, rhi] = rrange(reference);
  const auto [tlo, thi] = rrange(test);
  const double lo = std::max(rlo, tlo), hi = std::min(rhi, thi);
  if (!(hi > lo)) throw std::domain_error("bd_psnr: no rate overlap");
  const detail::Cubic fr = fit(reference), ft = fit(test);
  return (ft.integral(lo, hi) - fr.integral(lo, hi)) / (hi - lo);
}

}  // namespace gs2d
