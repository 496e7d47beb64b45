#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "gs2d/image.hpp"
#include "gs2d/parallel.hpp"
#include "gs2d/rng.hpp"

namespace gs2d {

struct SegmentationMap {
  int width = 0;
  int height = 0;
  int region_count = 0;
  std::vector<std::int32_t> labels;  // one per pixel, 0..region_count-1
  std::vector<std::vector<std::int32_t>> region_pixels;  // pixel index y*w+x
};

namespace detail {

inline double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

inline double lab_f(double t) {
  constexpr double d = 6.0 / 29.0;
  return t > d * d * d ? std::cbrt(t) : t / (3.0 * d * d) + 4.0 / 29.0;
}

inline void rgb_to_lab(double r, double g, double b, double* lab) {
  const double rl = srgb_to_linear(r), gl = srgb_to_linear(g),
               bl = srgb_to_linear(b);
  const double x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
  const double y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
  const double z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl;
  const double fx = lab_f(x / 0.95047), fy = lab_f(y), fz = lab_f(z / 1.08883);
  lab[0] = 116.0 * fy - 16.0;
  lab[1] = 500.0 * (fx - fy);
  lab[2] = 200.0 * (fy - fz);
}

}  // namespace detail

/// SLIC superpixels. Cluster centers start on a grid with spacing
/// S = sqrt(H*W/target_regions), are nudged to the lowest-gradient spot in a
/// 3x3 window, then k-means runs in (lab, x*m/S, y*m/S) space with each
/// center searching a 2S x 2S window. A final pass merges 4-connected
/// fragments smaller than S^2/4 into their dominant neighbor.
///
/// Deterministic for a given seed and independent of thread count.
inline SegmentationMap slic_segment(const ImageBuffer& img, int target_regions,
                                    double compactness, int iterations,
                                    std::uint64_t seed) {
  (void)seed;  // segmentation itself is deterministic; kept for interface
               // stability with the seeded pipeline
  const int w = img.width, h = img.height;
  const std::int64_t n_pixels = static_cast<std::int64_t>(w) * h;
  if (target_regions < 1)
    throw std::invalid_argument("slic_segment: target_regions must be >= 1");
  if (target_regions > n_pixels)
    throw std::invalid_argument(
        "slic_segment: target_regions exceeds the pixel count");
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("slic_segment: expected 1 or 3 channels");

  // Per-pixel color features. Grayscale uses intensity scaled to the L range.
  std::vector<double> feat(static_cast<std::size_t>(n_pixels) * 3);
  const std::size_t plane = img.plane_size();
  parallel_for(0, n_pixels, [&](std::int64_t p) {
    if (img.channels == 3) {
      detail::rgb_to_lab(img.data[p], img.data[plane + p],
                         img.data[2 * plane + p], &feat[3 * p]);
    } else {
      feat[3 * p] = 100.0 * img.data[p];
      feat[3 * p + 1] = 0.0;
      feat[3 * p + 2] = 0.0;
    }
  });

  const double S = std::sqrt(static_cast<double>(n_pixels) / target_regions);
  const int nx = std::max(1, static_cast<int>(std::lround(w / S)));
  const int ny = std::max(1, static_cast<int>(std::lround(h / S)));
  const int n_centers = nx * ny;

  struct Center {
    double l, a, b, x, y;
  };
  std::vector<Center> centers(n_centers);

  const GradientField grad = sobel(to_grayscale(img));
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      double cx = (i + 0.5) * w / nx;
      double cy = (j + 0.5) * h / ny;
      int px = std::clamp(static_cast<int>(cx), 0, w - 1);
      int py = std::clamp(static_cast<int>(cy), 0, h - 1);
      if (S >= 2.0) {
        // Move to the strictly lowest-gradient pixel in the 3x3 window;
        // centers that do not move keep their continuous grid position.
        // Skipped for S < 2 where the window would leave the grid cell.
        int bx = px, by = py;
        double best = grad.magnitude[static_cast<std::size_t>(py) * w + px];
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int qx = px + dx, qy = py + dy;
            if (qx < 0 || qy < 0 || qx >= w || qy >= h) continue;
            const double m = grad.magnitude[static_cast<std::size_t>(qy) * w + qx];
            if (m < best) {
              best = m;
              bx = qx;
              by = qy;
            }
          }
        if (bx != px || by != py) {
          px = bx;
          py = by;
          cx = px + 0.5;
          cy = py + 0.5;
        }
      }
      Center& c = centers[j * nx + i];
      const std::size_t p = static_cast<std::size_t>(py) * w + px;
      c.l = feat[3 * p];
      c.a = feat[3 * p + 1];
      c.b = feat[3 * p + 2];
      c.x = cx;
      c.y = cy;
    }

  std::vector<std::int32_t> labels(n_pixels, -1);
  const double ms = compactness / S;

  // Spatial bins of width S; a center within Chebyshev distance S of a pixel
  // is at most one bin away.
  const int nbx = std::max(1, static_cast<int>(std::ceil(w / S)));
  const int nby = std::max(1, static_cast<int>(std::ceil(h / S)));
  std::vector<std::vector<std::int32_t>> bins(
      static_cast<std::size_t>(nbx) * nby);

  for (int iter = 0; iter < iterations; ++iter) {
    for (auto& b : bins) b.clear();
    for (int c = 0; c < n_centers; ++c) {
      const int bx = std::clamp(static_cast<int>(centers[c].x / S), 0, nbx - 1);
      const int by = std::clamp(static_cast<int>(centers[c].y / S), 0, nby - 1);
      bins[static_cast<std::size_t>(by) * nbx + bx].push_back(c);
    }

    parallel_for(0, n_pixels, [&](std::int64_t p) {
      const int x = static_cast<int>(p % w), y = static_cast<int>(p / w);
      const double px = x + 0.5, py = y + 0.5;
      const int bx = std::clamp(static_cast<int>(px / S), 0, nbx - 1);
      const int by = std::clamp(static_cast<int>(py / S), 0, nby - 1);
      double best = std::numeric_limits<double>::infinity();
      std::int32_t best_c = labels[p];
      for (int jb = std::max(0, by - 1); jb <= std::min(nby - 1, by + 1); ++jb)
        for (int ib = std::max(0, bx - 1); ib <= std::min(nbx - 1, bx + 1);
             ++ib)
          for (const std::int32_t c :
               bins[static_cast<std::size_t>(jb) * nbx + ib]) {
            const Center& ctr = centers[c];
            const double dxx = px - ctr.x, dyy = py - ctr.y;
            if (std::abs(dxx) > S || std::abs(dyy) > S) continue;
            const double dl = feat[3 * p] - ctr.l;
            const double da = feat[3 * p + 1] - ctr.a;
            const double db = feat[3 * p + 2] - ctr.b;
            const double d2 =
                dl * dl + da * da + db * db + ms * ms * (dxx * dxx + dyy * dyy);
            if (d2 < best) {
              best = d2;
              best_c = c;
            }
          }
      labels[p] = best_c;
    });

    // Update step, single-threaded for a deterministic merge order.
    std::vector<double> acc(static_cast<std::size_t>(n_centers) * 5, 0.0);
    std::vector<std::int64_t> cnt(n_centers, 0);
    for (std::int64_t p = 0; p < n_pixels; ++p) {
      const std::int32_t c = labels[p];
      if (c < 0) continue;
      double* a = &acc[static_cast<std::size_t>(c) * 5];
      a[0] += feat[3 * p];
      a[1] += feat[3 * p + 1];
      a[2] += feat[3 * p + 2];
      a[3] += (p % w) + 0.5;
      a[4] += (p / w) + 0.5;
      ++cnt[c];
    }
    for (int c = 0; c < n_centers; ++c) {
      if (!cnt[c]) continue;  // empty cluster keeps its previous center
      const double inv = 1.0 / cnt[c];
      double* a = &acc[static_cast<std::size_t>(c) * 5];
      centers[c] = {a[0] * inv, a[1] * inv, a[2] * inv, a[3] * inv, a[4] * inv};
    }
  }

  // Connectivity enforcement: 4-connected components of the label map;
  // fragments below S^2/4 pixels join the neighboring component they share
  // the longest boundary with.
  std::vector<std::int32_t> comp(n_pixels, -1);
  std::vector<std::int64_t> comp_size;
  std::vector<std::int64_t> stack;
  for (std::int64_t p0 = 0; p0 < n_pixels; ++p0) {
    if (comp[p0] >= 0) continue;
    const std::int32_t cid = static_cast<std::int32_t>(comp_size.size());
    std::int64_t size = 0;
    stack.push_back(p0);
    comp[p0] = cid;
    while (!stack.empty()) {
      const std::int64_t p = stack.back();
      stack.pop_back();
      ++size;
      const int x = static_cast<int>(p % w), y = static_cast<int>(p / w);
      const std::int64_t nbs[4] = {x > 0 ? p - 1 : -1, x < w - 1 ? p + 1 : -1,
                                   y > 0 ? p - w : -1, y < h - 1 ? p + w : -1};
      for (const std::int64_t q : nbs)
        if (q >= 0 && comp[q] < 0 && labels[q] == labels[p]) {
          comp[q] = cid;
          stack.push_back(q);
        }
    }
    comp_size.push_back(size);
  }

  const int n_comp = static_cast<int>(comp_size.size());
  std::vector<std::int32_t> parent(n_comp);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::int32_t c) {
    while (parent[c] != c) c = parent[c] = parent[parent[c]];
    return c;
  };

  const std::int64_t min_size =
      std::max<std::int64_t>(1, static_cast<std::int64_t>(S * S / 4.0));
  if (min_size > 1) {
    // Component pixel lists, in scan order.
    std::vector<std::vector<std::int64_t>> comp_pixels(n_comp);
    for (std::int64_t p = 0; p < n_pixels; ++p)
      comp_pixels[comp[p]].push_back(p);

    std::vector<std::int64_t> contact(n_comp, 0);
    for (std::int32_t c = 0; c < n_comp; ++c) {
      if (comp_size[find(c)] >= min_size) continue;
      std::vector<std::int32_t> touched;
      const std::int32_t my_root = find(c);
      for (const std::int64_t p : comp_pixels[c]) {
        const int x = static_cast<int>(p % w), y = static_cast<int>(p / w);
        const std::int64_t nbs[4] = {
            x > 0 ? p - 1 : -1, x < w - 1 ? p + 1 : -1, y > 0 ? p - w : -1,
            y < h - 1 ? p + w : -1};
        for (const std::int64_t q : nbs) {
          if (q < 0) continue;
          const std::int32_t r = find(comp[q]);
          if (r == my_root) continue;
          if (contact[r] == 0) touched.push_back(r);
          ++contact[r];
        }
      }
      std::int32_t best = -1;
      std::int64_t best_contact = -1;
      for (const std::int32_t r : touched)
        if (contact[r] > best_contact ||
            (contact[r] == best_contact && r < best)) {
          best = r;
          best_contact = contact[r];
        }
      for (const std::int32_t r : touched) contact[r] = 0;
      if (best >= 0) {
        parent[my_root] = best;
        comp_size[best] += comp_size[my_root];
      }
    }
  }

  // Compact final labels in order of first appearance.
  SegmentationMap seg;
  seg.width = w;
  seg.height = h;
  seg.labels.assign(n_pixels, -1);
  std::vector<std::int32_t> remap(n_comp, -1);
  std::int32_t next = 0;
  for (std::int64_t p = 0; p < n_pixels; ++p) {
    const std::int32_t r = find(comp[p]);
    if (remap[r] < 0) remap[r] = next++;
    seg.labels[p] = remap[r];
  }
  seg.region_count = next;
  seg.region_pixels.resize(next);
  for (std::int64_t p = 0; p < n_pixels; ++p)
    seg.region_pixels[seg.labels[p]].push_back(static_cast<std::int32_t>(p));
  return seg;
}

/// Population variance of the gradient magnitude over each region, sorted by
/// descending variance; ties broken by ascending region id.
inline std::vector<std::pair<std::int32_t, double>> region_variances(
    const SegmentationMap& seg, const GradientField& grad) {
  if (seg.width != grad.width || seg.height != grad.height)
    throw std::invalid_argument("region_variances: dimension mismatch");
  std::vector<std::pair<std::int32_t, double>> out;
  out.reserve(seg.region_count);
  for (std::int32_t r = 0; r < seg.region_count; ++r) {
    const auto& pix = seg.region_pixels[r];
    double mean = 0.0;
    for (const std::int32_t p : pix) mean += grad.magnitude[p];
    mean /= static_cast<double>(pix.size());
    double var = 0.0;
    for (const std::int32_t p : pix) {
      const double d = grad.magnitude[p] - mean;
      var += d * d;
    }
    var /= static_cast<double>(pix.size());
    out.emplace_back(r, var);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  return out;
}

/// Debug visualization: each region gets a random palette color.
inline ImageBuffer segmentation_debug_image(const SegmentationMap& seg,
                                            std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0xDEB46));
  std::vector<float> palette(static_cast<std::size_t>(seg.region_count) * 3);
  for (float& v : palette) v = static_cast<float>(rng.uniform(0.1, 1.0));
  ImageBuffer img(seg.width, seg.height, 3);
  const std::size_t plane = img.plane_size();
  for (std::size_t p = 0; p < plane; ++p) {
    const std::int32_t r = seg.labels[p];
    img.data[p] = palette[3 * r];
    img.data[plane + p] = palette[3 * r + 1];
    img.data[2 * plane + p] = palette[3 * r + 2];
  }
  return img;
}

}  // namespace gs2d
