#pragma once

#include <array>
#include <cmath>
#include <deque>
#include <limits>
#include <memory>
#include <vector>

#include "faceforge/core/ops.hpp"
#include "faceforge/data/image.hpp"
#include "faceforge/data/synth.hpp"
#include "faceforge/data/types.hpp"

namespace faceforge::codec {

using data::LandmarkSet;

struct RenderConfig {
  double radius = 4.0;    // disc radius S_l, in pixels
  double softness = 1.0;  // Gaussian edge falloff width; 0 renders hard discs
  enum class ColorMode { sampled, fixed_black };
  ColorMode color_mode = ColorMode::sampled;

  /// The reference radius is 4 at 256x256 and scales linearly with
  /// resolution.
  static RenderConfig for_resolution(int resolution,
                                     ColorMode mode = ColorMode::sampled) {
    RenderConfig cfg;
    cfg.radius = 4.0 * static_cast<double>(resolution) / 256.0;
    cfg.color_mode = mode;
    return cfg;
  }

  void validate() const {
    check(radius > 0, "RenderConfig: radius must be positive");
    check(softness >= 0, "RenderConfig: softness must be non-negative");
  }

  /// Discs influence pixels up to this distance from their center.
  double support() const { return softness > 0 ? radius + 6.0 * softness : radius; }
};

struct LandmarkImage {
  Tensor image;  // same resolution as the source face image
  double radius = 4.0;
  enum class Provenance { rendered, generated };
  Provenance provenance = Provenance::rendered;
  bool clamped = false;  // some input landmark was out of bounds
};

namespace detail {

constexpr double kWhite = 1.0;  // encoding of 255 after normalization

/// Edge profile: 1 inside the disc, then a truncated Gaussian shifted to
/// reach exactly 0 at the support boundary. Continuously differentiable at
/// the disc edge.
inline double disc_alpha(double d, double r, double sigma) {
  if (d <= r) return 1.0;
  if (sigma <= 0) return 0.0;
  double support = r + 6.0 * sigma;
  if (d >= support) return 0.0;
  double z = (d - r) / sigma;
  const double tail = std::exp(-18.0);  // value of the Gaussian at z = 6
  return (std::exp(-0.5 * z * z) - tail) / (1.0 - tail);
}

inline double disc_alpha_dd(double d, double r, double sigma) {
  if (sigma <= 0 || d <= r) return 0.0;
  double support = r + 6.0 * sigma;
  if (d >= support) return 0.0;
  double z = (d - r) / sigma;
  const double tail = std::exp(-18.0);
  return std::exp(-0.5 * z * z) * (-z / sigma) / (1.0 - tail);
}

struct RenderCache {
  int64_t h = 0, w = 0;
  std::vector<int> owner;      // per pixel, -1 = background
  std::vector<double> dist;    // distance to the owning landmark
  std::vector<std::array<img::BilinearTap, LandmarkSet::kPoints>> taps;  // per sample
  std::vector<std::array<bool, 2 * LandmarkSet::kPoints>> coord_clamped;
};

}  // namespace detail

/// Differentiable landmark-image rendering. coords is (136) or (N,136) in
/// (p1,q1,...,p68,q68) order; source is the matching (H,W,3) or (N,H,W,3)
/// face image. Each landmark paints a radius-S_l disc, colored by bilinear
/// sampling of the source at the landmark point (sampled mode) or black;
/// everything else is white. Overlaps resolve to the nearest landmark.
/// Gradients flow to the coordinates when softness > 0; out-of-bounds
/// coordinates are clamped (reported via *clamped) and get zero gradient.
inline ad::Var render_landmark_image_op(const ad::Var& coords, const Tensor& source,
                                        const RenderConfig& cfg, bool* clamped = nullptr) {
  cfg.validate();
  const bool batched = coords->value.ndim() == 2;
  const int64_t n = batched ? coords->value.dim(0) : 1;
  const Tensor src = batched ? source : source.reshaped({1, source.dim(0), source.dim(1), 3});
  const Tensor cds = batched ? coords->value : coords->value.reshaped({1, 136});
  if (cds.dim(1) != 136) throw Error("render: coords must have 136 entries per sample");
  if (src.dim(0) != n || src.dim(3) != 3) throw Error("render: source/coords batch mismatch");
  const int64_t h = src.dim(1), w = src.dim(2);

  const double r = cfg.radius, sigma = cfg.softness, sup = cfg.support();
  const bool sampled = cfg.color_mode == RenderConfig::ColorMode::sampled;
  constexpr int kP = LandmarkSet::kPoints;

  auto cache = std::make_shared<detail::RenderCache>();
  cache->h = h;
  cache->w = w;
  cache->owner.assign(static_cast<size_t>(n * h * w), -1);
  cache->dist.assign(static_cast<size_t>(n * h * w), std::numeric_limits<double>::infinity());
  cache->taps.resize(static_cast<size_t>(n));
  cache->coord_clamped.resize(static_cast<size_t>(n));

  Tensor out({n, h, w, 3}, detail::kWhite);
  bool any_clamped = false;

  for (int64_t s = 0; s < n; ++s) {
    Tensor srcs = Tensor::from({h, w, 3},
                               std::vector<double>(src.data() + s * h * w * 3,
                                                   src.data() + (s + 1) * h * w * 3));
    std::array<double, 2 * kP> pc{};
    for (int i = 0; i < kP; ++i) {
      double px = cds.at2(s, 2 * i), py = cds.at2(s, 2 * i + 1);
      double pxc = std::clamp(px, 0.0, static_cast<double>(w - 1));
      double pyc = std::clamp(py, 0.0, static_cast<double>(h - 1));
      cache->coord_clamped[static_cast<size_t>(s)][static_cast<size_t>(2 * i)] = pxc != px;
      cache->coord_clamped[static_cast<size_t>(s)][static_cast<size_t>(2 * i + 1)] = pyc != py;
      any_clamped |= (pxc != px) || (pyc != py);
      pc[static_cast<size_t>(2 * i)] = pxc;
      pc[static_cast<size_t>(2 * i + 1)] = pyc;
      cache->taps[static_cast<size_t>(s)][static_cast<size_t>(i)] =
          sampled ? img::bilinear_tap(srcs, pxc, pyc)
                  : img::BilinearTap{{-1.0, -1.0, -1.0}, {0, 0, 0}, {0, 0, 0}};
    }
    // nearest-landmark ownership within each disc's support
    for (int i = 0; i < kP; ++i) {
      double px = pc[static_cast<size_t>(2 * i)], py = pc[static_cast<size_t>(2 * i + 1)];
      int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(std::ceil(py - sup)));
      int64_t y1 = std::min<int64_t>(h - 1, static_cast<int64_t>(std::floor(py + sup)));
      int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(std::ceil(px - sup)));
      int64_t x1 = std::min<int64_t>(w - 1, static_cast<int64_t>(std::floor(px + sup)));
      for (int64_t y = y0; y <= y1; ++y) {
        for (int64_t x = x0; x <= x1; ++x) {
          double d = std::hypot(static_cast<double>(x) - px, static_cast<double>(y) - py);
          if (d > sup) continue;
          size_t idx = static_cast<size_t>((s * h + y) * w + x);
          if (d < cache->dist[idx]) {
            cache->dist[idx] = d;
            cache->owner[idx] = i;
          }
        }
      }
    }
    for (int64_t y = 0; y < h; ++y) {
      for (int64_t x = 0; x < w; ++x) {
        size_t idx = static_cast<size_t>((s * h + y) * w + x);
        int own = cache->owner[idx];
        if (own < 0) continue;
        double a = detail::disc_alpha(cache->dist[idx], r, sigma);
        if (a <= 0) continue;
        const auto& tap = cache->taps[static_cast<size_t>(s)][static_cast<size_t>(own)];
        for (int64_t c = 0; c < 3; ++c)
          out.at4(s, y, x, c) = a * tap.value[c] + (1.0 - a) * detail::kWhite;
      }
    }
  }
  if (clamped) *clamped = any_clamped;

  Tensor shaped = batched ? out : out.reshaped({h, w, 3});
  return ad::make_op(
      std::move(shaped), {coords}, [cache, n, r, sigma, sampled](ad::Node& self) {
        ad::Node& pc = *self.parents[0];
        if (!pc.requires_grad || sigma <= 0) return;
        Tensor& g = pc.ensure_grad();
        const bool was_batched = pc.value.ndim() == 2;
        const int64_t h = cache->h, w = cache->w;
        for (int64_t s = 0; s < n; ++s) {
          for (int64_t y = 0; y < h; ++y) {
            for (int64_t x = 0; x < w; ++x) {
              size_t idx = static_cast<size_t>((s * h + y) * w + x);
              int own = cache->owner[idx];
              if (own < 0) continue;
              double d = cache->dist[idx];
              double a = detail::disc_alpha(d, r, sigma);
              double dadd = detail::disc_alpha_dd(d, r, sigma);
              if (a <= 0 && dadd == 0) continue;
              const auto& tap = cache->taps[static_cast<size_t>(s)][static_cast<size_t>(own)];
              double px_val = pc.value[s * 136 + 2 * own];
              double py_val = pc.value[s * 136 + 2 * own + 1];
              double px = std::clamp(px_val, 0.0, static_cast<double>(w - 1));
              double py = std::clamp(py_val, 0.0, static_cast<double>(h - 1));
              double gx = 0, gy = 0;
              for (int64_t c = 0; c < 3; ++c) {
                double gc = self.grad[((s * h + y) * w + x) * 3 + c];
                if (gc == 0) continue;
                if (dadd != 0 && d > 1e-12) {
                  double dd_dpx = (px - static_cast<double>(x)) / d;
                  double dd_dpy = (py - static_cast<double>(y)) / d;
                  double col_minus_white = tap.value[c] - detail::kWhite;
                  gx += gc * col_minus_white * dadd * dd_dpx;
                  gy += gc * col_minus_white * dadd * dd_dpy;
                }
                if (sampled && a > 0) {
                  gx += gc * a * tap.dx[c];
                  gy += gc * a * tap.dy[c];
                }
              }
              const auto& cl = cache->coord_clamped[static_cast<size_t>(s)];
              int64_t base = was_batched ? s * 136 : 0;
              if (!cl[static_cast<size_t>(2 * own)]) g[base + 2 * own] += gx;
              if (!cl[static_cast<size_t>(2 * own + 1)]) g[base + 2 * own + 1] += gy;
            }
          }
        }
      });
}

/// Non-differentiable convenience wrapper over the render op.
inline LandmarkImage render_landmark_image(const LandmarkSet& landmarks, const Tensor& source,
                                           const RenderConfig& cfg) {
  if (source.ndim() != 3 || source.dim(2) != 3)
    throw Error("render_landmark_image: source must be (H,W,3)");
  bool clamped = false;
  ad::Var v = render_landmark_image_op(
      ad::constant(Tensor::from({136}, landmarks.to_flat())), source, cfg, &clamped);
  LandmarkImage li;
  li.image = std::move(v->value);
  li.radius = cfg.radius;
  li.provenance = LandmarkImage::Provenance::rendered;
  li.clamped = clamped;
  return li;
}

/// Mean-face layout used to assign extraction results to the canonical
/// point ordering when no better prior is available.
inline LandmarkSet canonical_template(int resolution) {
  data::detail::SubjectParams p{};
  p.cx = 0.5;
  p.cy = 0.52;
  p.fa = 0.325;
  p.fb = 0.395;
  p.eye_dx = 0.145;
  p.eye_y = p.cy - 0.115;
  p.eye_w = 0.0575;
  p.eye_h = 0.036;
  p.iris_r = 0.017;
  p.brow_off = 0.0575;
  p.brow_half = 0.0625;
  p.brow_th = 0.010;
  p.nose_len = 0.115;
  p.nose_w = 0.0425;
  p.mouth_y = p.cy + 0.165;
  p.mouth_half = 0.1025;
  p.lip_th = 0.022;
  data::detail::FaceGeometry geo{p, {}, static_cast<double>(resolution)};
  return geo.landmarks();
}

struct ExtractionResult {
  LandmarkSet points;
  std::array<bool, LandmarkSet::kPoints> from_template{};  // filled, not detected
  int regions_found = 0;

  bool any_filled() const {
    for (bool b : from_template)
      if (b) return true;
    return false;
  }
};

/// Inverse of the encoding for evaluation: finds connected non-white
/// regions, takes their intensity-weighted centroids, and assigns them to
/// the canonical ordering by greedy nearest match against `reference`
/// (the mean-face template by default). Missing points are filled from the
/// reference and flagged.
inline ExtractionResult extract_landmarks(const Tensor& image,
                                          const LandmarkSet* reference = nullptr) {
  if (image.ndim() != 3 || image.dim(2) != 3) throw Error("extract_landmarks: image must be (H,W,3)");
  const int64_t h = image.dim(0), w = image.dim(1);
  constexpr int kP = LandmarkSet::kPoints;

  std::vector<double> weight(static_cast<size_t>(h * w), 0.0);
  bool any = false;
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      double dev = 0;
      for (int64_t c = 0; c < 3; ++c)
        dev = std::max(dev, (detail::kWhite - image.at3(y, x, c)) / 2.0);
      if (dev > 0.05) {
        weight[static_cast<size_t>(y * w + x)] = dev;
        any = true;
      }
    }
  }
  if (!any) throw Error("no landmarks detectable: image is all white");

  // 8-connected components over marked pixels
  std::vector<int> comp(static_cast<size_t>(h * w), -1);
  struct Region {
    double wsum = 0, xsum = 0, ysum = 0;
  };
  std::vector<Region> regions;
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      size_t idx = static_cast<size_t>(y * w + x);
      if (weight[idx] <= 0 || comp[idx] >= 0) continue;
      int id = static_cast<int>(regions.size());
      regions.emplace_back();
      std::deque<std::pair<int64_t, int64_t>> queue{{y, x}};
      comp[idx] = id;
      while (!queue.empty()) {
        auto [cy, cx] = queue.front();
        queue.pop_front();
        double wv = weight[static_cast<size_t>(cy * w + cx)];
        regions[static_cast<size_t>(id)].wsum += wv;
        regions[static_cast<size_t>(id)].xsum += wv * static_cast<double>(cx);
        regions[static_cast<size_t>(id)].ysum += wv * static_cast<double>(cy);
        for (int64_t dy = -1; dy <= 1; ++dy) {
          for (int64_t dx = -1; dx <= 1; ++dx) {
            int64_t ny = cy + dy, nx = cx + dx;
            if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
            size_t nidx = static_cast<size_t>(ny * w + nx);
            if (weight[nidx] > 0 && comp[nidx] < 0) {
              comp[nidx] = id;
              queue.emplace_back(ny, nx);
            }
          }
        }
      }
    }
  }

  std::vector<data::Vec2> centroids;
  for (const auto& rg : regions)
    centroids.push_back({rg.xsum / rg.wsum, rg.ysum / rg.wsum});

  LandmarkSet ref = reference ? *reference : canonical_template(static_cast<int>(w));

  // greedy global assignment: smallest centroid/reference distances first
  struct Cand {
    double d;
    int region, point;
  };
  std::vector<Cand> cands;
  for (size_t rgi = 0; rgi < centroids.size(); ++rgi)
    for (int pi = 0; pi < kP; ++pi)
      cands.push_back({std::hypot(centroids[rgi].x - ref[pi].x, centroids[rgi].y - ref[pi].y),
                       static_cast<int>(rgi), pi});
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.d < b.d; });

  ExtractionResult out;
  out.regions_found = static_cast<int>(regions.size());
  std::vector<char> region_used(centroids.size(), 0);
  std::array<char, kP> point_set{};
  for (const auto& c : cands) {
    if (region_used[static_cast<size_t>(c.region)] || point_set[static_cast<size_t>(c.point)])
      continue;
    region_used[static_cast<size_t>(c.region)] = 1;
    point_set[static_cast<size_t>(c.point)] = 1;
    out.points[c.point] = centroids[static_cast<size_t>(c.region)];
  }
  for (int pi = 0; pi < kP; ++pi) {
    if (!point_set[static_cast<size_t>(pi)]) {
      out.points[pi] = ref[pi];
      out.from_template[static_cast<size_t>(pi)] = true;
    }
  }
  return out;
}

/// Mean per-point Euclidean distance between two ordered landmark sets
/// (the coordinate reconstruction distance, also the evaluation L2).
inline double landmark_distance(const LandmarkSet& a, const LandmarkSet& b) {
  double sum = 0;
  for (int i = 0; i < LandmarkSet::kPoints; ++i)
    sum += std::hypot(a[i].x - b[i].x, a[i].y - b[i].y);
  return sum / static_cast<double>(LandmarkSet::kPoints);
}

}  // namespace faceforge::codec
