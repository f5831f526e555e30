#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "faceforge/core/rng.hpp"
#include "faceforge/data/types.hpp"

namespace faceforge::data {

namespace detail {

struct Rgb {
  double r, g, b;  // [-1,1] encoding
};

inline Rgb hsv(double h, double s, double v) {
  h = h - std::floor(h);
  double c = v * s;
  double hp = h * 6.0;
  double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  double m = v - c;
  return {2 * (r + m) - 1, 2 * (g + m) - 1, 2 * (b + m) - 1};
}

/// Per-subject appearance and geometry, all in fractions of the resolution.
struct SubjectParams {
  Rgb background, skin, iris, brow, lip;
  double cx, cy;          // face center
  double fa, fb;          // face semi-axes
  double eye_dx, eye_y;   // eye centers: (cx +- eye_dx, eye_y)
  double eye_w, eye_h;    // eye semi-axes
  double iris_r;
  double brow_off, brow_half, brow_th;
  double nose_len, nose_w;
  double mouth_y, mouth_half, lip_th;
};

inline SubjectParams subject_params(uint64_t seed, int subject, int n_subjects) {
  Rng rng(mix_seed(seed, 0x5C00 + static_cast<uint64_t>(subject)));
  SubjectParams p{};
  double hue = (static_cast<double>(subject) + rng.uniform(0.2, 0.8)) /
               std::max(1, n_subjects);  // distinct hue band per subject
  p.skin = hsv(hue, rng.uniform(0.30, 0.50), rng.uniform(0.75, 0.95));
  p.background = hsv(hue + 0.5, rng.uniform(0.10, 0.20), rng.uniform(0.85, 0.95));
  p.iris = hsv(rng.uniform(0, 1), rng.uniform(0.5, 0.8), rng.uniform(0.25, 0.5));
  p.brow = hsv(rng.uniform(0, 0.12), rng.uniform(0.3, 0.7), rng.uniform(0.1, 0.3));
  p.lip = hsv(rng.uniform(0.95, 1.02), rng.uniform(0.45, 0.7), rng.uniform(0.45, 0.65));
  p.cx = 0.5 + rng.uniform(-0.015, 0.015);
  p.cy = 0.52 + rng.uniform(-0.015, 0.015);
  p.fa = rng.uniform(0.30, 0.35);
  p.fb = rng.uniform(0.37, 0.42);
  p.eye_dx = rng.uniform(0.13, 0.16);
  p.eye_y = p.cy - rng.uniform(0.10, 0.13);
  p.eye_w = rng.uniform(0.050, 0.065);
  p.eye_h = rng.uniform(0.030, 0.042);
  p.iris_r = rng.uniform(0.014, 0.020);
  p.brow_off = rng.uniform(0.050, 0.065);
  p.brow_half = rng.uniform(0.055, 0.070);
  p.brow_th = rng.uniform(0.008, 0.012);
  p.nose_len = rng.uniform(0.10, 0.13);
  p.nose_w = rng.uniform(0.035, 0.050);
  p.mouth_y = p.cy + rng.uniform(0.15, 0.18);
  p.mouth_half = rng.uniform(0.090, 0.115);
  p.lip_th = rng.uniform(0.018, 0.026);
  return p;
}

/// Expression deformation, in fractions of the resolution. `curve` lifts
/// (positive) or drops the mouth corners, `open` is the inner-lip gap,
/// `brow_tilt` > 0 pulls the inner brow ends down.
struct Deform {
  double curve = 0, open = 0, brow_raise = 0, brow_tilt = 0;
  double eye_open = 1.0;
};

inline Deform expression_deform(const std::string& expr) {
  if (expr == "neutral") return {};
  if (expr == "happy") return {0.045, 0.016, 0.008, -0.10, 1.0};
  if (expr == "sad") return {-0.035, 0.004, 0.004, -0.35, 0.92};
  if (expr == "angry") return {-0.020, 0.012, -0.006, 0.45, 0.95};
  if (expr == "surprise") return {0.005, 0.14, 0.022, -0.05, 1.35};
  if (expr == "fear") return {-0.012, 0.075, 0.014, -0.25, 1.20};
  if (expr == "disgust") return {-0.028, 0.022, -0.004, 0.20, 0.85};
  // Unknown vocabulary entries get a stable pseudo-random deformation.
  uint64_t h = fnv1a(expr.data(), expr.size());
  Rng rng(h);
  return {rng.uniform(-0.04, 0.05), rng.uniform(0.0, 0.10), rng.uniform(-0.01, 0.02),
          rng.uniform(-0.4, 0.4), rng.uniform(0.85, 1.3)};
}

inline Deform scaled_deform(const Deform& d, int level, int levels) {
  double s = static_cast<double>(level) / static_cast<double>(std::max(1, levels));
  return {d.curve * s, d.open * s, d.brow_raise * s, d.brow_tilt * s,
          1.0 + (d.eye_open - 1.0) * s};
}

/// Quadratic through (-1,ya), (0,ym), (1,yb) evaluated at t in [-1,1].
inline double quad3(double ya, double ym, double yb, double t) {
  double lin = (yb - ya) / 2.0;
  double quadc = (ya + yb) / 2.0 - ym;
  return ym + lin * t + quadc * t * t;
}

struct FaceGeometry {
  SubjectParams p;
  Deform d;
  double res;

  double X(double fx) const { return fx * res; }

  // Mouth curves in resolution units; t in [-1, 1] across the mouth width.
  double corner_y() const { return p.mouth_y - d.curve; }
  double upper_outer(double t) const {
    return X(quad3(corner_y(), p.mouth_y - lip_up(), corner_y(), t));
  }
  double lower_outer(double t) const {
    return X(quad3(corner_y(), p.mouth_y + d.open + lip_dn(), corner_y(), t));
  }
  double upper_inner(double t) const {
    return X(quad3(corner_y(), p.mouth_y - 0.15 * d.open, corner_y(), t));
  }
  double lower_inner(double t) const {
    return X(quad3(corner_y(), p.mouth_y + 0.85 * d.open, corner_y(), t));
  }
  double lip_up() const { return p.lip_th * 1.2 + 0.15 * d.open; }
  double lip_dn() const { return p.lip_th * 1.4; }

  LandmarkSet landmarks() const {
    LandmarkSet l;
    const double R = res;
    const double cx = p.cx, cy = p.cy;
    // jaw 0-16: lower half of a slightly shrunk face ellipse
    for (int k = 0; k <= 16; ++k) {
      double t = static_cast<double>(k) / 16.0;
      l[k] = {X(cx - p.fa * 0.97 * std::cos(M_PI * t)), X(cy + p.fb * 0.95 * std::sin(M_PI * t))};
    }
    // brows 17-26: linear from outer to inner end, tilted and raised
    double by = p.eye_y - p.brow_off - d.brow_raise;
    for (int k = 0; k < 5; ++k) {
      double t = static_cast<double>(k) / 4.0;  // 0 outer -> 1 inner
      double drop = d.brow_tilt * 0.08 * t;
      // left brow 17-21: outer at smaller x
      double lx = cx - p.eye_dx - p.brow_half + 2 * p.brow_half * t;
      l[17 + k] = {X(lx), X(by + drop)};
      // right brow 22-26: inner at smaller x, stored inner->outer? canonical is
      // left-to-right across the face: 22 is the right brow's inner end.
      double rx = cx + p.eye_dx - p.brow_half + 2 * p.brow_half * t;
      double rt = 1.0 - t;  // inner fraction for the mirrored brow
      l[22 + k] = {X(rx), X(by + d.brow_tilt * 0.08 * rt)};
    }
    // nose 27-35
    double bridge_top = p.eye_y + 0.01;
    double tip_y = p.eye_y + p.nose_len;
    for (int k = 0; k < 4; ++k) {
      double t = static_cast<double>(k) / 3.0;
      l[27 + k] = {X(cx), X(bridge_top + (tip_y - bridge_top) * t)};
    }
    for (int k = 0; k < 5; ++k) {
      double t = static_cast<double>(k - 2) / 2.0;  // -1..1
      l[31 + k] = {X(cx + p.nose_w * t), X(tip_y + 0.012 + 0.006 * (1.0 - std::fabs(t)))};
    }
    // eyes 36-47 on ellipses; screen y grows downward
    auto eye_pt = [&](double ex, double deg) {
      double a = deg * M_PI / 180.0;
      return Vec2{X(ex + p.eye_w * std::cos(a)), X(p.eye_y - p.eye_h * d.eye_open * std::sin(a))};
    };
    double lex = cx - p.eye_dx, rex = cx + p.eye_dx;
    const double angles[6] = {180, 120, 60, 0, -60, -120};
    for (int k = 0; k < 6; ++k) l[36 + k] = eye_pt(lex, angles[k]);
    for (int k = 0; k < 6; ++k) l[42 + k] = eye_pt(rex, angles[k]);
    // mouth 48-67
    double mhw = p.mouth_half;
    l[48] = {X(cx - mhw), upper_outer(-1.0)};
    for (int k = 0; k < 5; ++k) {
      double t = static_cast<double>(k - 2) / 3.0;  // -2/3..2/3
      l[49 + k] = {X(cx + mhw * t), upper_outer(t)};
    }
    l[54] = {X(cx + mhw), upper_outer(1.0)};
    for (int k = 0; k < 5; ++k) {
      double t = static_cast<double>(2 - k) / 3.0;  // 2/3..-2/3 right to left
      l[55 + k] = {X(cx + mhw * t), lower_outer(t)};
    }
    double ihw = mhw * 0.82;
    l[60] = {X(cx - ihw), upper_inner(-1.0)};
    for (int k = 0; k < 3; ++k) {
      double t = static_cast<double>(k - 1) * 0.45;
      l[61 + k] = {X(cx + ihw * t), upper_inner(t)};
    }
    l[64] = {X(cx + ihw), upper_inner(1.0)};
    for (int k = 0; k < 3; ++k) {
      double t = static_cast<double>(1 - k) * 0.45;
      l[65 + k] = {X(cx + ihw * t), lower_inner(t)};
    }
    return l;
  }

  /// Scene color at a continuous image point; the drawing primitives share
  /// the analytic curves the landmarks are sampled from.
  Rgb shade(double px, double py) const {
    const double R = res;
    double x = px / R, y = py / R;
    Rgb c = p.background;
    double fe = (x - p.cx) * (x - p.cx) / (p.fa * p.fa) + (y - p.cy) * (y - p.cy) / (p.fb * p.fb);
    if (fe <= 1.0) c = p.skin;

    // nose: bridge segment plus base arc, slightly darker than skin
    if (fe <= 1.0) {
      double tipy = p.eye_y + p.nose_len;
      if (std::fabs(x - p.cx) < 0.006 && y >= p.eye_y + 0.01 && y <= tipy) {
        c = {c.r - 0.25, c.g - 0.25, c.b - 0.25};
      } else if (y > tipy && y < tipy + 0.026 && std::fabs(x - p.cx) <= p.nose_w) {
        double t = (x - p.cx) / p.nose_w;
        double ay = tipy + 0.012 + 0.006 * (1.0 - std::fabs(t));
        if (std::fabs(y - ay) < 0.006) c = {c.r - 0.25, c.g - 0.25, c.b - 0.25};
      }
    }

    // mouth
    double mhw = p.mouth_half;
    if (std::fabs(x - p.cx) <= mhw) {
      double t = (x - p.cx) / mhw;
      double yo_u = upper_outer(t) / R, yo_l = lower_outer(t) / R;
      if (y >= yo_u && y <= yo_l) c = p.lip;
      double ihw = mhw * 0.82;
      if (d.open > 0.004 && std::fabs(x - p.cx) <= ihw) {
        double ti = (x - p.cx) / ihw;
        double yi_u = upper_inner(ti) / R, yi_l = lower_inner(ti) / R;
        if (y >= yi_u && y <= yi_l) c = {-0.80, -0.92, -0.92};
      }
    }

    // eyes
    for (int side = -1; side <= 1; side += 2) {
      double ex = p.cx + side * p.eye_dx;
      double eh = p.eye_h * d.eye_open;
      double ee = (x - ex) * (x - ex) / (p.eye_w * p.eye_w) + (y - p.eye_y) * (y - p.eye_y) / (eh * eh);
      if (ee <= 1.0) {
        c = {0.95, 0.95, 0.95};
        double ir = std::hypot(x - ex, y - p.eye_y);
        if (ir <= p.iris_r) c = p.iris;
      }
    }

    // brows: capsule around the tilted segment
    double by = p.eye_y - p.brow_off - d.brow_raise;
    for (int side = -1; side <= 1; side += 2) {
      double bx = p.cx + side * p.eye_dx;
      double x0 = bx - p.brow_half, x1 = bx + p.brow_half;
      if (x < x0 - p.brow_th || x > x1 + p.brow_th) continue;
      // inner fraction: distance toward the face center line
      double t = side < 0 ? (x - x0) / (2 * p.brow_half) : (x1 - x) / (2 * p.brow_half);
      t = std::clamp(t, 0.0, 1.0);
      double yy = by + d.brow_tilt * 0.08 * t;
      if (std::fabs(y - yy) <= p.brow_th) c = p.brow;
    }
    return c;
  }

  Tensor render() const {
    int64_t R = static_cast<int64_t>(res);
    Tensor im({R, R, 3});
    // 2x2 supersampling for smooth edges
    const double sub[2] = {-0.25, 0.25};
    for (int64_t y = 0; y < R; ++y) {
      for (int64_t x = 0; x < R; ++x) {
        double r = 0, g = 0, b = 0;
        for (double dy : sub) {
          for (double dx : sub) {
            Rgb c = shade(static_cast<double>(x) + dx, static_cast<double>(y) + dy);
            r += c.r;
            g += c.g;
            b += c.b;
          }
        }
        im.at3(y, x, 0) = r / 4;
        im.at3(y, x, 1) = g / 4;
        im.at3(y, x, 2) = b / 4;
      }
    }
    return im;
  }
};

}  // namespace detail

/// Deterministically renders a fully labeled cartoon-face corpus with exact
/// analytic landmark positions. Sample order: subject-major, then the given
/// expression order, then intensity level.
inline Dataset synth_corpus(int n_subjects, const std::vector<std::string>& expressions,
                            int intensities, int resolution, uint64_t seed) {
  check(n_subjects >= 1, "synth_corpus: n_subjects must be >= 1");
  check(resolution >= 32, "synth_corpus: resolution must be >= 32");
  check(!expressions.empty(), "synth_corpus: empty expression vocabulary");
  check(intensities >= 1, "synth_corpus: intensities must be >= 1");

  Dataset ds;
  ds.expression_vocab = expressions;
  ds.resolution = resolution;
  ds.intensity_levels = intensities > 1 ? intensities : 0;

  for (int s = 0; s < n_subjects; ++s) {
    detail::SubjectParams sp = detail::subject_params(seed, s, n_subjects);
    char sid[16];
    std::snprintf(sid, sizeof(sid), "s%02d", s);
    for (size_t e = 0; e < expressions.size(); ++e) {
      detail::Deform base = detail::expression_deform(expressions[e]);
      for (int level = 1; level <= intensities; ++level) {
        detail::FaceGeometry geo{sp, detail::scaled_deform(base, level, intensities),
                                 static_cast<double>(resolution)};
        FaceSample f;
        f.image = geo.render();
        f.landmarks = geo.landmarks();
        f.subject_id = sid;
        f.expression = expressions[e];
        if (ds.intensity_levels > 0) f.intensity = level;
        char path[64];
        std::snprintf(path, sizeof(path), "synth://%s/e%02zu_%s/i%d", sid, e,
                      expressions[e].c_str(), level);
        f.source_path = path;
        ds.samples.push_back(std::move(f));
      }
    }
  }
  return ds;
}

inline std::vector<std::string> default_expressions() {
  return {"angry", "disgust", "fear", "happy", "neutral", "sad", "surprise"};
}

}  // namespace faceforge::data
