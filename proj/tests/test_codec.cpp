#include <catch2/catch_amalgamated.hpp>

#include "faceforge/codec/landmark_image.hpp"
#include "faceforge/data/synth.hpp"
#include "helpers.hpp"

using namespace fftest;
namespace codec = faceforge::codec;
namespace data = faceforge::data;
using data::LandmarkSet;
using faceforge::Shape;

namespace {

/// 68 points on a jittered grid with pairwise spacing >= min_spacing and
/// fractional parts kept away from integers (bilinear kinks).
LandmarkSet spread_layout(int res, double margin, double min_spacing, Rng& rng) {
  int cols = static_cast<int>(std::floor((res - 2 * margin) / min_spacing));
  int rows = (68 + cols - 1) / cols;
  double cw = (res - 2 * margin) / static_cast<double>(cols);
  double ch = (res - 2 * margin) / static_cast<double>(rows);
  if (cw < min_spacing || ch < min_spacing)
    throw std::runtime_error("spread_layout: resolution too small for spacing");
  double jx = std::max(0.0, (cw - min_spacing) / 2.0 - 0.05);
  double jy = std::max(0.0, (ch - min_spacing) / 2.0 - 0.05);
  LandmarkSet l;
  for (int i = 0; i < 68; ++i) {
    int r = i / cols, c = i % cols;
    double x = margin + (c + 0.5) * cw + rng.uniform(-jx, jx);
    double y = margin + (r + 0.5) * ch + rng.uniform(-jy, jy);
    auto defrac = [](double v) {
      double f = v - std::floor(v);
      if (f < 0.1) v += 0.1;
      if (f > 0.9) v -= 0.1;
      return v;
    };
    l[i] = {defrac(x), defrac(y)};
  }
  return l;
}

Tensor gradient_source(int res, Rng& rng) {
  Tensor src({res, res, 3});
  double ax = rng.uniform(0.2, 1.0), ay = rng.uniform(0.2, 1.0);
  for (int64_t y = 0; y < res; ++y)
    for (int64_t x = 0; x < res; ++x)
      for (int64_t c = 0; c < 3; ++c)
        src.at3(y, x, c) =
            std::sin(ax * static_cast<double>(x) / res * 6 + static_cast<double>(c)) *
            std::cos(ay * static_cast<double>(y) / res * 5) * 0.8;
  return src;
}

}  // namespace

TEST_CASE("render config radius scales with resolution") {
  REQUIRE(codec::RenderConfig::for_resolution(256).radius == Catch::Approx(4.0));
  REQUIRE(codec::RenderConfig::for_resolution(64).radius == Catch::Approx(1.0));
  codec::RenderConfig bad;
  bad.radius = -1;
  REQUIRE_THROWS_AS(bad.validate(), faceforge::ValidationError);
}

TEST_CASE("hard discs sample the source color and leave white elsewhere") {
  Rng rng(101);
  const int res = 64;
  Tensor src = gradient_source(res, rng);
  LandmarkSet l = spread_layout(res, 6, 4.0, rng);
  // integer centers make the disc center equal a pixel center
  for (int i = 0; i < 68; ++i) l[i] = {std::round(l[i].x), std::round(l[i].y)};

  codec::RenderConfig cfg = codec::RenderConfig::for_resolution(res);
  cfg.softness = 0.0;
  codec::LandmarkImage li = codec::render_landmark_image(l, src, cfg);
  REQUIRE(li.image.shape() == Shape{res, res, 3});
  REQUIRE_FALSE(li.clamped);

  for (int i = 0; i < 68; ++i) {
    auto y = static_cast<int64_t>(l[i].y), x = static_cast<int64_t>(l[i].x);
    for (int64_t c = 0; c < 3; ++c)
      REQUIRE(li.image.at3(y, x, c) == Catch::Approx(src.at3(y, x, c)).margin(1e-12));
  }
  // a pixel farther than S_l from every landmark is white
  int found = 0;
  for (int64_t y = 0; y < res && found < 20; ++y) {
    for (int64_t x = 0; x < res && found < 20; ++x) {
      double dmin = 1e9;
      for (int i = 0; i < 68; ++i)
        dmin = std::min(dmin, std::hypot(l[i].x - static_cast<double>(x),
                                         l[i].y - static_cast<double>(y)));
      if (dmin > cfg.radius + 0.01) {
        for (int64_t c = 0; c < 3; ++c) REQUIRE(li.image.at3(y, x, c) == 1.0);
        ++found;
      }
    }
  }
  REQUIRE(found == 20);
}

TEST_CASE("white source renders an all-white landmark image") {
  Rng rng(102);
  Tensor white({64, 64, 3}, 1.0);
  LandmarkSet l = spread_layout(64, 6, 4.0, rng);
  codec::RenderConfig cfg = codec::RenderConfig::for_resolution(64);
  codec::LandmarkImage li = codec::render_landmark_image(l, white, cfg);
  for (int64_t i = 0; i < li.image.numel(); ++i) REQUIRE(li.image[i] == Catch::Approx(1.0));
}

TEST_CASE("out-of-bounds landmarks are clamped and flagged") {
  Rng rng(103);
  Tensor src = gradient_source(64, rng);
  LandmarkSet l = spread_layout(64, 6, 4.0, rng);
  l[0] = {-5.0, 10.0};
  codec::RenderConfig cfg = codec::RenderConfig::for_resolution(64);
  codec::LandmarkImage li = codec::render_landmark_image(l, src, cfg);
  REQUIRE(li.clamped);
}

TEST_CASE("integer translation equivariance in fixed_black mode") {
  Rng rng(104);
  const int res = 64;
  Tensor src = gradient_source(res, rng);
  LandmarkSet l = spread_layout(res, 10, 4.0, rng);
  codec::RenderConfig cfg = codec::RenderConfig::for_resolution(res);
  cfg.color_mode = codec::RenderConfig::ColorMode::fixed_black;

  codec::LandmarkImage a = codec::render_landmark_image(l, src, cfg);
  codec::LandmarkImage b = codec::render_landmark_image(l.translated(2, 1), src, cfg);
  int interior = static_cast<int>(std::ceil(cfg.support())) + 3;
  for (int64_t y = interior; y < res - interior; ++y)
    for (int64_t x = interior; x < res - interior; ++x)
      for (int64_t c = 0; c < 3; ++c)
        REQUIRE(b.image.at3(y, x, c) == Catch::Approx(a.image.at3(y - 1, x - 2, c)).margin(1e-12));
}

TEST_CASE("per-pixel finite differences match the analytic falloff derivative") {
  Rng rng(105);
  const int res = 256;
  Tensor src = gradient_source(res, rng);
  codec::RenderConfig cfg = codec::RenderConfig::for_resolution(res);
  // spacing > 2*support keeps every pixel owned by its only nearby landmark
  LandmarkSet l = spread_layout(res, 12, 2 * cfg.support() + 1, rng);

  auto render_px = [&](const LandmarkSet& lm, int64_t y, int64_t x, int64_t c) {
    return codec::render_landmark_image(lm, src, cfg).image.at3(y, x, c);
  };

  int checked = 0;
  for (int i = 0; i < 68 && checked < 6; i += 13) {
    // probe a pixel on the falloff annulus, right of the landmark
    double d_target = cfg.radius + 1.5 * cfg.softness;
    auto px = static_cast<int64_t>(std::round(l[i].x + d_target));
    auto py = static_cast<int64_t>(std::round(l[i].y));
    double d = std::hypot(static_cast<double>(px) - l[i].x, static_cast<double>(py) - l[i].y);
    if (d <= cfg.radius || d >= cfg.support() - 1) continue;

    const double h = 1e-3;
    LandmarkSet lp = l, lm_ = l;
    lp[i].x += h;
    lm_[i].x -= h;
    for (int64_t c = 0; c < 3; ++c) {
      double fd = (render_px(lp, py, px, c) - render_px(lm_, py, px, c)) / (2 * h);
      // analytic: d(alpha)/dp_x * (color - white) + alpha * d(color)/dp_x
      auto tap = faceforge::img::bilinear_tap(src, l[i].x, l[i].y);
      double dd_dpx = (l[i].x - static_cast<double>(px)) / d;
      double analytic =
          codec::detail::disc_alpha_dd(d, cfg.radius, cfg.softness) * dd_dpx *
              (tap.value[c] - 1.0) +
          codec::detail::disc_alpha(d, cfg.radius, cfg.softness) * tap.dx[c];
      REQUIRE(std::fabs(fd - analytic) < 1e-4);
    }
    ++checked;
  }
  REQUIRE(checked >= 4);
}

TEST_CASE("renderer gradient check against central finite differences") {
  const double h = 1e-3;
  for (uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    Rng rng(900 + seed);
    const int res = 256;
    Tensor src = gradient_source(res, rng);
    codec::RenderConfig cfg = codec::RenderConfig::for_resolution(res);
    LandmarkSet l = spread_layout(res, 12, 2 * cfg.support() + 1, rng);
    Tensor weights = random_tensor({res, res, 3}, rng);
    Tensor coords = Tensor::from({136}, l.to_flat());

    auto f = [&](const ad::Var& v) {
      return ad::sum_all(ad::mul(codec::render_landmark_image_op(v, src, cfg),
                                 ad::constant(weights)));
    };
    std::vector<int64_t> idx;
    for (int k = 0; k < 10; ++k) idx.push_back(rng.uniform_int(0, 135));
    REQUIRE(fd_gradcheck(f, coords, h, idx, 1e-4) < 1e-3);
  }
}

TEST_CASE("extract recovers rendered layouts within a pixel") {
  for (int res : {64, 256}) {
    Rng rng(200 + res);
    codec::RenderConfig cfg = codec::RenderConfig::for_resolution(res);
    cfg.softness = 0.0;
    for (int trial = 0; trial < 3; ++trial) {
      LandmarkSet l = spread_layout(res, 8, 2 * cfg.radius + 2.5, rng);
      Tensor src = gradient_source(res, rng);
      codec::LandmarkImage li = codec::render_landmark_image(l, src, cfg);
      codec::ExtractionResult ex = codec::extract_landmarks(li.image, &l);
      REQUIRE(ex.regions_found == 68);
      REQUIRE_FALSE(ex.any_filled());
      for (int i = 0; i < 68; ++i) {
        REQUIRE(std::hypot(ex.points[i].x - l[i].x, ex.points[i].y - l[i].y) <= 1.0);
      }
    }
  }
}

TEST_CASE("extract on all-white image fails") {
  Tensor white({64, 64, 3}, 1.0);
  REQUIRE_THROWS_WITH(codec::extract_landmarks(white),
                      Catch::Matchers::ContainsSubstring("no landmarks detectable"));
}

TEST_CASE("colliding landmarks merge into one region and are flagged") {
  Rng rng(300);
  const int res = 64;
  Tensor src({res, res, 3}, -0.5);  // dark source so discs are visible
  codec::RenderConfig cfg = codec::RenderConfig::for_resolution(res);
  cfg.softness = 0.0;
  cfg.radius = 1.5;
  LandmarkSet l = spread_layout(res, 6, 2 * cfg.radius + 2.5, rng);
  l[1] = {l[0].x + 1.0, l[0].y};  // closer than S_l: discs overlap into one blob

  codec::LandmarkImage li = codec::render_landmark_image(l, src, cfg);
  codec::ExtractionResult ex = codec::extract_landmarks(li.image, &l);
  REQUIRE(ex.regions_found == 67);
  REQUIRE(ex.any_filled());
  int filled = 0;
  for (bool b : ex.from_template) filled += b ? 1 : 0;
  REQUIRE(filled == 1);
  REQUIRE((ex.from_template[0] || ex.from_template[1]));
}

TEST_CASE("landmark_distance closed forms") {
  Rng rng(400);
  LandmarkSet a = spread_layout(64, 6, 4.0, rng);
  REQUIRE(codec::landmark_distance(a, a) == 0.0);
  REQUIRE(codec::landmark_distance(a, a.translated(3, 4)) == Catch::Approx(5.0));

  LandmarkSet b = a;
  b[1].y += 6.8;
  REQUIRE(codec::landmark_distance(a, b) == Catch::Approx(0.1));
}

TEST_CASE("landmark_distance is a metric on ordered sets") {
  Rng rng(401);
  for (int trial = 0; trial < 50; ++trial) {
    LandmarkSet a, b, c;
    for (int i = 0; i < 68; ++i) {
      a[i] = {rng.uniform(0, 64), rng.uniform(0, 64)};
      b[i] = {rng.uniform(0, 64), rng.uniform(0, 64)};
      c[i] = {rng.uniform(0, 64), rng.uniform(0, 64)};
    }
    double dab = codec::landmark_distance(a, b);
    double dba = codec::landmark_distance(b, a);
    double dac = codec::landmark_distance(a, c);
    double dcb = codec::landmark_distance(c, b);
    REQUIRE(dab == Catch::Approx(dba));
    REQUIRE(dab >= 0.0);
    REQUIRE(dab <= dac + dcb + 1e-12);
  }
  LandmarkSet a;
  for (int i = 0; i < 68; ++i) a[i] = {rng.uniform(0, 64), rng.uniform(0, 64)};
  REQUIRE(codec::landmark_distance(a, a) == 0.0);
  LandmarkSet b = a;
  b[67].x += 1e-9;
  REQUIRE(codec::landmark_distance(a, b) > 0.0);
}

TEST_CASE("synthetic corpus markers are recovered within half a pixel") {
  data::Dataset ds = data::synth_corpus(2, data::default_expressions(), 1, 64, 7);
  codec::RenderConfig cfg;
  cfg.radius = 2.0;
  cfg.softness = 1.0;
  cfg.color_mode = codec::RenderConfig::ColorMode::fixed_black;
  Tensor src({64, 64, 3}, 0.0);

  for (const auto& sample : ds.samples) {
    for (int i = 0; i < 68; i += 7) {
      // isolate one marker per render so dense face regions cannot merge
      Tensor canvas({64, 64, 3}, 1.0);
      LandmarkSet lone;
      for (int k = 0; k < 68; ++k) lone[k] = {-100, -100};  // parked off-canvas
      lone[i] = sample.landmarks[i];
      bool clamped = false;
      // render only the single disc by clamping the parked points out of view
      codec::RenderConfig solo = cfg;
      ad::Var v = codec::render_landmark_image_op(
          ad::constant(Tensor::from({136}, lone.to_flat())), src, solo, &clamped);
      // weighted centroid of the marked pixels
      double wsum = 0, xs = 0, ys = 0;
      for (int64_t y = 0; y < 64; ++y)
        for (int64_t x = 0; x < 64; ++x) {
          double dev = (1.0 - v->value.at3(y, x, 0)) / 2.0;
          // ignore the clamped parked markers glued to the (0,0) corner
          if (x < 12 && y < 12) continue;
          if (dev > 0.01) {
            wsum += dev;
            xs += dev * static_cast<double>(x);
            ys += dev * static_cast<double>(y);
          }
        }
      if (sample.landmarks[i].x < 14 && sample.landmarks[i].y < 14) continue;
      REQUIRE(wsum > 0);
      double cx = xs / wsum, cy = ys / wsum;
      REQUIRE(std::hypot(cx - sample.landmarks[i].x, cy - sample.landmarks[i].y) <= 0.5);
    }
  }
}
