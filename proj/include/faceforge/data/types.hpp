#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "faceforge/core/tensor.hpp"

namespace faceforge::data {

struct Vec2 {
  double x = 0, y = 0;
};

/// The 68 canonical facial keypoints in pixel coordinates, ordered as
/// jaw 0-16, brows 17-26, nose 27-35, eyes 36-47, mouth 48-67.
class LandmarkSet {
 public:
  static constexpr int kPoints = 68;

  LandmarkSet() : pts_{} {}

  static LandmarkSet from_flat(const std::vector<double>& flat) {
    if (flat.size() != 2 * kPoints)
      throw ValidationError("landmark list has " + std::to_string(flat.size() / 2) +
                            " points (need 68)");
    LandmarkSet l;
    for (int i = 0; i < kPoints; ++i) {
      double p = flat[static_cast<size_t>(2 * i)], q = flat[static_cast<size_t>(2 * i + 1)];
      if (!std::isfinite(p) || !std::isfinite(q))
        throw ValidationError("landmark " + std::to_string(i) + " is not finite");
      l.pts_[static_cast<size_t>(i)] = {p, q};
    }
    return l;
  }

  std::vector<double> to_flat() const {
    std::vector<double> flat;
    flat.reserve(2 * kPoints);
    for (const auto& p : pts_) {
      flat.push_back(p.x);
      flat.push_back(p.y);
    }
    return flat;
  }

  Vec2& operator[](int i) { return pts_[static_cast<size_t>(i)]; }
  const Vec2& operator[](int i) const { return pts_[static_cast<size_t>(i)]; }

  LandmarkSet translated(double dx, double dy) const {
    LandmarkSet l = *this;
    for (auto& p : l.pts_) {
      p.x += dx;
      p.y += dy;
    }
    return l;
  }

  LandmarkSet scaled(double sx, double sy) const {
    LandmarkSet l = *this;
    for (auto& p : l.pts_) {
      p.x *= sx;
      p.y *= sy;
    }
    return l;
  }

  bool inside(double width, double height) const {
    for (const auto& p : pts_)
      if (p.x < 0 || p.x > width || p.y < 0 || p.y > height) return false;
    return true;
  }

 private:
  std::array<Vec2, kPoints> pts_;
};

/// One-hot categorical label.
struct LabelVector {
  std::vector<double> values;
  int hot_index = 0;

  Tensor tensor() const {
    return Tensor::from({static_cast<int64_t>(values.size())}, values);
  }
};

inline LabelVector one_hot(const std::string& label, const std::vector<std::string>& vocabulary) {
  auto it = std::find(vocabulary.begin(), vocabulary.end(), label);
  if (it == vocabulary.end()) {
    std::string valid;
    for (const auto& v : vocabulary) valid += (valid.empty() ? "" : ", ") + v;
    throw ValidationError("unknown label '" + label + "'; valid labels: " + valid);
  }
  LabelVector lv;
  lv.hot_index = static_cast<int>(it - vocabulary.begin());
  lv.values.assign(vocabulary.size(), 0.0);
  lv.values[static_cast<size_t>(lv.hot_index)] = 1.0;
  return lv;
}

inline LabelVector one_hot_level(int level, int levels) {
  if (level < 1 || level > levels)
    throw ValidationError("intensity level " + std::to_string(level) + " outside 1.." +
                          std::to_string(levels));
  LabelVector lv;
  lv.hot_index = level - 1;
  lv.values.assign(static_cast<size_t>(levels), 0.0);
  lv.values[static_cast<size_t>(lv.hot_index)] = 1.0;
  return lv;
}

struct FaceSample {
  Tensor image;  // (H,W,3) in [-1,1]
  LandmarkSet landmarks;
  std::string subject_id;
  std::string expression;
  std::optional<int> intensity;
  std::string source_path;
};

struct Dataset {
  std::vector<FaceSample> samples;
  std::vector<std::string> expression_vocab;
  int resolution = 0;
  int intensity_levels = 0;  // 0: no intensity labels anywhere

  std::vector<std::string> subjects() const {
    std::set<std::string> s;
    for (const auto& f : samples) s.insert(f.subject_id);
    return {s.begin(), s.end()};
  }

  Dataset with_samples(std::vector<FaceSample> picked) const {
    Dataset d;
    d.expression_vocab = expression_vocab;
    d.resolution = resolution;
    d.intensity_levels = intensity_levels;
    d.samples = std::move(picked);
    return d;
  }
};

/// One optimization example: conditional sample x, target sample y of the
/// same subject, plus the target's labels. Target landmarks are
/// y.landmarks by construction.
struct TrainingPair {
  int x_index = 0;
  int y_index = 0;
  LabelVector l_e;
  std::optional<LabelVector> l_i;

  const FaceSample& x(const Dataset& ds) const { return ds.samples[static_cast<size_t>(x_index)]; }
  const FaceSample& y(const Dataset& ds) const { return ds.samples[static_cast<size_t>(y_index)]; }
};

}  // namespace faceforge::data
