#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "faceforge/core/common.hpp"

namespace faceforge {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

/// Dense row-major tensor of doubles. Image tensors are channel-last:
/// (H,W,C) or batched (N,H,W,C).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), v_(static_cast<size_t>(shape_numel(shape_)), fill) {}

  static Tensor from(Shape shape, std::vector<double> values) {
    Tensor t;
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
      throw Error("Tensor::from: shape " + shape_str(shape) + " does not match value count " +
                  std::to_string(values.size()));
    t.shape_ = std::move(shape);
    t.v_ = std::move(values);
    return t;
  }

  static Tensor scalar(double x) { return from({1}, {x}); }

  const Shape& shape() const { return shape_; }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int64_t numel() const { return static_cast<int64_t>(v_.size()); }
  bool empty() const { return v_.empty(); }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }
  double& operator[](int64_t i) { return v_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return v_[static_cast<size_t>(i)]; }

  double& at2(int64_t i, int64_t j) { return v_[static_cast<size_t>(i * shape_[1] + j)]; }
  double at2(int64_t i, int64_t j) const { return v_[static_cast<size_t>(i * shape_[1] + j)]; }
  double& at3(int64_t i, int64_t j, int64_t k) {
    return v_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  double at3(int64_t i, int64_t j, int64_t k) const {
    return v_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  double& at4(int64_t n, int64_t h, int64_t w, int64_t c) {
    return v_[static_cast<size_t>(((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c)];
  }
  double at4(int64_t n, int64_t h, int64_t w, int64_t c) const {
    return v_[static_cast<size_t>(((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c)];
  }

  /// Scalar value of a single-element tensor.
  double item() const {
    if (numel() != 1) throw Error("Tensor::item on tensor of shape " + shape_str(shape_));
    return v_[0];
  }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != numel())
      throw Error("reshape " + shape_str(shape_) + " -> " + shape_str(s));
    Tensor t = *this;
    t.shape_ = std::move(s);
    return t;
  }

  void fill(double x) { std::fill(v_.begin(), v_.end(), x); }

  void add_(const Tensor& o) {
    if (o.numel() != numel()) throw Error("add_: size mismatch");
    for (int64_t i = 0; i < numel(); ++i) v_[static_cast<size_t>(i)] += o[i];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double x : v_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  double abs_max() const {
    double m = 0;
    for (double x : v_) m = std::max(m, std::fabs(x));
    return m;
  }

  double sum() const { return std::accumulate(v_.begin(), v_.end(), 0.0); }
  double mean() const { return empty() ? 0.0 : sum() / static_cast<double>(numel()); }

  uint64_t byte_hash(uint64_t h = 0xcbf29ce484222325ULL) const {
    return fnv1a(v_.data(), v_.size() * sizeof(double), h);
  }

 private:
  Shape shape_;
  std::vector<double> v_;
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) throw Error("max_abs_diff: size mismatch");
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace faceforge
