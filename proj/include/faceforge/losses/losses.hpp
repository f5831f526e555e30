#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"

#include "faceforge/codec/landmark_image.hpp"
#include "faceforge/core/ops.hpp"
#include "faceforge/data/types.hpp"

namespace faceforge::losses {

struct LossWeights {
  double lambda1 = 2.0;    // coordinate reconstruction
  double lambda2 = 100.0;  // robust pixel loss
  double lambda3 = 0.1;    // identity distance

  void validate() const {
    check(lambda1 >= 0 && lambda2 >= 0 && lambda3 >= 0, "loss weights must be non-negative");
  }
};

inline constexpr double kProbClamp = 1e-7;   // probability clamp in bce
inline constexpr double kSqrtDelta = 1e-8;   // radical stabilizer in the
                                             // coordinate loss

/// Mean binary cross entropy of predictions in (0,1) against a {0,1}
/// target of the same shape. Predictions are clamped to
/// [kProbClamp, 1-kProbClamp]; clamped entries get zero gradient.
inline ad::Var bce(const ad::Var& pred, const Tensor& target) {
  if (pred->value.numel() != target.numel()) throw Error("bce: shape mismatch");
  const int64_t n = pred->value.numel();
  double total = 0;
  for (int64_t i = 0; i < n; ++i) {
    double p = std::clamp(pred->value[i], kProbClamp, 1.0 - kProbClamp);
    double t = target[i];
    total += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(n));
  auto tgt = std::make_shared<Tensor>(target);
  return ad::make_op(std::move(out), {pred}, [tgt, n](ad::Node& self) {
    ad::Node& p0 = *self.parents[0];
    if (!p0.requires_grad) return;
    Tensor& g = p0.ensure_grad();
    double gs = self.grad[0] / static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i) {
      double raw = p0.value[i];
      if (raw <= kProbClamp || raw >= 1.0 - kProbClamp) continue;
      double t = (*tgt)[i];
      g[i] += gs * (-t / raw + (1.0 - t) / (1.0 - raw));
    }
  });
}

inline ad::Var bce(const ad::Var& pred, double target) {
  return bce(pred, Tensor(pred->value.shape(), target));
}

/// Halved discriminator objective: 1/2 [bce(real,1) + bce(fake,0)].
inline ad::Var discriminator_loss(const ad::Var& real_out, const ad::Var& fake_out) {
  return ad::scale(ad::add(bce(real_out, 1.0), bce(fake_out, 0.0)), 0.5);
}

/// Dual-discriminator variant: mean of the per-discriminator values.
inline ad::Var discriminator_loss(const std::vector<ad::Var>& real_outs,
                                  const std::vector<ad::Var>& fake_outs) {
  if (real_outs.empty() || real_outs.size() != fake_outs.size())
    throw Error("discriminator_loss: mismatched output lists");
  ad::Var sum;
  for (size_t i = 0; i < real_outs.size(); ++i) {
    ad::Var one = discriminator_loss(real_outs[i], fake_outs[i]);
    sum = i == 0 ? one : ad::add(sum, one);
  }
  return ad::scale(sum, 1.0 / static_cast<double>(real_outs.size()));
}

/// Non-saturating generator adversarial loss: bce(fake, 1).
inline ad::Var generator_adversarial_loss(const ad::Var& fake_out) { return bce(fake_out, 1.0); }

inline ad::Var generator_adversarial_loss(const std::vector<ad::Var>& fake_outs) {
  if (fake_outs.empty()) throw Error("generator_adversarial_loss: no outputs");
  ad::Var sum;
  for (size_t i = 0; i < fake_outs.size(); ++i) {
    ad::Var one = generator_adversarial_loss(fake_outs[i]);
    sum = i == 0 ? one : ad::add(sum, one);
  }
  return ad::scale(sum, 1.0 / static_cast<double>(fake_outs.size()));
}

/// Mean per-point Euclidean distance between predicted coordinates
/// ((136) or (N,136), order p1,q1,...) and target landmark coordinates,
/// delta-stabilized under the radical.
inline ad::Var landmark_recon_loss(const ad::Var& coords, const Tensor& target_flat) {
  const int64_t per = 2 * data::LandmarkSet::kPoints;
  if (coords->value.numel() % per != 0 || coords->value.numel() != target_flat.numel())
    throw Error("landmark_recon_loss: coordinate shape mismatch");
  const int64_t n = coords->value.numel() / per;
  const int64_t points = n * data::LandmarkSet::kPoints;
  double total = 0;
  for (int64_t k = 0; k < points; ++k) {
    double dx = coords->value[2 * k] - target_flat[2 * k];
    double dy = coords->value[2 * k + 1] - target_flat[2 * k + 1];
    total += std::sqrt(dx * dx + dy * dy + kSqrtDelta);
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(points));
  auto tgt = std::make_shared<Tensor>(target_flat);
  return ad::make_op(std::move(out), {coords}, [tgt, points](ad::Node& self) {
    ad::Node& p0 = *self.parents[0];
    if (!p0.requires_grad) return;
    Tensor& g = p0.ensure_grad();
    double gs = self.grad[0] / static_cast<double>(points);
    for (int64_t k = 0; k < points; ++k) {
      double dx = p0.value[2 * k] - (*tgt)[2 * k];
      double dy = p0.value[2 * k + 1] - (*tgt)[2 * k + 1];
      double r = std::sqrt(dx * dx + dy * dy + kSqrtDelta);
      g[2 * k] += gs * dx / r;
      g[2 * k + 1] += gs * dy / r;
    }
  });
}

inline ad::Var landmark_recon_loss(const ad::Var& coords, const data::LandmarkSet& target) {
  const int64_t n = coords->value.ndim() == 2 ? coords->value.dim(0) : 1;
  std::vector<double> flat;
  flat.reserve(static_cast<size_t>(n) * 136);
  std::vector<double> one = target.to_flat();
  for (int64_t i = 0; i < n; ++i) flat.insert(flat.end(), one.begin(), one.end());
  return landmark_recon_loss(coords, Tensor::from(coords->value.shape(), std::move(flat)));
}

/// Robust pixel loss: per element 0.5 d^2 when |d| < 1, |d| - 0.5
/// otherwise, reduced by mean. Continuous with matching slopes at |d| = 1.
inline ad::Var smooth_l12(const ad::Var& pred, const Tensor& target) {
  if (pred->value.numel() != target.numel()) throw Error("smooth_l12: shape mismatch");
  const int64_t n = pred->value.numel();
  double total = 0;
  for (int64_t i = 0; i < n; ++i) {
    double d = pred->value[i] - target[i];
    double a = std::fabs(d);
    total += a < 1.0 ? 0.5 * d * d : a - 0.5;
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(n));
  auto tgt = std::make_shared<Tensor>(target);
  return ad::make_op(std::move(out), {pred}, [tgt, n](ad::Node& self) {
    ad::Node& p0 = *self.parents[0];
    if (!p0.requires_grad) return;
    Tensor& g = p0.ensure_grad();
    double gs = self.grad[0] / static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i) {
      double d = p0.value[i] - (*tgt)[i];
      double slope = std::fabs(d) < 1.0 ? d : (d > 0 ? 1.0 : -1.0);
      g[i] += gs * slope;
    }
  });
}

enum class NormMode { L1, L2 };

/// Mean absolute (L1) or mean squared (L2) difference.
inline ad::Var reconstruction_norm(const ad::Var& pred, const Tensor& target, NormMode mode) {
  if (pred->value.numel() != target.numel()) throw Error("reconstruction_norm: shape mismatch");
  ad::Var diff = ad::sub(pred, ad::constant(target));
  if (mode == NormMode::L1) return ad::mean_all(ad::abs_op(diff));
  return ad::mean_all(ad::mul(diff, diff));
}

struct LossReport {
  int64_t step = 0;
  double adv_gl = 0, landmark_recon = 0;
  double adv_ge = 0, l12 = 0, identity = 0;
  double d_l = 0, d_e = 0;
  double stage1_total = 0, stage2_total = 0, full = 0;
  double d_l_real_mean = 0, d_l_fake_mean = 0;
  double d_e_real_mean = 0, d_e_fake_mean = 0;

  nlohmann::json to_json() const {
    return {{"step", step},
            {"adv_gl", adv_gl},
            {"landmark_recon", landmark_recon},
            {"adv_ge", adv_ge},
            {"l12", l12},
            {"identity", identity},
            {"d_l", d_l},
            {"d_e", d_e},
            {"stage1_total", stage1_total},
            {"stage2_total", stage2_total},
            {"full", full},
            {"d_l_real_mean", d_l_real_mean},
            {"d_l_fake_mean", d_l_fake_mean},
            {"d_e_real_mean", d_e_real_mean},
            {"d_e_fake_mean", d_e_fake_mean}};
  }

  static LossReport from_json(const nlohmann::json& j) {
    LossReport r;
    r.step = j.value("step", int64_t{0});
    r.adv_gl = j.value("adv_gl", 0.0);
    r.landmark_recon = j.value("landmark_recon", 0.0);
    r.adv_ge = j.value("adv_ge", 0.0);
    r.l12 = j.value("l12", 0.0);
    r.identity = j.value("identity", 0.0);
    r.d_l = j.value("d_l", 0.0);
    r.d_e = j.value("d_e", 0.0);
    r.stage1_total = j.value("stage1_total", 0.0);
    r.stage2_total = j.value("stage2_total", 0.0);
    r.full = j.value("full", 0.0);
    return r;
  }
};

inline double stage1_objective(double adv_gl, double landmark_recon, const LossWeights& w) {
  return adv_gl + w.lambda1 * landmark_recon;
}

inline double stage2_objective(double adv_ge, double l12, double identity, const LossWeights& w) {
  return adv_ge + w.lambda2 * l12 + w.lambda3 * identity;
}

inline double full_objective(double stage1, double stage2) { return stage1 + stage2; }

inline ad::Var stage1_objective(const ad::Var& adv_gl, const ad::Var& landmark_recon,
                                const LossWeights& w) {
  return ad::add(adv_gl, ad::scale(landmark_recon, w.lambda1));
}

inline ad::Var stage2_objective(const ad::Var& adv_ge, const ad::Var& l12, const ad::Var& identity,
                                const LossWeights& w) {
  return ad::add(adv_ge, ad::add(ad::scale(l12, w.lambda2), ad::scale(identity, w.lambda3)));
}

}  // namespace faceforge::losses
