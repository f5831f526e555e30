#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "faceforge/nn/layers.hpp"

namespace faceforge::train {

/// Adam with bias correction. Parameters with no accumulated gradient in
/// the current phase are left untouched.
class Adam {
 public:
  Adam(std::vector<ad::Var> params, double lr, double beta1, double beta2, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }

  void step() {
    ++t_;
    double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (size_t k = 0; k < params_.size(); ++k) {
      ad::Node& p = *params_[k];
      if (p.grad.numel() != p.value.numel()) continue;  // no gradient this phase
      for (int64_t i = 0; i < p.value.numel(); ++i) {
        double g = p.grad[i];
        m_[k][i] = b1_ * m_[k][i] + (1.0 - b1_) * g;
        v_[k][i] = b2_ * v_[k][i] + (1.0 - b2_) * g * g;
        double mhat = m_[k][i] / c1;
        double vhat = v_[k][i] / c2;
        p.value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  void zero_grad() { ad::zero_grad(params_); }

  void state_to(nn::StateDict& dict, const std::string& prefix) const {
    for (size_t k = 0; k < params_.size(); ++k) {
      dict[prefix + "m" + std::to_string(k)] = m_[k];
      dict[prefix + "v" + std::to_string(k)] = v_[k];
    }
    dict[prefix + "t"] = Tensor::scalar(static_cast<double>(t_));
  }

  void state_from(const nn::StateDict& dict, const std::string& prefix) {
    for (size_t k = 0; k < params_.size(); ++k) {
      m_[k] = dict.at(prefix + "m" + std::to_string(k));
      v_[k] = dict.at(prefix + "v" + std::to_string(k));
    }
    t_ = static_cast<int64_t>(dict.at(prefix + "t").item());
  }

 private:
  std::vector<ad::Var> params_;
  std::vector<Tensor> m_, v_;
  double lr_, b1_, b2_, eps_;
  int64_t t_ = 0;
};

}  // namespace faceforge::train
