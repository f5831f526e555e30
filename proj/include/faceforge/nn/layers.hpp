#pragma once

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "faceforge/core/ops.hpp"

namespace faceforge::nn {

using StateDict = std::map<std::string, Tensor>;

/// Forward-pass context: RNG for dropout draws and test probes.
struct Ctx {
  Rng* rng = nullptr;
  bool stochastic = false;    // dropout active (training and, per the
                              // inference contract, generation)
  int zero_skip_stage = -1;   // test probe: zero this encoder skip (1-based)
};

/// Base for parameterized blocks: owns named parameter leaves, registers
/// children, and exposes a flat recursive view for optimizers/checkpoints.
class Module {
 public:
  Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;
  virtual ~Module() = default;

  std::vector<ad::Var> parameters() const {
    std::vector<ad::Var> out;
    collect(out);
    return out;
  }

  void state_to(StateDict& dict, const std::string& prefix = "") const {
    for (const auto& p : params_) dict[prefix + p.name] = p.var->value;
    for (const auto& [name, child] : children_) child->state_to(dict, prefix + name + ".");
  }

  void state_from(const StateDict& dict, const std::string& prefix = "") {
    for (auto& p : params_) {
      auto it = dict.find(prefix + p.name);
      if (it == dict.end()) throw RuntimeAbort("checkpoint missing tensor " + prefix + p.name);
      if (it->second.shape() != p.var->value.shape())
        throw RuntimeAbort("checkpoint shape mismatch for " + prefix + p.name);
      p.var->value = it->second;
    }
    for (auto& [name, child] : children_) child->state_from(dict, prefix + name + ".");
  }

  uint64_t param_hash() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    hash_into(h);
    return h;
  }

  void zero_grad() const { ad::zero_grad(parameters()); }

 protected:
  ad::Var add_param(std::string name, Tensor init) {
    params_.push_back({std::move(name), ad::param(std::move(init))});
    return params_.back().var;
  }

  void add_child(std::string name, Module* child) {
    children_.emplace_back(std::move(name), child);
  }

 private:
  void collect(std::vector<ad::Var>& out) const {
    for (const auto& p : params_) out.push_back(p.var);
    for (const auto& [name, child] : children_) child->collect(out);
  }

  void hash_into(uint64_t& h) const {
    for (const auto& p : params_) h = p.var->value.byte_hash(h);
    for (const auto& [name, child] : children_) child->hash_into(h);
  }

  struct Param {
    std::string name;
    ad::Var var;
  };
  std::vector<Param> params_;
  std::vector<std::pair<std::string, Module*>> children_;
};

inline Tensor gaussian_init(Shape shape, Rng& rng, double stddev = 0.02, double mean = 0.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(mean, stddev);
  return t;
}

class Conv2d : public Module {
 public:
  Conv2d(int64_t cin, int64_t cout, int64_t k, int64_t stride, int64_t pad, Rng& rng)
      : stride_(stride), pad_(pad) {
    w_ = add_param("weight", gaussian_init({k, k, cin, cout}, rng));
    b_ = add_param("bias", Tensor({cout}));
  }
  ad::Var forward(const ad::Var& x) const { return ad::conv2d(x, w_, b_, stride_, pad_); }

 private:
  ad::Var w_, b_;
  int64_t stride_, pad_;
};

class ConvTranspose2d : public Module {
 public:
  ConvTranspose2d(int64_t cin, int64_t cout, int64_t k, int64_t stride, int64_t pad, Rng& rng)
      : stride_(stride), pad_(pad) {
    w_ = add_param("weight", gaussian_init({cin, k, k, cout}, rng));
    b_ = add_param("bias", Tensor({cout}));
  }
  ad::Var forward(const ad::Var& x) const {
    return ad::conv2d_transpose(x, w_, b_, stride_, pad_);
  }

 private:
  ad::Var w_, b_;
  int64_t stride_, pad_;
};

class Linear : public Module {
 public:
  Linear(int64_t in, int64_t out, Rng& rng) {
    w_ = add_param("weight", gaussian_init({in, out}, rng));
    b_ = add_param("bias", Tensor({out}));
  }
  ad::Var forward(const ad::Var& x) const { return ad::linear(x, w_, b_); }

 private:
  ad::Var w_, b_;
};

class InstanceNorm : public Module {
 public:
  explicit InstanceNorm(int64_t channels, Rng& rng) {
    gamma_ = add_param("gamma", gaussian_init({channels}, rng, 0.02, 1.0));
    beta_ = add_param("beta", Tensor({channels}));
  }
  ad::Var forward(const ad::Var& x) const { return ad::instance_norm(x, gamma_, beta_); }

 private:
  ad::Var gamma_, beta_;
};

}  // namespace faceforge::nn
