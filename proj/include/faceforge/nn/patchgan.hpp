#pragma once

#include <memory>
#include <vector>

#include "faceforge/nn/layers.hpp"
#include "faceforge/nn/unet.hpp"

namespace faceforge::nn {

struct DiscriminatorSpec {
  int in_channels = 6;
  int n_layers = 3;  // 3 strided stages -> 70x70 receptive field
  int base_filters = 64;
  bool dual = false;

  void validate() const {
    check(in_channels >= 1, "DiscriminatorSpec: in_channels must be positive");
    check(n_layers >= 1, "DiscriminatorSpec: n_layers must be >= 1");
    check(base_filters >= 1, "DiscriminatorSpec: base_filters must be positive");
  }
};

/// PatchGAN: judges overlapping receptive-field patches, emitting a 2-D map
/// of probabilities through a final Sigmoid.
class PatchDiscriminator : public Module {
 public:
  PatchDiscriminator(int in_channels, int n_layers, int base_filters, Rng& rng)
      : n_layers_(n_layers) {
    int cin = in_channels;
    auto width = [&](int i) {
      return static_cast<int>(std::min<int64_t>(static_cast<int64_t>(base_filters) << i,
                                                8LL * base_filters));
    };
    for (int i = 0; i < n_layers; ++i) {
      int cout = width(i);
      convs_.push_back(std::make_unique<Conv2d>(cin, cout, 4, 2, 1, rng));
      add_child("conv" + std::to_string(i), convs_.back().get());
      norms_.push_back(i == 0 ? nullptr : std::make_unique<InstanceNorm>(cout, rng));
      if (norms_.back()) add_child("norm" + std::to_string(i), norms_.back().get());
      cin = cout;
    }
    pre_ = std::make_unique<Conv2d>(cin, width(n_layers), 4, 1, 1, rng);
    add_child("pre", pre_.get());
    pre_norm_ = std::make_unique<InstanceNorm>(width(n_layers), rng);
    add_child("pre_norm", pre_norm_.get());
    out_ = std::make_unique<Conv2d>(width(n_layers), 1, 4, 1, 1, rng);
    add_child("out", out_.get());
  }

  ad::Var forward(const ad::Var& x) const {
    ad::Var h = x;
    if (h->value.ndim() == 3)
      h = ad::reshape(h, {1, h->value.dim(0), h->value.dim(1), h->value.dim(2)});
    for (size_t i = 0; i < convs_.size(); ++i) {
      h = convs_[i]->forward(h);
      if (norms_[i]) h = norms_[i]->forward(h);
      h = ad::leaky_relu(h, kLeakySlope);
    }
    h = ad::leaky_relu(pre_norm_->forward(pre_->forward(h)), kLeakySlope);
    return ad::sigmoid_op(out_->forward(h));
  }

  int n_layers() const { return n_layers_; }

 private:
  int n_layers_;
  std::vector<std::unique_ptr<Conv2d>> convs_;
  std::vector<std::unique_ptr<InstanceNorm>> norms_;
  std::unique_ptr<Conv2d> pre_;
  std::unique_ptr<InstanceNorm> pre_norm_;
  std::unique_ptr<Conv2d> out_;
};

/// One discriminator, or the dual pair (n_layers and n_layers-1 scales)
/// whose losses are averaged by the loss layer.
class DiscriminatorBank : public Module {
 public:
  DiscriminatorBank(const DiscriminatorSpec& spec, Rng& rng) : spec_(spec) {
    spec.validate();
    ds_.push_back(std::make_unique<PatchDiscriminator>(spec.in_channels, spec.n_layers,
                                                       spec.base_filters, rng));
    add_child("d0", ds_.back().get());
    if (spec.dual) {
      ds_.push_back(std::make_unique<PatchDiscriminator>(
          spec.in_channels, std::max(1, spec.n_layers - 1), spec.base_filters, rng));
      add_child("d1", ds_.back().get());
    }
  }

  std::vector<ad::Var> forward_all(const ad::Var& x) const {
    std::vector<ad::Var> outs;
    outs.reserve(ds_.size());
    for (const auto& d : ds_) outs.push_back(d->forward(x));
    return outs;
  }

  size_t count() const { return ds_.size(); }
  const DiscriminatorSpec& spec() const { return spec_; }

 private:
  DiscriminatorSpec spec_;
  std::vector<std::unique_ptr<PatchDiscriminator>> ds_;
};

}  // namespace faceforge::nn
