#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "faceforge/codec/landmark_image.hpp"
#include "faceforge/nn/layers.hpp"

namespace faceforge::nn {

// Architecture constants shared by both generators.
inline constexpr double kLeakySlope = 0.2;     // encoder activations
inline constexpr double kDropoutRate = 0.5;    // decoder noise source
inline constexpr int kDropoutDecoderBlocks = 3;

struct GeneratorSpec {
  int resolution = 256;
  int in_channels = 3;
  int out_channels = 3;
  int base_filters = 64;
  std::vector<int> label_dims;  // l_e size, plus l_i size when conditioned
  bool coordinate_head = false;

  int depth() const {
    int d = 0, r = resolution;
    while (r > 1) {
      r >>= 1;
      ++d;
    }
    return d;
  }

  void validate() const {
    check(resolution >= 32 && (resolution & (resolution - 1)) == 0,
          "GeneratorSpec: resolution must be a power of two >= 32");
    check(base_filters >= 1, "GeneratorSpec: base_filters must be positive");
    for (int d : label_dims) check(d >= 1, "GeneratorSpec: label dims must be positive");
  }

  /// Encoder filter width at 1-based stage i: doubles per stage, capped.
  int filters(int stage) const {
    int64_t f = static_cast<int64_t>(base_filters) << (stage - 1);
    return static_cast<int>(std::min<int64_t>(f, 8LL * base_filters));
  }
};

namespace detail {

/// Shared pix2pix-style encoder: stage 1 is a bare strided conv; later
/// stages are lrelu -> conv -> norm, except the unnormalized 1x1 bottleneck.
class Encoder : public Module {
 public:
  Encoder(const GeneratorSpec& spec, Rng& rng) : depth_(spec.depth()) {
    int cin = spec.in_channels;
    for (int i = 1; i <= depth_; ++i) {
      int cout = spec.filters(i);
      convs_.push_back(std::make_unique<Conv2d>(cin, cout, 4, 2, 1, rng));
      add_child("conv" + std::to_string(i), convs_.back().get());
      if (i > 1 && i < depth_) {
        norms_.push_back(std::make_unique<InstanceNorm>(cout, rng));
        add_child("norm" + std::to_string(i), norms_.back().get());
      } else {
        norms_.push_back(nullptr);
      }
      cin = cout;
    }
  }

  /// Returns all stage outputs; back() is the (N,1,1,C) bottleneck.
  std::vector<ad::Var> forward(const ad::Var& x) const {
    std::vector<ad::Var> stages;
    ad::Var h = x;
    for (int i = 1; i <= depth_; ++i) {
      if (i > 1) h = ad::leaky_relu(h, kLeakySlope);
      h = convs_[static_cast<size_t>(i - 1)]->forward(h);
      if (norms_[static_cast<size_t>(i - 1)]) h = norms_[static_cast<size_t>(i - 1)]->forward(h);
      stages.push_back(h);
    }
    return stages;
  }

 private:
  int depth_;
  std::vector<std::unique_ptr<Conv2d>> convs_;
  std::vector<std::unique_ptr<InstanceNorm>> norms_;
};

/// One fully connected layer per label vector; outputs are concatenated
/// with the bottleneck embedding channel-wise.
class LabelInjector : public Module {
 public:
  LabelInjector(const GeneratorSpec& spec, Rng& rng) : width_(spec.filters(spec.depth())) {
    for (size_t j = 0; j < spec.label_dims.size(); ++j) {
      fcs_.push_back(std::make_unique<Linear>(spec.label_dims[j], width_, rng));
      add_child("label_fc" + std::to_string(j), fcs_.back().get());
    }
  }

  /// bottleneck: (N,1,1,C). labels[j]: (N,label_dims[j]).
  ad::Var inject(const ad::Var& bottleneck, const std::vector<Tensor>& labels) const {
    if (labels.size() != fcs_.size())
      throw Error("label count mismatch: got " + std::to_string(labels.size()) + ", expected " +
                  std::to_string(fcs_.size()));
    if (fcs_.empty()) return bottleneck;
    int64_t n = bottleneck->value.dim(0);
    std::vector<ad::Var> parts{bottleneck};
    for (size_t j = 0; j < fcs_.size(); ++j) {
      const Tensor& lab = labels[j];
      Tensor batched = lab.ndim() == 1 ? lab.reshaped({1, lab.dim(0)}) : lab;
      if (batched.dim(0) != n) throw Error("label batch mismatch");
      ad::Var feat = fcs_[j]->forward(ad::constant(batched));
      parts.push_back(ad::reshape(feat, {n, 1, 1, width_}));
    }
    return ad::concat_last(parts);
  }

  int64_t extra_channels() const { return static_cast<int64_t>(fcs_.size()) * width_; }

 private:
  int64_t width_;
  std::vector<std::unique_ptr<Linear>> fcs_;
};

}  // namespace detail

/// Stage-I generator G_l. A convolutional encoder embeds the conditional
/// face; the expression (and optional intensity) label joins at the
/// bottleneck; the decoder is a fully connected stack (plain rectifiers,
/// dropout on its first three blocks) ending in a coordinate head whose
/// 136 outputs are squashed into [0, resolution). The landmark image output
/// is the differentiable rendering of those coordinates against the input.
class LandmarkGenerator : public Module {
 public:
  LandmarkGenerator(const GeneratorSpec& spec, Rng& rng)
      : spec_(spec),
        encoder_(std::make_unique<detail::Encoder>(spec, rng)),
        labels_(std::make_unique<detail::LabelInjector>(spec, rng)) {
    spec.validate();
    check(spec.coordinate_head, "LandmarkGenerator requires spec.coordinate_head");
    add_child("encoder", encoder_.get());
    add_child("labels", labels_.get());
    int64_t width = spec.filters(spec.depth());
    int64_t in = width + labels_->extra_channels();
    for (int i = 0; i < kDropoutDecoderBlocks; ++i) {
      hidden_.push_back(std::make_unique<Linear>(in, width, rng));
      add_child("head_fc" + std::to_string(i), hidden_.back().get());
      in = width;
    }
    out_ = std::make_unique<Linear>(in, 2 * data::LandmarkSet::kPoints, rng);
    add_child("head_out", out_.get());
  }

  struct Output {
    ad::Var coords;  // (N,136) in [0, resolution)
    ad::Var image;   // (N,H,W,3) rendered landmark image
    bool clamped = false;
  };

  Output forward(const Tensor& x, const std::vector<Tensor>& labels,
                 const codec::RenderConfig& render_cfg, Ctx& ctx) const {
    Tensor xb = x.ndim() == 3 ? x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)}) : x;
    if (xb.dim(1) != spec_.resolution || xb.dim(2) != spec_.resolution)
      throw Error("LandmarkGenerator: input resolution mismatch");
    std::vector<ad::Var> stages = encoder_->forward(ad::constant(xb));
    ad::Var emb = labels_->inject(stages.back(), labels);
    int64_t n = xb.dim(0);
    ad::Var h = ad::reshape(emb, {n, emb->value.numel() / n});
    for (const auto& fc : hidden_) {
      h = ad::relu(fc->forward(h));
      if (ctx.stochastic && ctx.rng) h = ad::dropout(h, kDropoutRate, *ctx.rng, true);
    }
    Output out;
    out.coords = ad::scale(ad::sigmoid_op(out_->forward(h)),
                           static_cast<double>(spec_.resolution));
    out.image = codec::render_landmark_image_op(out.coords, xb, render_cfg, &out.clamped);
    return out;
  }

  const GeneratorSpec& spec() const { return spec_; }

 private:
  GeneratorSpec spec_;
  std::unique_ptr<detail::Encoder> encoder_;
  std::unique_ptr<detail::LabelInjector> labels_;
  std::vector<std::unique_ptr<Linear>> hidden_;
  std::unique_ptr<Linear> out_;
};

/// Stage-II generator G_e: U-Net over the 6-channel (conditional face +
/// landmark image) input with mirrored skip connections, label injection at
/// the bottleneck, dropout on the three innermost decoder blocks, Tanh out.
class ExpressionGenerator : public Module {
 public:
  ExpressionGenerator(const GeneratorSpec& spec, Rng& rng)
      : spec_(spec),
        encoder_(std::make_unique<detail::Encoder>(spec, rng)),
        labels_(std::make_unique<detail::LabelInjector>(spec, rng)) {
    spec.validate();
    check(spec.in_channels == 6,
          "ExpressionGenerator expects 6 input channels (face + landmark image)");
    add_child("encoder", encoder_.get());
    add_child("labels", labels_.get());
    int depth = spec.depth();
    for (int d = depth; d >= 1; --d) {
      int64_t cin;
      if (d == depth)
        cin = spec.filters(depth) + labels_->extra_channels();
      else
        cin = static_cast<int64_t>(spec.filters(d)) * 2;  // previous output + skip
      int64_t cout = d > 1 ? spec.filters(d - 1) : spec.out_channels;
      deconvs_.push_back(std::make_unique<ConvTranspose2d>(cin, cout, 4, 2, 1, rng));
      add_child("deconv" + std::to_string(d), deconvs_.back().get());
      if (d > 1) {
        norms_.push_back(std::make_unique<InstanceNorm>(cout, rng));
        add_child("dnorm" + std::to_string(d), norms_.back().get());
      } else {
        norms_.push_back(nullptr);
      }
    }
  }

  /// x6: (N,H,W,6) or (H,W,6).
  ad::Var forward(const ad::Var& x6, const std::vector<Tensor>& labels, Ctx& ctx) const {
    ad::Var x = x6;
    if (x->value.ndim() == 3)
      x = ad::reshape(x, {1, x->value.dim(0), x->value.dim(1), x->value.dim(2)});
    if (x->value.dim(3) != spec_.in_channels)
      throw Error("ExpressionGenerator: expected " + std::to_string(spec_.in_channels) +
                  " channels, got " + std::to_string(x->value.dim(3)));
    if (x->value.dim(1) != spec_.resolution)
      throw Error("ExpressionGenerator: input resolution mismatch");

    std::vector<ad::Var> stages = encoder_->forward(x);
    int depth = spec_.depth();
    ad::Var h = labels_->inject(stages.back(), labels);
    for (int d = depth; d >= 1; --d) {
      if (d < depth) {
        ad::Var skip = stages[static_cast<size_t>(d - 1)];
        if (ctx.zero_skip_stage == d) skip = ad::constant(Tensor(skip->value.shape()));
        h = ad::concat_last({h, skip});
      }
      h = ad::relu(h);
      h = deconvs_[static_cast<size_t>(depth - d)]->forward(h);
      if (d > 1) {
        h = norms_[static_cast<size_t>(depth - d)]->forward(h);
        if (depth - d < kDropoutDecoderBlocks && ctx.stochastic && ctx.rng)
          h = ad::dropout(h, kDropoutRate, *ctx.rng, true);
      } else {
        h = ad::tanh_op(h);
      }
    }
    return h;
  }

  const GeneratorSpec& spec() const { return spec_; }

 private:
  GeneratorSpec spec_;
  std::unique_ptr<detail::Encoder> encoder_;
  std::unique_ptr<detail::LabelInjector> labels_;
  std::vector<std::unique_ptr<ConvTranspose2d>> deconvs_;
  std::vector<std::unique_ptr<InstanceNorm>> norms_;
};

}  // namespace faceforge::nn
