#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "faceforge/data/types.hpp"
#include "faceforge/nn/layers.hpp"
#include "faceforge/train/adam.hpp"
#include "faceforge/train/checkpoint.hpp"

namespace faceforge::identity {

namespace detail {

/// Three strided convs, global average pooling, and a projection to the
/// embedding; a classification head is attached only while training.
class EmbedderNet : public nn::Module {
 public:
  EmbedderNet(int embedding_dim, int n_classes, Rng& rng, bool keep_head = false) {
    conv1_ = std::make_unique<nn::Conv2d>(3, 16, 3, 2, 1, rng);
    conv2_ = std::make_unique<nn::Conv2d>(16, 32, 3, 2, 1, rng);
    conv3_ = std::make_unique<nn::Conv2d>(32, 64, 3, 2, 1, rng);
    norm2_ = std::make_unique<nn::InstanceNorm>(32, rng);
    norm3_ = std::make_unique<nn::InstanceNorm>(64, rng);
    fc_ = std::make_unique<nn::Linear>(64, embedding_dim, rng);
    head_ = std::make_unique<nn::Linear>(embedding_dim, n_classes, rng);
    add_child("conv1", conv1_.get());
    add_child("conv2", conv2_.get());
    add_child("conv3", conv3_.get());
    add_child("norm2", norm2_.get());
    add_child("norm3", norm3_.get());
    add_child("fc", fc_.get());
    // The identity embedder discards the head after training, so by
    // default it is not registered (never checkpointed or hashed).
    if (keep_head) add_child("head", head_.get());
  }

  std::vector<ad::Var> features(const ad::Var& x) const {
    std::vector<ad::Var> feats;
    ad::Var h = ad::leaky_relu(conv1_->forward(x), 0.2);
    feats.push_back(h);
    h = ad::leaky_relu(norm2_->forward(conv2_->forward(h)), 0.2);
    feats.push_back(h);
    h = ad::leaky_relu(norm3_->forward(conv3_->forward(h)), 0.2);
    feats.push_back(h);
    return feats;
  }

  ad::Var embed(const ad::Var& x) const {
    return ad::l2_normalize_rows(fc_->forward(ad::global_avg_pool(features(x).back())));
  }

  ad::Var logits(const ad::Var& x) const { return head_->forward(embed(x)); }

  std::vector<ad::Var> trainable() const {
    auto ps = parameters();
    auto head = head_->parameters();
    ps.insert(ps.end(), head.begin(), head.end());
    return ps;
  }

  void set_requires_grad(bool on) const {
    for (const auto& p : parameters()) p->requires_grad = on;
  }

 private:
  std::unique_ptr<nn::Conv2d> conv1_, conv2_, conv3_;
  std::unique_ptr<nn::InstanceNorm> norm2_, norm3_;
  std::unique_ptr<nn::Linear> fc_, head_;
};

}  // namespace detail

/// Frozen face feature extractor for the identity-distance loss, trained
/// locally as a subject classifier; the classifier head is discarded and
/// embeddings are L2-normalized.
class IdentityEmbedder {
 public:
  IdentityEmbedder() = default;

  static IdentityEmbedder train(const data::Dataset& ds, int epochs, uint64_t seed,
                                int embedding_dim = 64) {
    std::vector<std::string> subjects = ds.subjects();
    check(subjects.size() >= 2, "train_embedder: need at least 2 subjects");
    check(epochs >= 1, "train_embedder: epochs must be >= 1");

    IdentityEmbedder e;
    e.subject_vocab_ = subjects;
    e.embedding_dim_ = embedding_dim;
    Rng init_rng(mix_seed(seed, 0x1DE7));
    e.net_ = std::make_shared<detail::EmbedderNet>(embedding_dim,
                                                   static_cast<int>(subjects.size()), init_rng);

    std::vector<int> labels;
    for (const auto& f : ds.samples)
      labels.push_back(static_cast<int>(
          std::find(subjects.begin(), subjects.end(), f.subject_id) - subjects.begin()));

    train::Adam opt(e.net_->trainable(), 1e-3, 0.9, 0.999);
    Rng rng(mix_seed(seed, 0x1DE8));
    const int64_t batch = 16;
    const int64_t n = static_cast<int64_t>(ds.samples.size());
    for (int epoch = 0; epoch < epochs; ++epoch) {
      std::vector<int> order = rng.permutation(static_cast<int>(n));
      for (int64_t at = 0; at < n; at += batch) {
        int64_t bn = std::min(batch, n - at);
        Tensor xb({bn, ds.samples[0].image.dim(0), ds.samples[0].image.dim(1), 3});
        std::vector<int> yb;
        for (int64_t b = 0; b < bn; ++b) {
          int idx = order[static_cast<size_t>(at + b)];
          const Tensor& im = ds.samples[static_cast<size_t>(idx)].image;
          std::copy(im.data(), im.data() + im.numel(), xb.data() + b * im.numel());
          yb.push_back(labels[static_cast<size_t>(idx)]);
        }
        ad::Var loss = ad::softmax_cross_entropy(e.net_->logits(ad::constant(xb)), yb);
        opt.zero_grad();
        ad::backward(loss);
        opt.step();
      }
    }

    // training accuracy, then freeze
    int correct = 0;
    for (size_t i = 0; i < ds.samples.size(); ++i) {
      Tensor probs = ad::softmax_rows(
          e.net_->logits(ad::constant(batched(ds.samples[i].image)))->value);
      int arg = 0;
      for (int64_t k = 1; k < probs.dim(1); ++k)
        if (probs.at2(0, k) > probs.at2(0, arg)) arg = static_cast<int>(k);
      if (arg == labels[i]) ++correct;
    }
    e.train_accuracy_ = static_cast<double>(correct) / static_cast<double>(ds.samples.size());
    e.freeze();
    return e;
  }

  bool frozen() const { return frozen_; }
  int embedding_dim() const { return embedding_dim_; }
  double train_accuracy() const { return train_accuracy_; }
  const std::vector<std::string>& subject_vocab() const { return subject_vocab_; }
  uint64_t param_hash() const { return net_->param_hash(); }

  /// (N,emb) unit-norm embeddings; gradients flow to the input only.
  ad::Var embed_var(const ad::Var& img) const {
    require_net();
    ad::Var x = img;
    if (x->value.ndim() == 3)
      x = ad::reshape(x, {1, x->value.dim(0), x->value.dim(1), x->value.dim(2)});
    return net_->embed(x);
  }

  Tensor embed(const Tensor& img) const {
    ad::Var v = embed_var(ad::constant(img));
    return v->value.reshaped({v->value.numel()});
  }

  /// Intermediate conv feature maps (for the learned perceptual distance).
  std::vector<ad::Var> feature_maps(const ad::Var& img) const {
    require_net();
    ad::Var x = img;
    if (x->value.ndim() == 3)
      x = ad::reshape(x, {1, x->value.dim(0), x->value.dim(1), x->value.dim(2)});
    return net_->features(x);
  }

  void save(const std::filesystem::path& path) const {
    require_net();
    nn::StateDict dict;
    net_->state_to(dict);
    dict["__meta.embedding_dim"] = Tensor::scalar(embedding_dim_);
    dict["__meta.frozen"] = Tensor::scalar(frozen_ ? 1.0 : 0.0);
    dict["__meta.train_accuracy"] = Tensor::scalar(train_accuracy_);
    dict["__meta.n_subjects"] = Tensor::scalar(static_cast<double>(subject_vocab_.size()));
    train::save_tensors(path, dict);
    std::ofstream vocab(path.string() + ".vocab");
    for (const auto& s : subject_vocab_) vocab << s << "\n";
  }

  static IdentityEmbedder load(const std::filesystem::path& path) {
    nn::StateDict dict = train::load_tensors(path);
    IdentityEmbedder e;
    e.embedding_dim_ = static_cast<int>(dict.at("__meta.embedding_dim").item());
    e.train_accuracy_ = dict.at("__meta.train_accuracy").item();
    int n_subjects = static_cast<int>(dict.at("__meta.n_subjects").item());
    std::ifstream vocab(path.string() + ".vocab");
    std::string line;
    while (std::getline(vocab, line))
      if (!line.empty()) e.subject_vocab_.push_back(line);
    if (static_cast<int>(e.subject_vocab_.size()) != n_subjects)
      throw RuntimeAbort("embedder vocab file does not match checkpoint");
    Rng rng(0);
    e.net_ = std::make_shared<detail::EmbedderNet>(e.embedding_dim_, n_subjects, rng);
    e.net_->state_from(dict);
    if (dict.at("__meta.frozen").item() != 0.0) e.freeze();
    return e;
  }

 private:
  static Tensor batched(const Tensor& im) {
    return im.reshaped({1, im.dim(0), im.dim(1), im.dim(2)});
  }

  void require_net() const {
    if (!net_) throw Error("IdentityEmbedder: not trained or loaded");
  }

  void freeze() {
    net_->set_requires_grad(false);
    frozen_ = true;
  }

  std::shared_ptr<detail::EmbedderNet> net_;
  std::vector<std::string> subject_vocab_;
  int embedding_dim_ = 64;
  double train_accuracy_ = 0;
  bool frozen_ = false;
};

}  // namespace faceforge::identity

namespace faceforge::losses {

/// Identity distance (frozen-extractor contract): mean absolute difference
/// between the embeddings of target and generated images. Gradients reach
/// the generated image only.
inline ad::Var identity_loss(const identity::IdentityEmbedder& embedder, const Tensor& y,
                             const ad::Var& y_hat) {
  check(embedder.frozen(), "identity_loss: embedder must be frozen");
  ad::Var fy = embedder.embed_var(ad::constant(y));
  ad::Var fyh = embedder.embed_var(y_hat);
  return ad::mean_all(ad::abs_op(ad::sub(fy, fyh)));
}

}  // namespace faceforge::losses
