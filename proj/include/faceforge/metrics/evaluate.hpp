#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "faceforge/data/manifest.hpp"
#include "faceforge/metrics/metrics.hpp"
#include "faceforge/train/trainer.hpp"

namespace faceforge::metrics {

/// Small expression classifier; doubles as the inception-score scorer at
/// desk scale (so absolute IS values are not comparable to large
/// pretrained-classifier scores).
class ExpressionClassifier {
 public:
  ExpressionClassifier() = default;

  static ExpressionClassifier train(const data::Dataset& ds, int epochs, uint64_t seed) {
    check(!ds.samples.empty(), "classifier: empty training set");
    ExpressionClassifier c;
    c.vocab_ = ds.expression_vocab;
    Rng init(mix_seed(seed, 0xC1A5));
    c.net_ = std::make_shared<identity::detail::EmbedderNet>(
        64, static_cast<int>(c.vocab_.size()), init, /*keep_head=*/true);

    std::vector<int> labels;
    for (const auto& f : ds.samples)
      labels.push_back(data::one_hot(f.expression, c.vocab_).hot_index);

    train::Adam opt(c.net_->trainable(), 1e-3, 0.9, 0.999);
    Rng rng(mix_seed(seed, 0xC1A6));
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
        ad::Var loss = ad::softmax_cross_entropy(c.net_->logits(ad::constant(xb)), yb);
        opt.zero_grad();
        ad::backward(loss);
        opt.step();
      }
    }
    c.net_->set_requires_grad(false);
    return c;
  }

  /// Class probabilities for one (H,W,3) image.
  Tensor probs(const Tensor& image) const {
    ad::Var logits = net_->logits(ad::constant(
        image.reshaped({1, image.dim(0), image.dim(1), 3})));
    return ad::softmax_rows(logits->value);
  }

  int predict(const Tensor& image) const {
    Tensor p = probs(image);
    int arg = 0;
    for (int64_t j = 1; j < p.dim(1); ++j)
      if (p.at2(0, j) > p.at2(0, arg)) arg = static_cast<int>(j);
    return arg;
  }

  double accuracy(const data::Dataset& ds) const {
    check(!ds.samples.empty(), "classifier: empty evaluation set");
    int correct = 0;
    for (const auto& f : ds.samples)
      if (predict(f.image) == data::one_hot(f.expression, vocab_).hot_index) ++correct;
    return static_cast<double>(correct) / static_cast<double>(ds.samples.size());
  }

  const std::vector<std::string>& vocab() const { return vocab_; }

 private:
  std::shared_ptr<identity::detail::EmbedderNet> net_;
  std::vector<std::string> vocab_;
};

struct MetricsReport {
  double psnr_mean_db = 0;  // +inf sentinel when every pair matches exactly
  double ssim_mean = 0;
  double inception_score = 1;
  double lpips_like_mean = 0;
  double landmark_l2_mean = 0;
  int n_samples = 0;
  bool eval_deterministic = true;
  std::string classifier_note;

  nlohmann::json to_json() const {
    nlohmann::json j{{"ssim_mean", ssim_mean},
                     {"inception_score", inception_score},
                     {"lpips_like_mean", lpips_like_mean},
                     {"landmark_l2_mean", landmark_l2_mean},
                     {"n_samples", n_samples},
                     {"eval_deterministic", eval_deterministic},
                     {"classifier_note", classifier_note}};
    if (std::isinf(psnr_mean_db))
      j["psnr_mean_db"] = "inf";
    else
      j["psnr_mean_db"] = psnr_mean_db;
    return j;
  }

  std::string text_table() const {
    std::ostringstream os;
    os << "metric              value\n";
    os << "------------------  ----------\n";
    char buf[64];
    if (std::isinf(psnr_mean_db))
      os << "psnr_mean_db        inf\n";
    else {
      std::snprintf(buf, sizeof(buf), "%.4f", psnr_mean_db);
      os << "psnr_mean_db        " << buf << "\n";
    }
    std::snprintf(buf, sizeof(buf), "%.4f", ssim_mean);
    os << "ssim_mean           " << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.4f", inception_score);
    os << "inception_score     " << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.4f", lpips_like_mean);
    os << "lpips_like_mean     " << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.4f", landmark_l2_mean);
    os << "landmark_l2_mean    " << buf << "\n";
    os << "n_samples           " << n_samples << "\n";
    return os.str();
  }
};

struct EvalOptions {
  uint64_t seed = 0;
  std::optional<bool> deterministic;  // default true: reported in the result
  data::PairingPolicy pairing = data::PairingPolicy::cross;
  const ExpressionClassifier* classifier = nullptr;
  const identity::IdentityEmbedder* feature_net = nullptr;
  int fallback_train_epochs = 12;
};

inline Tensor to_unit(const Tensor& img) {  // [-1,1] -> [0,1]
  Tensor t = img;
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = (t[i] + 1.0) / 2.0;
  return t;
}

/// Generates for every constructible test pair and scores the outputs
/// against ground truth. Deterministic given (checkpoint, test set, seed).
inline MetricsReport evaluate_model(const train::Trainer& model, const data::Dataset& test,
                                    const EvalOptions& options = {}) {
  check(!test.samples.empty(), "evaluate_model: empty test set");
  auto pairing = data::make_training_pairs(test, options.pairing, options.seed);
  check(!pairing.pairs.empty(), "evaluate_model: no test pairs constructible");

  bool deterministic = options.deterministic.value_or(true);

  // scorers: reuse the model's embedder for the perceptual distance, and a
  // locally trained expression classifier for the inception score.
  std::optional<identity::IdentityEmbedder> local_embedder;
  const identity::IdentityEmbedder* featnet = options.feature_net;
  if (!featnet && model.embedder()) featnet = &*model.embedder();
  std::string note;
  if (!featnet) {
    local_embedder = identity::IdentityEmbedder::train(test, options.fallback_train_epochs,
                                                       mix_seed(options.seed, 0xFEA7));
    featnet = &*local_embedder;
    note += "feature net trained on test ground truth; ";
  }
  std::optional<ExpressionClassifier> local_classifier;
  const ExpressionClassifier* classifier = options.classifier;
  if (!classifier) {
    local_classifier =
        ExpressionClassifier::train(test, options.fallback_train_epochs,
                                    mix_seed(options.seed, 0xC1A55));
    classifier = &*local_classifier;
    note += "inception classifier trained on test ground truth; ";
  }

  MetricsReport rep;
  rep.eval_deterministic = deterministic;
  rep.classifier_note = note.empty() ? "caller-provided scorers" : note;

  double psnr_sum = 0;
  bool psnr_inf = false;
  Tensor probs({static_cast<int64_t>(pairing.pairs.size()),
                static_cast<int64_t>(test.expression_vocab.size())});
  int64_t row = 0;
  for (const auto& pair : pairing.pairs) {
    const data::FaceSample& x = pair.x(test);
    const data::FaceSample& y = pair.y(test);
    train::GenerateOptions gopt;
    gopt.seed = mix_seed(options.seed, static_cast<uint64_t>(row));
    gopt.deterministic = deterministic;
    train::GenerateResult gen = model.generate(
        x.image, y.expression,
        model.intensity_levels() > 0 && model.config().intensity_conditioning
            ? std::optional<int>(y.intensity.value_or(1))
            : std::nullopt,
        gopt);

    Tensor gen01 = to_unit(gen.face), y01 = to_unit(y.image);
    double p = psnr(gen01, y01, 1.0);
    if (std::isinf(p))
      psnr_inf = true;
    else
      psnr_sum += p;
    rep.ssim_mean += ssim(gen01, y01, 1.0);
    rep.lpips_like_mean += lpips_like(*featnet, gen.face, y.image);
    rep.landmark_l2_mean += codec::landmark_distance(gen.landmarks, y.landmarks);

    Tensor pr = classifier->probs(gen.face);
    for (int64_t j = 0; j < pr.dim(1); ++j) probs.at2(row, j) = pr.at2(0, j);
    ++row;
  }
  const double n = static_cast<double>(pairing.pairs.size());
  rep.n_samples = static_cast<int>(pairing.pairs.size());
  // any exact match drives the mean to the sentinel
  rep.psnr_mean_db = psnr_inf ? std::numeric_limits<double>::infinity() : psnr_sum / n;
  rep.ssim_mean /= n;
  rep.lpips_like_mean /= n;
  rep.landmark_l2_mean /= n;
  rep.inception_score = inception_score(probs);
  return rep;
}

/// Contact sheet: one row per pair, columns (input, landmark image,
/// generated, target).
inline void write_contact_sheet(const std::filesystem::path& path, const train::Trainer& model,
                                const data::Dataset& test, int max_rows = 8, uint64_t seed = 0) {
  auto pairing = data::make_training_pairs(test, data::PairingPolicy::cross, seed);
  check(!pairing.pairs.empty(), "contact sheet: no pairs");
  int rows = std::min<int>(max_rows, static_cast<int>(pairing.pairs.size()));
  int64_t res = test.resolution;
  Tensor sheet({static_cast<int64_t>(rows) * res, 4 * res, 3}, 1.0);
  for (int r = 0; r < rows; ++r) {
    const auto& pair = pairing.pairs[static_cast<size_t>(r)];
    train::GenerateOptions gopt;
    gopt.seed = mix_seed(seed, static_cast<uint64_t>(r));
    gopt.deterministic = true;
    train::GenerateResult gen = model.generate(
        pair.x(test).image, pair.y(test).expression,
        model.intensity_levels() > 0 && model.config().intensity_conditioning
            ? std::optional<int>(pair.y(test).intensity.value_or(1))
            : std::nullopt,
        gopt);
    const Tensor* cells[4] = {&pair.x(test).image, &gen.landmark_image.image, &gen.face,
                              &pair.y(test).image};
    for (int col = 0; col < 4; ++col)
      for (int64_t y = 0; y < res; ++y)
        for (int64_t x = 0; x < res; ++x)
          for (int64_t c = 0; c < 3; ++c)
            sheet.at3(r * res + y, col * res + x, c) = cells[col]->at3(y, x, c);
  }
  img::save_png(path, sheet);
}

// ---------------------------------------------------------------------------
// Data-augmentation experiment
// ---------------------------------------------------------------------------

enum class AugMode { RealReal, RealSyn, RealNorReal, RealSynReal };

inline std::string to_string(AugMode m) {
  switch (m) {
    case AugMode::RealReal: return "Real/Real";
    case AugMode::RealSyn: return "Real/Syn.";
    case AugMode::RealNorReal: return "Real+Nor./Real";
    default: return "Real+Syn./Real";
  }
}

struct AugmentationResult {
  std::map<std::string, double> accuracy;
  int real_count = 0, synth_count = 0, nor_count = 0;

  nlohmann::json to_json() const {
    nlohmann::json j{{"real_count", real_count},
                     {"synth_count", synth_count},
                     {"nor_count", nor_count}};
    for (const auto& [mode, acc] : accuracy) j["accuracy"][mode] = acc;
    return j;
  }

  std::string text_table() const {
    std::ostringstream os;
    os << "train/test           accuracy\n";
    os << "-------------------  --------\n";
    for (const auto& [mode, acc] : accuracy) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%6.2f%%", 100.0 * acc);
      os << mode;
      for (size_t i = mode.size(); i < 21; ++i) os << ' ';
      os << buf << "\n";
    }
    return os.str();
  }
};

namespace detail {

/// Conventional augmentation: noise, small rotation, random crop-resize.
inline data::FaceSample nor_augment(const data::FaceSample& src, Rng& rng) {
  const int64_t h = src.image.dim(0), w = src.image.dim(1);
  double angle = rng.uniform(-12.0, 12.0) * M_PI / 180.0;
  double scale = rng.uniform(0.85, 0.97);
  double cx = (static_cast<double>(w) - 1) / 2, cy = (static_cast<double>(h) - 1) / 2;
  double ox = rng.uniform(-2.0, 2.0), oy = rng.uniform(-2.0, 2.0);
  double ca = std::cos(angle), sa = std::sin(angle);
  Tensor out(src.image.shape());
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      // rotate + crop around the center
      double dx = (static_cast<double>(x) - cx) * scale, dy = (static_cast<double>(y) - cy) * scale;
      double sxp = cx + ox + ca * dx - sa * dy;
      double syp = cy + oy + sa * dx + ca * dy;
      img::BilinearTap tap = img::bilinear_tap(src.image, sxp, syp);
      for (int64_t c = 0; c < 3; ++c) {
        double v = tap.value[c] + rng.normal(0, 0.05);
        out.at3(y, x, c) = std::clamp(v, -1.0, 1.0);
      }
    }
  }
  data::FaceSample aug = src;
  aug.image = std::move(out);
  aug.source_path += "#nor";
  return aug;
}

inline void require_all_classes(const data::Dataset& ds, const std::string& which) {
  std::set<std::string> seen;
  for (const auto& f : ds.samples) seen.insert(f.expression);
  for (const auto& v : ds.expression_vocab)
    if (!seen.count(v))
      throw ValidationError("augmentation: class '" + v + "' absent from the " + which +
                            " training set");
}

}  // namespace detail

/// Table-2 style protocol. synth_train must hold generator outputs over the
/// real training inputs; Real+Nor. is count-matched to Real+Syn. so the two
/// augmented training sets are the same size.
inline AugmentationResult augmentation_experiment(const data::Dataset& real_train,
                                                  const data::Dataset& synth_train,
                                                  const data::Dataset& real_test,
                                                  const std::set<AugMode>& modes, uint64_t seed,
                                                  int epochs = 12) {
  check(!modes.empty(), "augmentation: no modes requested");
  check(real_train.expression_vocab == real_test.expression_vocab,
        "augmentation: vocabulary mismatch");

  AugmentationResult out;
  out.real_count = static_cast<int>(real_train.samples.size());
  out.synth_count = static_cast<int>(synth_train.samples.size());

  for (AugMode mode : modes) {
    data::Dataset train_set = real_train;
    const data::Dataset* test_set = &real_test;
    switch (mode) {
      case AugMode::RealReal:
        break;
      case AugMode::RealSyn:
        check(!synth_train.samples.empty(), "augmentation: empty synthetic set");
        test_set = &synth_train;
        break;
      case AugMode::RealNorReal: {
        Rng rng(mix_seed(seed, 0x9012));
        for (int k = 0; k < out.synth_count; ++k) {
          const auto& src =
              real_train.samples[static_cast<size_t>(k) % real_train.samples.size()];
          train_set.samples.push_back(detail::nor_augment(src, rng));
        }
        out.nor_count = out.synth_count;  // fair-comparison contract
        break;
      }
      case AugMode::RealSynReal:
        train_set.samples.insert(train_set.samples.end(), synth_train.samples.begin(),
                                 synth_train.samples.end());
        break;
    }
    detail::require_all_classes(train_set, to_string(mode));
    ExpressionClassifier clf = ExpressionClassifier::train(
        train_set, epochs, mix_seed(seed, static_cast<uint64_t>(mode)));
    out.accuracy[to_string(mode)] = clf.accuracy(*test_set);
  }
  return out;
}

}  // namespace faceforge::metrics
