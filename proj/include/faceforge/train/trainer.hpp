#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "faceforge/data/pairs.hpp"
#include "faceforge/identity/embedder.hpp"
#include "faceforge/losses/losses.hpp"
#include "faceforge/nn/patchgan.hpp"
#include "faceforge/nn/unet.hpp"
#include "faceforge/train/adam.hpp"
#include "faceforge/train/checkpoint.hpp"
#include "faceforge/train/config.hpp"

namespace faceforge::train {

struct GenerateOptions {
  uint64_t seed = 0;
  std::optional<bool> deterministic;  // default: config.eval_deterministic
};

struct GenerateResult {
  data::LandmarkSet landmarks;
  codec::LandmarkImage landmark_image;
  Tensor face;  // (H,W,3) in (-1,1)
};

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: no checkpoints/logs written
  std::function<void(const losses::LossReport&)> on_step;
};

/// Runs the alternating two-stage optimization: per step, D_l, G_l, D_e,
/// then G_e, in that order. During the G_e update gradients flow through
/// the rendered landmark image back into G_l unless detach_stage1_in_stage2
/// is set.
class Trainer {
 public:
  Trainer(data::Dataset dataset, TrainConfig config,
          std::optional<identity::IdentityEmbedder> embedder = std::nullopt)
      : Trainer(std::move(dataset), std::move(config), std::move(embedder),
                /*from_meta=*/false, {}, 0) {}

  // ---- training ----------------------------------------------------------

  /// Tensors shared by the four phases of one optimization step.
  struct StepBatch {
    Tensor x, y;             // (B,res,res,3)
    Tensor target_coords;    // (B,136)
    Tensor real_lm;          // (B,res,res,3) target landmarks colored by y
    std::vector<Tensor> labels_gl, labels_ge;
  };

  StepBatch assemble(const std::vector<data::TrainingPair>& batch) const {
    if (batch.empty()) throw Error("train_step: empty batch");
    const int64_t bsz = static_cast<int64_t>(batch.size());
    const int64_t res = config_.resolution;
    const codec::RenderConfig rcfg = config_.render_config();
    StepBatch sb;
    sb.x = Tensor({bsz, res, res, 3});
    sb.y = Tensor({bsz, res, res, 3});
    sb.target_coords = Tensor({bsz, 136});
    Tensor le({bsz, static_cast<int64_t>(vocab_.size())});
    Tensor li = intensity_on() ? Tensor({bsz, static_cast<int64_t>(intensity_levels_)}) : Tensor();
    for (int64_t b = 0; b < bsz; ++b) {
      const auto& pair = batch[static_cast<size_t>(b)];
      const Tensor& xi = pair.x(dataset_).image;
      const Tensor& yi = pair.y(dataset_).image;
      if (xi.dim(0) != res || yi.dim(0) != res)
        throw ValidationError("train_step: pair resolution does not match config");
      std::copy(xi.data(), xi.data() + xi.numel(), sb.x.data() + b * xi.numel());
      std::copy(yi.data(), yi.data() + yi.numel(), sb.y.data() + b * yi.numel());
      std::vector<double> flat = pair.y(dataset_).landmarks.to_flat();
      std::copy(flat.begin(), flat.end(), sb.target_coords.data() + b * 136);
      for (size_t k = 0; k < pair.l_e.values.size(); ++k)
        le.at2(b, static_cast<int64_t>(k)) = pair.l_e.values[k];
      if (intensity_on()) {
        check(pair.l_i.has_value(), "train_step: intensity conditioning needs intensity labels");
        for (size_t k = 0; k < pair.l_i->values.size(); ++k)
          li.at2(b, static_cast<int64_t>(k)) = pair.l_i->values[k];
      }
    }
    sb.labels_gl = config_.label_to_gl() ? label_pack(le, li) : std::vector<Tensor>{};
    sb.labels_ge = config_.label_to_ge() ? label_pack(le, li) : std::vector<Tensor>{};

    sb.real_lm = Tensor({bsz, res, res, 3});
    for (int64_t b = 0; b < bsz; ++b) {
      Tensor yb = Tensor::from({res, res, 3},
                               std::vector<double>(sb.y.data() + b * res * res * 3,
                                                   sb.y.data() + (b + 1) * res * res * 3));
      codec::LandmarkImage li_b = codec::render_landmark_image(
          data::LandmarkSet::from_flat(
              std::vector<double>(sb.target_coords.data() + b * 136,
                                  sb.target_coords.data() + (b + 1) * 136)),
          yb, rcfg);
      std::copy(li_b.image.data(), li_b.image.data() + li_b.image.numel(),
                sb.real_lm.data() + b * res * res * 3);
    }
    return sb;
  }

  /// D_l on real vs detached fake landmark images.
  void phase_dl(const StepBatch& sb, losses::LossReport& rep) {
    const codec::RenderConfig rcfg = config_.render_config();
    nn::Ctx ctx{&rng_, true, -1};
    zero_all();
    auto gl1 = gl_->forward(sb.x, sb.labels_gl, rcfg, ctx);
    std::vector<ad::Var> dl_real = dl_->forward_all(ad::constant(sb.real_lm));
    std::vector<ad::Var> dl_fake = dl_->forward_all(ad::detach(gl1.image));
    ad::Var dl_loss = losses::discriminator_loss(dl_real, dl_fake);
    rep.d_l = finite(dl_loss->value.item(), "d_l");
    rep.d_l_real_mean = mean_of(dl_real);
    rep.d_l_fake_mean = mean_of(dl_fake);
    ad::backward(dl_loss);
    opt_dl_->step();
  }

  /// G_l on the stage-I objective.
  void phase_gl(const StepBatch& sb, losses::LossReport& rep) {
    const codec::RenderConfig rcfg = config_.render_config();
    nn::Ctx ctx{&rng_, true, -1};
    zero_all();
    auto gl2 = gl_->forward(sb.x, sb.labels_gl, rcfg, ctx);
    ad::Var adv_gl = losses::generator_adversarial_loss(dl_->forward_all(gl2.image));
    rep.adv_gl = finite(adv_gl->value.item(), "adv_gl");
    ad::Var stage1 = adv_gl;
    if (config_.use_landmark_recon) {
      ad::Var recon = losses::landmark_recon_loss(gl2.coords, sb.target_coords);
      rep.landmark_recon = finite(recon->value.item(), "landmark_recon");
      stage1 = losses::stage1_objective(adv_gl, recon, config_.weights);
    }
    rep.stage1_total = finite(stage1->value.item(), "stage1_total");
    ad::backward(stage1);
    opt_gl_->step();
  }

  /// D_e on real (x,y) vs detached fake (x,y_hat) pairs.
  void phase_de(const StepBatch& sb, losses::LossReport& rep) {
    const codec::RenderConfig rcfg = config_.render_config();
    nn::Ctx ctx{&rng_, true, -1};
    zero_all();
    auto gl3 = gl_->forward(sb.x, sb.labels_gl, rcfg, ctx);
    ad::Var x6 = ad::concat_last({ad::constant(sb.x), ad::detach(gl3.image)});
    ad::Var fake = ge_->forward(x6, sb.labels_ge, ctx);
    std::vector<ad::Var> de_real =
        de_->forward_all(ad::concat_last({ad::constant(sb.x), ad::constant(sb.y)}));
    std::vector<ad::Var> de_fake =
        de_->forward_all(ad::concat_last({ad::constant(sb.x), ad::detach(fake)}));
    ad::Var de_loss = losses::discriminator_loss(de_real, de_fake);
    rep.d_e = finite(de_loss->value.item(), "d_e");
    rep.d_e_real_mean = mean_of(de_real);
    rep.d_e_fake_mean = mean_of(de_fake);
    ad::backward(de_loss);
    opt_de_->step();
  }

  /// G_e on the stage-II objective; gradients reach G_l through the
  /// rendered landmark image unless detach_stage1_in_stage2 is set.
  void phase_ge(const StepBatch& sb, losses::LossReport& rep) {
    const codec::RenderConfig rcfg = config_.render_config();
    nn::Ctx ctx{&rng_, true, -1};
    zero_all();
    auto gl4 = gl_->forward(sb.x, sb.labels_gl, rcfg, ctx);
    ad::Var lm4 = config_.detach_stage1_in_stage2 ? ad::detach(gl4.image) : gl4.image;
    ad::Var yhat = ge_->forward(ad::concat_last({ad::constant(sb.x), lm4}), sb.labels_ge, ctx);
    ad::Var adv_ge = losses::generator_adversarial_loss(
        de_->forward_all(ad::concat_last({ad::constant(sb.x), yhat})));
    rep.adv_ge = finite(adv_ge->value.item(), "adv_ge");
    ad::Var l12 = losses::smooth_l12(yhat, sb.y);
    rep.l12 = finite(l12->value.item(), "l12");
    ad::Var stage2 = ad::add(adv_ge, ad::scale(l12, config_.weights.lambda2));
    if (config_.use_identity_loss) {
      check(embedder_.has_value(), "use_identity_loss requires a trained embedder");
      ad::Var ident = losses::identity_loss(*embedder_, sb.y, yhat);
      rep.identity = finite(ident->value.item(), "identity");
      stage2 = ad::add(stage2, ad::scale(ident, config_.weights.lambda3));
    }
    rep.stage2_total = finite(stage2->value.item(), "stage2_total");
    ad::backward(stage2);
    opt_ge_->step();
    if (!config_.detach_stage1_in_stage2) opt_gl_->step();  // end-to-end coupling
  }

  losses::LossReport train_step(const std::vector<data::TrainingPair>& batch) {
    StepBatch sb = assemble(batch);
    losses::LossReport rep;
    rep.step = step_ + 1;
    phase_dl(sb, rep);
    phase_gl(sb, rep);
    phase_de(sb, rep);
    phase_ge(sb, rep);
    rep.full = losses::full_objective(rep.stage1_total, rep.stage2_total);
    ++step_;
    return rep;
  }

  /// Epoch loop with seeded shuffling, JSON-lines loss log, and periodic
  /// atomic checkpoints under out_dir/ckpt_<step>.
  std::vector<losses::LossReport> train(const TrainOptions& options = {}) {
    check(!pairs_.empty(), "train: no training pairs");
    const int64_t per_epoch =
        (static_cast<int64_t>(pairs_.size()) + config_.batch_size - 1) / config_.batch_size;
    const int64_t total = config_.max_steps > 0
                              ? config_.max_steps
                              : per_epoch * static_cast<int64_t>(config_.epochs);

    std::ofstream log;
    if (!options.out_dir.empty()) {
      std::filesystem::create_directories(options.out_dir);
      log.open(options.out_dir / "loss_log.jsonl", std::ios::app);
    }

    std::vector<losses::LossReport> reports;
    while (step_ < total) {
      int64_t epoch = step_ / per_epoch;
      int64_t pos = step_ % per_epoch;
      std::vector<int> order =
          Rng(mix_seed(config_.seed, 0xE70C + static_cast<uint64_t>(epoch)))
              .permutation(static_cast<int>(pairs_.size()));
      for (int64_t b = pos; b < per_epoch && step_ < total; ++b) {
        std::vector<data::TrainingPair> batch;
        for (int64_t k = b * config_.batch_size;
             k < std::min<int64_t>((b + 1) * config_.batch_size,
                                   static_cast<int64_t>(pairs_.size()));
             ++k)
          batch.push_back(pairs_[static_cast<size_t>(order[static_cast<size_t>(k)])]);
        losses::LossReport rep = train_step(batch);
        if (log.is_open()) log << rep.to_json().dump() << "\n";
        if (options.on_step) options.on_step(rep);
        reports.push_back(rep);
        if (!options.out_dir.empty() &&
            (step_ % config_.checkpoint_interval == 0 || step_ == total))
          save_checkpoint(options.out_dir / ("ckpt_" + std::to_string(step_)));
      }
    }
    return reports;
  }

  // ---- inference ---------------------------------------------------------

  /// Single-image contract: landmarks come from G_l, never from outside.
  GenerateResult generate(const Tensor& image, const std::string& expression,
                          std::optional<int> intensity = std::nullopt,
                          const GenerateOptions& options = {}) const {
    const int64_t res = config_.resolution;
    if (image.ndim() != 3 || image.dim(0) != res || image.dim(1) != res)
      throw ValidationError("generate: input image must be " + std::to_string(res) + "x" +
                            std::to_string(res) + "x3");
    data::LabelVector le = data::one_hot(expression, vocab_);
    Tensor le_t = Tensor::from({1, static_cast<int64_t>(vocab_.size())}, le.values);
    Tensor li_t;
    if (intensity_on()) {
      if (!intensity.has_value())
        throw ValidationError("generate: model is intensity-conditioned; an intensity in 1.." +
                              std::to_string(intensity_levels_) + " is required");
      li_t = Tensor::from({1, static_cast<int64_t>(intensity_levels_)},
                          data::one_hot_level(*intensity, intensity_levels_).values);
    } else if (intensity.has_value()) {
      throw ValidationError("generate: model was trained without intensity conditioning");
    }
    std::vector<Tensor> labels_gl =
        config_.label_to_gl() ? label_pack(le_t, li_t) : std::vector<Tensor>{};
    std::vector<Tensor> labels_ge =
        config_.label_to_ge() ? label_pack(le_t, li_t) : std::vector<Tensor>{};

    bool deterministic = options.deterministic.value_or(config_.eval_deterministic);
    Rng gen_rng(mix_seed(options.seed, 0x6E4E));
    nn::Ctx ctx{&gen_rng, /*stochastic=*/!deterministic, -1};
    const codec::RenderConfig rcfg = config_.render_config();

    auto gl_out = gl_->forward(image, labels_gl, rcfg, ctx);
    ad::Var x6 = ad::concat_last(
        {ad::constant(image.reshaped({1, res, res, 3})), gl_out.image});
    ad::Var face = ge_->forward(x6, labels_ge, ctx);

    GenerateResult out;
    for (int i = 0; i < 68; ++i)
      out.landmarks[i] = {gl_out.coords->value[2 * i], gl_out.coords->value[2 * i + 1]};
    out.landmark_image.image = gl_out.image->value.reshaped({res, res, 3});
    out.landmark_image.radius = rcfg.radius;
    out.landmark_image.provenance = codec::LandmarkImage::Provenance::generated;
    out.landmark_image.clamped = gl_out.clamped;
    out.face = face->value.reshaped({res, res, 3});
    return out;
  }

  // ---- checkpointing -----------------------------------------------------

  void save_checkpoint(const std::filesystem::path& dir) const {
    write_dir_atomic(dir, [&](const std::filesystem::path& tmp) {
      nn::StateDict model;
      gl_->state_to(model, "gl.");
      ge_->state_to(model, "ge.");
      dl_->state_to(model, "dl.");
      de_->state_to(model, "de.");
      save_tensors(tmp / "model.bin", model);

      nn::StateDict optim;
      opt_gl_->state_to(optim, "opt_gl.");
      opt_ge_->state_to(optim, "opt_ge.");
      opt_dl_->state_to(optim, "opt_dl.");
      opt_de_->state_to(optim, "opt_de.");
      save_tensors(tmp / "optim.bin", optim);

      nlohmann::json meta;
      meta["config"] = config_.to_json();
      meta["step"] = step_;
      meta["expression_vocab"] = vocab_;
      meta["intensity_levels"] = intensity_levels_;
      meta["rng_state"] = rng_.state();
      std::ofstream(tmp / "meta.json") << meta.dump(2) << "\n";

      if (embedder_) embedder_->save(tmp / "embedder.bin");
    });
  }

  /// Loads a checkpoint. Pass the training dataset to resume training;
  /// omit it for inference/evaluation use.
  static Trainer load_checkpoint(const std::filesystem::path& dir,
                                 std::optional<data::Dataset> dataset = std::nullopt) {
    std::ifstream meta_in(dir / "meta.json");
    if (!meta_in) throw ValidationError("checkpoint not found: " + dir.string());
    nlohmann::json meta;
    meta_in >> meta;
    TrainConfig config = TrainConfig::from_json(meta["config"]);
    std::vector<std::string> vocab = meta["expression_vocab"].get<std::vector<std::string>>();
    int levels = meta["intensity_levels"].get<int>();

    std::optional<identity::IdentityEmbedder> embedder;
    if (std::filesystem::exists(dir / "embedder.bin"))
      embedder = identity::IdentityEmbedder::load(dir / "embedder.bin");

    data::Dataset ds;
    if (dataset) {
      ds = std::move(*dataset);
      check(ds.expression_vocab == vocab, "checkpoint vocabulary does not match dataset");
    } else {
      ds.expression_vocab = vocab;
      ds.resolution = config.resolution;
      ds.intensity_levels = levels;
    }
    Trainer t(std::move(ds), std::move(config), std::move(embedder), /*from_meta=*/true, vocab,
              levels);

    nn::StateDict model = load_tensors(dir / "model.bin");
    t.gl_->state_from(model, "gl.");
    t.ge_->state_from(model, "ge.");
    t.dl_->state_from(model, "dl.");
    t.de_->state_from(model, "de.");
    nn::StateDict optim = load_tensors(dir / "optim.bin");
    t.opt_gl_->state_from(optim, "opt_gl.");
    t.opt_ge_->state_from(optim, "opt_ge.");
    t.opt_dl_->state_from(optim, "opt_dl.");
    t.opt_de_->state_from(optim, "opt_de.");
    t.step_ = meta["step"].get<int64_t>();
    t.rng_.set_state(meta["rng_state"].get<std::string>());
    return t;
  }

  // ---- introspection ------------------------------------------------------

  int64_t step() const { return step_; }
  const TrainConfig& config() const { return config_; }
  const std::vector<data::TrainingPair>& pairs() const { return pairs_; }
  const std::vector<std::string>& vocab() const { return vocab_; }
  int intensity_levels() const { return intensity_levels_; }
  const std::optional<identity::IdentityEmbedder>& embedder() const { return embedder_; }

  uint64_t hash_gl() const { return gl_->param_hash(); }
  uint64_t hash_ge() const { return ge_->param_hash(); }
  uint64_t hash_dl() const { return dl_->param_hash(); }
  uint64_t hash_de() const { return de_->param_hash(); }
  std::string rng_state() const { return rng_.state(); }

 private:
  Trainer(data::Dataset dataset, TrainConfig config,
          std::optional<identity::IdentityEmbedder> embedder, bool from_meta,
          std::vector<std::string> vocab_override, int levels_override)
      : dataset_(std::move(dataset)), config_(std::move(config)), embedder_(std::move(embedder)) {
    config_.validate();
    vocab_ = from_meta ? std::move(vocab_override) : dataset_.expression_vocab;
    intensity_levels_ = from_meta ? levels_override : dataset_.intensity_levels;
    check(!vocab_.empty(), "Trainer: empty expression vocabulary");
    if (config_.intensity_conditioning)
      check(intensity_levels_ > 0,
            "intensity_conditioning requires a dataset with intensity labels");
    if (config_.use_identity_loss && !dataset_.samples.empty())
      check(embedder_.has_value(), "use_identity_loss requires an embedder");

    Rng init(mix_seed(config_.seed, 0x1217));
    std::vector<int> label_dims;
    if (config_.label_to_gl()) label_dims = dims();
    nn::GeneratorSpec gls;
    gls.resolution = config_.resolution;
    gls.in_channels = 3;
    gls.out_channels = 3;
    gls.base_filters = config_.base_filters;
    gls.label_dims = label_dims;
    gls.coordinate_head = true;
    gl_ = std::make_unique<nn::LandmarkGenerator>(gls, init);

    nn::GeneratorSpec ges = gls;
    ges.in_channels = 6;
    ges.coordinate_head = false;
    ges.label_dims = config_.label_to_ge() ? dims() : std::vector<int>{};
    ge_ = std::make_unique<nn::ExpressionGenerator>(ges, init);

    nn::DiscriminatorSpec dls;
    dls.in_channels = 3;
    dls.n_layers = 3;
    dls.base_filters = config_.base_filters;
    dls.dual = config_.dual_discriminators;
    dl_ = std::make_unique<nn::DiscriminatorBank>(dls, init);

    nn::DiscriminatorSpec des = dls;
    des.in_channels = 6;  // (condition, candidate) pair
    de_ = std::make_unique<nn::DiscriminatorBank>(des, init);

    opt_gl_ = std::make_unique<Adam>(gl_->parameters(), config_.lr, config_.beta1, config_.beta2);
    opt_ge_ = std::make_unique<Adam>(ge_->parameters(), config_.lr, config_.beta1, config_.beta2);
    opt_dl_ = std::make_unique<Adam>(dl_->parameters(), config_.lr, config_.beta1, config_.beta2);
    opt_de_ = std::make_unique<Adam>(de_->parameters(), config_.lr, config_.beta1, config_.beta2);

    rng_ = Rng(mix_seed(config_.seed, 0x7A41));

    if (!dataset_.samples.empty()) {
      auto pairing = data::make_training_pairs(
          dataset_, data::pairing_policy_from(config_.pairing_policy), config_.seed);
      pairs_ = std::move(pairing.pairs);
      skipped_subjects_ = pairing.skipped_subjects;
    }
  }

  bool intensity_on() const { return config_.intensity_conditioning && intensity_levels_ > 0; }

  std::vector<int> dims() const {
    std::vector<int> d{static_cast<int>(vocab_.size())};
    if (config_.intensity_conditioning) d.push_back(intensity_levels_);
    return d;
  }

  std::vector<Tensor> label_pack(const Tensor& le, const Tensor& li) const {
    std::vector<Tensor> out{le};
    if (intensity_on()) out.push_back(li);
    return out;
  }

  void zero_all() const {
    gl_->zero_grad();
    ge_->zero_grad();
    dl_->zero_grad();
    de_->zero_grad();
  }

  static double mean_of(const std::vector<ad::Var>& outs) {
    double m = 0;
    for (const auto& v : outs) m += v->value.mean();
    return m / static_cast<double>(outs.size());
  }

  static double finite(double v, const char* term) {
    if (!std::isfinite(v))
      throw RuntimeAbort(std::string("non-finite loss term: ") + term);
    return v;
  }

  data::Dataset dataset_;
  TrainConfig config_;
  std::optional<identity::IdentityEmbedder> embedder_;
  std::vector<std::string> vocab_;
  int intensity_levels_ = 0;
  int skipped_subjects_ = 0;

  std::unique_ptr<nn::LandmarkGenerator> gl_;
  std::unique_ptr<nn::ExpressionGenerator> ge_;
  std::unique_ptr<nn::DiscriminatorBank> dl_, de_;
  std::unique_ptr<Adam> opt_gl_, opt_ge_, opt_dl_, opt_de_;
  Rng rng_{0};
  int64_t step_ = 0;
  std::vector<data::TrainingPair> pairs_;
};

}  // namespace faceforge::train
