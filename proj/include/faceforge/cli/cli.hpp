#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "faceforge/data/manifest.hpp"
#include "faceforge/data/synth.hpp"
#include "faceforge/metrics/evaluate.hpp"
#include "faceforge/train/trainer.hpp"

namespace faceforge::cli {

namespace fs = std::filesystem;

namespace detail {

inline fs::path resolve_out(std::string out_flag) {
  if (!out_flag.empty()) return out_flag;
  if (const char* env = std::getenv("FACEFORGE_OUTPUT_DIR")) return env;
  throw ValidationError("no output directory: pass --out or set FACEFORGE_OUTPUT_DIR");
}

inline std::vector<std::string> split_csv(const std::string& csv) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : csv) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

/// Raw-directory convention: every image file has a JSON sidecar
/// <stem>.landmarks.json with subject/expression/intensity/landmarks.
inline data::Dataset scan_raw_dir(const fs::path& dir, int resolution) {
  check(fs::is_directory(dir), "raw dir not found: " + dir.string());
  std::set<std::string> vocab;
  struct Row {
    fs::path image;
    nlohmann::json meta;
  };
  std::vector<Row> rows;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    if (ext != ".png" && ext != ".jpg" && ext != ".ppm" && ext != ".bmp") continue;
    fs::path sidecar = entry.path();
    sidecar.replace_extension(".landmarks.json");
    if (!fs::exists(sidecar))
      throw ValidationError("missing sidecar " + sidecar.string());
    nlohmann::json meta;
    std::ifstream(sidecar) >> meta;
    vocab.insert(meta.at("expression").get<std::string>());
    rows.push_back({entry.path(), std::move(meta)});
  }
  check(!rows.empty(), "raw dir holds no images: " + dir.string());

  // assemble an in-memory manifest-equivalent dataset
  data::Dataset ds;
  ds.resolution = resolution;
  ds.expression_vocab.assign(vocab.begin(), vocab.end());
  for (auto& row : rows) {
    data::FaceSample f;
    Tensor src = img::load_image(row.image);
    double sx = static_cast<double>(resolution) / static_cast<double>(src.dim(1));
    double sy = static_cast<double>(resolution) / static_cast<double>(src.dim(0));
    f.image = img::resize_bilinear(src, resolution, resolution);
    f.landmarks =
        data::LandmarkSet::from_flat(row.meta.at("landmarks").get<std::vector<double>>())
            .scaled(sx, sy);
    f.subject_id = row.meta.at("subject").get<std::string>();
    f.expression = row.meta.at("expression").get<std::string>();
    if (row.meta.contains("intensity") && !row.meta["intensity"].is_null()) {
      f.intensity = row.meta["intensity"].get<int>();
      ds.intensity_levels = std::max(ds.intensity_levels, *f.intensity);
    }
    f.source_path = row.image.string();
    ds.samples.push_back(std::move(f));
  }
  std::sort(ds.samples.begin(), ds.samples.end(),
            [](const data::FaceSample& a, const data::FaceSample& b) {
              return a.source_path < b.source_path;
            });
  return ds;
}

inline void write_split_manifests(const data::Dataset& ds, const fs::path& out, int holdout,
                                  double fraction, uint64_t seed) {
  data::write_manifest(ds, out);
  if (holdout > 0 || fraction > 0) {
    data::SplitPolicy policy;
    if (holdout > 0) {
      policy.kind = data::SplitPolicy::Kind::subject_holdout;
      policy.holdout_subjects = holdout;
    } else {
      policy.kind = data::SplitPolicy::Kind::sample_fraction;
      policy.test_fraction = fraction;
    }
    auto [train, test] = data::split(ds, policy, seed);
    data::write_manifest(train, out / "train");
    data::write_manifest(test, out / "test");
    std::cout << "split: " << train.samples.size() << " train / " << test.samples.size()
              << " test samples\n";
  }
}

}  // namespace detail

/// Entry point shared by the binary and the in-process CLI tests.
/// Exit codes: 0 success, 1 validation error, 2 runtime abort.
inline int run(std::vector<std::string> args) {
  CLI::App app{"faceforge: landmark-guided facial expression translation"};
  app.require_subcommand(1);
  bool dry_run = false;
  app.add_flag("--dry-run", dry_run,
               "validate inputs and print the resolved configuration; write nothing");

  // ---- prepare-data ----
  auto* prep = app.add_subcommand("prepare-data", "build a manifest from synth or a raw dir");
  bool synth = false;
  std::string raw_dir, expressions_csv = "angry,disgust,fear,happy,neutral,sad,surprise";
  int subjects = 4, intensities = 1, resolution = 64, holdout = 0;
  double test_fraction = 0;
  uint64_t prep_seed = 0;
  std::string prep_out;
  prep->add_flag("--synth", synth, "render the synthetic corpus");
  prep->add_option("--raw-dir", raw_dir, "directory of images with .landmarks.json sidecars");
  prep->add_option("--subjects", subjects, "synthetic subject count")->check(CLI::PositiveNumber);
  prep->add_option("--expressions", expressions_csv, "comma-separated expression vocabulary");
  prep->add_option("--intensities", intensities, "levels per expression (1 = no intensity)");
  prep->add_option("--resolution", resolution, "square image resolution");
  prep->add_option("--holdout-subjects", holdout, "also write a subject-holdout train/test split");
  prep->add_option("--test-fraction", test_fraction,
                   "also write a per-expression fraction train/test split");
  prep->add_option("--seed", prep_seed, "corpus/split seed");
  prep->add_option("--out", prep_out, "output directory");

  // ---- train ----
  auto* tr = app.add_subcommand("train", "run the two-stage adversarial training");
  std::string tr_data, tr_config, tr_out, tr_embedder;
  std::vector<std::string> overrides;
  tr->add_option("--data", tr_data, "training manifest")->required();
  tr->add_option("--config", tr_config, "JSON config mirroring the training configuration");
  tr->add_option("--override", overrides, "key=value config overrides (repeatable)");
  tr->add_option("--embedder", tr_embedder, "pre-trained identity embedder checkpoint");
  tr->add_option("--out", tr_out, "output directory");

  // ---- generate ----
  auto* gen = app.add_subcommand("generate", "translate one face to a target expression");
  std::string g_ckpt, g_input, g_expression, g_out;
  int g_intensity = 0;
  uint64_t g_seed = 0;
  bool g_deterministic = false;
  gen->add_option("--checkpoint", g_ckpt, "checkpoint directory")->required();
  gen->add_option("--input", g_input, "input face image")->required();
  gen->add_option("--expression", g_expression, "target expression label")->required();
  gen->add_option("--intensity", g_intensity, "target intensity level (intensity models)");
  gen->add_option("--seed", g_seed, "dropout noise seed");
  gen->add_flag("--deterministic", g_deterministic, "disable dropout noise");
  gen->add_option("--out", g_out, "output directory");

  // ---- evaluate ----
  auto* ev = app.add_subcommand("evaluate", "score a checkpoint against a test manifest");
  std::string e_ckpt, e_data, e_train_data, e_pairing = "cross", e_out;
  uint64_t e_seed = 0;
  bool e_stochastic = false;
  ev->add_option("--checkpoint", e_ckpt, "checkpoint directory")->required();
  ev->add_option("--data", e_data, "test manifest")->required();
  ev->add_option("--train-data", e_train_data, "manifest for training the scoring classifier");
  ev->add_option("--pairing", e_pairing, "cross | from_neutral");
  ev->add_option("--seed", e_seed, "evaluation seed");
  ev->add_flag("--stochastic", e_stochastic, "keep dropout noise during generation");
  ev->add_option("--out", e_out, "output directory");

  // ---- augment-eval ----
  auto* au = app.add_subcommand("augment-eval", "expression-recognition augmentation table");
  std::string a_ckpt, a_train, a_test, a_out;
  uint64_t a_seed = 0;
  int a_epochs = 12;
  au->add_option("--checkpoint", a_ckpt, "checkpoint directory")->required();
  au->add_option("--train-data", a_train, "real training manifest")->required();
  au->add_option("--test-data", a_test, "real testing manifest")->required();
  au->add_option("--seed", a_seed, "experiment seed");
  au->add_option("--epochs", a_epochs, "classifier epochs per mode");
  au->add_option("--out", a_out, "output directory");

  std::vector<const char*> argv;
  argv.push_back("faceforge");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;  // help/version exit cleanly; bad flags are validation errors
  }

  try {
    if (prep->parsed()) {
      check(synth != !raw_dir.empty(), "choose exactly one of --synth / --raw-dir");
      if (dry_run) {
        nlohmann::json j{{"mode", synth ? "synth" : "raw"},       {"subjects", subjects},
                         {"expressions", expressions_csv},        {"intensities", intensities},
                         {"resolution", resolution},              {"seed", prep_seed},
                         {"holdout_subjects", holdout},           {"test_fraction", test_fraction}};
        std::cout << j.dump(2) << "\ndry run: no outputs written\n";
        return 0;
      }
      fs::path out = detail::resolve_out(prep_out);
      data::Dataset ds = synth
                             ? data::synth_corpus(subjects, detail::split_csv(expressions_csv),
                                                  intensities, resolution, prep_seed)
                             : detail::scan_raw_dir(raw_dir, resolution);
      fs::create_directories(out);
      detail::write_split_manifests(ds, out, holdout, test_fraction, prep_seed);
      std::cout << "wrote " << ds.samples.size() << " samples under " << out.string() << "\n";
      return 0;
    }

    if (tr->parsed()) {
      train::TrainConfig config;
      if (!tr_config.empty()) config = train::TrainConfig::from_file(tr_config);
      for (const auto& kv : overrides) {
        config.apply_override(kv);
        std::cout << "override: " << kv << " (flag overrides config file)\n";
      }
      config.validate();
      if (dry_run) {
        std::cout << config.to_json().dump(2) << "\ndry run: no outputs written\n";
        return 0;
      }
      fs::path out = detail::resolve_out(tr_out);
      data::Dataset ds = data::load_manifest(tr_data, config.resolution);
      fs::create_directories(out);

      std::optional<identity::IdentityEmbedder> embedder;
      if (config.use_identity_loss) {
        if (!tr_embedder.empty()) {
          embedder = identity::IdentityEmbedder::load(tr_embedder);
        } else {
          std::cout << "training identity embedder (" << config.embedder_epochs << " epochs)\n";
          embedder = identity::IdentityEmbedder::train(ds, config.embedder_epochs, config.seed);
          embedder->save(out / "embedder.bin");
        }
      }
      std::ofstream(out / "effective_config.json") << config.to_json().dump(2) << "\n";

      train::Trainer trainer(ds, config, std::move(embedder));
      std::cout << "training on " << trainer.pairs().size() << " pairs\n";
      train::TrainOptions options;
      options.out_dir = out;
      options.on_step = [](const losses::LossReport& r) {
        if (r.step % 25 == 0)
          std::cout << "step " << r.step << "  stage1 " << r.stage1_total << "  stage2 "
                    << r.stage2_total << "  l12 " << r.l12 << "\n";
      };
      trainer.train(options);
      std::cout << "done at step " << trainer.step() << "; checkpoints under " << out.string()
                << "\n";
      return 0;
    }

    if (gen->parsed()) {
      if (dry_run) {
        nlohmann::json j{{"checkpoint", g_ckpt},
                         {"input", g_input},
                         {"expression", g_expression},
                         {"intensity", g_intensity},
                         {"seed", g_seed},
                         {"deterministic", g_deterministic}};
        std::cout << j.dump(2) << "\ndry run: no outputs written\n";
        return 0;
      }
      fs::path out = detail::resolve_out(g_out);
      train::Trainer model = train::Trainer::load_checkpoint(g_ckpt);
      Tensor image = img::load_image(g_input);
      if (image.dim(0) != model.config().resolution || image.dim(1) != model.config().resolution)
        throw ValidationError("input image is " + std::to_string(image.dim(1)) + "x" +
                              std::to_string(image.dim(0)) + " but the checkpoint expects " +
                              std::to_string(model.config().resolution) + " square");
      train::GenerateOptions gopt;
      gopt.seed = g_seed;
      gopt.deterministic = g_deterministic;
      train::GenerateResult res =
          model.generate(image, g_expression,
                         g_intensity > 0 ? std::optional<int>(g_intensity) : std::nullopt, gopt);
      fs::create_directories(out);
      img::save_png(out / "face.png", res.face);
      img::save_png(out / "landmarks.png", res.landmark_image.image);
      nlohmann::json lm{{"landmarks", res.landmarks.to_flat()},
                        {"expression", g_expression}};
      if (g_intensity > 0) lm["intensity"] = g_intensity;
      std::ofstream(out / "landmarks.json") << lm.dump() << "\n";
      std::cout << "wrote face.png, landmarks.png, landmarks.json under " << out.string() << "\n";
      return 0;
    }

    if (ev->parsed()) {
      if (dry_run) {
        nlohmann::json j{{"checkpoint", e_ckpt}, {"data", e_data},
                         {"train_data", e_train_data}, {"pairing", e_pairing},
                         {"seed", e_seed}, {"stochastic", e_stochastic}};
        std::cout << j.dump(2) << "\ndry run: no outputs written\n";
        return 0;
      }
      fs::path out = detail::resolve_out(e_out);
      train::Trainer model = train::Trainer::load_checkpoint(e_ckpt);
      data::Dataset test = data::load_manifest(e_data, model.config().resolution);
      std::optional<metrics::ExpressionClassifier> clf;
      if (!e_train_data.empty()) {
        data::Dataset clf_train = data::load_manifest(e_train_data, model.config().resolution);
        clf = metrics::ExpressionClassifier::train(clf_train, 12, e_seed);
      }
      metrics::EvalOptions opts;
      opts.seed = e_seed;
      opts.deterministic = !e_stochastic;
      opts.pairing = data::pairing_policy_from(e_pairing);
      opts.classifier = clf ? &*clf : nullptr;
      metrics::MetricsReport rep = metrics::evaluate_model(model, test, opts);
      fs::create_directories(out);
      std::ofstream(out / "metrics.json") << rep.to_json().dump(2) << "\n";
      std::ofstream(out / "metrics.txt") << rep.text_table();
      metrics::write_contact_sheet(out / "contact_sheet.png", model, test, 8, e_seed);
      std::cout << rep.text_table();
      return 0;
    }

    if (au->parsed()) {
      if (dry_run) {
        nlohmann::json j{{"checkpoint", a_ckpt}, {"train_data", a_train},
                         {"test_data", a_test}, {"seed", a_seed}, {"epochs", a_epochs}};
        std::cout << j.dump(2) << "\ndry run: no outputs written\n";
        return 0;
      }
      fs::path out = detail::resolve_out(a_out);
      train::Trainer model = train::Trainer::load_checkpoint(a_ckpt);
      data::Dataset real_train = data::load_manifest(a_train, model.config().resolution);
      data::Dataset real_test = data::load_manifest(a_test, model.config().resolution);

      // synthesize one image per (training input, other expression)
      data::Dataset synth_train = real_train.with_samples({});
      int row = 0;
      for (const auto& sample : real_train.samples) {
        for (const auto& expr : real_train.expression_vocab) {
          if (expr == sample.expression) continue;
          train::GenerateOptions gopt;
          gopt.seed = mix_seed(a_seed, static_cast<uint64_t>(row++));
          gopt.deterministic = true;
          train::GenerateResult g = model.generate(
              sample.image, expr,
              model.config().intensity_conditioning
                  ? std::optional<int>(sample.intensity.value_or(1))
                  : std::nullopt,
              gopt);
          data::FaceSample f;
          f.image = g.face;
          f.landmarks = g.landmarks;
          f.subject_id = sample.subject_id;
          f.expression = expr;
          f.intensity = sample.intensity;
          f.source_path = sample.source_path + "#syn_" + expr;
          synth_train.samples.push_back(std::move(f));
        }
      }

      std::set<metrics::AugMode> modes{metrics::AugMode::RealReal, metrics::AugMode::RealSyn,
                                       metrics::AugMode::RealNorReal,
                                       metrics::AugMode::RealSynReal};
      metrics::AugmentationResult res = metrics::augmentation_experiment(
          real_train, synth_train, real_test, modes, a_seed, a_epochs);
      fs::create_directories(out);
      std::ofstream(out / "augmentation.json") << res.to_json().dump(2) << "\n";
      std::ofstream(out / "augmentation.txt") << res.text_table();
      std::cout << res.text_table();
      return 0;
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime abort: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace faceforge::cli
