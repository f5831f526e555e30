#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

#include "faceforge/codec/landmark_image.hpp"
#include "faceforge/data/pairs.hpp"
#include "faceforge/losses/losses.hpp"

namespace faceforge::train {

enum class LabelRouting { Gl_and_Ge, Gl_only, Ge_only };

inline LabelRouting label_routing_from(const std::string& s) {
  if (s == "Gl_and_Ge") return LabelRouting::Gl_and_Ge;
  if (s == "Gl_only") return LabelRouting::Gl_only;
  if (s == "Ge_only") return LabelRouting::Ge_only;
  throw ValidationError("unknown label_routing '" + s + "' (Gl_and_Ge, Gl_only, Ge_only)");
}

struct TrainConfig {
  int resolution = 256;
  int epochs = 200;
  int64_t max_steps = 0;  // 0: run epochs over all pairs
  int batch_size = 1;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  losses::LossWeights weights;
  bool dual_discriminators = true;
  bool use_identity_loss = true;
  bool use_landmark_recon = true;
  std::string color_mode = "sampled";  // sampled | fixed_black
  std::string label_routing = "Gl_and_Ge";
  bool intensity_conditioning = false;
  uint64_t seed = 0;
  // artifact knobs beyond the paper's hyperparameters
  int base_filters = 64;
  int64_t checkpoint_interval = 100;
  bool detach_stage1_in_stage2 = false;
  bool eval_deterministic = false;
  std::string pairing_policy = "cross";
  double render_softness = 1.0;
  int embedder_epochs = 20;

  void validate() const {
    check(resolution >= 32 && (resolution & (resolution - 1)) == 0,
          "config: resolution must be a power of two >= 32");
    check(epochs >= 1, "config: epochs must be >= 1");
    check(max_steps >= 0, "config: max_steps must be >= 0");
    check(batch_size >= 1, "config: batch_size must be >= 1");
    check(lr > 0, "config: lr must be positive");
    check(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1,
          "config: Adam betas must lie in [0,1)");
    weights.validate();
    check(base_filters >= 1, "config: base_filters must be >= 1");
    check(checkpoint_interval >= 1, "config: checkpoint_interval must be >= 1");
    check(render_softness >= 0, "config: render_softness must be >= 0");
    check(embedder_epochs >= 1, "config: embedder_epochs must be >= 1");
    check(color_mode == "sampled" || color_mode == "fixed_black",
          "config: color_mode must be sampled or fixed_black");
    label_routing_from(label_routing);
    data::pairing_policy_from(pairing_policy);
  }

  LabelRouting routing() const { return label_routing_from(label_routing); }
  bool label_to_gl() const { return routing() != LabelRouting::Ge_only; }
  bool label_to_ge() const { return routing() != LabelRouting::Gl_only; }

  codec::RenderConfig render_config() const {
    codec::RenderConfig cfg = codec::RenderConfig::for_resolution(
        resolution, color_mode == "sampled" ? codec::RenderConfig::ColorMode::sampled
                                            : codec::RenderConfig::ColorMode::fixed_black);
    cfg.softness = render_softness;
    return cfg;
  }

  nlohmann::json to_json() const {
    return {{"resolution", resolution},
            {"epochs", epochs},
            {"max_steps", max_steps},
            {"batch_size", batch_size},
            {"lr", lr},
            {"beta1", beta1},
            {"beta2", beta2},
            {"lambda1", weights.lambda1},
            {"lambda2", weights.lambda2},
            {"lambda3", weights.lambda3},
            {"dual_discriminators", dual_discriminators},
            {"use_identity_loss", use_identity_loss},
            {"use_landmark_recon", use_landmark_recon},
            {"color_mode", color_mode},
            {"label_routing", label_routing},
            {"intensity_conditioning", intensity_conditioning},
            {"seed", seed},
            {"base_filters", base_filters},
            {"checkpoint_interval", checkpoint_interval},
            {"detach_stage1_in_stage2", detach_stage1_in_stage2},
            {"eval_deterministic", eval_deterministic},
            {"pairing_policy", pairing_policy},
            {"render_softness", render_softness},
            {"embedder_epochs", embedder_epochs}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    for (const auto& [key, value] : j.items()) c.set(key, value);
    return c;
  }

  static TrainConfig from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("config file not found: " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw ValidationError("config parse error: " + std::string(e.what()));
    }
    return from_json(j);
  }

  void set(const std::string& key, const nlohmann::json& v) {
    if (key == "resolution") resolution = v.get<int>();
    else if (key == "epochs") epochs = v.get<int>();
    else if (key == "max_steps") max_steps = v.get<int64_t>();
    else if (key == "batch_size") batch_size = v.get<int>();
    else if (key == "lr") lr = v.get<double>();
    else if (key == "beta1") beta1 = v.get<double>();
    else if (key == "beta2") beta2 = v.get<double>();
    else if (key == "lambda1") weights.lambda1 = v.get<double>();
    else if (key == "lambda2") weights.lambda2 = v.get<double>();
    else if (key == "lambda3") weights.lambda3 = v.get<double>();
    else if (key == "dual_discriminators") dual_discriminators = v.get<bool>();
    else if (key == "use_identity_loss") use_identity_loss = v.get<bool>();
    else if (key == "use_landmark_recon") use_landmark_recon = v.get<bool>();
    else if (key == "color_mode") color_mode = v.get<std::string>();
    else if (key == "label_routing") label_routing = v.get<std::string>();
    else if (key == "intensity_conditioning") intensity_conditioning = v.get<bool>();
    else if (key == "seed") seed = v.get<uint64_t>();
    else if (key == "base_filters") base_filters = v.get<int>();
    else if (key == "checkpoint_interval") checkpoint_interval = v.get<int64_t>();
    else if (key == "detach_stage1_in_stage2") detach_stage1_in_stage2 = v.get<bool>();
    else if (key == "eval_deterministic") eval_deterministic = v.get<bool>();
    else if (key == "pairing_policy") pairing_policy = v.get<std::string>();
    else if (key == "render_softness") render_softness = v.get<double>();
    else if (key == "embedder_epochs") embedder_epochs = v.get<int>();
    else throw ValidationError("unknown config key '" + key + "'");
  }

  /// Applies a "key=value" command-line override.
  void apply_override(const std::string& kv) {
    auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ValidationError("override must look like key=value, got '" + kv + "'");
    std::string key = kv.substr(0, eq), raw = kv.substr(eq + 1);
    nlohmann::json v;
    if (raw == "true" || raw == "false") {
      v = raw == "true";
    } else {
      try {
        size_t used = 0;
        double num = std::stod(raw, &used);
        if (used == raw.size())
          v = num;
        else
          v = raw;
      } catch (...) {
        v = raw;
      }
    }
    // integer-typed keys need integral JSON values
    if (v.is_number() && key != "lr" && key != "beta1" && key != "beta2" && key != "lambda1" &&
        key != "lambda2" && key != "lambda3" && key != "render_softness")
      v = static_cast<int64_t>(v.get<double>());
    set(key, v);
  }
};

}  // namespace faceforge::train
