#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "faceforge/cli/cli.hpp"
#include "helpers.hpp"

using namespace fftest;
namespace fs = std::filesystem;
namespace cli = faceforge::cli;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("ffcli_" + std::to_string(reinterpret_cast<uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

size_t count_entries(const fs::path& dir) {
  size_t n = 0;
  for (auto it = fs::recursive_directory_iterator(dir); it != fs::recursive_directory_iterator();
       ++it)
    ++n;
  return n;
}

size_t count_lines(const fs::path& file) {
  std::ifstream in(file);
  std::string line;
  size_t n = 0;
  while (std::getline(in, line)) ++n;
  return n;
}

}  // namespace

TEST_CASE("cli end-to-end: prepare, train, generate, evaluate, augment") {
  TempDir tmp;
  fs::path data_dir = tmp.path / "data";
  fs::path run_dir = tmp.path / "run";

  // prepare-data with a train/test split
  REQUIRE(cli::run({"prepare-data", "--synth", "--subjects", "3", "--expressions",
                    "neutral,happy,surprise", "--resolution", "32", "--seed", "5",
                    "--holdout-subjects", "1", "--out", data_dir.string()}) == 0);
  REQUIRE(fs::exists(data_dir / "manifest.jsonl"));
  REQUIRE(fs::exists(data_dir / "train" / "manifest.jsonl"));
  REQUIRE(fs::exists(data_dir / "test" / "manifest.jsonl"));
  REQUIRE(count_lines(data_dir / "manifest.jsonl") == 10);  // header + 9 rows

  // train a tiny model with overrides
  REQUIRE(cli::run({"train", "--data", (data_dir / "train" / "manifest.jsonl").string(),
                    "--override", "resolution=32", "--override", "base_filters=4", "--override",
                    "max_steps=4", "--override", "checkpoint_interval=2", "--override",
                    "embedder_epochs=2", "--override", "seed=5", "--out",
                    run_dir.string()}) == 0);
  REQUIRE(fs::exists(run_dir / "ckpt_4" / "model.bin"));
  REQUIRE(fs::exists(run_dir / "effective_config.json"));
  REQUIRE(fs::exists(run_dir / "embedder.bin"));
  REQUIRE(count_lines(run_dir / "loss_log.jsonl") == 4);
  {
    // the override is recorded in the checkpointed config copy
    nlohmann::json meta;
    std::ifstream(run_dir / "ckpt_4" / "meta.json") >> meta;
    REQUIRE(meta["config"]["max_steps"].get<int>() == 4);
    REQUIRE(meta["config"]["base_filters"].get<int>() == 4);
  }

  // generate: valid label
  fs::path gen_dir = tmp.path / "gen";
  fs::path input_png = data_dir / "train";
  // pick the first training image path out of the manifest
  std::string image_rel;
  {
    std::ifstream in(input_png / "manifest.jsonl");
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    image_rel = nlohmann::json::parse(row)["image"].get<std::string>();
  }
  REQUIRE(cli::run({"generate", "--checkpoint", (run_dir / "ckpt_4").string(), "--input",
                    (input_png / image_rel).string(), "--expression", "happy", "--out",
                    gen_dir.string()}) == 0);
  REQUIRE(fs::exists(gen_dir / "face.png"));
  REQUIRE(fs::exists(gen_dir / "landmarks.png"));
  REQUIRE(fs::exists(gen_dir / "landmarks.json"));
  {
    nlohmann::json lm;
    std::ifstream(gen_dir / "landmarks.json") >> lm;
    REQUIRE(lm["landmarks"].size() == 136);
  }

  // generate: unknown label is a validation error (exit 1)
  REQUIRE(cli::run({"generate", "--checkpoint", (run_dir / "ckpt_4").string(), "--input",
                    (input_png / image_rel).string(), "--expression", "smirk", "--out",
                    gen_dir.string()}) == 1);

  // evaluate writes the metrics report and contact sheet
  fs::path eval_dir = tmp.path / "eval";
  REQUIRE(cli::run({"evaluate", "--checkpoint", (run_dir / "ckpt_4").string(), "--data",
                    (data_dir / "test" / "manifest.jsonl").string(), "--out",
                    eval_dir.string()}) == 0);
  REQUIRE(fs::exists(eval_dir / "metrics.json"));
  REQUIRE(fs::exists(eval_dir / "metrics.txt"));
  REQUIRE(fs::exists(eval_dir / "contact_sheet.png"));
  {
    nlohmann::json m;
    std::ifstream(eval_dir / "metrics.json") >> m;
    REQUIRE(m["n_samples"].get<int>() == 6);  // 1 subject x 3x2 ordered pairs
  }

  // augment-eval writes the four-mode table with matched counts
  fs::path aug_dir = tmp.path / "aug";
  REQUIRE(cli::run({"augment-eval", "--checkpoint", (run_dir / "ckpt_4").string(),
                    "--train-data", (data_dir / "train" / "manifest.jsonl").string(),
                    "--test-data", (data_dir / "test" / "manifest.jsonl").string(), "--epochs",
                    "2", "--out", aug_dir.string()}) == 0);
  REQUIRE(fs::exists(aug_dir / "augmentation.json"));
  {
    nlohmann::json a;
    std::ifstream(aug_dir / "augmentation.json") >> a;
    REQUIRE(a["accuracy"].size() == 4);
    REQUIRE(a["nor_count"].get<int>() == a["synth_count"].get<int>());
    REQUIRE(a["synth_count"].get<int>() == 12);  // 6 inputs x 2 other expressions
  }
}

TEST_CASE("cli validation and dry-run behavior") {
  TempDir tmp;

  // unknown flag / subcommand rejected before side effects
  REQUIRE(cli::run({"launch-rockets"}) == 1);
  REQUIRE(cli::run({"train", "--data", "x.jsonl", "--frobnicate"}) == 1);
  REQUIRE(count_entries(tmp.path) == 0);

  // dry-run validates and prints without writing
  fs::path out = tmp.path / "out";
  REQUIRE(cli::run({"--dry-run", "prepare-data", "--synth", "--subjects", "2", "--out",
                    out.string()}) == 0);
  REQUIRE_FALSE(fs::exists(out));
  REQUIRE(cli::run({"--dry-run", "train", "--data", "missing.jsonl", "--override",
                    "epochs=2", "--out", out.string()}) == 0);
  REQUIRE_FALSE(fs::exists(out));

  // bad override key is a validation error
  REQUIRE(cli::run({"--dry-run", "train", "--data", "x.jsonl", "--override", "bogus=1",
                    "--out", out.string()}) == 1);

  // missing config file
  REQUIRE(cli::run({"train", "--data", "x.jsonl", "--config", "nope.json", "--out",
                    out.string()}) == 1);

  // validation failure inside the config
  REQUIRE(cli::run({"--dry-run", "train", "--data", "x.jsonl", "--override", "lr=-1",
                    "--out", out.string()}) == 1);

  // no output dir anywhere
  REQUIRE(cli::run({"prepare-data", "--synth"}) == 1);
}

TEST_CASE("cli outputs land strictly under the output directory") {
  TempDir tmp;
  fs::path out = tmp.path / "only";
  fs::path cwd = fs::current_path();
  auto before = count_entries(tmp.path);
  REQUIRE(before == 0);
  REQUIRE(cli::run({"prepare-data", "--synth", "--subjects", "2", "--expressions",
                    "neutral,happy", "--resolution", "32", "--out", out.string()}) == 0);
  // everything new lives under out/
  for (auto it = fs::recursive_directory_iterator(tmp.path);
       it != fs::recursive_directory_iterator(); ++it) {
    auto rel = fs::relative(it->path(), tmp.path).string();
    REQUIRE(rel.rfind("only", 0) == 0);
  }
  REQUIRE(fs::current_path() == cwd);
}
