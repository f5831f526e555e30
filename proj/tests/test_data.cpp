#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "faceforge/data/manifest.hpp"
#include "faceforge/data/pairs.hpp"
#include "faceforge/data/synth.hpp"
#include "helpers.hpp"

using namespace fftest;
namespace data = faceforge::data;
namespace img = faceforge::img;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("fftest_" + std::to_string(Catch::rngSeed()) + "_" +
            std::to_string(reinterpret_cast<uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

}  // namespace

TEST_CASE("normalization round trip is exact for 8-bit values") {
  std::vector<uint8_t> px(256 * 3);
  for (int i = 0; i < 256; ++i)
    for (int c = 0; c < 3; ++c) px[static_cast<size_t>(i * 3 + c)] = static_cast<uint8_t>(i);
  Tensor t = img::normalize_u8(px, 16, 16);
  REQUIRE(t[0] == -1.0);
  REQUIRE(t[255 * 3] == 1.0);
  std::vector<uint8_t> back = img::denormalize_u8(t);
  REQUIRE(back == px);
}

TEST_CASE("one_hot") {
  std::vector<std::string> vocab = data::default_expressions();
  data::LabelVector lv = data::one_hot("happy", vocab);
  REQUIRE(lv.values == std::vector<double>{0, 0, 0, 1, 0, 0, 0});
  REQUIRE(lv.hot_index == 3);
  REQUIRE(data::one_hot("angry", vocab).values == std::vector<double>{1, 0, 0, 0, 0, 0, 0});
  REQUIRE_THROWS_AS(data::one_hot("smirk", vocab), faceforge::ValidationError);
  try {
    data::one_hot("smirk", vocab);
  } catch (const faceforge::ValidationError& e) {
    REQUIRE(std::string(e.what()).find("happy") != std::string::npos);
  }
}

TEST_CASE("synth corpus counts, determinism and color separation") {
  data::Dataset a = data::synth_corpus(2, data::default_expressions(), 1, 64, 7);
  REQUIRE(a.samples.size() == 14);
  REQUIRE(a.resolution == 64);
  REQUIRE(a.intensity_levels == 0);

  data::Dataset b = data::synth_corpus(2, data::default_expressions(), 1, 64, 7);
  REQUIRE(a.samples.size() == b.samples.size());
  for (size_t i = 0; i < a.samples.size(); ++i) {
    REQUIRE(max_abs_diff(a.samples[i].image, b.samples[i].image) == 0.0);
    for (int k = 0; k < 68; ++k) {
      REQUIRE(a.samples[i].landmarks[k].x == b.samples[i].landmarks[k].x);
      REQUIRE(a.samples[i].landmarks[k].y == b.samples[i].landmarks[k].y);
    }
  }

  data::Dataset c = data::synth_corpus(6, data::default_expressions(), 1, 64, 3);
  std::vector<data::detail::Rgb> skins;
  for (int s = 0; s < 6; ++s) skins.push_back(data::detail::subject_params(3, s, 6).skin);
  for (size_t i = 0; i < skins.size(); ++i)
    for (size_t j = i + 1; j < skins.size(); ++j) {
      double d = std::fabs(skins[i].r - skins[j].r) + std::fabs(skins[i].g - skins[j].g) +
                 std::fabs(skins[i].b - skins[j].b);
      REQUIRE(d > 0.02);
    }
}

TEST_CASE("synth landmarks: happy lifts mouth corners, all points in bounds") {
  data::Dataset ds = data::synth_corpus(1, data::default_expressions(), 1, 64, 11);
  const data::FaceSample* happy = nullptr;
  const data::FaceSample* neutral = nullptr;
  for (const auto& f : ds.samples) {
    if (f.expression == "happy") happy = &f;
    if (f.expression == "neutral") neutral = &f;
  }
  REQUIRE(happy != nullptr);
  REQUIRE(neutral != nullptr);
  // screen y grows downward: upward displacement means smaller y
  REQUIRE(happy->landmarks[48].y < neutral->landmarks[48].y);
  REQUIRE(happy->landmarks[54].y < neutral->landmarks[54].y);

  for (const auto& f : ds.samples) REQUIRE(f.landmarks.inside(64, 64));
}

TEST_CASE("synth intensity scales the inner-lip gap monotonically") {
  data::Dataset ds = data::synth_corpus(1, {"neutral", "surprise"}, 4, 64, 5);
  REQUIRE(ds.samples.size() == 8);
  REQUIRE(ds.intensity_levels == 4);
  std::vector<double> gaps;
  for (const auto& f : ds.samples)
    if (f.expression == "surprise")
      gaps.push_back(f.landmarks[66].y - f.landmarks[62].y);
  REQUIRE(gaps.size() == 4);
  for (size_t i = 1; i < gaps.size(); ++i) REQUIRE(gaps[i] > gaps[i - 1] + 0.5);
}

TEST_CASE("manifest round trip, rescale oracle and row errors") {
  TempDir tmp;
  data::Dataset ds = data::synth_corpus(1, {"neutral", "happy", "sad"}, 1, 64, 2);
  fs::path manifest = data::write_manifest(ds, tmp.path);

  data::Dataset loaded = data::load_manifest(manifest, 64);
  REQUIRE(loaded.samples.size() == 3);
  REQUIRE(loaded.expression_vocab == ds.expression_vocab);
  // PNG quantizes to 8-bit; loading back stays within one quantization step.
  REQUIRE(max_abs_diff(loaded.samples[0].image, ds.samples[0].image) < 2.0 / 255.0 + 1e-9);

  // Rescale oracle: 128x128 source landmark (128, 64) -> (64, 32) at 64.
  // (Independent expectation: coordinates scale linearly with resolution.)
  {
    data::Dataset big = data::synth_corpus(1, {"neutral", "happy"}, 1, 128, 9);
    fs::path dir = tmp.path / "big";
    fs::path m = data::write_manifest(big, dir);
    // overwrite first row's landmarks with a known corner case
    std::ifstream in(m);
    std::string header, row1, row2;
    std::getline(in, header);
    std::getline(in, row1);
    std::getline(in, row2);
    in.close();
    nlohmann::json j = nlohmann::json::parse(row1);
    std::vector<double> flat(136, 10.0);
    flat[0] = 128.0;
    flat[1] = 64.0;
    j["landmarks"] = flat;
    std::ofstream out(m);
    out << header << "\n" << j.dump() << "\n" << row2 << "\n";
    out.close();
    data::Dataset half = data::load_manifest(m, 64);
    REQUIRE(half.samples.size() == 2);
    // rows are re-sorted by path; find the edited one by its landmark
    bool found = false;
    for (const auto& f : half.samples) {
      if (std::fabs(f.landmarks[0].x - 64.0) < 1e-9 && std::fabs(f.landmarks[0].y - 32.0) < 1e-9)
        found = true;
    }
    REQUIRE(found);
  }

  // 67-point row is rejected with its row number
  {
    std::ifstream in(manifest);
    std::string header, row1;
    std::getline(in, header);
    std::getline(in, row1);
    in.close();
    nlohmann::json j = nlohmann::json::parse(row1);
    j["landmarks"] = std::vector<double>(134, 5.0);
    fs::path bad = tmp.path / "bad.jsonl";
    std::ofstream out(bad);
    out << header << "\n" << j.dump() << "\n";
    out.close();
    // image path is relative to the manifest dir, so keep it resolvable
    REQUIRE_THROWS_WITH(data::load_manifest(bad, 64),
                        Catch::Matchers::ContainsSubstring("row 2") &&
                            Catch::Matchers::ContainsSubstring("67"));
  }

  REQUIRE_THROWS_AS(data::load_manifest(tmp.path / "missing.jsonl", 64),
                    faceforge::ValidationError);

  // unknown expression label
  {
    std::ifstream in(manifest);
    std::string header, row1;
    std::getline(in, header);
    std::getline(in, row1);
    in.close();
    nlohmann::json j = nlohmann::json::parse(row1);
    j["expression"] = "smirk";
    fs::path bad = tmp.path / "bad2.jsonl";
    std::ofstream out(bad);
    out << header << "\n" << j.dump() << "\n";
    out.close();
    REQUIRE_THROWS_WITH(data::load_manifest(bad, 64),
                        Catch::Matchers::ContainsSubstring("smirk"));
  }
}

TEST_CASE("training pairs: counts, subject equality, determinism") {
  data::Dataset ds = data::synth_corpus(1, {"neutral", "happy", "sad"}, 1, 64, 3);
  auto res = data::make_training_pairs(ds, data::PairingPolicy::cross, 5);
  REQUIRE(res.pairs.size() == 6);  // 3*2 ordered pairs
  REQUIRE(res.skipped_subjects == 0);

  data::Dataset seven = data::synth_corpus(1, data::default_expressions(), 1, 64, 3);
  auto fn = data::make_training_pairs(seven, data::PairingPolicy::from_neutral, 5);
  REQUIRE(fn.pairs.size() == 6);  // one non-neutral target per expression
  for (const auto& p : fn.pairs) REQUIRE(p.x(seven).expression == "neutral");

  data::Dataset two = data::synth_corpus(2, {"neutral", "happy", "sad"}, 1, 64, 3);
  auto r2 = data::make_training_pairs(two, data::PairingPolicy::cross, 5);
  REQUIRE(r2.pairs.size() == 12);
  for (const auto& p : r2.pairs) {
    REQUIRE(p.x(two).subject_id == p.y(two).subject_id);  // never cross-subject
    REQUIRE(p.l_e.hot_index ==
            data::one_hot(p.y(two).expression, two.expression_vocab).hot_index);
    // target landmarks are the y sample's landmarks by construction
    REQUIRE(p.y(two).landmarks[30].x == two.samples[static_cast<size_t>(p.y_index)].landmarks[30].x);
  }

  auto r3 = data::make_training_pairs(two, data::PairingPolicy::cross, 5);
  for (size_t i = 0; i < r2.pairs.size(); ++i) {
    REQUIRE(r2.pairs[i].x_index == r3.pairs[i].x_index);
    REQUIRE(r2.pairs[i].y_index == r3.pairs[i].y_index);
  }

  // single-expression subject is skipped with a warning count
  data::Dataset lone = two.with_samples({two.samples[0], two.samples[3]});
  REQUIRE(lone.samples[0].subject_id != lone.samples[1].subject_id);
  auto r4 = data::make_training_pairs(lone, data::PairingPolicy::cross, 5);
  REQUIRE(r4.pairs.empty());
  REQUIRE(r4.skipped_subjects == 2);
}

TEST_CASE("split policies") {
  data::Dataset ds = data::synth_corpus(10, {"neutral", "happy"}, 1, 64, 13);
  auto [train, test] = data::split(ds, {data::SplitPolicy::Kind::subject_holdout, 2, 0.0}, 21);
  REQUIRE(train.subjects().size() == 8);
  REQUIRE(test.subjects().size() == 2);
  for (const auto& s : test.subjects()) {
    auto tr = train.subjects();
    REQUIRE(std::find(tr.begin(), tr.end(), s) == tr.end());
  }
  auto [train_b, test_b] = data::split(ds, {data::SplitPolicy::Kind::subject_holdout, 2, 0.0}, 21);
  REQUIRE(test_b.subjects() == test.subjects());

  REQUIRE_THROWS_AS(data::split(ds, {data::SplitPolicy::Kind::subject_holdout, 10, 0.0}, 21),
                    faceforge::ValidationError);

  // sample_fraction 0.33 of 1005 images per expression -> 332 test per expression
  data::Dataset big;
  big.expression_vocab = {"a", "b"};
  big.resolution = 64;
  for (int e = 0; e < 2; ++e)
    for (int i = 0; i < 1005; ++i) {
      data::FaceSample f;
      f.subject_id = "s" + std::to_string(i % 50);
      f.expression = big.expression_vocab[static_cast<size_t>(e)];
      f.source_path = "p" + std::to_string(e * 10000 + i);
      big.samples.push_back(std::move(f));
    }
  auto [ftr, fte] = data::split(big, {data::SplitPolicy::Kind::sample_fraction, 0, 0.33}, 3);
  std::map<std::string, int> test_counts;
  for (const auto& f : fte.samples) test_counts[f.expression]++;
  REQUIRE(test_counts["a"] == 332);  // lround(0.33 * 1005)
  REQUIRE(test_counts["b"] == 332);
  REQUIRE(ftr.samples.size() + fte.samples.size() == big.samples.size());
  // disjoint by identity
  std::set<std::string> tr_paths, te_paths;
  for (const auto& f : ftr.samples) tr_paths.insert(f.source_path);
  for (const auto& f : fte.samples) te_paths.insert(f.source_path);
  for (const auto& p : te_paths) REQUIRE(tr_paths.count(p) == 0);

  REQUIRE_THROWS_AS(data::split(big, {data::SplitPolicy::Kind::sample_fraction, 0, 1.2}, 3),
                    faceforge::ValidationError);
}
