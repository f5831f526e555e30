#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "faceforge/data/image.hpp"
#include "faceforge/data/types.hpp"

namespace faceforge::data {

/// Manifest layout: line 1 is a header object {"vocabulary": [...]}; every
/// following line is one sample: {"image": path, "subject": str,
/// "expression": str, "intensity": int|null, "landmarks": [136 reals]}
/// with landmarks in source-image pixel coordinates (p1,q1,...,p68,q68).
inline Dataset load_manifest(const std::filesystem::path& path, int resolution) {
  std::ifstream in(path);
  if (!in) throw ValidationError("manifest not found: " + path.string());
  check(resolution >= 32, "load_manifest: resolution must be >= 32");

  std::string line;
  if (!std::getline(in, line) || line.empty())
    throw ValidationError("manifest " + path.string() + ": missing header line");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const std::exception& e) {
    throw ValidationError("manifest header: " + std::string(e.what()));
  }
  if (!header.contains("vocabulary") || !header["vocabulary"].is_array())
    throw ValidationError("manifest header must declare \"vocabulary\"");

  Dataset ds;
  ds.resolution = resolution;
  for (const auto& v : header["vocabulary"]) ds.expression_vocab.push_back(v.get<std::string>());

  std::filesystem::path base = path.parent_path();
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    auto fail = [&](const std::string& msg) {
      throw ValidationError("manifest row " + std::to_string(row) + ": " + msg);
    };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      fail(std::string("malformed JSON (") + e.what() + ")");
    }
    for (const char* key : {"image", "subject", "expression", "landmarks"})
      if (!j.contains(key)) fail(std::string("missing key \"") + key + "\"");

    FaceSample f;
    f.subject_id = j["subject"].get<std::string>();
    f.expression = j["expression"].get<std::string>();
    if (std::find(ds.expression_vocab.begin(), ds.expression_vocab.end(), f.expression) ==
        ds.expression_vocab.end())
      fail("unknown expression label '" + f.expression + "'");
    if (j.contains("intensity") && !j["intensity"].is_null()) {
      int lvl = j["intensity"].get<int>();
      if (lvl < 1 || lvl > 4) fail("intensity " + std::to_string(lvl) + " outside 1..4");
      f.intensity = lvl;
      ds.intensity_levels = std::max(ds.intensity_levels, lvl);
    }

    std::filesystem::path img_path = j["image"].get<std::string>();
    if (img_path.is_relative()) img_path = base / img_path;
    Tensor src;
    try {
      src = img::load_image(img_path);
    } catch (const std::exception& e) {
      fail(e.what());
    }
    double sx = static_cast<double>(resolution) / static_cast<double>(src.dim(1));
    double sy = static_cast<double>(resolution) / static_cast<double>(src.dim(0));
    f.image = img::resize_bilinear(src, resolution, resolution);

    if (!j["landmarks"].is_array() || j["landmarks"].size() != 136)
      fail("landmark list has " + std::to_string(j["landmarks"].size() / 2) +
           " points (need 68)");
    std::vector<double> flat = j["landmarks"].get<std::vector<double>>();
    try {
      f.landmarks = LandmarkSet::from_flat(flat).scaled(sx, sy);
    } catch (const std::exception& e) {
      fail(e.what());
    }
    if (!f.landmarks.inside(resolution, resolution)) fail("landmark outside image bounds");

    f.source_path = img_path.string();
    ds.samples.push_back(std::move(f));
  }

  std::sort(ds.samples.begin(), ds.samples.end(),
            [](const FaceSample& a, const FaceSample& b) { return a.source_path < b.source_path; });
  return ds;
}

/// Writes the dataset as PNGs plus a manifest, returning the manifest path.
inline std::filesystem::path write_manifest(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  nlohmann::json header;
  header["vocabulary"] = ds.expression_vocab;
  std::ofstream out(dir / "manifest.jsonl");
  if (!out) throw Error("cannot write manifest under " + dir.string());
  out << header.dump() << "\n";
  int idx = 0;
  for (const auto& f : ds.samples) {
    char name[96];
    std::snprintf(name, sizeof(name), "images/%04d_%s_%s_%d.png", idx++, f.subject_id.c_str(),
                  f.expression.c_str(), f.intensity.value_or(0));
    img::save_png(dir / name, f.image);
    nlohmann::json j;
    j["image"] = name;
    j["subject"] = f.subject_id;
    j["expression"] = f.expression;
    if (f.intensity)
      j["intensity"] = *f.intensity;
    else
      j["intensity"] = nullptr;
    j["landmarks"] = f.landmarks.to_flat();
    out << j.dump() << "\n";
  }
  return dir / "manifest.jsonl";
}

}  // namespace faceforge::data
