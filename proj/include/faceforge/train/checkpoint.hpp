#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "faceforge/nn/layers.hpp"

namespace faceforge::train {

inline constexpr char kTensorMagic[8] = {'F', 'F', 'T', 'E', 'N', 'S', '1', '\n'};

inline void save_tensors(const std::filesystem::path& path, const nn::StateDict& dict) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeAbort("cannot write " + path.string());
  out.write(kTensorMagic, sizeof(kTensorMagic));
  uint64_t count = dict.size();
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const auto& [name, tensor] : dict) {
    uint32_t nlen = static_cast<uint32_t>(name.size());
    out.write(reinterpret_cast<const char*>(&nlen), sizeof(nlen));
    out.write(name.data(), nlen);
    uint32_t ndim = static_cast<uint32_t>(tensor.ndim());
    out.write(reinterpret_cast<const char*>(&ndim), sizeof(ndim));
    for (int64_t d : tensor.shape()) out.write(reinterpret_cast<const char*>(&d), sizeof(d));
    out.write(reinterpret_cast<const char*>(tensor.data()),
              static_cast<std::streamsize>(tensor.numel() * sizeof(double)));
  }
  if (!out) throw RuntimeAbort("short write to " + path.string());
}

inline nn::StateDict load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeAbort("cannot read " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (std::memcmp(magic, kTensorMagic, sizeof(magic)) != 0)
    throw RuntimeAbort("bad tensor file magic in " + path.string());
  uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  nn::StateDict dict;
  for (uint64_t i = 0; i < count; ++i) {
    uint32_t nlen = 0;
    in.read(reinterpret_cast<char*>(&nlen), sizeof(nlen));
    std::string name(nlen, '\0');
    in.read(name.data(), nlen);
    uint32_t ndim = 0;
    in.read(reinterpret_cast<char*>(&ndim), sizeof(ndim));
    Shape shape(ndim);
    for (auto& d : shape) in.read(reinterpret_cast<char*>(&d), sizeof(d));
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!in) throw RuntimeAbort("truncated tensor file " + path.string());
    dict.emplace(std::move(name), std::move(t));
  }
  return dict;
}

/// Populates a directory atomically: the callback fills a temp directory,
/// which is then renamed over the target.
template <typename Fill>
void write_dir_atomic(const std::filesystem::path& dir, Fill&& fill) {
  namespace fs = std::filesystem;
  fs::path tmp = dir;
  tmp += ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  fill(tmp);
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

}  // namespace faceforge::train
