#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace faceforge {

/// Base class for all faceforge errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input: malformed manifests, unknown labels, invalid configs.
/// The CLI maps these to exit code 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Unrecoverable runtime failure (non-finite loss, corrupt checkpoint).
/// The CLI maps these to exit code 2.
class RuntimeAbort : public Error {
 public:
  using Error::Error;
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

/// splitmix64; used to derive independent seeds from (seed, salt) pairs.
inline uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// FNV-1a over a byte range; used for parameter-freeze checks.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace faceforge
