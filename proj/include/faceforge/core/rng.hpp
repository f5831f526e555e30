#pragma once

#include <cmath>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "faceforge/core/common.hpp"

namespace faceforge {

/// Deterministic random stream. Gaussian draws use Box-Muller without
/// caching so the full stream state is the mt19937_64 engine alone,
/// which makes checkpointed state exactly restorable.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : eng_(seed) {}

  double uniform() {
    // 53-bit mantissa in [0,1)
    return static_cast<double>(eng_() >> 11) * (1.0 / 9007199254740992.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * M_PI * u2);
  }

  /// Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(eng_() % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::vector<int> permutation(int n) {
    std::vector<int> p(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
    shuffle(p);
    return p;
  }

  std::string state() const {
    std::ostringstream os;
    os << eng_;
    return os.str();
  }

  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> eng_;
    if (is.fail()) throw RuntimeAbort("Rng::set_state: malformed engine state");
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace faceforge
