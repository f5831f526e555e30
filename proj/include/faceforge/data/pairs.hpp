#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "faceforge/core/rng.hpp"
#include "faceforge/data/types.hpp"

namespace faceforge::data {

enum class PairingPolicy { cross, from_neutral };

inline PairingPolicy pairing_policy_from(const std::string& s) {
  if (s == "cross") return PairingPolicy::cross;
  if (s == "from_neutral") return PairingPolicy::from_neutral;
  throw ValidationError("unknown pairing policy '" + s + "' (cross, from_neutral)");
}

inline std::string to_string(PairingPolicy p) {
  return p == PairingPolicy::cross ? "cross" : "from_neutral";
}

struct PairingResult {
  std::vector<TrainingPair> pairs;
  int skipped_subjects = 0;
};

/// Ordered within-subject pairs. "cross" emits every (x,y) with differing
/// expressions; "from_neutral" restricts x to neutral samples. Output order
/// is a seeded shuffle of the canonical (subject, x, y) order.
inline PairingResult make_training_pairs(const Dataset& ds, PairingPolicy policy, uint64_t seed) {
  if (policy == PairingPolicy::from_neutral)
    check(std::find(ds.expression_vocab.begin(), ds.expression_vocab.end(), "neutral") !=
              ds.expression_vocab.end(),
          "from_neutral pairing requires 'neutral' in the vocabulary");

  std::map<std::string, std::vector<int>> by_subject;
  for (size_t i = 0; i < ds.samples.size(); ++i)
    by_subject[ds.samples[i].subject_id].push_back(static_cast<int>(i));

  PairingResult out;
  for (const auto& [subject, indices] : by_subject) {
    std::set<std::string> exprs;
    for (int i : indices) exprs.insert(ds.samples[static_cast<size_t>(i)].expression);
    if (exprs.size() < 2) {
      ++out.skipped_subjects;
      continue;
    }
    for (int xi : indices) {
      const FaceSample& x = ds.samples[static_cast<size_t>(xi)];
      if (policy == PairingPolicy::from_neutral && x.expression != "neutral") continue;
      for (int yi : indices) {
        if (xi == yi) continue;
        const FaceSample& y = ds.samples[static_cast<size_t>(yi)];
        if (x.expression == y.expression) continue;
        TrainingPair p;
        p.x_index = xi;
        p.y_index = yi;
        p.l_e = one_hot(y.expression, ds.expression_vocab);
        if (ds.intensity_levels > 0)
          p.l_i = one_hot_level(y.intensity.value_or(1), ds.intensity_levels);
        out.pairs.push_back(std::move(p));
      }
    }
  }
  Rng rng(mix_seed(seed, 0x9A12));
  rng.shuffle(out.pairs);
  return out;
}

struct SplitPolicy {
  enum class Kind { subject_holdout, sample_fraction };
  Kind kind = Kind::subject_holdout;
  int holdout_subjects = 2;
  double test_fraction = 0.33;
};

/// Deterministic train/test split. subject_holdout moves whole subjects to
/// test; sample_fraction draws the test fraction per expression.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, const SplitPolicy& policy,
                                         uint64_t seed) {
  std::vector<FaceSample> train, test;
  if (policy.kind == SplitPolicy::Kind::subject_holdout) {
    std::vector<std::string> subjects = ds.subjects();
    check(policy.holdout_subjects >= 1, "split: holdout_subjects must be >= 1");
    if (policy.holdout_subjects >= static_cast<int>(subjects.size()))
      throw ValidationError("split: cannot hold out " + std::to_string(policy.holdout_subjects) +
                            " of " + std::to_string(subjects.size()) + " subjects");
    Rng rng(mix_seed(seed, 0x57D0));
    rng.shuffle(subjects);
    std::set<std::string> held(subjects.begin(), subjects.begin() + policy.holdout_subjects);
    for (const auto& f : ds.samples) (held.count(f.subject_id) ? test : train).push_back(f);
  } else {
    if (!(policy.test_fraction > 0.0 && policy.test_fraction < 1.0))
      throw ValidationError("split: test_fraction must lie in (0,1)");
    std::map<std::string, std::vector<int>> by_expr;
    for (size_t i = 0; i < ds.samples.size(); ++i)
      by_expr[ds.samples[i].expression].push_back(static_cast<int>(i));
    std::vector<char> is_test(ds.samples.size(), 0);
    int expr_slot = 0;
    for (auto& [expr, indices] : by_expr) {
      Rng rng(mix_seed(seed, 0xF12C + static_cast<uint64_t>(expr_slot++)));
      rng.shuffle(indices);
      auto n_test = static_cast<size_t>(
          std::lround(policy.test_fraction * static_cast<double>(indices.size())));
      check(n_test >= 1 && n_test < indices.size(),
            "split: fraction leaves an empty side for expression '" + expr + "'");
      for (size_t k = 0; k < n_test; ++k) is_test[static_cast<size_t>(indices[k])] = 1;
    }
    for (size_t i = 0; i < ds.samples.size(); ++i)
      (is_test[i] ? test : train).push_back(ds.samples[i]);
  }
  return {ds.with_samples(std::move(train)), ds.with_samples(std::move(test))};
}

}  // namespace faceforge::data
