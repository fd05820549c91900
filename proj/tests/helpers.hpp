#pragma once

// Shared fixtures for the test suites. The lab (world + trained victim +
// benign pool) is expensive enough to build once and reuse.

#include "gwad/harness.hpp"

namespace helpers {

inline gwad::ExperimentConfig lab_cfg() {
  gwad::ExperimentConfig cfg;
  cfg.seed = 42;
  cfg.seed_set = true;
  cfg.attacks = gwad::default_attack_lineup(2600);
  return cfg;
}

inline gwad::Lab& shared_lab() {
  static gwad::Lab lab = [] {
    gwad::ExperimentConfig cfg = lab_cfg();
    gwad::PipelineSeeds seeds(cfg.seed);
    return gwad::build_lab(cfg, seeds);
  }();
  return lab;
}

/// One attack run against the shared lab's victim, seeded independently.
inline gwad::AttackResult run_one(gwad::AttackMethod method, int budget, bool stop,
                                  std::uint64_t seed) {
  gwad::Lab& lab = shared_lab();
  gwad::AttackConfig cfg;
  cfg.method = method;
  cfg.query_budget = budget;
  cfg.stop_on_success = stop;
  gwad::Rng rng(seed);
  const std::size_t pick = lab.eligible[rng.next_u64() % lab.eligible.size()];
  return gwad::run_attack(lab.victim, lab.victim_test.sample(pick),
                          lab.victim_test.label(pick), cfg, rng);
}

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

}  // namespace helpers
