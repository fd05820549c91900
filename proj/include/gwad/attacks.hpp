#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "gwad/numkit.hpp"
#include "gwad/trace.hpp"
#include "gwad/victim.hpp"

namespace gwad {

enum class AttackMethod { NES, HSJA, SimBA, SignOpt, SignFlip, BA };

const char* attack_name(AttackMethod m);
AttackMethod attack_from_name(const std::string& name);

/// Untargeted l2 attack configuration. Defaults follow the standard
/// published settings for each method; desk-scale step sizes were tuned
/// once and frozen here.
struct AttackConfig {
  AttackMethod method = AttackMethod::NES;
  int query_budget = 5000;
  double rho_max = 0.1;  // noise ratio budget |x_adv - x| / |x|
  // When false the attack runs its full budget even after finding an
  // adversarial example (detection traces are generated this way).
  bool stop_on_success = true;

  // NES: antithetic gradient estimation.
  int nes_samples = 50;    // oracle calls per gradient estimate (25 pairs)
  double nes_sigma = 0.1;  // search distribution std
  double nes_eta = 0.1;    // step size along the estimated gradient

  // HSJA: Monte Carlo direction estimate + bisection projection.
  double hsja_theta_scale = 0.01;  // bisection tolerance = scale / sqrt(d)
  int hsja_init_queries = 100;     // cap on random-start probes
  int hsja_probe_batch = 100;      // B0; batch grows as B0 * sqrt(t)

  // SimBA: one-hot pixel steps.
  double simba_epsilon = 0.03;

  // Sign-Opt: direction optimization with sign-based gradient estimates.
  int signopt_grad_queries = 40;
  double signopt_probe_eps = 0.01;
  double signopt_eta = 0.01;
  int signopt_init_dirs = 10;

  // Sign-Flip: random projection + sign flipping on the perturbation.
  double signflip_alpha_init = 0.0004;
  double signflip_p_step = 0.001;

  // BA: orthogonal step then source step on the decision boundary.
  double ba_step_init = 0.01;
  double ba_lr = 1.5;  // multiplicative step adaptation, applied every 10 iters

  // Adaptive (moving-target) variants; disabled when unset.
  std::optional<double> variance_bound;  // per-batch noise scale ~ U(0, bound]
  std::optional<double> mean_bound;      // per-batch noise mean ~ U(-b*s, b*s)
};

struct AttackOutcome {
  bool success = false;
  std::uint64_t queries_used = 0;
  double rho = 0.0;
  Vec final_example;
  // Oracle calls spent up to and including the first successful query.
  std::optional<std::uint64_t> queries_to_success;
};

struct AttackResult {
  QueryTrace trace;
  AttackOutcome outcome;
};

/// Runs one untargeted attack against the victim, recording every oracle
/// call in the trace with its phase. x0 must be classified as y0 by the
/// victim (throws std::invalid_argument otherwise). Success means some
/// queried point was misclassified with perturbation ratio <= rho_max.
AttackResult run_attack(VictimModel& victim, std::span<const float> x0, int y0,
                        const AttackConfig& cfg, Rng& rng);

/// |x_adv - x|_2 / |x|_2. Throws std::domain_error when |x| == 0.
double perturbation_ratio(std::span<const double> x, std::span<const double> x_adv);
double perturbation_ratio(std::span<const float> x, std::span<const float> x_adv);

/// Varying-variance adaptive variant: every noise batch is rescaled by an
/// independent alpha ~ U(0, alpha_max].
AttackConfig adapt_vary_variance(AttackConfig cfg, double alpha_max);

/// Varying-mean adaptive variant: every noise batch is shifted by an
/// independent mu ~ U(-r_mu * s, r_mu * s), s = max(x0) - min(x0).
AttackConfig adapt_vary_mean(AttackConfig cfg, double r_mu);

/// Interleaves round(r_b * trace.size()) benign queries from the pool at
/// uniformly random positions, preserving attack-query order. Benign
/// records get phase InjectedBenign.
QueryTrace inject_benign(const QueryTrace& trace, double r_b, const Dataset& pool, Rng& rng);

/// n pool images in shuffled order (fresh permutation per pass), phase
/// Other.
QueryTrace benign_stream(const Dataset& pool, std::size_t n, Rng& rng);

}  // namespace gwad
