#include "gwad/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace gwad {

const char* attack_name(AttackMethod m) {
  switch (m) {
    case AttackMethod::NES: return "nes";
    case AttackMethod::HSJA: return "hsja";
    case AttackMethod::SimBA: return "simba";
    case AttackMethod::SignOpt: return "sign-opt";
    case AttackMethod::SignFlip: return "sign-flip";
    case AttackMethod::BA: return "ba";
  }
  return "unknown";
}

AttackMethod attack_from_name(const std::string& name) {
  std::string s;
  for (char c : name) {
    if (c == '_' || c == '-') continue;
    s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  if (s == "nes") return AttackMethod::NES;
  if (s == "hsja") return AttackMethod::HSJA;
  if (s == "simba") return AttackMethod::SimBA;
  if (s == "signopt") return AttackMethod::SignOpt;
  if (s == "signflip") return AttackMethod::SignFlip;
  if (s == "ba") return AttackMethod::BA;
  throw std::invalid_argument("unknown attack method: " + name);
}

double perturbation_ratio(std::span<const double> x, std::span<const double> x_adv) {
  const double nx = norm(x);
  if (nx == 0.0) throw std::domain_error("perturbation_ratio: zero-norm reference");
  return distance(x, x_adv) / nx;
}

double perturbation_ratio(std::span<const float> x, std::span<const float> x_adv) {
  Vec a(x.begin(), x.end());
  Vec b(x_adv.begin(), x_adv.end());
  return perturbation_ratio(std::span<const double>(a), std::span<const double>(b));
}

AttackConfig adapt_vary_variance(AttackConfig cfg, double alpha_max) {
  if (alpha_max <= 0.0) throw std::invalid_argument("adapt_vary_variance: bound must be > 0");
  cfg.variance_bound = alpha_max;
  return cfg;
}

AttackConfig adapt_vary_mean(AttackConfig cfg, double r_mu) {
  if (r_mu < 0.0 || r_mu > 1.0) throw std::invalid_argument("adapt_vary_mean: r_mu in [0,1]");
  if (r_mu == 0.0) {
    cfg.mean_bound.reset();  // exactly the base attack, including rng stream
  } else {
    cfg.mean_bound = r_mu;
  }
  return cfg;
}

namespace {

struct StopRun {};

Vec clip01(Vec x) {
  for (double& v : x) v = std::clamp(v, 0.0, 1.0);
  return x;
}

int argmax_index(const std::vector<double>& p) {
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

/// Shared per-run state: every oracle call flows through here so the trace,
/// the budget, and the success bookkeeping can never drift apart.
struct AttackContext {
  VictimModel& victim;
  const AttackConfig& cfg;
  Rng& rng;
  Vec x0;
  int y0;
  double x0_norm;
  QueryTrace trace;
  std::uint32_t iter = 0;

  bool success = false;
  std::uint64_t queries_to_success = 0;
  double best_rho = 0.0;
  Vec best_adv;
  Vec last_query;

  double batch_alpha = 1.0;
  double batch_mu = 0.0;
  double mean_scale = 0.0;

  AttackContext(VictimModel& v, std::span<const float> x, int label, const AttackConfig& c,
                Rng& r)
      : victim(v),
        cfg(c),
        rng(r),
        x0(x.begin(), x.end()),
        y0(label),
        x0_norm(norm(x0)),
        trace(static_cast<std::uint32_t>(x.size())) {
    const auto [mn, mx] = std::minmax_element(x0.begin(), x0.end());
    mean_scale = *mx - *mn;
  }

  std::size_t dim() const { return x0.size(); }
  std::uint64_t used() const { return trace.size(); }

  void new_noise_batch() {
    if (cfg.variance_bound) batch_alpha = *cfg.variance_bound * (1.0 - rng.next_unit());
    if (cfg.mean_bound) batch_mu = (2.0 * rng.next_unit() - 1.0) * *cfg.mean_bound * mean_scale;
  }

  Vec noise() {
    Vec u(dim());
    for (double& v : u) v = batch_mu + batch_alpha * rng.next_gaussian();
    return u;
  }

  Vec uniform_image() {
    Vec u(dim());
    for (double& v : u) v = rng.next_unit();
    return u;
  }

  void record(const Vec& x, Phase phase, int label) {
    trace.append(std::span<const double>(x), phase, iter);
    last_query = x;
    if (label != y0) {
      const double rho = distance(x, x0) / x0_norm;
      if (rho <= cfg.rho_max) {
        if (!success || rho < best_rho) {
          best_adv = x;
          best_rho = rho;
        }
        if (!success) {
          success = true;
          queries_to_success = used();
        }
        if (cfg.stop_on_success) throw StopRun{};
      }
    }
  }

  std::vector<double> query_soft(const Vec& x, Phase phase) {
    if (used() >= static_cast<std::uint64_t>(cfg.query_budget)) throw StopRun{};
    std::vector<double> p = victim.oracle_soft(x);
    record(x, phase, argmax_index(p));
    return p;
  }

  int query_soft_label(const Vec& x, Phase phase) { return argmax_index(query_soft(x, phase)); }

  bool is_adv(const Vec& x, Phase phase) {
    if (used() >= static_cast<std::uint64_t>(cfg.query_budget)) throw StopRun{};
    const int label = victim.oracle_hard(x);
    record(x, phase, label);
    return label != y0;
  }
};

Vec blend(const Vec& a, const Vec& b, double t) {
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + t * (b[i] - a[i]);
  return out;
}

/// Bisects the interpolation factor between the source x0 (benign end) and
/// an adversarial point, returning the adversarial end of the final bracket.
Vec bisect_toward_source(AttackContext& ctx, const Vec& x_adv, double tol, Phase phase) {
  double lo = 0.0, hi = 1.0;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (ctx.is_adv(blend(ctx.x0, x_adv, mid), phase)) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return blend(ctx.x0, x_adv, hi);
}

void project_rho_ball(const AttackContext& ctx, Vec& x) {
  const double budget = ctx.cfg.rho_max * ctx.x0_norm;
  double n = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - ctx.x0[i];
    n += d * d;
  }
  n = std::sqrt(n);
  if (n <= budget || n == 0.0) return;
  const double t = budget / n;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = ctx.x0[i] + t * (x[i] - ctx.x0[i]);
}

// --------------------------------------------------------------------------
// NES: antithetic pairs x +- sigma*u around the running iterate, one status
// query per iteration when early stopping is enabled.
// --------------------------------------------------------------------------
void run_nes(AttackContext& ctx) {
  const std::size_t d = ctx.dim();
  const double sigma = ctx.cfg.nes_sigma;
  Vec x_adv = ctx.x0;
  const int pairs = std::max(1, ctx.cfg.nes_samples / 2);
  for (ctx.iter = 0;; ++ctx.iter) {
    ctx.new_noise_batch();
    Vec grad(d, 0.0);
    for (int j = 0; j < pairs; ++j) {
      const Vec u = ctx.noise();
      Vec qp(d), qm(d);
      for (std::size_t i = 0; i < d; ++i) {
        qp[i] = std::clamp(x_adv[i] + sigma * u[i], 0.0, 1.0);
        qm[i] = std::clamp(x_adv[i] - sigma * u[i], 0.0, 1.0);
      }
      const std::vector<double> pp = ctx.query_soft(qp, Phase::ZerothOrder);
      const std::vector<double> pm = ctx.query_soft(qm, Phase::ZerothOrder);
      // Ascend the negative log-likelihood of the original class.
      const double lp = -std::log(std::max(pp[static_cast<std::size_t>(ctx.y0)], 1e-300));
      const double lm = -std::log(std::max(pm[static_cast<std::size_t>(ctx.y0)], 1e-300));
      const double w = lp - lm;
      for (std::size_t i = 0; i < d; ++i) grad[i] += w * u[i];
    }
    const double gn = norm(grad);
    if (gn > 0.0) {
      for (std::size_t i = 0; i < d; ++i) x_adv[i] += ctx.cfg.nes_eta * grad[i] / gn;
    }
    x_adv = clip01(std::move(x_adv));
    project_rho_ball(ctx, x_adv);
    if (ctx.cfg.stop_on_success) ctx.query_soft(x_adv, Phase::Other);
  }
}

// --------------------------------------------------------------------------
// HSJA: Monte Carlo direction probes at a small radius, geometric step
// search, then bisection back toward the source.
// --------------------------------------------------------------------------
void run_hsja(AttackContext& ctx) {
  const std::size_t d = ctx.dim();
  const double tol = ctx.cfg.hsja_theta_scale / std::sqrt(static_cast<double>(d));

  Vec start;
  bool found = false;
  for (int i = 0; i < ctx.cfg.hsja_init_queries && !found; ++i) {
    Vec r = ctx.uniform_image();
    if (ctx.is_adv(r, Phase::Other)) {
      start = std::move(r);
      found = true;
    }
  }
  if (!found) return;
  Vec x_adv = bisect_toward_source(ctx, start, tol, Phase::LineSearch);

  for (ctx.iter = 1;; ++ctx.iter) {
    const double dist = distance(x_adv, ctx.x0);
    const double probe_radius = std::max(ctx.cfg.hsja_theta_scale * dist, 1e-8);
    const int batch = std::min(
        static_cast<int>(ctx.cfg.hsja_probe_batch * std::sqrt(static_cast<double>(ctx.iter))),
        4 * ctx.cfg.hsja_probe_batch);

    ctx.new_noise_batch();
    Vec phi_u_sum(d, 0.0), u_sum(d, 0.0);
    double phi_sum = 0.0;
    for (int j = 0; j < batch; ++j) {
      Vec u = ctx.noise();
      const double un = norm(u);
      if (un == 0.0) continue;
      for (double& v : u) v /= un;
      Vec point(d);
      for (std::size_t i = 0; i < d; ++i) {
        point[i] = std::clamp(x_adv[i] + probe_radius * u[i], 0.0, 1.0);
      }
      const double phi = ctx.is_adv(point, Phase::ZerothOrder) ? 1.0 : -1.0;
      phi_sum += phi;
      for (std::size_t i = 0; i < d; ++i) {
        phi_u_sum[i] += phi * u[i];
        u_sum[i] += u[i];
      }
    }
    const double mean_phi = phi_sum / batch;
    Vec ghat(d);
    if (std::abs(mean_phi) >= 1.0) {
      // Degenerate batch (all probes agree): fall back to the raw mean.
      for (std::size_t i = 0; i < d; ++i) ghat[i] = mean_phi * u_sum[i] / batch;
    } else {
      for (std::size_t i = 0; i < d; ++i) {
        ghat[i] = phi_u_sum[i] / batch - mean_phi * u_sum[i] / batch;
      }
    }
    const double gn = norm(ghat);
    if (gn == 0.0) continue;
    for (double& v : ghat) v /= gn;

    double step = dist / std::sqrt(static_cast<double>(ctx.iter));
    Vec candidate(d);
    bool ok = false;
    for (int tries = 0; tries < 10 && !ok; ++tries) {
      for (std::size_t i = 0; i < d; ++i) {
        candidate[i] = std::clamp(x_adv[i] + step * ghat[i], 0.0, 1.0);
      }
      ok = ctx.is_adv(candidate, Phase::LineSearch);
      step *= 0.5;
    }
    if (ok) x_adv = bisect_toward_source(ctx, candidate, tol, Phase::LineSearch);
  }
}

// --------------------------------------------------------------------------
// SimBA: one-hot pixel probes over a fresh coordinate permutation each
// pass. On a double rejection the iterate is re-queried so consecutive
// queries always differ in a single coordinate.
// --------------------------------------------------------------------------
void run_simba(AttackContext& ctx) {
  const std::size_t d = ctx.dim();
  const double eps = ctx.cfg.simba_epsilon;
  Vec x_adv = ctx.x0;
  double p_best =
      ctx.query_soft(x_adv, Phase::ZerothOrder)[static_cast<std::size_t>(ctx.y0)];

  std::vector<std::uint32_t> perm(d);
  std::iota(perm.begin(), perm.end(), 0u);
  for (ctx.iter = 0;; ++ctx.iter) {
    for (std::size_t i = d; i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(ctx.rng.next_u64() % i);
      std::swap(perm[i - 1], perm[j]);
    }
    for (const std::uint32_t coord : perm) {
      Vec cand = x_adv;
      cand[coord] = std::clamp(cand[coord] + eps, 0.0, 1.0);
      const double p1 =
          ctx.query_soft(cand, Phase::ZerothOrder)[static_cast<std::size_t>(ctx.y0)];
      if (p1 < p_best) {
        x_adv = std::move(cand);
        p_best = p1;
        continue;
      }
      Vec cand2 = x_adv;
      cand2[coord] = std::clamp(cand2[coord] - eps, 0.0, 1.0);
      const double p2 =
          ctx.query_soft(cand2, Phase::ZerothOrder)[static_cast<std::size_t>(ctx.y0)];
      if (p2 < p_best) {
        x_adv = std::move(cand2);
        p_best = p2;
        continue;
      }
      // Both directions rejected: re-anchor on the iterate so the next probe
      // is again a single-coordinate change from the last query.
      p_best = ctx.query_soft(x_adv, Phase::ZerothOrder)[static_cast<std::size_t>(ctx.y0)];
    }
  }
}

// --------------------------------------------------------------------------
// Sign-Opt: direction optimization; the boundary distance along a direction
// is measured with a geometric bracket plus bisection (line search), the
// direction gradient with single-query sign probes (zeroth order).
// --------------------------------------------------------------------------
std::optional<double> signopt_distance(AttackContext& ctx, const Vec& theta_hat, double start,
                                       double rel_tol) {
  const std::size_t d = ctx.dim();
  auto point_at = [&](double lambda) {
    Vec p(d);
    for (std::size_t i = 0; i < d; ++i) {
      p[i] = std::clamp(ctx.x0[i] + lambda * theta_hat[i], 0.0, 1.0);
    }
    return p;
  };
  double hi = start;
  if (!ctx.is_adv(point_at(hi), Phase::LineSearch)) {
    bool found = false;
    for (int i = 0; i < 12 && !found; ++i) {
      hi *= 1.25;
      found = ctx.is_adv(point_at(hi), Phase::LineSearch);
    }
    if (!found) return std::nullopt;
  }
  double lo = 0.0;
  while (hi - lo > rel_tol * hi) {
    const double mid = 0.5 * (lo + hi);
    if (ctx.is_adv(point_at(mid), Phase::LineSearch)) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

void run_signopt(AttackContext& ctx) {
  const std::size_t d = ctx.dim();
  constexpr double kRelTol = 1e-3;

  Vec theta;
  double g_best = 0.0;
  bool have_theta = false;
  for (int k = 0; k < ctx.cfg.signopt_init_dirs; ++k) {
    Vec r = ctx.uniform_image();
    if (!ctx.is_adv(r, Phase::Other)) continue;
    Vec dir(d);
    for (std::size_t i = 0; i < d; ++i) dir[i] = r[i] - ctx.x0[i];
    const double dn = norm(dir);
    if (dn == 0.0) continue;
    for (double& v : dir) v /= dn;
    const auto g = signopt_distance(ctx, dir, dn, kRelTol);
    if (g && (!have_theta || *g < g_best)) {
      theta = std::move(dir);
      g_best = *g;
      have_theta = true;
    }
  }
  if (!have_theta) return;

  double eta = ctx.cfg.signopt_eta;
  for (ctx.iter = 1;; ++ctx.iter) {
    ctx.new_noise_batch();
    Vec ghat(d, 0.0);
    for (int j = 0; j < ctx.cfg.signopt_grad_queries; ++j) {
      const Vec u = ctx.noise();
      Vec dir(d);
      for (std::size_t i = 0; i < d; ++i) dir[i] = theta[i] + ctx.cfg.signopt_probe_eps * u[i];
      const double dn = norm(dir);
      if (dn == 0.0) continue;
      Vec probe(d);
      for (std::size_t i = 0; i < d; ++i) {
        probe[i] = std::clamp(ctx.x0[i] + g_best * dir[i] / dn, 0.0, 1.0);
      }
      // Adversarial probe => the boundary moved closer along dir.
      const double sign = ctx.is_adv(probe, Phase::ZerothOrder) ? -1.0 : 1.0;
      for (std::size_t i = 0; i < d; ++i) ghat[i] += sign * u[i];
    }
    Vec theta_new(d);
    for (std::size_t i = 0; i < d; ++i) {
      theta_new[i] = theta[i] - eta * ghat[i] / ctx.cfg.signopt_grad_queries;
    }
    const double tn = norm(theta_new);
    if (tn == 0.0) continue;
    for (double& v : theta_new) v /= tn;
    const auto g_new = signopt_distance(ctx, theta_new, g_best, kRelTol);
    if (g_new && *g_new < g_best) {
      theta = std::move(theta_new);
      g_best = *g_new;
      eta *= 1.1;
    } else {
      eta = std::max(eta * 0.5, 1e-5);
    }
  }
}

// --------------------------------------------------------------------------
// Sign-Flip: alternating random projection and sign-flip probes on the
// perturbation.
// --------------------------------------------------------------------------
void run_signflip(AttackContext& ctx) {
  const std::size_t d = ctx.dim();

  Vec start;
  bool found = false;
  for (int i = 0; i < 100 && !found; ++i) {
    Vec r = ctx.uniform_image();
    if (ctx.is_adv(r, Phase::Other)) {
      start = std::move(r);
      found = true;
    }
  }
  if (!found) return;
  const Vec x_adv0 = bisect_toward_source(ctx, start, 1e-3, Phase::LineSearch);

  Vec eta_v(d);
  for (std::size_t i = 0; i < d; ++i) eta_v[i] = x_adv0[i] - ctx.x0[i];
  double alpha = ctx.cfg.signflip_alpha_init;
  double p = 0.0;
  int proj_succ = 0, proj_tot = 0;

  for (ctx.iter = 1;; ++ctx.iter) {
    ctx.new_noise_batch();
    // Project: random per-coordinate shrink of the perturbation.
    Vec q1(d);
    for (std::size_t i = 0; i < d; ++i) {
      const double u = ctx.rng.next_unit();
      const double s = (eta_v[i] > 0.0) ? 1.0 : (eta_v[i] < 0.0 ? -1.0 : 0.0);
      q1[i] = std::clamp(ctx.x0[i] + eta_v[i] - alpha * u * s, 0.0, 1.0);
    }
    ++proj_tot;
    if (ctx.is_adv(q1, Phase::ZerothOrder)) {
      ++proj_succ;
      for (std::size_t i = 0; i < d; ++i) eta_v[i] = q1[i] - ctx.x0[i];
    }
    // Sign flip on a random coordinate subset of size ~ p*d.
    const int flips = std::max(1, static_cast<int>(std::llround(p * static_cast<double>(d))));
    Vec eta_f = eta_v;
    for (int k = 0; k < flips; ++k) {
      const std::size_t idx = static_cast<std::size_t>(ctx.rng.next_u64() % d);
      eta_f[idx] = -eta_f[idx];
    }
    Vec q2(d);
    for (std::size_t i = 0; i < d; ++i) q2[i] = std::clamp(ctx.x0[i] + eta_f[i], 0.0, 1.0);
    if (ctx.is_adv(q2, Phase::ZerothOrder)) {
      for (std::size_t i = 0; i < d; ++i) eta_v[i] = q2[i] - ctx.x0[i];
      p += ctx.cfg.signflip_p_step;
    } else {
      p = std::max(0.0, p - ctx.cfg.signflip_p_step);
    }
    if (ctx.iter % 10 == 0) {
      const double rate = proj_tot > 0 ? static_cast<double>(proj_succ) / proj_tot : 0.0;
      alpha = (rate > 0.7) ? alpha * 1.5 : alpha / 1.5;
      alpha = std::clamp(alpha, 1e-6, 0.05);
      proj_succ = proj_tot = 0;
    }
  }
}

// --------------------------------------------------------------------------
// BA: random walk on the decision boundary; orthogonal step on the sphere
// around the source, then a contraction step toward it. Step sizes adapt
// multiplicatively every 10 iterations.
// --------------------------------------------------------------------------
void run_ba(AttackContext& ctx) {
  const std::size_t d = ctx.dim();

  Vec x_adv;
  bool found = false;
  for (int i = 0; i < 100 && !found; ++i) {
    Vec r = ctx.uniform_image();
    if (ctx.query_soft_label(r, Phase::Other) != ctx.y0) {
      x_adv = std::move(r);
      found = true;
    }
  }
  if (!found) return;

  double step_orth = ctx.cfg.ba_step_init;
  double step_src = ctx.cfg.ba_step_init;
  int orth_succ = 0, orth_tot = 0, src_succ = 0, src_tot = 0;

  for (ctx.iter = 1;; ++ctx.iter) {
    Vec sp(d);
    for (std::size_t i = 0; i < d; ++i) sp[i] = x_adv[i] - ctx.x0[i];
    const double dist = norm(sp);
    if (dist == 0.0) return;

    ctx.new_noise_batch();
    Vec u = ctx.noise();
    const double radial = dot(u, sp) / (dist * dist);
    for (std::size_t i = 0; i < d; ++i) u[i] -= radial * sp[i];
    const double un = norm(u);
    if (un == 0.0) continue;
    const double scale = step_orth * dist / un;
    Vec moved(d);
    for (std::size_t i = 0; i < d; ++i) moved[i] = sp[i] + scale * u[i];
    const double mn = norm(moved);
    Vec cand(d);
    for (std::size_t i = 0; i < d; ++i) {
      cand[i] = std::clamp(ctx.x0[i] + moved[i] * dist / mn, 0.0, 1.0);
    }
    ++orth_tot;
    if (ctx.query_soft_label(cand, Phase::ZerothOrder) != ctx.y0) {
      ++orth_succ;
      Vec cand2(d);
      for (std::size_t i = 0; i < d; ++i) cand2[i] = cand[i] + step_src * (ctx.x0[i] - cand[i]);
      ++src_tot;
      if (ctx.query_soft_label(cand2, Phase::ZerothOrder) != ctx.y0) {
        ++src_succ;
        x_adv = std::move(cand2);
      } else {
        x_adv = std::move(cand);
      }
    }
    if (ctx.iter % 10 == 0) {
      const double orth_rate = orth_tot > 0 ? static_cast<double>(orth_succ) / orth_tot : 0.0;
      step_orth = (orth_rate > 0.5) ? step_orth * ctx.cfg.ba_lr : step_orth / ctx.cfg.ba_lr;
      step_orth = std::clamp(step_orth, 1e-5, 1.0);
      const double src_rate = src_tot > 0 ? static_cast<double>(src_succ) / src_tot : 0.0;
      step_src = (src_rate > 0.25) ? step_src * ctx.cfg.ba_lr : step_src / ctx.cfg.ba_lr;
      step_src = std::clamp(step_src, 1e-5, 1.0);
      orth_succ = orth_tot = src_succ = src_tot = 0;
    }
  }
}

}  // namespace

AttackResult run_attack(VictimModel& victim, std::span<const float> x0, int y0,
                        const AttackConfig& cfg, Rng& rng) {
  if (cfg.query_budget <= 0) throw std::invalid_argument("run_attack: budget must be > 0");
  if (x0.size() != victim.input_dim()) throw std::invalid_argument("run_attack: dim mismatch");
  if (victim.predict_hard(x0) != y0) {
    throw std::invalid_argument("run_attack: x0 is already misclassified");
  }
  AttackContext ctx(victim, x0, y0, cfg, rng);
  try {
    switch (cfg.method) {
      case AttackMethod::NES: run_nes(ctx); break;
      case AttackMethod::HSJA: run_hsja(ctx); break;
      case AttackMethod::SimBA: run_simba(ctx); break;
      case AttackMethod::SignOpt: run_signopt(ctx); break;
      case AttackMethod::SignFlip: run_signflip(ctx); break;
      case AttackMethod::BA: run_ba(ctx); break;
    }
  } catch (const StopRun&) {
    // Budget exhausted or early stop after a recorded success.
  }
  AttackResult result;
  result.outcome.success = ctx.success;
  result.outcome.queries_used = ctx.used();
  if (ctx.success) {
    result.outcome.final_example = std::move(ctx.best_adv);
    result.outcome.rho = ctx.best_rho;
    result.outcome.queries_to_success = ctx.queries_to_success;
  } else {
    result.outcome.final_example = ctx.last_query.empty() ? ctx.x0 : std::move(ctx.last_query);
    result.outcome.rho =
        perturbation_ratio(std::span<const double>(ctx.x0),
                           std::span<const double>(result.outcome.final_example));
  }
  result.trace = std::move(ctx.trace);
  return result;
}

namespace {

/// Cycles through the pool in shuffled passes; a fresh permutation per pass
/// keeps repeats far apart.
class PoolSampler {
 public:
  PoolSampler(const Dataset& pool, Rng& rng) : pool_(pool), rng_(rng), order_(pool.size()) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    reshuffle();
  }

  std::span<const float> next() {
    if (pos_ == order_.size()) {
      reshuffle();
      pos_ = 0;
    }
    return pool_.sample(order_[pos_++]);
  }

 private:
  void reshuffle() {
    for (std::size_t i = order_.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng_.next_u64() % i);
      std::swap(order_[i - 1], order_[j]);
    }
  }

  const Dataset& pool_;
  Rng& rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

}  // namespace

QueryTrace inject_benign(const QueryTrace& trace, double r_b, const Dataset& pool, Rng& rng) {
  if (r_b < 0.0) throw std::invalid_argument("inject_benign: r_b must be >= 0");
  const std::size_t n_attack = trace.size();
  const std::size_t n_benign =
      static_cast<std::size_t>(std::llround(r_b * static_cast<double>(n_attack)));
  if (n_benign == 0) return trace;
  if (pool.empty()) throw std::invalid_argument("inject_benign: empty benign pool");
  if (pool.dim != trace.dim()) throw std::invalid_argument("inject_benign: dim mismatch");

  const std::size_t total = n_attack + n_benign;
  std::vector<std::uint8_t> slot_is_benign(total, 0);
  std::fill(slot_is_benign.begin(), slot_is_benign.begin() + static_cast<std::ptrdiff_t>(n_benign),
            std::uint8_t{1});
  for (std::size_t i = total; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
    std::swap(slot_is_benign[i - 1], slot_is_benign[j]);
  }

  PoolSampler sampler(pool, rng);
  QueryTrace out(trace.dim());
  out.reserve(total);
  std::size_t attack_pos = 0;
  for (std::size_t slot = 0; slot < total; ++slot) {
    if (slot_is_benign[slot]) {
      out.append(sampler.next(), Phase::InjectedBenign, 0);
    } else {
      out.append(trace.query(attack_pos), trace.phase(attack_pos), trace.iteration(attack_pos));
      ++attack_pos;
    }
  }
  return out;
}

QueryTrace benign_stream(const Dataset& pool, std::size_t n, Rng& rng) {
  if (pool.empty()) throw std::invalid_argument("benign_stream: empty pool");
  QueryTrace out(pool.dim);
  out.reserve(n);
  PoolSampler sampler(pool, rng);
  for (std::size_t i = 0; i < n; ++i) {
    out.append(sampler.next(), Phase::Other, static_cast<std::uint32_t>(i));
  }
  return out;
}

}  // namespace gwad
