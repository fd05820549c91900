#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace gwad {

/// Dense real vector. Dimension is the length; all entries are expected
/// finite.
using Vec = std::vector<double>;

/// Deterministic 64-bit PRNG: xoshiro256++ seeded through SplitMix64.
///
/// The generator is fixed so that identical seeds give identical sample
/// streams on every platform. split() derives an independent child stream,
/// which is how the harness hands sub-seeds to victims, attacks, and the
/// detector without coupling their consumption rates.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  /// Uniform double in [0, 1).
  double next_unit();

  /// Standard normal draw (Marsaglia polar method; pairs are cached).
  double next_gaussian();

  /// Independent generator derived from this one. Advances this stream.
  Rng split();

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_;
  double cached_gaussian_ = 0.0;
  bool has_cached_gaussian_ = false;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
double distance(std::span<const double> a, std::span<const double> b);

/// Cosine similarity a.b / (|a||b|), clamped to [-1, 1] so rounding can
/// never push a downstream histogram index out of range.
///
/// Throws std::invalid_argument on dimension mismatch and std::domain_error
/// when either input has zero norm (the similarity is undefined; callers own
/// the skip policy).
double cosine(std::span<const double> a, std::span<const double> b);

/// d i.i.d. draws from N(mu, sigma^2). Throws std::invalid_argument for
/// d < 1 or sigma < 0.
Vec sample_gaussian(int d, double mu, double sigma, Rng& rng);

struct ConcentrationStats {
  double mean_norm_ratio = 0.0;  // mean |u| / sqrt(d)
  double mean_abs_cos = 0.0;     // mean |cos(u, v)| over independent pairs
  double tail_freq = 0.0;        // empirical P(|cos| >= sqrt(2 ln d / d))
};

/// Draws n_samples independent pairs of N(0,1)^d vectors and reports how
/// tightly their lengths and angles concentrate. Requires d >= 1 and
/// n_samples >= 100.
ConcentrationStats concentration_probe(int d, int n_samples, Rng& rng);

}  // namespace gwad
