#include "gwad/numkit.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace gwad {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t s = seed;
  for (auto& word : state_) word = splitmix64(s);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double Rng::next_unit() {
  // Top 53 bits give a uniform double in [0, 1).
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_gaussian() {
  if (has_cached_gaussian_) {
    has_cached_gaussian_ = false;
    return cached_gaussian_;
  }
  double u = 0.0, v = 0.0, s = 0.0;
  do {
    u = 2.0 * next_unit() - 1.0;
    v = 2.0 * next_unit() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  cached_gaussian_ = v * f;
  has_cached_gaussian_ = true;
  return u * f;
}

Rng Rng::split() { return Rng(next_u64()); }

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("dot: dimension mismatch (" + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()) + ")");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("distance: dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine: dimension mismatch");
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) {
    throw std::domain_error("cosine: zero-norm input, similarity undefined");
  }
  const double c = dot(a, b) / (na * nb);
  if (c > 1.0) return 1.0;
  if (c < -1.0) return -1.0;
  return c;
}

Vec sample_gaussian(int d, double mu, double sigma, Rng& rng) {
  if (d < 1) throw std::invalid_argument("sample_gaussian: d must be >= 1");
  if (sigma < 0.0) throw std::invalid_argument("sample_gaussian: sigma must be >= 0");
  Vec out(static_cast<std::size_t>(d));
  for (auto& x : out) x = mu + sigma * rng.next_gaussian();
  return out;
}

ConcentrationStats concentration_probe(int d, int n_samples, Rng& rng) {
  if (d < 1) throw std::invalid_argument("concentration_probe: d must be >= 1");
  if (n_samples < 100) {
    throw std::invalid_argument("concentration_probe: n_samples must be >= 100");
  }
  const double sqrt_d = std::sqrt(static_cast<double>(d));
  const double tail_threshold = std::sqrt(2.0 * std::log(static_cast<double>(d)) /
                                          static_cast<double>(d));
  double norm_sum = 0.0;
  double abs_cos_sum = 0.0;
  std::uint64_t tail_hits = 0;
  for (int i = 0; i < n_samples; ++i) {
    const Vec u = sample_gaussian(d, 0.0, 1.0, rng);
    const Vec v = sample_gaussian(d, 0.0, 1.0, rng);
    norm_sum += norm(u) + norm(v);
    const double c = std::abs(cosine(u, v));
    abs_cos_sum += c;
    if (c >= tail_threshold) ++tail_hits;
  }
  ConcentrationStats stats;
  stats.mean_norm_ratio = norm_sum / (2.0 * n_samples) / sqrt_d;
  stats.mean_abs_cos = abs_cos_sum / n_samples;
  stats.tail_freq = static_cast<double>(tail_hits) / n_samples;
  return stats;
}

}  // namespace gwad
