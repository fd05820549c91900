#include <doctest.h>

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "gwad/numkit.hpp"

using namespace gwad;

TEST_SUITE("numkit") {

TEST_CASE("cosine: orthogonal, identical, antipodal") {
  const Vec ex = {1.0, 0.0};
  const Vec ey = {0.0, 1.0};
  CHECK(cosine(ex, ey) == doctest::Approx(0.0));

  Rng rng(1);
  const Vec v = sample_gaussian(64, 0.0, 1.0, rng);
  Vec neg(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) neg[i] = -v[i];
  CHECK(cosine(v, v) == doctest::Approx(1.0));
  CHECK(cosine(v, neg) == doctest::Approx(-1.0));
}

TEST_CASE("cosine: zero-norm and dimension errors") {
  const Vec zero(8, 0.0);
  const Vec v = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0};
  CHECK_THROWS_AS((void)cosine(zero, v), std::domain_error);
  CHECK_THROWS_AS((void)cosine(v, zero), std::domain_error);
  const Vec shorter = {1.0, 2.0};
  CHECK_THROWS_AS((void)cosine(v, shorter), std::invalid_argument);
}

TEST_CASE("cosine: symmetry and scale invariance properties") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int d = 2 + static_cast<int>(rng.next_u64() % 64);
    const Vec a = sample_gaussian(d, 0.0, 1.0, rng);
    const Vec b = sample_gaussian(d, 0.0, 1.0, rng);
    const double c = cosine(a, b);
    CHECK(c == cosine(b, a));  // exact symmetry
    CHECK(c >= -1.0);
    CHECK(c <= 1.0);
    const double k = 1e-6 + 10.0 * rng.next_unit();
    Vec scaled(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) scaled[i] = k * a[i];
    CHECK(cosine(scaled, b) == doctest::Approx(c).epsilon(1e-9));
  }
}

TEST_CASE("cosine stays clamped under near-parallel rounding") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const Vec a = sample_gaussian(128, 0.0, 1.0, rng);
    Vec b(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) b[i] = a[i] * 3.0;
    const double c = cosine(a, b);
    CHECK(c <= 1.0);
    CHECK(c >= -1.0);
    CHECK(c == doctest::Approx(1.0));
  }
}

TEST_CASE("sample_gaussian: zero variance and determinism") {
  Rng rng(5);
  const Vec constant = sample_gaussian(1, 5.0, 0.0, rng);
  CHECK(constant.size() == 1);
  CHECK(constant[0] == 5.0);

  Rng a(99), b(99);
  const Vec va = sample_gaussian(256, 0.25, 2.0, a);
  const Vec vb = sample_gaussian(256, 0.25, 2.0, b);
  CHECK(va == vb);

  CHECK_THROWS_AS((void)sample_gaussian(0, 0.0, 1.0, rng), std::invalid_argument);
  CHECK_THROWS_AS((void)sample_gaussian(8, 0.0, -1.0, rng), std::invalid_argument);
}

TEST_CASE("sample_gaussian: Monte Carlo mean estimate") {
  // Mean over >= 1e4 standard normal draws stays within the 3/sqrt(3072)
  // band stated for a d = 3072 vector (the larger sample only tightens it).
  Rng rng(11);
  double sum = 0.0;
  std::size_t count = 0;
  while (count < 10000) {
    const Vec v = sample_gaussian(3072, 0.0, 1.0, rng);
    for (const double x : v) sum += x;
    count += v.size();
  }
  const double mean = sum / static_cast<double>(count);
  CHECK(std::abs(mean) <= 3.0 / std::sqrt(3072.0));
}

TEST_CASE("rng: split streams are independent and reproducible") {
  Rng a(123), b(123);
  Rng a1 = a.split();
  Rng b1 = b.split();
  for (int i = 0; i < 16; ++i) CHECK(a1.next_u64() == b1.next_u64());
  // Parent and child streams diverge.
  Rng c(123);
  Rng child = c.split();
  bool differs = false;
  for (int i = 0; i < 16; ++i) {
    if (c.next_u64() != child.next_u64()) differs = true;
  }
  CHECK(differs);
}

TEST_CASE("concentration_probe: d = 3072 length and tail bounds") {
  Rng rng(2024);
  const ConcentrationStats stats = concentration_probe(3072, 1000, rng);
  CHECK(stats.mean_norm_ratio >= 0.99);
  CHECK(stats.mean_norm_ratio <= 1.01);
  CHECK(stats.tail_freq <= 2.0 / 3072.0);
  CHECK(stats.mean_abs_cos >= 0.0);
  CHECK(stats.mean_abs_cos <= 1.0);
}

TEST_CASE("concentration_probe: planar mean |cos| matches quadrature") {
  // Independent oracle: mean |cos(theta)| for a uniform planar angle,
  // integrated numerically with Simpson's rule.
  const int n = 20000;
  double integral = 0.0;
  const double step = std::numbers::pi / n;
  for (int i = 0; i < n; ++i) {
    const double a = i * step, b = (i + 1) * step;
    integral += (step / 6.0) *
                (std::abs(std::cos(a)) + 4.0 * std::abs(std::cos(0.5 * (a + b))) +
                 std::abs(std::cos(b)));
  }
  const double expected = integral / std::numbers::pi;
  CHECK(expected == doctest::Approx(2.0 / std::numbers::pi).epsilon(1e-6));

  Rng rng(31);
  const ConcentrationStats stats = concentration_probe(2, 10000, rng);
  CHECK(std::abs(stats.mean_abs_cos - expected) <= 0.02);
}

TEST_CASE("concentration_probe: high-dimensional invariants") {
  Rng rng(77);
  for (const int d : {512, 1024, 2048}) {
    const ConcentrationStats stats = concentration_probe(d, 1000, rng);
    CHECK(std::abs(stats.mean_norm_ratio - 1.0) <= 0.02);
    CHECK(stats.mean_abs_cos <= 2.0 / std::sqrt(static_cast<double>(d)));
    CHECK(stats.tail_freq >= 0.0);
    CHECK(stats.tail_freq <= 1.0);
  }
}

TEST_CASE("concentration_probe: argument errors") {
  Rng rng(1);
  CHECK_THROWS_AS((void)concentration_probe(0, 1000, rng), std::invalid_argument);
  CHECK_THROWS_AS((void)concentration_probe(16, 99, rng), std::invalid_argument);
}

}  // TEST_SUITE
