#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "gwad/ds_monitor.hpp"
#include "gwad/numkit.hpp"
#include "oracles.hpp"

using namespace gwad;

namespace {

std::vector<double> collect_ds(DsMonitor& monitor, const std::vector<Vec>& stream) {
  std::vector<double> out;
  for (const Vec& q : stream) {
    if (const auto ds = monitor.push(std::span<const double>(q))) out.push_back(*ds);
  }
  return out;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST_SUITE("ds_monitor") {

TEST_CASE("first two pushes emit nothing") {
  DsMonitor monitor;
  Rng rng(1);
  CHECK_FALSE(monitor.push(std::span<const double>(sample_gaussian(32, 0.5, 0.1, rng))));
  CHECK_FALSE(monitor.push(std::span<const double>(sample_gaussian(32, 0.5, 0.1, rng))));
  CHECK(monitor.ds_count() == 0);
}

TEST_CASE("identical pushes never emit; two fresh deltas re-arm") {
  DsMonitor monitor;
  Rng rng(2);
  const Vec x = sample_gaussian(32, 0.5, 0.1, rng);
  CHECK_FALSE(monitor.push(std::span<const double>(x)));
  CHECK_FALSE(monitor.push(std::span<const double>(x)));  // zero delta
  CHECK_FALSE(monitor.push(std::span<const double>(x)));  // still zero
  const Vec y = sample_gaussian(32, 0.5, 0.1, rng);
  // First nonzero delta after the invalidation: still nothing.
  CHECK_FALSE(monitor.push(std::span<const double>(y)));
  const Vec z = sample_gaussian(32, 0.5, 0.1, rng);
  const auto ds = monitor.push(std::span<const double>(z));
  REQUIRE(ds.has_value());
  CHECK(monitor.ds_count() == 1);
}

TEST_CASE("emitted value equals the cosine of consecutive updates") {
  DsMonitor monitor;
  Rng rng(3);
  const Vec a = sample_gaussian(64, 0.5, 0.2, rng);
  const Vec b = sample_gaussian(64, 0.5, 0.2, rng);
  const Vec c = sample_gaussian(64, 0.5, 0.2, rng);
  monitor.push(std::span<const double>(a));
  monitor.push(std::span<const double>(b));
  const auto ds = monitor.push(std::span<const double>(c));
  REQUIRE(ds.has_value());
  // Reference value computed on the same float32-quantized queries the
  // monitor sees.
  auto quantize = [](const Vec& v) {
    Vec out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
    return out;
  };
  const Vec aq = quantize(a), bq = quantize(b), cq = quantize(c);
  Vec d1(64), d2(64);
  for (int i = 0; i < 64; ++i) {
    d1[i] = bq[i] - aq[i];
    d2[i] = cq[i] - bq[i];
  }
  CHECK(*ds == doctest::Approx(cosine(d1, d2)).epsilon(1e-12));
}

TEST_CASE("NES antithetic triple lands near -0.7071") {
  DsMonitor monitor;
  Rng rng(4);
  const int d = 3072;
  const double eps = 0.1;
  const Vec x = sample_gaussian(d, 0.5, 0.05, rng);
  const Vec u1 = sample_gaussian(d, 0.0, 1.0, rng);
  const Vec u2 = sample_gaussian(d, 0.0, 1.0, rng);
  Vec q1(d), q2(d), q3(d);
  for (int i = 0; i < d; ++i) {
    q1[i] = x[i] + eps * u1[i];
    q2[i] = x[i] - eps * u1[i];
    q3[i] = x[i] + eps * u2[i];
  }
  monitor.push(std::span<const double>(q1));
  monitor.push(std::span<const double>(q2));
  const auto ds = monitor.push(std::span<const double>(q3));
  REQUIRE(ds.has_value());
  CHECK(std::abs(*ds - (-0.7071)) <= 0.05);
}

TEST_CASE("full NES pattern: median DS within 0.05 of -0.7071") {
  DsMonitor monitor;
  Rng rng(5);
  const int d = 1024;
  const Vec x = sample_gaussian(d, 0.5, 0.05, rng);
  std::vector<Vec> stream;
  for (int j = 0; j < 200; ++j) {
    const Vec u = sample_gaussian(d, 0.0, 1.0, rng);
    Vec plus(d), minus(d);
    for (int i = 0; i < d; ++i) {
      plus[i] = x[i] + 0.1 * u[i];
      minus[i] = x[i] - 0.1 * u[i];
    }
    stream.push_back(std::move(plus));
    stream.push_back(std::move(minus));
  }
  const auto ds = collect_ds(monitor, stream);
  CHECK(ds.size() == stream.size() - 2);
  CHECK(std::abs(median_of(ds) - (-0.7071)) <= 0.05);
}

TEST_CASE("gradient-estimation batch: median DS within 0.05 of -0.5") {
  DsMonitor monitor;
  Rng rng(6);
  const int d = 512;
  const Vec x = sample_gaussian(d, 0.5, 0.05, rng);
  std::vector<Vec> stream;
  for (int j = 0; j < 400; ++j) {
    const Vec u = sample_gaussian(d, 0.0, 1.0, rng);
    Vec q(d);
    for (int i = 0; i < d; ++i) q[i] = x[i] + 0.05 * u[i];
    stream.push_back(std::move(q));
  }
  const auto ds = collect_ds(monitor, stream);
  CHECK(std::abs(median_of(ds) - (-0.5)) <= 0.05);
  for (const double v : ds) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("ds_bin_index: boundaries and errors") {
  CHECK(ds_bin_index(-1.0) == 0);
  CHECK(ds_bin_index(1.0) == 200);
  CHECK(ds_bin_index(-0.5) == 50);
  CHECK(ds_bin_index(0.0) == 100);
  CHECK(ds_bin_index(0.9999) == 199);
  CHECK(ds_bin_index(-0.995) == 0);
  CHECK_THROWS_AS((void)ds_bin_index(-1.0001), std::invalid_argument);
  CHECK_THROWS_AS((void)ds_bin_index(1.0001), std::invalid_argument);
  CHECK_THROWS_AS((void)ds_bin_index(std::nan("")), std::invalid_argument);
}

TEST_CASE("hods: single-bin window normalizes to one hot bin") {
  const std::vector<double> window(256, -0.7071);
  const HodsFeature f = hods_from_values(window);
  REQUIRE(f.bins.size() == kHodsBins);
  CHECK(f.source_count == 256);
  CHECK(f.bins[29] == 1.0);  // floor(0.2929 * 100)
  for (std::size_t i = 0; i < f.bins.size(); ++i) {
    if (i != 29) CHECK(f.bins[i] == 0.0);
  }
}

TEST_CASE("hods: extraction requires a full window") {
  DsMonitor monitor(256);
  Rng rng(8);
  // 257 pushes yield 255 DS values: one short of a full window.
  for (int i = 0; i < 257; ++i) {
    monitor.push(std::span<const double>(sample_gaussian(64, 0.5, 0.2, rng)));
  }
  CHECK(monitor.ds_count() == 255);
  CHECK_FALSE(monitor.window_full());
  CHECK_THROWS_AS((void)monitor.extract(), std::runtime_error);
  monitor.push(std::span<const double>(sample_gaussian(64, 0.5, 0.2, rng)));
  CHECK(monitor.window_full());
  CHECK_NOTHROW((void)monitor.extract());
}

TEST_CASE("hods matches the brute-force histogram oracle") {
  Rng rng(9);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> window(256);
    for (double& v : window) {
      const double roll = rng.next_unit();
      if (roll < 0.05) {
        v = 1.0;  // exercise the closed top bin
      } else if (roll < 0.10) {
        v = -1.0;
      } else {
        v = 2.0 * rng.next_unit() - 1.0;
      }
    }
    const HodsFeature f = hods_from_values(window);
    const std::vector<double> expected = oracles::brute_force_hods(window);
    REQUIRE(f.bins.size() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) CHECK(f.bins[i] == expected[i]);
  }
}

TEST_CASE("hods is invariant to window order") {
  Rng rng(10);
  std::vector<double> window(256);
  for (double& v : window) v = 2.0 * rng.next_unit() - 1.0;
  const HodsFeature f1 = hods_from_values(window);
  for (std::size_t i = window.size(); i > 1; --i) {
    std::swap(window[i - 1], window[rng.next_u64() % i]);
  }
  const HodsFeature f2 = hods_from_values(window);
  CHECK(f1.bins == f2.bins);
}

TEST_CASE("degenerate all-equal counts produce the zero feature") {
  // Impossible from a real stream, but the contract pins it: equal counts
  // in every bin normalize to all zeros.
  const std::vector<double> empty;
  const HodsFeature f = hods_from_values(empty);
  CHECK(std::all_of(f.bins.begin(), f.bins.end(), [](double v) { return v == 0.0; }));
}

TEST_CASE("monitor window evicts oldest and keeps [-1,1] values") {
  DsMonitor monitor(16);
  Rng rng(12);
  for (int i = 0; i < 200; ++i) {
    monitor.push(std::span<const double>(sample_gaussian(32, 0.5, 0.2, rng)));
  }
  CHECK(monitor.window_size() == 16);
  const auto window = monitor.window_values();
  CHECK(window.size() == 16);
  for (const double v : window) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("reset clears state; replay is deterministic") {
  DsMonitor monitor(64);
  Rng rng(13);
  std::vector<Vec> stream;
  for (int i = 0; i < 120; ++i) stream.push_back(sample_gaussian(48, 0.5, 0.2, rng));
  const auto first = collect_ds(monitor, stream);
  monitor.reset();
  CHECK(monitor.ds_count() == 0);
  CHECK(monitor.window_size() == 0);
  monitor.reset();  // idempotent
  CHECK(monitor.ds_count() == 0);
  const auto second = collect_ds(monitor, stream);
  CHECK(first == second);
  monitor.reset();
  CHECK_FALSE(monitor.push(std::span<const double>(stream[0])));
}

TEST_CASE("dimension mismatch is a stream error") {
  DsMonitor monitor;
  Rng rng(14);
  monitor.push(std::span<const double>(sample_gaussian(32, 0.5, 0.2, rng)));
  const Vec wrong = sample_gaussian(16, 0.5, 0.2, rng);
  CHECK_THROWS_AS((void)monitor.push(std::span<const double>(wrong)), std::invalid_argument);
}

}  // TEST_SUITE
