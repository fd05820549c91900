#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "gwad/numkit.hpp"
#include "gwad/trace.hpp"

using namespace gwad;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const char* name) {
  return fs::temp_directory_path() / name;
}

QueryTrace make_trace(int n, int dim, std::uint64_t seed) {
  Rng rng(seed);
  QueryTrace trace(static_cast<std::uint32_t>(dim));
  for (int i = 0; i < n; ++i) {
    const Vec q = sample_gaussian(dim, 0.5, 0.2, rng);
    const Phase phase = static_cast<Phase>(rng.next_u64() % 4);
    trace.append(std::span<const double>(q), phase, static_cast<std::uint32_t>(i / 10));
  }
  return trace;
}

}  // namespace

TEST_SUITE("trace") {

TEST_CASE("round trip preserves every record bit-exactly") {
  const QueryTrace trace = make_trace(200, 48, 1);
  const fs::path path = temp_file("gwad_trace_roundtrip.gwtr");
  write_trace(trace, path);
  const QueryTrace loaded = read_trace(path);
  REQUIRE(loaded.size() == trace.size());
  REQUIRE(loaded.dim() == trace.dim());
  for (std::size_t i = 0; i < trace.size(); ++i) {
    CHECK(loaded.phase(i) == trace.phase(i));
    CHECK(loaded.iteration(i) == trace.iteration(i));
    const auto a = trace.query(i);
    const auto b = loaded.query(i);
    for (std::size_t j = 0; j < a.size(); ++j) CHECK(a[j] == b[j]);
  }
  fs::remove(path);
}

TEST_CASE("file size matches the declared layout") {
  const int n = 57, dim = 33;
  const QueryTrace trace = make_trace(n, dim, 2);
  const fs::path path = temp_file("gwad_trace_size.gwtr");
  write_trace(trace, path);
  // magic(4) + version(4) + dim(4) + count(8) + n * (1 + 4 + 4*dim)
  const std::uintmax_t expected = 20 + static_cast<std::uintmax_t>(n) * (5 + 4 * dim);
  CHECK(fs::file_size(path) == expected);
  fs::remove(path);
}

TEST_CASE("corrupted magic is rejected") {
  const QueryTrace trace = make_trace(10, 8, 3);
  const fs::path path = temp_file("gwad_trace_badmagic.gwtr");
  write_trace(trace, path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_AS((void)read_trace(path), std::runtime_error);
  fs::remove(path);
}

TEST_CASE("truncated file is rejected") {
  const QueryTrace trace = make_trace(20, 16, 4);
  const fs::path path = temp_file("gwad_trace_trunc.gwtr");
  write_trace(trace, path);
  const auto size = fs::file_size(path);
  fs::resize_file(path, size - 7);
  CHECK_THROWS_AS((void)read_trace(path), std::runtime_error);
  fs::remove(path);
}

TEST_CASE("double and float appends agree after quantization") {
  Rng rng(5);
  const Vec q = sample_gaussian(24, 0.5, 0.3, rng);
  std::vector<float> qf(q.begin(), q.end());
  QueryTrace a(24), b(24);
  a.append(std::span<const double>(q), Phase::ZerothOrder, 0);
  b.append(std::span<const float>(qf), Phase::ZerothOrder, 0);
  const auto qa = a.query(0);
  const auto qb = b.query(0);
  for (std::size_t i = 0; i < qa.size(); ++i) CHECK(qa[i] == qb[i]);
}

TEST_CASE("consumption profile fractions") {
  QueryTrace trace(4);
  const std::vector<float> q = {0.1f, 0.2f, 0.3f, 0.4f};
  for (int i = 0; i < 6; ++i) trace.append(std::span<const float>(q), Phase::ZerothOrder, 0);
  for (int i = 0; i < 3; ++i) trace.append(std::span<const float>(q), Phase::LineSearch, 0);
  trace.append(std::span<const float>(q), Phase::InjectedBenign, 0);
  const PhaseFractions f = consumption_profile(trace);
  CHECK(f.zeroth_order == doctest::Approx(0.6));
  CHECK(f.line_search == doctest::Approx(0.3));
  CHECK(f.other == doctest::Approx(0.0));
  CHECK(f.injected_benign == doctest::Approx(0.1));
  CHECK(f.zeroth_order + f.line_search + f.other + f.injected_benign ==
        doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("all-zeroth trace profiles to exactly 1.0") {
  QueryTrace trace(2);
  const std::vector<float> q = {0.5f, 0.5f};
  for (int i = 0; i < 10; ++i) trace.append(std::span<const float>(q), Phase::ZerothOrder, 0);
  const PhaseFractions f = consumption_profile(trace);
  CHECK(f.zeroth_order == 1.0);
}

TEST_CASE("empty trace has no profile") {
  QueryTrace trace(4);
  CHECK_THROWS_AS((void)consumption_profile(trace), std::invalid_argument);
}

}  // TEST_SUITE
