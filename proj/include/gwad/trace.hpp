#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace gwad {

/// Phase annotation for every query, assigned by the attack implementation
/// at the call site (ground truth for consumption profiles).
enum class Phase : std::uint8_t {
  ZerothOrder = 0,
  LineSearch = 1,
  Other = 2,
  InjectedBenign = 3,
};

const char* phase_name(Phase p);

/// Ordered sequence of queries with per-query phase and iteration index.
/// Queries are stored as float32, matching the on-disk payload, so a trace
/// replays identically whether it was just generated or read back from disk.
class QueryTrace {
 public:
  QueryTrace() = default;
  explicit QueryTrace(std::uint32_t dim) : dim_(dim) {}

  void append(std::span<const double> query, Phase phase, std::uint32_t iteration);
  void append(std::span<const float> query, Phase phase, std::uint32_t iteration);

  std::span<const float> query(std::size_t i) const {
    return {data_.data() + i * dim_, dim_};
  }
  Phase phase(std::size_t i) const { return phases_[i]; }
  std::uint32_t iteration(std::size_t i) const { return iterations_[i]; }

  std::size_t size() const { return phases_.size(); }
  bool empty() const { return phases_.empty(); }
  std::uint32_t dim() const { return dim_; }

  void reserve(std::size_t n);

 private:
  std::uint32_t dim_ = 0;
  std::vector<float> data_;  // size() * dim_ floats
  std::vector<Phase> phases_;
  std::vector<std::uint32_t> iterations_;
};

/// Binary trace file, little-endian:
///   magic "GWTR", u32 version = 1, u32 dim, u64 record_count,
///   then per record: u8 phase, u32 iteration, dim x f32 payload.
void write_trace(const QueryTrace& trace, const std::filesystem::path& path);
QueryTrace read_trace(const std::filesystem::path& path);

struct PhaseFractions {
  double zeroth_order = 0.0;
  double line_search = 0.0;
  double other = 0.0;
  double injected_benign = 0.0;
};

/// Fraction of queries per phase; fractions sum to 1. Throws on an empty
/// trace.
PhaseFractions consumption_profile(const QueryTrace& trace);

}  // namespace gwad
