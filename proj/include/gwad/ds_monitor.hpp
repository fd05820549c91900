#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "gwad/numkit.hpp"

namespace gwad {

inline constexpr std::size_t kDefaultDsWindow = 256;
inline constexpr std::size_t kHodsBins = 201;

/// Histogram bin for a delta-similarity value in [-1, 1]: 200 equally
/// spaced half-open bins of width 0.01 plus a dedicated bin 200 for the
/// exact value 1.0. Throws std::invalid_argument outside [-1, 1] (NaN
/// included).
int ds_bin_index(double ds);

/// Min-max-normalized 201-bin histogram of a window of DS values.
/// After normalization either max == 1 and min == 0, or every entry is 0
/// (the degenerate all-counts-equal case).
struct HodsFeature {
  std::vector<double> bins;        // length kHodsBins, entries in [0, 1]
  std::uint32_t source_count = 0;  // number of DS values summarized
};

/// Builds a HodsFeature from raw DS values (each must lie in [-1, 1]).
HodsFeature hods_from_values(std::span<const double> ds_values);

/// Streaming delta-similarity monitor for one query stream.
///
/// Each pushed query x_i yields an update delta_i = x_i - x_{i-1}; once two
/// consecutive nonzero deltas exist the monitor emits their cosine
/// similarity and appends it to a ring window of the last `window` values.
/// A zero-norm delta emits nothing and invalidates the previous delta, so
/// two fresh nonzero deltas are needed before emission resumes.
class DsMonitor {
 public:
  explicit DsMonitor(std::size_t window = kDefaultDsWindow);

  /// Feeds one query; returns the emitted DS value if any. The stream
  /// dimension is fixed by the first push; a mismatch later throws
  /// std::invalid_argument.
  std::optional<double> push(std::span<const float> x);
  std::optional<double> push(std::span<const double> x);

  /// Extracts the HoDS feature of the current window. Throws
  /// std::runtime_error unless the window is full.
  HodsFeature extract() const;

  void reset();

  std::size_t window_capacity() const { return window_capacity_; }
  bool window_full() const { return window_len_ == window_capacity_; }
  std::size_t window_size() const { return window_len_; }
  std::uint64_t ds_count() const { return ds_count_; }

  /// Window contents in insertion order (oldest first).
  std::vector<double> window_values() const;

 private:
  std::optional<double> push_impl(const Vec& x);

  std::size_t window_capacity_;
  std::vector<double> ring_;
  std::size_t ring_head_ = 0;  // next write position
  std::size_t window_len_ = 0;
  std::uint64_t ds_count_ = 0;

  std::size_t dim_ = 0;  // fixed at first push
  bool has_prev_query_ = false;
  bool has_prev_delta_ = false;
  Vec prev_query_;
  Vec prev_delta_;
};

/// Writes "index,ds_value" rows for every DS emitted by replaying the given
/// DS sequence (one row per value, header included).
void write_ds_csv(std::ostream& os, std::span<const double> ds_values);

}  // namespace gwad
