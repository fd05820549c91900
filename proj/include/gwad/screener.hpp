#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gwad/ds_monitor.hpp"

namespace gwad {

/// 1024-bit (128-byte) binarized edge map of a query image, one bit per
/// pixel of the 32x32 edge image, packed row-major MSB-first.
struct EdgeSignature {
  std::array<std::uint8_t, 128> bytes{};

  int popcount() const;
  std::string hex() const;
  bool operator==(const EdgeSignature&) const = default;
};

struct ImageGeometry {
  int height = 32;
  int width = 32;
  int channels = 3;

  std::size_t pixel_count() const {
    return static_cast<std::size_t>(height) * width * channels;
  }
};

struct CannyParams {
  double sigma = 1.0;  // Gaussian blur std, pixels
  double low = 0.1;    // low hysteresis threshold, fraction of max magnitude
  double high = 0.3;   // high hysteresis threshold, fraction of max magnitude
};

/// Grayscale -> bilinear 32x32 rescale -> Canny -> bit packing.
/// Throws std::invalid_argument when the flat image does not match the
/// declared geometry.
EdgeSignature edge_signature(std::span<const float> image, const ImageGeometry& geometry,
                             const CannyParams& params = {});
EdgeSignature edge_signature(std::span<const double> image, const ImageGeometry& geometry,
                             const CannyParams& params = {});

/// Bit-mismatch ratio popcount(a ^ b) / (popcount(a) + popcount(b)).
/// Two all-zero signatures score 0 (identical blank images are maximally
/// similar).
double mismatch_ratio(const EdgeSignature& a, const EdgeSignature& b);

struct ScreenerConfig {
  ImageGeometry geometry;
  CannyParams canny;
  std::size_t fifo_depth = 100;
  double theta = 0.30;          // suspicious when best mismatch ratio < theta
  std::size_t ds_window = kDefaultDsWindow;  // per-channel monitor window
};

struct ScreenVerdict {
  bool suspicious = false;
  std::optional<int> channel_id;    // set iff suspicious
  std::optional<double> best_ratio; // best FIFO mismatch ratio, if any entry
  std::optional<double> emitted_ds; // DS emitted by the channel monitor
};

/// Stateful pre-filter: each query's edge signature is compared against the
/// FIFO of recent signatures. A match below theta routes the query to the
/// matched entry's channel (its per-channel DS monitor); otherwise the query
/// passes as benign under a fresh channel id. Either way the signature is
/// pushed into the FIFO.
class Screener {
 public:
  explicit Screener(ScreenerConfig cfg);

  ScreenVerdict push(std::span<const float> query);
  ScreenVerdict push(std::span<const double> query);

  /// Forwarded-query count per channel (channels that never received a
  /// suspicious query do not appear).
  std::map<int, std::uint64_t> channel_counts() const { return channel_counts_; }

  const DsMonitor* channel_monitor(int cid) const;
  std::size_t fifo_size() const { return fifo_.size(); }
  const ScreenerConfig& config() const { return cfg_; }

 private:
  ScreenVerdict push_signature(const EdgeSignature& sig, std::span<const float> query);

  ScreenerConfig cfg_;
  struct Entry {
    EdgeSignature sig;
    int cid;
  };
  std::vector<Entry> fifo_;  // newest at the back
  int next_cid_ = 0;
  std::map<int, DsMonitor> channels_;
  std::map<int, std::uint64_t> channel_counts_;
};

}  // namespace gwad
