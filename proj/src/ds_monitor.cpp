#include "gwad/ds_monitor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace gwad {

int ds_bin_index(double ds) {
  if (!(ds >= -1.0 && ds <= 1.0)) {
    throw std::invalid_argument("ds_bin_index: value outside [-1, 1]");
  }
  if (ds == 1.0) return 200;
  const int idx = static_cast<int>(std::floor((ds + 1.0) * 100.0));
  return std::clamp(idx, 0, 199);
}

HodsFeature hods_from_values(std::span<const double> ds_values) {
  std::vector<double> counts(kHodsBins, 0.0);
  for (double ds : ds_values) counts[static_cast<std::size_t>(ds_bin_index(ds))] += 1.0;
  const auto [lo_it, hi_it] = std::minmax_element(counts.begin(), counts.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  HodsFeature feature;
  feature.source_count = static_cast<std::uint32_t>(ds_values.size());
  feature.bins = std::move(counts);
  if (hi == lo) {
    std::fill(feature.bins.begin(), feature.bins.end(), 0.0);
    return feature;
  }
  for (double& b : feature.bins) b = (b - lo) / (hi - lo);
  return feature;
}

DsMonitor::DsMonitor(std::size_t window) : window_capacity_(window) {
  if (window == 0) throw std::invalid_argument("DsMonitor: window must be positive");
  ring_.assign(window_capacity_, 0.0);
}

std::optional<double> DsMonitor::push(std::span<const float> x) {
  Vec q(x.begin(), x.end());
  return push_impl(q);
}

std::optional<double> DsMonitor::push(std::span<const double> x) {
  Vec q(x.begin(), x.end());
  return push_impl(q);
}

std::optional<double> DsMonitor::push_impl(const Vec& x) {
  if (dim_ == 0) {
    if (x.empty()) throw std::invalid_argument("DsMonitor: empty query");
    dim_ = x.size();
  } else if (x.size() != dim_) {
    throw std::invalid_argument("DsMonitor: query dimension " + std::to_string(x.size()) +
                                " does not match stream dimension " + std::to_string(dim_));
  }

  if (!has_prev_query_) {
    prev_query_ = x;
    has_prev_query_ = true;
    return std::nullopt;
  }

  Vec delta(dim_);
  double delta_norm_sq = 0.0;
  for (std::size_t i = 0; i < dim_; ++i) {
    delta[i] = x[i] - prev_query_[i];
    delta_norm_sq += delta[i] * delta[i];
  }
  prev_query_ = x;

  if (delta_norm_sq == 0.0) {
    // Repeated identical query: no defined update direction. Drop the
    // previous delta too so emission re-arms only after two fresh updates.
    has_prev_delta_ = false;
    return std::nullopt;
  }

  std::optional<double> emitted;
  if (has_prev_delta_) {
    const double ds = cosine(prev_delta_, delta);
    ring_[ring_head_] = ds;
    ring_head_ = (ring_head_ + 1) % window_capacity_;
    window_len_ = std::min(window_len_ + 1, window_capacity_);
    ++ds_count_;
    emitted = ds;
  }
  prev_delta_ = std::move(delta);
  has_prev_delta_ = true;
  return emitted;
}

HodsFeature DsMonitor::extract() const {
  if (!window_full()) {
    throw std::runtime_error("DsMonitor: insufficient history (" +
                             std::to_string(window_len_) + " of " +
                             std::to_string(window_capacity_) + " DS values)");
  }
  return hods_from_values(ring_);
}

void DsMonitor::reset() {
  ring_head_ = 0;
  window_len_ = 0;
  ds_count_ = 0;
  dim_ = 0;
  has_prev_query_ = false;
  has_prev_delta_ = false;
  prev_query_.clear();
  prev_delta_.clear();
}

std::vector<double> DsMonitor::window_values() const {
  std::vector<double> out;
  out.reserve(window_len_);
  if (window_len_ < window_capacity_) {
    out.assign(ring_.begin(), ring_.begin() + static_cast<std::ptrdiff_t>(window_len_));
    return out;
  }
  for (std::size_t i = 0; i < window_capacity_; ++i) {
    out.push_back(ring_[(ring_head_ + i) % window_capacity_]);
  }
  return out;
}

void write_ds_csv(std::ostream& os, std::span<const double> ds_values) {
  os << "index,ds_value\n";
  char buf[64];
  for (std::size_t i = 0; i < ds_values.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i, ds_values[i]);
    os << buf;
  }
}

}  // namespace gwad
