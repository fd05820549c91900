#pragma once

// Independent reference implementations used to check the library. These
// deliberately avoid the library's own code paths: the histogram oracle
// re-derives the bin edges by linear scan, and the gradient checker drives
// the loss purely through finite differences.

#include <cmath>
#include <span>
#include <vector>

#include "gwad/detector.hpp"
#include "gwad/ds_monitor.hpp"

namespace oracles {

// Two-pass histogram over [-1, 1]: 200 half-open width-0.01 bins found by
// scanning the edges, a closed singleton bin for exactly 1.0, then min-max
// normalization.
inline std::vector<double> brute_force_hods(std::span<const double> values) {
  std::vector<double> counts(201, 0.0);
  for (const double v : values) {
    int bin = -1;
    if (v == 1.0) {
      bin = 200;
    } else {
      for (int k = 0; k < 200; ++k) {
        const double lo = -1.0 + 0.01 * k;
        const double hi = lo + 0.01;
        const bool last_open_bin = (k == 199);
        if (v >= lo && (v < hi || (last_open_bin && v < 1.0))) {
          bin = k;
          break;
        }
      }
    }
    counts[static_cast<std::size_t>(bin)] += 1.0;
  }
  double lo = counts[0], hi = counts[0];
  for (const double c : counts) {
    lo = std::min(lo, c);
    hi = std::max(hi, c);
  }
  if (hi == lo) return std::vector<double>(201, 0.0);
  for (double& c : counts) c = (c - lo) / (hi - lo);
  return counts;
}

struct GradientCheckResult {
  double max_rel_error = 0.0;
  int checked = 0;
};

// Central finite differences against the analytic gradients, sampling
// `per_tensor` entries of every weight matrix and bias vector. The realized
// float32 step (w+ - w-) is used as the divisor so parameter quantization
// does not bias the estimate.
inline GradientCheckResult gradient_check(gwad::MlpWeights& w,
                                          std::span<const gwad::HodsFeature> batch,
                                          std::span<const int> labels, int per_tensor,
                                          gwad::Rng& rng) {
  std::vector<gwad::LayerGrads> grads;
  gwad::nll_and_gradients(w, batch, labels, grads);
  GradientCheckResult result;
  const double h = 1e-4;
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    auto check_tensor = [&](std::vector<float>& params, const std::vector<double>& analytic) {
      for (int s = 0; s < per_tensor; ++s) {
        const std::size_t idx = static_cast<std::size_t>(rng.next_u64() % params.size());
        const float original = params[idx];
        const float plus = static_cast<float>(static_cast<double>(original) + h);
        const float minus = static_cast<float>(static_cast<double>(original) - h);
        params[idx] = plus;
        const double loss_plus = gwad::nll_loss(w, batch, labels);
        params[idx] = minus;
        const double loss_minus = gwad::nll_loss(w, batch, labels);
        params[idx] = original;
        const double step = static_cast<double>(plus) - static_cast<double>(minus);
        const double fd = (loss_plus - loss_minus) / step;
        const double an = analytic[idx];
        const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
        result.max_rel_error = std::max(result.max_rel_error, rel);
        ++result.checked;
      }
    };
    check_tensor(w.layers[l].w, grads[l].w);
    check_tensor(w.layers[l].b, grads[l].b);
  }
  return result;
}

}  // namespace oracles
