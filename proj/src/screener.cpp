#include "gwad/screener.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace gwad {

namespace {

constexpr int kEdge = 32;  // signature image side

std::vector<double> to_grayscale(std::span<const double> image, const ImageGeometry& g) {
  std::vector<double> gray(static_cast<std::size_t>(g.height) * g.width);
  if (g.channels == 1) {
    std::copy(image.begin(), image.end(), gray.begin());
    return gray;
  }
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) {
      const std::size_t base =
          (static_cast<std::size_t>(y) * g.width + x) * static_cast<std::size_t>(g.channels);
      double v = 0.0;
      if (g.channels == 3) {
        v = 0.299 * image[base] + 0.587 * image[base + 1] + 0.114 * image[base + 2];
      } else {
        for (int c = 0; c < g.channels; ++c) v += image[base + static_cast<std::size_t>(c)];
        v /= g.channels;
      }
      gray[static_cast<std::size_t>(y) * g.width + x] = v;
    }
  }
  return gray;
}

std::vector<double> resize_bilinear(const std::vector<double>& src, int sh, int sw, int dh,
                                    int dw) {
  if (sh == dh && sw == dw) return src;
  std::vector<double> dst(static_cast<std::size_t>(dh) * dw);
  const double sy = static_cast<double>(sh) / dh;
  const double sx = static_cast<double>(sw) / dw;
  for (int y = 0; y < dh; ++y) {
    const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
    const int y0 = std::min(static_cast<int>(fy), sh - 1);
    const int y1 = std::min(y0 + 1, sh - 1);
    const double wy = fy - y0;
    for (int x = 0; x < dw; ++x) {
      const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
      const int x0 = std::min(static_cast<int>(fx), sw - 1);
      const int x1 = std::min(x0 + 1, sw - 1);
      const double wx = fx - x0;
      const double top = src[static_cast<std::size_t>(y0) * sw + x0] * (1 - wx) +
                         src[static_cast<std::size_t>(y0) * sw + x1] * wx;
      const double bot = src[static_cast<std::size_t>(y1) * sw + x0] * (1 - wx) +
                         src[static_cast<std::size_t>(y1) * sw + x1] * wx;
      dst[static_cast<std::size_t>(y) * dw + x] = top * (1 - wy) + bot * wy;
    }
  }
  return dst;
}

std::vector<double> gaussian_blur(const std::vector<double>& src, int h, int w, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : kernel) v /= sum;

  auto clampi = [](int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); };
  std::vector<double> tmp(src.size()), dst(src.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += kernel[static_cast<std::size_t>(i + radius)] *
               src[static_cast<std::size_t>(y) * w + clampi(x + i, 0, w - 1)];
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += kernel[static_cast<std::size_t>(i + radius)] *
               tmp[static_cast<std::size_t>(clampi(y + i, 0, h - 1)) * w + x];
      }
      dst[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  return dst;
}

}  // namespace

int EdgeSignature::popcount() const {
  int count = 0;
  for (std::uint8_t b : bytes) count += std::popcount(static_cast<unsigned>(b));
  return count;
}

std::string EdgeSignature::hex() const {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (std::uint8_t b : bytes) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0xf]);
  }
  return out;
}

EdgeSignature edge_signature(std::span<const double> image, const ImageGeometry& geometry,
                             const CannyParams& params) {
  if (image.size() != geometry.pixel_count()) {
    throw std::invalid_argument("edge_signature: image size does not match geometry");
  }
  if (geometry.height < 2 || geometry.width < 2 || geometry.channels < 1) {
    throw std::invalid_argument("edge_signature: bad geometry");
  }

  std::vector<double> gray = to_grayscale(image, geometry);
  gray = resize_bilinear(gray, geometry.height, geometry.width, kEdge, kEdge);
  gray = gaussian_blur(gray, kEdge, kEdge, params.sigma);

  // Sobel gradients (border pixels excluded).
  std::vector<double> mag(static_cast<std::size_t>(kEdge) * kEdge, 0.0);
  std::vector<double> gx_img(mag.size(), 0.0), gy_img(mag.size(), 0.0);
  double max_mag = 0.0;
  for (int y = 1; y < kEdge - 1; ++y) {
    for (int x = 1; x < kEdge - 1; ++x) {
      auto at = [&](int yy, int xx) { return gray[static_cast<std::size_t>(yy) * kEdge + xx]; };
      const double gx = (at(y - 1, x + 1) + 2 * at(y, x + 1) + at(y + 1, x + 1)) -
                        (at(y - 1, x - 1) + 2 * at(y, x - 1) + at(y + 1, x - 1));
      const double gy = (at(y + 1, x - 1) + 2 * at(y + 1, x) + at(y + 1, x + 1)) -
                        (at(y - 1, x - 1) + 2 * at(y - 1, x) + at(y - 1, x + 1));
      const std::size_t idx = static_cast<std::size_t>(y) * kEdge + x;
      gx_img[idx] = gx;
      gy_img[idx] = gy;
      mag[idx] = std::sqrt(gx * gx + gy * gy);
      max_mag = std::max(max_mag, mag[idx]);
    }
  }

  EdgeSignature sig;
  if (max_mag == 0.0) return sig;  // flat image: no edges

  // Non-maximum suppression along the quantized gradient direction.
  std::vector<double> thin(mag.size(), 0.0);
  for (int y = 1; y < kEdge - 1; ++y) {
    for (int x = 1; x < kEdge - 1; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * kEdge + x;
      if (mag[idx] == 0.0) continue;
      const double angle = std::atan2(gy_img[idx], gx_img[idx]);
      // Quantize to one of 4 directions: 0, 45, 90, 135 degrees.
      constexpr double quarter = std::numbers::pi / 4.0;
      const int dir = (static_cast<int>(std::round(angle / quarter)) % 4 + 4) % 4;
      static constexpr int dx[4] = {1, 1, 0, -1};
      static constexpr int dy[4] = {0, 1, 1, 1};
      const double a = mag[static_cast<std::size_t>(y + dy[dir]) * kEdge + (x + dx[dir])];
      const double b = mag[static_cast<std::size_t>(y - dy[dir]) * kEdge + (x - dx[dir])];
      if (mag[idx] >= a && mag[idx] >= b) thin[idx] = mag[idx];
    }
  }

  // Hysteresis: grow strong edges into connected weak pixels.
  const double high = params.high * max_mag;
  const double low = params.low * max_mag;
  std::vector<std::uint8_t> state(thin.size(), 0);  // 0 none, 1 weak, 2 strong
  std::vector<std::size_t> stack;
  for (std::size_t i = 0; i < thin.size(); ++i) {
    if (thin[i] >= high) {
      state[i] = 2;
      stack.push_back(i);
    } else if (thin[i] >= low) {
      state[i] = 1;
    }
  }
  while (!stack.empty()) {
    const std::size_t idx = stack.back();
    stack.pop_back();
    const int y = static_cast<int>(idx) / kEdge;
    const int x = static_cast<int>(idx) % kEdge;
    for (int oy = -1; oy <= 1; ++oy) {
      for (int ox = -1; ox <= 1; ++ox) {
        const int ny = y + oy, nx = x + ox;
        if (ny < 0 || ny >= kEdge || nx < 0 || nx >= kEdge) continue;
        const std::size_t n = static_cast<std::size_t>(ny) * kEdge + nx;
        if (state[n] == 1) {
          state[n] = 2;
          stack.push_back(n);
        }
      }
    }
  }

  for (std::size_t i = 0; i < state.size(); ++i) {
    if (state[i] == 2) sig.bytes[i / 8] |= static_cast<std::uint8_t>(0x80u >> (i % 8));
  }
  return sig;
}

EdgeSignature edge_signature(std::span<const float> image, const ImageGeometry& geometry,
                             const CannyParams& params) {
  std::vector<double> img(image.begin(), image.end());
  return edge_signature(std::span<const double>(img), geometry, params);
}

double mismatch_ratio(const EdgeSignature& a, const EdgeSignature& b) {
  int xor_bits = 0;
  for (std::size_t i = 0; i < a.bytes.size(); ++i) {
    xor_bits += std::popcount(static_cast<unsigned>(a.bytes[i] ^ b.bytes[i]));
  }
  const int total = a.popcount() + b.popcount();
  if (total == 0) return 0.0;
  return static_cast<double>(xor_bits) / static_cast<double>(total);
}

Screener::Screener(ScreenerConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.fifo_depth == 0) throw std::invalid_argument("Screener: fifo_depth must be > 0");
  if (cfg_.theta <= 0.0 || cfg_.theta >= 1.0) {
    throw std::invalid_argument("Screener: theta must be in (0, 1)");
  }
}

ScreenVerdict Screener::push(std::span<const float> query) {
  const EdgeSignature sig = edge_signature(query, cfg_.geometry, cfg_.canny);
  return push_signature(sig, query);
}

ScreenVerdict Screener::push(std::span<const double> query) {
  std::vector<float> q(query.begin(), query.end());
  return push(std::span<const float>(q));
}

ScreenVerdict Screener::push_signature(const EdgeSignature& sig, std::span<const float> query) {
  ScreenVerdict verdict;
  int match_cid = -1;
  double best = 2.0;  // above any reachable ratio
  // Newest entries first so equal ratios resolve to the most recent match.
  for (auto it = fifo_.rbegin(); it != fifo_.rend(); ++it) {
    const double r = mismatch_ratio(sig, it->sig);
    if (r < best) {
      best = r;
      if (r < cfg_.theta) match_cid = it->cid;
    }
  }
  if (!fifo_.empty()) verdict.best_ratio = best;

  int cid;
  if (match_cid >= 0) {
    verdict.suspicious = true;
    verdict.channel_id = match_cid;
    cid = match_cid;
    auto [it, inserted] = channels_.try_emplace(cid, cfg_.ds_window);
    verdict.emitted_ds = it->second.push(query);
    ++channel_counts_[cid];
  } else {
    cid = next_cid_++;  // reserved lazily; becomes active only when matched
  }

  fifo_.push_back(Entry{sig, cid});
  if (fifo_.size() > cfg_.fifo_depth) fifo_.erase(fifo_.begin());
  return verdict;
}

const DsMonitor* Screener::channel_monitor(int cid) const {
  const auto it = channels_.find(cid);
  return it == channels_.end() ? nullptr : &it->second;
}

}  // namespace gwad
