#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <vector>

#include "gwad/ds_monitor.hpp"
#include "gwad/numkit.hpp"
#include "gwad/trace.hpp"

namespace gwad {

/// Class ids: 0 = benign, 1..6 = nes, hsja, simba, sign-opt, sign-flip, ba.
inline constexpr int kBenignClass = 0;
inline constexpr int kNumDetectorClasses = 7;
const char* detector_class_name(int class_id);

/// Fully-connected stack 201 -> 512 -> 512 -> 256 -> 128 -> 64 -> 7,
/// ReLU between layers, log-softmax output.
inline constexpr std::array<int, 7> kDetectorLayerDims = {201, 512, 512, 256, 128, 64, 7};

/// Parameters are held in float32, which is also the on-disk precision, so
/// save-then-load round-trips bitwise. All arithmetic runs in double.
struct MlpWeights {
  struct Layer {
    std::uint32_t in = 0;
    std::uint32_t out = 0;
    std::vector<float> w;  // row-major [in][out]
    std::vector<float> b;  // [out]
  };
  std::vector<Layer> layers;

  std::size_t parameter_count() const;
  bool same_shape(const MlpWeights& other) const;
};

/// Fan-in-scaled uniform initialization (limit sqrt(6 / fan_in)), biases
/// zero.
MlpWeights init_detector(Rng& rng);
MlpWeights init_mlp(std::span<const int> dims, Rng& rng);

/// Forward pass; returns log-probabilities (exp sums to 1).
std::vector<double> mlp_forward(const MlpWeights& w, std::span<const double> input);

struct Verdict {
  int class_id = 0;
  std::array<double, kNumDetectorClasses> log_probs{};
  bool is_attack = false;
};

/// Argmax over log-probs, ties broken toward the lowest class id.
Verdict detect(const MlpWeights& w, const HodsFeature& feature);

struct HodsDataset {
  std::vector<HodsFeature> features;
  std::vector<int> labels;
  int skipped_traces = 0;  // traces too short to fill one window

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
};

/// Synthetic benign HoDS features: `window` DS draws per feature from each
/// of the given (mu, sigma) pairs, clipped to [-1, 1], then histogrammed
/// and min-max normalized. The default distributions follow the empirical
/// benign DS fit: N(0, 0.25), N(-0.5, 0.25), N(0, 0.14), N(-0.5, 0.14)
/// (variances).
std::vector<HodsFeature> synth_benign_hods(
    std::span<const std::pair<double, double>> mu_sigma, int n_per_dist, int window, Rng& rng);
std::vector<HodsFeature> synth_benign_hods(int n_per_dist, int window, Rng& rng);

/// Replays every trace through a fresh monitor and extracts HoDS at
/// checkpoints_per_trace random full-window positions. Traces too short to
/// fill the window once are skipped and counted.
HodsDataset build_dataset(const std::map<int, std::vector<const QueryTrace*>>& traces_by_class,
                          int checkpoints_per_trace, int window, Rng& rng);

struct TrainConfig {
  int epochs = 100;
  int batch_size = 128;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 0;
};

struct TrainResult {
  MlpWeights weights;
  std::vector<double> loss_curve;  // mean NLL per epoch
};

/// Minibatch SGD with momentum on the NLL; per-epoch shuffling is seeded.
/// Throws std::runtime_error (with the epoch index) on a non-finite loss.
TrainResult train_detector(const HodsDataset& ds, const TrainConfig& cfg);

struct EvalResult {
  std::array<std::array<std::uint64_t, kNumDetectorClasses>, kNumDetectorClasses>
      confusion{};               // [label][predicted]
  double recognition = 0.0;      // fraction with predicted == label
  double detection = 0.0;        // attack-labeled samples flagged as attack
  double fpr = 0.0;              // benign-labeled samples flagged as attack
  std::array<double, kNumDetectorClasses> per_class_recognition{};
  std::array<double, kNumDetectorClasses> per_class_detection{};
  std::array<std::uint64_t, kNumDetectorClasses> per_class_count{};
};

EvalResult evaluate(const MlpWeights& w, const HodsDataset& ds);

/// Batch NLL and analytic gradients, shared by training and the gradient
/// checks. Gradients are ordered like the layers (weights then bias each).
struct LayerGrads {
  std::vector<double> w;
  std::vector<double> b;
};
double nll_loss(const MlpWeights& w, std::span<const HodsFeature> batch,
                std::span<const int> labels);
double nll_and_gradients(const MlpWeights& w, std::span<const HodsFeature> batch,
                         std::span<const int> labels, std::vector<LayerGrads>& grads);

/// Weights file, little-endian: magic "GWNN", u32 version = 1, u32 n_layers,
/// per layer u32 rows, u32 cols, rows*cols f32 weights, cols f32 biases.
void save_weights(const MlpWeights& w, const std::filesystem::path& path);
MlpWeights load_weights(const std::filesystem::path& path);

/// CSV with 201 feature columns plus a trailing label column.
void write_hods_csv(const HodsDataset& ds, const std::filesystem::path& path);
HodsDataset read_hods_csv(const std::filesystem::path& path);

}  // namespace gwad
