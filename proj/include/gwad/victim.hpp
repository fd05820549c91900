#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "gwad/numkit.hpp"

namespace gwad {

/// Shape parameters of the synthetic image distribution.
///
/// Images are class-conditional Gaussian blobs in [0,1]^d with a shared
/// low-rank "texture" component: every image is
///   0.5 + offset_amp * v_class + sum_k a_k phi_k + pixel noise,
/// where the v_class and phi_k are fixed random unit directions and the
/// a_k ~ N(0, texture_amp^2) vary per image. The texture carries most of
/// the between-image variance in a small subspace, which gives benign
/// query streams the broad delta-similarity spread of natural images
/// while per-pixel noise stays too small to disturb class separability.
struct SynthParams {
  double offset_amp = 0.4;    // class mean offset magnitude
  int texture_rank = 12;      // number of shared texture directions
  double texture_amp = 1.2;   // std of per-image texture coefficients
  double pixel_noise = 0.01;  // i.i.d. per-pixel noise std
};

/// Fixed class means and texture basis; one world per experiment so the
/// victim's training data and the benign query pool share a distribution.
class SynthWorld {
 public:
  SynthWorld(int dim, int n_classes, const SynthParams& params, Rng& rng);

  /// One image of the given class, clipped to [0,1]^d.
  Vec sample_image(int cls, Rng& rng) const;

  int dim() const { return dim_; }
  int n_classes() const { return n_classes_; }
  const SynthParams& params() const { return params_; }

  /// Mean image of a class (no texture, no noise).
  Vec class_mean(int cls) const;

 private:
  int dim_;
  int n_classes_;
  SynthParams params_;
  std::vector<double> class_offsets_;  // n_classes * dim, unit directions
  std::vector<double> texture_;        // texture_rank * dim, unit directions
};

/// Labeled sample set; images stored as float32.
struct Dataset {
  std::uint32_t dim = 0;
  std::uint32_t n_classes = 0;
  std::vector<float> x;  // size() * dim
  std::vector<int> y;

  std::size_t size() const { return y.size(); }
  bool empty() const { return y.empty(); }
  std::span<const float> sample(std::size_t i) const { return {x.data() + i * dim, dim}; }
  int label(std::size_t i) const { return y[i]; }
  void append(std::span<const double> image, int label);
};

Dataset sample_dataset(const SynthWorld& world, int n_per_class, Rng& rng);

/// Convenience one-shot builder: derives a fresh world from rng, then
/// samples n_per_class images per class (shuffled). d >= 512 keeps the
/// high-dimensional concentration regime; n_classes >= 2.
Dataset make_synth_dataset(int n_per_class, int d, int n_classes, Rng& rng,
                           const SynthParams& params = {});

/// Deterministic shuffled split into (train, test).
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double train_frac, Rng& rng);

/// Linear softmax classifier over flattened images. Oracle calls bump the
/// query counter by exactly one; predict_* are defense-side peeks that do
/// not count.
class VictimModel {
 public:
  VictimModel() = default;
  VictimModel(std::uint32_t input_dim, std::uint32_t n_classes);

  std::vector<double> predict_soft(std::span<const double> x) const;
  std::vector<double> predict_soft(std::span<const float> x) const;
  int predict_hard(std::span<const double> x) const;
  int predict_hard(std::span<const float> x) const;

  std::vector<double> oracle_soft(std::span<const double> x);
  int oracle_hard(std::span<const double> x);

  std::uint64_t query_count() const { return query_count_; }
  std::uint32_t input_dim() const { return input_dim_; }
  std::uint32_t n_classes() const { return n_classes_; }

  // Row-major [n_classes][input_dim] weights plus per-class bias.
  std::vector<double>& weights() { return w_; }
  const std::vector<double>& weights() const { return w_; }
  std::vector<double>& biases() { return b_; }
  const std::vector<double>& biases() const { return b_; }

 private:
  std::vector<double> logits(std::span<const double> x) const;

  std::uint32_t input_dim_ = 0;
  std::uint32_t n_classes_ = 0;
  std::vector<double> w_;
  std::vector<double> b_;
  std::uint64_t query_count_ = 0;
};

/// Minibatch SGD on the multinomial cross-entropy. Weights start at zero,
/// so epochs == 0 returns the chance-level model. Throws std::runtime_error
/// if the loss goes non-finite.
VictimModel train_victim(const Dataset& train, int epochs, Rng& rng, double lr = 0.2,
                         int batch_size = 32);

double victim_accuracy(const VictimModel& model, const Dataset& ds);

void save_victim(const VictimModel& model, const std::filesystem::path& path);
VictimModel load_victim(const std::filesystem::path& path);

}  // namespace gwad
