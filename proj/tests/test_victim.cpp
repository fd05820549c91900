#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "gwad/victim.hpp"

using namespace gwad;
namespace fs = std::filesystem;

namespace {

// Independent linear probe: nearest class centroid, fitted on train.
double nearest_centroid_accuracy(const Dataset& train, const Dataset& test) {
  const std::size_t d = train.dim;
  std::vector<Vec> centroids(train.n_classes, Vec(d, 0.0));
  std::vector<std::size_t> counts(train.n_classes, 0);
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto s = train.sample(i);
    Vec& c = centroids[static_cast<std::size_t>(train.label(i))];
    for (std::size_t j = 0; j < d; ++j) c[j] += s[j];
    counts[static_cast<std::size_t>(train.label(i))]++;
  }
  for (std::size_t k = 0; k < centroids.size(); ++k) {
    for (double& v : centroids[k]) v /= static_cast<double>(counts[k]);
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto s = test.sample(i);
    int best = -1;
    double best_dist = 0.0;
    for (std::size_t k = 0; k < centroids.size(); ++k) {
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = s[j] - centroids[k][j];
        dist += diff * diff;
      }
      if (best < 0 || dist < best_dist) {
        best = static_cast<int>(k);
        best_dist = dist;
      }
    }
    if (best == test.label(i)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

const Dataset& default_dataset() {
  static Dataset ds = [] {
    Rng rng(42);
    return make_synth_dataset(100, 3072, 10, rng);
  }();
  return ds;
}

}  // namespace

TEST_SUITE("victim") {

TEST_CASE("synthetic dataset: balanced labels, bounded pixels") {
  const Dataset& ds = default_dataset();
  CHECK(ds.size() == 1000);
  CHECK(ds.dim == 3072);
  std::map<int, int> counts;
  for (const int y : ds.y) counts[y]++;
  CHECK(counts.size() == 10);
  for (const auto& [label, n] : counts) CHECK(n == 100);
  for (const float v : ds.x) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("synthetic dataset: seed determinism") {
  Rng a(7), b(7);
  const Dataset da = make_synth_dataset(20, 512, 3, a);
  const Dataset db = make_synth_dataset(20, 512, 3, b);
  CHECK(da.x == db.x);
  CHECK(da.y == db.y);
}

TEST_CASE("synthetic dataset: argument errors") {
  Rng rng(1);
  CHECK_THROWS_AS((void)make_synth_dataset(10, 128, 4, rng), std::invalid_argument);
  CHECK_THROWS_AS((void)make_synth_dataset(10, 512, 1, rng), std::invalid_argument);
}

TEST_CASE("well-separated classes admit a >=90% linear probe") {
  // Well-separated configuration: per-direction spread is dominated by the
  // texture projection; the class offsets stay several times larger.
  SynthParams params;
  params.offset_amp = 0.4;
  params.texture_amp = 0.5;
  params.pixel_noise = 0.01;
  Rng rng(11);
  const Dataset ds = make_synth_dataset(60, 3072, 10, rng, params);
  Rng split_rng(12);
  const auto [train, test] = split_dataset(ds, 0.8, split_rng);

  // Verify the separation premise: pairwise class-mean distance at least
  // 4x the within-class spread along a coordinate direction.
  const double sigma_blob = std::sqrt(
      params.texture_amp * params.texture_amp * params.texture_rank / 3072.0 +
      params.pixel_noise * params.pixel_noise);
  std::vector<Vec> centroids(10, Vec(3072, 0.0));
  std::vector<int> counts(10, 0);
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto s = train.sample(i);
    for (std::size_t j = 0; j < 3072; ++j) centroids[train.label(i)][j] += s[j];
    counts[train.label(i)]++;
  }
  for (int k = 0; k < 10; ++k) {
    for (double& v : centroids[k]) v /= counts[k];
  }
  for (int a = 0; a < 10; ++a) {
    for (int b = a + 1; b < 10; ++b) {
      CHECK(distance(centroids[a], centroids[b]) >= 4.0 * sigma_blob);
    }
  }
  CHECK(nearest_centroid_accuracy(train, test) >= 0.90);
}

TEST_CASE("trained victim reaches 85% held-out accuracy") {
  Rng split_rng(13);
  const auto [train, test] = split_dataset(default_dataset(), 0.8, split_rng);
  Rng train_rng(14);
  const VictimModel model = train_victim(train, 40, train_rng);
  CHECK(victim_accuracy(model, test) >= 0.85);
}

TEST_CASE("zero epochs stays at chance level") {
  Rng split_rng(15);
  const auto [train, test] = split_dataset(default_dataset(), 0.8, split_rng);
  Rng train_rng(16);
  const VictimModel model = train_victim(train, 0, train_rng);
  const double acc = victim_accuracy(model, test);
  CHECK(std::abs(acc - 0.1) <= 0.05);
}

TEST_CASE("fixed seed reproduces identical weights") {
  Rng split_rng(17);
  const auto [train, test] = split_dataset(default_dataset(), 0.8, split_rng);
  Rng a(18), b(18);
  const VictimModel ma = train_victim(train, 5, a);
  const VictimModel mb = train_victim(train, 5, b);
  CHECK(ma.weights() == mb.weights());
  CHECK(ma.biases() == mb.biases());
}

TEST_CASE("oracle: softmax normalization, hard consistency, counting") {
  Rng rng(19);
  const Dataset& ds = default_dataset();
  Rng split_rng(20);
  const auto [train, test] = split_dataset(ds, 0.8, split_rng);
  Rng train_rng(21);
  VictimModel model = train_victim(train, 10, train_rng);

  CHECK(model.query_count() == 0);
  for (int i = 0; i < 25; ++i) {
    const Vec x = sample_gaussian(3072, 0.5, 0.1, rng);
    const std::vector<double> p = model.oracle_soft(x);
    double sum = 0.0;
    int argmax = 0;
    for (std::size_t c = 0; c < p.size(); ++c) {
      sum += p[c];
      if (p[c] > p[static_cast<std::size_t>(argmax)]) argmax = static_cast<int>(c);
    }
    CHECK(std::abs(sum - 1.0) <= 1e-6);
    CHECK(model.oracle_hard(x) == argmax);
  }
  CHECK(model.query_count() == 50);  // 25 soft + 25 hard
  CHECK_THROWS_AS((void)model.oracle_soft(Vec(16, 0.5)), std::invalid_argument);
}

TEST_CASE("victim weights survive a save/load round trip") {
  Rng split_rng(22);
  const auto [train, test] = split_dataset(default_dataset(), 0.8, split_rng);
  Rng train_rng(23);
  const VictimModel model = train_victim(train, 20, train_rng);
  const fs::path path = fs::temp_directory_path() / "gwad_victim_roundtrip.gwnn";
  save_victim(model, path);
  const VictimModel loaded = load_victim(path);
  CHECK(loaded.input_dim() == model.input_dim());
  CHECK(loaded.n_classes() == model.n_classes());
  // Predictions agree after the float32 round trip.
  std::size_t agree = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (loaded.predict_hard(test.sample(i)) == model.predict_hard(test.sample(i))) ++agree;
  }
  CHECK(agree == test.size());
  fs::remove(path);
}

}  // TEST_SUITE
