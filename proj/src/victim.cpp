#include "gwad/victim.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>

namespace gwad {

namespace {

Vec unit_direction(int dim, Rng& rng) {
  Vec v = sample_gaussian(dim, 0.0, 1.0, rng);
  const double n = norm(v);
  for (double& x : v) x /= n;
  return v;
}

void softmax_inplace(std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - m);
    sum += v;
  }
  for (double& v : z) v /= sum;
}

}  // namespace

SynthWorld::SynthWorld(int dim, int n_classes, const SynthParams& params, Rng& rng)
    : dim_(dim), n_classes_(n_classes), params_(params) {
  if (dim < 1) throw std::invalid_argument("SynthWorld: dim must be >= 1");
  if (n_classes < 2) throw std::invalid_argument("SynthWorld: need at least 2 classes");
  if (params.texture_rank < 0) throw std::invalid_argument("SynthWorld: negative texture rank");
  class_offsets_.reserve(static_cast<std::size_t>(n_classes) * dim);
  for (int c = 0; c < n_classes; ++c) {
    const Vec v = unit_direction(dim, rng);
    class_offsets_.insert(class_offsets_.end(), v.begin(), v.end());
  }
  texture_.reserve(static_cast<std::size_t>(params.texture_rank) * dim);
  for (int k = 0; k < params.texture_rank; ++k) {
    const Vec v = unit_direction(dim, rng);
    texture_.insert(texture_.end(), v.begin(), v.end());
  }
}

Vec SynthWorld::class_mean(int cls) const {
  if (cls < 0 || cls >= n_classes_) throw std::invalid_argument("SynthWorld: bad class id");
  Vec img(static_cast<std::size_t>(dim_), 0.5);
  const double* off = class_offsets_.data() + static_cast<std::size_t>(cls) * dim_;
  for (int i = 0; i < dim_; ++i) img[i] += params_.offset_amp * off[i];
  return img;
}

Vec SynthWorld::sample_image(int cls, Rng& rng) const {
  Vec img = class_mean(cls);
  for (int k = 0; k < params_.texture_rank; ++k) {
    const double a = params_.texture_amp * rng.next_gaussian();
    const double* phi = texture_.data() + static_cast<std::size_t>(k) * dim_;
    for (int i = 0; i < dim_; ++i) img[i] += a * phi[i];
  }
  if (params_.pixel_noise > 0.0) {
    for (int i = 0; i < dim_; ++i) img[i] += params_.pixel_noise * rng.next_gaussian();
  }
  for (double& v : img) v = std::clamp(v, 0.0, 1.0);
  return img;
}

void Dataset::append(std::span<const double> image, int label) {
  if (dim == 0) dim = static_cast<std::uint32_t>(image.size());
  if (image.size() != dim) throw std::invalid_argument("Dataset: dimension mismatch");
  for (double v : image) x.push_back(static_cast<float>(v));
  y.push_back(label);
}

Dataset sample_dataset(const SynthWorld& world, int n_per_class, Rng& rng) {
  if (n_per_class < 1) throw std::invalid_argument("sample_dataset: n_per_class must be >= 1");
  Dataset ds;
  ds.dim = static_cast<std::uint32_t>(world.dim());
  ds.n_classes = static_cast<std::uint32_t>(world.n_classes());
  const std::size_t total = static_cast<std::size_t>(n_per_class) * world.n_classes();
  ds.x.reserve(total * ds.dim);
  ds.y.reserve(total);
  for (int c = 0; c < world.n_classes(); ++c) {
    for (int i = 0; i < n_per_class; ++i) ds.append(world.sample_image(c, rng), c);
  }
  // Deterministic shuffle so contiguous splits are class-balanced on average.
  std::vector<std::size_t> perm(total);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = total; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
    std::swap(perm[i - 1], perm[j]);
  }
  Dataset out;
  out.dim = ds.dim;
  out.n_classes = ds.n_classes;
  out.x.resize(ds.x.size());
  out.y.resize(ds.y.size());
  for (std::size_t i = 0; i < total; ++i) {
    std::memcpy(out.x.data() + i * ds.dim, ds.x.data() + perm[i] * ds.dim,
                ds.dim * sizeof(float));
    out.y[i] = ds.y[perm[i]];
  }
  return out;
}

Dataset make_synth_dataset(int n_per_class, int d, int n_classes, Rng& rng,
                           const SynthParams& params) {
  if (d < 512) throw std::invalid_argument("make_synth_dataset: d must be >= 512");
  if (n_classes < 2) throw std::invalid_argument("make_synth_dataset: n_classes must be >= 2");
  Rng world_rng = rng.split();
  const SynthWorld world(d, n_classes, params, world_rng);
  return sample_dataset(world, n_per_class, rng);
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double train_frac, Rng& rng) {
  if (train_frac <= 0.0 || train_frac >= 1.0) {
    throw std::invalid_argument("split_dataset: train_frac must be in (0, 1)");
  }
  std::vector<std::size_t> perm(ds.size());
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = perm.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
    std::swap(perm[i - 1], perm[j]);
  }
  const std::size_t n_train = static_cast<std::size_t>(train_frac * ds.size());
  Dataset train, test;
  train.dim = test.dim = ds.dim;
  train.n_classes = test.n_classes = ds.n_classes;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    const auto s = ds.sample(perm[i]);
    Dataset& target = (i < n_train) ? train : test;
    target.x.insert(target.x.end(), s.begin(), s.end());
    target.y.push_back(ds.label(perm[i]));
  }
  return {std::move(train), std::move(test)};
}

VictimModel::VictimModel(std::uint32_t input_dim, std::uint32_t n_classes)
    : input_dim_(input_dim),
      n_classes_(n_classes),
      w_(static_cast<std::size_t>(input_dim) * n_classes, 0.0),
      b_(n_classes, 0.0) {}

std::vector<double> VictimModel::logits(std::span<const double> x) const {
  if (x.size() != input_dim_) throw std::invalid_argument("VictimModel: dimension mismatch");
  std::vector<double> z(b_);
  for (std::uint32_t c = 0; c < n_classes_; ++c) {
    const double* wc = w_.data() + static_cast<std::size_t>(c) * input_dim_;
    double acc = 0.0;
    for (std::uint32_t i = 0; i < input_dim_; ++i) acc += wc[i] * x[i];
    z[c] += acc;
  }
  return z;
}

std::vector<double> VictimModel::predict_soft(std::span<const double> x) const {
  std::vector<double> z = logits(x);
  softmax_inplace(z);
  return z;
}

std::vector<double> VictimModel::predict_soft(std::span<const float> x) const {
  Vec xd(x.begin(), x.end());
  return predict_soft(std::span<const double>(xd));
}

int VictimModel::predict_hard(std::span<const double> x) const {
  const std::vector<double> z = logits(x);
  return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
}

int VictimModel::predict_hard(std::span<const float> x) const {
  Vec xd(x.begin(), x.end());
  return predict_hard(std::span<const double>(xd));
}

std::vector<double> VictimModel::oracle_soft(std::span<const double> x) {
  ++query_count_;
  return predict_soft(x);
}

int VictimModel::oracle_hard(std::span<const double> x) {
  ++query_count_;
  return predict_hard(x);
}

VictimModel train_victim(const Dataset& train, int epochs, Rng& rng, double lr,
                         int batch_size) {
  if (train.empty()) throw std::invalid_argument("train_victim: empty dataset");
  if (epochs < 0) throw std::invalid_argument("train_victim: negative epochs");
  if (batch_size < 1) throw std::invalid_argument("train_victim: batch_size must be >= 1");
  VictimModel model(train.dim, train.n_classes);
  const std::uint32_t d = train.dim;
  const std::uint32_t k = train.n_classes;

  // SGD runs on mean-centered inputs (the constant image background would
  // otherwise dominate the curvature); the centering is folded back into
  // the bias afterwards, so the stored model is a plain affine softmax.
  Vec center(d, 0.0);
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto xs = train.sample(i);
    for (std::uint32_t q = 0; q < d; ++q) center[q] += xs[q];
  }
  for (double& v : center) v /= static_cast<double>(train.size());

  std::vector<double>& w = model.weights();
  std::vector<double>& b = model.biases();
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Vec x(d);
  std::vector<double> z(k);

  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
      std::swap(order[i - 1], order[j]);
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(batch_size));
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      for (std::size_t pos = start; pos < end; ++pos) {
        const auto xs = train.sample(order[pos]);
        for (std::uint32_t q = 0; q < d; ++q) x[q] = xs[q] - center[q];
        for (std::uint32_t c = 0; c < k; ++c) {
          const double* wc = w.data() + static_cast<std::size_t>(c) * d;
          double acc = b[c];
          for (std::uint32_t q = 0; q < d; ++q) acc += wc[q] * x[q];
          z[c] = acc;
        }
        softmax_inplace(z);
        const int label = train.label(order[pos]);
        epoch_loss += -std::log(std::max(z[static_cast<std::size_t>(label)], 1e-300));
        for (std::uint32_t c = 0; c < k; ++c) {
          const double g = (z[c] - (static_cast<int>(c) == label ? 1.0 : 0.0)) * inv_batch;
          if (g == 0.0) continue;
          double* wc = w.data() + static_cast<std::size_t>(c) * d;
          const double step = lr * g;
          for (std::uint32_t q = 0; q < d; ++q) wc[q] -= step * x[q];
          b[c] -= step;
        }
      }
    }
    if (!std::isfinite(epoch_loss)) {
      throw std::runtime_error("train_victim: non-finite loss at epoch " +
                               std::to_string(epoch));
    }
  }
  // Fold the centering into the bias: W(x - c) + b == Wx + (b - Wc).
  for (std::uint32_t c = 0; c < k; ++c) {
    const double* wc = w.data() + static_cast<std::size_t>(c) * d;
    double shift = 0.0;
    for (std::uint32_t q = 0; q < d; ++q) shift += wc[q] * center[q];
    b[c] -= shift;
  }
  return model;
}

double victim_accuracy(const VictimModel& model, const Dataset& ds) {
  if (ds.empty()) throw std::invalid_argument("victim_accuracy: empty dataset");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (model.predict_hard(ds.sample(i)) == ds.label(i)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

namespace {

constexpr char kWeightsMagic[4] = {'G', 'W', 'N', 'N'};
constexpr std::uint32_t kWeightsVersion = 1;

}  // namespace

void save_victim(const VictimModel& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string());
  os.write(kWeightsMagic, 4);
  const std::uint32_t version = kWeightsVersion, n_layers = 1;
  const std::uint32_t rows = model.input_dim(), cols = model.n_classes();
  os.write(reinterpret_cast<const char*>(&version), 4);
  os.write(reinterpret_cast<const char*>(&n_layers), 4);
  os.write(reinterpret_cast<const char*>(&rows), 4);
  os.write(reinterpret_cast<const char*>(&cols), 4);
  // Stored [rows][cols] = [input][class]; the model keeps [class][input].
  std::vector<float> buf(static_cast<std::size_t>(rows) * cols);
  for (std::uint32_t r = 0; r < rows; ++r) {
    for (std::uint32_t c = 0; c < cols; ++c) {
      buf[static_cast<std::size_t>(r) * cols + c] =
          static_cast<float>(model.weights()[static_cast<std::size_t>(c) * rows + r]);
    }
  }
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
  std::vector<float> bias(cols);
  for (std::uint32_t c = 0; c < cols; ++c) bias[c] = static_cast<float>(model.biases()[c]);
  os.write(reinterpret_cast<const char*>(bias.data()),
           static_cast<std::streamsize>(bias.size() * sizeof(float)));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

VictimModel load_victim(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kWeightsMagic, 4) != 0) {
    throw std::runtime_error("bad weights magic in " + path.string());
  }
  std::uint32_t version = 0, n_layers = 0, rows = 0, cols = 0;
  is.read(reinterpret_cast<char*>(&version), 4);
  is.read(reinterpret_cast<char*>(&n_layers), 4);
  if (!is || version != kWeightsVersion || n_layers != 1) {
    throw std::runtime_error("unsupported victim weights file: " + path.string());
  }
  is.read(reinterpret_cast<char*>(&rows), 4);
  is.read(reinterpret_cast<char*>(&cols), 4);
  if (!is || rows == 0 || cols == 0) throw std::runtime_error("bad victim weights header");
  std::vector<float> buf(static_cast<std::size_t>(rows) * cols);
  is.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  std::vector<float> bias(cols);
  is.read(reinterpret_cast<char*>(bias.data()),
          static_cast<std::streamsize>(bias.size() * sizeof(float)));
  if (!is) throw std::runtime_error("victim weights file truncated: " + path.string());
  VictimModel model(rows, cols);
  for (std::uint32_t r = 0; r < rows; ++r) {
    for (std::uint32_t c = 0; c < cols; ++c) {
      model.weights()[static_cast<std::size_t>(c) * rows + r] =
          buf[static_cast<std::size_t>(r) * cols + c];
    }
  }
  for (std::uint32_t c = 0; c < cols; ++c) model.biases()[c] = bias[c];
  return model;
}

}  // namespace gwad
