#include "gwad/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace gwad {

const char* detector_class_name(int class_id) {
  switch (class_id) {
    case 0: return "benign";
    case 1: return "nes";
    case 2: return "hsja";
    case 3: return "simba";
    case 4: return "sign-opt";
    case 5: return "sign-flip";
    case 6: return "ba";
  }
  return "unknown";
}

std::size_t MlpWeights::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.w.size() + l.b.size();
  return n;
}

bool MlpWeights::same_shape(const MlpWeights& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].in != other.layers[i].in || layers[i].out != other.layers[i].out) return false;
  }
  return true;
}

MlpWeights init_mlp(std::span<const int> dims, Rng& rng) {
  if (dims.size() < 2) throw std::invalid_argument("init_mlp: need at least two dims");
  MlpWeights w;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    MlpWeights::Layer layer;
    layer.in = static_cast<std::uint32_t>(dims[l]);
    layer.out = static_cast<std::uint32_t>(dims[l + 1]);
    layer.w.resize(static_cast<std::size_t>(layer.in) * layer.out);
    layer.b.assign(layer.out, 0.0f);
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.in));
    for (float& v : layer.w) {
      v = static_cast<float>((2.0 * rng.next_unit() - 1.0) * limit);
    }
    w.layers.push_back(std::move(layer));
  }
  return w;
}

MlpWeights init_detector(Rng& rng) {
  return init_mlp(std::span<const int>(kDetectorLayerDims.data(), kDetectorLayerDims.size()),
                  rng);
}

namespace {

// out[m x n] = act[m x k] * W[k x n] + bias. Zero activations (ReLU output)
// skip their whole row of W.
void forward_batch_layer(const double* act, std::size_t m, const MlpWeights::Layer& L,
                         double* out) {
  const std::size_t k = L.in, n = L.out;
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out + i * n;
    for (std::size_t j = 0; j < n; ++j) row[j] = L.b[j];
    const double* a = act + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p];
      if (av == 0.0) continue;
      const float* wrow = L.w.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * static_cast<double>(wrow[j]);
    }
  }
}

void relu_inplace(double* z, std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) {
    if (z[i] < 0.0) z[i] = 0.0;
  }
}

// Log-softmax over each row of z[m x n]; returns mean NLL of the labels.
double log_softmax_nll(double* z, std::size_t m, std::size_t n, std::span<const int> labels) {
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double* row = z + i * n;
    const double mx = *std::max_element(row, row + n);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += std::exp(row[j] - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t j = 0; j < n; ++j) row[j] -= lse;
    loss -= row[static_cast<std::size_t>(labels[i])];
  }
  return loss / static_cast<double>(m);
}

struct Workspace {
  // acts[0] is the input batch; acts[l+1] the output of layer l (ReLU
  // applied on hidden layers, log-probs on the last).
  std::vector<std::vector<double>> acts;
  std::vector<std::vector<double>> deltas;

  void prepare(const MlpWeights& w, std::size_t m) {
    acts.resize(w.layers.size() + 1);
    deltas.resize(w.layers.size());
    acts[0].resize(m * w.layers.front().in);
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
      acts[l + 1].resize(m * w.layers[l].out);
      deltas[l].resize(m * w.layers[l].out);
    }
  }
};

void load_batch(std::span<const HodsFeature> batch, std::span<const int> labels,
                const MlpWeights& w, Workspace& ws) {
  const std::size_t m = batch.size();
  const std::size_t in_dim = w.layers.front().in;
  if (labels.size() != m) throw std::invalid_argument("batch/labels size mismatch");
  ws.prepare(w, m);
  for (std::size_t i = 0; i < m; ++i) {
    if (batch[i].bins.size() != in_dim) {
      throw std::invalid_argument("feature length does not match detector input");
    }
    std::memcpy(ws.acts[0].data() + i * in_dim, batch[i].bins.data(), in_dim * sizeof(double));
  }
}

// Forward through all layers; leaves log-probs in acts.back() and returns
// the mean NLL.
double forward_batch(const MlpWeights& w, std::size_t m, std::span<const int> labels,
                     Workspace& ws) {
  const std::size_t n_layers = w.layers.size();
  for (std::size_t l = 0; l < n_layers; ++l) {
    forward_batch_layer(ws.acts[l].data(), m, w.layers[l], ws.acts[l + 1].data());
    if (l + 1 < n_layers) relu_inplace(ws.acts[l + 1].data(), ws.acts[l + 1].size());
  }
  return log_softmax_nll(ws.acts.back().data(), m, w.layers.back().out, labels);
}

// Backward pass; fills grads (allocated by caller to layer shapes).
void backward_batch(const MlpWeights& w, std::size_t m, std::span<const int> labels,
                    Workspace& ws, std::vector<LayerGrads>& grads) {
  const std::size_t n_layers = w.layers.size();
  const std::size_t out_dim = w.layers.back().out;
  const double inv_m = 1.0 / static_cast<double>(m);

  // dL/dz on the output layer: softmax - onehot, averaged over the batch.
  {
    std::vector<double>& dz = ws.deltas.back();
    const std::vector<double>& lp = ws.acts.back();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < out_dim; ++j) {
        dz[i * out_dim + j] = std::exp(lp[i * out_dim + j]) * inv_m;
      }
      dz[i * out_dim + static_cast<std::size_t>(labels[i])] -= inv_m;
    }
  }

  for (std::size_t l = n_layers; l-- > 0;) {
    const auto& layer = w.layers[l];
    const std::size_t k = layer.in, n = layer.out;
    const std::vector<double>& a_prev = ws.acts[l];
    std::vector<double>& dz = ws.deltas[l];
    LayerGrads& g = grads[l];
    std::fill(g.w.begin(), g.w.end(), 0.0);
    std::fill(g.b.begin(), g.b.end(), 0.0);

    for (std::size_t i = 0; i < m; ++i) {
      const double* a = a_prev.data() + i * k;
      const double* dzi = dz.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) g.b[j] += dzi[j];
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a[p];
        if (av == 0.0) continue;
        double* grow = g.w.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) grow[j] += av * dzi[j];
      }
    }

    if (l == 0) break;
    // d(prev activation) = dz * W^T, gated by the ReLU mask.
    std::vector<double>& dprev = ws.deltas[l - 1];
    for (std::size_t i = 0; i < m; ++i) {
      const double* dzi = dz.data() + i * n;
      const double* a = a_prev.data() + i * k;
      double* dp = dprev.data() + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        if (a[p] == 0.0) {  // ReLU gate
          dp[p] = 0.0;
          continue;
        }
        const float* wrow = layer.w.data() + p * n;
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += dzi[j] * static_cast<double>(wrow[j]);
        dp[p] = acc;
      }
    }
  }
}

std::vector<LayerGrads> make_grads(const MlpWeights& w) {
  std::vector<LayerGrads> grads(w.layers.size());
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    grads[l].w.assign(w.layers[l].w.size(), 0.0);
    grads[l].b.assign(w.layers[l].b.size(), 0.0);
  }
  return grads;
}

}  // namespace

std::vector<double> mlp_forward(const MlpWeights& w, std::span<const double> input) {
  if (w.layers.empty()) throw std::invalid_argument("mlp_forward: empty network");
  if (input.size() != w.layers.front().in) {
    throw std::invalid_argument("mlp_forward: input length mismatch");
  }
  std::vector<double> cur(input.begin(), input.end());
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const auto& layer = w.layers[l];
    std::vector<double> next(layer.out);
    forward_batch_layer(cur.data(), 1, layer, next.data());
    if (l + 1 < w.layers.size()) relu_inplace(next.data(), next.size());
    cur = std::move(next);
  }
  // Log-softmax.
  const double mx = *std::max_element(cur.begin(), cur.end());
  double sum = 0.0;
  for (double v : cur) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  for (double& v : cur) v -= lse;
  return cur;
}

Verdict detect(const MlpWeights& w, const HodsFeature& feature) {
  if (w.layers.empty() || w.layers.back().out != kNumDetectorClasses) {
    throw std::invalid_argument("detect: weights are not a detector network");
  }
  const std::vector<double> lp = mlp_forward(w, feature.bins);
  Verdict v;
  for (int c = 0; c < kNumDetectorClasses; ++c) v.log_probs[static_cast<std::size_t>(c)] = lp[c];
  v.class_id = 0;
  for (int c = 1; c < kNumDetectorClasses; ++c) {
    if (lp[c] > lp[v.class_id]) v.class_id = c;  // ties keep the lowest id
  }
  v.is_attack = (v.class_id != kBenignClass);
  return v;
}

std::vector<HodsFeature> synth_benign_hods(std::span<const std::pair<double, double>> mu_sigma,
                                           int n_per_dist, int window, Rng& rng) {
  if (n_per_dist < 1) throw std::invalid_argument("synth_benign_hods: n_per_dist >= 1");
  if (window < 1) throw std::invalid_argument("synth_benign_hods: window >= 1");
  std::vector<HodsFeature> out;
  out.reserve(mu_sigma.size() * static_cast<std::size_t>(n_per_dist));
  std::vector<double> values(static_cast<std::size_t>(window));
  for (const auto& [mu, sigma] : mu_sigma) {
    for (int i = 0; i < n_per_dist; ++i) {
      for (double& v : values) {
        v = std::clamp(mu + sigma * rng.next_gaussian(), -1.0, 1.0);
      }
      out.push_back(hods_from_values(values));
    }
  }
  return out;
}

std::vector<HodsFeature> synth_benign_hods(int n_per_dist, int window, Rng& rng) {
  static const std::array<std::pair<double, double>, 4> kBenignDists = {{
      {0.0, 0.5},        // N(0, 0.25)
      {-0.5, 0.5},       // N(-0.5, 0.25)
      {0.0, 0.3741657386773941},   // N(0, 0.14)
      {-0.5, 0.3741657386773941},  // N(-0.5, 0.14)
  }};
  return synth_benign_hods(std::span<const std::pair<double, double>>(kBenignDists), n_per_dist,
                           window, rng);
}

HodsDataset build_dataset(const std::map<int, std::vector<const QueryTrace*>>& traces_by_class,
                          int checkpoints_per_trace, int window, Rng& rng) {
  if (checkpoints_per_trace < 0) throw std::invalid_argument("build_dataset: checkpoints < 0");
  if (window < 1) throw std::invalid_argument("build_dataset: window >= 1");
  HodsDataset out;
  for (const auto& [cls, traces] : traces_by_class) {
    for (const QueryTrace* trace : traces) {
      DsMonitor monitor(static_cast<std::size_t>(window));
      std::vector<double> ds_seq;
      ds_seq.reserve(trace->size());
      for (std::size_t i = 0; i < trace->size(); ++i) {
        if (const auto ds = monitor.push(trace->query(i))) ds_seq.push_back(*ds);
      }
      if (ds_seq.size() < static_cast<std::size_t>(window)) {
        ++out.skipped_traces;
        continue;
      }
      const std::size_t n_positions = ds_seq.size() - static_cast<std::size_t>(window) + 1;
      for (int c = 0; c < checkpoints_per_trace; ++c) {
        const std::size_t start = static_cast<std::size_t>(rng.next_u64() % n_positions);
        out.features.push_back(hods_from_values(
            std::span<const double>(ds_seq.data() + start, static_cast<std::size_t>(window))));
        out.labels.push_back(cls);
      }
    }
  }
  return out;
}

double nll_loss(const MlpWeights& w, std::span<const HodsFeature> batch,
                std::span<const int> labels) {
  Workspace ws;
  load_batch(batch, labels, w, ws);
  return forward_batch(w, batch.size(), labels, ws);
}

double nll_and_gradients(const MlpWeights& w, std::span<const HodsFeature> batch,
                         std::span<const int> labels, std::vector<LayerGrads>& grads) {
  Workspace ws;
  load_batch(batch, labels, w, ws);
  const double loss = forward_batch(w, batch.size(), labels, ws);
  if (grads.size() != w.layers.size()) grads = make_grads(w);
  backward_batch(w, batch.size(), labels, ws, grads);
  return loss;
}

TrainResult train_detector(const HodsDataset& ds, const TrainConfig& cfg) {
  if (ds.empty()) throw std::invalid_argument("train_detector: empty dataset");
  if (cfg.epochs < 1) throw std::invalid_argument("train_detector: epochs >= 1");
  if (cfg.batch_size < 1) throw std::invalid_argument("train_detector: batch_size >= 1");
  if (cfg.learning_rate <= 0.0) throw std::invalid_argument("train_detector: lr > 0");
  {
    std::array<bool, kNumDetectorClasses> seen{};
    int distinct = 0;
    for (int y : ds.labels) {
      if (y < 0 || y >= kNumDetectorClasses) {
        throw std::invalid_argument("train_detector: label out of range");
      }
      if (!seen[static_cast<std::size_t>(y)]) {
        seen[static_cast<std::size_t>(y)] = true;
        ++distinct;
      }
    }
    if (distinct < 2) throw std::invalid_argument("train_detector: need at least 2 classes");
  }

  Rng rng(cfg.seed);
  MlpWeights w = init_detector(rng);
  std::vector<LayerGrads> grads = make_grads(w);
  std::vector<LayerGrads> velocity = make_grads(w);
  Workspace ws;

  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<HodsFeature> batch;
  std::vector<int> labels;

  TrainResult result;
  result.loss_curve.reserve(static_cast<std::size_t>(cfg.epochs));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
      std::swap(order[i - 1], order[j]);
    }
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      batch.clear();
      labels.clear();
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(ds.features[order[i]]);
        labels.push_back(ds.labels[order[i]]);
      }
      load_batch(batch, labels, w, ws);
      const double loss = forward_batch(w, batch.size(), labels, ws);
      backward_batch(w, batch.size(), labels, ws, grads);
      epoch_loss += loss;
      ++batches;
      if (!std::isfinite(loss)) {
        throw std::runtime_error("train_detector: non-finite loss at epoch " +
                                 std::to_string(epoch));
      }
      for (std::size_t l = 0; l < w.layers.size(); ++l) {
        auto& layer = w.layers[l];
        auto& vel = velocity[l];
        const auto& g = grads[l];
        for (std::size_t i = 0; i < layer.w.size(); ++i) {
          vel.w[i] = cfg.momentum * vel.w[i] + g.w[i];
          layer.w[i] = static_cast<float>(static_cast<double>(layer.w[i]) -
                                          cfg.learning_rate * vel.w[i]);
        }
        for (std::size_t i = 0; i < layer.b.size(); ++i) {
          vel.b[i] = cfg.momentum * vel.b[i] + g.b[i];
          layer.b[i] = static_cast<float>(static_cast<double>(layer.b[i]) -
                                          cfg.learning_rate * vel.b[i]);
        }
      }
    }
    result.loss_curve.push_back(epoch_loss / static_cast<double>(batches));
  }
  result.weights = std::move(w);
  return result;
}

EvalResult evaluate(const MlpWeights& w, const HodsDataset& ds) {
  if (ds.empty()) throw std::invalid_argument("evaluate: empty dataset");
  EvalResult r;
  std::uint64_t correct = 0, attack_total = 0, attack_flagged = 0;
  std::uint64_t benign_total = 0, benign_flagged = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const int label = ds.labels[i];
    const Verdict v = detect(w, ds.features[i]);
    r.confusion[static_cast<std::size_t>(label)][static_cast<std::size_t>(v.class_id)]++;
    r.per_class_count[static_cast<std::size_t>(label)]++;
    if (v.class_id == label) ++correct;
    if (label != kBenignClass) {
      ++attack_total;
      if (v.is_attack) ++attack_flagged;
    } else {
      ++benign_total;
      if (v.is_attack) ++benign_flagged;
    }
  }
  r.recognition = static_cast<double>(correct) / static_cast<double>(ds.size());
  r.detection = attack_total ? static_cast<double>(attack_flagged) / attack_total : 0.0;
  r.fpr = benign_total ? static_cast<double>(benign_flagged) / benign_total : 0.0;
  for (int c = 0; c < kNumDetectorClasses; ++c) {
    const auto cs = static_cast<std::size_t>(c);
    if (r.per_class_count[cs] == 0) continue;
    r.per_class_recognition[cs] =
        static_cast<double>(r.confusion[cs][cs]) / static_cast<double>(r.per_class_count[cs]);
    std::uint64_t flagged = 0;
    for (int p = 1; p < kNumDetectorClasses; ++p) flagged += r.confusion[cs][static_cast<std::size_t>(p)];
    r.per_class_detection[cs] =
        static_cast<double>(flagged) / static_cast<double>(r.per_class_count[cs]);
  }
  return r;
}

namespace {

constexpr char kWeightsMagic[4] = {'G', 'W', 'N', 'N'};
constexpr std::uint32_t kWeightsVersion = 1;

}  // namespace

void save_weights(const MlpWeights& w, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string());
  os.write(kWeightsMagic, 4);
  const std::uint32_t version = kWeightsVersion;
  const std::uint32_t n_layers = static_cast<std::uint32_t>(w.layers.size());
  os.write(reinterpret_cast<const char*>(&version), 4);
  os.write(reinterpret_cast<const char*>(&n_layers), 4);
  for (const auto& layer : w.layers) {
    os.write(reinterpret_cast<const char*>(&layer.in), 4);
    os.write(reinterpret_cast<const char*>(&layer.out), 4);
    os.write(reinterpret_cast<const char*>(layer.w.data()),
             static_cast<std::streamsize>(layer.w.size() * sizeof(float)));
    os.write(reinterpret_cast<const char*>(layer.b.data()),
             static_cast<std::streamsize>(layer.b.size() * sizeof(float)));
  }
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

MlpWeights load_weights(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kWeightsMagic, 4) != 0) {
    throw std::runtime_error("bad weights magic in " + path.string());
  }
  std::uint32_t version = 0, n_layers = 0;
  is.read(reinterpret_cast<char*>(&version), 4);
  is.read(reinterpret_cast<char*>(&n_layers), 4);
  if (!is || version != kWeightsVersion) {
    throw std::runtime_error("unsupported weights version in " + path.string());
  }
  if (n_layers == 0 || n_layers > 64) {
    throw std::runtime_error("implausible layer count in " + path.string());
  }
  MlpWeights w;
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    MlpWeights::Layer layer;
    is.read(reinterpret_cast<char*>(&layer.in), 4);
    is.read(reinterpret_cast<char*>(&layer.out), 4);
    if (!is || layer.in == 0 || layer.out == 0 ||
        static_cast<std::uint64_t>(layer.in) * layer.out > (1u << 28)) {
      throw std::runtime_error("bad layer header in " + path.string());
    }
    layer.w.resize(static_cast<std::size_t>(layer.in) * layer.out);
    layer.b.resize(layer.out);
    is.read(reinterpret_cast<char*>(layer.w.data()),
            static_cast<std::streamsize>(layer.w.size() * sizeof(float)));
    is.read(reinterpret_cast<char*>(layer.b.data()),
            static_cast<std::streamsize>(layer.b.size() * sizeof(float)));
    if (!is) throw std::runtime_error("weights file truncated: " + path.string());
    w.layers.push_back(std::move(layer));
  }
  // A well-formed file has nothing after the last layer.
  is.peek();
  if (!is.eof()) throw std::runtime_error("trailing bytes in weights file: " + path.string());
  return w;
}

void write_hods_csv(const HodsDataset& ds, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string());
  for (std::size_t j = 0; j < kHodsBins; ++j) os << "f" << j << ",";
  os << "label\n";
  char buf[32];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.features[i].bins) {
      std::snprintf(buf, sizeof(buf), "%.17g,", v);
      os << buf;
    }
    os << ds.labels[i] << "\n";
  }
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

HodsDataset read_hods_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  HodsDataset ds;
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("empty HoDS csv: " + path.string());
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    HodsFeature f;
    f.bins.reserve(kHodsBins);
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      if (f.bins.size() < kHodsBins) {
        f.bins.push_back(std::stod(cell));
      } else {
        ds.labels.push_back(std::stoi(cell));
      }
    }
    if (f.bins.size() != kHodsBins || ds.labels.size() != ds.features.size() + 1) {
      throw std::runtime_error("malformed HoDS csv row in " + path.string());
    }
    ds.features.push_back(std::move(f));
  }
  return ds;
}

}  // namespace gwad
