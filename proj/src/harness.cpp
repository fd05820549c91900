#include "gwad/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>

namespace gwad {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

int attack_class_id(AttackMethod m) { return 1 + static_cast<int>(m); }

double get_num(const json& j, const char* key, double def) {
  if (!j.contains(key)) return def;
  return j.at(key).get<double>();
}

int get_int(const json& j, const char* key, int def) {
  if (!j.contains(key)) return def;
  return j.at(key).get<int>();
}

AttackConfig attack_from_json(const json& j) {
  if (!j.contains("method")) throw ConfigError("attack entry needs a \"method\"");
  AttackConfig a;
  a.method = attack_from_name(j.at("method").get<std::string>());
  a.query_budget = get_int(j, "budget", a.query_budget);
  a.rho_max = get_num(j, "rho_max", a.rho_max);
  a.nes_samples = get_int(j, "nes_samples", a.nes_samples);
  a.nes_sigma = get_num(j, "nes_sigma", a.nes_sigma);
  a.nes_eta = get_num(j, "nes_eta", a.nes_eta);
  a.hsja_theta_scale = get_num(j, "hsja_theta_scale", a.hsja_theta_scale);
  a.hsja_init_queries = get_int(j, "hsja_init_queries", a.hsja_init_queries);
  a.hsja_probe_batch = get_int(j, "hsja_probe_batch", a.hsja_probe_batch);
  a.simba_epsilon = get_num(j, "simba_epsilon", a.simba_epsilon);
  a.signopt_grad_queries = get_int(j, "signopt_grad_queries", a.signopt_grad_queries);
  a.signopt_probe_eps = get_num(j, "signopt_probe_eps", a.signopt_probe_eps);
  a.signopt_eta = get_num(j, "signopt_eta", a.signopt_eta);
  a.signopt_init_dirs = get_int(j, "signopt_init_dirs", a.signopt_init_dirs);
  a.signflip_alpha_init = get_num(j, "signflip_alpha_init", a.signflip_alpha_init);
  a.signflip_p_step = get_num(j, "signflip_p_step", a.signflip_p_step);
  a.ba_step_init = get_num(j, "ba_step_init", a.ba_step_init);
  a.ba_lr = get_num(j, "ba_lr", a.ba_lr);
  if (j.contains("variance_bound")) a.variance_bound = j.at("variance_bound").get<double>();
  if (j.contains("mean_bound")) {
    const double r = j.at("mean_bound").get<double>();
    if (r > 0.0) a.mean_bound = r;
  }
  return a;
}

json attack_to_json(const AttackConfig& a) {
  json j;
  j["method"] = attack_name(a.method);
  j["budget"] = a.query_budget;
  j["rho_max"] = a.rho_max;
  j["nes_samples"] = a.nes_samples;
  j["nes_sigma"] = a.nes_sigma;
  j["nes_eta"] = a.nes_eta;
  j["hsja_theta_scale"] = a.hsja_theta_scale;
  j["hsja_init_queries"] = a.hsja_init_queries;
  j["hsja_probe_batch"] = a.hsja_probe_batch;
  j["simba_epsilon"] = a.simba_epsilon;
  j["signopt_grad_queries"] = a.signopt_grad_queries;
  j["signopt_probe_eps"] = a.signopt_probe_eps;
  j["signopt_eta"] = a.signopt_eta;
  j["signopt_init_dirs"] = a.signopt_init_dirs;
  j["signflip_alpha_init"] = a.signflip_alpha_init;
  j["signflip_p_step"] = a.signflip_p_step;
  j["ba_step_init"] = a.ba_step_init;
  j["ba_lr"] = a.ba_lr;
  if (a.variance_bound) j["variance_bound"] = *a.variance_bound;
  if (a.mean_bound) j["mean_bound"] = *a.mean_bound;
  return j;
}

}  // namespace

std::vector<AttackConfig> default_attack_lineup(int budget) {
  std::vector<AttackConfig> attacks;
  for (AttackMethod m : {AttackMethod::NES, AttackMethod::HSJA, AttackMethod::SimBA,
                         AttackMethod::SignOpt, AttackMethod::SignFlip, AttackMethod::BA}) {
    AttackConfig a;
    a.method = m;
    a.query_budget = budget;
    attacks.push_back(a);
  }
  return attacks;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig cfg;
  if (j.contains("pipeline")) {
    const std::string p = j.at("pipeline").get<std::string>();
    if (p == "gwad") {
      cfg.pipeline = PipelineKind::Gwad;
    } else if (p == "gwadplus" || p == "gwad+") {
      cfg.pipeline = PipelineKind::GwadPlus;
    } else {
      throw ConfigError("unknown pipeline: " + p);
    }
  }
  if (!j.contains("seed")) throw ConfigError("config must state an explicit \"seed\"");
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.seed_set = true;
  cfg.dim = get_int(j, "dim", cfg.dim);
  cfg.n_classes = get_int(j, "n_classes", cfg.n_classes);
  if (j.contains("geometry")) {
    const json& g = j.at("geometry");
    cfg.geometry.height = get_int(g, "height", cfg.geometry.height);
    cfg.geometry.width = get_int(g, "width", cfg.geometry.width);
    cfg.geometry.channels = get_int(g, "channels", cfg.geometry.channels);
  }
  if (j.contains("synth")) {
    const json& s = j.at("synth");
    cfg.synth.offset_amp = get_num(s, "offset_amp", cfg.synth.offset_amp);
    cfg.synth.texture_rank = get_int(s, "texture_rank", cfg.synth.texture_rank);
    cfg.synth.texture_amp = get_num(s, "texture_amp", cfg.synth.texture_amp);
    cfg.synth.pixel_noise = get_num(s, "pixel_noise", cfg.synth.pixel_noise);
  }
  if (j.contains("victim")) {
    const json& v = j.at("victim");
    cfg.victim.train_per_class = get_int(v, "train_per_class", cfg.victim.train_per_class);
    cfg.victim.test_per_class = get_int(v, "test_per_class", cfg.victim.test_per_class);
    cfg.victim.epochs = get_int(v, "epochs", cfg.victim.epochs);
    cfg.victim.lr = get_num(v, "lr", cfg.victim.lr);
  }
  if (j.contains("attacks")) {
    for (const json& a : j.at("attacks")) cfg.attacks.push_back(attack_from_json(a));
  } else {
    cfg.attacks = default_attack_lineup(3000);
  }
  if (j.contains("traces")) {
    const json& t = j.at("traces");
    cfg.traces.train_traces_per_class = get_int(t, "train_per_class", cfg.traces.train_traces_per_class);
    cfg.traces.eval_traces_per_class = get_int(t, "eval_per_class", cfg.traces.eval_traces_per_class);
    cfg.traces.checkpoints_train = get_int(t, "checkpoints_train", cfg.traces.checkpoints_train);
    cfg.traces.checkpoints_eval = get_int(t, "checkpoints_eval", cfg.traces.checkpoints_eval);
  }
  cfg.window = get_int(j, "window", cfg.window);
  if (j.contains("benign")) {
    const json& b = j.at("benign");
    cfg.benign.pool_per_class = get_int(b, "pool_per_class", cfg.benign.pool_per_class);
    cfg.benign.streams = get_int(b, "streams", cfg.benign.streams);
    cfg.benign.stream_len = get_int(b, "stream_len", cfg.benign.stream_len);
    cfg.benign.checkpoints_per_stream =
        get_int(b, "checkpoints_per_stream", cfg.benign.checkpoints_per_stream);
    cfg.benign.synth_eval_per_dist = get_int(b, "synth_eval_per_dist", cfg.benign.synth_eval_per_dist);
  }
  cfg.r_b = get_num(j, "r_b", cfg.r_b);
  if (j.contains("detector")) {
    const json& d = j.at("detector");
    cfg.detector.train.epochs = get_int(d, "epochs", cfg.detector.train.epochs);
    cfg.detector.train.batch_size = get_int(d, "batch_size", cfg.detector.train.batch_size);
    cfg.detector.train.learning_rate = get_num(d, "learning_rate", cfg.detector.train.learning_rate);
    cfg.detector.train.momentum = get_num(d, "momentum", cfg.detector.train.momentum);
    cfg.detector.benign_per_dist = get_int(d, "benign_per_dist", cfg.detector.benign_per_dist);
    if (d.contains("weights_in")) cfg.detector.weights_in = d.at("weights_in").get<std::string>();
    if (d.contains("weights_out")) cfg.detector.weights_out = d.at("weights_out").get<std::string>();
  }
  if (j.contains("screener")) {
    const json& s = j.at("screener");
    cfg.screener.theta = get_num(s, "theta", cfg.screener.theta);
    cfg.screener.fifo_depth = static_cast<std::size_t>(get_int(s, "fifo_depth", static_cast<int>(cfg.screener.fifo_depth)));
    if (s.contains("canny")) {
      const json& c = s.at("canny");
      cfg.screener.canny.sigma = get_num(c, "sigma", cfg.screener.canny.sigma);
      cfg.screener.canny.low = get_num(c, "low", cfg.screener.canny.low);
      cfg.screener.canny.high = get_num(c, "high", cfg.screener.canny.high);
    }
  }
  cfg.asr_runs = get_int(j, "asr_runs", cfg.asr_runs);
  return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path.string());
  json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw ConfigError("config parse error in " + path.string() + ": " + e.what());
  }
  ExperimentConfig cfg = from_json(j);
  cfg.validate();
  return cfg;
}

json ExperimentConfig::to_json() const {
  json j;
  j["pipeline"] = pipeline == PipelineKind::Gwad ? "gwad" : "gwadplus";
  j["seed"] = seed;
  j["dim"] = dim;
  j["n_classes"] = n_classes;
  j["geometry"] = {{"height", geometry.height}, {"width", geometry.width}, {"channels", geometry.channels}};
  j["synth"] = {{"offset_amp", synth.offset_amp},
                {"texture_rank", synth.texture_rank},
                {"texture_amp", synth.texture_amp},
                {"pixel_noise", synth.pixel_noise}};
  j["victim"] = {{"train_per_class", victim.train_per_class},
                 {"test_per_class", victim.test_per_class},
                 {"epochs", victim.epochs},
                 {"lr", victim.lr}};
  j["attacks"] = json::array();
  for (const auto& a : attacks) j["attacks"].push_back(attack_to_json(a));
  j["traces"] = {{"train_per_class", traces.train_traces_per_class},
                 {"eval_per_class", traces.eval_traces_per_class},
                 {"checkpoints_train", traces.checkpoints_train},
                 {"checkpoints_eval", traces.checkpoints_eval}};
  j["window"] = window;
  j["benign"] = {{"pool_per_class", benign.pool_per_class},
                 {"streams", benign.streams},
                 {"stream_len", benign.stream_len},
                 {"checkpoints_per_stream", benign.checkpoints_per_stream},
                 {"synth_eval_per_dist", benign.synth_eval_per_dist}};
  j["r_b"] = r_b;
  j["detector"] = {{"epochs", detector.train.epochs},
                   {"batch_size", detector.train.batch_size},
                   {"learning_rate", detector.train.learning_rate},
                   {"momentum", detector.train.momentum},
                   {"benign_per_dist", detector.benign_per_dist},
                   {"weights_in", detector.weights_in},
                   {"weights_out", detector.weights_out}};
  j["screener"] = {{"theta", screener.theta},
                   {"fifo_depth", screener.fifo_depth},
                   {"canny",
                    {{"sigma", screener.canny.sigma},
                     {"low", screener.canny.low},
                     {"high", screener.canny.high}}}};
  j["asr_runs"] = asr_runs;
  return j;
}

void ExperimentConfig::validate() const {
  if (!seed_set) throw ConfigError("config must state an explicit seed");
  if (dim < 512) throw ConfigError("dim must be >= 512");
  if (n_classes < 2) throw ConfigError("n_classes must be >= 2");
  if (geometry.pixel_count() != static_cast<std::size_t>(dim)) {
    throw ConfigError("geometry (h*w*c) does not match dim");
  }
  if (window < 1) throw ConfigError("window must be >= 1");
  if (attacks.empty()) throw ConfigError("at least one attack is required");
  {
    std::array<bool, 6> seen{};
    for (const auto& a : attacks) {
      const auto idx = static_cast<std::size_t>(a.method);
      if (seen[idx]) throw ConfigError("duplicate attack method in lineup");
      seen[idx] = true;
      if (a.query_budget <= 0) throw ConfigError("attack budget must be > 0");
    }
  }
  if (victim.train_per_class < 1 || victim.test_per_class < 1) {
    throw ConfigError("victim needs at least one sample per class on each split");
  }
  if (r_b < 0.0) throw ConfigError("r_b must be >= 0");
  if (screener.theta <= 0.0 || screener.theta >= 1.0) throw ConfigError("theta must be in (0,1)");
  if (screener.fifo_depth == 0) throw ConfigError("fifo_depth must be > 0");
  if (detector.train.epochs < 1 || detector.train.batch_size < 1 ||
      detector.train.learning_rate <= 0.0) {
    throw ConfigError("bad detector training parameters");
  }
  if (!detector.weights_in.empty() && !std::filesystem::exists(detector.weights_in)) {
    throw ConfigError("detector.weights_in does not exist: " + detector.weights_in);
  }
}

std::string config_hash(const ExperimentConfig& cfg) {
  const std::string canon = cfg.to_json().dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canon) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

StreamRates evaluate_stream(std::span<const Verdict> verdicts, std::span<const int> labels) {
  if (verdicts.size() != labels.size()) {
    throw std::invalid_argument("evaluate_stream: length mismatch");
  }
  StreamRates r;
  std::uint64_t attack_total = 0, attack_hit = 0, benign_total = 0, benign_hit = 0, correct = 0;
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    if (verdicts[i].class_id == labels[i]) ++correct;
    if (labels[i] == kBenignClass) {
      ++benign_total;
      if (verdicts[i].is_attack) ++benign_hit;
    } else {
      ++attack_total;
      if (verdicts[i].is_attack) ++attack_hit;
    }
  }
  r.detection = attack_total ? static_cast<double>(attack_hit) / attack_total : 0.0;
  r.fpr = benign_total ? static_cast<double>(benign_hit) / benign_total : 0.0;
  r.recognition = verdicts.empty() ? 0.0 : static_cast<double>(correct) / verdicts.size();
  return r;
}

// ===========================================================================
// Pipeline stages
// ===========================================================================

PipelineSeeds::PipelineSeeds(std::uint64_t seed)
    : master(seed),
      world(master.split()),
      victim_data(master.split()),
      victim_train(master.split()),
      pool(master.split()),
      attack_train(master.split()),
      attack_eval(master.split()),
      asr(master.split()),
      dataset(master.split()),
      benign_synth_train(master.split()),
      eval(master.split()),
      inject(master.split()),
      detector_seed(master.next_u64()) {}

Lab build_lab(const ExperimentConfig& cfg, PipelineSeeds& seeds) {
  Lab lab;
  try {
    lab.world.emplace(cfg.dim, cfg.n_classes, cfg.synth, seeds.world);
    Dataset all = sample_dataset(*lab.world, cfg.victim.train_per_class + cfg.victim.test_per_class,
                                 seeds.victim_data);
    const double frac = static_cast<double>(cfg.victim.train_per_class) /
                        (cfg.victim.train_per_class + cfg.victim.test_per_class);
    auto [train, test] = split_dataset(all, frac, seeds.victim_data);
    lab.victim_train = std::move(train);
    lab.victim_test = std::move(test);
    lab.victim = train_victim(lab.victim_train, cfg.victim.epochs, seeds.victim_train, cfg.victim.lr);
    lab.victim_accuracy = victim_accuracy(lab.victim, lab.victim_test);
    if (lab.victim_accuracy < 0.85) {
      throw std::runtime_error("victim held-out accuracy " +
                               std::to_string(lab.victim_accuracy) + " below 0.85");
    }
    lab.pool = sample_dataset(*lab.world, cfg.benign.pool_per_class, seeds.pool);
    for (std::size_t i = 0; i < lab.victim_test.size(); ++i) {
      if (lab.victim.predict_hard(lab.victim_test.sample(i)) == lab.victim_test.label(i)) {
        lab.eligible.push_back(i);
      }
    }
    if (lab.eligible.empty()) throw std::runtime_error("no correctly classified test samples");
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError("victim", e.what());
  }
  return lab;
}

AttackRunSet generate_attack_traces(Lab& lab, const ExperimentConfig& cfg, int runs_per_attack,
                                    Rng& rng, bool stop_on_success) {
  AttackRunSet out;
  try {
    for (const AttackConfig& base : cfg.attacks) {
      AttackConfig a = base;
      a.stop_on_success = stop_on_success;
      const int cls = attack_class_id(a.method);
      for (int run = 0; run < runs_per_attack; ++run) {
        Rng run_rng = rng.split();
        const std::size_t pick =
            lab.eligible[static_cast<std::size_t>(run_rng.next_u64() % lab.eligible.size())];
        const auto x0 = lab.victim_test.sample(pick);
        const int y0 = lab.victim_test.label(pick);
        AttackResult result = run_attack(lab.victim, x0, y0, a, run_rng);
        out.traces[cls].push_back(std::move(result.trace));
        out.outcomes[cls].push_back(std::move(result.outcome));
      }
    }
  } catch (const std::exception& e) {
    throw StageError("attack", e.what());
  }
  return out;
}

std::vector<double> trace_ds_sequence(const QueryTrace& trace, int window) {
  DsMonitor monitor(static_cast<std::size_t>(window));
  std::vector<double> ds;
  ds.reserve(trace.size());
  for (std::size_t i = 0; i < trace.size(); ++i) {
    if (const auto v = monitor.push(trace.query(i))) ds.push_back(*v);
  }
  return ds;
}

namespace {

MlpWeights build_detector(Lab& lab, const ExperimentConfig& cfg, PipelineSeeds& seeds,
                          std::vector<double>* loss_curve) {
  try {
    if (!cfg.detector.weights_in.empty()) {
      MlpWeights w = load_weights(cfg.detector.weights_in);
      if (w.layers.empty() || w.layers.front().in != kHodsBins ||
          w.layers.back().out != kNumDetectorClasses) {
        throw std::runtime_error("loaded weights do not match the detector architecture");
      }
      return w;
    }
    AttackRunSet train_runs = generate_attack_traces(lab, cfg, cfg.traces.train_traces_per_class,
                                        seeds.attack_train, /*stop_on_success=*/false);
    std::map<int, std::vector<const QueryTrace*>> by_class;
    for (const auto& [cls, traces] : train_runs.traces) {
      for (const auto& t : traces) by_class[cls].push_back(&t);
    }
    HodsDataset ds = build_dataset(by_class, cfg.traces.checkpoints_train, cfg.window,
                                   seeds.dataset);
    const std::vector<HodsFeature> benign = synth_benign_hods(
        cfg.detector.benign_per_dist, cfg.window, seeds.benign_synth_train);
    for (const auto& f : benign) {
      ds.features.push_back(f);
      ds.labels.push_back(kBenignClass);
    }
    TrainConfig tc = cfg.detector.train;
    tc.seed = seeds.detector_seed;
    TrainResult result = train_detector(ds, tc);
    if (loss_curve) *loss_curve = result.loss_curve;
    if (!cfg.detector.weights_out.empty()) save_weights(result.weights, cfg.detector.weights_out);
    return result.weights;
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError("detector", e.what());
  }
}

struct ClassEval {
  std::uint64_t checkpoints = 0;
  std::uint64_t detected = 0;
  std::uint64_t recognized = 0;
  std::uint64_t runs = 0;
  std::uint64_t runs_detected = 0;
  std::uint64_t attack_records = 0;
  std::uint64_t attack_suspicious = 0;
  std::uint64_t benign_records = 0;
  std::uint64_t benign_suspicious = 0;
};

/// Classifies one (possibly injected) stream and accumulates checkpoint
/// verdicts. The label is the attack class id, or kBenignClass for benign
/// streams.
void eval_stream_checkpoints(const ExperimentConfig& cfg, const MlpWeights& detector,
                             const QueryTrace& stream, int label, int checkpoints, Rng& rng,
                             ClassEval& acc,
                             std::array<std::array<std::uint64_t, kNumDetectorClasses>,
                                        kNumDetectorClasses>& confusion) {
  acc.runs += 1;
  std::vector<std::pair<int, std::size_t>> positions;  // (channel, end index)
  std::map<int, std::vector<double>> channel_ds;

  if (cfg.pipeline == PipelineKind::Gwad) {
    channel_ds[0] = trace_ds_sequence(stream, cfg.window);
  } else {
    ScreenerConfig sc;
    sc.geometry = cfg.geometry;
    sc.canny = cfg.screener.canny;
    sc.fifo_depth = cfg.screener.fifo_depth;
    sc.theta = cfg.screener.theta;
    sc.ds_window = static_cast<std::size_t>(cfg.window);
    Screener screener(sc);
    for (std::size_t i = 0; i < stream.size(); ++i) {
      const ScreenVerdict v = screener.push(stream.query(i));
      const bool injected = stream.phase(i) == Phase::InjectedBenign;
      if (injected) {
        ++acc.benign_records;
        if (v.suspicious) ++acc.benign_suspicious;
      } else {
        ++acc.attack_records;
        if (v.suspicious) ++acc.attack_suspicious;
      }
      if (v.suspicious && v.emitted_ds) channel_ds[*v.channel_id].push_back(*v.emitted_ds);
    }
  }

  for (const auto& [cid, ds] : channel_ds) {
    if (ds.size() < static_cast<std::size_t>(cfg.window)) continue;
    const std::size_t n_pos = ds.size() - static_cast<std::size_t>(cfg.window) + 1;
    for (std::size_t p = 0; p < n_pos; ++p) positions.emplace_back(cid, p);
  }
  if (positions.empty()) return;  // stream never filled a window: no checkpoints

  std::uint64_t hits = 0;
  for (int c = 0; c < checkpoints; ++c) {
    const auto& [cid, start] =
        positions[static_cast<std::size_t>(rng.next_u64() % positions.size())];
    const auto& ds = channel_ds[cid];
    const HodsFeature f = hods_from_values(
        std::span<const double>(ds.data() + start, static_cast<std::size_t>(cfg.window)));
    const Verdict v = detect(detector, f);
    confusion[static_cast<std::size_t>(label)][static_cast<std::size_t>(v.class_id)]++;
    acc.checkpoints += 1;
    if (v.is_attack) {
      acc.detected += 1;
      ++hits;
    }
    if (v.class_id == label) acc.recognized += 1;
  }
  if (hits > 0) acc.runs_detected += 1;  // run-level alarm: any flagged checkpoint
}

}  // namespace

Report run_pipeline(const ExperimentConfig& cfg) {
  cfg.validate();
  PipelineSeeds seeds(cfg.seed);

  Report report;
  report.pipeline = cfg.pipeline == PipelineKind::Gwad ? "gwad" : "gwadplus";
  report.config_hash = config_hash(cfg);
  report.seed = cfg.seed;
  report.r_b = cfg.r_b;
  report.window = cfg.window;

  Lab lab = build_lab(cfg, seeds);
  report.victim_accuracy = lab.victim_accuracy;

  report.detector_loss_curve.clear();
  const MlpWeights detector = build_detector(lab, cfg, seeds, &report.detector_loss_curve);

  // Evaluation traces (fresh seeds, never used in training).
  AttackRunSet eval_runs = generate_attack_traces(lab, cfg, cfg.traces.eval_traces_per_class,
                                     seeds.attack_eval, /*stop_on_success=*/false);

  std::uint64_t total_checkpoints = 0, total_recognized = 0;
  std::uint64_t attack_checkpoints = 0, attack_detected = 0;

  try {
    for (const AttackConfig& a : cfg.attacks) {
      const int cls = attack_class_id(a.method);
      ClassEval acc;
      PhaseFractions consumption{};
      const auto& traces = eval_runs.traces.at(cls);
      for (const QueryTrace& trace : traces) {
        const PhaseFractions pf = consumption_profile(trace);
        consumption.zeroth_order += pf.zeroth_order / traces.size();
        consumption.line_search += pf.line_search / traces.size();
        consumption.other += pf.other / traces.size();
        consumption.injected_benign += pf.injected_benign / traces.size();
        if (cfg.r_b > 0.0) {
          const QueryTrace injected = inject_benign(trace, cfg.r_b, lab.pool, seeds.inject);
          eval_stream_checkpoints(cfg, detector, injected, cls, cfg.traces.checkpoints_eval,
                                  seeds.eval, acc, report.confusion);
        } else {
          eval_stream_checkpoints(cfg, detector, trace, cls, cfg.traces.checkpoints_eval,
                                  seeds.eval, acc, report.confusion);
        }
      }

      AttackReport ar;
      ar.method = attack_name(a.method);
      ar.class_id = cls;
      ar.checkpoints = acc.checkpoints;
      ar.detection = acc.checkpoints ? static_cast<double>(acc.detected) / acc.checkpoints : 0.0;
      ar.recognition =
          acc.checkpoints ? static_cast<double>(acc.recognized) / acc.checkpoints : 0.0;
      ar.per_run_detection = acc.runs ? static_cast<double>(acc.runs_detected) / acc.runs : 0.0;
      ar.eval_runs = acc.runs;
      ar.consumption = consumption;
      if (acc.attack_records) {
        ar.attack_suspicious_frac =
            static_cast<double>(acc.attack_suspicious) / acc.attack_records;
      }
      if (acc.benign_records) {
        ar.injected_benign_pass_frac =
            1.0 - static_cast<double>(acc.benign_suspicious) / acc.benign_records;
      }
      total_checkpoints += acc.checkpoints;
      total_recognized += acc.recognized;
      attack_checkpoints += acc.checkpoints;
      attack_detected += acc.detected;
      report.attacks.push_back(std::move(ar));
    }
  } catch (const std::exception& e) {
    throw StageError("evaluate", e.what());
  }

  // Benign specificity: shuffled pool streams plus held-out synthetic
  // features, all labeled benign.
  try {
    std::uint64_t benign_cp = 0, benign_flagged = 0, benign_recognized = 0;
    for (int s = 0; s < cfg.benign.streams; ++s) {
      const QueryTrace stream = benign_stream(
          lab.pool, static_cast<std::size_t>(cfg.benign.stream_len), seeds.eval);
      ClassEval acc;
      eval_stream_checkpoints(cfg, detector, stream, kBenignClass,
                              cfg.benign.checkpoints_per_stream, seeds.eval, acc,
                              report.confusion);
      benign_cp += acc.checkpoints;
      benign_flagged += acc.detected;
      benign_recognized += acc.recognized;
    }
    if (cfg.benign.synth_eval_per_dist > 0) {
      const std::vector<HodsFeature> synth =
          synth_benign_hods(cfg.benign.synth_eval_per_dist, cfg.window, seeds.eval);
      for (const auto& f : synth) {
        const Verdict v = detect(detector, f);
        report.confusion[kBenignClass][static_cast<std::size_t>(v.class_id)]++;
        ++benign_cp;
        if (v.is_attack) ++benign_flagged;
        if (v.class_id == kBenignClass) ++benign_recognized;
      }
    }
    report.benign_checkpoints = benign_cp;
    report.benign_fpr = benign_cp ? static_cast<double>(benign_flagged) / benign_cp : 0.0;
    total_checkpoints += benign_cp;
    total_recognized += benign_recognized;
  } catch (const std::exception& e) {
    throw StageError("benign", e.what());
  }

  report.recognition_overall =
      total_checkpoints ? static_cast<double>(total_recognized) / total_checkpoints : 0.0;
  report.detection_overall =
      attack_checkpoints ? static_cast<double>(attack_detected) / attack_checkpoints : 0.0;

  // Attack economics: stop-on-success runs.
  if (cfg.asr_runs > 0) {
    AttackRunSet asr_runs = generate_attack_traces(lab, cfg, cfg.asr_runs, seeds.asr, /*stop_on_success=*/true);
    for (auto& ar : report.attacks) {
      const auto& outcomes = asr_runs.outcomes.at(ar.class_id);
      std::uint64_t succ = 0;
      double q_sum = 0.0;
      for (const auto& o : outcomes) {
        if (o.success) {
          ++succ;
          q_sum += static_cast<double>(*o.queries_to_success);
        }
      }
      ar.asr_runs = outcomes.size();
      ar.asr = outcomes.empty() ? 0.0 : static_cast<double>(succ) / outcomes.size();
      ar.mean_queries_to_success = succ ? q_sum / static_cast<double>(succ) : 0.0;
    }
  }

  return report;
}

std::vector<AblationPoint> ablation_window(const ExperimentConfig& cfg,
                                           std::span<const int> sizes) {
  cfg.validate();
  if (sizes.empty()) throw ConfigError("ablation: need at least one window size");
  // Shared corpus: lab and traces from the same seed tree as a plain run.
  PipelineSeeds seeds(cfg.seed);
  Lab lab = build_lab(cfg, seeds);
  AttackRunSet train_runs = generate_attack_traces(lab, cfg, cfg.traces.train_traces_per_class,
                                      seeds.attack_train, false);
  AttackRunSet eval_runs = generate_attack_traces(lab, cfg, cfg.traces.eval_traces_per_class,
                                     seeds.attack_eval, false);

  // DS values are stored at full precision, so per-size features are pure
  // re-extractions of the same sequences.
  std::map<int, std::vector<std::vector<double>>> train_ds, eval_ds;
  for (const auto& [cls, traces] : train_runs.traces) {
    for (const auto& t : traces) train_ds[cls].push_back(trace_ds_sequence(t, cfg.window));
  }
  for (const auto& [cls, traces] : eval_runs.traces) {
    for (const auto& t : traces) eval_ds[cls].push_back(trace_ds_sequence(t, cfg.window));
  }

  std::vector<AblationPoint> points;
  for (const int w : sizes) {
    if (w < 1) throw ConfigError("ablation: window sizes must be positive");
    PipelineSeeds size_seeds(cfg.seed);
    for (const auto& [cls, seqs] : eval_ds) {
      for (const auto& seq : seqs) {
        if (seq.size() < static_cast<std::size_t>(w)) {
          throw StageError("ablation", "window " + std::to_string(w) +
                                           " exceeds trace DS capacity " +
                                           std::to_string(seq.size()));
        }
      }
    }

    HodsDataset train_set;
    for (const auto& [cls, seqs] : train_ds) {
      for (const auto& seq : seqs) {
        if (seq.size() < static_cast<std::size_t>(w)) continue;
        const std::size_t n_pos = seq.size() - static_cast<std::size_t>(w) + 1;
        for (int c = 0; c < cfg.traces.checkpoints_train; ++c) {
          const std::size_t start =
              static_cast<std::size_t>(size_seeds.dataset.next_u64() % n_pos);
          train_set.features.push_back(hods_from_values(
              std::span<const double>(seq.data() + start, static_cast<std::size_t>(w))));
          train_set.labels.push_back(cls);
        }
      }
    }
    const std::vector<HodsFeature> benign =
        synth_benign_hods(cfg.detector.benign_per_dist, w, size_seeds.benign_synth_train);
    for (const auto& f : benign) {
      train_set.features.push_back(f);
      train_set.labels.push_back(kBenignClass);
    }
    TrainConfig tc = cfg.detector.train;
    tc.seed = size_seeds.detector_seed;
    const TrainResult trained = train_detector(train_set, tc);

    AblationPoint point;
    point.window = w;
    std::uint64_t cp = 0, detected = 0, recognized = 0;
    for (const AttackConfig& a : cfg.attacks) {
      const int cls = attack_class_id(a.method);
      std::uint64_t a_cp = 0, a_det = 0, a_rec = 0;
      for (const auto& seq : eval_ds.at(cls)) {
        const std::size_t n_pos = seq.size() - static_cast<std::size_t>(w) + 1;
        for (int c = 0; c < cfg.traces.checkpoints_eval; ++c) {
          const std::size_t start =
              static_cast<std::size_t>(size_seeds.eval.next_u64() % n_pos);
          const Verdict v = detect(trained.weights,
                                   hods_from_values(std::span<const double>(
                                       seq.data() + start, static_cast<std::size_t>(w))));
          ++a_cp;
          if (v.is_attack) ++a_det;
          if (v.class_id == cls) ++a_rec;
        }
      }
      point.per_attack_recognition[attack_name(a.method)] =
          a_cp ? static_cast<double>(a_rec) / a_cp : 0.0;
      point.per_attack_detection[attack_name(a.method)] =
          a_cp ? static_cast<double>(a_det) / a_cp : 0.0;
      cp += a_cp;
      detected += a_det;
      recognized += a_rec;
    }
    point.recognition = cp ? static_cast<double>(recognized) / cp : 0.0;
    point.detection = cp ? static_cast<double>(detected) / cp : 0.0;
    points.push_back(std::move(point));
  }
  return points;
}

std::vector<InjectionPoint> injection_sweep(const ExperimentConfig& cfg,
                                            std::span<const double> r_b_values) {
  cfg.validate();
  if (r_b_values.empty()) throw ConfigError("injection sweep: need at least one r_b value");
  PipelineSeeds seeds(cfg.seed);
  Lab lab = build_lab(cfg, seeds);
  std::vector<double> loss_curve;
  const MlpWeights detector = build_detector(lab, cfg, seeds, &loss_curve);
  AttackRunSet eval_runs = generate_attack_traces(lab, cfg, cfg.traces.eval_traces_per_class,
                                     seeds.attack_eval, false);
  AttackRunSet stopped = generate_attack_traces(lab, cfg, std::max(cfg.asr_runs, 1), seeds.asr, true);

  std::vector<InjectionPoint> points;
  for (const double r_b : r_b_values) {
    if (r_b < 0.0) throw ConfigError("injection sweep: r_b must be >= 0");
    PipelineSeeds point_seeds(cfg.seed);
    InjectionPoint point;
    point.r_b = r_b;

    std::uint64_t cp = 0, detected = 0, runs = 0, runs_detected = 0;
    std::array<std::array<std::uint64_t, kNumDetectorClasses>, kNumDetectorClasses> confusion{};
    for (const AttackConfig& a : cfg.attacks) {
      const int cls = attack_class_id(a.method);
      ClassEval acc;
      for (const QueryTrace& trace : eval_runs.traces.at(cls)) {
        if (r_b > 0.0) {
          const QueryTrace injected = inject_benign(trace, r_b, lab.pool, point_seeds.inject);
          eval_stream_checkpoints(cfg, detector, injected, cls, cfg.traces.checkpoints_eval,
                                  point_seeds.eval, acc, confusion);
        } else {
          eval_stream_checkpoints(cfg, detector, trace, cls, cfg.traces.checkpoints_eval,
                                  point_seeds.eval, acc, confusion);
        }
      }
      cp += acc.checkpoints;
      detected += acc.detected;
      runs += acc.runs;
      runs_detected += acc.runs_detected;
    }
    point.detection = cp ? static_cast<double>(detected) / cp : 0.0;
    point.detection_per_run = runs ? static_cast<double>(runs_detected) / runs : 0.0;

    // Economics: position of the successful query once benign traffic is
    // interleaved at rate r_b.
    std::uint64_t succ = 0, stopped_runs = 0;
    double q_sum = 0.0;
    for (const auto& [cls, outcomes] : stopped.outcomes) {
      for (const auto& o : outcomes) {
        ++stopped_runs;
        if (!o.success) continue;
        ++succ;
        const std::uint64_t n_attack = *o.queries_to_success;
        const std::uint64_t n_benign =
            static_cast<std::uint64_t>(std::llround(r_b * static_cast<double>(n_attack)));
        const std::uint64_t total = n_attack + n_benign;
        if (n_benign == 0) {
          q_sum += static_cast<double>(n_attack);
          continue;
        }
        // Position of the last attack slot in a random interleave.
        std::vector<std::uint8_t> slots(total, 0);
        std::fill(slots.begin(), slots.begin() + static_cast<std::ptrdiff_t>(n_benign), 1);
        for (std::size_t i = total; i > 1; --i) {
          const std::size_t j =
              static_cast<std::size_t>(point_seeds.inject.next_u64() % i);
          std::swap(slots[i - 1], slots[j]);
        }
        std::size_t last_attack = 0;
        for (std::size_t i = 0; i < total; ++i) {
          if (!slots[i]) last_attack = i;
        }
        q_sum += static_cast<double>(last_attack + 1);
      }
    }
    point.asr = stopped_runs ? static_cast<double>(succ) / stopped_runs : 0.0;
    point.mean_queries_to_success = succ ? q_sum / static_cast<double>(succ) : 0.0;
    points.push_back(point);
  }
  return points;
}

// ===========================================================================
// Report emission
// ===========================================================================

ordered_json Report::to_json() const {
  ordered_json j;
  j["pipeline"] = pipeline;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["r_b"] = r_b;
  j["window"] = window;
  j["victim_accuracy"] = victim_accuracy;
  j["attacks"] = ordered_json::array();
  for (const auto& a : attacks) {
    ordered_json aj;
    aj["method"] = a.method;
    aj["class_id"] = a.class_id;
    aj["checkpoints"] = a.checkpoints;
    aj["detection"] = a.detection;
    aj["recognition"] = a.recognition;
    aj["per_run_detection"] = a.per_run_detection;
    aj["eval_runs"] = a.eval_runs;
    aj["consumption"] = {{"zeroth_order", a.consumption.zeroth_order},
                         {"line_search", a.consumption.line_search},
                         {"other", a.consumption.other},
                         {"injected_benign", a.consumption.injected_benign}};
    aj["asr"] = a.asr;
    aj["mean_queries_to_success"] = a.mean_queries_to_success;
    aj["asr_runs"] = a.asr_runs;
    aj["attack_suspicious_frac"] = a.attack_suspicious_frac;
    aj["injected_benign_pass_frac"] = a.injected_benign_pass_frac;
    j["attacks"].push_back(std::move(aj));
  }
  j["benign"] = {{"fpr", benign_fpr}, {"checkpoints", benign_checkpoints}};
  j["recognition_overall"] = recognition_overall;
  j["detection_overall"] = detection_overall;
  j["confusion"] = ordered_json::array();
  for (const auto& row : confusion) {
    ordered_json r = ordered_json::array();
    for (const auto v : row) r.push_back(v);
    j["confusion"].push_back(std::move(r));
  }
  j["detector_loss_curve"] = detector_loss_curve;
  return j;
}

namespace {

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string());
  os << text;
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void emit_report(const Report& report, const std::filesystem::path& path, ReportFormat format) {
  if (format == ReportFormat::Json) {
    write_text_file(path, report.to_json().dump(2) + "\n");
    return;
  }
  std::ostringstream os;
  os << "section,attack,metric,value\n";
  os << "global,,pipeline," << report.pipeline << "\n";
  os << "global,,config_hash," << report.config_hash << "\n";
  os << "global,,seed," << report.seed << "\n";
  os << "global,,r_b," << fmt_double(report.r_b) << "\n";
  os << "global,,window," << report.window << "\n";
  os << "global,,victim_accuracy," << fmt_double(report.victim_accuracy) << "\n";
  os << "global,,recognition_overall," << fmt_double(report.recognition_overall) << "\n";
  os << "global,,detection_overall," << fmt_double(report.detection_overall) << "\n";
  for (const auto& a : report.attacks) {
    os << "attack," << a.method << ",detection," << fmt_double(a.detection) << "\n";
    os << "attack," << a.method << ",recognition," << fmt_double(a.recognition) << "\n";
    os << "attack," << a.method << ",per_run_detection," << fmt_double(a.per_run_detection)
       << "\n";
    os << "attack," << a.method << ",checkpoints," << a.checkpoints << "\n";
    os << "attack," << a.method << ",asr," << fmt_double(a.asr) << "\n";
    os << "attack," << a.method << ",mean_queries_to_success,"
       << fmt_double(a.mean_queries_to_success) << "\n";
    os << "attack," << a.method << ",consumption_zeroth_order,"
       << fmt_double(a.consumption.zeroth_order) << "\n";
    os << "attack," << a.method << ",consumption_line_search,"
       << fmt_double(a.consumption.line_search) << "\n";
    os << "attack," << a.method << ",consumption_other," << fmt_double(a.consumption.other)
       << "\n";
    os << "attack," << a.method << ",consumption_injected_benign,"
       << fmt_double(a.consumption.injected_benign) << "\n";
    os << "attack," << a.method << ",attack_suspicious_frac,"
       << fmt_double(a.attack_suspicious_frac) << "\n";
    os << "attack," << a.method << ",injected_benign_pass_frac,"
       << fmt_double(a.injected_benign_pass_frac) << "\n";
  }
  os << "benign,,fpr," << fmt_double(report.benign_fpr) << "\n";
  os << "benign,,checkpoints," << report.benign_checkpoints << "\n";
  write_text_file(path, os.str());
}

void emit_ablation_csv(std::span<const AblationPoint> points,
                       const std::filesystem::path& path) {
  std::ostringstream os;
  os << "window,recognition,detection";
  if (!points.empty()) {
    for (const auto& [name, _] : points.front().per_attack_recognition) {
      os << "," << name << "_recognition," << name << "_detection";
    }
  }
  os << "\n";
  for (const auto& p : points) {
    os << p.window << "," << fmt_double(p.recognition) << "," << fmt_double(p.detection);
    for (const auto& [name, rec] : p.per_attack_recognition) {
      os << "," << fmt_double(rec) << "," << fmt_double(p.per_attack_detection.at(name));
    }
    os << "\n";
  }
  write_text_file(path, os.str());
}

void emit_injection_csv(std::span<const InjectionPoint> points,
                        const std::filesystem::path& path) {
  std::ostringstream os;
  os << "r_b,detection,detection_per_run,asr,mean_queries_to_success\n";
  for (const auto& p : points) {
    os << fmt_double(p.r_b) << "," << fmt_double(p.detection) << ","
       << fmt_double(p.detection_per_run) << "," << fmt_double(p.asr) << ","
       << fmt_double(p.mean_queries_to_success) << "\n";
  }
  write_text_file(path, os.str());
}

}  // namespace gwad
