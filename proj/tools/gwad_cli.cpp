// Command-line front end for the delta-similarity attack detection lab.
//
// Subcommands: train-victim, gen-traces, build-dataset, train-detector,
// run, sweep-injection, ablate-window, ds-hist, report.
// Exit codes: 0 success, 1 configuration error, 2 stage failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gwad/detector.hpp"
#include "gwad/harness.hpp"
#include "gwad/trace.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

struct GlobalOpts {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::string format = "json";
};

gwad::ExperimentConfig load_config(const GlobalOpts& g) {
  if (g.config_path.empty()) throw gwad::ConfigError("--config <path> is required");
  gwad::ExperimentConfig cfg = gwad::ExperimentConfig::from_file(g.config_path);
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  return cfg;
}

gwad::ReportFormat parse_format(const std::string& f) {
  if (f == "json") return gwad::ReportFormat::Json;
  if (f == "csv") return gwad::ReportFormat::Csv;
  throw gwad::ConfigError("unknown format: " + f + " (expected csv or json)");
}

fs::path ensure_out_dir(const GlobalOpts& g) {
  fs::path dir(g.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw gwad::StageError("io", "cannot create output dir " + dir.string());
  return dir;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty()) out.push_back(std::stoi(cell));
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty()) out.push_back(std::stod(cell));
  }
  return out;
}

int cmd_train_victim(const GlobalOpts& g) {
  const auto cfg = load_config(g);
  const fs::path dir = ensure_out_dir(g);
  gwad::PipelineSeeds seeds(cfg.seed);
  gwad::Lab lab = gwad::build_lab(cfg, seeds);
  const fs::path path = dir / "victim.gwnn";
  gwad::save_victim(lab.victim, path);
  std::cout << "victim accuracy " << lab.victim_accuracy << ", saved " << path.string() << "\n";
  return 0;
}

int cmd_gen_traces(const GlobalOpts& g) {
  const auto cfg = load_config(g);
  const fs::path dir = ensure_out_dir(g) / "traces";
  std::error_code ec;
  fs::create_directories(dir, ec);
  gwad::PipelineSeeds seeds(cfg.seed);
  gwad::Lab lab = gwad::build_lab(cfg, seeds);
  gwad::AttackRunSet runs = gwad::generate_attack_traces(
      lab, cfg, cfg.traces.train_traces_per_class, seeds.attack_train, false);
  const std::string hash = gwad::config_hash(cfg);
  std::size_t written = 0;
  for (const auto& [cls, traces] : runs.traces) {
    const std::string method = gwad::detector_class_name(cls);
    for (std::size_t k = 0; k < traces.size(); ++k) {
      const fs::path trace_path = dir / (method + "_" + std::to_string(k) + ".gwtr");
      gwad::write_trace(traces[k], trace_path);
      const auto& outcome = runs.outcomes.at(cls)[k];
      ordered_json sidecar;
      sidecar["method"] = method;
      sidecar["class_id"] = cls;
      sidecar["seed"] = cfg.seed;
      sidecar["run"] = k;
      sidecar["config_hash"] = hash;
      sidecar["outcome"] = {{"success", outcome.success},
                            {"queries_used", outcome.queries_used},
                            {"rho", outcome.rho}};
      if (outcome.queries_to_success) {
        sidecar["outcome"]["queries_to_success"] = *outcome.queries_to_success;
      }
      std::ofstream os(trace_path.string() + ".json");
      os << sidecar.dump(2) << "\n";
      ++written;
    }
  }
  std::cout << "wrote " << written << " traces to " << dir.string() << "\n";
  return 0;
}

int cmd_build_dataset(const GlobalOpts& g, const std::string& traces_dir) {
  const auto cfg = load_config(g);
  const fs::path dir = ensure_out_dir(g);
  const fs::path tdir = traces_dir.empty() ? dir / "traces" : fs::path(traces_dir);
  if (!fs::exists(tdir)) throw gwad::ConfigError("traces dir does not exist: " + tdir.string());

  std::map<int, std::vector<gwad::QueryTrace>> owned;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(tdir)) {
    if (entry.path().extension() == ".gwtr") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& file : files) {
    std::ifstream sidecar(file.string() + ".json");
    if (!sidecar) throw gwad::StageError("dataset", "missing sidecar for " + file.string());
    json meta;
    sidecar >> meta;
    owned[meta.at("class_id").get<int>()].push_back(gwad::read_trace(file));
  }
  if (owned.empty()) throw gwad::StageError("dataset", "no traces found in " + tdir.string());

  std::map<int, std::vector<const gwad::QueryTrace*>> by_class;
  for (const auto& [cls, traces] : owned) {
    for (const auto& t : traces) by_class[cls].push_back(&t);
  }
  gwad::PipelineSeeds seeds(cfg.seed);
  gwad::HodsDataset ds =
      gwad::build_dataset(by_class, cfg.traces.checkpoints_train, cfg.window, seeds.dataset);
  const auto benign =
      gwad::synth_benign_hods(cfg.detector.benign_per_dist, cfg.window, seeds.benign_synth_train);
  for (const auto& f : benign) {
    ds.features.push_back(f);
    ds.labels.push_back(gwad::kBenignClass);
  }
  const fs::path out = dir / "hods.csv";
  gwad::write_hods_csv(ds, out);
  std::cout << "wrote " << ds.size() << " features (" << ds.skipped_traces
            << " traces skipped) to " << out.string() << "\n";
  return 0;
}

int cmd_train_detector(const GlobalOpts& g, const std::string& dataset_path) {
  const auto cfg = load_config(g);
  const fs::path dir = ensure_out_dir(g);
  const fs::path dpath = dataset_path.empty() ? dir / "hods.csv" : fs::path(dataset_path);
  if (!fs::exists(dpath)) throw gwad::ConfigError("dataset does not exist: " + dpath.string());
  gwad::HodsDataset ds = gwad::read_hods_csv(dpath);
  gwad::PipelineSeeds seeds(cfg.seed);
  gwad::TrainConfig tc = cfg.detector.train;
  tc.seed = seeds.detector_seed;
  gwad::TrainResult result = gwad::train_detector(ds, tc);
  const fs::path wpath = dir / "detector.gwnn";
  gwad::save_weights(result.weights, wpath);
  std::ofstream curve(dir / "loss_curve.csv");
  curve << "epoch,loss\n";
  for (std::size_t e = 0; e < result.loss_curve.size(); ++e) {
    curve << e << "," << result.loss_curve[e] << "\n";
  }
  std::cout << "trained on " << ds.size() << " features, final loss "
            << result.loss_curve.back() << ", saved " << wpath.string() << "\n";
  return 0;
}

int cmd_run(const GlobalOpts& g) {
  const auto cfg = load_config(g);
  const fs::path dir = ensure_out_dir(g);
  const gwad::Report report = gwad::run_pipeline(cfg);
  const gwad::ReportFormat fmt = parse_format(g.format);
  const fs::path path = dir / (fmt == gwad::ReportFormat::Json ? "report.json" : "report.csv");
  gwad::emit_report(report, path, fmt);
  std::cout << "report: " << path.string() << "\n";
  for (const auto& a : report.attacks) {
    std::cout << "  " << a.method << ": detection " << a.detection << ", recognition "
              << a.recognition << "\n";
  }
  std::cout << "  benign fpr " << report.benign_fpr << " over " << report.benign_checkpoints
            << " checkpoints\n";
  return 0;
}

int cmd_sweep_injection(const GlobalOpts& g, const std::string& rb_list) {
  const auto cfg = load_config(g);
  const fs::path dir = ensure_out_dir(g);
  const std::vector<double> values =
      rb_list.empty() ? std::vector<double>{0.0, 0.5, 1.0, 1.5, 2.5} : parse_double_list(rb_list);
  const auto points = gwad::injection_sweep(cfg, values);
  const fs::path path = dir / "injection_sweep.csv";
  gwad::emit_injection_csv(points, path);
  std::cout << "injection sweep: " << path.string() << "\n";
  for (const auto& p : points) {
    std::cout << "  r_b " << p.r_b << ": detection " << p.detection << ", queries-to-success "
              << p.mean_queries_to_success << "\n";
  }
  return 0;
}

int cmd_ablate_window(const GlobalOpts& g, const std::string& sizes_list) {
  const auto cfg = load_config(g);
  const fs::path dir = ensure_out_dir(g);
  const std::vector<int> sizes =
      sizes_list.empty() ? std::vector<int>{16, 32, 64, 128, 256} : parse_int_list(sizes_list);
  const auto points = gwad::ablation_window(cfg, sizes);
  const fs::path path = dir / "window_ablation.csv";
  gwad::emit_ablation_csv(points, path);
  std::cout << "window ablation: " << path.string() << "\n";
  for (const auto& p : points) {
    std::cout << "  W=" << p.window << ": recognition " << p.recognition << ", detection "
              << p.detection << "\n";
  }
  return 0;
}

int cmd_ds_hist(const GlobalOpts& g, const std::string& trace_path) {
  const auto cfg = load_config(g);
  if (trace_path.empty()) throw gwad::ConfigError("--trace <file.gwtr> is required");
  const fs::path dir = ensure_out_dir(g);
  const gwad::QueryTrace trace = gwad::read_trace(trace_path);
  const std::vector<double> ds = gwad::trace_ds_sequence(trace, cfg.window);
  const fs::path out = dir / "ds_values.csv";
  std::ofstream os(out);
  gwad::write_ds_csv(os, ds);
  std::cout << "wrote " << ds.size() << " DS values to " << out.string() << "\n";
  return 0;
}

int cmd_report(const GlobalOpts& g, const std::string& report_path) {
  if (report_path.empty()) throw gwad::ConfigError("--in <report.json> is required");
  if (!fs::exists(report_path)) {
    throw gwad::ConfigError("report does not exist: " + report_path);
  }
  const fs::path dir = ensure_out_dir(g);
  std::ifstream is(report_path);
  json j;
  is >> j;
  // Flatten the stored report into the long CSV layout.
  std::ostringstream os;
  os << "section,attack,metric,value\n";
  os << "global,,pipeline," << j.at("pipeline").get<std::string>() << "\n";
  os << "global,,config_hash," << j.at("config_hash").get<std::string>() << "\n";
  os << "global,,seed," << j.at("seed").get<std::uint64_t>() << "\n";
  for (const auto& a : j.at("attacks")) {
    const std::string m = a.at("method").get<std::string>();
    for (const auto& key : {"detection", "recognition", "per_run_detection", "asr",
                            "mean_queries_to_success"}) {
      os << "attack," << m << "," << key << "," << a.at(key).dump() << "\n";
    }
  }
  os << "benign,,fpr," << j.at("benign").at("fpr").dump() << "\n";
  const fs::path out = dir / "report.csv";
  std::ofstream ofs(out);
  ofs << os.str();
  std::cout << "converted " << report_path << " -> " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Query-stream attack detection lab (delta-similarity monitoring)"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOpts g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "override the config seed");
  app.add_option("--config", g.config_path, "experiment config JSON");
  app.add_option("--out", g.out, "output directory (default .)");
  app.add_option("--format", g.format, "report format: csv|json (default json)");

  auto* sc_train_victim = app.add_subcommand("train-victim", "train and save the victim model");
  auto* sc_gen = app.add_subcommand("gen-traces", "run attacks and write GWTR traces");
  auto* sc_build = app.add_subcommand("build-dataset", "extract a HoDS dataset from traces");
  std::string traces_dir;
  sc_build->add_option("--traces", traces_dir, "trace directory (default <out>/traces)");
  auto* sc_train = app.add_subcommand("train-detector", "train the HoDS classifier");
  std::string dataset_path;
  sc_train->add_option("--dataset", dataset_path, "HoDS csv (default <out>/hods.csv)");
  auto* sc_run = app.add_subcommand("run", "run the full pipeline and emit a report");
  auto* sc_sweep = app.add_subcommand("sweep-injection", "detection vs benign injection rate");
  std::string rb_list;
  sc_sweep->add_option("--rb", rb_list, "comma-separated r_b values");
  auto* sc_ablate = app.add_subcommand("ablate-window", "detection vs DS window size");
  std::string sizes_list;
  sc_ablate->add_option("--sizes", sizes_list, "comma-separated window sizes");
  auto* sc_hist = app.add_subcommand("ds-hist", "dump the DS sequence of a trace as CSV");
  std::string trace_path;
  sc_hist->add_option("--trace", trace_path, "GWTR trace file");
  auto* sc_report = app.add_subcommand("report", "convert a JSON report to CSV");
  std::string report_path;
  sc_report->add_option("--in", report_path, "stored report.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  if (*seed_opt) g.seed = seed_value;

  try {
    if (sc_train_victim->parsed()) return cmd_train_victim(g);
    if (sc_gen->parsed()) return cmd_gen_traces(g);
    if (sc_build->parsed()) return cmd_build_dataset(g, traces_dir);
    if (sc_train->parsed()) return cmd_train_detector(g, dataset_path);
    if (sc_run->parsed()) return cmd_run(g);
    if (sc_sweep->parsed()) return cmd_sweep_injection(g, rb_list);
    if (sc_ablate->parsed()) return cmd_ablate_window(g, sizes_list);
    if (sc_hist->parsed()) return cmd_ds_hist(g, trace_path);
    if (sc_report->parsed()) return cmd_report(g, report_path);
  } catch (const gwad::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const gwad::StageError& e) {
    std::cerr << "stage failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
