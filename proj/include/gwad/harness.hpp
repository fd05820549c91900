#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gwad/attacks.hpp"
#include "gwad/detector.hpp"
#include "gwad/screener.hpp"
#include "gwad/victim.hpp"

namespace gwad {

/// Invalid or inconsistent configuration (CLI exit code 1).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A pipeline stage failed (CLI exit code 2). Partial reports are never
/// emitted.
struct StageError : std::runtime_error {
  StageError(const std::string& stage, const std::string& msg)
      : std::runtime_error("[" + stage + "] " + msg), stage_name(stage) {}
  std::string stage_name;
};

enum class PipelineKind { Gwad, GwadPlus };

struct ExperimentConfig {
  PipelineKind pipeline = PipelineKind::Gwad;
  std::uint64_t seed = 1;
  bool seed_set = false;  // config must state the seed; no implicit entropy

  int dim = 3072;
  int n_classes = 10;
  ImageGeometry geometry{32, 32, 3};
  SynthParams synth;

  struct VictimCfg {
    int train_per_class = 80;
    int test_per_class = 20;
    int epochs = 40;
    double lr = 0.2;
  } victim;

  std::vector<AttackConfig> attacks;  // defaults to all six methods

  struct TraceCfg {
    int train_traces_per_class = 4;
    int eval_traces_per_class = 3;
    int checkpoints_train = 150;
    int checkpoints_eval = 150;
  } traces;

  int window = 256;

  struct BenignCfg {
    int pool_per_class = 80;
    int streams = 2;
    int stream_len = 1200;
    int checkpoints_per_stream = 250;
    int synth_eval_per_dist = 50;
  } benign;

  double r_b = 0.0;  // benign injection rate applied to eval traces

  struct DetectorCfg {
    TrainConfig train;
    int benign_per_dist = 150;
    std::string weights_in;   // load instead of training when set
    std::string weights_out;  // save freshly trained weights when set
  } detector;

  struct ScreenerCfg {
    double theta = 0.30;
    std::size_t fifo_depth = 100;
    CannyParams canny;
  } screener;

  int asr_runs = 3;  // stop-on-success runs per attack (0 disables)

  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig from_file(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  void validate() const;  // throws ConfigError
};

/// Default attack lineup: one entry per method with the given budget.
std::vector<AttackConfig> default_attack_lineup(int budget);

/// FNV-1a 64 hash of the canonical config serialization, hex encoded.
std::string config_hash(const ExperimentConfig& cfg);

/// Fixed-order derivation of every per-stage generator from the master
/// seed: sub-pipelines (CLI subcommands, sweeps) that re-derive this tree
/// reproduce exactly the streams a full `run` would have used.
struct PipelineSeeds {
  Rng master;
  Rng world, victim_data, victim_train, pool;
  Rng attack_train, attack_eval, asr;
  Rng dataset, benign_synth_train, eval, inject;
  std::uint64_t detector_seed;

  explicit PipelineSeeds(std::uint64_t seed);
};

/// Victim-side experiment state shared by every stage.
struct Lab {
  std::optional<SynthWorld> world;
  Dataset victim_train, victim_test, pool;
  VictimModel victim;
  double victim_accuracy = 0.0;
  std::vector<std::size_t> eligible;  // correctly classified test samples
};

Lab build_lab(const ExperimentConfig& cfg, PipelineSeeds& seeds);

struct AttackRunSet {
  std::map<int, std::vector<QueryTrace>> traces;       // detector class id -> traces
  std::map<int, std::vector<AttackOutcome>> outcomes;  // parallel to traces
};

/// Runs every configured attack `runs_per_attack` times against freshly
/// drawn, correctly classified test examples.
AttackRunSet generate_attack_traces(Lab& lab, const ExperimentConfig& cfg, int runs_per_attack,
                                    Rng& rng, bool stop_on_success);

/// DS sequence of a trace replayed through a fresh monitor.
std::vector<double> trace_ds_sequence(const QueryTrace& trace, int window);

struct AttackReport {
  std::string method;
  int class_id = 0;
  std::uint64_t checkpoints = 0;
  double detection = 0.0;    // per-checkpoint binary detection rate
  double recognition = 0.0;  // per-checkpoint multiclass rate
  // Run-level alarm rate: a run counts as detected when any of its
  // checkpoints classifies as an attack.
  double per_run_detection = 0.0;
  std::uint64_t eval_runs = 0;
  PhaseFractions consumption;
  double asr = 0.0;
  double mean_queries_to_success = 0.0;  // over successful stopped runs
  std::uint64_t asr_runs = 0;
  // Screener statistics (GWAD+ only).
  double attack_suspicious_frac = 0.0;
  double injected_benign_pass_frac = 0.0;
};

struct Report {
  std::string pipeline;
  std::string config_hash;
  std::uint64_t seed = 0;
  double victim_accuracy = 0.0;
  double r_b = 0.0;
  int window = 0;
  std::vector<AttackReport> attacks;
  double benign_fpr = 0.0;
  std::uint64_t benign_checkpoints = 0;
  double recognition_overall = 0.0;
  double detection_overall = 0.0;
  std::array<std::array<std::uint64_t, kNumDetectorClasses>, kNumDetectorClasses> confusion{};
  std::vector<double> detector_loss_curve;

  nlohmann::ordered_json to_json() const;
};

enum class ReportFormat { Csv, Json };

/// Full pipeline: victim -> attacks -> (screen) -> monitor -> HoDS -> verdit
/// aggregation. Deterministic given the config (including its seed).
Report run_pipeline(const ExperimentConfig& cfg);

struct StreamRates {
  double detection = 0.0;    // over attack-labeled entries
  double fpr = 0.0;          // over benign-labeled entries
  double recognition = 0.0;  // over everything
};

/// Rates for a labeled verdict stream (labels use detector class ids).
StreamRates evaluate_stream(std::span<const Verdict> verdicts, std::span<const int> labels);

struct AblationPoint {
  int window = 0;
  double recognition = 0.0;
  double detection = 0.0;
  std::map<std::string, double> per_attack_recognition;
  std::map<std::string, double> per_attack_detection;
};

/// Re-extracts HoDS at each window size from a shared trace corpus and
/// trains/evaluates one detector per size.
std::vector<AblationPoint> ablation_window(const ExperimentConfig& cfg,
                                           std::span<const int> sizes);

struct InjectionPoint {
  double r_b = 0.0;
  double detection = 0.0;          // per-checkpoint
  double detection_per_run = 0.0;  // any checkpoint flags the run
  double asr = 0.0;
  double mean_queries_to_success = 0.0;  // counted over the injected stream
};

std::vector<InjectionPoint> injection_sweep(const ExperimentConfig& cfg,
                                            std::span<const double> r_b_values);

void emit_report(const Report& report, const std::filesystem::path& path, ReportFormat format);
void emit_ablation_csv(std::span<const AblationPoint> points, const std::filesystem::path& path);
void emit_injection_csv(std::span<const InjectionPoint> points,
                        const std::filesystem::path& path);

}  // namespace gwad
