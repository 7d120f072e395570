#pragma once

// Experiment orchestration behind the command-line tool: typed experiment
// configuration, data preparation, federated runs, leakage trials,
// forensics, sweeps and report folding.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fllab/config.h"
#include "fllab/data.h"
#include "fllab/federation.h"
#include "fllab/forensics.h"
#include "fllab/leakage.h"
#include "fllab/results.h"

namespace fllab {

struct DataSettings {
  std::string source = "synth";  // synth | idx
  std::filesystem::path images;
  std::filesystem::path labels;
  BlobOptions blobs;
  double test_fraction = 0.25;
  std::uint64_t split_seed = 11;
};

struct AttackSettings {
  AttackConfig attack;
  std::size_t targets = 10;
  std::size_t batch = 1;        // victim batch
  std::size_t local_iters = 1;  // victim L
  double local_lr = 0.1;
};

struct SweepSettings {
  std::string key;
  std::vector<std::string> values;
  std::string command = "train";
};

struct ExperimentConfig {
  Config source;
  std::string scenario;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  bool write_images = true;

  DataSettings data;
  std::size_t clients = 100;
  std::size_t per_client = 50;
  std::size_t classes_per_client = 2;

  ModelSpec model{{8, 8}, {}, 10};
  double init_gain = 1.0;

  TrainingConfig training;
  AggregationRule rule = AggregationRule::kFedAvg;
  double global_lr = 1.0;
  std::size_t victim_class = 1;

  NoisePolicy privacy;
  std::optional<double> reference_sigma;

  std::optional<PoisonSpec> poison;
  std::size_t trigger_size = 2;

  AttackSettings attack;

  std::size_t forensics_class = 1;
  DetectionOptions forensics;
  bool removal = false;
  std::filesystem::path trace_path;

  SweepSettings sweep;
};

// Default output root: $FLLAB_OUTPUT_ROOT, else ./results.
std::filesystem::path default_output_root();

// Validates every value; throws ConfigError on a missing seed or bad value.
ExperimentConfig make_experiment(const Config& cfg);
ExperimentConfig load_experiment(const std::filesystem::path& path,
                                 const std::vector<std::string>& overrides = {});

struct Workbench {
  Dataset train;
  Dataset test;
  std::vector<Dataset> shards;
};

Workbench prepare_data(const ExperimentConfig& cfg);

// Poison plan, defense and evaluation set for a federated run.
Scenario make_scenario(const ExperimentConfig& cfg, const Workbench& wb);

struct TrainOutcome {
  RunLog log;
  std::optional<PoisonPlan> plan;
  // Forensics-class trace: collected online when removal is on, otherwise
  // rebuilt from the recorded updates of a poisoned run.
  std::optional<GradientTrace> trace;
};

TrainOutcome run_training(const ExperimentConfig& cfg, const Workbench& wb);

// accuracy, victim_f1 and rest_f1 at round 0 and after every evaluated
// round; update_norm every round; sigma_t and epsilon under a noise policy.
ResultTable run_rows(const std::string& scenario, const RunLog& log, bool noisy);

struct LeakTrial {
  std::size_t index = 0;
  std::vector<Example> victim;  // the private batch
  ReconResult result;
  double mse = 0.0;
  double ssim = 0.0;
  bool label_correct = false;
  double sigma = 0.0;        // noise scale applied to the shared gradient
  double sensitivity = 0.0;  // S used by a DP policy
};

// One independent model, victim batch and attack per target. Trial i uses
// seed + i for the model and victim choice.
std::vector<LeakTrial> run_leakage(const ExperimentConfig& cfg);

ResultTable leak_rows(const std::string& scenario, const std::vector<LeakTrial>& trials);

// Every scenario a sweep expands to, in declaration order.
std::vector<Config> expand_sweep(const Config& cfg);

// Runs one command (train | leak | poison | detect | sweep) and writes its
// outputs under the configured directory. Progress goes to `out`.
void run_command(const std::string& command, const Config& cfg, std::ostream& out);

// Folds every results.csv below `dir` into summary.csv and per-metric
// line files lines_<metric>.csv. Returns the number of rows read.
std::size_t run_report(const std::filesystem::path& dir, std::ostream& out);

std::string to_string(AggregationRule rule);

}  // namespace fllab
