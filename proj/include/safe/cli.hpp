#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "safe/experiment.hpp"

namespace safe {

inline constexpr int kSchemaVersion = 1;

enum ExitCode : int { exit_ok = 0, exit_config = 2, exit_runtime = 3, exit_gate = 4 };

// Every field is also a command-line flag (`--u-min`) and a config-file key
// (`u_min = 8`). A value of 0 for warning/trigger/length means "default for
// the chosen command and process"; a negative gate disables it.
struct ExperimentConfig {
  // input
  std::string process = "ts-b";
  std::string spec;  // segment spec file (overrides process)
  std::string csv;   // real-world series (overrides spec and process)
  std::string column = "0";
  std::string normalize = "none";
  std::uint64_t seed = 1;
  std::size_t trials = 1;
  std::size_t length = 0;
  double alpha = 0.7;

  // detector
  std::string features = "spectral";
  std::string distance = "euclidean";
  double lambda = 0.3;
  double warning = 0.0;
  double trigger = 0.0;
  std::size_t gamma = 3;
  std::size_t sma = 20;
  std::size_t window = 5;
  std::string sigma = "inside";
  double tolerance = 0.05;
  bool symmetric = false;

  // predictor
  std::string predictor = "mlp";
  std::size_t lag = 5;
  double par_c = 0.05;
  double par_epsilon = 0.01;
  std::size_t rff_dim = 512;
  double rff_bandwidth = 0.0;  // 0 = median heuristic
  double rff_l2 = 1e-3;
  double rff_epsilon = 0.01;
  double rff_eta0 = 0.01;
  std::string rff_schedule = "invscaling";
  std::string hidden = "200,200";
  double dropout = 0.1;
  double learning_rate = 1e-3;
  bool relu_output = false;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 200;
  std::size_t patience = 5;

  // adaptation
  bool adapt = true;
  double beta = 0.1;
  std::size_t u_min = 8;
  std::size_t u_max = 1000;
  std::size_t val_pairs = 1;
  std::size_t adapt_max_epochs = 200;
  std::size_t adapt_patience = 5;
  double train_fraction = 1.0 / 6.0;
  double val_fraction = 1.0 / 12.0;

  // run
  std::string out;
  int threads = 0;
  bool plots = true;

  // exit code 4 when violated
  double gate_min_hit = -1;
  double gate_max_fa = -1;
  double gate_max_delay = -1;
  double gate_min_wins = -1;  // fraction of trials where adaptation beats the baseline
  double gate_max_update = -1;

  // Fills command-dependent defaults (thresholds, output directory).
  void resolve(const std::string& command);
  // All violated constraints at once.
  std::vector<std::string> problems(const std::string& command) const;

  DetectorConfig detector() const;
  PredictionConfig prediction() const;

  // Deterministic `key = value` echo, one field per line.
  std::string to_text() const;
};

// Segment spec for one trial: the --spec file or named process, seeded with seed + trial.
SegmentedProcessSpec trial_spec(const ExperimentConfig& config, std::size_t trial);

// Series for one trial: the CSV as loaded, or the segment spec generated
// with seed + trial.
LabeledSeries trial_series(const ExperimentConfig& config, std::size_t trial);

// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

int run_cli(int argc, const char* const* argv);

}  // namespace safe
