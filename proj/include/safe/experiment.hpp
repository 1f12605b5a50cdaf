#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "safe/adaptation.hpp"
#include "safe/datagen.hpp"
#include "safe/detector.hpp"
#include "safe/evaluation.hpp"
#include "safe/predictors.hpp"

namespace safe {

// ---------------------------------------------------------------------------
// Detection

struct DetectionExperiment {
  std::string process = "ts-b";
  double alpha = 0.7;  // ts-a only
  std::size_t length = 1000;
  DetectorConfig detector;
  MatchOptions match;
  std::size_t trials = 100;
  std::uint64_t base_seed = 1;
};

struct DetectionRun {
  std::uint64_t seed = 0;
  DetectionScore score;
  std::vector<std::uint8_t> flags;
  std::vector<std::size_t> events;
  double seconds = 0.0;  // detector steps only
  std::size_t steps = 0;
};

// base_seed + trial
std::uint64_t trial_seed(std::uint64_t base_seed, std::size_t trial);

// Calls body(i) for every trial, across OpenMP threads when `parallel`.
// The first exception (by trial index) is rethrown after all trials end.
void for_each_trial(std::size_t trials, bool parallel, const std::function<void(std::size_t)>& body);

LabeledSeries detection_series(const DetectionExperiment& experiment, std::size_t trial);

// Steps before the detector warm-up ends are not scored as negatives.
DetectionRun run_detection(const LabeledSeries& series, const DetectorConfig& config, MatchOptions match,
                           std::vector<DetectionOutcome>* trace = nullptr);

// Results are ordered by trial index in both variants and are identical.
std::vector<DetectionRun> run_detection_serial(const DetectionExperiment& experiment);
std::vector<DetectionRun> run_detection_parallel(const DetectionExperiment& experiment);

DetectionSummary summarize(const std::vector<DetectionRun>& runs);

// ---------------------------------------------------------------------------
// Prediction

struct PredictionConfig {
  PredictorSpec predictor;
  DetectorConfig detector = prediction_detector_defaults();
  AdaptationConfig adaptation;
  EpochPolicy offline;
  double train_fraction = 1.0 / 6.0;
  double val_fraction = 1.0 / 12.0;
  bool adapt = true;
  bool keep_trace = false;

  // lambda 0.3, warning 10, trigger 20.
  static DetectorConfig prediction_detector_defaults();
};

struct PredictionRun {
  std::uint64_t seed = 0;
  std::size_t test_begin = 0;  // global index of the first test step
  MinMaxScaler scaler;
  FitReport offline;
  PredictionScore adapted;
  PredictionScore baseline;
  std::vector<double> targets;  // normalised test targets
  std::vector<double> adapted_predictions;
  std::vector<double> baseline_predictions;
  std::vector<std::uint8_t> update_flags;
  std::vector<AdaptationReport> adaptations;
  std::vector<DetectionOutcome> trace;  // whole series, if keep_trace
  double offline_seconds = 0.0;
};

// Detector runs on the raw series from its first sample; predictors see
// min-max values fitted on the training split. Adaptation happens only in
// the test split.
PredictionRun run_prediction(const LabeledSeries& series, const PredictionConfig& config, std::uint64_t seed);

struct PredictionExperiment {
  std::string process = "linear-1";
  PredictionConfig config;
  std::size_t trials = 20;
  std::uint64_t base_seed = 1;
};

LabeledSeries prediction_series(const PredictionExperiment& experiment, std::size_t trial);

std::vector<PredictionRun> run_prediction_serial(const PredictionExperiment& experiment);
std::vector<PredictionRun> run_prediction_parallel(const PredictionExperiment& experiment);

}  // namespace safe
