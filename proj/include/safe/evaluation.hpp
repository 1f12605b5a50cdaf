#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace safe {

struct DetectionScore {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;
  // detection - truth for each matched detection, in detection order
  std::vector<std::ptrdiff_t> delays;
  // number of truths detected -> number of trials
  std::map<std::size_t, std::size_t> detected_count_histogram;

  DetectionScore& operator+=(const DetectionScore& other);
  bool operator==(const DetectionScore&) const = default;
};

struct MatchOptions {
  double tolerance_fraction = 0.05;
  // Accept detections within tolerance before a truth as well as after it.
  bool symmetric = false;
  // Steps before this index (detector warm-up) are not counted as negatives.
  std::size_t eligible_begin = 0;
};

// ceil(fraction * series_len) samples.
std::size_t match_tolerance(std::size_t series_len, double fraction = 0.05);

// Greedy chronological matching of sorted detection indices against sorted
// truth indices. Throws std::invalid_argument for unsorted or out-of-range
// input. TN counts eligible steps that are neither detected nor within
// tolerance of a truth.
DetectionScore match_detections(std::span<const std::size_t> detected, std::span<const std::size_t> truth,
                                std::size_t series_len, const MatchOptions& options = {});

// Turns per-step flags into detection events: a run of consecutive flagged
// steps is one event, split again every `tolerance` steps.
std::vector<std::size_t> collapse_flags(std::span<const std::uint8_t> flags, std::size_t tolerance);

// collapse_flags + match_detections, with every flagged step excluded from TN.
DetectionScore score_flags(std::span<const std::uint8_t> flags, std::span<const std::size_t> truth,
                           const MatchOptions& options = {});

struct DetectionRates {
  std::optional<double> false_alarm;  // FP / (FP + TN)
  std::optional<double> hit;          // TP / (TP + FN)
  std::optional<double> missed;       // 1 - hit
  std::optional<double> specificity;  // TN / (TN + FP)
};

DetectionRates rates(const DetectionScore& score);

// "NA" for an undefined rate.
std::string format_rate(const std::optional<double>& rate, int precision = 4);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1); 0 for n < 2
  std::size_t n = 0;
};

MeanStd mean_std(std::span<const double> values);

// Trial aggregation. `pooled` uses summed counts; `per_trial_mean` averages
// each trial's own rates over the trials where that rate is defined.
struct DetectionSummary {
  DetectionScore pooled;
  DetectionRates pooled_rates;
  DetectionRates per_trial_mean;
  MeanStd delay;  // over matched detections only
  std::size_t trials = 0;
};

DetectionSummary aggregate(std::span<const DetectionScore> trials);

struct PredictionScore {
  double overall_mse = 0.0;
  std::vector<double> mse_trajectory;  // running mean of squared errors
  double percent_update = 0.0;
  std::size_t updates = 0;
  std::size_t eligible_steps = 0;
  double exec_time_s = 0.0;
};

// update_flags[i] != 0 marks step i as an update step. Every step is eligible.
PredictionScore prediction_score(std::span<const double> predictions, std::span<const double> targets,
                                 std::span<const std::uint8_t> update_flags, double wall_time_s);

}  // namespace safe
