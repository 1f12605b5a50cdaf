#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "safe/features.hpp"

namespace safe {

enum class DistanceKind { euclidean, abs_pearson, abs_cosine };

std::string to_string(DistanceKind kind);
DistanceKind parse_distance_kind(const std::string& text);

// euclidean: sqrt(sum (a_i - b_i)^2)
// abs_cosine: 1 - |cos(a, b)|
// abs_pearson: 1 - |corr(a, b)|
// For the two correlation distances, a zero-norm (zero-variance) argument
// gives 1, or 0 when both are degenerate.
double distance(std::span<const double> a, std::span<const double> b, DistanceKind kind);
double distance(const FeatureVector& a, const FeatureVector& b, DistanceKind kind);

// Z(t) = (1 - lambda) Z(t-1) + lambda d
double ewma_update(double z_prev, double d, double lambda);

// Where sigma_x enters the EWMA standard deviation:
//   outside_sqrt: sigma_x * sqrt(lambda / (2 - lambda) * (1 - (1 - lambda)^(2t)))
//   inside_sqrt:  sqrt(lambda / (2 - lambda) * (1 - (1 - lambda)^(2t)) * sigma_x)
enum class SigmaPlacement { outside_sqrt, inside_sqrt };

std::string to_string(SigmaPlacement placement);
SigmaPlacement parse_sigma_placement(const std::string& text);

double sigma_z(std::size_t t, double lambda, double sigma_x, SigmaPlacement placement);

enum class Zone { stationary, warning, trigger };
std::string to_string(Zone zone);

struct DetectorConfig {
  double lambda = 0.3;
  double warning_mult = 2.85;
  double trigger_mult = 3.35;
  std::size_t warning_duration = 3;
  std::size_t sma_window = 20;
  std::size_t stft_window = 5;
  DistanceKind distance = DistanceKind::euclidean;
  FeatureKind features = FeatureKind::spectral_energy;
  SigmaPlacement sigma_placement = SigmaPlacement::inside_sqrt;

  // Every violated constraint, for reporting all at once.
  std::vector<std::string> problems() const;
  void validate() const;  // throws ConfigError listing problems()
  bool lambda_in_recommended_range() const { return lambda >= 0.1 && lambda <= 0.3; }

  // Calibrated warning/trigger multipliers per distance (lambda = 0.3, SMA 20).
  static DetectorConfig for_distance(DistanceKind kind);
};

struct DetectionOutcome {
  std::size_t t = 0;  // 1-based step count
  double d = 0.0;
  double z = 0.0;
  double sma = 0.0;
  double sigma = 0.0;
  double deviation = 0.0;  // |Z - sma|
  Zone zone = Zone::stationary;
  bool ns = false;
  std::size_t warning_count = 0;

  double warning_limit(double w) const { return sma + w * sigma; }
};

// The EWMA/SMA decision logic applied to a stream of distances.
class ControlChart {
 public:
  struct State {
    std::size_t t = 0;
    double z = 0.0;
    std::vector<double> history;  // ring buffer of the last sma_window distances
    std::size_t head = 0;
    std::size_t count = 0;
    std::size_t warning_count = 0;

    bool operator==(const State&) const = default;
  };

  // Steps 1..warmup_steps never raise ns (zone reported stationary).
  explicit ControlChart(const DetectorConfig& config, std::size_t warmup_steps = 0);

  DetectionOutcome update(double d);
  void reset();

  const State& state() const { return state_; }
  const DetectorConfig& config() const { return config_; }

 private:
  DetectorConfig config_;
  std::size_t warmup_;
  State state_;
};

struct DetectorState {
  ControlChart::State chart;
  WindowBuffer window{1};
  std::optional<FeatureVector> prev_features;
  bool poisoned = false;
};

// Full online pipeline for one stream: window, features, distance, chart.
// Single-writer; copies are independent.
class Detector {
 public:
  explicit Detector(const DetectorConfig& config);

  // Throws StreamPoisoned for a non-finite sample and on every call after
  // that until reset().
  DetectionOutcome step(double x);
  void reset();

  DetectorState state() const;
  const DetectorConfig& config() const { return config_; }
  const FeatureVector& last_features() const { return current_; }

 private:
  DetectorConfig config_;
  FeatureExtractor extractor_;
  WindowBuffer window_;
  ControlChart chart_;
  std::vector<double> frame_;
  FeatureVector current_;
  FeatureVector previous_;
  bool has_previous_ = false;
  bool poisoned_ = false;
};

}  // namespace safe
