#pragma once

#include <cstddef>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include "safe/detector.hpp"
#include "safe/predictors.hpp"

namespace safe {

struct AdaptationConfig {
  double beta = 0.1;
  std::size_t u_min = 8;
  std::size_t u_max = 1000;
  // Validate on the last `validation_pairs` pairs ending at the flagged step.
  std::size_t validation_pairs = 1;
  EpochPolicy epochs;

  std::vector<std::string> problems() const;
  void validate() const;
};

// round(beta * |z - sma|), halves rounded away from zero.
std::size_t raw_minibatch_size(double z, double sma, double beta);

// raw_minibatch_size clamped to [u_min, min(u_max, available)].
std::size_t minibatch_size(double z, double sma, const AdaptationConfig& config, std::size_t available);

struct ReplayPair {
  std::vector<double> input;
  double target = 0.0;
  std::size_t time = 0;
};

// Chronological FIFO of (input, target) pairs; oldest pairs are evicted
// once capacity is reached.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  // Times must be strictly increasing.
  void push(std::span<const double> input, double target, std::size_t time);
  void push(const Dataset& data);
  void clear() { pairs_.clear(); }

  std::size_t size() const { return pairs_.size(); }
  bool empty() const { return pairs_.empty(); }
  std::size_t capacity() const { return capacity_; }
  const ReplayPair& operator[](std::size_t i) const { return pairs_[i]; }

  // Number of stored pairs with time < t.
  std::size_t count_before(std::size_t t) const;
  // The `count` most recent pairs with time < t, oldest first.
  Dataset latest_before(std::size_t t, std::size_t count) const;
  // Pairs with time in (t - count, t], oldest first.
  Dataset ending_at(std::size_t t, std::size_t count) const;

 private:
  std::size_t capacity_;
  std::deque<ReplayPair> pairs_;
};

struct AdaptationReport {
  std::size_t t = 0;
  std::size_t u = 0;
  std::size_t epochs = 0;
  double val_err_before = 0.0;
  double val_err_after = 0.0;
  double wall_ms = 0.0;
  bool failed = false;   // training diverged; predictor rolled back
  bool skipped = false;  // nothing to train or validate on
  std::size_t first_train_time = 0;
  std::size_t last_train_time = 0;
  std::string message;
};

// Retrains `predictor` after a non-stationarity flag at time t: the u most
// recent pairs strictly before the validation pairs form the training set,
// the pair(s) ending at t the validation set. The buffer must already hold
// the pair at t. Throws std::logic_error if `outcome.ns` is false or a
// training pair would come from time t or later.
AdaptationReport on_flag(OnlinePredictor& predictor, const ReplayBuffer& buffer, std::size_t t,
                         const DetectionOutcome& outcome, const AdaptationConfig& config);

// Adaptation log CSV: t,u,epochs,val_err_before,val_err_after,wall_ms
void write_adaptation_log(const std::string& path, std::span<const AdaptationReport> reports);

}  // namespace safe
