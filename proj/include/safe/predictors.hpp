#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "safe/rng.hpp"
#include "safe/serialize.hpp"

namespace safe {

// (input, target) pairs with their time indices; inputs are row-major.
struct Dataset {
  std::size_t dim = 0;
  std::vector<double> inputs;
  std::vector<double> targets;
  std::vector<std::size_t> times;

  explicit Dataset(std::size_t input_dim = 0) : dim(input_dim) {}

  std::size_t size() const { return targets.size(); }
  bool empty() const { return targets.empty(); }
  std::span<const double> row(std::size_t i) const { return {inputs.data() + i * dim, dim}; }
  void push(std::span<const double> input, double target, std::size_t time);
  Dataset slice(std::size_t begin, std::size_t end) const;
};

// input = [x(t-p), ..., x(t-1)], target = x(t); no pair until p samples exist.
class LagEmbedding {
 public:
  explicit LagEmbedding(std::size_t order);

  std::size_t order() const { return order_; }

  // Pairs for every t >= order; times are t + time_offset.
  Dataset embed(std::span<const double> series, std::size_t time_offset = 0) const;
  // Input vector for predicting series[t] (needs t >= order).
  std::vector<double> input_at(std::span<const double> series, std::size_t t) const;

 private:
  std::size_t order_;
};

struct EpochPolicy {
  std::size_t max_epochs = 200;
  std::size_t patience = 5;
  std::size_t batch_size = 32;
  bool shuffle = true;
  // Return the parameters of the best validation epoch (epoch 0 = the
  // parameters on entry) rather than those of the last epoch.
  bool keep_best = true;
};

struct FitReport {
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double val_error_before = 0.0;
  double val_error_after = 0.0;
  std::vector<double> val_errors;    // index 0 = before training
  std::vector<double> train_losses;  // one per epoch run
};

// Serialized predictor state (binary, versioned; see save()).
using Snapshot = std::string;

class OnlinePredictor {
 public:
  virtual ~OnlinePredictor() = default;

  virtual std::string kind() const = 0;
  virtual std::size_t input_dim() const = 0;
  virtual double predict(std::span<const double> input) const = 0;
  virtual std::vector<double> predict_batch(const Dataset& data) const;
  virtual bool updatable() const { return true; }

  // Epoch loop with validation-driven early stopping. On a non-finite loss
  // the predictor is restored to its state on entry and TrainingDiverged is
  // thrown.
  FitReport fit_batch(const Dataset& train, const Dataset& validation, const EpochPolicy& policy);

  // One online pass over `data` in order.
  void incremental_fit(const Dataset& data);

  Snapshot snapshot() const;
  void reset_to_snapshot(const Snapshot& snap);

  // Writes magic, format version, kind, hyperparameters, seeds and weights.
  void save(std::ostream& out) const;

  virtual std::unique_ptr<OnlinePredictor> clone() const = 0;

 protected:
  // One training pass; returns the mean training loss.
  virtual double train_epoch(const Dataset& train, const EpochPolicy& policy) = 0;
  virtual double online_pass(const Dataset& data) = 0;
  virtual void save_state(ByteWriter& out) const = 0;
  virtual void load_state(ByteReader& in) = 0;

  // Bracket the epochs of one fit_batch call; `train` outlives the bracket.
  virtual void begin_epochs(const Dataset& /*train*/) {}
  virtual void end_epochs() {}

  friend std::unique_ptr<OnlinePredictor> load_predictor(std::string_view bytes);
};

std::unique_ptr<OnlinePredictor> load_predictor(std::string_view bytes);
std::unique_ptr<OnlinePredictor> load_predictor(std::istream& in);

double mean_squared_error(const OnlinePredictor& model, const Dataset& data);

// ---------------------------------------------------------------------------
// Passive-aggressive regression (PA-I)

struct PARParams {
  double aggressiveness = 0.05;  // C
  double epsilon = 0.01;
  bool fit_intercept = true;     // bias acts as a weight on a constant 1 input
};

struct PAStep {
  double loss = 0.0;  // epsilon-insensitive loss before the update
  double tau = 0.0;
  bool skipped = false;
};

class PassiveAggressiveRegressor final : public OnlinePredictor {
 public:
  PassiveAggressiveRegressor(std::size_t input_dim, PARParams params = {});

  std::string kind() const override { return "par"; }
  std::size_t input_dim() const override { return weights_.size(); }
  double predict(std::span<const double> input) const override;
  std::unique_ptr<OnlinePredictor> clone() const override;

  // tau = min(C, loss / |x|^2); moves the prediction towards the target.
  PAStep update(std::span<const double> input, double target);

  const PARParams& params() const { return params_; }
  const std::vector<double>& weights() const { return weights_; }
  double bias() const { return bias_; }
  void set_weights(std::vector<double> w, double b);
  std::size_t skipped_updates() const { return skipped_; }

 protected:
  double train_epoch(const Dataset& train, const EpochPolicy& policy) override;
  double online_pass(const Dataset& data) override;
  void save_state(ByteWriter& out) const override;
  void load_state(ByteReader& in) override;

 private:
  PARParams params_;
  std::vector<double> weights_;
  double bias_ = 0.0;
  std::size_t skipped_ = 0;
};

// ---------------------------------------------------------------------------
// Random Fourier features + linear epsilon-insensitive SVR trained by SGD

// z_i(x) = sqrt(2 / D) cos(omega_i . x + phase_i)
struct RandomFourierMap {
  std::size_t input_dim = 0;
  std::size_t feature_dim = 0;
  std::vector<double> omega;  // feature_dim x input_dim, row-major
  std::vector<double> phase;

  // omega ~ N(0, I / bandwidth^2), phase ~ U[0, 2 pi), both from `seed`.
  static RandomFourierMap sample(std::size_t input_dim, std::size_t feature_dim, double bandwidth,
                                 std::uint64_t seed);

  std::vector<double> map(std::span<const double> x) const;
  void map_into(std::span<const double> x, std::span<double> z) const;
};

// Median pairwise distance over up to `max_points` evenly spaced rows.
double median_heuristic_bandwidth(const Dataset& data, std::size_t max_points = 400);

enum class LearningRateSchedule { constant, inverse_scaling, optimal };

struct RFFSVRParams {
  std::size_t feature_dim = 512;
  double bandwidth = 1.0;
  double l2 = 1e-3;
  double epsilon = 0.01;
  double eta0 = 0.01;
  LearningRateSchedule schedule = LearningRateSchedule::inverse_scaling;
  double power_t = 0.25;  // inverse_scaling: eta0 / (t + 1)^power_t
  std::uint64_t seed = 1;
};

// Objective of one sample: max(0, |w.z + b - y| - eps) + l2/2 |w|^2, and its
// subgradient with respect to (w, b) (last entry is the bias).
double svr_objective(std::span<const double> w, double b, std::span<const double> z, double y, double epsilon,
                     double l2);
std::vector<double> svr_subgradient(std::span<const double> w, double b, std::span<const double> z, double y,
                                    double epsilon, double l2);

class RffSvr final : public OnlinePredictor {
 public:
  RffSvr(std::size_t input_dim, RFFSVRParams params = {});
  RffSvr(RandomFourierMap map, RFFSVRParams params);

  std::string kind() const override { return "ksvr"; }
  std::size_t input_dim() const override { return map_.input_dim; }
  double predict(std::span<const double> input) const override;
  std::unique_ptr<OnlinePredictor> clone() const override;

  double predict_mapped(std::span<const double> z) const;
  double learning_rate() const;
  // One SGD step on mapped features; returns the loss before the step.
  double sgd_step(std::span<const double> z, double target);

  const RandomFourierMap& feature_map() const { return map_; }
  const RFFSVRParams& params() const { return params_; }
  const std::vector<double>& weights() const { return weights_; }
  double bias() const { return bias_; }
  std::uint64_t steps() const { return steps_; }

 protected:
  double train_epoch(const Dataset& train, const EpochPolicy& policy) override;
  double online_pass(const Dataset& data) override;
  void save_state(ByteWriter& out) const override;
  void load_state(ByteReader& in) override;
  void begin_epochs(const Dataset& train) override;
  void end_epochs() override;

 private:
  RFFSVRParams params_;
  RandomFourierMap map_;
  std::vector<double> weights_;
  double bias_ = 0.0;
  std::uint64_t steps_ = 0;
  CounterRng rng_;
  const Dataset* mapped_source_ = nullptr;  // rows of mapped_ belong to this dataset
  std::vector<double> mapped_;
};

// ---------------------------------------------------------------------------
// Feed-forward network: affine + rectifier hidden layers, linear output

struct MLPParams {
  std::vector<std::size_t> hidden = {200, 200};
  double dropout_rate = 0.1;
  double learning_rate = 1e-3;
  bool relu_output = false;  // clamp predictions at zero (non-negative targets)
  std::uint64_t seed = 1;
};

class Mlp final : public OnlinePredictor {
 public:
  enum class Mode { train, infer };

  Mlp(std::size_t input_dim, MLPParams params = {});

  std::string kind() const override { return "mlp"; }
  std::size_t input_dim() const override { return input_dim_; }
  double predict(std::span<const double> input) const override;
  std::vector<double> predict_batch(const Dataset& data) const override;
  std::unique_ptr<OnlinePredictor> clone() const override;

  // Forward pass over columns of `inputs` (input_dim x n). In train mode
  // dropout masks are drawn from the internal stream (inverted scaling).
  Eigen::RowVectorXd forward(const Eigen::MatrixXd& inputs, Mode mode);

  // Mean squared error and its gradient (flattened like parameters()),
  // with dropout disabled.
  double loss_and_gradient(const Dataset& data, std::vector<double>& gradient) const;
  double loss(const Dataset& data) const;

  std::size_t parameter_count() const;
  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> flat);

  const MLPParams& params() const { return params_; }
  std::size_t layer_count() const { return weights_.size(); }
  Eigen::MatrixXd& weight(std::size_t layer) { return weights_[layer]; }
  Eigen::VectorXd& bias(std::size_t layer) { return biases_[layer]; }

 protected:
  double train_epoch(const Dataset& train, const EpochPolicy& policy) override;
  double online_pass(const Dataset& data) override;
  void save_state(ByteWriter& out) const override;
  void load_state(ByteReader& in) override;

 private:
  struct Cache {
    std::vector<Eigen::MatrixXd> activations;  // post-activation (and dropout) per layer, [0] = input
    std::vector<Eigen::MatrixXd> masks;        // dropout masks per hidden layer (empty = none)
    Eigen::RowVectorXd pre_output;
  };

  Eigen::RowVectorXd forward_impl(const Eigen::MatrixXd& inputs, bool dropout, CounterRng* rng,
                                  Cache* cache) const;
  double batch_gradient(const Eigen::MatrixXd& inputs, const Eigen::RowVectorXd& targets, bool dropout,
                        CounterRng* rng, std::vector<Eigen::MatrixXd>& dw, std::vector<Eigen::VectorXd>& db) const;
  double sgd_batch(const Eigen::MatrixXd& inputs, const Eigen::RowVectorXd& targets);

  std::size_t input_dim_;
  MLPParams params_;
  std::vector<Eigen::MatrixXd> weights_;  // out x in
  std::vector<Eigen::VectorXd> biases_;
  CounterRng rng_;
};

// ---------------------------------------------------------------------------

// The offline-trained model with every update disabled.
class FrozenBaseline final : public OnlinePredictor {
 public:
  explicit FrozenBaseline(std::unique_ptr<OnlinePredictor> model);

  std::string kind() const override { return "baseline"; }
  std::size_t input_dim() const override { return model_->input_dim(); }
  double predict(std::span<const double> input) const override { return model_->predict(input); }
  std::vector<double> predict_batch(const Dataset& data) const override { return model_->predict_batch(data); }
  bool updatable() const override { return false; }
  std::unique_ptr<OnlinePredictor> clone() const override;

  const OnlinePredictor& inner() const { return *model_; }

 protected:
  double train_epoch(const Dataset&, const EpochPolicy&) override { return 0.0; }
  double online_pass(const Dataset&) override { return 0.0; }
  void save_state(ByteWriter& out) const override;
  void load_state(ByteReader& in) override;

 private:
  std::unique_ptr<OnlinePredictor> model_;
};

// ---------------------------------------------------------------------------

enum class PredictorKind { par, ksvr, mlp, baseline };

std::string to_string(PredictorKind kind);
PredictorKind parse_predictor_kind(const std::string& text);

struct PredictorSpec {
  PredictorKind kind = PredictorKind::mlp;
  std::size_t lag_order = 5;
  PARParams par;
  RFFSVRParams rff;
  bool rff_auto_bandwidth = true;  // median heuristic on the training split
  MLPParams mlp;
};

// `train` is only consulted for data-dependent hyperparameters. The
// baseline kind yields an (untrained) MLP; wrap it after offline training.
std::unique_ptr<OnlinePredictor> make_predictor(const PredictorSpec& spec, const Dataset& train,
                                                std::uint64_t seed);

}  // namespace safe
