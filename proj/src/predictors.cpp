#include "safe/predictors.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <iterator>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>

#include "safe/errors.hpp"
#include "text.hpp"

namespace safe {

namespace {

constexpr char kMagic[8] = {'S', 'A', 'F', 'E', 'P', 'R', 'E', 'D'};
constexpr std::uint32_t kFormatVersion = 1;

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void check_dim(const Dataset& data, std::size_t dim, const char* what) {
  if (data.dim != dim)
    throw ConfigError(std::string(what) + " has input dimension " + std::to_string(data.dim) + ", model expects " +
                      std::to_string(dim));
}

std::vector<std::size_t> epoch_order(std::size_t n, bool shuffle, CounterRng* rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle && rng) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng->below(i)]);
  }
  return order;
}

}  // namespace

// ---------------------------------------------------------------------------

void Dataset::push(std::span<const double> input, double target, std::size_t time) {
  if (input.size() != dim) throw ConfigError("dataset row has wrong dimension");
  inputs.insert(inputs.end(), input.begin(), input.end());
  targets.push_back(target);
  times.push_back(time);
}

Dataset Dataset::slice(std::size_t begin, std::size_t end) const {
  end = std::min(end, size());
  begin = std::min(begin, end);
  Dataset out(dim);
  out.inputs.assign(inputs.begin() + static_cast<std::ptrdiff_t>(begin * dim),
                    inputs.begin() + static_cast<std::ptrdiff_t>(end * dim));
  out.targets.assign(targets.begin() + static_cast<std::ptrdiff_t>(begin),
                     targets.begin() + static_cast<std::ptrdiff_t>(end));
  out.times.assign(times.begin() + static_cast<std::ptrdiff_t>(begin),
                   times.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

LagEmbedding::LagEmbedding(std::size_t order) : order_(order) {
  if (order == 0) throw ConfigError("lag order must be >= 1");
}

Dataset LagEmbedding::embed(std::span<const double> series, std::size_t time_offset) const {
  Dataset out(order_);
  if (series.size() <= order_) return out;
  const std::size_t n = series.size() - order_;
  out.inputs.reserve(n * order_);
  out.targets.reserve(n);
  out.times.reserve(n);
  for (std::size_t t = order_; t < series.size(); ++t)
    out.push(series.subspan(t - order_, order_), series[t], t + time_offset);
  return out;
}

std::vector<double> LagEmbedding::input_at(std::span<const double> series, std::size_t t) const {
  if (t < order_ || t > series.size()) throw ConfigError("lag input requested before enough history");
  return {series.begin() + static_cast<std::ptrdiff_t>(t - order_), series.begin() + static_cast<std::ptrdiff_t>(t)};
}

// ---------------------------------------------------------------------------

std::vector<double> OnlinePredictor::predict_batch(const Dataset& data) const {
  std::vector<double> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) out[i] = predict(data.row(i));
  return out;
}

double mean_squared_error(const OnlinePredictor& model, const Dataset& data) {
  if (data.empty()) throw ConfigError("mean squared error of an empty dataset");
  const auto pred = model.predict_batch(data);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - data.targets[i];
    acc += e * e;
  }
  return acc / static_cast<double>(pred.size());
}

FitReport OnlinePredictor::fit_batch(const Dataset& train, const Dataset& validation, const EpochPolicy& policy) {
  if (train.empty()) throw ConfigError("fit_batch needs at least one training pair");
  if (validation.empty()) throw ConfigError("fit_batch needs at least one validation pair");
  check_dim(train, input_dim(), "training data");
  check_dim(validation, input_dim(), "validation data");

  FitReport report;
  double best = mean_squared_error(*this, validation);
  report.val_errors.push_back(best);
  report.val_error_before = best;
  report.val_error_after = best;
  if (!updatable() || policy.max_epochs == 0) return report;

  const Snapshot entry = snapshot();
  Snapshot best_state;
  std::size_t stale = 0;

  begin_epochs(train);
  struct EpochBracket {
    OnlinePredictor* owner;
    ~EpochBracket() { owner->end_epochs(); }
  } bracket{this};

  for (std::size_t epoch = 1; epoch <= policy.max_epochs; ++epoch) {
    const double loss = train_epoch(train, policy);
    const double val = std::isfinite(loss) ? mean_squared_error(*this, validation) : loss;
    if (!std::isfinite(loss) || !std::isfinite(val)) {
      reset_to_snapshot(entry);
      throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) + "; parameters restored");
    }
    report.train_losses.push_back(loss);
    report.val_errors.push_back(val);
    report.epochs_run = epoch;
    if (val < best) {
      best = val;
      report.best_epoch = epoch;
      stale = 0;
      if (policy.keep_best) best_state = snapshot();
    } else if (++stale >= policy.patience) {
      break;
    }
  }

  if (policy.keep_best && report.best_epoch != report.epochs_run) {
    reset_to_snapshot(report.best_epoch == 0 ? entry : best_state);
    report.val_error_after = best;
  } else {
    report.val_error_after = report.val_errors.back();
  }
  return report;
}

void OnlinePredictor::incremental_fit(const Dataset& data) {
  if (!updatable() || data.empty()) return;
  check_dim(data, input_dim(), "update data");
  const Snapshot entry = snapshot();
  const double loss = online_pass(data);
  if (!std::isfinite(loss)) {
    reset_to_snapshot(entry);
    throw TrainingDiverged("non-finite loss during incremental update; parameters restored");
  }
}

Snapshot OnlinePredictor::snapshot() const {
  ByteWriter w;
  w.put_raw(std::string_view(kMagic, sizeof kMagic));
  w.put<std::uint32_t>(kFormatVersion);
  w.put_string(kind());
  save_state(w);
  return w.take();
}

namespace {

std::string read_header(ByteReader& r) {
  char magic[sizeof kMagic];
  for (char& c : magic) c = r.get<char>();
  if (!std::equal(std::begin(magic), std::end(magic), std::begin(kMagic)))
    throw DataError("not a predictor snapshot (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kFormatVersion)
    throw DataError("unsupported snapshot version " + std::to_string(version) + " (expected " +
                    std::to_string(kFormatVersion) + ")");
  return r.get_string();
}

}  // namespace

void OnlinePredictor::reset_to_snapshot(const Snapshot& snap) {
  ByteReader r(snap);
  const auto k = read_header(r);
  if (k != kind()) throw DataError("snapshot of kind '" + k + "' cannot restore a '" + kind() + "' predictor");
  load_state(r);
}

void OnlinePredictor::save(std::ostream& out) const {
  const auto bytes = snapshot();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed to write predictor snapshot");
}

std::unique_ptr<OnlinePredictor> load_predictor(std::string_view bytes) {
  ByteReader r(bytes);
  const auto k = read_header(r);
  std::unique_ptr<OnlinePredictor> model;
  if (k == "par") {
    model = std::make_unique<PassiveAggressiveRegressor>(1);
  } else if (k == "ksvr") {
    RFFSVRParams p;
    p.feature_dim = 1;
    model = std::make_unique<RffSvr>(1, p);
  } else if (k == "mlp") {
    MLPParams p;
    p.hidden.clear();
    model = std::make_unique<Mlp>(1, p);
  } else if (k == "baseline") {
    MLPParams p;
    p.hidden.clear();
    model = std::make_unique<FrozenBaseline>(std::make_unique<Mlp>(1, p));
  } else {
    throw DataError("unknown predictor kind '" + k + "' in snapshot");
  }
  model->load_state(r);
  if (!r.done()) throw DataError("trailing bytes after predictor snapshot");
  return model;
}

std::unique_ptr<OnlinePredictor> load_predictor(std::istream& in) {
  std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return load_predictor(std::string_view(bytes));
}

// ---------------------------------------------------------------------------

PassiveAggressiveRegressor::PassiveAggressiveRegressor(std::size_t input_dim, PARParams params)
    : params_(params), weights_(input_dim, 0.0) {
  if (input_dim == 0) throw ConfigError("PAR input dimension must be >= 1");
  if (!(params.aggressiveness > 0.0)) throw ConfigError("PAR aggressiveness must be > 0");
  if (!(params.epsilon >= 0.0)) throw ConfigError("PAR epsilon must be >= 0");
}

double PassiveAggressiveRegressor::predict(std::span<const double> input) const {
  double y = bias_;
  for (std::size_t i = 0; i < weights_.size(); ++i) y += weights_[i] * input[i];
  return y;
}

std::unique_ptr<OnlinePredictor> PassiveAggressiveRegressor::clone() const {
  return std::make_unique<PassiveAggressiveRegressor>(*this);
}

void PassiveAggressiveRegressor::set_weights(std::vector<double> w, double b) {
  if (w.size() != weights_.size()) throw ConfigError("PAR weight vector has wrong length");
  weights_ = std::move(w);
  bias_ = b;
}

PAStep PassiveAggressiveRegressor::update(std::span<const double> input, double target) {
  PAStep step;
  const double residual = target - predict(input);
  step.loss = std::max(0.0, std::abs(residual) - params_.epsilon);
  if (step.loss == 0.0) return step;

  double norm2 = params_.fit_intercept ? 1.0 : 0.0;
  for (double v : input) norm2 += v * v;
  if (!(norm2 > 0.0)) {
    if (skipped_++ == 0) text::warn("PAR: zero input vector with nonzero loss; update skipped");
    step.skipped = true;
    return step;
  }
  step.tau = std::min(params_.aggressiveness, step.loss / norm2);
  const double move = residual > 0.0 ? step.tau : -step.tau;
  for (std::size_t i = 0; i < weights_.size(); ++i) weights_[i] += move * input[i];
  if (params_.fit_intercept) bias_ += move;
  return step;
}

double PassiveAggressiveRegressor::online_pass(const Dataset& data) {
  double acc = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!all_finite(data.row(i)) || !std::isfinite(data.targets[i])) return std::numeric_limits<double>::quiet_NaN();
    acc += update(data.row(i), data.targets[i]).loss;
  }
  if (!all_finite(weights_) || !std::isfinite(bias_)) return std::numeric_limits<double>::quiet_NaN();
  return acc / static_cast<double>(data.size());
}

double PassiveAggressiveRegressor::train_epoch(const Dataset& train, const EpochPolicy&) { return online_pass(train); }

void PassiveAggressiveRegressor::save_state(ByteWriter& out) const {
  out.put(params_.aggressiveness);
  out.put(params_.epsilon);
  out.put<std::uint8_t>(params_.fit_intercept);
  out.put_array<double>(weights_);
  out.put(bias_);
  out.put<std::uint64_t>(skipped_);
}

void PassiveAggressiveRegressor::load_state(ByteReader& in) {
  params_.aggressiveness = in.get<double>();
  params_.epsilon = in.get<double>();
  params_.fit_intercept = in.get<std::uint8_t>() != 0;
  weights_ = in.get_array<double>();
  bias_ = in.get<double>();
  skipped_ = in.get<std::uint64_t>();
}

// ---------------------------------------------------------------------------

RandomFourierMap RandomFourierMap::sample(std::size_t input_dim, std::size_t feature_dim, double bandwidth,
                                          std::uint64_t seed) {
  if (input_dim == 0 || feature_dim == 0) throw ConfigError("random feature map dimensions must be >= 1");
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) throw ConfigError("RFF bandwidth must be > 0");
  RandomFourierMap m;
  m.input_dim = input_dim;
  m.feature_dim = feature_dim;
  m.omega.resize(input_dim * feature_dim);
  m.phase.resize(feature_dim);
  CounterRng omega_rng(derive_seed(seed, 1));
  CounterRng phase_rng(derive_seed(seed, 2));
  for (double& w : m.omega) w = omega_rng.normal() / bandwidth;
  for (double& p : m.phase) p = phase_rng.uniform(0.0, 2.0 * std::numbers::pi);
  return m;
}

void RandomFourierMap::map_into(std::span<const double> x, std::span<double> z) const {
  const double scale = std::sqrt(2.0 / static_cast<double>(feature_dim));
  for (std::size_t i = 0; i < feature_dim; ++i) {
    const double* row = omega.data() + i * input_dim;
    double a = phase[i];
    for (std::size_t j = 0; j < input_dim; ++j) a += row[j] * x[j];
    z[i] = scale * std::cos(a);
  }
}

std::vector<double> RandomFourierMap::map(std::span<const double> x) const {
  if (x.size() != input_dim) throw ConfigError("random feature map input has wrong dimension");
  std::vector<double> z(feature_dim);
  map_into(x, z);
  return z;
}

double median_heuristic_bandwidth(const Dataset& data, std::size_t max_points) {
  const std::size_t n = data.size();
  if (n < 2) return 1.0;
  const std::size_t m = std::min(n, std::max<std::size_t>(max_points, 2));
  std::vector<std::size_t> idx(m);
  for (std::size_t i = 0; i < m; ++i) idx[i] = i * (n - 1) / (m - 1);
  std::vector<double> dists;
  dists.reserve(m * (m - 1) / 2);
  for (std::size_t a = 0; a < m; ++a) {
    const auto ra = data.row(idx[a]);
    for (std::size_t b = a + 1; b < m; ++b) {
      const auto rb = data.row(idx[b]);
      double s = 0.0;
      for (std::size_t k = 0; k < data.dim; ++k) s += (ra[k] - rb[k]) * (ra[k] - rb[k]);
      dists.push_back(std::sqrt(s));
    }
  }
  auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
  std::nth_element(dists.begin(), mid, dists.end());
  return *mid > 0.0 && std::isfinite(*mid) ? *mid : 1.0;
}

double svr_objective(std::span<const double> w, double b, std::span<const double> z, double y, double epsilon,
                     double l2) {
  double pred = b, norm2 = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    pred += w[i] * z[i];
    norm2 += w[i] * w[i];
  }
  return std::max(0.0, std::abs(pred - y) - epsilon) + 0.5 * l2 * norm2;
}

std::vector<double> svr_subgradient(std::span<const double> w, double b, std::span<const double> z, double y,
                                    double epsilon, double l2) {
  double pred = b;
  for (std::size_t i = 0; i < w.size(); ++i) pred += w[i] * z[i];
  const double r = pred - y;
  const double s = std::abs(r) > epsilon ? (r > 0.0 ? 1.0 : -1.0) : 0.0;
  std::vector<double> g(w.size() + 1);
  for (std::size_t i = 0; i < w.size(); ++i) g[i] = s * z[i] + l2 * w[i];
  g[w.size()] = s;
  return g;
}

namespace {

void check_rff_params(const RFFSVRParams& p) {
  if (p.feature_dim == 0) throw ConfigError("RFF feature dimension must be >= 1");
  if (!(p.l2 >= 0.0)) throw ConfigError("RFF l2 penalty must be >= 0");
  if (!(p.epsilon >= 0.0)) throw ConfigError("RFF epsilon must be >= 0");
  if (!(p.eta0 > 0.0)) throw ConfigError("RFF eta0 must be > 0");
  if (p.schedule == LearningRateSchedule::optimal && !(p.l2 > 0.0))
    throw ConfigError("the optimal learning-rate schedule needs l2 > 0");
}

}  // namespace

RffSvr::RffSvr(std::size_t input_dim, RFFSVRParams params)
    : RffSvr(RandomFourierMap::sample(input_dim, params.feature_dim, params.bandwidth, params.seed), params) {}

RffSvr::RffSvr(RandomFourierMap map, RFFSVRParams params)
    : params_(params), map_(std::move(map)), weights_(map_.feature_dim, 0.0), rng_(derive_seed(params.seed, 3)) {
  params_.feature_dim = map_.feature_dim;
  check_rff_params(params_);
  if (map_.omega.size() != map_.feature_dim * map_.input_dim || map_.phase.size() != map_.feature_dim)
    throw ConfigError("inconsistent random feature map");
}

double RffSvr::predict_mapped(std::span<const double> z) const {
  double y = bias_;
  for (std::size_t i = 0; i < weights_.size(); ++i) y += weights_[i] * z[i];
  return y;
}

double RffSvr::predict(std::span<const double> input) const {
  std::vector<double> z(map_.feature_dim);
  map_.map_into(input, z);
  return predict_mapped(z);
}

std::unique_ptr<OnlinePredictor> RffSvr::clone() const { return std::make_unique<RffSvr>(*this); }

double RffSvr::learning_rate() const {
  const double t = static_cast<double>(steps_);
  switch (params_.schedule) {
    case LearningRateSchedule::constant: return params_.eta0;
    case LearningRateSchedule::inverse_scaling: return params_.eta0 / std::pow(t + 1.0, params_.power_t);
    case LearningRateSchedule::optimal: {
      const double t0 = 1.0 / (params_.l2 * params_.eta0);
      return 1.0 / (params_.l2 * (t0 + t));
    }
  }
  return params_.eta0;
}

double RffSvr::sgd_step(std::span<const double> z, double target) {
  const double eta = learning_rate();
  const double r = predict_mapped(z) - target;
  const double loss = std::max(0.0, std::abs(r) - params_.epsilon);
  const double s = loss > 0.0 ? (r > 0.0 ? 1.0 : -1.0) : 0.0;
  const double shrink = 1.0 - eta * params_.l2;
  for (std::size_t i = 0; i < weights_.size(); ++i) weights_[i] = shrink * weights_[i] - eta * s * z[i];
  bias_ -= eta * s;
  ++steps_;
  return loss;
}

void RffSvr::begin_epochs(const Dataset& train) {
  const std::size_t d = map_.feature_dim;
  mapped_.resize(train.size() * d);
  for (std::size_t i = 0; i < train.size(); ++i)
    map_.map_into(train.row(i), std::span<double>(mapped_).subspan(i * d, d));
  mapped_source_ = &train;
}

void RffSvr::end_epochs() {
  mapped_source_ = nullptr;
  mapped_.clear();
}

double RffSvr::train_epoch(const Dataset& train, const EpochPolicy& policy) {
  const auto order = epoch_order(train.size(), policy.shuffle, &rng_);
  const std::size_t d = map_.feature_dim;
  const bool cached = mapped_source_ == &train;
  std::vector<double> z(cached ? 0 : d);
  double acc = 0.0;
  for (std::size_t i : order) {
    if (cached) {
      acc += sgd_step(std::span<const double>(mapped_).subspan(i * d, d), train.targets[i]);
    } else {
      map_.map_into(train.row(i), z);
      acc += sgd_step(z, train.targets[i]);
    }
  }
  if (!all_finite(weights_) || !std::isfinite(bias_)) return std::numeric_limits<double>::quiet_NaN();
  return acc / static_cast<double>(train.size());
}

double RffSvr::online_pass(const Dataset& data) {
  EpochPolicy chronological;
  chronological.shuffle = false;
  return train_epoch(data, chronological);
}

void RffSvr::save_state(ByteWriter& out) const {
  out.put<std::uint64_t>(map_.input_dim);
  out.put<std::uint64_t>(map_.feature_dim);
  out.put_array<double>(map_.omega);
  out.put_array<double>(map_.phase);
  out.put(params_.bandwidth);
  out.put(params_.l2);
  out.put(params_.epsilon);
  out.put(params_.eta0);
  out.put<std::uint32_t>(static_cast<std::uint32_t>(params_.schedule));
  out.put(params_.power_t);
  out.put<std::uint64_t>(params_.seed);
  out.put_array<double>(weights_);
  out.put(bias_);
  out.put<std::uint64_t>(steps_);
  out.put<std::uint64_t>(rng_.seed());
  out.put<std::uint64_t>(rng_.counter());
}

void RffSvr::load_state(ByteReader& in) {
  map_.input_dim = in.get<std::uint64_t>();
  map_.feature_dim = in.get<std::uint64_t>();
  map_.omega = in.get_array<double>();
  map_.phase = in.get_array<double>();
  params_.feature_dim = map_.feature_dim;
  params_.bandwidth = in.get<double>();
  params_.l2 = in.get<double>();
  params_.epsilon = in.get<double>();
  params_.eta0 = in.get<double>();
  const auto sched = in.get<std::uint32_t>();
  if (sched > 2) throw DataError("unknown learning-rate schedule in snapshot");
  params_.schedule = static_cast<LearningRateSchedule>(sched);
  params_.power_t = in.get<double>();
  params_.seed = in.get<std::uint64_t>();
  weights_ = in.get_array<double>();
  bias_ = in.get<double>();
  steps_ = in.get<std::uint64_t>();
  const auto seed = in.get<std::uint64_t>();
  const auto counter = in.get<std::uint64_t>();
  rng_ = CounterRng(seed, counter);
  if (weights_.size() != map_.feature_dim || map_.omega.size() != map_.feature_dim * map_.input_dim)
    throw DataError("inconsistent RFF snapshot");
}

// ---------------------------------------------------------------------------

Mlp::Mlp(std::size_t input_dim, MLPParams params)
    : input_dim_(input_dim), params_(std::move(params)), rng_(derive_seed(params_.seed, 0x11)) {
  if (input_dim == 0) throw ConfigError("MLP input dimension must be >= 1");
  if (!(params_.dropout_rate >= 0.0 && params_.dropout_rate < 1.0))
    throw ConfigError("dropout rate must lie in [0, 1)");
  if (!(params_.learning_rate > 0.0)) throw ConfigError("MLP learning rate must be > 0");
  for (std::size_t h : params_.hidden)
    if (h == 0) throw ConfigError("hidden layer width must be >= 1");

  std::vector<std::size_t> sizes{input_dim};
  sizes.insert(sizes.end(), params_.hidden.begin(), params_.hidden.end());
  sizes.push_back(1);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const auto fan_in = static_cast<double>(sizes[l]);
    const bool feeds_relu = l + 2 < sizes.size();
    const double sd = std::sqrt((feeds_relu ? 2.0 : 1.0) / fan_in);
    Eigen::MatrixXd w(sizes[l + 1], sizes[l]);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = sd * rng_.normal();
    weights_.push_back(std::move(w));
    biases_.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(sizes[l + 1])));
  }
}

std::unique_ptr<OnlinePredictor> Mlp::clone() const { return std::make_unique<Mlp>(*this); }

Eigen::RowVectorXd Mlp::forward_impl(const Eigen::MatrixXd& inputs, bool dropout, CounterRng* rng,
                                     Cache* cache) const {
  const std::size_t layers = weights_.size();
  const bool drop = dropout && params_.dropout_rate > 0.0;
  const double keep_scale = 1.0 / (1.0 - params_.dropout_rate);
  if (cache) {
    cache->activations.assign(1, inputs);
    cache->masks.assign(layers - 1, Eigen::MatrixXd());
  }
  Eigen::MatrixXd a = inputs;
  for (std::size_t l = 0; l + 1 < layers; ++l) {
    Eigen::MatrixXd h = (weights_[l] * a).colwise() + biases_[l];
    h = h.cwiseMax(0.0);
    if (drop) {
      Eigen::MatrixXd mask(h.rows(), h.cols());
      for (Eigen::Index j = 0; j < mask.cols(); ++j)
        for (Eigen::Index i = 0; i < mask.rows(); ++i)
          mask(i, j) = rng->uniform() > params_.dropout_rate ? keep_scale : 0.0;
      h = h.cwiseProduct(mask);
      if (cache) cache->masks[l] = std::move(mask);
    }
    if (cache) cache->activations.push_back(h);
    a = std::move(h);
  }
  Eigen::RowVectorXd out = (weights_.back() * a).colwise() + biases_.back();
  if (cache) cache->pre_output = out;
  if (params_.relu_output) out = out.cwiseMax(0.0);
  return out;
}

Eigen::RowVectorXd Mlp::forward(const Eigen::MatrixXd& inputs, Mode mode) {
  return forward_impl(inputs, mode == Mode::train, &rng_, nullptr);
}

double Mlp::predict(std::span<const double> input) const {
  if (input.size() != input_dim_) throw ConfigError("MLP input has wrong dimension");
  Eigen::VectorXd a = Eigen::Map<const Eigen::VectorXd>(input.data(), static_cast<Eigen::Index>(input_dim_));
  for (std::size_t l = 0; l + 1 < weights_.size(); ++l) a = ((weights_[l] * a) + biases_[l]).cwiseMax(0.0);
  double y = weights_.back().row(0).dot(a) + biases_.back()(0);
  return params_.relu_output ? std::max(0.0, y) : y;
}

namespace {

Eigen::MatrixXd columns(const Dataset& data, std::span<const std::size_t> rows) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(data.dim), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t j = 0; j < rows.size(); ++j) {
    const auto r = data.row(rows[j]);
    for (std::size_t i = 0; i < data.dim; ++i) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = r[i];
  }
  return x;
}

Eigen::MatrixXd all_columns(const Dataset& data) {
  // Row-major n x dim storage is a column-major dim x n matrix.
  return Eigen::Map<const Eigen::MatrixXd>(data.inputs.data(), static_cast<Eigen::Index>(data.dim),
                                           static_cast<Eigen::Index>(data.size()));
}

}  // namespace

std::vector<double> Mlp::predict_batch(const Dataset& data) const {
  check_dim(data, input_dim_, "prediction data");
  if (data.empty()) return {};
  const Eigen::RowVectorXd out = forward_impl(all_columns(data), false, nullptr, nullptr);
  return {out.data(), out.data() + out.size()};
}

double Mlp::batch_gradient(const Eigen::MatrixXd& inputs, const Eigen::RowVectorXd& targets, bool dropout,
                           CounterRng* rng, std::vector<Eigen::MatrixXd>& dw,
                           std::vector<Eigen::VectorXd>& db) const {
  Cache cache;
  const Eigen::RowVectorXd out = forward_impl(inputs, dropout, rng, &cache);
  const auto n = static_cast<double>(inputs.cols());
  const Eigen::RowVectorXd err = out - targets;
  const double loss = err.squaredNorm() / n;

  Eigen::MatrixXd delta = (2.0 / n) * err;
  if (params_.relu_output) delta = delta.cwiseProduct((cache.pre_output.array() > 0.0).cast<double>().matrix());

  const std::size_t layers = weights_.size();
  dw.resize(layers);
  db.resize(layers);
  for (std::size_t l = layers; l-- > 0;) {
    const Eigen::MatrixXd& a = cache.activations[l];
    dw[l].noalias() = delta * a.transpose();
    db[l] = delta.rowwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd back = weights_[l].transpose() * delta;
    back = back.cwiseProduct((a.array() > 0.0).cast<double>().matrix());
    if (cache.masks[l - 1].size() > 0) back = back.cwiseProduct(cache.masks[l - 1]);
    delta = std::move(back);
  }
  return loss;
}

double Mlp::loss(const Dataset& data) const {
  check_dim(data, input_dim_, "loss data");
  const Eigen::RowVectorXd out = forward_impl(all_columns(data), false, nullptr, nullptr);
  const Eigen::RowVectorXd y = Eigen::Map<const Eigen::RowVectorXd>(data.targets.data(),
                                                                    static_cast<Eigen::Index>(data.size()));
  return (out - y).squaredNorm() / static_cast<double>(data.size());
}

double Mlp::loss_and_gradient(const Dataset& data, std::vector<double>& gradient) const {
  check_dim(data, input_dim_, "gradient data");
  if (data.empty()) throw ConfigError("gradient of an empty dataset");
  std::vector<Eigen::MatrixXd> dw;
  std::vector<Eigen::VectorXd> db;
  const Eigen::RowVectorXd y = Eigen::Map<const Eigen::RowVectorXd>(data.targets.data(),
                                                                    static_cast<Eigen::Index>(data.size()));
  const double l = batch_gradient(all_columns(data), y, false, nullptr, dw, db);
  gradient.clear();
  gradient.reserve(parameter_count());
  for (std::size_t k = 0; k < dw.size(); ++k) {
    gradient.insert(gradient.end(), dw[k].data(), dw[k].data() + dw[k].size());
    gradient.insert(gradient.end(), db[k].data(), db[k].data() + db[k].size());
  }
  return l;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l)
    n += static_cast<std::size_t>(weights_[l].size() + biases_[l].size());
  return n;
}

std::vector<double> Mlp::parameters() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    flat.insert(flat.end(), weights_[l].data(), weights_[l].data() + weights_[l].size());
    flat.insert(flat.end(), biases_[l].data(), biases_[l].data() + biases_[l].size());
  }
  return flat;
}

void Mlp::set_parameters(std::span<const double> flat) {
  if (flat.size() != parameter_count()) throw ConfigError("parameter vector has wrong length");
  std::size_t pos = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    std::copy_n(flat.data() + pos, weights_[l].size(), weights_[l].data());
    pos += static_cast<std::size_t>(weights_[l].size());
    std::copy_n(flat.data() + pos, biases_[l].size(), biases_[l].data());
    pos += static_cast<std::size_t>(biases_[l].size());
  }
}

double Mlp::sgd_batch(const Eigen::MatrixXd& inputs, const Eigen::RowVectorXd& targets) {
  std::vector<Eigen::MatrixXd> dw;
  std::vector<Eigen::VectorXd> db;
  const double l = batch_gradient(inputs, targets, true, &rng_, dw, db);
  for (std::size_t k = 0; k < weights_.size(); ++k) {
    weights_[k].noalias() -= params_.learning_rate * dw[k];
    biases_[k].noalias() -= params_.learning_rate * db[k];
  }
  return l;
}

double Mlp::train_epoch(const Dataset& train, const EpochPolicy& policy) {
  const std::size_t n = train.size();
  const std::size_t batch = std::max<std::size_t>(policy.batch_size, 1);
  const auto order = epoch_order(n, policy.shuffle, &rng_);
  double acc = 0.0;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t end = std::min(n, start + batch);
    const std::span<const std::size_t> rows(order.data() + start, end - start);
    Eigen::RowVectorXd y(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t j = 0; j < rows.size(); ++j) y(static_cast<Eigen::Index>(j)) = train.targets[rows[j]];
    const double l = sgd_batch(columns(train, rows), y);
    if (!std::isfinite(l)) return l;
    acc += l * static_cast<double>(rows.size());
  }
  for (const auto& w : weights_)
    if (!w.allFinite()) return std::numeric_limits<double>::quiet_NaN();
  return acc / static_cast<double>(n);
}

double Mlp::online_pass(const Dataset& data) {
  EpochPolicy chronological;
  chronological.shuffle = false;
  return train_epoch(data, chronological);
}

void Mlp::save_state(ByteWriter& out) const {
  out.put<std::uint64_t>(input_dim_);
  out.put_array<std::size_t>(params_.hidden);
  out.put(params_.dropout_rate);
  out.put(params_.learning_rate);
  out.put<std::uint8_t>(params_.relu_output);
  out.put<std::uint64_t>(params_.seed);
  out.put<std::uint64_t>(rng_.seed());
  out.put<std::uint64_t>(rng_.counter());
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.put_array<double>({weights_[l].data(), static_cast<std::size_t>(weights_[l].size())});
    out.put_array<double>({biases_[l].data(), static_cast<std::size_t>(biases_[l].size())});
  }
}

void Mlp::load_state(ByteReader& in) {
  const auto dim = in.get<std::uint64_t>();
  auto hidden = in.get_array<std::size_t>();
  if (dim != input_dim_ || hidden != params_.hidden) {
    MLPParams shape = params_;
    shape.hidden = hidden;
    *this = Mlp(dim, shape);
  }
  params_.dropout_rate = in.get<double>();
  params_.learning_rate = in.get<double>();
  params_.relu_output = in.get<std::uint8_t>() != 0;
  params_.seed = in.get<std::uint64_t>();
  const auto seed = in.get<std::uint64_t>();
  const auto counter = in.get<std::uint64_t>();
  rng_ = CounterRng(seed, counter);
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    in.get_array_into<double>({weights_[l].data(), static_cast<std::size_t>(weights_[l].size())});
    in.get_array_into<double>({biases_[l].data(), static_cast<std::size_t>(biases_[l].size())});
  }
}

// ---------------------------------------------------------------------------

FrozenBaseline::FrozenBaseline(std::unique_ptr<OnlinePredictor> model) : model_(std::move(model)) {
  if (!model_) throw ConfigError("baseline needs a trained model");
}

std::unique_ptr<OnlinePredictor> FrozenBaseline::clone() const {
  return std::make_unique<FrozenBaseline>(model_->clone());
}

void FrozenBaseline::save_state(ByteWriter& out) const { out.put_string(model_->snapshot()); }

void FrozenBaseline::load_state(ByteReader& in) { model_ = load_predictor(std::string_view(in.get_string())); }

// ---------------------------------------------------------------------------

std::string to_string(PredictorKind kind) {
  switch (kind) {
    case PredictorKind::par: return "par";
    case PredictorKind::ksvr: return "ksvr";
    case PredictorKind::mlp: return "mlp";
    case PredictorKind::baseline: return "baseline";
  }
  return "?";
}

PredictorKind parse_predictor_kind(const std::string& text) {
  const auto t = text::lower(text);
  if (t == "par" || t == "pa") return PredictorKind::par;
  if (t == "ksvr" || t == "svr" || t == "rff") return PredictorKind::ksvr;
  if (t == "mlp" || t == "dnn") return PredictorKind::mlp;
  if (t == "baseline") return PredictorKind::baseline;
  throw ConfigError("unknown predictor '" + text + "' (expected par, ksvr, mlp or baseline)");
}

std::unique_ptr<OnlinePredictor> make_predictor(const PredictorSpec& spec, const Dataset& train,
                                                std::uint64_t seed) {
  switch (spec.kind) {
    case PredictorKind::par: return std::make_unique<PassiveAggressiveRegressor>(spec.lag_order, spec.par);
    case PredictorKind::ksvr: {
      RFFSVRParams p = spec.rff;
      p.seed = derive_seed(seed, 0x5f5);
      if (spec.rff_auto_bandwidth) p.bandwidth = median_heuristic_bandwidth(train);
      return std::make_unique<RffSvr>(spec.lag_order, p);
    }
    case PredictorKind::mlp:
    case PredictorKind::baseline: {
      MLPParams p = spec.mlp;
      p.seed = derive_seed(seed, 0x3a9);
      return std::make_unique<Mlp>(spec.lag_order, p);
    }
  }
  throw ConfigError("unknown predictor kind");
}

}  // namespace safe
