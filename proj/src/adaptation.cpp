#include "safe/adaptation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "safe/errors.hpp"

namespace safe {

std::vector<std::string> AdaptationConfig::problems() const {
  std::vector<std::string> out;
  if (!(beta > 0.0) || !std::isfinite(beta)) out.push_back("beta must be a positive finite number");
  if (u_min > u_max) out.push_back("u_min must not exceed u_max");
  if (u_max == 0) out.push_back("u_max must be >= 1");
  if (validation_pairs == 0) out.push_back("validation_pairs must be >= 1");
  return out;
}

void AdaptationConfig::validate() const {
  const auto p = problems();
  if (p.empty()) return;
  std::ostringstream msg;
  msg << "invalid adaptation config:";
  for (const auto& s : p) msg << "\n  - " << s;
  throw ConfigError(msg.str());
}

std::size_t raw_minibatch_size(double z, double sma, double beta) {
  const double raw = std::round(beta * std::abs(z - sma));
  if (!std::isfinite(raw)) throw DataError("non-finite mini-batch size");
  return static_cast<std::size_t>(raw);
}

std::size_t minibatch_size(double z, double sma, const AdaptationConfig& config, std::size_t available) {
  const double raw = std::round(config.beta * std::abs(z - sma));
  if (!std::isfinite(raw)) throw DataError("non-finite mini-batch size");
  const double hi = static_cast<double>(std::min(config.u_max, available));
  const double lo = std::min(static_cast<double>(config.u_min), hi);
  return static_cast<std::size_t>(std::clamp(raw, lo, hi));
}

// ---------------------------------------------------------------------------

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("replay buffer capacity must be >= 1");
}

void ReplayBuffer::push(std::span<const double> input, double target, std::size_t time) {
  if (!pairs_.empty() && time <= pairs_.back().time)
    throw std::logic_error("replay buffer times must be strictly increasing");
  if (pairs_.size() == capacity_) pairs_.pop_front();
  pairs_.push_back({std::vector<double>(input.begin(), input.end()), target, time});
}

void ReplayBuffer::push(const Dataset& data) {
  for (std::size_t i = 0; i < data.size(); ++i) push(data.row(i), data.targets[i], data.times[i]);
}

std::size_t ReplayBuffer::count_before(std::size_t t) const {
  const auto it = std::lower_bound(pairs_.begin(), pairs_.end(), t,
                                   [](const ReplayPair& p, std::size_t v) { return p.time < v; });
  return static_cast<std::size_t>(it - pairs_.begin());
}

Dataset ReplayBuffer::latest_before(std::size_t t, std::size_t count) const {
  const std::size_t end = count_before(t);
  const std::size_t begin = end - std::min(count, end);
  Dataset out(pairs_.empty() ? 0 : pairs_.front().input.size());
  for (std::size_t i = begin; i < end; ++i) out.push(pairs_[i].input, pairs_[i].target, pairs_[i].time);
  return out;
}

Dataset ReplayBuffer::ending_at(std::size_t t, std::size_t count) const {
  const std::size_t lo = t + 1 >= count ? t + 1 - count : 0;
  Dataset out(pairs_.empty() ? 0 : pairs_.front().input.size());
  for (std::size_t i = count_before(lo); i < pairs_.size() && pairs_[i].time <= t; ++i)
    out.push(pairs_[i].input, pairs_[i].target, pairs_[i].time);
  return out;
}

// ---------------------------------------------------------------------------

AdaptationReport on_flag(OnlinePredictor& predictor, const ReplayBuffer& buffer, std::size_t t,
                         const DetectionOutcome& outcome, const AdaptationConfig& config) {
  if (!outcome.ns) throw std::logic_error("on_flag called without a non-stationarity flag");
  const auto start = std::chrono::steady_clock::now();
  AdaptationReport report;
  report.t = t;

  const Dataset validation = buffer.ending_at(t, config.validation_pairs);
  if (validation.empty() || validation.times.back() != t) {
    report.skipped = true;
    report.message = "no pair at the flagged step";
    return report;
  }
  const std::size_t val_begin = validation.times.front();
  const std::size_t available = buffer.count_before(val_begin);
  if (available == 0) {
    report.skipped = true;
    report.message = "no history before the flagged step";
    return report;
  }

  report.u = minibatch_size(outcome.z, outcome.sma, config, available);
  if (report.u == 0) {
    report.skipped = true;
    report.message = "zero-size mini-batch";
    return report;
  }
  const Dataset train = buffer.latest_before(val_begin, report.u);
  for (std::size_t time : train.times)
    if (time >= val_begin || time >= t) throw std::logic_error("training pair at or after the validation time");
  report.first_train_time = train.times.front();
  report.last_train_time = train.times.back();

  try {
    const FitReport fit = predictor.fit_batch(train, validation, config.epochs);
    report.epochs = fit.epochs_run;
    report.val_err_before = fit.val_error_before;
    report.val_err_after = fit.val_error_after;
  } catch (const TrainingDiverged& e) {
    report.failed = true;
    report.message = e.what();
  }
  report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return report;
}

void write_adaptation_log(const std::string& path, std::span<const AdaptationReport> reports) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "t,u,epochs,val_err_before,val_err_after,wall_ms\n" << std::setprecision(10);
  for (const auto& r : reports)
    out << r.t << ',' << r.u << ',' << r.epochs << ',' << r.val_err_before << ',' << r.val_err_after << ','
        << r.wall_ms << '\n';
  if (!out) throw DataError("failed writing " + path);
}

}  // namespace safe
