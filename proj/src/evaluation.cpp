#include "safe/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace safe {

DetectionScore& DetectionScore::operator+=(const DetectionScore& other) {
  tp += other.tp;
  fp += other.fp;
  tn += other.tn;
  fn += other.fn;
  delays.insert(delays.end(), other.delays.begin(), other.delays.end());
  for (const auto& [k, v] : other.detected_count_histogram) detected_count_histogram[k] += v;
  return *this;
}

std::size_t match_tolerance(std::size_t series_len, double fraction) {
  return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(series_len) - 1e-9));
}

namespace {

void check_sorted(std::span<const std::size_t> v, std::size_t len, const char* what) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] >= len) throw std::invalid_argument(std::string(what) + " index out of range");
    if (i > 0 && v[i] <= v[i - 1]) throw std::invalid_argument(std::string(what) + " indices must be sorted");
  }
}

bool in_window(std::size_t det, std::size_t truth, std::size_t tol, bool symmetric) {
  if (det >= truth) return det - truth <= tol;
  return symmetric && truth - det <= tol;
}

DetectionScore match_impl(std::span<const std::size_t> detected, std::span<const std::size_t> truth,
                          std::size_t len, const MatchOptions& opt, std::span<const std::uint8_t> flagged) {
  check_sorted(detected, len, "detection");
  check_sorted(truth, len, "truth");
  const std::size_t tol = match_tolerance(len, opt.tolerance_fraction);

  DetectionScore s;
  std::vector<bool> used(truth.size(), false);
  for (std::size_t det : detected) {
    bool matched = false;
    for (std::size_t j = 0; j < truth.size(); ++j) {
      if (used[j] || !in_window(det, truth[j], tol, opt.symmetric)) continue;
      used[j] = true;
      matched = true;
      ++s.tp;
      s.delays.push_back(static_cast<std::ptrdiff_t>(det) - static_cast<std::ptrdiff_t>(truth[j]));
      break;
    }
    if (!matched) ++s.fp;
  }
  s.fn = truth.size() - s.tp;

  std::vector<std::uint8_t> excluded(len, 0);
  for (std::size_t tr : truth) {
    const std::size_t lo = opt.symmetric && tr >= tol ? tr - tol : (opt.symmetric ? 0 : tr);
    const std::size_t hi = std::min(len - 1, tr + tol);
    for (std::size_t i = lo; i <= hi; ++i) excluded[i] = 1;
  }
  for (std::size_t det : detected) excluded[det] = 1;
  for (std::size_t i = 0; i < flagged.size() && i < len; ++i)
    if (flagged[i]) excluded[i] = 1;
  for (std::size_t i = opt.eligible_begin; i < len; ++i)
    if (!excluded[i]) ++s.tn;

  s.detected_count_histogram[s.tp] = 1;
  return s;
}

}  // namespace

DetectionScore match_detections(std::span<const std::size_t> detected, std::span<const std::size_t> truth,
                                std::size_t series_len, const MatchOptions& options) {
  return match_impl(detected, truth, series_len, options, {});
}

std::vector<std::size_t> collapse_flags(std::span<const std::uint8_t> flags, std::size_t tolerance) {
  std::vector<std::size_t> events;
  const std::size_t span = std::max<std::size_t>(tolerance, 1);
  bool in_run = false;
  std::size_t run_start = 0;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (!flags[i]) {
      in_run = false;
      continue;
    }
    if (!in_run || i - run_start >= span) {
      events.push_back(i);
      run_start = i;
      in_run = true;
    }
  }
  return events;
}

DetectionScore score_flags(std::span<const std::uint8_t> flags, std::span<const std::size_t> truth,
                           const MatchOptions& options) {
  const std::size_t len = flags.size();
  const auto events = collapse_flags(flags, match_tolerance(len, options.tolerance_fraction));
  return match_impl(events, truth, len, options, flags);
}

namespace {

std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

DetectionRates rates(const DetectionScore& s) {
  DetectionRates r;
  r.false_alarm = ratio(s.fp, s.fp + s.tn);
  r.hit = ratio(s.tp, s.tp + s.fn);
  if (r.hit) r.missed = 1.0 - *r.hit;
  r.specificity = ratio(s.tn, s.tn + s.fp);
  return r;
}

std::string format_rate(const std::optional<double>& rate, int precision) {
  if (!rate) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, *rate);
  return buf;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd m;
  m.n = values.size();
  if (values.empty()) return m;
  double sum = 0.0;
  for (double v : values) sum += v;
  m.mean = sum / static_cast<double>(m.n);
  if (m.n >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - m.mean) * (v - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(m.n - 1));
  }
  return m;
}

DetectionSummary aggregate(std::span<const DetectionScore> trials) {
  DetectionSummary out;
  out.trials = trials.size();
  std::vector<double> fa, hit, miss, spec;
  for (const auto& t : trials) {
    out.pooled += t;
    const auto r = rates(t);
    if (r.false_alarm) fa.push_back(*r.false_alarm);
    if (r.hit) hit.push_back(*r.hit);
    if (r.missed) miss.push_back(*r.missed);
    if (r.specificity) spec.push_back(*r.specificity);
  }
  out.pooled_rates = rates(out.pooled);
  auto mean_or_na = [](const std::vector<double>& v) -> std::optional<double> {
    if (v.empty()) return std::nullopt;
    return mean_std(v).mean;
  };
  out.per_trial_mean = {mean_or_na(fa), mean_or_na(hit), mean_or_na(miss), mean_or_na(spec)};
  std::vector<double> delays(out.pooled.delays.begin(), out.pooled.delays.end());
  out.delay = mean_std(delays);
  return out;
}

PredictionScore prediction_score(std::span<const double> predictions, std::span<const double> targets,
                                 std::span<const std::uint8_t> update_flags, double wall_time_s) {
  if (predictions.size() != targets.size() || update_flags.size() != targets.size())
    throw std::invalid_argument("prediction, target and update-flag lengths differ");
  PredictionScore s;
  const std::size_t n = targets.size();
  s.mse_trajectory.resize(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = predictions[i] - targets[i];
    acc += e * e;
    s.mse_trajectory[i] = acc / static_cast<double>(i + 1);
    if (update_flags[i]) ++s.updates;
  }
  s.overall_mse = n ? acc / static_cast<double>(n) : 0.0;
  s.eligible_steps = n;
  s.percent_update = n ? 100.0 * static_cast<double>(s.updates) / static_cast<double>(n) : 0.0;
  s.exec_time_s = wall_time_s;
  return s;
}

}  // namespace safe
