#include "safe/detector.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "safe/errors.hpp"
#include "text.hpp"

namespace safe {

std::string to_string(DistanceKind kind) {
  switch (kind) {
    case DistanceKind::euclidean: return "euclidean";
    case DistanceKind::abs_pearson: return "pearson";
    case DistanceKind::abs_cosine: return "cosine";
  }
  return "?";
}

DistanceKind parse_distance_kind(const std::string& text) {
  const auto t = text::lower(text);
  if (t == "euclidean") return DistanceKind::euclidean;
  if (t == "pearson" || t == "abs_pearson") return DistanceKind::abs_pearson;
  if (t == "cosine" || t == "abs_cosine") return DistanceKind::abs_cosine;
  throw ConfigError("unknown distance '" + text + "' (expected euclidean, pearson or cosine)");
}

std::string to_string(SigmaPlacement placement) {
  return placement == SigmaPlacement::inside_sqrt ? "inside" : "outside";
}

SigmaPlacement parse_sigma_placement(const std::string& text) {
  const auto t = text::lower(text);
  if (t == "inside" || t == "inside_sqrt") return SigmaPlacement::inside_sqrt;
  if (t == "outside" || t == "outside_sqrt") return SigmaPlacement::outside_sqrt;
  throw ConfigError("unknown sigma placement '" + text + "' (expected inside or outside)");
}

std::string to_string(Zone zone) {
  switch (zone) {
    case Zone::stationary: return "stationary";
    case Zone::warning: return "warning";
    case Zone::trigger: return "trigger";
  }
  return "?";
}

namespace {

// 1 - |<a,b>| / (|a| |b|) with the degenerate conventions.
double one_minus_abs_cos(double dot, double na2, double nb2) {
  const bool za = !(na2 > 0.0);
  const bool zb = !(nb2 > 0.0);
  if (za && zb) return 0.0;
  if (za || zb) return 1.0;
  const double c = std::abs(dot) / std::sqrt(na2 * nb2);
  return std::clamp(1.0 - c, 0.0, 1.0);
}

}  // namespace

double distance(std::span<const double> a, std::span<const double> b, DistanceKind kind) {
  if (a.size() != b.size())
    throw ConfigError("distance between vectors of length " + std::to_string(a.size()) + " and " +
                      std::to_string(b.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) throw DataError("non-finite feature value");

  const std::size_t n = a.size();
  switch (kind) {
    case DistanceKind::euclidean: {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double diff = a[i] - b[i];
        s += diff * diff;
      }
      return std::sqrt(s);
    }
    case DistanceKind::abs_cosine: {
      double dot = 0.0, na = 0.0, nb = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
      }
      return one_minus_abs_cos(dot, na, nb);
    }
    case DistanceKind::abs_pearson: {
      double ma = 0.0, mb = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
      }
      ma /= static_cast<double>(n);
      mb /= static_cast<double>(n);
      double dot = 0.0, va = 0.0, vb = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double ca = a[i] - ma;
        const double cb = b[i] - mb;
        dot += ca * cb;
        va += ca * ca;
        vb += cb * cb;
      }
      return one_minus_abs_cos(dot, va, vb);
    }
  }
  return 0.0;
}

double distance(const FeatureVector& a, const FeatureVector& b, DistanceKind kind) {
  if (a.kind != b.kind) throw ConfigError("distance between different feature kinds");
  return distance(a.values, b.values, kind);
}

double ewma_update(double z_prev, double d, double lambda) { return (1.0 - lambda) * z_prev + lambda * d; }

double sigma_z(std::size_t t, double lambda, double sigma_x, SigmaPlacement placement) {
  const double decay = std::pow(1.0 - lambda, 2.0 * static_cast<double>(t));
  const double factor = lambda / (2.0 - lambda) * (1.0 - decay);
  if (placement == SigmaPlacement::outside_sqrt) return sigma_x * std::sqrt(factor);
  return std::sqrt(factor * sigma_x);
}

std::vector<std::string> DetectorConfig::problems() const {
  std::vector<std::string> out;
  if (!(lambda > 0.0 && lambda <= 1.0)) out.push_back("lambda must lie in (0, 1]");
  if (!(warning_mult > 0.0)) out.push_back("warning multiplier must be > 0");
  if (!(trigger_mult > 0.0)) out.push_back("trigger multiplier must be > 0");
  if (trigger_mult < warning_mult) out.push_back("trigger multiplier must be >= warning multiplier");
  if (warning_duration == 0) out.push_back("warning duration must be >= 1");
  if (sma_window < 2) out.push_back("SMA window must be >= 2");
  if (features == FeatureKind::spectral_energy && stft_window < 2) out.push_back("STFT window must be >= 2");
  if (features == FeatureKind::time_domain && stft_window < 4)
    out.push_back("time-domain window must be >= 4");
  return out;
}

void DetectorConfig::validate() const {
  const auto p = problems();
  if (p.empty()) return;
  std::ostringstream msg;
  msg << "invalid detector config:";
  for (const auto& s : p) msg << "\n  - " << s;
  throw ConfigError(msg.str());
}

DetectorConfig DetectorConfig::for_distance(DistanceKind kind) {
  DetectorConfig c;
  c.distance = kind;
  switch (kind) {
    case DistanceKind::euclidean: c.warning_mult = 2.85; c.trigger_mult = 3.35; break;
    case DistanceKind::abs_pearson: c.warning_mult = 0.75; c.trigger_mult = 1.25; break;
    case DistanceKind::abs_cosine: c.warning_mult = 1.4; c.trigger_mult = 1.9; break;
  }
  return c;
}

// ---------------------------------------------------------------------------

ControlChart::ControlChart(const DetectorConfig& config, std::size_t warmup_steps)
    : config_(config), warmup_(warmup_steps) {
  config_.validate();
  state_.history.assign(config_.sma_window, 0.0);
}

void ControlChart::reset() {
  state_ = State{};
  state_.history.assign(config_.sma_window, 0.0);
}

DetectionOutcome ControlChart::update(double d) {
  auto& s = state_;
  ++s.t;
  s.z = s.t == 1 ? d : ewma_update(s.z, d, config_.lambda);

  const std::size_t cap = s.history.size();
  s.history[s.head] = d;
  s.head = (s.head + 1) % cap;
  if (s.count < cap) ++s.count;

  double sum = 0.0;
  for (std::size_t i = 0; i < s.count; ++i) sum += s.history[i];
  const double sma = sum / static_cast<double>(s.count);
  double sigma_x = 0.0;
  if (s.count >= 2) {
    double ss = 0.0;
    for (std::size_t i = 0; i < s.count; ++i) {
      const double c = s.history[i] - sma;
      ss += c * c;
    }
    sigma_x = std::sqrt(ss / static_cast<double>(s.count - 1));
  }

  DetectionOutcome out;
  out.t = s.t;
  out.d = d;
  out.z = s.z;
  out.sma = sma;
  out.sigma = sigma_z(s.t, config_.lambda, sigma_x, config_.sigma_placement);
  out.deviation = std::abs(s.z - sma);

  if (s.t <= warmup_) {
    out.warning_count = s.warning_count;
    return out;
  }

  // With no observed spread there is no control limit to exceed.
  const bool limits_defined = out.sigma > 0.0;
  if (limits_defined && s.z >= sma + config_.trigger_mult * out.sigma) {
    out.zone = Zone::trigger;
    out.ns = true;
    s.warning_count = 0;
  } else if (limits_defined && s.z >= sma + config_.warning_mult * out.sigma) {
    out.zone = Zone::warning;
    ++s.warning_count;
    if (s.warning_count >= config_.warning_duration) {
      out.ns = true;
      s.warning_count = 0;
    }
  } else {
    s.warning_count = s.warning_count > 0 ? s.warning_count - 1 : 0;
  }
  out.warning_count = s.warning_count;
  return out;
}

// ---------------------------------------------------------------------------

Detector::Detector(const DetectorConfig& config)
    : config_(config),
      extractor_((config.validate(), config.features), config.stft_window),
      window_(config.stft_window),
      chart_(config, config.stft_window),
      frame_(config.stft_window, 0.0) {
  current_.kind = config.features;
  current_.values.assign(extractor_.output_size(), 0.0);
  previous_ = current_;
}

DetectionOutcome Detector::step(double x) {
  if (poisoned_) throw StreamPoisoned("detector stream is poisoned; reset() before further steps");
  if (!std::isfinite(x)) {
    poisoned_ = true;
    throw StreamPoisoned("non-finite sample at step " + std::to_string(chart_.state().t + 1));
  }
  window_.push(x);
  window_.frame_into(frame_);
  extractor_.extract(frame_, current_.values);
  if (!has_previous_) {
    previous_.values = current_.values;  // f(t-1) = f(t) on the first step
    has_previous_ = true;
  }
  const double d = distance(previous_.values, current_.values, config_.distance);
  previous_.values = current_.values;
  return chart_.update(d);
}

void Detector::reset() {
  window_.clear();
  chart_.reset();
  has_previous_ = false;
  poisoned_ = false;
  std::fill(current_.values.begin(), current_.values.end(), 0.0);
  previous_.values = current_.values;
}

DetectorState Detector::state() const {
  DetectorState s;
  s.chart = chart_.state();
  s.window = window_;
  if (has_previous_) s.prev_features = previous_;
  s.poisoned = poisoned_;
  return s;
}

}  // namespace safe
