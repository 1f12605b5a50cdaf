#include "safe/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "safe/errors.hpp"
#include "text.hpp"

namespace safe {

std::string to_string(FeatureKind kind) {
  return kind == FeatureKind::spectral_energy ? "spectral" : "time_domain";
}

FeatureKind parse_feature_kind(const std::string& text) {
  const auto t = text::lower(text);
  if (t == "spectral" || t == "spectral_energy" || t == "safe") return FeatureKind::spectral_energy;
  if (t == "time_domain" || t == "time-domain" || t == "time") return FeatureKind::time_domain;
  throw ConfigError("unknown feature kind '" + text + "' (expected spectral or time_domain)");
}

WindowBuffer::WindowBuffer(std::size_t capacity) : data_(capacity, 0.0) {
  if (capacity == 0) throw ConfigError("window capacity must be positive");
}

void WindowBuffer::push(double x) {
  data_[head_] = x;
  head_ = (head_ + 1) % data_.size();
  if (count_ < data_.size()) ++count_;
}

void WindowBuffer::clear() {
  std::fill(data_.begin(), data_.end(), 0.0);
  head_ = 0;
  count_ = 0;
}

void WindowBuffer::frame_into(std::span<double> out) const {
  const std::size_t cap = data_.size();
  const std::size_t pad = cap - count_;
  for (std::size_t i = 0; i < pad; ++i) out[i] = 0.0;
  // Oldest stored sample sits at head_ - count_ (mod cap).
  std::size_t pos = (head_ + cap - count_) % cap;
  for (std::size_t i = pad; i < cap; ++i) {
    out[i] = data_[pos];
    pos = pos + 1 == cap ? 0 : pos + 1;
  }
}

std::vector<double> WindowBuffer::frame() const {
  std::vector<double> out(data_.size());
  frame_into(out);
  return out;
}

std::vector<double> hamming_weights(std::size_t length) {
  if (length < 2) throw ConfigError("Hamming window needs L >= 2");
  std::vector<double> w(length);
  const double denom = static_cast<double>(length - 1);
  for (std::size_t n = 0; n <= (length - 1) / 2; ++n) {
    w[n] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / denom);
    w[length - 1 - n] = w[n];
  }
  return w;
}

std::size_t spectral_bins(std::size_t window_length) { return window_length / 2 + 1; }

namespace {

void require_finite(std::span<const double> frame) {
  for (double v : frame)
    if (!std::isfinite(v)) throw DataError("non-finite sample in feature window");
}

}  // namespace

std::vector<double> spectral_energy_reference(std::span<const double> frame) {
  require_finite(frame);
  const std::size_t L = frame.size();
  const auto w = hamming_weights(L);
  std::vector<double> out(spectral_bins(L));
  for (std::size_t k = 0; k < out.size(); ++k) {
    double re = 0.0;
    double im = 0.0;
    for (std::size_t n = 0; n < L; ++n) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(k * n) / static_cast<double>(L);
      re += frame[n] * w[n] * std::cos(angle);
      im -= frame[n] * w[n] * std::sin(angle);
    }
    out[k] = re * re + im * im;
  }
  return out;
}

namespace {

void time_domain_into(std::span<const double> frame, std::span<double> out) {
  require_finite(frame);
  const std::size_t n = frame.size();
  if (n < 4) throw ConfigError("time-domain features need a window of at least 4 samples");
  const double count = static_cast<double>(n);

  double mean = 0.0;
  for (double v : frame) mean += v;
  mean /= count;

  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : frame) {
    const double c = v - mean;
    const double c2 = c * c;
    m2 += c2;
    m3 += c2 * c;
    m4 += c2 * c2;
  }
  const double ss = m2;
  m2 /= count;
  m3 /= count;
  m4 /= count;

  std::fill(out.begin(), out.begin() + 5, 0.0);
  if (!(m2 > 0.0)) return;
  out[1] = ss / (count - 1.0);

  // Correlation of the (x[t-1], x[t]) pairs, each side centred on its own mean.
  double lead_mean = 0.0, lag_mean = 0.0;
  for (std::size_t t = 1; t < n; ++t) {
    lead_mean += frame[t];
    lag_mean += frame[t - 1];
  }
  lead_mean /= count - 1.0;
  lag_mean /= count - 1.0;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t t = 1; t < n; ++t) {
    const double a = frame[t] - lead_mean, b = frame[t - 1] - lag_mean;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  double bic = 0.0;
  for (std::size_t t = 2; t < n; ++t)
    bic += (frame[t] - mean) * (frame[t - 1] - mean) * (frame[t - 2] - mean);
  bic /= static_cast<double>(n - 2);

  const double m2_15 = m2 * std::sqrt(m2);
  out[0] = sxx > 0.0 && syy > 0.0 ? sxy / std::sqrt(sxx * syy) : 0.0;
  out[2] = m3 / m2_15;
  out[3] = m4 / (m2 * m2);
  out[4] = bic / m2_15;
}

}  // namespace

std::vector<double> time_domain_reference(std::span<const double> frame) {
  std::vector<double> out(5);
  time_domain_into(frame, out);
  return out;
}

FeatureExtractor::FeatureExtractor(FeatureKind kind, std::size_t window_length)
    : kind_(kind), length_(window_length) {
  if (kind == FeatureKind::spectral_energy) {
    window_ = hamming_weights(window_length);
    const std::size_t bins = spectral_bins(window_length);
    cos_.resize(bins * window_length);
    sin_.resize(bins * window_length);
    for (std::size_t k = 0; k < bins; ++k)
      for (std::size_t n = 0; n < window_length; ++n) {
        // Reduce k*n mod L first so the angle stays in [0, 2 pi).
        const double angle = 2.0 * std::numbers::pi * static_cast<double>((k * n) % window_length) /
                             static_cast<double>(window_length);
        cos_[k * window_length + n] = std::cos(angle);
        sin_[k * window_length + n] = std::sin(angle);
      }
  } else if (window_length < 4) {
    throw ConfigError("time-domain features need a window of at least 4 samples");
  }
}

std::size_t FeatureExtractor::output_size() const {
  return kind_ == FeatureKind::spectral_energy ? spectral_bins(length_) : 5;
}

void FeatureExtractor::extract(std::span<const double> frame, std::span<double> out) const {
  if (frame.size() != length_) throw ConfigError("frame length does not match the extractor window");
  if (kind_ == FeatureKind::time_domain) {
    time_domain_into(frame, out);
    return;
  }
  require_finite(frame);
  const std::size_t L = length_;
  double windowed[64];
  std::vector<double> heap;
  double* xw = windowed;
  if (L > 64) {
    heap.resize(L);
    xw = heap.data();
  }
  for (std::size_t n = 0; n < L; ++n) xw[n] = frame[n] * window_[n];
  const std::size_t bins = spectral_bins(L);
  for (std::size_t k = 0; k < bins; ++k) {
    const double* c = &cos_[k * L];
    const double* s = &sin_[k * L];
    double re = 0.0;
    double im = 0.0;
    for (std::size_t n = 0; n < L; ++n) {
      re += xw[n] * c[n];
      im -= xw[n] * s[n];
    }
    out[k] = re * re + im * im;
  }
}

FeatureVector FeatureExtractor::extract(std::span<const double> frame) const {
  FeatureVector fv;
  fv.kind = kind_;
  fv.values.resize(output_size());
  extract(frame, fv.values);
  return fv;
}

FeatureVector spectral_energy(const WindowBuffer& window) {
  const FeatureExtractor ex(FeatureKind::spectral_energy, window.capacity());
  return ex.extract(window.frame());
}

FeatureVector time_domain_features(const WindowBuffer& window) {
  FeatureVector fv;
  fv.kind = FeatureKind::time_domain;
  fv.values = time_domain_reference(window.frame());
  return fv;
}

namespace kernels {

namespace {

void frame_at(std::span<const double> series, std::size_t t, std::size_t L, std::span<double> frame) {
  // Window ending at sample t, zero padded before the series start.
  for (std::size_t i = 0; i < L; ++i) {
    const std::size_t back = L - 1 - i;
    frame[i] = t >= back ? series[t - back] : 0.0;
  }
}

}  // namespace

std::vector<double> feature_frames_serial(const FeatureExtractor& extractor, std::span<const double> series) {
  const std::size_t L = extractor.window_length();
  const std::size_t m = extractor.output_size();
  std::vector<double> out(series.size() * m);
  std::vector<double> frame(L);
  for (std::size_t t = 0; t < series.size(); ++t) {
    frame_at(series, t, L, frame);
    extractor.extract(frame, std::span(out).subspan(t * m, m));
  }
  return out;
}

std::vector<double> feature_frames_parallel(const FeatureExtractor& extractor, std::span<const double> series) {
  const std::size_t L = extractor.window_length();
  const std::size_t m = extractor.output_size();
  const auto n = static_cast<std::ptrdiff_t>(series.size());
  std::vector<double> out(series.size() * m);
  bool failed = false;
#pragma omp parallel reduction(|| : failed)
  {
    std::vector<double> frame(L);
#pragma omp for schedule(static)
    for (std::ptrdiff_t t = 0; t < n; ++t) {
      const auto ut = static_cast<std::size_t>(t);
      frame_at(series, ut, L, frame);
      try {
        extractor.extract(frame, std::span(out).subspan(ut * m, m));
      } catch (const DataError&) {
        failed = true;
      }
    }
  }
  if (failed) throw DataError("non-finite sample in feature window");
  return out;
}

}  // namespace kernels

}  // namespace safe
