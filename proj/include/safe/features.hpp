#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace safe {

enum class FeatureKind { spectral_energy, time_domain };

std::string to_string(FeatureKind kind);
FeatureKind parse_feature_kind(const std::string& text);

struct FeatureVector {
  std::vector<double> values;
  FeatureKind kind = FeatureKind::spectral_energy;

  std::size_t size() const { return values.size(); }
  bool operator==(const FeatureVector&) const = default;
};

// Fixed-capacity sliding window over the most recent samples. Positions not
// yet filled read as zeros.
class WindowBuffer {
 public:
  explicit WindowBuffer(std::size_t capacity);

  void push(double x);
  void clear();

  std::size_t capacity() const { return data_.size(); }
  std::size_t size() const { return count_; }
  bool full() const { return count_ == data_.size(); }

  // Oldest-first copy of length capacity(), zero-padded at the front.
  std::vector<double> frame() const;
  void frame_into(std::span<double> out) const;

 private:
  std::vector<double> data_;
  std::size_t head_ = 0;  // next write position
  std::size_t count_ = 0;
};

// 0.54 - 0.46 cos(2 pi n / (L - 1)), n = 0..L-1.
std::vector<double> hamming_weights(std::size_t length);

std::size_t spectral_bins(std::size_t window_length);

// Squared magnitudes of the one-sided L-point DFT of the Hamming-windowed
// frame, bins 0..floor(L/2), no 1/L scaling.
FeatureVector spectral_energy(const WindowBuffer& window);

// Straight-line evaluation that recomputes every twiddle factor; kept as the
// reference the table-driven path is tested against.
std::vector<double> spectral_energy_reference(std::span<const double> frame);

// [lag-1 correlation of (x[t-1], x[t]) pairs, variance (n-1), skewness, kurtosis m4/m2^2,
//  lag-(1,2) bicorrelation / m2^1.5]. Ratio features are 0 for a
// zero-variance frame.
FeatureVector time_domain_features(const WindowBuffer& window);
std::vector<double> time_domain_reference(std::span<const double> frame);

// Reusable extractor with precomputed tables; one per detector.
class FeatureExtractor {
 public:
  FeatureExtractor(FeatureKind kind, std::size_t window_length);

  FeatureKind kind() const { return kind_; }
  std::size_t window_length() const { return length_; }
  std::size_t output_size() const;

  // `frame` has window_length() samples, oldest first. Throws DataError on a
  // non-finite sample.
  void extract(std::span<const double> frame, std::span<double> out) const;
  FeatureVector extract(std::span<const double> frame) const;

 private:
  FeatureKind kind_;
  std::size_t length_;
  std::vector<double> window_;  // Hamming weights
  std::vector<double> cos_;     // [bin * L + n]
  std::vector<double> sin_;
};

// Batch kernels: one feature frame per sample of `series`, as the detector
// would see them online (zero padding before the start). Row-major output,
// rows = series.size(), cols = extractor.output_size().
namespace kernels {

std::vector<double> feature_frames_serial(const FeatureExtractor& extractor,
                                          std::span<const double> series);
std::vector<double> feature_frames_parallel(const FeatureExtractor& extractor,
                                            std::span<const double> series);

}  // namespace kernels

}  // namespace safe
