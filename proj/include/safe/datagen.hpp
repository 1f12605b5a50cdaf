#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace safe {

enum class ModelKind { AR, ARMA, NL1, NL2 };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& text);

// One stationary regime. Governs samples t in (previous end_index, end_index],
// with t counted from 1.
struct SegmentSpec {
  ModelKind kind = ModelKind::AR;
  std::vector<double> ar_coeffs;
  std::vector<double> ma_coeffs;
  double noise_std = 1.0;
  std::size_t end_index = 0;
};

struct SegmentedProcessSpec {
  std::string name;
  std::vector<SegmentSpec> segments;
  std::size_t total_length = 0;
  std::uint64_t seed = 0;

  // Throws ConfigError on any invariant violation.
  void validate(bool allow_zero_noise = false) const;

  // Internal segment boundaries as 0-based sample indices (first sample of
  // each new regime).
  std::vector<std::size_t> breakpoints() const;
};

struct LabeledSeries {
  std::string name;
  std::vector<double> values;
  std::vector<std::size_t> breakpoints;
  // Leading samples still influenced by the zero initial conditions.
  std::size_t warmup = 0;
  // Position of values[0] in the series this one was cut from.
  std::size_t offset = 0;

  std::size_t size() const { return values.size(); }
};

struct GenerateOptions {
  // Permits noise_std == 0; only meant for tests of the zero-noise limit.
  bool allow_zero_noise = false;
};

// Simulates the piecewise recursion with zero initial conditions. Noise draw
// t (0-based) is CounterRng::normal_at(spec.seed, t) scaled by the governing
// segment's noise_std. Throws DataError if the process diverges to a
// non-finite value.
LabeledSeries generate(const SegmentedProcessSpec& spec, GenerateOptions options = {});

// Same recursion driven by a caller-provided standard-normal sequence
// (e.g. a recorded noise dump). `unit_noise` must have total_length entries.
LabeledSeries generate(const SegmentedProcessSpec& spec, std::span<const double> unit_noise,
                       GenerateOptions options = {});

// Standard-normal noise sequence that generate() uses for `spec`.
std::vector<double> unit_noise_stream(std::uint64_t seed, std::size_t length);

// Named processes. Lengths default to 1000 for the TS-* family and 12000 for
// the Linear/Nonlinear family.
SegmentedProcessSpec ts_a(double alpha, std::uint64_t seed, std::size_t length = 1000);
SegmentedProcessSpec ts_b(std::uint64_t seed, std::size_t length = 1000);
SegmentedProcessSpec ts_c(std::uint64_t seed, std::size_t length = 1000);
SegmentedProcessSpec ts_d(std::uint64_t seed, std::size_t length = 1000);
SegmentedProcessSpec ts_e(std::uint64_t seed, std::size_t length = 1000);
SegmentedProcessSpec linear_1(std::uint64_t seed);
SegmentedProcessSpec linear_2(std::uint64_t seed);
SegmentedProcessSpec nonlinear_1(std::uint64_t seed);
SegmentedProcessSpec nonlinear_2(std::uint64_t seed);

// Looks up a process by name ("ts-a", "ts-b", ..., "linear-1", "nonlinear-2").
// `alpha` is only used by ts-a.
SegmentedProcessSpec named_process(const std::string& name, std::uint64_t seed,
                                   double alpha = 0.7);
std::vector<std::string> process_names();

// Key-value spec documents:
//
//   # comment
//   name = ts-b
//   seed = 1
//   length = 1000
//   segment = AR end=400 sd=1 ar=0.9
//   segment = AR end=700 sd=1 ar=1.68,-0.81
//   segment = ARMA end=1000 sd=1 ar=0.9 ma=-0.5
//
// `sd` is the noise standard deviation; `var` may be given instead.
SegmentedProcessSpec parse_spec(const std::string& text);
SegmentedProcessSpec load_spec(const std::filesystem::path& path);
std::string format_spec(const SegmentedProcessSpec& spec);

// ---------------------------------------------------------------------------
// Real-world series

enum class Normalization { none, minmax };

struct MinMaxScaler {
  double lo = 0.0;
  double hi = 1.0;

  static MinMaxScaler fit(std::span<const double> values);
  double transform(double v) const;
  double inverse(double v) const;
  void transform_in_place(std::span<double> values) const;
};

using ColumnRef = std::variant<std::string, std::size_t>;

struct CsvLoadOptions {
  ColumnRef column = std::size_t{0};
  Normalization normalization = Normalization::none;
  // Rows [fit_begin, fit_end) provide min/max; fit_end == 0 means all rows.
  std::size_t fit_begin = 0;
  std::size_t fit_end = 0;
};

// Reads one numeric column. A header row is recognised when its target cell
// is not numeric. Errors name the 1-based file row.
LabeledSeries load_csv(const std::filesystem::path& path, const CsvLoadOptions& options = {});

struct ChronologicalSplit {
  LabeledSeries train;
  LabeledSeries validation;
  LabeledSeries test;
};

// Contiguous, order-preserving partition; breakpoints are re-based per part.
ChronologicalSplit split_chronological(const LabeledSeries& series, double train_frac,
                                       double val_frac);

// Writes `index,value,is_breakpoint`.
void write_series_csv(const LabeledSeries& series, const std::filesystem::path& path);

}  // namespace safe
