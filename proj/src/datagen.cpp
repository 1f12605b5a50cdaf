#include "safe/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "safe/errors.hpp"
#include "safe/rng.hpp"
#include "text.hpp"

namespace safe {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::AR: return "AR";
    case ModelKind::ARMA: return "ARMA";
    case ModelKind::NL1: return "NL1";
    case ModelKind::NL2: return "NL2";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& text) {
  const auto t = text::lower(text);
  if (t == "ar") return ModelKind::AR;
  if (t == "arma") return ModelKind::ARMA;
  if (t == "nl1") return ModelKind::NL1;
  if (t == "nl2") return ModelKind::NL2;
  throw ConfigError("unknown model kind '" + text + "' (expected AR, ARMA, NL1 or NL2)");
}

void SegmentedProcessSpec::validate(bool allow_zero_noise) const {
  if (segments.empty()) throw ConfigError("process spec has no segments");
  if (total_length == 0) throw ConfigError("total_length must be positive");
  std::size_t prev_end = 0;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& s = segments[i];
    const std::string where = "segment " + std::to_string(i + 1) + ": ";
    if (s.ar_coeffs.empty()) throw ConfigError(where + "ar_coeffs must be non-empty");
    if (s.kind == ModelKind::NL1 || s.kind == ModelKind::NL2) {
      if (s.ar_coeffs.size() != 4)
        throw ConfigError(where + to_string(s.kind) + " needs exactly 4 ar_coeffs, got " +
                          std::to_string(s.ar_coeffs.size()));
      if (!s.ma_coeffs.empty()) throw ConfigError(where + to_string(s.kind) + " takes no ma_coeffs");
    }
    if (s.kind == ModelKind::AR && !s.ma_coeffs.empty())
      throw ConfigError(where + "AR segment takes no ma_coeffs (use ARMA)");
    for (double c : s.ar_coeffs)
      if (!std::isfinite(c)) throw ConfigError(where + "non-finite coefficient");
    for (double c : s.ma_coeffs)
      if (!std::isfinite(c)) throw ConfigError(where + "non-finite coefficient");
    if (!std::isfinite(s.noise_std) || s.noise_std < 0.0 || (s.noise_std == 0.0 && !allow_zero_noise))
      throw ConfigError(where + "noise_std must be > 0");
    if (s.end_index <= prev_end)
      throw ConfigError(where + "end_index must strictly increase (got " +
                        std::to_string(s.end_index) + " after " + std::to_string(prev_end) + ")");
    prev_end = s.end_index;
  }
  if (prev_end != total_length)
    throw ConfigError("last segment ends at " + std::to_string(prev_end) + " but total_length is " +
                      std::to_string(total_length));
}

std::vector<std::size_t> SegmentedProcessSpec::breakpoints() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i + 1 < segments.size(); ++i) out.push_back(segments[i].end_index);
  return out;
}

namespace {

double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// x[i - k] with zeros before the start of the series.
double lag(const std::vector<double>& x, std::size_t i, std::size_t k) {
  return i >= k ? x[i - k] : 0.0;
}

std::size_t max_lag(const SegmentedProcessSpec& spec) {
  std::size_t m = 0;
  for (const auto& s : spec.segments) m = std::max({m, s.ar_coeffs.size(), s.ma_coeffs.size()});
  return m;
}

}  // namespace

std::vector<double> unit_noise_stream(std::uint64_t seed, std::size_t length) {
  std::vector<double> out(length);
  for (std::size_t i = 0; i < length; ++i) out[i] = CounterRng::normal_at(seed, i);
  return out;
}

LabeledSeries generate(const SegmentedProcessSpec& spec, GenerateOptions options) {
  spec.validate(options.allow_zero_noise);
  const auto noise = unit_noise_stream(spec.seed, spec.total_length);
  return generate(spec, noise, options);
}

LabeledSeries generate(const SegmentedProcessSpec& spec, std::span<const double> unit_noise,
                       GenerateOptions options) {
  spec.validate(options.allow_zero_noise);
  if (unit_noise.size() != spec.total_length)
    throw ConfigError("noise sequence has " + std::to_string(unit_noise.size()) +
                      " entries, expected " + std::to_string(spec.total_length));

  const std::size_t n = spec.total_length;
  std::vector<double> x(n, 0.0);
  std::vector<double> eps(n, 0.0);

  std::size_t seg = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (i + 1 > spec.segments[seg].end_index) ++seg;
    const auto& s = spec.segments[seg];
    const auto& a = s.ar_coeffs;
    eps[i] = s.noise_std * unit_noise[i];

    double v = 0.0;
    switch (s.kind) {
      case ModelKind::AR:
      case ModelKind::ARMA: {
        for (std::size_t k = 0; k < a.size(); ++k) v += a[k] * lag(x, i, k + 1);
        for (std::size_t k = 0; k < s.ma_coeffs.size(); ++k) v += s.ma_coeffs[k] * lag(eps, i, k + 1);
        v += eps[i];
        break;
      }
      case ModelKind::NL1: {
        const double linear =
            a[0] * lag(x, i, 1) + a[1] * lag(x, i, 2) + a[2] * lag(x, i, 3) + a[3] * lag(x, i, 4);
        v = linear * logistic(10.0 * lag(x, i, 1)) + eps[i];
        break;
      }
      case ModelKind::NL2: {
        const double x1 = lag(x, i, 1);
        const double x2 = lag(x, i, 2);
        v = a[0] * x1 + a[1] * x2 + (a[2] * x1 + a[3] * x2) * logistic(10.0 * x1) + eps[i];
        break;
      }
    }
    if (!std::isfinite(v))
      throw DataError("process '" + spec.name + "' diverged to a non-finite value at sample " +
                      std::to_string(i) + " (segment " + std::to_string(seg + 1) + ")");
    x[i] = v;
  }

  LabeledSeries out;
  out.name = spec.name;
  out.values = std::move(x);
  out.breakpoints = spec.breakpoints();
  out.warmup = std::min(max_lag(spec), n);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

SegmentSpec ar(std::vector<double> coeffs, double sd, std::size_t end) {
  return {ModelKind::AR, std::move(coeffs), {}, sd, end};
}

SegmentSpec arma(std::vector<double> ar_c, std::vector<double> ma_c, double sd, std::size_t end) {
  return {ModelKind::ARMA, std::move(ar_c), std::move(ma_c), sd, end};
}

SegmentedProcessSpec make(std::string name, std::uint64_t seed, std::vector<SegmentSpec> segs) {
  SegmentedProcessSpec spec;
  spec.name = std::move(name);
  spec.seed = seed;
  spec.total_length = segs.back().end_index;
  spec.segments = std::move(segs);
  return spec;
}

std::size_t scaled(std::size_t point, std::size_t length) { return point * length / 1000; }

// Four 3000-sample regimes with noise variances 0.5, 1.5, 2.5, 3.5.
SegmentedProcessSpec four_regimes(std::string name, std::uint64_t seed, ModelKind kind,
                                  const std::vector<std::vector<double>>& coeffs) {
  const double variances[] = {0.5, 1.5, 2.5, 3.5};
  std::vector<SegmentSpec> segs;
  for (std::size_t r = 0; r < 4; ++r)
    segs.push_back({kind, coeffs[r], {}, std::sqrt(variances[r]), 3000 * (r + 1)});
  return make(std::move(name), seed, std::move(segs));
}

}  // namespace

SegmentedProcessSpec ts_a(double alpha, std::uint64_t seed, std::size_t length) {
  return make("ts-a", seed, {ar({alpha}, 1.0, length)});
}

SegmentedProcessSpec ts_b(std::uint64_t seed, std::size_t length) {
  return make("ts-b", seed,
              {ar({0.9}, 1.0, scaled(400, length)), ar({1.68, -0.81}, 1.0, scaled(700, length)),
               ar({1.32, -0.91}, 1.0, length)});
}

SegmentedProcessSpec ts_c(std::uint64_t seed, std::size_t length) {
  return make("ts-c", seed, {ar({0.4}, 1.0, scaled(600, length)), ar({0.6}, 1.0, length)});
}

SegmentedProcessSpec ts_d(std::uint64_t seed, std::size_t length) {
  return make("ts-d", seed,
              {ar({0.999}, 1.0, scaled(400, length)), ar({0.999}, 1.5, scaled(750, length)),
               ar({0.999}, 3.0, length)});
}

SegmentedProcessSpec ts_e(std::uint64_t seed, std::size_t length) {
  return make("ts-e", seed,
              {arma({0.9}, {-0.5}, 1.0, scaled(250, length)), ar({0.3}, 1.0, scaled(500, length)),
               arma({0.7}, {0.6}, 1.0, scaled(750, length)), arma({0.4}, {-0.1}, 1.0, length)});
}

SegmentedProcessSpec linear_1(std::uint64_t seed) {
  return four_regimes("linear-1", seed, ModelKind::AR,
                      {{0.9, -0.2, 0.8, -0.5},
                       {-0.3, 1.4, 0.4, -0.5},
                       {1.5, -0.4, -0.3, 0.2},
                       {-0.1, 1.4, 0.4, -0.7}});
}

SegmentedProcessSpec linear_2(std::uint64_t seed) {
  return four_regimes("linear-2", seed, ModelKind::AR,
                      {{1.1, -0.6, 0.8, -0.5, -0.1, 0.3},
                       {-0.1, 1.2, 0.4, 0.3, -0.2, -0.6},
                       {1.2, -0.4, -0.3, 0.7, -0.6, 0.4},
                       {-0.1, 1.1, 0.5, 0.2, -0.2, -0.5}});
}

SegmentedProcessSpec nonlinear_1(std::uint64_t seed) {
  return four_regimes("nonlinear-1", seed, ModelKind::NL1,
                      {{0.9, -0.2, 0.8, -0.5},
                       {-0.3, 1.4, 0.4, -0.5},
                       {1.5, -0.4, -0.3, 0.2},
                       {-0.1, 1.4, 0.4, -0.7}});
}

SegmentedProcessSpec nonlinear_2(std::uint64_t seed) {
  return four_regimes("nonlinear-2", seed, ModelKind::NL2,
                      {{-0.5, 0.8, -0.2, 0.9},
                       {-0.5, 0.4, 1.4, -0.3},
                       {0.2, -0.3, -0.4, 1.5},
                       {-0.7, 0.4, 1.4, -0.1}});
}

std::vector<std::string> process_names() {
  return {"ts-a", "ts-b", "ts-c", "ts-d", "ts-e", "linear-1", "linear-2", "nonlinear-1", "nonlinear-2"};
}

SegmentedProcessSpec named_process(const std::string& name, std::uint64_t seed, double alpha) {
  const auto n = text::lower(name);
  if (n == "ts-a") return ts_a(alpha, seed);
  if (n == "ts-b") return ts_b(seed);
  if (n == "ts-c") return ts_c(seed);
  if (n == "ts-d") return ts_d(seed);
  if (n == "ts-e") return ts_e(seed);
  if (n == "linear-1") return linear_1(seed);
  if (n == "linear-2") return linear_2(seed);
  if (n == "nonlinear-1") return nonlinear_1(seed);
  if (n == "nonlinear-2") return nonlinear_2(seed);
  throw ConfigError("unknown process '" + name + "'");
}

// ---------------------------------------------------------------------------

SegmentedProcessSpec parse_spec(const std::string& doc) {
  SegmentedProcessSpec spec;
  bool have_length = false;
  std::istringstream in(doc);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    auto line = text::trim(raw);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = text::trim(line.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("spec line " + std::to_string(line_no) + ": expected key = value");
    const auto key = text::lower(text::trim(line.substr(0, eq)));
    const auto value = text::trim(line.substr(eq + 1));
    const std::string where = "spec line " + std::to_string(line_no) + ": ";

    if (key == "name") {
      spec.name = std::string(value);
    } else if (key == "seed") {
      auto v = text::parse_int<std::uint64_t>(value);
      if (!v) throw ConfigError(where + "bad seed");
      spec.seed = *v;
    } else if (key == "length" || key == "total_length") {
      auto v = text::parse_int<std::size_t>(value);
      if (!v) throw ConfigError(where + "bad length");
      spec.total_length = *v;
      have_length = true;
    } else if (key == "segment") {
      auto tokens = text::split_ws(value);
      if (tokens.empty()) throw ConfigError(where + "segment needs a model kind");
      SegmentSpec seg;
      seg.kind = parse_model_kind(std::string(tokens[0]));
      bool have_end = false;
      for (std::size_t i = 1; i < tokens.size(); ++i) {
        const auto kv = tokens[i];
        const auto e = kv.find('=');
        if (e == std::string_view::npos) throw ConfigError(where + "expected field=value, got '" + std::string(kv) + "'");
        const auto fk = text::lower(kv.substr(0, e));
        const auto fv = kv.substr(e + 1);
        if (fk == "end") {
          auto v = text::parse_int<std::size_t>(fv);
          if (!v) throw ConfigError(where + "bad end");
          seg.end_index = *v;
          have_end = true;
        } else if (fk == "sd" || fk == "var") {
          auto v = text::parse_double(fv);
          if (!v) throw ConfigError(where + "bad " + fk);
          seg.noise_std = fk == "sd" ? *v : std::sqrt(*v);
        } else if (fk == "ar" || fk == "ma") {
          auto v = text::parse_double_list(fv);
          if (!v) throw ConfigError(where + "bad coefficient list");
          (fk == "ar" ? seg.ar_coeffs : seg.ma_coeffs) = *v;
        } else {
          throw ConfigError(where + "unknown segment field '" + fk + "'");
        }
      }
      if (!have_end) throw ConfigError(where + "segment needs end=");
      spec.segments.push_back(std::move(seg));
    } else {
      throw ConfigError(where + "unknown key '" + key + "'");
    }
  }
  if (!have_length && !spec.segments.empty()) spec.total_length = spec.segments.back().end_index;
  spec.validate();
  return spec;
}

SegmentedProcessSpec load_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open spec file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_spec(ss.str());
}

std::string format_spec(const SegmentedProcessSpec& spec) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "name = " << spec.name << "\n";
  out << "seed = " << spec.seed << "\n";
  out << "length = " << spec.total_length << "\n";
  auto list = [&](const std::vector<double>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) out << (i ? "," : "") << v[i];
  };
  for (const auto& s : spec.segments) {
    out << "segment = " << to_string(s.kind) << " end=" << s.end_index << " sd=" << s.noise_std << " ar=";
    list(s.ar_coeffs);
    if (!s.ma_coeffs.empty()) {
      out << " ma=";
      list(s.ma_coeffs);
    }
    out << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------

MinMaxScaler MinMaxScaler::fit(std::span<const double> values) {
  if (values.empty()) throw DataError("cannot fit min-max scaling on an empty range");
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  return {*mn, *mx};
}

double MinMaxScaler::transform(double v) const {
  const double span = hi - lo;
  return span > 0.0 ? (v - lo) / span : 0.0;
}

double MinMaxScaler::inverse(double v) const { return lo + v * (hi - lo); }

void MinMaxScaler::transform_in_place(std::span<double> values) const {
  for (auto& v : values) v = transform(v);
}

LabeledSeries load_csv(const std::filesystem::path& path, const CsvLoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open CSV file " + path.string());

  LabeledSeries out;
  out.name = path.stem().string();

  std::string raw;
  std::size_t row = 0;
  std::optional<std::size_t> col;
  if (const auto* idx = std::get_if<std::size_t>(&options.column)) col = *idx;

  bool first_line = true;
  while (std::getline(in, raw)) {
    ++row;
    const auto line = text::trim(raw);
    if (line.empty()) continue;
    const auto cells = text::split(line, ',');

    if (first_line) {
      first_line = false;
      if (!col) {
        const auto& name = std::get<std::string>(options.column);
        for (std::size_t i = 0; i < cells.size() && !col; ++i)
          if (text::trim(cells[i]) == name) col = i;
        if (!col) throw DataError(path.string() + ": column '" + name + "' not found in header");
        continue;
      }
      if (*col < cells.size() && !text::parse_double(cells[*col])) continue;  // header row
    }

    if (*col >= cells.size())
      throw DataError(path.string() + ": row " + std::to_string(row) + " has no column " + std::to_string(*col));
    const auto v = text::parse_double(cells[*col]);
    if (!v || !std::isfinite(*v))
      throw DataError(path.string() + ": non-numeric value '" + std::string(text::trim(cells[*col])) +
                      "' at row " + std::to_string(row));
    out.values.push_back(*v);
  }

  if (out.values.empty()) throw DataError(path.string() + ": file contains no data rows");
  if (out.values.size() < 2) throw DataError(path.string() + ": need at least 2 data rows");

  if (options.normalization == Normalization::minmax) {
    const std::size_t end = options.fit_end == 0 ? out.values.size() : options.fit_end;
    if (options.fit_begin >= end || end > out.values.size())
      throw ConfigError("min-max fitting range is outside the data");
    const auto scaler =
        MinMaxScaler::fit(std::span(out.values).subspan(options.fit_begin, end - options.fit_begin));
    scaler.transform_in_place(out.values);
  }
  return out;
}

ChronologicalSplit split_chronological(const LabeledSeries& series, double train_frac, double val_frac) {
  if (!(train_frac > 0.0) || !(val_frac > 0.0) || !(train_frac + val_frac < 1.0))
    throw ConfigError("split fractions must satisfy 0 < train, 0 < val, train + val < 1");
  const std::size_t n = series.size();
  const auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(val_frac * static_cast<double>(n)));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n)
    throw ConfigError("split of " + std::to_string(n) + " samples leaves an empty part");

  auto cut = [&](std::size_t begin, std::size_t end, const char* suffix) {
    LabeledSeries part;
    part.name = series.name + suffix;
    part.values.assign(series.values.begin() + static_cast<std::ptrdiff_t>(begin),
                       series.values.begin() + static_cast<std::ptrdiff_t>(end));
    part.offset = series.offset + begin;
    for (auto b : series.breakpoints)
      if (b > begin && b < end) part.breakpoints.push_back(b - begin);
    part.warmup = series.warmup > begin ? std::min(series.warmup - begin, end - begin) : 0;
    return part;
  };
  return {cut(0, n_train, ":train"), cut(n_train, n_train + n_val, ":val"), cut(n_train + n_val, n, ":test")};
}

void write_series_csv(const LabeledSeries& series, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "index,value,is_breakpoint\n";
  out << std::setprecision(17);
  std::size_t next_bp = 0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    bool bp = false;
    while (next_bp < series.breakpoints.size() && series.breakpoints[next_bp] < i) ++next_bp;
    if (next_bp < series.breakpoints.size() && series.breakpoints[next_bp] == i) bp = true;
    out << i << ',' << series.values[i] << ',' << (bp ? 1 : 0) << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace safe
