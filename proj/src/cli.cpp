#include "safe/cli.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <variant>

#include <omp.h>
#include <openssl/evp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "safe/errors.hpp"
#include "safe/plot.hpp"
#include "text.hpp"

namespace safe {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "seed fields are bound as size_t");
using FieldRef = std::variant<std::string*, double*, std::size_t*, int*, bool*>;

struct Field {
  const char* key;
  const char* help;
  FieldRef ref;
};

std::vector<Field> fields(ExperimentConfig& c) {
  return {
      {"process", "named process (ts-a..ts-e, linear-1, linear-2, nonlinear-1, nonlinear-2)", &c.process},
      {"spec", "segment spec file; overrides --process", &c.spec},
      {"csv", "CSV file with a real-world series; overrides --spec and --process", &c.csv},
      {"column", "CSV column (name or 0-based index)", &c.column},
      {"normalize", "CSV normalisation: none or minmax", &c.normalize},
      {"seed", "base seed; trial i uses seed + i", &c.seed},
      {"trials", "number of trials", &c.trials},
      {"length", "series length for ts-* processes (0 = 1000)", &c.length},
      {"alpha", "AR(1) coefficient of ts-a", &c.alpha},
      {"features", "spectral or time_domain", &c.features},
      {"distance", "euclidean, pearson or cosine", &c.distance},
      {"lambda", "EWMA weight in (0, 1]", &c.lambda},
      {"warning", "warning multiplier (0 = default)", &c.warning},
      {"trigger", "trigger multiplier (0 = default)", &c.trigger},
      {"gamma", "warning-zone steps before a flag", &c.gamma},
      {"sma", "SMA window of distances", &c.sma},
      {"window", "feature window length", &c.window},
      {"sigma", "spread placement: inside or outside", &c.sigma},
      {"tolerance", "matching tolerance as a fraction of the series length", &c.tolerance},
      {"symmetric", "also accept detections before a breakpoint", &c.symmetric},
      {"predictor", "par, ksvr, mlp or baseline", &c.predictor},
      {"lag", "lag-embedding order", &c.lag},
      {"par_c", "PA aggressiveness C", &c.par_c},
      {"par_epsilon", "PA insensitivity", &c.par_epsilon},
      {"rff_dim", "random feature count", &c.rff_dim},
      {"rff_bandwidth", "RBF bandwidth (0 = median heuristic)", &c.rff_bandwidth},
      {"rff_l2", "SVR l2 penalty", &c.rff_l2},
      {"rff_epsilon", "SVR insensitivity", &c.rff_epsilon},
      {"rff_eta0", "SVR initial learning rate", &c.rff_eta0},
      {"rff_schedule", "constant, invscaling or optimal", &c.rff_schedule},
      {"hidden", "MLP hidden widths, comma separated (empty = linear)", &c.hidden},
      {"dropout", "MLP dropout rate", &c.dropout},
      {"learning_rate", "MLP SGD learning rate", &c.learning_rate},
      {"relu_output", "clamp MLP predictions at zero", &c.relu_output},
      {"batch_size", "mini-batch size", &c.batch_size},
      {"max_epochs", "offline epoch cap", &c.max_epochs},
      {"patience", "offline early-stopping patience", &c.patience},
      {"adapt", "retrain on flags (false = frozen model)", &c.adapt},
      {"beta", "mini-batch gain", &c.beta},
      {"u_min", "mini-batch floor", &c.u_min},
      {"u_max", "mini-batch cap", &c.u_max},
      {"val_pairs", "validation pairs per adaptation", &c.val_pairs},
      {"adapt_max_epochs", "adaptation epoch cap", &c.adapt_max_epochs},
      {"adapt_patience", "adaptation early-stopping patience", &c.adapt_patience},
      {"train_fraction", "training split fraction", &c.train_fraction},
      {"val_fraction", "validation split fraction", &c.val_fraction},
      {"out", "output directory", &c.out},
      {"threads", "worker threads (0 = OpenMP default)", &c.threads},
      {"plots", "write SVG plots", &c.plots},
      {"gate_min_hit", "exit 4 if the hit rate is below this", &c.gate_min_hit},
      {"gate_max_fa", "exit 4 if the false-alarm rate is above this", &c.gate_max_fa},
      {"gate_max_delay", "exit 4 if the mean delay is above this", &c.gate_max_delay},
      {"gate_min_wins", "exit 4 if adaptation beats the baseline in fewer trials (fraction)", &c.gate_min_wins},
      {"gate_max_update", "exit 4 if the mean percent update is above this", &c.gate_max_update},
  };
}

std::string flag_name(std::string key) {
  for (auto& ch : key)
    if (ch == '_') ch = '-';
  return "--" + key;
}

// Shortest text that parses back to the same double.
std::string format_double(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

// Where and how wide a run executes; excluded from the echo so identical
// experiments produce identical manifests.
bool environment_field(std::string_view key) { return key == "out" || key == "threads"; }

std::string field_value(const FieldRef& ref) {
  return std::visit(
      [](auto* p) -> std::string {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, std::string>) return *p;
        else if constexpr (std::is_same_v<T, double>) return format_double(*p);
        else if constexpr (std::is_same_v<T, bool>) return *p ? "true" : "false";
        else return std::to_string(*p);
      },
      ref);
}

std::vector<std::size_t> parse_hidden(const std::string& text) {
  std::vector<std::size_t> out;
  const auto t = text::trim(text);
  if (t.empty() || t == "none" || t == "linear") return out;
  for (auto cell : text::split(t, ',')) {
    const auto v = text::parse_int<std::size_t>(text::trim(cell));
    if (!v || *v == 0) throw ConfigError("hidden widths must be positive integers: '" + text + "'");
    out.push_back(*v);
  }
  return out;
}

LearningRateSchedule parse_schedule(const std::string& text) {
  const auto t = text::lower(text);
  if (t == "constant") return LearningRateSchedule::constant;
  if (t == "invscaling" || t == "inverse_scaling") return LearningRateSchedule::inverse_scaling;
  if (t == "optimal") return LearningRateSchedule::optimal;
  throw ConfigError("unknown learning-rate schedule '" + text + "' (expected constant, invscaling or optimal)");
}

template <class F>
void collect(std::vector<std::string>& out, F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    out.emplace_back(e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------

void ExperimentConfig::resolve(const std::string& command) {
  const bool time_domain = text::lower(features) == "time_domain";
  DetectorConfig d;
  if (command == "predict") {
    d = PredictionConfig::prediction_detector_defaults();
  } else if (time_domain) {
    d.warning_mult = 3.0;
    d.trigger_mult = 3.5;
  } else {
    try {
      d = DetectorConfig::for_distance(parse_distance_kind(distance));
    } catch (const ConfigError&) {
    }
  }
  if (warning == 0.0) warning = d.warning_mult;
  if (trigger == 0.0) trigger = d.trigger_mult;
  if (out.empty()) out = "runs/" + command;
}

std::vector<std::string> ExperimentConfig::problems(const std::string& command) const {
  std::vector<std::string> out_problems;
  auto& p = out_problems;
  if (trials == 0) p.push_back("trials must be >= 1");
  if (!csv.empty() && !fs::exists(csv)) p.push_back("CSV file not found: " + csv);
  if (!spec.empty() && !fs::exists(spec)) p.push_back("spec file not found: " + spec);
  if (csv.empty() && spec.empty()) {
    const auto names = process_names();
    if (std::find(names.begin(), names.end(), process) == names.end())
      p.push_back("unknown process '" + process + "'");
  }
  if (normalize != "none" && normalize != "minmax") p.push_back("normalize must be none or minmax");
  if (!(tolerance > 0.0 && tolerance < 1.0)) p.push_back("tolerance must lie in (0, 1)");
  if (command == "generate" && !csv.empty()) p.push_back("generate needs --process or --spec, not --csv");

  collect(p, [&] {
    for (const auto& s : detector().problems()) p.push_back(s);
  });
  if (command == "predict") {
    collect(p, [&] { parse_predictor_kind(predictor); });
    collect(p, [&] { parse_hidden(hidden); });
    collect(p, [&] { parse_schedule(rff_schedule); });
    if (lag == 0) p.push_back("lag must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) p.push_back("dropout must lie in [0, 1)");
    if (!(learning_rate > 0.0)) p.push_back("learning_rate must be > 0");
    if (!(par_c > 0.0)) p.push_back("par_c must be > 0");
    if (rff_dim == 0) p.push_back("rff_dim must be >= 1");
    if (!(train_fraction > 0.0 && val_fraction > 0.0 && train_fraction + val_fraction < 1.0))
      p.push_back("train_fraction and val_fraction must be positive with a sum below 1");
    AdaptationConfig a;
    a.beta = beta;
    a.u_min = u_min;
    a.u_max = u_max;
    a.validation_pairs = val_pairs;
    for (const auto& s : a.problems()) p.push_back(s);
  }
  return out_problems;
}

DetectorConfig ExperimentConfig::detector() const {
  DetectorConfig d;
  d.lambda = lambda;
  d.warning_mult = warning;
  d.trigger_mult = trigger;
  d.warning_duration = gamma;
  d.sma_window = sma;
  d.stft_window = window;
  d.distance = parse_distance_kind(distance);
  d.features = parse_feature_kind(features);
  d.sigma_placement = parse_sigma_placement(sigma);
  return d;
}

PredictionConfig ExperimentConfig::prediction() const {
  PredictionConfig c;
  c.detector = detector();
  auto kind = parse_predictor_kind(predictor);
  c.adapt = adapt && kind != PredictorKind::baseline;
  c.predictor.kind = kind == PredictorKind::baseline ? PredictorKind::mlp : kind;
  c.predictor.lag_order = lag;
  c.predictor.par.aggressiveness = par_c;
  c.predictor.par.epsilon = par_epsilon;
  c.predictor.rff.feature_dim = rff_dim;
  c.predictor.rff_auto_bandwidth = rff_bandwidth <= 0.0;
  if (rff_bandwidth > 0.0) c.predictor.rff.bandwidth = rff_bandwidth;
  c.predictor.rff.l2 = rff_l2;
  c.predictor.rff.epsilon = rff_epsilon;
  c.predictor.rff.eta0 = rff_eta0;
  c.predictor.rff.schedule = parse_schedule(rff_schedule);
  c.predictor.mlp.hidden = parse_hidden(hidden);
  c.predictor.mlp.dropout_rate = dropout;
  c.predictor.mlp.learning_rate = learning_rate;
  c.predictor.mlp.relu_output = relu_output;
  c.offline.batch_size = batch_size;
  c.offline.max_epochs = max_epochs;
  c.offline.patience = patience;
  c.adaptation.beta = beta;
  c.adaptation.u_min = u_min;
  c.adaptation.u_max = u_max;
  c.adaptation.validation_pairs = val_pairs;
  c.adaptation.epochs.batch_size = batch_size;
  c.adaptation.epochs.max_epochs = adapt_max_epochs;
  c.adaptation.epochs.patience = adapt_patience;
  c.train_fraction = train_fraction;
  c.val_fraction = val_fraction;
  return c;
}

std::string ExperimentConfig::to_text() const {
  ExperimentConfig copy = *this;
  std::string out;
  for (const auto& f : fields(copy))
    if (!environment_field(f.key)) out += std::string(f.key) + " = " + field_value(f.ref) + "\n";
  return out;
}

SegmentedProcessSpec trial_spec(const ExperimentConfig& c, std::size_t trial) {
  const auto seed = trial_seed(c.seed, trial);
  if (!c.spec.empty()) {
    auto spec = load_spec(c.spec);
    spec.seed = seed;
    return spec;
  }
  const std::size_t len = c.length == 0 ? 1000 : c.length;
  if (c.process == "ts-a") return ts_a(c.alpha, seed, len);
  if (c.process == "ts-b") return ts_b(seed, len);
  if (c.process == "ts-c") return ts_c(seed, len);
  if (c.process == "ts-d") return ts_d(seed, len);
  if (c.process == "ts-e") return ts_e(seed, len);
  if (c.length != 0) throw ConfigError("--length applies only to ts-* processes");
  return named_process(c.process, seed, c.alpha);
}

LabeledSeries trial_series(const ExperimentConfig& c, std::size_t trial) {
  if (!c.csv.empty()) {
    CsvLoadOptions opt;
    if (const auto idx = text::parse_int<std::size_t>(c.column)) opt.column = *idx;
    else opt.column = c.column;
    opt.normalization = c.normalize == "minmax" ? Normalization::minmax : Normalization::none;
    return load_csv(c.csv, opt);
  }
  return generate(trial_spec(c, trial));
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw std::runtime_error("SHA-256 unavailable");
  }
  char buf[1 << 15];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char b[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(b, sizeof b, "%02x", md[i]);
    hex += b;
  }
  return hex;
}

// ---------------------------------------------------------------------------

namespace {

class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::string& header) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw DataError("cannot write " + path.string());
    out_ << header << '\n';
  }
  ~CsvWriter() = default;

  template <class... Ts>
  void row(const Ts&... cells) {
    std::size_t i = 0;
    ((out_ << (i++ ? "," : "") << cell(cells)), ...);
    out_ << '\n';
  }

  void close() {
    out_.close();
    if (!out_) throw DataError("failed writing " + path_.string());
  }

 private:
  static std::string cell(double v) {
    if (!std::isfinite(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
  }
  static std::string cell(const std::string& s) { return s; }
  static std::string cell(const char* s) { return s; }
  template <class T>
  static std::string cell(const T& v) {
    return std::to_string(v);
  }

  fs::path path_;
  std::ofstream out_;
};

std::string opt_cell(const std::optional<double>& v) { return format_rate(v, 6); }

class RunDirectory {
 public:
  RunDirectory(fs::path dir, std::string command) : dir_(std::move(dir)), command_(std::move(command)) {
    const auto manifest = dir_ / "manifest.json";
    if (fs::exists(manifest)) {
      json m;
      try {
        std::ifstream in(manifest);
        m = json::parse(in);
      } catch (const std::exception&) {
        throw ConfigError("refusing to overwrite " + dir_.string() + ": unreadable manifest.json");
      }
      const int version = m.value("schema_version", -1);
      if (version != kSchemaVersion)
        throw ConfigError("refusing to overwrite " + dir_.string() + ": schema version " + std::to_string(version) +
                          " differs from " + std::to_string(kSchemaVersion));
    }
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw DataError("cannot create " + dir_.string() + ": " + ec.message());
  }

  fs::path file(const std::string& name) {
    artifacts_.push_back(name);
    return dir_ / name;
  }

  void write_manifest(const ExperimentConfig& config, const std::vector<std::uint64_t>& seeds) const {
    json m;
    m["schema_version"] = kSchemaVersion;
    m["command"] = command_;
    json cfg = json::object();
    ExperimentConfig copy = config;
    for (const auto& f : fields(copy))
      if (!environment_field(f.key)) cfg[f.key] = field_value(f.ref);
    m["config"] = cfg;
    m["seeds"] = seeds;
    json art = json::object();
    for (const auto& a : artifacts_) art[a] = sha256_file(dir_ / a);
    m["artifacts"] = art;
    std::ofstream out(dir_ / "manifest.json", std::ios::binary);
    out << m.dump(2) << '\n';
    if (!out) throw DataError("failed writing manifest.json");
    std::ofstream cfg_out(dir_ / "config.cfg", std::ios::binary);
    cfg_out << "# " << command_ << '\n' << config.to_text();
  }

  const fs::path& path() const { return dir_; }

 private:
  fs::path dir_;
  std::string command_;
  std::vector<std::string> artifacts_;
};

std::vector<std::uint64_t> trial_seeds(const ExperimentConfig& c, std::size_t trials) {
  std::vector<std::uint64_t> s;
  for (std::size_t i = 0; i < trials; ++i) s.push_back(trial_seed(c.seed, i));
  return s;
}

bool gate_on(double v) { return v >= 0.0; }

// --- plots ------------------------------------------------------------------

std::vector<double> indices_where(const std::vector<double>& flags, const std::vector<double>& t) {
  std::vector<double> out;
  for (std::size_t i = 0; i < flags.size() && i < t.size(); ++i)
    if (flags[i] > 0.5) out.push_back(t[i]);
  return out;
}

std::vector<double> read_breakpoints(const fs::path& dir) {
  std::vector<double> out;
  std::ifstream in(dir / "breakpoints.txt");
  std::string line;
  if (!std::getline(in, line)) return out;
  for (auto cell : text::split(line, ','))
    if (const auto v = text::parse_double(text::trim(cell))) out.push_back(*v);
  return out;
}

void plot_trace(const fs::path& dir) {
  if (!fs::exists(dir / "trace.csv")) return;
  auto c = read_csv_columns(dir / "trace.csv");
  const auto bps = read_breakpoints(dir);
  const auto flags = indices_where(c["ns"], c["t"]);

  PlotSpec series;
  series.title = "Series with breakpoints (green) and flags (red)";
  series.y_label = "x";
  series.series.push_back({"x", c["t"], c["x"], "#1f77b4"});
  series.vertical_markers = bps;
  series.event_markers = flags;
  write_svg(series, dir / "series.svg");

  PlotSpec chart;
  chart.title = "Control chart";
  chart.y_label = "distance";
  chart.series.push_back({"d", c["t"], c["d"], "#bbbbbb"});
  chart.series.push_back({"Z", c["t"], c["Z"], "#1f77b4"});
  chart.series.push_back({"SMA", c["t"], c["sma"], "#ff7f0e", true});
  chart.vertical_markers = bps;
  chart.event_markers = flags;
  write_svg(chart, dir / "control_chart.svg");
}

void plot_prediction(const fs::path& dir) {
  if (fs::exists(dir / "mse_trajectory.csv")) {
    auto c = read_csv_columns(dir / "mse_trajectory.csv");
    PlotSpec p;
    p.title = "Running MSE";
    p.y_label = "MSE";
    p.series.push_back({"adapted", c["t"], c["adapted"], "#1f77b4"});
    p.series.push_back({"baseline", c["t"], c["baseline"], "#d62728", true});
    write_svg(p, dir / "mse_trajectory.svg");
  }
  if (fs::exists(dir / "predictions.csv")) {
    auto c = read_csv_columns(dir / "predictions.csv");
    PlotSpec p;
    p.title = "Test-split predictions (updates in red)";
    p.y_label = "normalised value";
    p.series.push_back({"target", c["t"], c["target"], "#7f7f7f"});
    p.series.push_back({"adapted", c["t"], c["adapted"], "#1f77b4"});
    p.series.push_back({"baseline", c["t"], c["baseline"], "#d62728", true});
    p.event_markers = indices_where(c["update"], c["t"]);
    write_svg(p, dir / "predictions.svg");
  }
}

void write_trace(const fs::path& path, const LabeledSeries& series, const std::vector<DetectionOutcome>& trace) {
  CsvWriter w(path, "t,x,d,Z,sma,sigma,zone,ns");
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const auto& o = trace[i];
    w.row(i, series.values[i], o.d, o.z, o.sma, o.sigma, to_string(o.zone), static_cast<int>(o.ns));
  }
  w.close();
}

void write_breakpoints(const fs::path& path, const std::vector<std::size_t>& bps) {
  std::ofstream out(path, std::ios::binary);
  for (std::size_t i = 0; i < bps.size(); ++i) out << (i ? "," : "") << bps[i];
  out << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

// --- commands ---------------------------------------------------------------

int cmd_generate(const ExperimentConfig& c) {
  RunDirectory run(c.out, "generate");
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < c.trials; ++i) {
    const auto spec = trial_spec(c, i);
    const auto series = generate(spec);
    const std::string suffix = c.trials == 1 ? "" : "_" + std::to_string(i);
    write_series_csv(series, run.file("series" + suffix + ".csv"));
    write_breakpoints(run.file("breakpoints" + suffix + ".txt"), series.breakpoints);
    std::ofstream spec_out(run.file("spec" + suffix + ".txt"), std::ios::binary);
    spec_out << format_spec(spec);
    spec_out.close();
    seeds.push_back(trial_seed(c.seed, i));
    std::printf("%s: %zu rows, breakpoints", series.name.c_str(), series.values.size());
    for (auto b : series.breakpoints) std::printf(" %zu", b);
    std::printf("\n");
  }
  run.write_manifest(c, seeds);
  return exit_ok;
}

int cmd_detect(const ExperimentConfig& c) {
  const auto detector = c.detector();
  MatchOptions match;
  match.tolerance_fraction = c.tolerance;
  match.symmetric = c.symmetric;
  const std::size_t trials = c.csv.empty() ? c.trials : 1;
  RunDirectory run(c.out, "detect");

  std::vector<DetectionRun> runs(trials);
  for_each_trial(trials, true, [&](std::size_t i) {
    runs[i] = run_detection(trial_series(c, i), detector, match);
    runs[i].seed = trial_seed(c.seed, i);
  });

  const auto first = trial_series(c, 0);
  std::vector<DetectionOutcome> trace;
  run_detection(first, detector, match, &trace);
  write_trace(run.file("trace.csv"), first, trace);
  write_breakpoints(run.file("breakpoints.txt"), first.breakpoints);

  CsvWriter scores(run.file("scores.csv"), "trial,seed,tp,fp,tn,fn,hit,false_alarm,mean_delay,seconds");
  for (std::size_t i = 0; i < trials; ++i) {
    const auto& r = runs[i];
    const auto rt = rates(r.score);
    std::vector<double> d(r.score.delays.begin(), r.score.delays.end());
    scores.row(i, r.seed, r.score.tp, r.score.fp, r.score.tn, r.score.fn, opt_cell(rt.hit), opt_cell(rt.false_alarm),
               d.empty() ? std::string("NA") : std::to_string(mean_std(d).mean), r.seconds);
  }
  scores.close();

  CsvWriter events(run.file("events.csv"), "trial,t");
  for (std::size_t i = 0; i < trials; ++i)
    for (auto e : runs[i].events) events.row(i, e);
  events.close();

  const auto s = summarize(runs);
  CsvWriter summary(run.file("summary.csv"), "metric,value");
  summary.row("trials", s.trials);
  summary.row("hit_rate", opt_cell(s.pooled_rates.hit));
  summary.row("false_alarm", opt_cell(s.pooled_rates.false_alarm));
  summary.row("missed", opt_cell(s.pooled_rates.missed));
  summary.row("specificity", opt_cell(s.pooled_rates.specificity));
  summary.row("mean_trial_hit_rate", opt_cell(s.per_trial_mean.hit));
  summary.row("mean_trial_false_alarm", opt_cell(s.per_trial_mean.false_alarm));
  summary.row("delay_mean", s.delay.n ? std::to_string(s.delay.mean) : std::string("NA"));
  summary.row("delay_std", s.delay.n ? std::to_string(s.delay.std) : std::string("NA"));
  for (const auto& [k, v] : s.pooled.detected_count_histogram) summary.row("trials_detecting_" + std::to_string(k), v);
  summary.close();

  if (c.plots) {
    plot_trace(run.path());
    run.file("series.svg");
    run.file("control_chart.svg");
  }
  run.write_manifest(c, trial_seeds(c, trials));

  std::printf("trials %zu  hit %s  false-alarm %s  delay %s\n", s.trials, format_rate(s.pooled_rates.hit).c_str(),
              format_rate(s.pooled_rates.false_alarm).c_str(),
              s.delay.n ? (std::to_string(s.delay.mean) + " +- " + std::to_string(s.delay.std)).c_str() : "NA");

  std::vector<std::string> failed;
  if (gate_on(c.gate_min_hit) && !(s.pooled_rates.hit && *s.pooled_rates.hit >= c.gate_min_hit))
    failed.push_back("hit rate below " + format_double(c.gate_min_hit));
  if (gate_on(c.gate_max_fa) && !(s.pooled_rates.false_alarm && *s.pooled_rates.false_alarm <= c.gate_max_fa))
    failed.push_back("false-alarm rate above " + format_double(c.gate_max_fa));
  if (gate_on(c.gate_max_delay) && !(s.delay.n && s.delay.mean <= c.gate_max_delay))
    failed.push_back("mean delay above " + format_double(c.gate_max_delay));
  for (const auto& f : failed) std::fprintf(stderr, "gate failed: %s\n", f.c_str());
  return failed.empty() ? exit_ok : exit_gate;
}

int cmd_predict(const ExperimentConfig& c) {
  auto pc = c.prediction();
  RunDirectory run(c.out, "predict");
  std::vector<PredictionRun> runs(c.trials);
  for_each_trial(c.trials, true, [&](std::size_t i) {
    auto cfg = pc;
    cfg.keep_trace = i == 0;
    runs[i] = run_prediction(trial_series(c, i), cfg, derive_seed(trial_seed(c.seed, i), 7));
  });

  CsvWriter scores(run.file("scores.csv"),
                   "trial,seed,adapted_mse,baseline_mse,percent_update,updates,test_steps,exec_time_s,"
                   "offline_epochs,offline_best_epoch,failed_updates");
  std::vector<double> adapted, baseline, update, exec;
  std::size_t wins = 0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& r = runs[i];
    std::size_t failed = 0;
    for (const auto& a : r.adaptations) failed += a.failed;
    scores.row(i, trial_seed(c.seed, i), r.adapted.overall_mse, r.baseline.overall_mse, r.adapted.percent_update,
               r.adapted.updates, r.adapted.eligible_steps, r.adapted.exec_time_s, r.offline.epochs_run,
               r.offline.best_epoch, failed);
    adapted.push_back(r.adapted.overall_mse);
    baseline.push_back(r.baseline.overall_mse);
    update.push_back(r.adapted.percent_update);
    exec.push_back(r.adapted.exec_time_s);
    wins += r.adapted.overall_mse < r.baseline.overall_mse;
  }
  scores.close();

  const auto& r0 = runs.front();
  CsvWriter traj(run.file("mse_trajectory.csv"), "t,adapted,baseline");
  for (std::size_t k = 0; k < r0.targets.size(); ++k)
    traj.row(r0.test_begin + k, r0.adapted.mse_trajectory[k], r0.baseline.mse_trajectory[k]);
  traj.close();

  CsvWriter preds(run.file("predictions.csv"), "t,target,adapted,baseline,update");
  for (std::size_t k = 0; k < r0.targets.size(); ++k)
    preds.row(r0.test_begin + k, r0.targets[k], r0.adapted_predictions[k], r0.baseline_predictions[k],
              static_cast<int>(r0.update_flags[k]));
  preds.close();

  write_adaptation_log(run.file("adaptation_log.csv").string(), r0.adaptations);
  const auto first = trial_series(c, 0);
  write_trace(run.file("trace.csv"), first, r0.trace);
  write_breakpoints(run.file("breakpoints.txt"), first.breakpoints);

  const auto ma = mean_std(adapted), mb = mean_std(baseline), mu = mean_std(update), me = mean_std(exec);
  CsvWriter summary(run.file("summary.csv"), "metric,mean,std");
  summary.row("adapted_mse", ma.mean, ma.std);
  summary.row("baseline_mse", mb.mean, mb.std);
  summary.row("percent_update", mu.mean, mu.std);
  summary.row("exec_time_s", me.mean, me.std);
  summary.row("trials_adapted_better", static_cast<double>(wins), 0.0);
  summary.close();

  if (c.plots) {
    plot_prediction(run.path());
    plot_trace(run.path());
    for (const char* f : {"mse_trajectory.svg", "predictions.svg", "series.svg", "control_chart.svg"}) run.file(f);
  }
  run.write_manifest(c, trial_seeds(c, c.trials));

  std::printf("trials %zu  adapted MSE %.6g +- %.3g  baseline MSE %.6g +- %.3g  update %.2f%% +- %.2f  better in %zu/%zu\n",
              c.trials, ma.mean, ma.std, mb.mean, mb.std, mu.mean, mu.std, wins, c.trials);

  std::vector<std::string> failed;
  const double win_fraction = static_cast<double>(wins) / static_cast<double>(c.trials);
  if (gate_on(c.gate_min_wins) && win_fraction < c.gate_min_wins)
    failed.push_back("adaptation beat the baseline in only " + std::to_string(wins) + " trials");
  if (gate_on(c.gate_max_update) && mu.mean > c.gate_max_update)
    failed.push_back("percent update above " + format_double(c.gate_max_update));
  for (const auto& f : failed) std::fprintf(stderr, "gate failed: %s\n", f.c_str());
  return failed.empty() ? exit_ok : exit_gate;
}

int cmd_bench(const ExperimentConfig& c) {
  RunDirectory run(c.out, "bench");
  const FeatureKind kinds[] = {FeatureKind::spectral_energy, FeatureKind::time_domain};
  CsvWriter rows(run.file("bench.csv"), "trial,seed,features,steps,seconds,per_step_us");
  std::map<FeatureKind, std::vector<double>> per_step;
  for (std::size_t i = 0; i < c.trials; ++i) {
    const auto series = trial_series(c, i);
    for (auto kind : kinds) {
      ExperimentConfig k = c;
      k.features = to_string(kind);
      k.warning = k.trigger = 0.0;
      k.resolve("bench");
      const auto r = run_detection(series, k.detector(), {});
      const double us = 1e6 * r.seconds / static_cast<double>(r.steps);
      per_step[kind].push_back(us);
      rows.row(i, trial_seed(c.seed, i), to_string(kind), r.steps, r.seconds, us);
    }
  }
  rows.close();
  CsvWriter summary(run.file("summary.csv"), "features,mean_per_step_us,std_per_step_us,trials");
  for (auto kind : kinds) {
    const auto m = mean_std(per_step[kind]);
    summary.row(to_string(kind), m.mean, m.std, m.n);
    std::printf("%-12s %.4f +- %.4f us/step\n", to_string(kind).c_str(), m.mean, m.std);
  }
  const double ratio = mean_std(per_step[FeatureKind::time_domain]).mean /
                       mean_std(per_step[FeatureKind::spectral_energy]).mean;
  summary.row("time_domain/spectral", ratio, 0.0, c.trials);
  summary.close();
  std::printf("time_domain / spectral per-step ratio: %.3f\n", ratio);
  run.write_manifest(c, trial_seeds(c, c.trials));
  return exit_ok;
}

int cmd_report(const fs::path& dir) {
  const auto manifest = dir / "manifest.json";
  if (!fs::exists(manifest)) throw ConfigError("no manifest.json in " + dir.string());
  std::ifstream in(manifest);
  const json m = json::parse(in);
  if (m.value("schema_version", -1) != kSchemaVersion)
    throw ConfigError(dir.string() + ": unsupported schema version");
  std::printf("command: %s\n", m.value("command", std::string("?")).c_str());
  bool intact = true;
  for (const auto& [name, hash] : m["artifacts"].items()) {
    const auto p = dir / name;
    const bool ok = fs::exists(p) && (name.size() > 4 && name.substr(name.size() - 4) == ".svg"
                                          ? true
                                          : sha256_file(p) == hash.get<std::string>());
    std::printf("  %-24s %s\n", name.c_str(), ok ? "ok" : "MODIFIED OR MISSING");
    intact = intact && ok;
  }
  if (fs::exists(dir / "summary.csv")) {
    std::ifstream s(dir / "summary.csv");
    std::cout << s.rdbuf();
  }
  plot_trace(dir);
  plot_prediction(dir);
  if (!intact) std::fprintf(stderr, "error: artifacts do not match the manifest\n");
  return intact ? exit_ok : exit_runtime;
}

// Loads `key = value` lines (or a manifest's "config" object) as flag
// arguments placed before the command line, so explicit flags win.
std::vector<std::string> config_arguments(const fs::path& path) {
  std::vector<std::string> args;
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  if (path.extension() == ".json") {
    json m;
    try {
      m = json::parse(in);
    } catch (const std::exception& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
    if (!m.contains("config")) throw ConfigError(path.string() + ": no \"config\" object");
    for (const auto& [k, v] : m["config"].items())
      if (!v.is_string() || !v.get<std::string>().empty())
        args.push_back(flag_name(k) + "=" + (v.is_string() ? v.get<std::string>() : v.dump()));
    return args;
  }
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    const auto body = text::trim(std::string_view(line).substr(0, hash));
    if (body.empty() || body.front() == '[') continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    const auto key = std::string(text::trim(body.substr(0, eq)));
    auto value = std::string(text::trim(body.substr(eq + 1)));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (!value.empty()) args.push_back(flag_name(key) + "=" + value);
  }
  return args;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  ExperimentConfig config;
  std::string config_file;
  std::string report_dir;

  CLI::App app{"Streaming stationarity detection and adaptive prediction"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"generate", "write synthetic series with ground-truth breakpoints"},
      {"detect", "run the detector and score it against breakpoints"},
      {"predict", "offline-train a predictor, then stream the test split with adaptation"},
      {"bench", "per-step timing of the spectral and time-domain pipelines"},
  };
  std::vector<std::string> keys;
  for (auto& f : fields(config)) keys.push_back(f.key);
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    sub->add_option("--config", config_file, "key = value file or manifest.json; flags override it");
    for (auto& f : fields(config))
      std::visit([&](auto* p) { sub->add_option(flag_name(f.key), *p, f.help); }, f.ref);
  }
  auto* report = app.add_subcommand("report", "verify a run directory and redraw its plots");
  report->add_option("--in", report_dir, "run directory")->required();

  // Splice config-file arguments in front of the explicit flags.
  std::vector<std::string> args(argv + 1, argv + argc);
  for (std::size_t i = 0; i < args.size(); ++i) {
    std::string path;
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
    if (path.empty()) continue;
    try {
      auto extra = config_arguments(path);
      for (const auto& a : extra) {
        const auto key = a.substr(2, a.find('=') - 2);
        std::string k = key;
        for (auto& ch : k)
          if (ch == '-') ch = '_';
        if (std::find(keys.begin(), keys.end(), k) == keys.end())
          throw ConfigError(path + ": unknown key '" + k + "'");
      }
      const auto cmd = std::find_if(args.begin(), args.end(), [](const std::string& s) { return s.rfind("-", 0) != 0; });
      const auto pos = cmd == args.end() ? args.begin() : cmd + 1;
      args.insert(pos, extra.begin(), extra.end());
    } catch (const ConfigError& e) {
      std::fprintf(stderr, "config error: %s\n", e.what());
      return exit_config;
    }
    break;
  }
  std::vector<const char*> cargs{argv[0]};
  for (const auto& a : args) cargs.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_config;
  }

  try {
    if (report->parsed()) return cmd_report(report_dir);
    std::string command;
    for (auto* sub : app.get_subcommands()) command = sub->get_name();
    config.resolve(command);
    const auto problems = config.problems(command);
    if (!problems.empty()) {
      std::fprintf(stderr, "config error:\n");
      for (const auto& p : problems) std::fprintf(stderr, "  - %s\n", p.c_str());
      return exit_config;
    }
    if (config.threads > 0) omp_set_num_threads(config.threads);
    if (command == "generate") return cmd_generate(config);
    if (command == "detect") return cmd_detect(config);
    if (command == "predict") return cmd_predict(config);
    if (command == "bench") return cmd_bench(config);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return exit_config;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_runtime;
  }
  return exit_config;
}

}  // namespace safe
