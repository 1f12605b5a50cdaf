#include "safe/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <exception>
#include <stdexcept>

#include "safe/errors.hpp"

namespace safe {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Runs body(i) for i in [0, n) across OpenMP threads and rethrows the
// first exception by index once every worker is done.
template <class Body>
void parallel_for(std::size_t n, Body body) {
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

std::uint64_t trial_seed(std::uint64_t base_seed, std::size_t trial) { return base_seed + trial; }

void for_each_trial(std::size_t trials, bool parallel, const std::function<void(std::size_t)>& body) {
  if (parallel) {
    parallel_for(trials, body);
    return;
  }
  for (std::size_t i = 0; i < trials; ++i) body(i);
}

LabeledSeries detection_series(const DetectionExperiment& experiment, std::size_t trial) {
  const auto seed = trial_seed(experiment.base_seed, trial);
  const auto name = experiment.process;
  SegmentedProcessSpec spec;
  if (name == "ts-a") spec = ts_a(experiment.alpha, seed, experiment.length);
  else if (name == "ts-b") spec = ts_b(seed, experiment.length);
  else if (name == "ts-c") spec = ts_c(seed, experiment.length);
  else if (name == "ts-d") spec = ts_d(seed, experiment.length);
  else if (name == "ts-e") spec = ts_e(seed, experiment.length);
  else spec = named_process(name, seed, experiment.alpha);
  return generate(spec);
}

DetectionRun run_detection(const LabeledSeries& series, const DetectorConfig& config, MatchOptions match,
                           std::vector<DetectionOutcome>* trace) {
  Detector detector(config);
  DetectionRun run;
  run.steps = series.values.size();
  run.flags.assign(run.steps, 0);
  if (trace) {
    trace->clear();
    trace->reserve(run.steps);
  }
  const auto start = Clock::now();
  for (std::size_t i = 0; i < run.steps; ++i) {
    const auto out = detector.step(series.values[i]);
    run.flags[i] = out.ns;
    if (trace) trace->push_back(out);
  }
  run.seconds = seconds_since(start);

  match.eligible_begin = std::max(match.eligible_begin, config.stft_window);
  run.events = collapse_flags(run.flags, match_tolerance(run.steps, match.tolerance_fraction));
  run.score = score_flags(run.flags, series.breakpoints, match);
  return run;
}

std::vector<DetectionRun> run_detection_serial(const DetectionExperiment& experiment) {
  experiment.detector.validate();
  std::vector<DetectionRun> runs(experiment.trials);
  for (std::size_t i = 0; i < experiment.trials; ++i) {
    runs[i] = run_detection(detection_series(experiment, i), experiment.detector, experiment.match);
    runs[i].seed = trial_seed(experiment.base_seed, i);
  }
  return runs;
}

std::vector<DetectionRun> run_detection_parallel(const DetectionExperiment& experiment) {
  experiment.detector.validate();
  std::vector<DetectionRun> runs(experiment.trials);
  parallel_for(experiment.trials, [&](std::size_t i) {
    runs[i] = run_detection(detection_series(experiment, i), experiment.detector, experiment.match);
    runs[i].seed = trial_seed(experiment.base_seed, i);
  });
  return runs;
}

DetectionSummary summarize(const std::vector<DetectionRun>& runs) {
  std::vector<DetectionScore> scores;
  scores.reserve(runs.size());
  for (const auto& r : runs) scores.push_back(r.score);
  return aggregate(scores);
}

// ---------------------------------------------------------------------------

DetectorConfig PredictionConfig::prediction_detector_defaults() {
  DetectorConfig c;
  c.lambda = 0.3;
  c.warning_mult = 10.0;
  c.trigger_mult = 20.0;
  return c;
}

PredictionRun run_prediction(const LabeledSeries& series, const PredictionConfig& config, std::uint64_t seed) {
  config.detector.validate();
  config.adaptation.validate();
  const std::size_t n = series.values.size();
  const auto parts = split_chronological(series, config.train_fraction, config.val_fraction);
  const std::size_t n_train = parts.train.values.size();
  const std::size_t n_val = parts.validation.values.size();
  const LagEmbedding lags(config.predictor.lag_order);
  if (n_train <= lags.order() + 1) throw ConfigError("training split is too short for the lag order");
  if (parts.test.values.empty()) throw ConfigError("test split is empty");
  if (n_val == 0) throw ConfigError("validation split is empty");

  PredictionRun run;
  run.seed = seed;
  run.test_begin = n_train + n_val;
  run.scaler = MinMaxScaler::fit(parts.train.values);
  std::vector<double> scaled = series.values;
  run.scaler.transform_in_place(scaled);

  const Dataset pairs = lags.embed(scaled);
  const auto pair_index = [&](std::size_t t) { return t - lags.order(); };
  const Dataset train = pairs.slice(0, pair_index(n_train));
  const Dataset val = pairs.slice(pair_index(n_train), pair_index(run.test_begin));

  auto model = make_predictor(config.predictor, train, seed);
  const auto offline_start = Clock::now();
  run.offline = model->fit_batch(train, val, config.offline);
  run.offline_seconds = seconds_since(offline_start);
  FrozenBaseline baseline(model->clone());

  Detector detector(config.detector);
  if (config.keep_trace) run.trace.reserve(n);
  for (std::size_t t = 0; t < run.test_begin; ++t) {
    const auto out = detector.step(series.values[t]);
    if (config.keep_trace) run.trace.push_back(out);
  }

  ReplayBuffer buffer(config.adaptation.u_max + config.adaptation.validation_pairs);
  buffer.push(pairs.slice(0, pair_index(run.test_begin)));

  const std::size_t steps = n - run.test_begin;
  run.targets.resize(steps);
  run.adapted_predictions.resize(steps);
  run.baseline_predictions.resize(steps);
  run.update_flags.assign(steps, 0);

  const auto start = Clock::now();
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t t = run.test_begin + k;
    const auto input = pairs.row(pair_index(t));
    run.targets[k] = scaled[t];
    run.adapted_predictions[k] = model->predict(input);
    run.baseline_predictions[k] = baseline.predict(input);

    const auto out = detector.step(series.values[t]);
    if (config.keep_trace) run.trace.push_back(out);
    buffer.push(input, scaled[t], t);
    if (out.ns && config.adapt) {
      auto report = on_flag(*model, buffer, t, out, config.adaptation);
      if (!report.skipped) run.update_flags[k] = 1;
      run.adaptations.push_back(std::move(report));
    }
  }
  const double elapsed = seconds_since(start);

  run.adapted = prediction_score(run.adapted_predictions, run.targets, run.update_flags, elapsed);
  const std::vector<std::uint8_t> none(steps, 0);
  run.baseline = prediction_score(run.baseline_predictions, run.targets, none, 0.0);
  return run;
}

LabeledSeries prediction_series(const PredictionExperiment& experiment, std::size_t trial) {
  return generate(named_process(experiment.process, trial_seed(experiment.base_seed, trial)));
}

std::vector<PredictionRun> run_prediction_serial(const PredictionExperiment& experiment) {
  std::vector<PredictionRun> runs(experiment.trials);
  for (std::size_t i = 0; i < experiment.trials; ++i) {
    const auto seed = trial_seed(experiment.base_seed, i);
    runs[i] = run_prediction(prediction_series(experiment, i), experiment.config, derive_seed(seed, 7));
  }
  return runs;
}

std::vector<PredictionRun> run_prediction_parallel(const PredictionExperiment& experiment) {
  std::vector<PredictionRun> runs(experiment.trials);
  parallel_for(experiment.trials, [&](std::size_t i) {
    const auto seed = trial_seed(experiment.base_seed, i);
    runs[i] = run_prediction(prediction_series(experiment, i), experiment.config, derive_seed(seed, 7));
  });
  return runs;
}

}  // namespace safe
