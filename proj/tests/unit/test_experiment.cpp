#include <doctest.h>

#include <algorithm>
#include <stdexcept>

#include "safe/experiment.hpp"

using namespace safe;

TEST_CASE("trial seeds count up from the base seed") {
  CHECK(trial_seed(100, 0) == 100);
  CHECK(trial_seed(100, 7) == 107);
}

TEST_CASE("parallel detection trials equal the serial run") {
  for (auto kind : {FeatureKind::spectral_energy, FeatureKind::time_domain}) {
    DetectionExperiment e;
    e.process = "ts-c";
    e.trials = 12;
    e.detector.features = kind;
    const auto serial = run_detection_serial(e);
    const auto parallel = run_detection_parallel(e);
    REQUIRE(serial.size() == parallel.size());
    for (std::size_t i = 0; i < serial.size(); ++i) {
      CHECK(serial[i].seed == parallel[i].seed);
      CHECK(serial[i].flags == parallel[i].flags);
      CHECK(serial[i].score == parallel[i].score);
    }
    const auto a = summarize(serial), b = summarize(parallel);
    CHECK(a.pooled == b.pooled);
  }
}

TEST_CASE("parallel prediction trials equal the serial run") {
  PredictionExperiment e;
  e.trials = 3;
  e.config.predictor.kind = PredictorKind::ksvr;
  e.config.predictor.rff.feature_dim = 32;
  const auto serial = run_prediction_serial(e);
  const auto parallel = run_prediction_parallel(e);
  for (std::size_t i = 0; i < serial.size(); ++i) {
    CHECK(serial[i].adapted_predictions == parallel[i].adapted_predictions);
    CHECK(serial[i].update_flags == parallel[i].update_flags);
  }
}

TEST_CASE("trial errors surface after every trial finishes") {
  std::vector<int> ran(8, 0);
  CHECK_THROWS_WITH_AS(for_each_trial(8, true,
                                      [&](std::size_t i) {
                                        ran[i] = 1;
                                        if (i == 3 || i == 5) throw std::runtime_error("trial " + std::to_string(i));
                                      }),
                       "trial 3", std::runtime_error);
  CHECK(std::count(ran.begin(), ran.end(), 1) == 8);
}

TEST_CASE("detection runs score against the series breakpoints") {
  const auto s = generate(ts_b(2));
  std::vector<DetectionOutcome> trace;
  const auto r = run_detection(s, DetectorConfig{}, {}, &trace);
  CHECK(trace.size() == 1000);
  CHECK(r.steps == 1000);
  CHECK(r.score.tp + r.score.fn == 2);
  CHECK(r.flags.size() == 1000);
  for (std::size_t t = 0; t < 5; ++t) CHECK_FALSE(trace[t].ns);
}
