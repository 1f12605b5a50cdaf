#include <doctest.h>

#include <cmath>

#include "safe/adaptation.hpp"
#include "safe/errors.hpp"
#include "safe/experiment.hpp"
#include "support.hpp"

using namespace safe;
using testing_support::gaussian_vector;

namespace {

ReplayBuffer buffer_with(std::size_t first, std::size_t last, std::size_t capacity = 5000) {
  ReplayBuffer buf(capacity);
  for (std::size_t t = first; t <= last; ++t) {
    const std::vector<double> x{std::sin(0.1 * double(t)), std::cos(0.1 * double(t))};
    buf.push(x, 0.3 * x[0] - 0.2 * x[1], t);
  }
  return buf;
}

DetectionOutcome flagged(double z, double sma) {
  DetectionOutcome o;
  o.z = z;
  o.sma = sma;
  o.deviation = std::abs(z - sma);
  o.ns = true;
  return o;
}

}  // namespace

TEST_CASE("mini-batch rounding table") {
  struct Row {
    double deviation;
    std::size_t u;
  };
  const Row table[] = {{0.0, 0}, {4.9, 0}, {5.0, 1}, {15.0, 2}, {25.0, 3}, {45.0, 5},
                       {53.0, 5}, {54.9, 5}, {55.0, 6}, {65.0, 7}, {1234.0, 123}};
  for (const auto& row : table) {
    CAPTURE(row.deviation);
    CHECK(raw_minibatch_size(10.0 + row.deviation, 10.0, 0.1) == row.u);
    CHECK(raw_minibatch_size(10.0 - row.deviation, 10.0, 0.1) == row.u);
  }
}

TEST_CASE("mini-batch size is clamped and monotone") {
  AdaptationConfig c;
  CHECK(minibatch_size(3.0, 3.0, c, 100) == c.u_min);
  CHECK(minibatch_size(5003.0, 3.0, c, 200) == 200);
  CHECK(minibatch_size(5003.0, 3.0, c, 5) == 5);
  c.u_max = 50;
  CHECK(minibatch_size(5003.0, 3.0, c, 200) == 50);

  AdaptationConfig literal;
  literal.u_min = 0;
  CHECK(minibatch_size(3.0, 3.0, literal, 100) == 0);
  std::size_t prev = 0;
  for (double dev = 0.0; dev < 3000.0; dev += 7.3) {
    const auto u = raw_minibatch_size(dev, 0.0, 0.1);
    CHECK(u >= prev);
    prev = u;
  }
}

TEST_CASE("adaptation config validation") {
  AdaptationConfig c;
  CHECK(c.problems().empty());
  c.beta = -1.0;
  c.validation_pairs = 0;
  c.u_max = 0;
  CHECK(c.problems().size() >= 3);
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("replay buffer") {
  ReplayBuffer buf(3);
  const std::vector<double> x{1.0};
  buf.push(x, 1.0, 1);
  buf.push(x, 2.0, 2);
  CHECK_THROWS_AS(buf.push(x, 3.0, 2), std::logic_error);
  buf.push(x, 3.0, 5);
  buf.push(x, 4.0, 6);
  CHECK(buf.size() == 3);
  CHECK(buf[0].time == 2);
  CHECK(buf.count_before(6) == 2);
  const auto last_two = buf.latest_before(6, 2);
  CHECK(last_two.times == std::vector<std::size_t>{2, 5});
  CHECK(buf.ending_at(6, 1).times == std::vector<std::size_t>{6});
  CHECK(buf.ending_at(4, 1).empty());
}

TEST_CASE("flag handling trains on the pairs before t only") {
  PassiveAggressiveRegressor pa(2);
  const auto buf = buffer_with(1, 300);
  AdaptationConfig c;
  const auto report = on_flag(pa, buf, 250, flagged(130.0, 10.0), c);
  CHECK_FALSE(report.skipped);
  CHECK(report.u == 12);
  CHECK(report.last_train_time == 249);
  CHECK(report.first_train_time == 238);
  CHECK(report.last_train_time < report.t);

  // Pairs after t exist in the buffer but must not matter.
  PassiveAggressiveRegressor clean(2);
  on_flag(clean, buffer_with(1, 250), 250, flagged(130.0, 10.0), c);
  CHECK(clean.snapshot() == pa.snapshot());

  AdaptationConfig wide = c;
  wide.validation_pairs = 4;
  PassiveAggressiveRegressor pa4(2);
  const auto r4 = on_flag(pa4, buf, 250, flagged(130.0, 10.0), wide);
  CHECK(r4.last_train_time == 246);
}

TEST_CASE("u is clamped to the pairs that exist") {
  MLPParams p;
  p.hidden = {8};
  Mlp net(2, p);
  const auto buf = buffer_with(1, 201);
  AdaptationConfig c;
  const auto r = on_flag(net, buf, 201, flagged(5010.0, 10.0), c);
  CHECK(r.u == 200);
  CHECK(r.first_train_time == 1);
}

TEST_CASE("flag handling preconditions and no-ops") {
  PassiveAggressiveRegressor pa(2);
  const auto buf = buffer_with(1, 50);
  DetectionOutcome quiet;
  CHECK_THROWS_AS(on_flag(pa, buf, 50, quiet, AdaptationConfig{}), std::logic_error);

  const auto snap = pa.snapshot();
  ReplayBuffer empty(10);
  CHECK(on_flag(pa, empty, 50, flagged(100.0, 0.0), AdaptationConfig{}).skipped);
  CHECK(on_flag(pa, buf, 80, flagged(100.0, 0.0), AdaptationConfig{}).skipped);
  CHECK(on_flag(pa, buffer_with(1, 1), 1, flagged(100.0, 0.0), AdaptationConfig{}).skipped);
  CHECK(pa.snapshot() == snap);
}

TEST_CASE("divergent retraining is rolled back and reported") {
  MLPParams p;
  p.hidden = {16};
  p.learning_rate = 50.0;
  p.dropout_rate = 0.0;
  Mlp net(2, p);
  ReplayBuffer buf(100);
  for (std::size_t t = 1; t <= 60; ++t) buf.push(gaussian_vector(2, unsigned(t), 100.0), 1e6 * double(t), t);
  const auto snap = net.snapshot();
  const auto r = on_flag(net, buf, 60, flagged(1000.0, 0.0), AdaptationConfig{});
  CHECK(r.failed);
  CHECK(net.snapshot() == snap);
}

TEST_CASE("adaptation log") {
  testing_support::TempDir dir("adapt");
  AdaptationReport r;
  r.t = 7;
  r.u = 8;
  r.epochs = 3;
  write_adaptation_log((dir / "log.csv").string(), std::vector<AdaptationReport>{r});
  const auto text = testing_support::read_file(dir / "log.csv");
  CHECK(text.rfind("t,u,epochs,val_err_before,val_err_after,wall_ms\n7,8,3,", 0) == 0);
}

namespace {

PredictionConfig quick_config(PredictorKind kind) {
  PredictionConfig c;
  c.predictor.kind = kind;
  c.predictor.mlp.hidden = {16};
  c.predictor.rff.feature_dim = 64;
  c.offline.max_epochs = 20;
  c.adaptation.epochs.max_epochs = 20;
  return c;
}

}  // namespace

TEST_CASE("constant stream never adapts") {
  LabeledSeries s;
  s.values.assign(1200, 0.75);
  for (auto kind : {PredictorKind::par, PredictorKind::mlp}) {
    const auto run = run_prediction(s, quick_config(kind), 3);
    CHECK(run.adaptations.empty());
    CHECK(run.adapted.percent_update == 0.0);
    CHECK(run.adapted_predictions == run.baseline_predictions);
  }
}

TEST_CASE("harness bookkeeping on a drifting series") {
  const auto series = generate(linear_1(4));
  for (auto kind : {PredictorKind::par, PredictorKind::ksvr, PredictorKind::mlp}) {
    CAPTURE(to_string(kind));
    const auto run = run_prediction(series, quick_config(kind), 11);
    CHECK(run.test_begin == 3000);
    CHECK(run.targets.size() == 9000);
    CHECK_FALSE(run.adaptations.empty());

    std::size_t updates = 0;
    for (auto f : run.update_flags) updates += f;
    CHECK(run.adapted.updates == updates);
    CHECK(run.adapted.percent_update == 100.0 * double(updates) / 9000.0);

    std::size_t done = 0;
    for (const auto& a : run.adaptations) {
      CHECK(a.t >= run.test_begin);
      if (a.skipped) continue;
      ++done;
      CHECK(a.last_train_time < a.t);
      CHECK(a.u >= 1);
    }
    CHECK(done == updates);

    // Until the first flag both models are the same model.
    const std::size_t first = run.adaptations.front().t - run.test_begin;
    for (std::size_t k = 0; k <= first; ++k) REQUIRE(run.adapted_predictions[k] == run.baseline_predictions[k]);
  }
}

TEST_CASE("baseline-only runs never update") {
  const auto series = generate(linear_1(2));
  auto c = quick_config(PredictorKind::mlp);
  c.adapt = false;
  const auto run = run_prediction(series, c, 5);
  CHECK(run.adapted.percent_update == 0.0);
  CHECK(run.adaptations.empty());
  CHECK(run.adapted_predictions == run.baseline_predictions);
}
