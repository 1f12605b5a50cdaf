#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "safe/errors.hpp"
#include "safe/predictors.hpp"
#include "support.hpp"

using namespace safe;
using testing_support::gaussian_vector;

namespace {

Dataset toy_linear(std::size_t n, unsigned seed, double noise = 0.0) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> e(0.0, 1.0);
  Dataset d(2);
  for (std::size_t i = 0; i < n; ++i) {
    const double x[2] = {u(gen), u(gen)};
    d.push(x, 0.5 * x[0] - 0.3 * x[1] + 0.1 + noise * e(gen), i);
  }
  return d;
}

Dataset toy_nonlinear(std::size_t n, unsigned seed, double noise) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> e(0.0, 1.0);
  Dataset d(2);
  for (std::size_t i = 0; i < n; ++i) {
    const double x[2] = {u(gen), u(gen)};
    d.push(x, std::sin(3.0 * x[0]) * x[1] + noise * e(gen), i);
  }
  return d;
}

std::vector<std::unique_ptr<OnlinePredictor>> one_of_each() {
  const auto data = toy_linear(64, 1);
  std::vector<std::unique_ptr<OnlinePredictor>> out;
  out.push_back(std::make_unique<PassiveAggressiveRegressor>(2));
  RFFSVRParams rp;
  rp.feature_dim = 32;
  out.push_back(std::make_unique<RffSvr>(2, rp));
  MLPParams mp;
  mp.hidden = {8, 4};
  out.push_back(std::make_unique<Mlp>(2, mp));
  out.push_back(std::make_unique<FrozenBaseline>(std::make_unique<Mlp>(2, mp)));
  for (auto& m : out) m->incremental_fit(data);
  return out;
}

}  // namespace

TEST_CASE("lag embedding") {
  const std::vector<double> s{1, 2, 3, 4, 5, 6, 7};
  LagEmbedding lag(3);
  const auto d = lag.embed(s, 100);
  REQUIRE(d.size() == 4);
  CHECK(std::vector<double>(d.row(0).begin(), d.row(0).end()) == std::vector<double>{1, 2, 3});
  CHECK(d.targets[0] == 4.0);
  CHECK(d.times[0] == 103);
  CHECK(lag.input_at(s, 6) == std::vector<double>{4, 5, 6});
  CHECK(lag.embed(std::vector<double>{1, 2}).empty());
}

TEST_CASE("passive-aggressive updates") {
  SUBCASE("inside the tube nothing changes") {
    PassiveAggressiveRegressor pa(2, {0.05, 0.1, true});
    pa.set_weights({0.5, -0.5}, 0.2);
    const std::vector<double> x{1.0, 1.0};
    const auto step = pa.update(x, 0.25);
    CHECK(step.loss == 0.0);
    CHECK(pa.weights() == std::vector<double>{0.5, -0.5});
    CHECK(pa.bias() == 0.2);
  }
  SUBCASE("uncapped step solves to the target") {
    PassiveAggressiveRegressor pa(1, {1e300, 0.0, true});
    const std::vector<double> x{1.0};
    pa.update(x, 2.0);
    CHECK(pa.predict(x) == 2.0);
  }
  SUBCASE("capped step has length C times the input norm") {
    PassiveAggressiveRegressor pa(3, {0.05, 0.01, false});
    const std::vector<double> x{1.0, -2.0, 2.0};
    const auto step = pa.update(x, 1000.0);
    CHECK(step.tau == 0.05);
    double norm = 0.0;
    for (double w : pa.weights()) norm += w * w;
    CHECK(std::sqrt(norm) == doctest::Approx(0.05 * 3.0).epsilon(1e-15));
    // Hand computation of the same step: w = tau * x.
    CHECK(pa.weights()[1] == -0.1);
  }
  SUBCASE("loss never grows on the sample just seen") {
    PassiveAggressiveRegressor pa(2);
    const auto data = toy_linear(200, 4, 0.3);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto before = pa.update(data.row(i), data.targets[i]).loss;
      const double r = std::abs(pa.predict(data.row(i)) - data.targets[i]);
      CHECK(std::max(0.0, r - pa.params().epsilon) <= before + 1e-12);
    }
  }
  SUBCASE("zero input without intercept is skipped") {
    PassiveAggressiveRegressor pa(2, {0.05, 0.01, false});
    const std::vector<double> zero{0.0, 0.0};
    CHECK(pa.update(zero, 5.0).skipped);
    CHECK(pa.skipped_updates() == 1);
    CHECK(pa.weights() == std::vector<double>{0.0, 0.0});
  }
}

TEST_CASE("random Fourier map") {
  RandomFourierMap m;
  m.input_dim = 1;
  m.feature_dim = 1;
  m.omega = {0.0};
  m.phase = {0.0};
  const std::vector<double> x{3.0};
  CHECK(m.map(x)[0] == std::sqrt(2.0));

  const auto big = RandomFourierMap::sample(3, 256, 0.7, 9);
  for (unsigned s = 1; s <= 20; ++s) {
    const auto z = big.map(gaussian_vector(3, s, 5.0));
    double n2 = 0.0;
    for (double v : z) n2 += v * v;
    CHECK(n2 <= 2.0 + 1e-12);
  }
}

TEST_CASE("kernel approximation improves with feature count") {
  const double bw = 1.3;
  std::vector<std::vector<double>> xs, ys;
  for (unsigned i = 0; i < 1000; ++i) {
    xs.push_back(gaussian_vector(3, 1000 + i, 0.6));
    ys.push_back(gaussian_vector(3, 5000 + i, 0.6));
  }
  auto mean_error = [&](std::size_t dim) {
    const auto m = RandomFourierMap::sample(3, dim, bw, 17);
    double err = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const auto zx = m.map(xs[i]);
      const auto zy = m.map(ys[i]);
      double dot = 0.0, d2 = 0.0;
      for (std::size_t k = 0; k < dim; ++k) dot += zx[k] * zy[k];
      for (std::size_t k = 0; k < 3; ++k) d2 += (xs[i][k] - ys[i][k]) * (xs[i][k] - ys[i][k]);
      err += std::abs(dot - std::exp(-d2 / (2.0 * bw * bw)));
    }
    return err / double(xs.size());
  };
  const double e64 = mean_error(64), e1024 = mean_error(1024), e4096 = mean_error(4096);
  CHECK(e4096 <= 0.05);
  CHECK(e1024 <= e64 + 0.02);
  CHECK(e4096 <= e1024 + 0.02);
}

TEST_CASE("SVR stochastic gradient steps") {
  SUBCASE("within the tube only the decay applies") {
    RFFSVRParams p;
    p.feature_dim = 4;
    p.epsilon = 10.0;
    p.l2 = 0.1;
    RffSvr svr(2, p);
    const std::vector<double> z{0.1, 0.2, -0.3, 0.4};
    svr.sgd_step(z, 50.0);  // outside the tube, so the weights become nonzero
    auto w = svr.weights();
    const double b = svr.bias();
    const double eta = svr.learning_rate();
    svr.sgd_step(z, svr.predict_mapped(z) + 1.0);
    for (std::size_t k = 0; k < w.size(); ++k) CHECK(svr.weights()[k] == (1.0 - eta * 0.1) * w[k]);
    CHECK(svr.bias() == b);
  }
  SUBCASE("a repeated sample is fitted") {
    RFFSVRParams p;
    p.feature_dim = 8;
    p.epsilon = 0.0;
    p.l2 = 0.0;
    p.eta0 = 1e-4;
    p.schedule = LearningRateSchedule::constant;
    RffSvr svr(2, p);
    const std::vector<double> x{0.3, -0.2};
    const auto z = svr.feature_map().map(x);
    for (int i = 0; i < 20000; ++i) svr.sgd_step(z, 1.5);
    CHECK(std::abs(svr.predict(x) - 1.5) < 1e-3);
  }
  SUBCASE("subgradient matches central differences away from kinks") {
    const auto w = gaussian_vector(6, 31);
    const auto z = gaussian_vector(6, 32);
    const double b = 0.2, eps = 0.05, l2 = 0.01;
    for (double y : {-3.0, 3.0}) {
      const auto g = svr_subgradient(w, b, z, y, eps, l2);
      REQUIRE(g.size() == 7);
      const double h = 1e-6;
      for (std::size_t k = 0; k < 7; ++k) {
        auto wp = w, wm = w;
        double bp = b, bm = b;
        if (k < 6) {
          wp[k] += h;
          wm[k] -= h;
        } else {
          bp += h;
          bm -= h;
        }
        const double fd = (svr_objective(wp, bp, z, y, eps, l2) - svr_objective(wm, bm, z, y, eps, l2)) / (2 * h);
        CHECK(testing_support::relative_error(g[k], fd) < 1e-6);
      }
    }
  }
}

TEST_CASE("SVR batch epochs match a chronological online pass") {
  RFFSVRParams p;
  p.feature_dim = 64;
  p.bandwidth = 1.0;
  RffSvr batch(2, p), online(2, p);
  const auto train = toy_nonlinear(150, 8, 0.1);
  const auto val = toy_nonlinear(5, 9, 0.1);
  EpochPolicy one;
  one.max_epochs = 1;
  one.shuffle = false;
  one.keep_best = false;
  batch.fit_batch(train, val, one);
  online.incremental_fit(train);
  CHECK(batch.weights() == online.weights());
  CHECK(batch.bias() == online.bias());
  CHECK(batch.steps() == online.steps());
}

TEST_CASE("MLP forward pass") {
  SUBCASE("zero parameters predict zero") {
    Mlp net(3);
    net.set_parameters(std::vector<double>(net.parameter_count(), 0.0));
    CHECK(net.predict(gaussian_vector(3, 1)) == 0.0);
  }
  SUBCASE("rectifier clamps a negative unit") {
    MLPParams p;
    p.hidden = {1};
    p.dropout_rate = 0.0;
    Mlp net(1, p);
    net.weight(0).setConstant(1.0);
    net.bias(0).setZero();
    net.weight(1).setConstant(1.0);
    net.bias(1).setZero();
    const std::vector<double> x{-5.0};
    CHECK(net.predict(x) == 0.0);
    const std::vector<double> pos{2.0};
    CHECK(net.predict(pos) == 2.0);
  }
  SUBCASE("without dropout train and infer agree") {
    MLPParams p;
    p.hidden = {16, 16};
    p.dropout_rate = 0.0;
    Mlp net(4, p);
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(4, 10);
    const Eigen::RowVectorXd a = net.forward(x, Mlp::Mode::train);
    const Eigen::RowVectorXd b = net.forward(x, Mlp::Mode::infer);
    CHECK(a == b);
  }
  SUBCASE("dropout is active only in train mode") {
    MLPParams p;
    p.hidden = {64};
    p.dropout_rate = 0.5;
    Mlp net(2, p);
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(2, 5);
    CHECK(net.forward(x, Mlp::Mode::infer) == net.forward(x, Mlp::Mode::infer));
    CHECK(net.forward(x, Mlp::Mode::train) != net.forward(x, Mlp::Mode::infer));
  }
  SUBCASE("non-negative output flag") {
    MLPParams p;
    p.hidden = {};
    p.relu_output = true;
    Mlp net(1, p);
    net.set_parameters(std::vector<double>{1.0, 0.0});
    const std::vector<double> x{-3.0};
    CHECK(net.predict(x) == 0.0);
  }
}

TEST_CASE("single pair is interpolated by a linear net") {
  MLPParams p;
  p.hidden = {};
  p.dropout_rate = 0.0;
  p.learning_rate = 0.05;
  Mlp net(3, p);
  Dataset d(3);
  const std::vector<double> x{0.5, -1.0, 2.0};
  d.push(x, 1.75, 0);
  EpochPolicy pol;
  pol.max_epochs = 2000;
  pol.patience = 2000;
  net.fit_batch(d, d, pol);
  CHECK(std::abs(net.predict(x) - 1.75) < 1e-6);
}

TEST_CASE("MLP gradient matches central differences") {
  MLPParams p;
  p.hidden = {200, 200};
  p.dropout_rate = 0.1;
  Mlp net(2, p);
  Dataset d(2);
  for (unsigned i = 0; i < 5; ++i) d.push(gaussian_vector(2, 40 + i), std::sin(double(i)), i);
  std::vector<double> grad;
  net.loss_and_gradient(d, grad);
  auto params = net.parameters();
  REQUIRE(grad.size() == params.size());

  std::mt19937_64 gen(8);
  std::uniform_int_distribution<std::size_t> pick(0, params.size() - 1);
  std::size_t checked = 0, bad = 0;
  while (checked < 100) {
    const std::size_t k = pick(gen);
    const double h = 1e-5, orig = params[k];
    params[k] = orig + h;
    net.set_parameters(params);
    const double up = net.loss(d);
    params[k] = orig - h;
    net.set_parameters(params);
    const double down = net.loss(d);
    params[k] = orig;
    net.set_parameters(params);
    const double fd = (up - down) / (2 * h);
    // Parameters that do not affect the loss (dead units) have both sides at zero.
    const double scale = std::max({std::abs(fd), std::abs(grad[k]), 1e-8});
    if (std::abs(fd - grad[k]) / scale > 1e-4) ++bad;
    ++checked;
  }
  CHECK(bad == 0);
}

TEST_CASE("early stopping returns the best epoch's parameters") {
  MLPParams p;
  p.hidden = {32, 32};
  p.learning_rate = 0.05;
  p.dropout_rate = 0.1;
  const auto train = toy_nonlinear(40, 2, 0.4);
  const auto val = toy_nonlinear(20, 3, 0.4);
  const Mlp start(2, p);

  EpochPolicy record;
  record.max_epochs = 60;
  record.patience = 1000;
  record.batch_size = 8;
  record.keep_best = false;
  Mlp recorded = start;
  const auto trace = recorded.fit_batch(train, val, record);
  std::size_t k = 0;
  for (std::size_t e = 1; e < trace.val_errors.size(); ++e)
    if (trace.val_errors[e] < trace.val_errors[k]) k = e;
  REQUIRE(k > 0);
  REQUIRE(k < trace.val_errors.size() - 1);

  Mlp replay = start;
  EpochPolicy to_k = record;
  to_k.max_epochs = k;
  replay.fit_batch(train, val, to_k);

  Mlp best = start;
  EpochPolicy keep = record;
  keep.keep_best = true;
  const auto report = best.fit_batch(train, val, keep);
  CHECK(report.best_epoch == k);
  CHECK(report.val_error_after == trace.val_errors[k]);
  CHECK(best.predict_batch(val) == replay.predict_batch(val));
}

TEST_CASE("patience stops training early") {
  MLPParams p;
  p.hidden = {8};
  const auto train = toy_nonlinear(30, 5, 1.0);
  const auto val = toy_nonlinear(10, 6, 1.0);
  Mlp net(2, p);
  EpochPolicy pol;
  pol.patience = 3;
  const auto r = net.fit_batch(train, val, pol);
  CHECK(r.epochs_run <= pol.max_epochs);
  CHECK(r.epochs_run - r.best_epoch <= 3);
  CHECK(r.val_errors.size() == r.epochs_run + 1);
}

TEST_CASE("full-batch training loss is non-increasing without dropout") {
  MLPParams p;
  p.hidden = {16};
  p.dropout_rate = 0.0;
  p.learning_rate = 0.02;
  const auto data = toy_linear(64, 9);
  Mlp net(2, p);
  EpochPolicy pol;
  pol.max_epochs = 100;
  pol.patience = 1000;
  pol.batch_size = 64;
  pol.shuffle = false;
  pol.keep_best = false;
  const auto r = net.fit_batch(data, data, pol);
  REQUIRE(r.train_losses.size() == 100);
  CHECK(r.train_losses.back() < r.train_losses.front());
  for (std::size_t e = 2; e < r.train_losses.size(); ++e) CHECK(r.train_losses[e] <= r.train_losses[e - 1] + 1e-9);
}

TEST_CASE("snapshots restore bit-identical predictions") {
  const auto probe = toy_linear(16, 77);
  for (auto& m : one_of_each()) {
    CAPTURE(m->kind());
    const auto snap = m->snapshot();
    const auto before = m->predict_batch(probe);
    CHECK(m->snapshot() == snap);  // predict leaves the state alone

    if (m->updatable()) {
      EpochPolicy pol;
      pol.max_epochs = 3;
      m->fit_batch(toy_linear(32, 5, 0.2), probe, pol);
      m->incremental_fit(toy_linear(32, 6, 0.2));
    }
    m->reset_to_snapshot(snap);
    CHECK(m->predict_batch(probe) == before);
    CHECK(m->snapshot() == snap);

    std::stringstream io;
    m->save(io);
    const auto loaded = load_predictor(io);
    CHECK(loaded->kind() == m->kind());
    CHECK(loaded->predict_batch(probe) == before);
    CHECK(loaded->snapshot() == snap);
  }
}

TEST_CASE("snapshots replay training identically") {
  MLPParams p;
  p.hidden = {16, 16};
  Mlp a(2, p);
  const auto snap = a.snapshot();
  const auto train = toy_nonlinear(50, 1, 0.1), val = toy_nonlinear(10, 2, 0.1);
  a.fit_batch(train, val, EpochPolicy{});
  auto b = load_predictor(snap);
  b->fit_batch(train, val, EpochPolicy{});
  CHECK(a.snapshot() == b->snapshot());
}

TEST_CASE("corrupt snapshots are rejected") {
  PassiveAggressiveRegressor pa(2);
  auto snap = pa.snapshot();
  CHECK_THROWS(load_predictor(snap.substr(0, snap.size() - 3)));
  CHECK_THROWS(load_predictor(snap + "x"));
  CHECK_THROWS(load_predictor(std::string("garbage")));
  Mlp net(2);
  CHECK_THROWS(net.reset_to_snapshot(snap));
}

TEST_CASE("divergent training rolls back") {
  MLPParams p;
  p.hidden = {32};
  p.learning_rate = 50.0;
  p.dropout_rate = 0.0;
  Mlp net(2, p);
  Dataset d(2);
  for (unsigned i = 0; i < 32; ++i) d.push(gaussian_vector(2, i, 100.0), 1e6 * double(i), i);
  const auto snap = net.snapshot();
  CHECK_THROWS_AS(net.fit_batch(d, d, EpochPolicy{}), TrainingDiverged);
  CHECK(net.snapshot() == snap);
}

TEST_CASE("frozen baseline never trains") {
  MLPParams p;
  p.hidden = {4};
  FrozenBaseline frozen(std::make_unique<Mlp>(2, p));
  const auto snap = frozen.snapshot();
  const auto r = frozen.fit_batch(toy_linear(10, 1), toy_linear(5, 2), EpochPolicy{});
  CHECK(r.epochs_run == 0);
  frozen.incremental_fit(toy_linear(10, 3));
  CHECK(frozen.snapshot() == snap);
}

TEST_CASE("factory and kind names") {
  const auto train = toy_linear(50, 1);
  for (auto kind : {PredictorKind::par, PredictorKind::ksvr, PredictorKind::mlp}) {
    PredictorSpec spec;
    spec.kind = kind;
    spec.lag_order = 2;
    const auto m = make_predictor(spec, train, 3);
    CHECK(m->kind() == to_string(kind));
    CHECK(m->input_dim() == 2);
  }
  CHECK(parse_predictor_kind("svr") == PredictorKind::ksvr);
  CHECK_THROWS_AS(parse_predictor_kind("forest"), ConfigError);
  CHECK(median_heuristic_bandwidth(train) > 0.0);
}
