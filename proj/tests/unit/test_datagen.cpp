#include <doctest.h>

#include <cmath>
#include <numeric>

#include "safe/datagen.hpp"
#include "safe/errors.hpp"
#include "safe/rng.hpp"
#include "support.hpp"

using namespace safe;
using testing_support::TempDir;
using testing_support::write_file;

namespace {

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double variance_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / static_cast<double>(v.size() - 1);
}

// Straight-line smooth-transition recursion, written without the library.
std::vector<double> nl1_oracle(const std::vector<double>& a, double sd, std::uint64_t seed, std::size_t n) {
  std::vector<double> x(n, 0.0);
  auto at = [&](std::size_t i, std::size_t k) { return i >= k ? x[i - k] : 0.0; };
  for (std::size_t i = 0; i < n; ++i) {
    const double lin = a[0] * at(i, 1) + a[1] * at(i, 2) + a[2] * at(i, 3) + a[3] * at(i, 4);
    const double gate = 1.0 / (1.0 + std::exp(-10.0 * at(i, 1)));
    x[i] = lin * gate + sd * CounterRng::normal_at(seed, i);
  }
  return x;
}

}  // namespace

TEST_CASE("zero dynamics and zero noise give a zero series") {
  SegmentedProcessSpec spec;
  spec.name = "flat";
  spec.total_length = 50;
  spec.seed = 3;
  spec.segments.push_back({ModelKind::AR, {0.0}, {}, 0.0, 50});
  CHECK_THROWS_AS(generate(spec), ConfigError);
  const auto s = generate(spec, GenerateOptions{.allow_zero_noise = true});
  CHECK(s.size() == 50);
  CHECK(s.breakpoints.empty());
  for (double v : s.values) CHECK(v == 0.0);
}

TEST_CASE("TS-B regimes and breakpoints") {
  const auto spec = ts_b(1);
  REQUIRE(spec.segments.size() == 3);
  CHECK(spec.segments[0].ar_coeffs == std::vector<double>{0.9});
  CHECK(spec.segments[1].ar_coeffs == std::vector<double>{1.68, -0.81});
  CHECK(spec.segments[2].ar_coeffs == std::vector<double>{1.32, -0.91});
  const auto s = generate(spec);
  CHECK(s.size() == 1000);
  CHECK(s.breakpoints == std::vector<std::size_t>{400, 700});
}

TEST_CASE("Linear-1 uses noise variances 0.5, 1.5, 2.5, 3.5") {
  const auto spec = linear_1(7);
  REQUIRE(spec.segments.size() == 4);
  const double variances[] = {0.5, 1.5, 2.5, 3.5};
  for (std::size_t i = 0; i < 4; ++i) CHECK(spec.segments[i].noise_std == doctest::Approx(std::sqrt(variances[i])));
  const auto s = generate(spec);
  CHECK(s.size() == 12000);
  CHECK(s.breakpoints == std::vector<std::size_t>{3000, 6000, 9000});
}

TEST_CASE("Linear-2 is a six-lag autoregression") {
  for (const auto& seg : linear_2(1).segments) CHECK(seg.ar_coeffs.size() == 6);
}

TEST_CASE("nonlinear segment matches a duplicate implementation") {
  SegmentedProcessSpec spec;
  spec.name = "nl1";
  spec.total_length = 3000;
  spec.seed = 11;
  const std::vector<double> a{0.9, -0.2, 0.8, -0.5};
  spec.segments.push_back({ModelKind::NL1, a, {}, 1.0, 3000});
  const auto got = generate(spec).values;
  const auto want = nl1_oracle(a, 1.0, 11, 3000);
  CHECK(mean_of(got) == doctest::Approx(mean_of(want)).epsilon(1e-12));
  CHECK(variance_of(got) == doctest::Approx(variance_of(want)).epsilon(1e-12));
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < got.size(); ++i)
    if (std::abs(got[i] - want[i]) > 1e-12 * (1.0 + std::abs(want[i]))) ++mismatches;
  CHECK(mismatches == 0);
}

TEST_CASE("generation is deterministic per seed") {
  for (const auto& name : process_names()) {
    if (name == "nonlinear-2") continue;
    CAPTURE(name);
    const auto a = generate(named_process(name, 5)).values;
    const auto b = generate(named_process(name, 5)).values;
    CHECK(a == b);
    CHECK(a != generate(named_process(name, 6)).values);
  }
}

TEST_CASE("nonlinear-2 diverges under the logistic reading") {
  CHECK_THROWS_AS(generate(nonlinear_2(1)), DataError);
}

TEST_CASE("breakpoint count is segments minus one") {
  for (const auto& name : process_names()) {
    const auto spec = named_process(name, 2);
    CAPTURE(name);
    CHECK(spec.breakpoints().size() == spec.segments.size() - 1);
    for (auto b : spec.breakpoints()) {
      CHECK(b >= 1);
      CHECK(b < spec.total_length);
    }
  }
}

TEST_CASE("stationary AR(1) variance matches the closed form") {
  for (double alpha : {0.7, -0.4, 0.1}) {
    CAPTURE(alpha);
    SegmentedProcessSpec spec;
    spec.name = "ar1";
    spec.total_length = 100000;
    spec.seed = 21;
    spec.segments.push_back({ModelKind::AR, {alpha}, {}, 1.3, 100000});
    const auto s = generate(spec);
    const std::vector<double> tail(s.values.begin() + 100, s.values.end());
    const double expected = 1.3 * 1.3 / (1.0 - alpha * alpha);
    CHECK(std::abs(variance_of(tail) / expected - 1.0) < 0.05);
  }
}

TEST_CASE("piecewise generation equals per-sample simulation with a shared stream") {
  const auto spec = ts_b(9);
  const auto noise = unit_noise_stream(9, 1000);
  std::vector<double> x(1000, 0.0);
  auto at = [&](std::size_t i, std::size_t k) { return i >= k ? x[i - k] : 0.0; };
  for (std::size_t i = 0; i < 1000; ++i) {
    if (i < 400)
      x[i] = 0.9 * at(i, 1) + noise[i];
    else if (i < 700)
      x[i] = 1.68 * at(i, 1) - 0.81 * at(i, 2) + noise[i];
    else
      x[i] = 1.32 * at(i, 1) - 0.91 * at(i, 2) + noise[i];
  }
  const auto s = generate(spec);
  for (std::size_t i = 0; i < 1000; ++i) REQUIRE(s.values[i] == doctest::Approx(x[i]).epsilon(1e-13));
  CHECK(generate(spec, noise).values == s.values);
}

TEST_CASE("spec documents round-trip") {
  const auto spec = ts_e(4);
  const auto again = parse_spec(format_spec(spec));
  CHECK(generate(again).values == generate(spec).values);
  CHECK_THROWS_AS(parse_spec("segment = AR end=10 sd=1\nlength = 10\n"), ConfigError);
  CHECK_THROWS_AS(parse_spec("length = 10\nsegment = NL1 end=10 sd=1 ar=0.5\n").validate(), ConfigError);
}

TEST_CASE("TS-A uses the signed coefficient") {
  const auto spec = ts_a(-0.4, 1);
  REQUIRE(spec.segments.size() == 1);
  CHECK(spec.segments[0].ar_coeffs == std::vector<double>{-0.4});
  CHECK(spec.breakpoints().empty());
}

TEST_CASE("CSV loading") {
  TempDir dir("csv");
  write_file(dir / "three.csv", "1\n2\n3\n");
  CHECK(load_csv(dir / "three.csv").values == std::vector<double>{1, 2, 3});

  CsvLoadOptions mm;
  mm.normalization = Normalization::minmax;
  CHECK(load_csv(dir / "three.csv", mm).values == std::vector<double>{0.0, 0.5, 1.0});

  write_file(dir / "named.csv", "date,close\nd1,10\nd2,12\nd3,11\n");
  CsvLoadOptions by_name;
  by_name.column = std::string("close");
  CHECK(load_csv(dir / "named.csv", by_name).values == std::vector<double>{10, 12, 11});

  write_file(dir / "bad.csv", "1\n2\n3\n4\n5\n6\nnope\n8\n");
  try {
    load_csv(dir / "bad.csv");
    FAIL("expected an error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("row 7") != std::string::npos);
  }
  CHECK_THROWS_AS(load_csv(dir / "missing.csv"), DataError);
}

TEST_CASE("chronological split sizes") {
  LabeledSeries s;
  s.values.assign(12000, 0.0);
  s.breakpoints = {3000, 6000, 9000};
  auto parts = split_chronological(s, 1.0 / 6.0, 1.0 / 12.0);
  CHECK(parts.train.size() == 2000);
  CHECK(parts.validation.size() == 1000);
  CHECK(parts.test.size() == 9000);
  CHECK(parts.test.offset == 3000);
  CHECK(parts.test.breakpoints == std::vector<std::size_t>{3000, 6000});

  LabeledSeries ten;
  for (int i = 0; i < 10; ++i) ten.values.push_back(i);
  parts = split_chronological(ten, 0.5, 0.2);
  CHECK(parts.train.size() == 5);
  CHECK(parts.validation.size() == 2);
  CHECK(parts.test.size() == 3);
  CHECK(parts.test.values.front() == 7.0);
  CHECK_THROWS_AS(split_chronological(ten, 0.9, 0.2), ConfigError);
}

TEST_CASE("min-max scaler round-trips") {
  const std::vector<double> v{-2.0, 4.0, 1.0};
  const auto sc = MinMaxScaler::fit(v);
  CHECK(sc.transform(-2.0) == 0.0);
  CHECK(sc.transform(4.0) == 1.0);
  CHECK(sc.inverse(sc.transform(1.0)) == doctest::Approx(1.0));
}
