#include <benchmark/benchmark.h>

#include <vector>

#include "safe/detector.hpp"
#include "safe/experiment.hpp"
#include "safe/features.hpp"

using namespace safe;

namespace {

std::vector<double> sample_series(std::size_t n) { return generate(ts_e(3, n)).values; }

FeatureKind kind_arg(const benchmark::State& state) {
  return state.range(0) == 0 ? FeatureKind::spectral_energy : FeatureKind::time_domain;
}

}  // namespace

// Online detector cost per sample for each feature kind.
static void BM_DetectorStep(benchmark::State& state) {
  const auto series = sample_series(4096);
  DetectorConfig config;
  config.features = kind_arg(state);
  Detector detector(config);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(detector.step(series[i]));
    if (++i == series.size()) {
      i = 0;
      detector.reset();
    }
  }
  state.SetLabel(to_string(config.features));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_DetectorStep)->Arg(0)->Arg(1);

static void BM_SpectralTable(benchmark::State& state) {
  const FeatureExtractor extractor(FeatureKind::spectral_energy, 5);
  const std::vector<double> frame{0.3, -1.2, 0.8, 2.1, -0.4};
  std::vector<double> out(extractor.output_size());
  for (auto _ : state) {
    extractor.extract(frame, out);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_SpectralTable);

static void BM_SpectralReference(benchmark::State& state) {
  const std::vector<double> frame{0.3, -1.2, 0.8, 2.1, -0.4};
  for (auto _ : state) benchmark::DoNotOptimize(spectral_energy_reference(frame));
}
BENCHMARK(BM_SpectralReference);

static void BM_FeatureFramesSerial(benchmark::State& state) {
  const auto series = sample_series(1 << 16);
  const FeatureExtractor extractor(kind_arg(state), 5);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::feature_frames_serial(extractor, series));
  state.SetItemsProcessed(state.iterations() * series.size());
}
BENCHMARK(BM_FeatureFramesSerial)->Arg(0)->Arg(1);

static void BM_FeatureFramesParallel(benchmark::State& state) {
  const auto series = sample_series(1 << 16);
  const FeatureExtractor extractor(kind_arg(state), 5);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::feature_frames_parallel(extractor, series));
  state.SetItemsProcessed(state.iterations() * series.size());
}
BENCHMARK(BM_FeatureFramesParallel)->Arg(0)->Arg(1);

// 100 TS-B trials, serial loop vs OpenMP trial loop.
static void BM_DetectionTrials(benchmark::State& state) {
  DetectionExperiment e;
  e.trials = 100;
  for (auto _ : state)
    benchmark::DoNotOptimize(state.range(0) ? run_detection_parallel(e) : run_detection_serial(e));
  state.SetLabel(state.range(0) ? "parallel" : "serial");
}
BENCHMARK(BM_DetectionTrials)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
