#include <benchmark/benchmark.h>

#include "mzmsim/dynamics.hpp"
#include "mzmsim/photonics.hpp"
#include "mzmsim/qchan.hpp"
#include "mzmsim/rng.hpp"
#include "mzmsim/tomography.hpp"

#include <numbers>
#include <vector>

using namespace mzmsim;

namespace {

photonics::DeviceSpec imbalanced_device() {
  photonics::DeviceSpec dev;
  for (auto* stage : {&dev.stage1, &dev.stage2}) {
    stage->splitter.power_split = 0.4;
    stage->combiner.power_split = 0.4;
  }
  return dev;
}

void BM_DesignatedOutputPower(benchmark::State& state) {
  const photonics::DeviceSpec dev = imbalanced_device();
  double v = -48.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(photonics::designated_output_power(dev, v, -v));
    v = v >= 48.0 ? -48.0 : v + 0.37;
  }
}
BENCHMARK(BM_DesignatedOutputPower);

void BM_TransmissionMap(benchmark::State& state) {
  const photonics::DeviceSpec dev = imbalanced_device();
  const long n = state.range(0);
  std::vector<double> grid;
  for (long i = 0; i < n; ++i)
    grid.push_back(-48.0 + 96.0 * static_cast<double>(i) / static_cast<double>(n - 1));
  for (auto _ : state)
    benchmark::DoNotOptimize(photonics::transmission_map(dev, grid, grid));
  state.SetItemsProcessed(state.iterations() * n * n);
}
BENCHMARK(BM_TransmissionMap)->Arg(101)->Arg(201);

void BM_OptimizeExtinction(benchmark::State& state) {
  const photonics::DeviceSpec dev = imbalanced_device();
  for (auto _ : state)
    benchmark::DoNotOptimize(photonics::optimize_extinction(dev, {-48.0, 48.0}));
}
BENCHMARK(BM_OptimizeExtinction)->Unit(benchmark::kMillisecond);

void BM_PtmFromUnitary(benchmark::State& state) {
  const auto u = qchan::unitary_from_angles(1.234, 0.567);
  for (auto _ : state) benchmark::DoNotOptimize(qchan::ptm_from_unitary(u));
}
BENCHMARK(BM_PtmFromUnitary);

void BM_DiamondErrorBound(benchmark::State& state) {
  const auto a = qchan::ptm_from_unitary(qchan::unitary_from_angles(1.55, 0.0));
  const auto b = qchan::ptm_from_unitary(
      qchan::unitary_from_angles(std::numbers::pi / 2.0, 0.0));
  for (auto _ : state)
    benchmark::DoNotOptimize(qchan::diamond_error_bound(a, b));
}
BENCHMARK(BM_DiamondErrorBound);

void BM_RealizeGate(benchmark::State& state) {
  dynamics::OpticalGateSpec spec;
  dynamics::NoiseModel noise;
  noise.drift.enabled = true;
  auto rng = rng::stream(7, 0);
  dynamics::SequenceState seq = dynamics::make_sequence_state(noise, rng);
  for (auto _ : state)
    benchmark::DoNotOptimize(dynamics::realize_gate(spec, noise, seq, rng));
}
BENCHMARK(BM_RealizeGate);

void BM_SimulateDataset(benchmark::State& state) {
  const tomo::GstDesign design = tomo::make_design(4);
  const tomo::TruthModel truth =
      tomo::make_truth({-0.0301, 0.0804, 3.16}, dynamics::NoiseModel{});
  for (auto _ : state)
    benchmark::DoNotOptimize(tomo::simulate_dataset(design, truth, 1000, 1));
  state.SetItemsProcessed(state.iterations() *
                          static_cast<long>(design.sequences.size()));
}
BENCHMARK(BM_SimulateDataset)->Unit(benchmark::kMillisecond);

void BM_LogLikelihood(benchmark::State& state) {
  const tomo::GstDesign design = tomo::make_design(4);
  dynamics::NoiseModel quiet;
  quiet.energy_jitter_rel = 0.0;
  const tomo::GstDataset ds = tomo::simulate_dataset(
      design, tomo::make_truth({-0.0301, 0.0804, 3.16}, quiet), 1000, 1, true);
  const tomo::GateSet gs = tomo::gateset_from_physical({-0.03, 0.08, 3.1});
  for (auto _ : state)
    benchmark::DoNotOptimize(tomo::log_likelihood(gs, ds));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(ds.rows.size()));
}
BENCHMARK(BM_LogLikelihood);

void BM_FitPhysical(benchmark::State& state) {
  dynamics::NoiseModel quiet;
  quiet.energy_jitter_rel = 0.0;
  const tomo::GstDataset ds = tomo::simulate_dataset(
      tomo::make_design(static_cast<int>(state.range(0))),
      tomo::make_truth({-0.0301, 0.0804, 3.16}, quiet), 1000, 1, true);
  for (auto _ : state)
    benchmark::DoNotOptimize(tomo::fit_physical_gst(ds));
}
BENCHMARK(BM_FitPhysical)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
