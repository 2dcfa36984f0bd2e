// Reference, serial and OpenMP kernels on the desk grid. The dense Fisher reference runs on a small grid.

#include <map>
#include <tuple>

#include <benchmark/benchmark.h>

#include "pot/calibration.hpp"
#include "pot/dr_engine.hpp"
#include "pot/fisher_response.hpp"
#include "pot/payoffs.hpp"
#include "pot/perturbations.hpp"
#include "pot/reference.hpp"
#include "pot/synthetic.hpp"

namespace {

using namespace pot;

const CalibratedModel& model_on(std::size_t n1, std::size_t nv, std::size_t n2) {
  static std::map<std::tuple<std::size_t, std::size_t, std::size_t>, CalibratedModel> cache;
  auto key = std::tuple{n1, nv, n2};
  auto it = cache.find(key);
  if (it == cache.end()) {
    GridConfig g;
    g.n1 = n1;
    g.nv = nv;
    g.n2 = n2;
    it = cache.emplace(key, calibrate(synthetic_snapshot(), g, CalibConfig{})).first;
  }
  return it->second;
}

const CalibratedModel& desk() { return model_on(40, 25, 60); }

const std::vector<double>& vix_call() {
  static const std::vector<double> t = tabulate({"c", PayoffKind::vix_call, 20.0}, desk().grid);
  return t;
}

void BM_GibbsReference(benchmark::State& st) {
  const auto& m = desk();
  for (auto _ : st) benchmark::DoNotOptimize(reference::gibbs_coupling(m.grid, m.log_prior, m.state));
}
void BM_GibbsSerial(benchmark::State& st) {
  const auto& m = desk();
  for (auto _ : st) benchmark::DoNotOptimize(gibbs_coupling(m.grid, m.log_prior, m.state, Exec::serial));
}
void BM_GibbsParallel(benchmark::State& st) {
  const auto& m = desk();
  for (auto _ : st) benchmark::DoNotOptimize(gibbs_coupling(m.grid, m.log_prior, m.state, Exec::parallel));
}

void BM_MarginalsReference(benchmark::State& st) {
  for (auto _ : st) benchmark::DoNotOptimize(reference::marginals(desk().coupling()));
}
void BM_MarginalsSerial(benchmark::State& st) {
  for (auto _ : st) benchmark::DoNotOptimize(marginals(desk().coupling(), Exec::serial));
}
void BM_MarginalsParallel(benchmark::State& st) {
  for (auto _ : st) benchmark::DoNotOptimize(marginals(desk().coupling(), Exec::parallel));
}

void BM_ExpectationReference(benchmark::State& st) {
  for (auto _ : st) benchmark::DoNotOptimize(reference::expectation(desk().coupling(), vix_call()));
}
void BM_ExpectationSerial(benchmark::State& st) {
  for (auto _ : st) benchmark::DoNotOptimize(expectation(desk().coupling(), vix_call(), Exec::serial));
}
void BM_ExpectationParallel(benchmark::State& st) {
  for (auto _ : st) benchmark::DoNotOptimize(expectation(desk().coupling(), vix_call(), Exec::parallel));
}

void fisher_build(benchmark::State& st, const CalibratedModel& m, Exec exec) {
  FisherOptions o;
  o.exec = exec;
  for (auto _ : st) benchmark::DoNotOptimize(FisherSystem::build(m.coupling(), o));
}
void BM_FisherReferenceSmall(benchmark::State& st) {
  const auto& m = model_on(20, 12, 40);
  const StatisticLayout l = FisherSystem::build(m.coupling()).layout();
  for (auto _ : st) benchmark::DoNotOptimize(reference::fisher_dense(m.coupling(), l).llt());
}
void BM_FisherSerialSmall(benchmark::State& st) { fisher_build(st, model_on(20, 12, 40), Exec::serial); }
void BM_FisherSerial(benchmark::State& st) { fisher_build(st, desk(), Exec::serial); }
void BM_FisherParallel(benchmark::State& st) { fisher_build(st, desk(), Exec::parallel); }

PerturbationVector vega() {
  BumpSpec s;
  s.kind = BumpKind::vol_parallel;
  return assemble_scenario(desk(), *desk().snapshot, s);
}

void BM_LinearResponse(benchmark::State& st) {
  CalibratedModel m = desk();
  attach_fisher(m);
  const PerturbationVector h = vega();
  for (auto _ : st) benchmark::DoNotOptimize(LinearResponse(m, h).sensitivity(vix_call()));
}
void dr_greek(benchmark::State& st, Exec exec) {
  const DrEngine dr(desk().coupling(), exec);
  const PerturbationVector h = vega();
  for (auto _ : st) benchmark::DoNotOptimize(dr.greek(vix_call(), h, 1e-3));
}
void BM_DrGreekSerial(benchmark::State& st) { dr_greek(st, Exec::serial); }
void BM_DrGreekParallel(benchmark::State& st) { dr_greek(st, Exec::parallel); }

}  // namespace

BENCHMARK(BM_GibbsReference)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_GibbsSerial)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_GibbsParallel)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_MarginalsReference)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_MarginalsSerial)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_MarginalsParallel)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ExpectationReference)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ExpectationSerial)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ExpectationParallel)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_FisherReferenceSmall)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_FisherSerialSmall)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_FisherSerial)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_FisherParallel)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_LinearResponse)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_DrGreekSerial)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_DrGreekParallel)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
