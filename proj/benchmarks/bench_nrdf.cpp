#include <benchmark/benchmark.h>

#include <random>

#include "nrdf/kkt_solver.hpp"
#include "nrdf/numerics.hpp"
#include "nrdf/oracle.hpp"
#include "nrdf/pipeline.hpp"
#include "nrdf/simulate.hpp"

namespace {

nrdf::SourceModel coupled(int n) {
  nrdf::Matrix a(2, 2);
  a << 0.9, 0.3, 0.3, 0.9;
  const nrdf::Matrix id = nrdf::Matrix::Identity(2, 2);
  return nrdf::make_time_invariant(n, 1, 1, 1, 1, a, id, id, id);
}

nrdf::SymMatrix random_pd(std::mt19937_64& rng, nrdf::Index dim) {
  std::normal_distribution<double> normal;
  nrdf::Matrix g(dim, dim);
  for (nrdf::Index i = 0; i < dim; ++i) {
    for (nrdf::Index j = 0; j < dim; ++j) g(i, j) = normal(rng);
  }
  return nrdf::SymMatrix(nrdf::Matrix(g * g.transpose() + nrdf::Matrix::Identity(dim, dim)));
}

void BM_MatrixQuadratic(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const auto dim = static_cast<nrdf::Index>(state.range(0));
  const nrdf::SymMatrix c = random_pd(rng, dim);
  const nrdf::SymMatrix q = random_pd(rng, dim);
  for (auto _ : state) benchmark::DoNotOptimize(nrdf::solve_matrix_quadratic(c, q));
}
BENCHMARK(BM_MatrixQuadratic)->Arg(2)->Arg(4)->Arg(8);

void BM_Calibrate(benchmark::State& state) {
  const nrdf::SourceModel m = coupled(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(nrdf::calibrate_multipliers(m, {0.1, 0.15}));
}
BENCHMARK(BM_Calibrate)->Arg(10)->Arg(100);

void BM_Oracle(benchmark::State& state) {
  const nrdf::SourceModel m = coupled(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(nrdf::direct_minimize(m, {0.1, 0.15}));
}
BENCHMARK(BM_Oracle)->Arg(4)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_SamplePaths(benchmark::State& state) {
  const nrdf::SourceModel m = coupled(10);
  const nrdf::SolveReport r = nrdf::solve(m, {0.1, 0.15});
  for (auto _ : state) {
    benchmark::DoNotOptimize(nrdf::sample_paths(m, r.realization, state.range(0), 7));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SamplePaths)->Arg(10000)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
