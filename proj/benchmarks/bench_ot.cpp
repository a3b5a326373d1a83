#include <benchmark/benchmark.h>

#include <random>

#include "drio/ot.hpp"
#include "drio/random.hpp"

namespace {

drio::PointCloud cloud(std::size_t n, std::size_t dim, std::uint64_t seed) {
  drio::Rng rng = drio::make_rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> coords(n * dim);
  for (double& c : coords) c = g(rng);
  return drio::PointCloud::uniform(dim, std::move(coords));
}

drio::SinkhornParams params(double tau) {
  drio::SinkhornParams p;
  p.tau = tau;
  p.epsilon_mode = drio::EpsilonMode::kFixed;
  p.epsilon = 1.0;
  return p;
}

void BM_SolveTransport(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const drio::PointCloud a = cloud(n, 128, 1), b = cloud(n, 128, 2);
  const drio::SinkhornParams p = params(10.0);
  for (auto _ : state) benchmark::DoNotOptimize(drio::solve_transport(a, b, p).value);
}
BENCHMARK(BM_SolveTransport)->Arg(8)->Arg(32)->Arg(128);

void BM_DivergenceGrad(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const drio::PointCloud a = cloud(n, 128, 3), b = cloud(n, 128, 4);
  const drio::SinkhornParams p = params(state.range(1) ? drio::SinkhornParams::kBalanced : 10.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(drio::sinkhorn_divergence_grad(a, b, p, drio::CloudSide::kSecond).value);
  }
}
BENCHMARK(BM_DivergenceGrad)->Args({32, 0})->Args({32, 1});

}  // namespace
