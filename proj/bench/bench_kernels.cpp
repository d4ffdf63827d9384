// Serial reference vs OpenMP path for the parallel kernels.
// Set SABRE_THREADS to pin the worker count.

#include <benchmark/benchmark.h>

#include "sabre/detector.hpp"
#include "sabre/kernels.hpp"
#include "sabre/orchestrator.hpp"

namespace {

using namespace sabre;

Execution exec_of(const benchmark::State& state) {
  return state.range(0) == 0 ? Execution::Serial : Execution::Parallel;
}

std::vector<Vector> random_vectors(std::size_t n, Eigen::Index d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vector> out;
  for (std::size_t i = 0; i < n; ++i) {
    Vector v(d);
    for (Eigen::Index j = 0; j < d; ++j) v(j) = rng.normal();
    out.push_back(std::move(v));
  }
  return out;
}

void BM_PairwiseDistances(benchmark::State& state) {
  const auto vs = random_vectors(static_cast<std::size_t>(state.range(1)), 2048, 1);
  for (auto _ : state) benchmark::DoNotOptimize(pairwise_cosine_distances(vs, exec_of(state)));
}
BENCHMARK(BM_PairwiseDistances)->ArgsProduct({{0, 1}, {32, 128}})->Unit(benchmark::kMicrosecond);

void BM_DetectBatch(benchmark::State& state) {
  const auto model = init_detector(512, 128, 2);
  const auto zs = random_vectors(static_cast<std::size_t>(state.range(1)), 512, 3);
  for (auto _ : state) benchmark::DoNotOptimize(detect_batch(model, zs, exec_of(state)));
}
BENCHMARK(BM_DetectBatch)->ArgsProduct({{0, 1}, {256, 4096}})->Unit(benchmark::kMicrosecond);

void BM_ScoreClients(benchmark::State& state) {
  const auto model = init_detector(512, 128, 2);
  std::vector<std::vector<Embedding>> per_client;
  std::vector<int> ids;
  for (int c = 0; c < 32; ++c) {
    per_client.push_back(random_vectors(64, 512, 10 + static_cast<std::uint64_t>(c)));
    ids.push_back(c);
  }
  for (auto _ : state) benchmark::DoNotOptimize(score_clients(model, per_client, ids, exec_of(state)));
}
BENCHMARK(BM_ScoreClients)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);

void BM_RunRound(benchmark::State& state) {
  ExperimentConfig cfg;
  cfg.num_clients = 16;
  cfg.attack.epsilon = 0.16;
  cfg.defense.kind = DefenseConfig::Kind::SabreFl;
  const Environment env = build_environment(cfg);
  const RoundOptions options{exec_of(state)};
  for (auto _ : state) {
    FlState s = initial_state(env);
    benchmark::DoNotOptimize(run_round(env, s, options));
  }
}
BENCHMARK(BM_RunRound)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
