// Serial reference vs OpenMP path for the two hot loops: the cosine scan of
// the reference index and the per-example worker gradients of a batch.

#include "gochat/optim.hpp"
#include "gochat/rewards.hpp"
#include "gochat/rng.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace gochat;

namespace {

struct Keys {
  std::vector<double> keys, norms, query, out;
  int dim;
  Keys(long rows, int d) : dim(d) {
    Rng rng(1);
    std::normal_distribution<double> nd;
    keys.resize(static_cast<std::size_t>(rows * d));
    for (auto& x : keys) x = nd(rng);
    for (long r = 0; r < rows; ++r)
      norms.push_back(kernels::norm(std::span<const double>(keys).subspan(static_cast<std::size_t>(r * d),
                                                                          static_cast<std::size_t>(d))));
    query.resize(static_cast<std::size_t>(d));
    for (auto& x : query) x = nd(rng);
    out.resize(static_cast<std::size_t>(rows));
  }
};

void BM_cosine_serial(benchmark::State& state) {
  Keys k(state.range(0), 64);
  for (auto _ : state) {
    kernels::cosine_distances_serial(k.keys, k.norms, k.dim, k.query, k.out);
    benchmark::DoNotOptimize(k.out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_cosine_parallel(benchmark::State& state) {
  Keys k(state.range(0), 64);
  for (auto _ : state) {
    kernels::cosine_distances_parallel(k.keys, k.norms, k.dim, k.query, k.out);
    benchmark::DoNotOptimize(k.out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

struct Batch {
  Worker worker{WorkerConfig{200, 8, 32, 64, 64, 16, 64, 12}, "worker"};
  std::vector<GenerationExample> examples;
  std::vector<Vec> eps;
  explicit Batch(int size) {
    worker.init(1);
    Rng rng(2);
    std::uniform_int_distribution<int> tok(4, 199), len(1, 12);
    auto seq = [&] {
      std::vector<int> ids(static_cast<std::size_t>(len(rng)));
      for (auto& t : ids) t = tok(rng);
      return TokenSeq::from_ids(ids, 12);
    };
    for (int i = 0; i < size; ++i) {
      std::vector<Utterance> hist{{Speaker::human, "", seq()}, {Speaker::chatbot, "", seq()}, {Speaker::human, "", seq()}};
      examples.push_back({hist, SubGoal::from_index(i % 8, 8), seq()});
      eps.push_back(standard_normal(16, rng));
    }
  }
};

void BM_batch_gradient(benchmark::State& state) {
  Batch b(static_cast<int>(state.range(0)));
  const bool parallel = state.range(1) != 0;
  for (auto _ : state) benchmark::DoNotOptimize(worker_batch_gradient(b.worker, b.examples, b.eps, 0.5, parallel).loss);
  state.SetItemsProcessed(state.iterations() * state.range(0));
  state.SetLabel(parallel ? "parallel" : "serial");
}

}  // namespace

BENCHMARK(BM_cosine_serial)->RangeMultiplier(10)->Range(1000, 1000000);
BENCHMARK(BM_cosine_parallel)->RangeMultiplier(10)->Range(1000, 1000000);
BENCHMARK(BM_batch_gradient)->ArgsProduct({{16, 64}, {0, 1}})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
