#include <benchmark/benchmark.h>

#include <vector>

#include "knnmts/datastore.hpp"
#include "knnmts/rng.hpp"

using namespace knnmts;

namespace {

Datastore gaussian_store(std::size_t m, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  Datastore s;
  s.dim = d;
  s.value_width = 1;
  s.keys.resize(m * d);
  for (float& k : s.keys) k = static_cast<float>(rng.normal());
  s.values.assign(m, 0.0f);
  s.meta.resize(m);
  for (std::size_t i = 0; i < m; ++i) s.meta[i] = {0, static_cast<std::uint32_t>(i)};
  return s;
}

std::vector<double> gaussian_queries(std::size_t count, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> q(count * d);
  for (double& x : q) x = rng.normal();
  return q;
}

void BM_KnnExact(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const std::size_t d = 32, k = 50;
  const auto store = gaussian_store(m, d, 1);
  const auto q = gaussian_queries(64, d, 2);
  std::size_t i = 0;
  for (auto _ : state) {
    auto r = knn_exact(store, std::span<const double>(q).subspan((i++ % 64) * d, d), k);
    benchmark::DoNotOptimize(r.ids.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m));
}
BENCHMARK(BM_KnnExact)->Arg(10'000)->Arg(100'000)->Unit(benchmark::kMicrosecond);

void BM_KnnExactBatch(benchmark::State& state) {
  const std::size_t m = 72'656, d = 32, k = 50, count = 256;
  const auto store = gaussian_store(m, d, 1);
  const auto q = gaussian_queries(count, d, 2);
  for (auto _ : state) {
    auto r = knn_exact_batch(store, q, k);
    benchmark::DoNotOptimize(r.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * count));
}
BENCHMARK(BM_KnnExactBatch)->Unit(benchmark::kMillisecond);

void BM_KnnIvf(benchmark::State& state) {
  const std::size_t m = 100'000, d = 32, k = 50;
  const auto n_probe = static_cast<std::size_t>(state.range(0));
  const auto store = gaussian_store(m, d, 1);
  const auto index = build_ivf(store, 256, 3);
  const auto q = gaussian_queries(64, d, 2);
  std::size_t i = 0;
  for (auto _ : state) {
    auto r = knn_approx(store, index, std::span<const double>(q).subspan((i++ % 64) * d, d), k, n_probe);
    benchmark::DoNotOptimize(r.ids.data());
  }
}
BENCHMARK(BM_KnnIvf)->Arg(8)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_IvfBuild(benchmark::State& state) {
  const auto store = gaussian_store(20'000, 32, 1);
  for (auto _ : state) {
    auto index = build_ivf(store, 64, 3);
    benchmark::DoNotOptimize(index.centroids.data());
  }
}
BENCHMARK(BM_IvfBuild)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
