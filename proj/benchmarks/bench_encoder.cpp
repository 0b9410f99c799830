#include <benchmark/benchmark.h>

#include <memory>
#include <numeric>
#include <vector>

#include "knnmts/encoder.hpp"
#include "knnmts/runtime.hpp"
#include "knnmts/synth.hpp"
#include "knnmts/trainer.hpp"

using namespace knnmts;

namespace {

// Desk-scale synthetic setup shared by all benchmarks in this file.
struct Desk {
  DatasetSplits raw;
  Normalizer norm;
  SeriesSplit train;
  std::unique_ptr<WindowSet> windows;

  static Desk& get() {
    static Desk desk = [] {
      configure_allocator();
      Desk d;
      d.raw = chronological_split(synth_generate({}, 1).dataset, {});
      d.norm = Normalizer::fit(d.raw.train);
      d.train = d.norm.apply(d.raw.train);
      return d;
    }();
    if (!desk.windows) desk.windows = std::make_unique<WindowSet>(desk.train, desk.raw.train, config(EncoderMode::hybrid).window());
    return desk;
  }

  static EncoderConfig config(EncoderMode mode) {
    EncoderConfig c;
    c.nodes = 16;
    c.input_length = 288;
    c.hidden = 32;
    c.transformer_layers = 2;
    c.mode = mode;
    return c;
  }

  Batch batch(std::size_t size) const {
    std::vector<std::size_t> pos(size);
    std::iota(pos.begin(), pos.end(), 0);
    return windows->gather(pos);
  }
};

void BM_EncoderForward(benchmark::State& state) {
  auto& desk = Desk::get();
  const auto mode = static_cast<EncoderMode>(state.range(0));
  Rng rng(1);
  HstEncoder enc(Desk::config(mode), std::nullopt, rng);
  const Batch batch = desk.batch(16);
  NoGradGuard guard;
  for (auto _ : state) {
    auto out = enc.forward(batch);
    benchmark::DoNotOptimize(out.forecast.data().data());
  }
  state.SetLabel(to_string(mode));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 16 * 16));
}
BENCHMARK(BM_EncoderForward)
    ->Arg(static_cast<int>(EncoderMode::hybrid))
    ->Arg(static_cast<int>(EncoderMode::long_only))
    ->Arg(static_cast<int>(EncoderMode::short_only))
    ->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  auto& desk = Desk::get();
  Rng rng(1);
  HstEncoder enc(Desk::config(EncoderMode::hybrid), std::nullopt, rng);
  const Batch batch = desk.batch(16);
  AdamState adam;
  for (auto _ : state) {
    enc.parameters().zero_grad();
    auto out = enc.forward(batch);
    Tensor loss = masked_mae_loss(out.forecast, batch.target, batch.target_raw, 0.0);
    loss.backward();
    adam_step(enc.parameters(), adam, 1e-3);
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
