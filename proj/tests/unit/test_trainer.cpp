#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>

#include "fixtures.hpp"
#include "knnmts/checkpoint.hpp"
#include "knnmts/errors.hpp"
#include "knnmts/ops.hpp"
#include "knnmts/trainer.hpp"

using namespace knnmts;

namespace {

// Noiseless daily-style sinusoids on every node, already split three ways.
struct SineData {
  DatasetSplits raw;
  Normalizer norm;
  SeriesSplit train_z, val_z;
};

SineData sine_data(std::size_t nodes, std::size_t steps) {
  MtsDataset ds;
  ds.steps = steps;
  ds.nodes = nodes;
  for (std::size_t n = 0; n < nodes; ++n) ds.node_ids.push_back(std::to_string(n));
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t n = 0; n < nodes; ++n)
      ds.values.push_back(5.0 + std::sin(2.0 * std::numbers::pi * (t + 3.0 * n) / 24.0));
  SineData d;
  d.raw = chronological_split(ds, {});
  d.norm = Normalizer::fit(d.raw.train);
  d.train_z = d.norm.apply(d.raw.train);
  d.val_z = d.norm.apply(d.raw.val);
  return d;
}

}  // namespace

TEST(Trainer, MaskedMaeGolden) {
  std::vector<double> raw{2, 4};
  EXPECT_DOUBLE_EQ(masked_mae_loss(Tensor({2}, {1, 2}), Tensor({2}, {2, 4}), raw, 0.0).item(), 1.5);
  EXPECT_DOUBLE_EQ(masked_mae_loss(Tensor({2}, {2, 4}), Tensor({2}, {2, 4}), raw, 0.0).item(), 0.0);
  std::vector<double> masked{0, 4};
  EXPECT_DOUBLE_EQ(masked_mae_loss(Tensor({2}, {9, 1}), Tensor({2}, {-1, 4}), masked, 0.0).item(), 3.0);
  std::vector<double> all_null{0, 0};
  EXPECT_EQ(masked_mae_loss(Tensor({2}, {9, 1}), Tensor({2}, {-1, 4}), all_null, 0.0).item(), 0.0);
  EXPECT_THROW(masked_mae_loss(Tensor({3}, {1, 2, 3}), Tensor({2}, {2, 4}), raw, 0.0), DimensionError);
}

TEST(Trainer, MaskedMaeGradientSkipsMaskedEntries) {
  Tensor pred({3}, {1, 5, 2}, true);
  std::vector<double> raw{1, 0, 7};
  masked_mae_loss(pred, Tensor({3}, {0, 0, 3}), raw, 0.0).backward();
  EXPECT_DOUBLE_EQ(pred.grad()[0], 0.5);
  EXPECT_DOUBLE_EQ(pred.grad()[1], 0.0);
  EXPECT_DOUBLE_EQ(pred.grad()[2], -0.5);
}

TEST(Trainer, AdamZeroGradientKeepsParameters) {
  ParameterSet ps;
  ps.add("w", Tensor({3}, {1, -2, 3}, true));
  AdamState st;
  ps.get("w").mutable_grad();
  adam_step(ps, st, 0.1);
  EXPECT_EQ(std::vector<double>(ps.get("w").data().begin(), ps.get("w").data().end()), (std::vector<double>{1, -2, 3}));
}

TEST(Trainer, AdamFirstStepIsLearningRate) {
  ParameterSet ps;
  ps.add("w", Tensor::scalar(0.5, true));
  AdamState st;
  ps.get("w").mutable_grad()[0] = 1.0;
  adam_step(ps, st, 0.001);
  // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
  EXPECT_NEAR(0.5 - ps.get("w").item(), 0.001 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(st.step, 1u);
}

TEST(Trainer, AdamRejectsNaNGradientByName) {
  ParameterSet ps;
  ps.add("head.out.w", Tensor::scalar(0.5, true));
  ps.get("head.out.w").mutable_grad()[0] = std::nan("");
  AdamState st;
  try {
    adam_step(ps, st, 0.001);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("head.out.w"), std::string::npos);
  }
}

TEST(Trainer, ClipGradNorm) {
  ParameterSet ps;
  ps.add("a", Tensor::scalar(0.0, true));
  ps.add("b", Tensor::scalar(0.0, true));
  ps.get("a").mutable_grad()[0] = 3.0;
  ps.get("b").mutable_grad()[0] = 4.0;
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 5.0);
  EXPECT_NEAR(ps.get("a").grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(ps.get("b").grad()[0], 0.8, 1e-15);
  EXPECT_NEAR(clip_grad_norm(ps, 10.0), 1.0, 1e-15);
  EXPECT_NEAR(ps.get("a").grad()[0], 0.6, 1e-15);
}

TEST(Trainer, ConfigValidation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.patience = 200;
  EXPECT_THROW(c.validate(), ConfigError);
  c.lr = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  EXPECT_DOUBLE_EQ(c.lr, 0.001);
  EXPECT_EQ(c.batch_size, 16u);
}

TEST(GradCheck, LinearModelIsExact) {
  ParameterSet ps;
  ps.add("w", Tensor({3}, {0.3, -0.2, 0.7}, true));
  const Tensor x({3}, {0.5, 0.25, -0.125});
  auto report = grad_check([&] { return sum(mul(ps.get("w"), x)); }, ps);
  ASSERT_EQ(report.groups.size(), 1u);
  EXPECT_EQ(report.groups[0].coords, 3u);
  EXPECT_LT(report.max_rel_error, 1e-10);
}

TEST(GradCheck, DetectsCorruptedBackward) {
  ParameterSet ps;
  ps.add("w", Tensor({4}, {0.3, -0.2, 0.7, 1.1}, true));
  auto wrong_square = [](const Tensor& t) {
    return map_unary(
        t, [](double v) { return v * v; }, [](double v, double) { return 3.0 * v; });
  };
  auto report = grad_check([&] { return sum(wrong_square(ps.get("w"))); }, ps);
  EXPECT_GT(report.max_rel_error, 1e-2);
}

TEST(GradCheck, FullEncoderAllGroups) {
  for (auto mode : {EncoderMode::hybrid, EncoderMode::long_only, EncoderMode::short_only}) {
    auto c = fixtures::tiny_config(mode, mode == EncoderMode::short_only);
    Rng rng(21);
    std::optional<TransitionMatrices> graph;
    if (c.predefined_graph) {
      graph = transition_matrices(fixtures::random_tensor({c.nodes, c.nodes}, rng, false, 0.0, 1.0));
    }
    HstEncoder enc(c, graph, rng);
    Batch batch;
    batch.size = 2;
    batch.nodes = c.nodes;
    batch.long_input = fixtures::random_tensor({2, c.nodes, c.input_length, 1}, rng);
    batch.short_input = fixtures::random_tensor({2, c.nodes, c.segment_length, 1}, rng);
    const Tensor target = fixtures::random_tensor({2 * c.nodes, c.output_width()}, rng);
    // squared error keeps the loss smooth at every coordinate. The attention
    // key bias has an exactly zero gradient, so the check there compares
    // roundoff against the floor; a mean keeps that roundoff small.
    auto loss = [&] {
      const Tensor diff = sub(enc.forward(batch).forecast, target);
      return mean(mul(diff, diff));
    };
    auto report = grad_check(loss, enc.parameters());
    EXPECT_EQ(report.groups.size(), enc.parameters().size());
    for (const auto& g : report.groups) EXPECT_LT(g.max_rel_error, 1e-4) << to_string(mode) << " " << g.name;
  }
}

TEST(Trainer, ZeroEpochsReturnsInitialParameters) {
  auto d = sine_data(3, 200);
  auto c = fixtures::tiny_config();
  Rng rng(1);
  HstEncoder enc(c, std::nullopt, rng);
  auto before = encode_checkpoint(make_checkpoint(enc, d.norm));
  WindowSet tr(d.train_z, d.raw.train, c.window()), va(d.val_z, d.raw.val, c.window());
  TrainConfig tc;
  tc.max_epochs = 0;
  auto result = fit(enc, tr, va, d.norm, tc);
  EXPECT_TRUE(result.trace.empty());
  EXPECT_EQ(result.best_epoch, 0u);
  EXPECT_EQ(encode_checkpoint(make_checkpoint(enc, d.norm)), before);
}

TEST(Trainer, LossDecreasesOnSinusoids) {
  auto d = sine_data(3, 400);
  auto c = fixtures::tiny_config();
  Rng rng(42);
  HstEncoder enc(c, std::nullopt, rng);
  WindowSet tr(d.train_z, d.raw.train, c.window()), va(d.val_z, d.raw.val, c.window());
  TrainConfig tc;
  tc.max_epochs = 6;
  tc.patience = 6;
  tc.lr = 0.01;
  std::vector<EpochRecord> seen;
  auto result = fit(enc, tr, va, d.norm, tc, [&](const EpochRecord& r) { seen.push_back(r); });
  ASSERT_EQ(result.trace.size(), 6u);
  EXPECT_EQ(seen.size(), 6u);
  EXPECT_LT(result.trace.back().train_loss, result.trace.front().train_loss);
  EXPECT_GE(result.best_epoch, 1u);
  double best = result.trace.front().val_mae;
  for (const auto& r : result.trace) best = std::min(best, r.val_mae);
  EXPECT_DOUBLE_EQ(result.best_val_mae, best);
  // the encoder holds the best epoch's parameters
  auto table = encoder_forecast(enc, va, d.norm);
  EXPECT_NEAR(*evaluate(table).average.mae, best, 1e-12);
}

TEST(Trainer, FitIsBitReproducible) {
  auto d = sine_data(3, 200);
  auto c = fixtures::tiny_config();
  c.dropout = 0.1;
  std::vector<std::vector<unsigned char>> blobs;
  for (int run = 0; run < 2; ++run) {
    Rng rng(5);
    HstEncoder enc(c, std::nullopt, rng);
    WindowSet tr(d.train_z, d.raw.train, c.window()), va(d.val_z, d.raw.val, c.window());
    TrainConfig tc;
    tc.max_epochs = 2;
    tc.patience = 2;
    tc.max_batches_per_epoch = 3;
    fit(enc, tr, va, d.norm, tc);
    blobs.push_back(encode_checkpoint(make_checkpoint(enc, d.norm)));
  }
  EXPECT_EQ(blobs[0], blobs[1]);
}

TEST(Trainer, EncoderForecastIsRawAndOrdered) {
  auto d = sine_data(3, 200);
  auto c = fixtures::tiny_config();
  Rng rng(6);
  HstEncoder enc(c, std::nullopt, rng);
  WindowSet va(d.val_z, d.raw.val, c.window());
  auto table = encoder_forecast(enc, va, d.norm, 4, 1);
  EXPECT_EQ(table.space, Space::raw);
  EXPECT_EQ(table.rows(), va.size());
  EXPECT_EQ(table.width(), 2u);
  for (std::size_t r = 0; r < table.rows(); ++r) {
    // labels are raw dataset values
    EXPECT_NEAR(table.labels[r * 2], d.raw.val.at(table.end_steps[r] + 1 - d.raw.val.first_step, table.nodes[r]),
                1e-12);
  }
  auto strided = encoder_forecast(enc, va, d.norm, 4, 5);
  EXPECT_EQ(strided.rows(), ((va.per_node() + 4) / 5) * 3);
}

TEST(Trainer, TraceCsv) {
  EXPECT_EQ(trace_header(), "epoch,train_loss,val_mae,val_rmse,val_mape,seconds");
  auto dir = fixtures::temp_dir("trace");
  write_trace({{1, 0.5, 0.4, 0.6, 0.1, 2.0}, {2, 0.3, 0.2, 0.3, 0.05, 2.0}}, dir / "trace.csv");
  std::ifstream in(dir / "trace.csv");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 3u);
}
