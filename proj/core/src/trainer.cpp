#include "knnmts/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <limits>
#include <numeric>
#include <spdlog/spdlog.h>

#include "knnmts/errors.hpp"
#include "knnmts/ops.hpp"
#include "knnmts/rng.hpp"

namespace knnmts {

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train: lr must be positive");
  if (batch_size == 0) throw ConfigError("train: batch_size must be at least 1");
  if (max_epochs > 0 && patience > max_epochs)
    throw ConfigError("train: patience " + std::to_string(patience) + " exceeds max_epochs " +
                      std::to_string(max_epochs));
  if (!(clip_norm >= 0.0)) throw ConfigError("train: clip_norm must be non-negative");
  if (val_stride == 0) throw ConfigError("train: val_stride must be at least 1");
}

Tensor masked_mae_loss(const Tensor& prediction, const Tensor& target, std::span<const double> target_raw,
                       double null_value) {
  if (prediction.shape() != target.shape())
    throw DimensionError("loss: prediction " + shape_string(prediction.shape()) + " vs target " +
                         shape_string(target.shape()));
  if (target_raw.size() != target.numel()) throw DimensionError("loss: raw label count does not match target");
  std::vector<double> mask(target_raw.size());
  std::size_t kept = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = target_raw[i] == null_value ? 0.0 : 1.0;
    kept += mask[i] != 0.0;
  }
  if (kept == 0) {
    spdlog::warn("every label in the batch equals the null value; loss is 0");
    return scale(sum(sub(prediction, target)), 0.0);
  }
  const Tensor err = mul(abs(sub(prediction, target)), Tensor(target.shape(), std::move(mask)));
  return scale(sum(err), 1.0 / static_cast<double>(kept));
}

void adam_step(ParameterSet& params, AdamState& state, double lr) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value.numel(), 0.0);
      state.v.emplace_back(p.value.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adam state does not match the parameter set");
  std::size_t idx = 0;
  for (const auto& p : params) {
    for (double g : p.value.grad())
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + p.name);
    if (state.m[idx].size() != p.value.numel()) throw ContractError("adam moment shape mismatch at " + p.name);
    ++idx;
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  idx = 0;
  for (auto& p : params) {
    auto g = p.value.grad();
    auto w = p.value.mutable_data();
    auto& m = state.m[idx];
    auto& v = state.v[idx];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
    ++idx;
  }
}

double clip_grad_norm(ParameterSet& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.value.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& p : params) {
      if (!p.value.has_grad()) continue;
      for (double& g : p.value.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

ForecastTable encoder_forecast(const HstEncoder& encoder, const WindowSet& windows, const Normalizer& normalizer,
                               std::size_t batch_size, std::size_t stride) {
  if (batch_size == 0 || stride == 0) throw ConfigError("forecast batch size and stride must be positive");
  if (windows.model_split().space != Space::normalized)
    throw ContractError("encoder input must be in normalized space");
  NoGradGuard no_grad;
  ForecastTable table;
  table.space = Space::raw;
  table.horizon = windows.shape().horizon;
  table.channels = windows.channels();
  const std::size_t width = table.width();
  std::vector<std::size_t> positions;
  for (std::size_t p = 0; p < windows.per_node(); p += stride) positions.push_back(p);
  for (std::size_t start = 0; start < positions.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, positions.size() - start);
    const Batch batch = windows.gather(std::span<const std::size_t>(positions).subspan(start, count));
    const EncoderOutput out = encoder.forward(batch);
    const auto pred = out.forecast.data();
    for (std::size_t i = 0; i < pred.size(); ++i)
      table.predictions.push_back(normalizer.inverse(pred[i], i % table.channels));
    table.labels.insert(table.labels.end(), batch.target_raw.begin(), batch.target_raw.end());
    for (std::size_t b = 0; b < batch.size; ++b)
      for (std::size_t n = 0; n < batch.nodes; ++n) {
        table.nodes.push_back(static_cast<std::uint32_t>(n));
        table.end_steps.push_back(static_cast<std::uint32_t>(batch.end_steps[b]));
      }
    if (table.predictions.size() != table.rows() * width) throw DimensionError("forecast width mismatch");
  }
  return table;
}

FitResult fit(HstEncoder& encoder, const WindowSet& train, const WindowSet& val, const Normalizer& normalizer,
              const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  FitResult result;
  if (config.max_epochs == 0) return result;
  if (train.empty()) throw ConfigError("training split yields no windows");
  if (val.empty()) throw ConfigError("validation split yields no windows");

  ParameterSet& params = encoder.parameters();
  ParameterSet best = params.clone();
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  AdamState adam;
  Rng rng(config.seed);
  Rng dropout_rng = rng.fork(1);
  ForwardContext ctx{true, &dropout_rng};

  auto diverge = [&](const std::string& what) {
    params.copy_from(best);
    throw NumericError(what + "; restored parameters from epoch " + std::to_string(result.best_epoch));
  };

  std::vector<std::size_t> order(train.per_node());
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    std::size_t batches = (order.size() + config.batch_size - 1) / config.batch_size;
    if (config.max_batches_per_epoch > 0) batches = std::min(batches, config.max_batches_per_epoch);

    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t start = b * config.batch_size;
      const std::size_t count = std::min(config.batch_size, order.size() - start);
      const Batch batch = train.gather(std::span<const std::size_t>(order).subspan(start, count));
      const EncoderOutput out = encoder.forward(batch, ctx);
      const Tensor loss = masked_mae_loss(out.forecast, batch.target, batch.target_raw, config.null_value);
      const double value = loss.item();
      if (!std::isfinite(value)) diverge(fmt::format("training loss became {} at epoch {} batch {}", value, epoch, b));
      params.zero_grad();
      loss.backward();
      if (config.clip_norm > 0.0) clip_grad_norm(params, config.clip_norm);
      try {
        adam_step(params, adam, config.lr);
      } catch (const NumericError& e) {
        diverge(e.what());
      }
      loss_sum += value;
    }

    const EvalReport report = evaluate(encoder_forecast(encoder, val, normalizer, config.batch_size, config.val_stride),
                                       config.null_value);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1));
    const double nan = std::numeric_limits<double>::quiet_NaN();
    rec.val_mae = report.average.mae.value_or(nan);
    rec.val_rmse = report.average.rmse.value_or(nan);
    rec.val_mape = report.average.mape.value_or(nan);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.trace.push_back(rec);
    spdlog::info("epoch {}: train loss {:.5f}, val MAE {:.5f} ({:.1f}s)", epoch, rec.train_loss, rec.val_mae,
                 rec.seconds);
    if (on_epoch) on_epoch(rec);
    if (std::isnan(rec.val_mae)) diverge(fmt::format("validation MAE is undefined at epoch {}", epoch));

    if (rec.val_mae < best_val) {
      best_val = rec.val_mae;
      best = params.clone();
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      result.stopped_early = true;
      break;
    }
  }
  params.copy_from(best);
  result.best_val_mae = best_val;
  return result;
}

std::string trace_header() { return "epoch,train_loss,val_mae,val_rmse,val_mape,seconds"; }

std::string trace_row(const EpochRecord& r) {
  return fmt::format("{},{},{},{},{},{:.3f}", r.epoch, r.train_loss, r.val_mae, r.val_rmse, r.val_mape, r.seconds);
}

void write_trace(const std::vector<EpochRecord>& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << trace_header() << '\n';
  for (const auto& r : trace) out << trace_row(r) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, ParameterSet& params,
                           const GradCheckOptions& options) {
  params.zero_grad();
  loss_fn().backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) {
    auto g = p.value.grad();
    analytic.emplace_back(g.begin(), g.end());
  }

  auto eval = [&] {
    NoGradGuard no_grad;
    return loss_fn().item();
  };

  GradCheckReport report;
  Rng rng(options.seed);
  std::size_t idx = 0;
  for (auto& p : params) {
    const std::size_t n = p.value.numel();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(coords));
    coords.resize(std::min(n, options.coords_per_group));

    GradCheckGroup group;
    group.name = p.name;
    group.coords = coords.size();
    auto w = p.value.mutable_data();
    for (std::size_t i : coords) {
      const double original = w[i];
      w[i] = original + options.h;
      const double plus = eval();
      w[i] = original - options.h;
      const double minus = eval();
      w[i] = original;
      const double numeric = (plus - minus) / (2.0 * options.h);
      const double a = analytic[idx][i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), options.floor});
      if (err >= group.max_rel_error) {
        group.max_rel_error = err;
        group.worst_analytic = a;
        group.worst_numeric = numeric;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, group.max_rel_error);
    report.groups.push_back(group);
    ++idx;
  }
  params.zero_grad();
  return report;
}

}  // namespace knnmts
