#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "knnmts/data.hpp"
#include "knnmts/encoder.hpp"
#include "knnmts/metrics.hpp"

namespace knnmts {

struct TrainConfig {
  double lr = 0.001;
  std::size_t batch_size = 16;  // end positions per batch; every node is included at each
  std::size_t max_epochs = 100;
  std::size_t patience = 15;
  std::uint64_t seed = 42;
  double null_value = 0.0;
  double clip_norm = 0.0;  // 0 disables global-norm clipping
  std::size_t max_batches_per_epoch = 0;  // 0 = full pass
  std::size_t val_stride = 1;  // evaluate every k-th validation position

  void validate() const;
};

/// Mean |pred - target| over entries whose raw-space label differs from
/// `null_value`. Returns 0 (with a warning) when everything is masked.
Tensor masked_mae_loss(const Tensor& prediction, const Tensor& target, std::span<const double> target_raw,
                       double null_value);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One bias-corrected Adam update from the accumulated gradients. Throws
/// NumericError naming the parameter if a gradient is NaN or infinite.
void adam_step(ParameterSet& params, AdamState& state, double lr);

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(ParameterSet& params, double max_norm);

/// Runs the encoder without gradients over every `stride`-th window position
/// (all nodes) and returns inverse-normalized predictions and raw labels.
ForecastTable encoder_forecast(const HstEncoder& encoder, const WindowSet& windows, const Normalizer& normalizer,
                               std::size_t batch_size = 16, std::size_t stride = 1);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_mae = 0.0;
  double val_rmse = 0.0;
  double val_mape = 0.0;
  double seconds = 0.0;
};

struct FitResult {
  std::vector<EpochRecord> trace;
  std::size_t best_epoch = 0;  // 0 = the initial parameters were kept
  double best_val_mae = 0.0;
  bool stopped_early = false;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains in place. On return the encoder holds the parameters of the epoch
/// with the lowest validation MAE. If the loss diverges the best parameters
/// are restored before NumericError is thrown.
FitResult fit(HstEncoder& encoder, const WindowSet& train, const WindowSet& val, const Normalizer& normalizer,
              const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Trace CSV with header `epoch,train_loss,val_mae,val_rmse,val_mape,seconds`.
void write_trace(const std::vector<EpochRecord>& trace, const std::filesystem::path& path);
std::string trace_header();
std::string trace_row(const EpochRecord& record);

struct GradCheckOptions {
  double h = 1e-5;
  std::size_t coords_per_group = 20;
  std::uint64_t seed = 7;
  double floor = 1e-6;  // denominator floor for near-zero gradients
};

struct GradCheckGroup {
  std::string name;
  std::size_t coords = 0;
  double max_rel_error = 0.0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double max_rel_error = 0.0;
};

/// Central-difference check of reverse-mode gradients. `loss_fn` must build
/// a fresh scalar loss from the current parameter values on every call.
/// Relative error is |a - n| / max(|a|, |n|, floor).
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, ParameterSet& params,
                           const GradCheckOptions& options = {});

}  // namespace knnmts
