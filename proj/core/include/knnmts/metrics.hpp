#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "knnmts/data.hpp"

namespace knnmts {

/// Masked error metrics; a value is absent when every label was masked.
struct MetricSet {
  std::optional<double> mae;
  std::optional<double> rmse;
  std::optional<double> mape;
  std::size_t count = 0;  // unmasked entries
};

/// Entries whose label equals `null_value` are excluded from all three metrics.
MetricSet masked_metrics(std::span<const double> predictions, std::span<const double> labels, double null_value);

/// Aligned predictions and labels, one row per (end_step, node) window and
/// `horizon * channels` columns ordered (step, channel).
struct ForecastTable {
  Space space = Space::raw;
  std::size_t horizon = 0;
  std::size_t channels = 1;
  std::vector<double> predictions;
  std::vector<double> labels;
  std::vector<std::uint32_t> nodes;
  std::vector<std::uint32_t> end_steps;

  std::size_t width() const { return horizon * channels; }
  std::size_t rows() const { return nodes.size(); }
};

struct HorizonMetrics {
  std::size_t horizon = 0;  // 1-based step index
  MetricSet metrics;
};

struct EvalReport {
  std::vector<HorizonMetrics> horizons;  // the reported steps that exist (3, 6, 12)
  MetricSet average;                     // over every step
  std::size_t rows = 0;
};

/// Requires a raw-space table; throws ContractError otherwise.
EvalReport evaluate(const ForecastTable& table, double null_value = 0.0,
                    const std::vector<std::size_t>& report_steps = {3, 6, 12});

/// CSV `node,end_step,horizon,prediction,label` (one row per step and channel).
void write_prediction_dump(const ForecastTable& table, const std::filesystem::path& path);

/// Human-readable per-horizon table.
std::string format_report(const EvalReport& report);

}  // namespace knnmts
