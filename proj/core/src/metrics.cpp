#include "knnmts/metrics.hpp"

#include <cmath>
#include <fmt/format.h>
#include <fstream>

#include "knnmts/errors.hpp"

namespace knnmts {

MetricSet masked_metrics(std::span<const double> predictions, std::span<const double> labels, double null_value) {
  if (predictions.size() != labels.size())
    throw DimensionError("metrics: " + std::to_string(predictions.size()) + " predictions vs " +
                         std::to_string(labels.size()) + " labels");
  double abs_sum = 0.0, sq_sum = 0.0, pct_sum = 0.0;
  std::size_t n = 0, pct_n = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == null_value) continue;
    const double e = predictions[i] - labels[i];
    abs_sum += std::abs(e);
    sq_sum += e * e;
    ++n;
    // Percentage error is undefined at a zero label even when 0 is not the null value.
    if (labels[i] != 0.0) {
      pct_sum += std::abs(e) / std::abs(labels[i]);
      ++pct_n;
    }
  }
  MetricSet m;
  m.count = n;
  if (n > 0) {
    m.mae = abs_sum / static_cast<double>(n);
    m.rmse = std::sqrt(sq_sum / static_cast<double>(n));
  }
  if (pct_n > 0) m.mape = pct_sum / static_cast<double>(pct_n);
  return m;
}

EvalReport evaluate(const ForecastTable& table, double null_value, const std::vector<std::size_t>& report_steps) {
  if (table.space != Space::raw) throw ContractError("metrics must be computed on raw-space forecasts");
  const std::size_t w = table.width();
  if (table.predictions.size() != table.rows() * w || table.labels.size() != table.rows() * w)
    throw DimensionError("forecast table arrays do not match its row count");
  EvalReport report;
  report.rows = table.rows();
  report.average = masked_metrics(table.predictions, table.labels, null_value);
  for (std::size_t step : report_steps) {
    if (step == 0 || step > table.horizon) continue;
    std::vector<double> p, y;
    p.reserve(table.rows() * table.channels);
    y.reserve(table.rows() * table.channels);
    for (std::size_t r = 0; r < table.rows(); ++r)
      for (std::size_t c = 0; c < table.channels; ++c) {
        const std::size_t i = r * w + (step - 1) * table.channels + c;
        p.push_back(table.predictions[i]);
        y.push_back(table.labels[i]);
      }
    report.horizons.push_back({step, masked_metrics(p, y, null_value)});
  }
  return report;
}

void write_prediction_dump(const ForecastTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "node,end_step,horizon,prediction,label\n";
  const std::size_t w = table.width();
  for (std::size_t r = 0; r < table.rows(); ++r)
    for (std::size_t s = 0; s < table.horizon; ++s)
      for (std::size_t c = 0; c < table.channels; ++c) {
        const std::size_t i = r * w + s * table.channels + c;
        out << fmt::format("{},{},{},{},{}\n", table.nodes[r], table.end_steps[r], s + 1, table.predictions[i],
                           table.labels[i]);
      }
  if (!out) throw IoError("failed writing " + path.string());
}

std::string format_report(const EvalReport& report) {
  auto cell = [](const std::optional<double>& v) { return v ? fmt::format("{:10.4f}", *v) : fmt::format("{:>10}", "-"); };
  std::string s = fmt::format("{:<10}{:>10}{:>10}{:>10}\n", "horizon", "MAE", "RMSE", "MAPE");
  for (const auto& h : report.horizons)
    s += fmt::format("{:<10}{}{}{}\n", h.horizon, cell(h.metrics.mae), cell(h.metrics.rmse), cell(h.metrics.mape));
  s += fmt::format("{:<10}{}{}{}\n", "average", cell(report.average.mae), cell(report.average.rmse),
                   cell(report.average.mape));
  return s;
}

}  // namespace knnmts
