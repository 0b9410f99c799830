#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "knnmts/tensor.hpp"

namespace knnmts {

/// Which space an array of series values lives in.
enum class Space { raw, normalized };

const char* space_name(Space space);

/// T x N x C multivariate series, stored (t, n, c) row-major.
struct MtsDataset {
  std::string name;
  std::size_t steps = 0;
  std::size_t nodes = 0;
  std::size_t channels = 1;
  std::size_t sample_rate_minutes = 5;
  std::vector<std::string> node_ids;
  std::vector<double> values;

  double at(std::size_t t, std::size_t n, std::size_t c = 0) const {
    return values[(t * nodes + n) * channels + c];
  }

  /// Throws ConfigError on empty dimensions, size mismatch or NaN/Inf values.
  void validate() const;
};

enum class DatasetFormat { csv, kmtsbin };

/// Picks the format from the file extension (".csv" or ".kmtsbin").
DatasetFormat format_from_path(const std::filesystem::path& path);

/// CSV: header row of column labels, one row per timestep with N*C columns
/// ordered (node, channel). Node ids come from the first column of each node.
MtsDataset load_dataset(const std::filesystem::path& path, DatasetFormat format, std::size_t channels = 1);
void save_dataset(const MtsDataset& dataset, const std::filesystem::path& path, DatasetFormat format);

std::vector<unsigned char> encode_kmtsbin(const MtsDataset& dataset);
MtsDataset decode_kmtsbin(std::span<const unsigned char> bytes);

/// Contiguous run of timesteps cut from a dataset.
struct SeriesSplit {
  std::string name;
  std::size_t first_step = 0;  // index of row 0 in the source dataset
  std::size_t steps = 0;
  std::size_t nodes = 0;
  std::size_t channels = 1;
  Space space = Space::raw;
  std::vector<double> values;

  double at(std::size_t t, std::size_t n, std::size_t c = 0) const {
    return values[(t * nodes + n) * channels + c];
  }
};

struct SplitSpec {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

struct DatasetSplits {
  SeriesSplit train;
  SeriesSplit val;
  SeriesSplit test;
};

/// Val and test lengths are floor(ratio * T); train receives the remainder.
DatasetSplits chronological_split(const MtsDataset& dataset, const SplitSpec& spec);

/// Per-channel z-score fit on a raw training split.
class Normalizer {
 public:
  Normalizer() = default;
  Normalizer(std::vector<double> mean, std::vector<double> stddev);

  static Normalizer fit(const SeriesSplit& train);

  SeriesSplit apply(const SeriesSplit& raw) const;
  SeriesSplit inverse(const SeriesSplit& normalized) const;

  double apply(double x, std::size_t channel = 0) const { return (x - mean_[channel]) / std_[channel]; }
  double inverse(double z, std::size_t channel = 0) const { return z * std_[channel] + mean_[channel]; }

  std::size_t channels() const { return mean_.size(); }
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& stddev() const { return std_; }

 private:
  std::vector<double> mean_;
  std::vector<double> std_;
};

struct WindowShape {
  std::size_t input_length = 2016;   // L
  std::size_t segment_length = 12;   // L_s
  std::size_t horizon = 12;          // T_f
};

/// One training/inference unit. `long_input` is L x C, `short_input` its last
/// L_s rows, `target` T_f x C; all in the model (normalized) space.
struct Sample {
  Tensor long_input;
  Tensor short_input;
  Tensor target;
  std::vector<double> target_raw;
  std::size_t node = 0;
  std::size_t end_step = 0;  // dataset-global index of the last history row
};

/// Node-complete minibatch: every node at each of B end positions.
struct Batch {
  std::size_t size = 0;   // B
  std::size_t nodes = 0;  // N
  Tensor long_input;      // [B, N, L, C]
  Tensor short_input;     // [B, N, L_s, C]
  Tensor target;          // [B*N, T_f*C]
  std::vector<double> target_raw;       // same layout as target
  std::vector<std::size_t> end_steps;   // dataset-global, one per b
};

/// Every valid window of a split, addressed in (node, end_step) order.
///
/// Holds the model-space and raw-space copies of the split; windows never
/// read outside the split.
class WindowSet {
 public:
  WindowSet(const SeriesSplit& model_space, const SeriesSplit& raw_space, WindowShape shape);

  const WindowShape& shape() const { return shape_; }
  std::size_t nodes() const { return model_->nodes; }
  std::size_t channels() const { return model_->channels; }
  /// Windows per node: steps - L - T_f + 1, or 0 when the split is too short.
  std::size_t per_node() const { return per_node_; }
  std::size_t size() const { return per_node_ * model_->nodes; }
  bool empty() const { return size() == 0; }
  /// Non-empty when the split was too short to yield any window.
  const std::string& warning() const { return warning_; }

  /// Window index -> (node, position) where position is in [0, per_node).
  std::size_t node_of(std::size_t index) const { return index / per_node_; }
  std::size_t position_of(std::size_t index) const { return index % per_node_; }
  /// Dataset-global end step of a window position.
  std::size_t end_step(std::size_t position) const;

  Sample at(std::size_t index) const;

  /// Gathers all nodes at the given window positions; rows of the flattened
  /// [B*N] axes are ordered (b, node).
  Batch gather(std::span<const std::size_t> positions) const;

  const SeriesSplit& model_split() const { return *model_; }
  const SeriesSplit& raw_split() const { return *raw_; }

 private:
  const SeriesSplit* model_;
  const SeriesSplit* raw_;
  WindowShape shape_;
  std::size_t per_node_ = 0;
  std::string warning_;
};

}  // namespace knnmts
