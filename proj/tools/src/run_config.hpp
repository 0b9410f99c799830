#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "knnmts/data.hpp"
#include "knnmts/encoder.hpp"
#include "knnmts/forecaster.hpp"
#include "knnmts/trainer.hpp"

namespace knnmts::cli {

struct DataSection {
  std::string path;
  std::string adjacency;  // empty = learn the graph only
  std::size_t channels = 1;
  SplitSpec split;
};

struct StoreSection {
  double fraction = 1.0;
  std::uint64_t seed = 1;
  std::size_t batch_size = 16;
};

/// Everything a run needs. Encoder nodes/channels/predefined_graph are filled
/// in from the data section when the dataset is loaded.
struct RunConfig {
  std::string name = "default";
  std::string runs_dir = "runs";
  std::size_t threads = 1;
  DataSection data;
  EncoderConfig model;
  TrainConfig train;
  StoreSection store;
  ForecastConfig forecast;
  bool patience_explicit = false;

  std::filesystem::path run_dir() const { return std::filesystem::path(runs_dir) / name; }

  /// Strict parse: unknown keys anywhere raise ConfigError naming the key path.
  static RunConfig from_json(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  /// Fully resolved document (every field, defaults included).
  std::string to_json() const;

  /// Applies derived defaults and validates every section.
  void finalize();
};

/// "1,5,10" or "1..100" (every integer).
std::vector<std::size_t> parse_size_list(const std::string& text);
/// "0.1,0.2" or "lo..hi" (10 evenly spaced values) or "lo..hi:step".
std::vector<double> parse_double_list(const std::string& text);

}  // namespace knnmts::cli
