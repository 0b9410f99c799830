#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "knnmts/synth.hpp"
#include "run_config.hpp"

namespace knnmts::cli {

struct SynthOptions {
  SynthConfig config;
  std::uint64_t seed = 42;
  std::filesystem::path out;
  std::filesystem::path adjacency_out;  // optional dense CSV
  std::filesystem::path motifs_out;     // optional CSV of motif placements
};

struct BuildStoreOptions {
  bool force = false;
  std::filesystem::path out;  // default: <run>/store.kmtds
};

struct EvalOptions {
  bool no_store = false;
  std::vector<std::size_t> ks;   // empty = forecast.k
  std::vector<double> alphas;    // empty = forecast.alpha
  std::string split = "test";
  std::size_t stride = 1;
  std::filesystem::path store;   // default: <run>/store.kmtds
  std::filesystem::path dump;    // default: <run>/predictions.csv
};

struct InspectOptions {
  std::string split = "test";
  std::optional<std::size_t> row;
  std::optional<std::size_t> node;
  std::optional<std::size_t> end_step;
  std::filesystem::path store;
  std::filesystem::path out;     // default: <run>/neighbors.csv
};

void cmd_synth(const SynthOptions& options);
void cmd_convert(const std::filesystem::path& in, const std::filesystem::path& out, std::size_t channels);
void cmd_train(RunConfig config);
void cmd_build_store(RunConfig config, const BuildStoreOptions& options);
void cmd_eval(RunConfig config, const EvalOptions& options);
void cmd_inspect(RunConfig config, const InspectOptions& options);

/// Hex SHA-256 of a file's bytes.
std::string file_sha256(const std::filesystem::path& path);

}  // namespace knnmts::cli
