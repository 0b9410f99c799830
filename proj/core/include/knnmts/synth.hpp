#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "knnmts/data.hpp"

namespace knnmts {

/// Settings for the planted-motif benchmark generator.
struct SynthConfig {
  std::size_t nodes = 16;
  std::size_t steps = 8064;
  std::size_t period = 288;          // daily period in steps; the weekly one is 7x
  std::size_t motif_length = 36;
  std::size_t motif_kinds = 6;       // distinct motif shapes
  std::size_t motif_count = 12;      // placements per shape, each into 2-3 nodes
  double noise = 0.1;                // Gaussian sigma
  double level = 3.0;
  double daily_amplitude = 1.0;
  double motif_amplitude = 1.5;
  bool ring_graph = true;
  std::size_t sample_rate_minutes = 5;
};

struct MotifInstance {
  std::size_t kind = 0;
  std::size_t node = 0;
  std::size_t start = 0;   // first pasted timestep
  std::size_t length = 0;
};

struct SynthResult {
  MtsDataset dataset;
  std::vector<MotifInstance> motifs;    // sorted by (kind, start, node)
  std::vector<double> adjacency;        // N x N ring adjacency, empty without ring_graph
};

/// Pure function of (cfg, seed). Values are rounded to float precision so
/// the dataset round-trips exactly through kmtsbin.
///
/// Each node carries a level plus daily and weekly sinusoids and Gaussian
/// noise. Every motif shape replaces the signal at `motif_count` random times
/// in 2-3 random nodes, never overlapping another motif on the same node.
/// Throws ConfigError if placement fails after 10 * motif_count attempts or
/// if pasted instances are not closer to each other than typical segments.
SynthResult synth_generate(const SynthConfig& cfg, std::uint64_t seed);

}  // namespace knnmts
