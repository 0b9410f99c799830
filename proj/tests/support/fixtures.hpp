#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "knnmts/data.hpp"
#include "knnmts/encoder.hpp"
#include "knnmts/rng.hpp"
#include "knnmts/tensor.hpp"

namespace fixtures {

inline knnmts::Tensor random_tensor(knnmts::Shape shape, knnmts::Rng& rng, bool requires_grad = false,
                                    double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(knnmts::shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return knnmts::Tensor(std::move(shape), std::move(v), requires_grad);
}

/// Small encoder that exercises every parameter group quickly.
inline knnmts::EncoderConfig tiny_config(knnmts::EncoderMode mode = knnmts::EncoderMode::hybrid,
                                         bool predefined_graph = false) {
  knnmts::EncoderConfig c;
  c.nodes = 3;
  c.channels = 1;
  c.input_length = 12;
  c.segment_length = 4;
  c.horizon = 2;
  c.hidden = 4;
  c.heads = 2;
  c.transformer_layers = 2;
  c.ffn_multiplier = 2;
  c.dilations = {1, 2};
  c.filter_length = 2;
  c.diffusion_order = 2;
  c.adaptive_embedding = 3;
  c.mode = mode;
  c.predefined_graph = predefined_graph;
  return c;
}

/// A series split filled with smooth random values.
inline knnmts::SeriesSplit random_split(std::size_t steps, std::size_t nodes, std::size_t channels,
                                        knnmts::Rng& rng, knnmts::Space space = knnmts::Space::normalized) {
  knnmts::SeriesSplit s;
  s.name = "test";
  s.steps = steps;
  s.nodes = nodes;
  s.channels = channels;
  s.space = space;
  s.values.resize(steps * nodes * channels);
  for (double& v : s.values) v = rng.uniform(-1.0, 1.0);
  return s;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("knnmts_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixtures
