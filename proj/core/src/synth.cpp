#include "knnmts/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <tuple>
#include <utility>

#include "knnmts/errors.hpp"
#include "knnmts/rng.hpp"

namespace knnmts {

namespace {

std::vector<double> make_motif_shape(std::size_t length, double amplitude, Rng& rng) {
  std::vector<double> shape(length, 0.0);
  const double len = static_cast<double>(length);
  for (int bump = 0; bump < 3; ++bump) {
    const double center = rng.uniform(0.1, 0.9) * len;
    const double width = rng.uniform(0.06, 0.18) * len;
    const double height = rng.uniform(0.5, 1.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    for (std::size_t t = 0; t < length; ++t) {
      const double z = (static_cast<double>(t) - center) / width;
      shape[t] += height * std::exp(-0.5 * z * z);
    }
  }
  double peak = 0.0;
  for (double v : shape) peak = std::max(peak, std::fabs(v));
  if (peak > 0.0) {
    for (double& v : shape) v *= amplitude / peak;
  }
  return shape;
}

double segment_distance(const MtsDataset& ds, std::size_t node_a, std::size_t start_a, std::size_t node_b,
                        std::size_t start_b, std::size_t length) {
  double acc = 0.0;
  for (std::size_t t = 0; t < length; ++t) {
    const double d = ds.at(start_a + t, node_a) - ds.at(start_b + t, node_b);
    acc += d * d;
  }
  return std::sqrt(acc);
}

void check_motif_separation(const SynthResult& out, const SynthConfig& cfg, Rng rng) {
  const MtsDataset& ds = out.dataset;
  const std::size_t len = cfg.motif_length;
  std::vector<double> pairs;
  for (int i = 0; i < 512; ++i) {
    pairs.push_back(segment_distance(ds, rng.below(ds.nodes), rng.below(ds.steps - len + 1), rng.below(ds.nodes),
                                     rng.below(ds.steps - len + 1), len));
  }
  std::nth_element(pairs.begin(), pairs.begin() + 256, pairs.end());
  const double median = pairs[256];
  for (std::size_t kind = 0; kind < cfg.motif_kinds; ++kind) {
    const MotifInstance* first = nullptr;
    for (const auto& m : out.motifs) {
      if (m.kind != kind) continue;
      if (!first) {
        first = &m;
        continue;
      }
      if (m.start == first->start) continue;
      const double d = segment_distance(ds, first->node, first->start, m.node, m.start, len);
      if (!(d < median)) {
        throw ConfigError("motif " + std::to_string(kind) + " instances are " + std::to_string(d) +
                          " apart, not below the median segment distance " + std::to_string(median) +
                          "; lower the noise or raise the motif amplitude");
      }
      break;
    }
  }
}

}  // namespace

SynthResult synth_generate(const SynthConfig& cfg, std::uint64_t seed) {
  if (cfg.nodes == 0 || cfg.steps == 0 || cfg.period == 0) {
    throw ConfigError("synthetic dataset needs positive nodes, steps and period");
  }
  if (cfg.noise < 0.0) throw ConfigError("noise sigma must be non-negative");
  const bool with_motifs = cfg.motif_count > 0 && cfg.motif_kinds > 0;
  if (with_motifs && (cfg.motif_length == 0 || cfg.motif_length > cfg.steps)) {
    throw ConfigError("motif length must be in [1, steps]");
  }

  Rng rng(seed);
  Rng signal_rng = rng.fork(1);
  Rng motif_rng = rng.fork(2);
  Rng noise_rng = rng.fork(3);
  Rng check_rng = rng.fork(4);

  const std::size_t N = cfg.nodes;
  const std::size_t T = cfg.steps;
  SynthResult out;
  MtsDataset& ds = out.dataset;
  ds.name = "synthetic";
  ds.steps = T;
  ds.nodes = N;
  ds.channels = 1;
  ds.sample_rate_minutes = cfg.sample_rate_minutes;
  for (std::size_t n = 0; n < N; ++n) ds.node_ids.push_back("node" + std::to_string(n));
  ds.values.assign(T * N, 0.0);

  const double two_pi = 2.0 * std::numbers::pi;
  const double day = static_cast<double>(cfg.period);
  std::vector<double> level(N);
  for (std::size_t n = 0; n < N; ++n) {
    level[n] = cfg.level + signal_rng.uniform(-0.2, 0.2);
    const double daily = cfg.daily_amplitude * signal_rng.uniform(0.8, 1.2);
    const double weekly = daily * signal_rng.uniform(0.05, 0.12);
    const double phase = cfg.ring_graph ? two_pi * static_cast<double>(n) / static_cast<double>(N)
                                        : signal_rng.uniform(0.0, two_pi);
    const double weekly_phase = signal_rng.uniform(0.0, two_pi);
    for (std::size_t t = 0; t < T; ++t) {
      const double x = static_cast<double>(t);
      ds.values[t * N + n] = level[n] + daily * std::sin(two_pi * x / day + phase) +
                             weekly * std::sin(two_pi * x / (7.0 * day) + weekly_phase);
    }
  }

  if (with_motifs) {
    const std::size_t len = cfg.motif_length;
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> occupied(N);
    std::vector<std::size_t> node_order(N);
    for (std::size_t kind = 0; kind < cfg.motif_kinds; ++kind) {
      const auto shape = make_motif_shape(len, cfg.motif_amplitude, motif_rng);
      std::size_t placed = 0;
      std::size_t attempts = 0;
      while (placed < cfg.motif_count) {
        if (attempts++ >= 10 * cfg.motif_count) {
          throw ConfigError("could not place motif " + std::to_string(kind) + " " +
                            std::to_string(cfg.motif_count) + " times without overlap");
        }
        const std::size_t start = motif_rng.below(T - len + 1);
        const std::size_t width = std::min<std::size_t>(N, 2 + motif_rng.below(2));
        for (std::size_t n = 0; n < N; ++n) node_order[n] = n;
        // Partial Fisher-Yates picks `width` distinct nodes.
        for (std::size_t i = 0; i < width; ++i) std::swap(node_order[i], node_order[i + motif_rng.below(N - i)]);
        bool clash = false;
        for (std::size_t i = 0; i < width && !clash; ++i) {
          for (const auto& [s, e] : occupied[node_order[i]]) {
            if (start < e && s < start + len) {
              clash = true;
              break;
            }
          }
        }
        if (clash) continue;
        for (std::size_t i = 0; i < width; ++i) {
          const std::size_t n = node_order[i];
          occupied[n].emplace_back(start, start + len);
          for (std::size_t t = 0; t < len; ++t) ds.values[(start + t) * N + n] = level[n] + shape[t];
          out.motifs.push_back({kind, n, start, len});
        }
        ++placed;
      }
    }
    std::sort(out.motifs.begin(), out.motifs.end(), [](const MotifInstance& a, const MotifInstance& b) {
      return std::tie(a.kind, a.start, a.node) < std::tie(b.kind, b.start, b.node);
    });
  }

  if (cfg.noise > 0.0) {
    for (double& v : ds.values) v += cfg.noise * noise_rng.normal();
  }
  for (double& v : ds.values) v = static_cast<double>(static_cast<float>(v));

  if (cfg.ring_graph && N > 1) {
    out.adjacency.assign(N * N, 0.0);
    for (std::size_t n = 0; n < N; ++n) {
      out.adjacency[n * N + (n + 1) % N] = 1.0;
      out.adjacency[n * N + (n + N - 1) % N] = 1.0;
    }
  }

  if (with_motifs && T > cfg.motif_length) check_motif_separation(out, cfg, check_rng);
  return out;
}

}  // namespace knnmts
