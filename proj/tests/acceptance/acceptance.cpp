// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include <CLI11.hpp>
#include <fmt/ranges.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "knnmts/checkpoint.hpp"
#include "knnmts/data.hpp"
#include "knnmts/datastore.hpp"
#include "knnmts/encoder.hpp"
#include "knnmts/errors.hpp"
#include "knnmts/forecaster.hpp"
#include "knnmts/graph.hpp"
#include "knnmts/metrics.hpp"
#include "knnmts/ops.hpp"
#include "knnmts/runtime.hpp"
#include "knnmts/synth.hpp"
#include "knnmts/trainer.hpp"
#include "oracles.hpp"

using namespace knnmts;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Options {
  std::set<int> only;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t epochs = 3;
  std::size_t batches = 0;  // per epoch, 0 = full pass
};

// ---------------------------------------------------------------- 1

Outcome knn_oracle() {
  const auto start = Clock::now();
  const std::size_t m = 10'000, d = 32, queries = 1'000;
  Rng rng(11);
  Datastore store;
  store.dim = d;
  store.value_width = 1;
  store.keys.resize(m * d);
  for (std::size_t i = 0; i < m; ++i) {
    // Every fifth key is copied from an earlier one and every seventh sits
    // on a coarse integer grid, so exact distance ties are common.
    for (std::size_t j = 0; j < d; ++j) {
      float v;
      if (i % 7 == 3) v = static_cast<float>(rng.below(3)) - 1.0f;
      else v = static_cast<float>(rng.normal());
      store.keys[i * d + j] = v;
    }
    if (i % 5 == 4) {
      const std::size_t src = rng.below(i);
      std::copy_n(store.keys.begin() + src * d, d, store.keys.begin() + i * d);
    }
  }
  store.values.assign(m, 0.0f);
  store.meta.resize(m);
  for (std::size_t i = 0; i < m; ++i) store.meta[i] = {static_cast<std::uint32_t>(i % 16), static_cast<std::uint32_t>(i)};

  // Queries: Gaussian, exact copies of stored keys, grid points, and points
  // near the origin.
  std::vector<double> q(queries * d);
  for (std::size_t r = 0; r < queries; ++r) {
    const std::size_t src = rng.below(m);
    for (std::size_t j = 0; j < d; ++j) {
      double& v = q[r * d + j];
      switch (r % 4) {
        case 0: v = rng.normal(); break;
        case 1: v = store.keys[src * d + j]; break;
        case 2: v = static_cast<double>(rng.below(3)) - 1.0; break;
        default: v = rng.normal() * 1e-3; break;
      }
    }
  }

  std::size_t mismatches = 0, checked = 0;
  for (std::size_t k : {std::size_t{1}, std::size_t{50}}) {
    const auto batch = knn_exact_batch(store, q, k);
    for (std::size_t r = 0; r < queries; ++r) {
      const std::vector<double> query(q.begin() + r * d, q.begin() + (r + 1) * d);
      const auto expect = oracle::naive_knn(store.keys, d, query, k);
      const auto single = knn_exact(store, query, k);
      for (const auto* got : {&single, &batch[r]}) {
        ++checked;
        bool same = got->ids.size() == expect.size();
        for (std::size_t i = 0; same && i < expect.size(); ++i)
          same = got->ids[i] == expect[i].id && got->distances[i] == expect[i].distance;
        if (!same) ++mismatches;
      }
    }
  }
  const double t = seconds_since(start);
  return {mismatches == 0 && t < 30.0,
          fmt::format("{} of {} result lists differ from the naive scan, {:.1f} s (limit 30 s)", mismatches, checked, t)};
}

// ---------------------------------------------------------------- 2

Outcome ivf_recall() {
  const auto start = Clock::now();
  const std::size_t m = 100'000, d = 32, k = 50, queries = 200;
  Rng rng(12);
  Datastore store;
  store.dim = d;
  store.value_width = 1;
  store.keys.resize(m * d);
  for (float& v : store.keys) v = static_cast<float>(rng.normal());
  store.values.assign(m, 0.0f);
  store.meta.resize(m);
  const IvfIndex index = build_ivf(store, 256, 5);

  std::size_t hits = 0;
  for (std::size_t r = 0; r < queries; ++r) {
    std::vector<double> query(d);
    for (double& v : query) v = rng.normal();
    const auto truth = oracle::naive_knn(store.keys, d, query, k);
    const auto approx = knn_approx(store, index, query, k, 64);
    std::set<std::uint32_t> got(approx.ids.begin(), approx.ids.end());
    for (const auto& n : truth) hits += got.count(n.id);
  }
  const double recall = static_cast<double>(hits) / static_cast<double>(queries * k);
  const double t = seconds_since(start);
  return {recall >= 0.95 && t < 120.0,
          fmt::format("recall@50 {:.4f} over {} queries (need >= 0.95), {} k-means iterations, {:.1f} s (limit 120 s)",
                      recall, queries, index.iterations, t)};
}

// ---------------------------------------------------------------- 3

Outcome gradient_check() {
  const auto start = Clock::now();
  const double h = 1e-5;
  double worst = 0.0;
  std::string worst_name;
  std::size_t groups = 0;
  for (auto mode : {EncoderMode::hybrid, EncoderMode::long_only, EncoderMode::short_only}) {
    EncoderConfig c;
    c.nodes = 4;
    c.input_length = 24;
    c.segment_length = 6;
    c.horizon = 3;
    c.hidden = 8;
    c.heads = 2;
    c.transformer_layers = 2;
    c.ffn_multiplier = 2;
    c.dilations = {1, 2, 1};
    c.adaptive_embedding = 4;
    c.mode = mode;
    c.predefined_graph = mode != EncoderMode::long_only;
    Rng rng(31 + static_cast<int>(mode));
    std::optional<TransitionMatrices> graph;
    if (c.predefined_graph)
      graph = transition_matrices(fixtures::random_tensor({c.nodes, c.nodes}, rng, false, 0.0, 1.0));
    HstEncoder enc(c, graph, rng);
    Batch batch;
    batch.size = 2;
    batch.nodes = c.nodes;
    batch.long_input = fixtures::random_tensor({2, c.nodes, c.input_length, 1}, rng);
    batch.short_input = slice(batch.long_input, 2, c.input_length - c.segment_length, c.segment_length).detach();
    const Tensor target = fixtures::random_tensor({2 * c.nodes, c.output_width()}, rng);
    auto loss = [&] {
      const Tensor diff = sub(enc.forward(batch).forecast, target);
      return mean(mul(diff, diff));
    };

    enc.parameters().zero_grad();
    loss().backward();
    for (auto& [name, param] : enc.parameters()) {
      ++groups;
      const std::vector<double> analytic(param.grad().begin(), param.grad().end());
      const std::size_t n = param.numel();
      for (std::size_t s = 0; s < 20; ++s) {
        const std::size_t i = n <= 20 ? s % n : rng.below(n);
        auto values = param.mutable_data();
        const double x0 = values[i];
        double plus, minus;
        {
          NoGradGuard guard;
          values[i] = x0 + h;
          plus = loss().item();
          values[i] = x0 - h;
          minus = loss().item();
        }
        values[i] = x0;
        const double numeric = (plus - minus) / (2.0 * h);
        const double err = oracle::rel_error(analytic[i], numeric, 1e-6);
        if (err > worst) {
          worst = err;
          worst_name = std::string(to_string(mode)) + ":" + name;
        }
      }
    }
  }
  const double t = seconds_since(start);
  return {worst < 1e-4 && t < 120.0,
          fmt::format("{} parameter groups over 3 modes, max relative error {:.2e} at {} (need < 1e-4), {:.1f} s",
                      groups, worst, worst_name, t)};
}

// ---------------------------------------------------------------- 4

Outcome golden_values() {
  std::vector<std::string> failed;
  const double d[] = {0.0, 1.0};
  const auto w = neighbor_weights(d, 1.0);
  // Independent evaluation: softmax([0, -1]) = [1 / (1 + e^-1), e^-1 / (1 + e^-1)].
  const double w0 = 1.0 / (1.0 + std::exp(-1.0)), w1 = std::exp(-1.0) / (1.0 + std::exp(-1.0));
  if (w.size() != 2 || std::abs(w[0] - w0) > 1e-12 || std::abs(w[1] - w1) > 1e-12) failed.push_back("weights vs oracle");
  if (std::abs(w[0] - 0.731058) > 1e-6 || std::abs(w[1] - 0.268941) > 1e-6) failed.push_back("weights golden");
  if (lambda_coef(0.2, 0.2) != 0.5) failed.push_back("lambda(0.2, 0.2)");
  for (double alpha : {1e-6, 0.2, 1.0, 50.0})
    if (lambda_coef(0.0, alpha) != 1.0) failed.push_back("lambda(0, alpha)");
  if (interpolate(10.0, 20.0, 0.5) != 15.0) failed.push_back("interpolate");
  const ForecastConfig defaults;
  if (defaults.k != 50 || defaults.tau != 1.0 || defaults.alpha != 0.2) failed.push_back("defaults");
  const double lam = lambda_coef(0.2, 0.2);
  return {failed.empty(),
          failed.empty() ? fmt::format("weights [{:.6f}, {:.6f}], lambda {}, interpolate 15, K={} tau={} alpha={}",
                                       w[0], w[1], lam, defaults.k, defaults.tau, defaults.alpha)
                         : fmt::format("failed: {}", fmt::join(failed, ", "))};
}

// ---------------------------------------------------------------- 5

Outcome property_suites() {
  Rng rng(51);
  std::vector<std::string> failed;
  std::size_t cases = 0;

  // softmax weights are a convex combination
  for (int trial = 0; trial < 1000; ++trial, ++cases) {
    std::vector<double> dist(1 + rng.below(100));
    const double spread = std::pow(10.0, rng.uniform(-3.0, 6.0));
    for (double& x : dist) x = rng.uniform(0.0, spread);
    std::sort(dist.begin(), dist.end());
    const auto w = neighbor_weights(dist, std::pow(10.0, rng.uniform(-2.0, 2.0)));
    double total = 0.0;
    bool ok = w.size() == dist.size();
    for (double x : w) {
      ok = ok && x >= 0.0 && std::isfinite(x);
      total += x;
    }
    if (!ok || std::abs(total - 1.0) > 1e-12) {
      failed.push_back("softmax convexity");
      break;
    }
  }

  // lambda strictly decreasing in the mean distance
  for (int trial = 0; trial < 1000; ++trial, ++cases) {
    double a = rng.uniform(0.0, 10.0), b = rng.uniform(0.0, 10.0);
    if (a == b) b = std::nextafter(a, 20.0) + 1e-9;
    if (a > b) std::swap(a, b);
    const double alpha = rng.uniform(0.01, 5.0);
    if (!(lambda_coef(a, alpha) > lambda_coef(b, alpha))) {
      failed.push_back("lambda monotone");
      break;
    }
  }

  // interpolation stays between its endpoints
  for (int trial = 0; trial < 1000; ++trial, ++cases) {
    const double a = rng.normal(0.0, 100.0), b = rng.normal(0.0, 100.0), lam = rng.uniform();
    const double y = interpolate(a, b, lam);
    if (y < std::min(a, b) || y > std::max(a, b)) {
      failed.push_back("interpolation bound");
      break;
    }
  }

  // dilated convolution ignores the future
  for (int trial = 0; trial < 50; ++trial, ++cases) {
    const std::size_t len = 24, feat = 3, out = 2, taps = 2 + rng.below(2), dil = 1 + rng.below(3);
    const Tensor x = fixtures::random_tensor({2, len, feat}, rng);
    const Tensor filt = fixtures::random_tensor({taps * feat, out}, rng);
    const Tensor th1 = fixtures::random_tensor({taps * feat, out}, rng);
    const Tensor th2 = fixtures::random_tensor({taps * feat, out}, rng);
    const Tensor bc = fixtures::random_tensor({out}, rng), bd = fixtures::random_tensor({out}, rng);
    const std::size_t cut = dil * (taps - 1) + rng.below(len - dil * (taps - 1) - 1);
    std::vector<double> moved(x.data().begin(), x.data().end());
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t t = cut + 1; t < len; ++t)
        for (std::size_t f = 0; f < feat; ++f) moved[(b * len + t) * feat + f] += rng.normal(0.0, 10.0);
    const Tensor y = Tensor(x.shape(), moved);
    const Tensor c0 = dilated_causal_conv(x, filt, taps, dil), c1 = dilated_causal_conv(y, filt, taps, dil);
    const Tensor g0 = gated_tcn(x, th1, bc, th2, bd, taps, dil), g1 = gated_tcn(y, th1, bc, th2, bd, taps, dil);
    // output index o describes time o + dil * (taps - 1)
    const std::size_t olen = len - dil * (taps - 1), keep = cut - dil * (taps - 1) + 1;
    bool ok = true, moved_any = false;
    for (const auto& [p, q] : {std::pair{c0, c1}, std::pair{g0, g1}}) {
      const auto pd = p.data();
      const auto qd = q.data();
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t o = 0; o < olen; ++o)
          for (std::size_t f = 0; f < out; ++f) {
            const std::size_t i = (b * olen + o) * out + f;
            if (o < keep) ok = ok && pd[i] == qd[i];
            else moved_any = moved_any || pd[i] != qd[i];
          }
    }
    if (!ok || !moved_any) {
      failed.push_back("dilated causality");
      break;
    }
  }

  // graph convolution is equivariant under node relabelling
  for (int trial = 0; trial < 50; ++trial, ++cases) {
    const std::size_t n = 5, t = 3, f = 2, fo = 3, order = 2;
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    const Tensor adj = fixtures::random_tensor({n, n}, rng, false, 0.0, 1.0);
    const Tensor e1 = fixtures::random_tensor({n, 3}, rng), e2 = fixtures::random_tensor({n, 3}, rng);
    const Tensor z = fixtures::random_tensor({2, n, t, f}, rng);
    auto permute_rows = [&](const Tensor& m, std::size_t axis_len_before, std::size_t row_len) {
      std::vector<double> v(m.numel());
      const auto src = m.data();
      for (std::size_t a = 0; a < axis_len_before; ++a)
        for (std::size_t i = 0; i < n; ++i)
          std::copy_n(src.begin() + (a * n + perm[i]) * row_len, row_len, v.begin() + (a * n + i) * row_len);
      return Tensor(m.shape(), std::move(v));
    };
    std::vector<double> pa(n * n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) pa[i * n + j] = adj.data()[perm[i] * n + perm[j]];
    GraphConvWeights w;
    for (std::size_t k = 0; k <= order; ++k) {
      w.forward.push_back(fixtures::random_tensor({f, fo}, rng));
      w.backward.push_back(fixtures::random_tensor({f, fo}, rng));
      w.adaptive.push_back(fixtures::random_tensor({f, fo}, rng));
    }
    auto run = [&](const Tensor& a, const Tensor& s1, const Tensor& s2, const Tensor& x) {
      const auto tm = transition_matrices(a);
      return graph_conv(x, matrix_power_series(tm.forward, order), matrix_power_series(tm.backward, order),
                        matrix_power_series(adaptive_adjacency(s1, s2), order), w);
    };
    const Tensor base = run(adj, e1, e2, z);
    const Tensor moved = run(Tensor({n, n}, pa), permute_rows(e1, 1, 3), permute_rows(e2, 1, 3), permute_rows(z, 2, t * f));
    const Tensor expect = permute_rows(base, 2, t * fo);
    double err = 0.0;
    for (std::size_t i = 0; i < expect.numel(); ++i) err = std::max(err, std::abs(expect.data()[i] - moved.data()[i]));
    if (err > 1e-10) {
      failed.push_back(fmt::format("graph-conv equivariance ({:.2e})", err));
      break;
    }
  }

  // RMSE never falls below MAE
  for (int trial = 0; trial < 1000; ++trial, ++cases) {
    const std::size_t n = 1 + rng.below(200);
    std::vector<double> pred(n), label(n);
    for (std::size_t i = 0; i < n; ++i) {
      label[i] = rng.uniform() < 0.1 ? 0.0 : rng.normal(5.0, 3.0);
      pred[i] = label[i] + rng.normal(0.0, std::pow(10.0, rng.uniform(-3.0, 2.0)));
    }
    const auto m = masked_metrics(pred, label, 0.0);
    if (m.mae && !(*m.rmse >= *m.mae)) {
      failed.push_back("rmse >= mae");
      break;
    }
  }

  return {failed.empty(), failed.empty() ? fmt::format("{} randomized cases across 6 suites", cases)
                                         : fmt::format("failed: {}", fmt::join(failed, ", "))};
}

// ---------------------------------------------------------------- 6

Outcome serialization() {
  const auto start = Clock::now();
  const auto dir = fixtures::temp_dir("acceptance_serialization");
  std::vector<std::string> failed;
  Rng rng(61);

  SynthConfig sc;
  sc.nodes = 4;
  sc.steps = 600;
  sc.motif_count = 3;
  sc.motif_kinds = 2;
  const auto syn = synth_generate(sc, 61);

  auto c = fixtures::tiny_config(EncoderMode::hybrid, true);
  c.nodes = 4;
  const auto graph = transition_matrices(Tensor({4, 4}, syn.adjacency));
  HstEncoder enc(c, graph, rng);
  const auto split = chronological_split(syn.dataset, {});
  const auto norm = Normalizer::fit(split.train);
  const auto ckpt = make_checkpoint(enc, norm);
  const auto fp = fingerprint_of(ckpt);
  const auto train_z = norm.apply(split.train);
  WindowSet windows(train_z, split.train, c.window());
  const auto store = build_datastore(enc, windows, fp);

  struct Format {
    std::string name;
    std::vector<unsigned char> bytes;
    std::function<std::vector<unsigned char>(std::span<const unsigned char>)> reencode;
    std::function<std::vector<unsigned char>(const std::filesystem::path&)> via_file;
  };
  std::vector<Format> formats;
  formats.push_back({"kmtsbin", encode_kmtsbin(syn.dataset),
                     [](auto b) { return encode_kmtsbin(decode_kmtsbin(b)); },
                     [&](const std::filesystem::path& p) {
                       save_dataset(syn.dataset, p, DatasetFormat::kmtsbin);
                       return encode_kmtsbin(load_dataset(p, DatasetFormat::kmtsbin));
                     }});
  formats.push_back({"kmtw", encode_checkpoint(ckpt),
                     [](auto b) { return encode_checkpoint(decode_checkpoint(b)); },
                     [&](const std::filesystem::path& p) {
                       save_checkpoint(ckpt, p);
                       return encode_checkpoint(load_checkpoint(p));
                     }});
  formats.push_back({"kmtds", encode_datastore(store),
                     [](auto b) { return encode_datastore(decode_datastore(b)); },
                     [&](const std::filesystem::path& p) {
                       save_datastore(store, p, true);
                       return encode_datastore(load_datastore(p));
                     }});

  std::size_t mutations = 0, undetected = 0;
  for (const auto& f : formats) {
    if (f.reencode(f.bytes) != f.bytes) failed.push_back(f.name + " round trip");
    if (f.via_file(dir / ("file." + f.name)) != f.bytes) failed.push_back(f.name + " file round trip");
    for (int trial = 0; trial < 1000; ++trial) {
      auto mutant = f.bytes;
      const std::size_t at = rng.below(mutant.size());
      mutant[at] = static_cast<unsigned char>(mutant[at] ^ (1 + rng.below(255)));
      ++mutations;
      try {
        f.reencode(mutant);
        ++undetected;
      } catch (const Error&) {
      }
    }
  }
  if (undetected) failed.push_back(fmt::format("{} undetected mutations", undetected));
  std::filesystem::remove_all(dir);
  const double t = seconds_since(start);
  if (t >= 60.0) failed.push_back("runtime");
  return {failed.empty(), failed.empty()
                              ? fmt::format("3 formats byte-identical, {} single-byte mutations all rejected, {:.1f} s",
                                            mutations, t)
                              : fmt::format("failed: {} ({:.1f} s)", fmt::join(failed, ", "), t)};
}

// ---------------------------------------------------------------- 7-11

struct ModeRun {
  double encoder_mae = 0.0;
  double knn_mae = 0.0;
  double train_seconds = 0.0;
};

struct SeedRun {
  std::uint64_t seed = 0;
  std::map<EncoderMode, ModeRun> modes;
  double knn_mae_k1 = 0.0;
  std::vector<std::pair<double, double>> fraction_mae;  // (fraction, MAE)
  std::size_t motif_queries = 0;
  double motif_hit_rate = 0.0;
  double motif_chance_rate = 0.0;
  double build_seconds = 0.0;
  double epoch_seconds = 0.0;  // mean over full training epochs
  double seconds = 0.0;
};

EncoderConfig desk_config(EncoderMode mode) {
  EncoderConfig c;
  c.nodes = 16;
  c.input_length = 288;
  c.segment_length = 12;
  c.horizon = 12;
  c.hidden = 32;
  c.transformer_layers = 2;
  c.mode = mode;
  return c;
}

// Bitmask of motif kinds covering each (node, step).
std::vector<std::uint32_t> motif_cover(const SynthResult& syn) {
  const std::size_t steps = syn.dataset.steps;
  std::vector<std::uint32_t> cover(syn.dataset.nodes * steps, 0);
  for (const auto& m : syn.motifs)
    for (std::size_t t = m.start; t < m.start + m.length && t < steps; ++t) cover[m.node * steps + t] |= 1u << m.kind;
  return cover;
}

// Kinds of motif touching a window's last segment or its forecast span.
std::uint32_t footprint(const std::vector<std::uint32_t>& cover, std::size_t steps, const WindowShape& shape,
                        std::size_t node, std::size_t end_step) {
  std::uint32_t mask = 0;
  const std::size_t first = end_step + 1 - shape.segment_length, last = end_step + shape.horizon;
  for (std::size_t t = first; t <= last && t < steps; ++t) mask |= cover[node * steps + t];
  return mask;
}

SeedRun run_seed(std::uint64_t seed, const Options& opt, bool all_modes) {
  const auto start = Clock::now();
  SeedRun out;
  out.seed = seed;
  const auto syn = synth_generate({}, seed);
  const auto split = chronological_split(syn.dataset, {});
  const auto norm = Normalizer::fit(split.train);
  const auto train_z = norm.apply(split.train), val_z = norm.apply(split.val), test_z = norm.apply(split.test);
  const WindowShape shape = desk_config(EncoderMode::hybrid).window();
  const WindowSet train_w(train_z, split.train, shape), val_w(val_z, split.val, shape), test_w(test_z, split.test, shape);

  std::vector<EncoderMode> modes{EncoderMode::hybrid};
  if (all_modes) modes = {EncoderMode::hybrid, EncoderMode::long_only, EncoderMode::short_only};
  for (EncoderMode mode : modes) {
    Rng rng(seed);
    HstEncoder enc(desk_config(mode), std::nullopt, rng);
    TrainConfig tc;
    tc.seed = seed;
    tc.max_epochs = opt.epochs;
    tc.patience = opt.epochs;
    tc.max_batches_per_epoch = opt.batches;
    tc.val_stride = 8;
    auto t0 = Clock::now();
    const auto fr = fit(enc, train_w, val_w, norm, tc);
    ModeRun& run = out.modes[mode];
    run.train_seconds = seconds_since(t0);

    const auto fp = fingerprint_of(make_checkpoint(enc, norm));
    t0 = Clock::now();
    const Datastore store = build_datastore(enc, train_w, fp);
    const double build_seconds = seconds_since(t0);
    const QuerySet q = encode_queries(enc, test_w);
    const ForecastConfig fc;
    const auto hits = retrieve(store, q, fc.k, fc);
    run.encoder_mae = *evaluate(model_only(q, norm)).average.mae;
    run.knn_mae = *evaluate(combine(store, q, hits, norm, fc.k, fc.tau, fc.alpha)).average.mae;
    spdlog::info("seed {} {}: encoder MAE {:.5f}, kNN MAE {:.5f}, train {:.0f} s, build {:.1f} s", seed,
                 to_string(mode), run.encoder_mae, run.knn_mae, run.train_seconds, build_seconds);
    if (mode != EncoderMode::hybrid) continue;

    out.build_seconds = build_seconds;
    double epoch_total = 0.0;
    for (const auto& rec : fr.trace) epoch_total += rec.seconds;
    out.epoch_seconds = fr.trace.empty() ? 0.0 : epoch_total / static_cast<double>(fr.trace.size());
    out.knn_mae_k1 = *evaluate(combine(store, q, hits, norm, 1, fc.tau, fc.alpha)).average.mae;

    for (double fraction : {0.1, 0.25, 0.5, 1.0}) {
      if (fraction == 1.0) {
        out.fraction_mae.emplace_back(fraction, run.knn_mae);
        continue;
      }
      const Datastore sub = subsample(store, fraction, seed);
      const auto sub_hits = retrieve(sub, q, fc.k, fc);
      out.fraction_mae.emplace_back(fraction,
                                    *evaluate(combine(sub, q, sub_hits, norm, fc.k, fc.tau, fc.alpha)).average.mae);
    }

    const auto cover = motif_cover(syn);
    const std::size_t steps = syn.dataset.steps;
    Rng chance(seed * 7919 + 1);
    const std::size_t top = 10, draws = 5;
    std::size_t hit = 0, chance_hit = 0;
    for (std::size_t r = 0; r < q.rows(); ++r) {
      const std::uint32_t want = footprint(cover, steps, shape, q.nodes[r], q.end_steps[r]);
      if (!want) continue;
      ++out.motif_queries;
      bool found = false;
      for (std::size_t i = 0; i < top && !found; ++i) {
        const auto& m = store.meta[hits[r].ids[i]];
        found = (footprint(cover, steps, shape, m.node, m.end_step) & want) != 0;
      }
      hit += found;
      for (std::size_t draw = 0; draw < draws; ++draw) {
        bool lucky = false;
        for (std::size_t i = 0; i < top && !lucky; ++i) {
          const auto& m = store.meta[chance.below(store.size())];
          lucky = (footprint(cover, steps, shape, m.node, m.end_step) & want) != 0;
        }
        chance_hit += lucky;
      }
    }
    out.motif_hit_rate = out.motif_queries ? static_cast<double>(hit) / static_cast<double>(out.motif_queries) : 0.0;
    out.motif_chance_rate =
        out.motif_queries ? static_cast<double>(chance_hit) / static_cast<double>(out.motif_queries * draws) : 0.0;
  }
  out.seconds = seconds_since(start);
  return out;
}

double mean_of(const std::vector<SeedRun>& runs, const std::function<double(const SeedRun&)>& f) {
  double s = 0.0;
  for (const auto& r : runs) s += f(r);
  return s / static_cast<double>(runs.size());
}

Outcome directional(const std::vector<SeedRun>& runs) {
  bool every_seed = true, in_time = true;
  std::vector<std::string> per_seed;
  for (const auto& r : runs) {
    const auto& h = r.modes.at(EncoderMode::hybrid);
    every_seed = every_seed && h.knn_mae <= h.encoder_mae;
    in_time = in_time && r.seconds < 900.0;
    per_seed.push_back(fmt::format("seed {}: {:.5f}->{:.5f} ({:.0f} s)", r.seed, h.encoder_mae, h.knn_mae, r.seconds));
  }
  const double gain = mean_of(runs, [](const SeedRun& r) {
    const auto& h = r.modes.at(EncoderMode::hybrid);
    return (h.encoder_mae - h.knn_mae) / h.encoder_mae;
  });
  auto knn = [&](EncoderMode m) { return mean_of(runs, [m](const SeedRun& r) { return r.modes.at(m).knn_mae; }); };
  const double hy = knn(EncoderMode::hybrid), lo = knn(EncoderMode::long_only), sh = knn(EncoderMode::short_only);
  const bool ordering = hy <= lo && hy <= sh;
  return {every_seed && gain >= 0.02 && ordering && in_time,
          fmt::format("{}; mean improvement {:.2f}% (need >= 2%); mean kNN MAE hybrid {:.5f}, long-only {:.5f}, "
                      "short-only {:.5f}",
                      fmt::join(per_seed, ", "), 100.0 * gain, hy, lo, sh)};
}

Outcome fraction_curve(const std::vector<SeedRun>& runs) {
  std::vector<std::string> parts;
  std::vector<double> means;
  for (std::size_t i = 0; i < runs.front().fraction_mae.size(); ++i) {
    means.push_back(mean_of(runs, [i](const SeedRun& r) { return r.fraction_mae[i].second; }));
    parts.push_back(fmt::format("{}: {:.5f}", runs.front().fraction_mae[i].first, means.back()));
  }
  return {means.back() <= means.front(), fmt::format("mean test MAE by store fraction {}", fmt::join(parts, ", "))};
}

Outcome k_direction(const std::vector<SeedRun>& runs) {
  const double k1 = mean_of(runs, [](const SeedRun& r) { return r.knn_mae_k1; });
  const double k50 = mean_of(runs, [](const SeedRun& r) { return r.modes.at(EncoderMode::hybrid).knn_mae; });
  return {k50 <= k1, fmt::format("mean test MAE K=1 {:.5f}, K=50 {:.5f}", k1, k50)};
}

Outcome motif_hits(const std::vector<SeedRun>& runs) {
  double hits = 0.0, chance = 0.0, queries = 0.0;
  std::vector<std::string> parts;
  for (const auto& r : runs) {
    const double n = static_cast<double>(r.motif_queries);
    hits += r.motif_hit_rate * n;
    chance += r.motif_chance_rate * n;
    queries += n;
    parts.push_back(fmt::format("seed {}: {:.3f} vs {:.3f}", r.seed, r.motif_hit_rate, r.motif_chance_rate));
  }
  const double rate = hits / queries, base = chance / queries, ratio = base > 0.0 ? rate / base : 0.0;
  return {ratio >= 3.0, fmt::format("top-10 hit rate {:.3f} vs random {:.3f} over {:.0f} motif queries, ratio {:.2f} "
                                    "(need >= 3); {}",
                                    rate, base, queries, ratio, fmt::join(parts, ", "))};
}

Outcome build_cost(const std::vector<SeedRun>& runs) {
  bool ok = true;
  std::vector<std::string> parts;
  for (const auto& r : runs) {
    const double ratio = r.build_seconds / r.epoch_seconds;
    ok = ok && ratio <= 2.0;
    parts.push_back(fmt::format("seed {}: build {:.1f} s, epoch {:.1f} s, ratio {:.2f}", r.seed, r.build_seconds,
                                r.epoch_seconds, ratio));
  }
  return {ok, fmt::format("{} (need <= 2)", fmt::join(parts, "; "))};
}

}  // namespace

int main(int argc, char** argv) {
  configure_allocator();
  Options opt;
  std::vector<int> only;
  CLI::App app{"knnmts acceptance run"};
  app.add_option("--only", only, "criteria to run (default: all)")->delimiter(',');
  app.add_option("--seeds", opt.seeds, "seeds for the synthetic benchmark")->delimiter(',');
  app.add_option("--epochs", opt.epochs, "training epochs per model");
  app.add_option("--batches", opt.batches, "batches per epoch (0 = full pass)");
  CLI11_PARSE(app, argc, argv);
  opt.only.insert(only.begin(), only.end());
  auto wanted = [&](int id) { return opt.only.empty() || opt.only.count(id) > 0; };
  spdlog::set_level(spdlog::level::info);

  int failures = 0;
  auto report = [&](int id, const char* name, const Outcome& o) {
    std::printf("%s criterion %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  };
  auto guarded = [&](int id, const char* name, const std::function<Outcome()>& fn) {
    if (!wanted(id)) return;
    try {
      report(id, name, fn());
    } catch (const std::exception& e) {
      report(id, name, {false, std::string("error: ") + e.what()});
    }
  };

  guarded(1, "knn oracle equivalence", knn_oracle);
  guarded(2, "ivf recall", ivf_recall);
  guarded(3, "gradient verification", gradient_check);
  guarded(4, "golden values", golden_values);
  guarded(5, "property suites", property_suites);
  guarded(6, "serialization", serialization);

  if (wanted(7) || wanted(8) || wanted(9) || wanted(10) || wanted(11)) {
    std::vector<SeedRun> runs;
    std::string error;
    try {
      for (auto seed : opt.seeds) runs.push_back(run_seed(seed, opt, wanted(7)));
    } catch (const std::exception& e) {
      error = e.what();
    }
    auto desk = [&](int id, const char* name, Outcome (*fn)(const std::vector<SeedRun>&)) {
      guarded(id, name, [&]() -> Outcome {
        if (!error.empty()) return {false, "error: " + error};
        return fn(runs);
      });
    };
    desk(7, "desk-scale directional claim", directional);
    desk(8, "datastore-size curve", fraction_curve);
    desk(9, "K-sweep direction", k_direction);
    desk(10, "motif retrieval hit-rate", motif_hits);
    desk(11, "build cost vs training epoch", build_cost);
  }
  return failures == 0 ? 0 : 1;
}
