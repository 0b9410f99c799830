#include "knnmts/forecaster.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <numeric>

#include "knnmts/errors.hpp"

namespace knnmts {

const char* to_string(IndexKind kind) { return kind == IndexKind::exact ? "exact" : "ivf"; }

IndexKind parse_index_kind(const std::string& s) {
  if (s == "exact") return IndexKind::exact;
  if (s == "ivf") return IndexKind::ivf;
  throw ConfigError("unknown index '" + s + "' (expected exact or ivf)");
}

void ForecastConfig::validate() const {
  if (k == 0) throw ConfigError("forecast: K must be at least 1");
  if (!(tau > 0.0)) throw ConfigError("forecast: tau must be positive");
  if (!(alpha > 0.0)) throw ConfigError("forecast: alpha must be positive");
  if (n_list == 0 || n_probe == 0) throw ConfigError("forecast: n_list and n_probe must be positive");
  if (batch_size == 0) throw ConfigError("forecast: batch_size must be positive");
}

std::vector<double> neighbor_weights(std::span<const double> distances, double tau) {
  if (!(tau > 0.0)) throw ConfigError("temperature must be positive");
  std::vector<double> w(distances.size());
  if (w.empty()) return w;
  const double d_min = *std::min_element(distances.begin(), distances.end());
  double total = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) {
    w[j] = std::exp(-(distances[j] - d_min) / tau);
    total += w[j];
  }
  for (double& x : w) x /= total;
  return w;
}

double lambda_coef(double mean_distance, double alpha) { return alpha / (mean_distance + alpha); }

double interpolate(double model, double retrieved, double lambda) {
  return (1.0 - lambda) * model + lambda * retrieved;
}

std::vector<double> interpolate(std::span<const double> model, std::span<const double> retrieved, double lambda) {
  if (model.size() != retrieved.size())
    throw DimensionError("interpolate: model has " + std::to_string(model.size()) + " steps, retrieval " +
                         std::to_string(retrieved.size()));
  std::vector<double> out(model.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = interpolate(model[i], retrieved[i], lambda);
  return out;
}

std::vector<double> retrieval_mean(const Datastore& store, std::span<const std::uint32_t> ids,
                                   std::span<const double> weights) {
  if (ids.size() != weights.size()) throw DimensionError("retrieval_mean: ids and weights differ in length");
  std::vector<double> mean(store.value_width, 0.0);
  for (std::size_t j = 0; j < ids.size(); ++j) {
    const auto v = store.value(ids[j]);
    for (std::size_t t = 0; t < mean.size(); ++t) mean[t] += weights[j] * static_cast<double>(v[t]);
  }
  return mean;
}

Neighborhood weigh(const RetrievalResult& retrieval, std::size_t k, double tau, double alpha) {
  if (k == 0 || k > retrieval.ids.size())
    throw RequestError("K=" + std::to_string(k) + " exceeds the " + std::to_string(retrieval.ids.size()) +
                       " retrieved neighbors");
  Neighborhood n;
  n.ids.assign(retrieval.ids.begin(), retrieval.ids.begin() + static_cast<std::ptrdiff_t>(k));
  n.distances.assign(retrieval.distances.begin(), retrieval.distances.begin() + static_cast<std::ptrdiff_t>(k));
  n.weights = neighbor_weights(n.distances, tau);
  n.mean_distance = std::accumulate(n.distances.begin(), n.distances.end(), 0.0) / static_cast<double>(k);
  n.lambda = lambda_coef(n.mean_distance, alpha);
  return n;
}

QuerySet encode_queries(const HstEncoder& encoder, const WindowSet& windows, std::size_t batch_size,
                        std::size_t stride) {
  if (batch_size == 0 || stride == 0) throw ConfigError("query batch size and stride must be positive");
  const EncoderConfig& cfg = encoder.config();
  NoGradGuard no_grad;
  QuerySet q;
  q.dim = cfg.hidden;
  q.width = cfg.output_width();
  q.horizon = cfg.horizon;
  q.channels = cfg.channels;
  std::vector<std::size_t> positions;
  for (std::size_t p = 0; p < windows.per_node(); p += stride) positions.push_back(p);
  for (std::size_t start = 0; start < positions.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, positions.size() - start);
    const Batch batch = windows.gather(std::span<const std::size_t>(positions).subspan(start, count));
    const EncoderOutput out = encoder.forward(batch);
    const auto key = out.key(cfg.key_tap).data();
    const auto model = out.forecast.data();
    q.keys.insert(q.keys.end(), key.begin(), key.end());
    q.model.insert(q.model.end(), model.begin(), model.end());
    q.labels_raw.insert(q.labels_raw.end(), batch.target_raw.begin(), batch.target_raw.end());
    for (std::size_t b = 0; b < count; ++b)
      for (std::size_t n = 0; n < batch.nodes; ++n) {
        q.nodes.push_back(static_cast<std::uint32_t>(n));
        q.end_steps.push_back(static_cast<std::uint32_t>(batch.end_steps[b]));
        q.positions.push_back(positions[start + b]);
      }
  }
  return q;
}

void check_fingerprint(const Datastore& store, const Fingerprint& encoder_fingerprint) {
  if (store.fingerprint != encoder_fingerprint)
    throw ContractError("stale datastore: built by checkpoint " + to_hex(store.fingerprint) +
                        " but the encoder is " + to_hex(encoder_fingerprint));
}

std::vector<RetrievalResult> retrieve(const Datastore& store, const QuerySet& queries, std::size_t k,
                                      const ForecastConfig& config, const IvfIndex* index) {
  if (queries.dim != store.dim)
    throw DimensionError("queries have d=" + std::to_string(queries.dim) + ", store has d=" + std::to_string(store.dim));
  std::vector<EntryMeta> meta;
  if (config.exclude_self)
    for (std::size_t r = 0; r < queries.rows(); ++r) meta.push_back(queries.meta(r));
  if (config.index == IndexKind::exact) {
    SearchOptions options;
    options.exclude_self = config.exclude_self;
    options.threads = config.threads;
    return knn_exact_batch(store, queries.keys, k, meta, options);
  }
  if (index == nullptr) throw ContractError("IVF search requested without an index");
  std::vector<RetrievalResult> out;
  out.reserve(queries.rows());
  for (std::size_t r = 0; r < queries.rows(); ++r)
    out.push_back(knn_approx(store, *index, queries.key(r), k, config.n_probe,
                             config.exclude_self ? &meta[r] : nullptr));
  return out;
}

namespace {

ForecastTable empty_table(const QuerySet& q) {
  ForecastTable t;
  t.space = Space::raw;
  t.horizon = q.horizon;
  t.channels = q.channels;
  t.labels = q.labels_raw;
  t.nodes = q.nodes;
  t.end_steps = q.end_steps;
  t.predictions.reserve(q.model.size());
  return t;
}

}  // namespace

ForecastTable model_only(const QuerySet& queries, const Normalizer& normalizer) {
  ForecastTable t = empty_table(queries);
  for (std::size_t i = 0; i < queries.model.size(); ++i)
    t.predictions.push_back(normalizer.inverse(queries.model[i], i % queries.channels));
  return t;
}

ForecastTable combine(const Datastore& store, const QuerySet& queries, const std::vector<RetrievalResult>& retrievals,
                      const Normalizer& normalizer, std::size_t k, double tau, double alpha) {
  if (retrievals.size() != queries.rows()) throw DimensionError("one retrieval per query row is required");
  if (store.value_width != queries.width)
    throw DimensionError("store values have width " + std::to_string(store.value_width) + ", forecasts " +
                         std::to_string(queries.width));
  ForecastTable t = empty_table(queries);
  const std::size_t w = queries.width;
  for (std::size_t r = 0; r < queries.rows(); ++r) {
    const Neighborhood n = weigh(retrievals[r], k, tau, alpha);
    const std::vector<double> mean = retrieval_mean(store, n.ids, n.weights);
    for (std::size_t i = 0; i < w; ++i) {
      const double z = interpolate(queries.model[r * w + i], mean[i], n.lambda);
      t.predictions.push_back(normalizer.inverse(z, i % queries.channels));
    }
  }
  return t;
}

Forecaster::Forecaster(const HstEncoder& encoder, const Datastore& store, const Normalizer& normalizer,
                       const Fingerprint& encoder_fingerprint, ForecastConfig config, const IvfIndex* index)
    : encoder_(encoder), store_(store), normalizer_(normalizer), config_(config), index_(index) {
  config_.validate();
  check_fingerprint(store, encoder_fingerprint);
  if (store.dim != encoder.config().hidden) throw DimensionError("store key width does not match the encoder");
}

ForecastTable Forecaster::forecast(const WindowSet& windows, std::size_t stride) const {
  const QuerySet q = encode_queries(encoder_, windows, config_.batch_size, stride);
  const auto hits = retrieve(store_, q, config_.k, config_, index_);
  return combine(store_, q, hits, normalizer_, config_.k, config_.tau, config_.alpha);
}

void inspect_neighbors(const Datastore& store, const QuerySet& queries, std::size_t row,
                       const RetrievalResult& retrieval, const WindowSet& windows, const Normalizer& normalizer,
                       std::size_t k, double tau, double alpha, const std::filesystem::path& path) {
  if (row >= queries.rows()) throw RequestError("query row " + std::to_string(row) + " out of range");
  const Neighborhood n = weigh(retrieval, k, tau, alpha);
  const std::size_t w = store.value_width;
  const std::size_t channels = queries.channels;

  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "rank,entry_id,node,end_step,distance,weight";
  for (std::size_t i = 1; i <= w; ++i) out << ",v" << i;
  out << '\n';
  for (std::size_t j = 0; j < n.ids.size(); ++j) {
    const auto& m = store.meta[n.ids[j]];
    out << fmt::format("{},{},{},{},{},{}", j + 1, n.ids[j], m.node, m.end_step, n.distances[j], n.weights[j]);
    const auto v = store.value(n.ids[j]);
    for (std::size_t i = 0; i < w; ++i) out << ',' << fmt::format("{}", normalizer.inverse(v[i], i % channels));
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());

  const auto stem = path.parent_path() / path.stem();
  std::ofstream qf(stem.string() + ".query.csv");
  if (!qf) throw IoError("cannot write " + stem.string() + ".query.csv");
  const SeriesSplit& raw = windows.raw_split();
  const std::size_t len = windows.shape().input_length;
  const std::size_t node = queries.nodes[row];
  const std::size_t local_end = queries.end_steps[row] - raw.first_step;
  const std::vector<double> mean = retrieval_mean(store, n.ids, n.weights);
  qf << "step,channel,history,model,forecast,label\n";
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t c = 0; c < channels; ++c)
      qf << fmt::format("{},{},{},,,\n", static_cast<long long>(t) - static_cast<long long>(len) + 1, c,
                        raw.at(local_end + 1 - len + t, node, c));
  for (std::size_t s = 0; s < queries.horizon; ++s)
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t i = s * channels + c;
      const double model = queries.model[row * w + i];
      qf << fmt::format("{},{},,{},{},{}\n", s + 1, c, normalizer.inverse(model, c),
                        normalizer.inverse(interpolate(model, mean[i], n.lambda), c),
                        queries.labels_raw[row * w + i]);
    }

  std::ofstream kf(stem.string() + ".keys.csv");
  if (!kf) throw IoError("cannot write " + stem.string() + ".keys.csv");
  kf << "role,id";
  for (std::size_t j = 1; j <= store.dim; ++j) kf << ",k" << j;
  kf << '\n';
  kf << "query," << row;
  for (double x : queries.key(row)) kf << ',' << fmt::format("{}", static_cast<float>(x));
  kf << '\n';
  for (std::uint32_t id : n.ids) {
    kf << "neighbor," << id;
    for (float x : store.key(id)) kf << ',' << fmt::format("{}", x);
    kf << '\n';
  }
}

}  // namespace knnmts
