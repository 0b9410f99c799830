#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "knnmts/checkpoint.hpp"
#include "knnmts/data.hpp"
#include "knnmts/datastore.hpp"
#include "knnmts/encoder.hpp"
#include "knnmts/metrics.hpp"

namespace knnmts {

enum class IndexKind { exact, ivf };

const char* to_string(IndexKind kind);
IndexKind parse_index_kind(const std::string& s);

struct ForecastConfig {
  std::size_t k = 50;
  double tau = 1.0;    // softmax temperature over negative distances
  double alpha = 0.2;  // scale of the interpolation coefficient
  IndexKind index = IndexKind::exact;
  std::size_t n_list = 256;
  std::size_t n_probe = 64;
  bool exclude_self = false;
  std::size_t threads = 1;
  std::size_t batch_size = 16;

  void validate() const;
};

/// Softmax of -d_j / tau (max-subtracted).
std::vector<double> neighbor_weights(std::span<const double> distances, double tau);

/// alpha / (mean_distance + alpha), in (0, 1].
double lambda_coef(double mean_distance, double alpha);

/// (1 - lambda) * model + lambda * retrieved.
double interpolate(double model, double retrieved, double lambda);
std::vector<double> interpolate(std::span<const double> model, std::span<const double> retrieved, double lambda);

/// Weighted mean of the stored values of `ids`.
std::vector<double> retrieval_mean(const Datastore& store, std::span<const std::uint32_t> ids,
                                   std::span<const double> weights);

/// Weights, mean distance and interpolation coefficient for the first K
/// neighbors of a retrieval.
struct Neighborhood {
  std::vector<std::uint32_t> ids;
  std::vector<double> distances;
  std::vector<double> weights;
  double mean_distance = 0.0;
  double lambda = 0.0;
};

Neighborhood weigh(const RetrievalResult& retrieval, std::size_t k, double tau, double alpha);

/// Query keys and base forecasts for every `stride`-th window position of a
/// split, rows ordered (end_step, node). Forecasts stay in normalized space.
struct QuerySet {
  std::size_t dim = 0;
  std::size_t width = 0;  // T_f * C
  std::size_t horizon = 0;
  std::size_t channels = 1;
  std::vector<double> keys;
  std::vector<double> model;
  std::vector<double> labels_raw;
  std::vector<std::uint32_t> nodes;
  std::vector<std::uint32_t> end_steps;
  std::vector<std::size_t> positions;  // window position of each row

  std::size_t rows() const { return nodes.size(); }
  std::span<const double> key(std::size_t r) const { return {keys.data() + r * dim, dim}; }
  EntryMeta meta(std::size_t r) const { return {nodes[r], end_steps[r]}; }
};

QuerySet encode_queries(const HstEncoder& encoder, const WindowSet& windows, std::size_t batch_size = 16,
                        std::size_t stride = 1);

/// Throws ContractError when the store was built by a different checkpoint.
void check_fingerprint(const Datastore& store, const Fingerprint& encoder_fingerprint);

/// Top-`k` neighbors of every query, exact or through `index`.
std::vector<RetrievalResult> retrieve(const Datastore& store, const QuerySet& queries, std::size_t k,
                                      const ForecastConfig& config, const IvfIndex* index = nullptr);

/// Base-encoder forecasts in raw space.
ForecastTable model_only(const QuerySet& queries, const Normalizer& normalizer);

/// Interpolated forecasts in raw space using the first `k` neighbors of each
/// cached retrieval (so one retrieval at K_max serves a K sweep).
ForecastTable combine(const Datastore& store, const QuerySet& queries, const std::vector<RetrievalResult>& retrievals,
                      const Normalizer& normalizer, std::size_t k, double tau, double alpha);

/// One-call pipeline: encode, retrieve, interpolate.
class Forecaster {
 public:
  Forecaster(const HstEncoder& encoder, const Datastore& store, const Normalizer& normalizer,
             const Fingerprint& encoder_fingerprint, ForecastConfig config, const IvfIndex* index = nullptr);

  ForecastTable forecast(const WindowSet& windows, std::size_t stride = 1) const;

 private:
  const HstEncoder& encoder_;
  const Datastore& store_;
  const Normalizer& normalizer_;
  ForecastConfig config_;
  const IvfIndex* index_;
};

/// Writes the neighbors of one query row:
///   <path>             rank,entry_id,node,end_step,distance,weight,v1..vW (raw values)
///   <stem>.query.csv   step,channel,history,model,forecast,label for the query window (raw)
///   <stem>.keys.csv    role,id,k1..kd for the query and each neighbor key
void inspect_neighbors(const Datastore& store, const QuerySet& queries, std::size_t row,
                       const RetrievalResult& retrieval, const WindowSet& windows, const Normalizer& normalizer,
                       std::size_t k, double tau, double alpha, const std::filesystem::path& path);

}  // namespace knnmts
