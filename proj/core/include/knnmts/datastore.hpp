#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "knnmts/checkpoint.hpp"
#include "knnmts/data.hpp"
#include "knnmts/encoder.hpp"

namespace knnmts {

struct EntryMeta {
  std::uint32_t node = 0;
  std::uint32_t end_step = 0;

  bool operator==(const EntryMeta&) const = default;
};

/// Key/value/meta triples from one pass of a trained encoder over the
/// training windows. Keys and values are stored as 32-bit floats; values are
/// in normalized space.
struct Datastore {
  std::size_t dim = 0;          // d
  std::size_t value_width = 0;  // T_f * C
  Fingerprint fingerprint{};    // of the checkpoint that produced the keys
  std::vector<float> keys;      // M x d
  std::vector<float> values;    // M x value_width
  std::vector<EntryMeta> meta;  // M

  std::size_t size() const { return meta.size(); }
  std::span<const float> key(std::size_t i) const { return {keys.data() + i * dim, dim}; }
  std::span<const float> value(std::size_t i) const { return {values.data() + i * value_width, value_width}; }
  /// Throws DimensionError if the arrays disagree on M.
  void validate() const;
};

struct BuildOptions {
  std::size_t batch_size = 16;
  std::size_t threads = 1;
};

/// One entry per (node, window), ordered by (node, end_step). The key is the
/// encoder's configured key tap.
Datastore build_datastore(const HstEncoder& encoder, const WindowSet& train, const Fingerprint& fingerprint,
                          const BuildOptions& options = {});

struct RetrievalResult {
  std::vector<std::uint32_t> ids;
  std::vector<double> distances;  // squared L2, ascending; ties by ascending id
  bool widened = false;           // approximate search had to probe extra lists
};

struct SearchOptions {
  /// Skip entries whose meta equals the query's meta (diagnostics only).
  bool exclude_self = false;
  std::size_t threads = 1;
};

/// Squared L2 between a stored key and a query already rounded to f32;
/// accumulated in f64 in index order.
double squared_distance(std::span<const float> key, std::span<const float> query);

/// Exact top-K by full scan. Throws RequestError unless 1 <= K <= M.
RetrievalResult knn_exact(const Datastore& store, std::span<const double> query, std::size_t k,
                          const EntryMeta* self = nullptr);

/// Exact top-K for `count` queries laid out row-major in `queries`. Results
/// do not depend on the thread count or on how the queries are batched.
std::vector<RetrievalResult> knn_exact_batch(const Datastore& store, std::span<const double> queries, std::size_t k,
                                             std::span<const EntryMeta> query_meta = {},
                                             const SearchOptions& options = {});

/// Inverted-file index: k-means centroids and one posting list per centroid.
struct IvfIndex {
  std::size_t dim = 0;
  std::size_t entries = 0;  // M of the indexed store
  std::vector<float> centroids;                    // n_list x d
  std::vector<std::vector<std::uint32_t>> lists;   // entry ids, ascending
  std::size_t iterations = 0;

  std::size_t n_list() const { return lists.size(); }
};

/// Seeded k-means (at most 25 iterations, or until every centroid moves less
/// than 1e-6). Throws ConfigError unless 1 <= n_list <= M.
IvfIndex build_ivf(const Datastore& store, std::size_t n_list, std::uint64_t seed, std::size_t max_iterations = 25);

/// Scans the `n_probe` lists with the nearest centroids exactly. Widens the
/// probe set (and flags the result) when fewer than K candidates were seen.
RetrievalResult knn_approx(const Datastore& store, const IvfIndex& index, std::span<const double> query,
                           std::size_t k, std::size_t n_probe, const EntryMeta* self = nullptr);

/// `kmtds` layout: "KMTD", u16 version, M u64, d u32, T_f*C u32, fingerprint,
/// keys f32, values f32, meta (u32 node, u32 end_step), CRC32 footer.
std::vector<unsigned char> encode_datastore(const Datastore& store);
Datastore decode_datastore(std::span<const unsigned char> bytes);
/// Refuses to replace an existing file unless `force` is set.
void save_datastore(const Datastore& store, const std::filesystem::path& path, bool force = false);
Datastore load_datastore(const std::filesystem::path& path);

/// `kmtdx` sidecar: "KMTX", u16 version, n_list u32, d u32, M u64, centroids
/// f32, posting lists (u64 length + u32 ids), CRC32 footer.
std::vector<unsigned char> encode_ivf(const IvfIndex& index);
IvfIndex decode_ivf(std::span<const unsigned char> bytes);
void save_ivf(const IvfIndex& index, const std::filesystem::path& path);
IvfIndex load_ivf(const std::filesystem::path& path);

/// Uniform subset of floor(fraction * M) entries without replacement,
/// deterministic per seed, in the original entry order.
Datastore subsample(const Datastore& store, double fraction, std::uint64_t seed);

}  // namespace knnmts
