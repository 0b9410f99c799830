#include "knnmts/datastore.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <thread>
#include <utility>

#include "binary_io.hpp"
#include "knnmts/errors.hpp"
#include "knnmts/rng.hpp"

namespace knnmts {

namespace {

constexpr std::string_view kStoreMagic = "KMTD";
constexpr std::string_view kIvfMagic = "KMTX";
constexpr std::uint16_t kStoreVersion = 1;
constexpr std::uint16_t kIvfVersion = 1;
constexpr std::size_t kQueryBlock = 8;

using Candidate = std::pair<double, std::uint32_t>;

// Bounded max-heap keeping the K smallest (distance, id) pairs.
class TopK {
 public:
  explicit TopK(std::size_t k) : k_(k) { heap_.reserve(k); }

  void offer(double distance, std::uint32_t id) {
    const Candidate c{distance, id};
    if (heap_.size() < k_) {
      heap_.push_back(c);
      std::push_heap(heap_.begin(), heap_.end());
    } else if (c < heap_.front()) {
      std::pop_heap(heap_.begin(), heap_.end());
      heap_.back() = c;
      std::push_heap(heap_.begin(), heap_.end());
    }
  }

  RetrievalResult finish() {
    std::sort(heap_.begin(), heap_.end());
    RetrievalResult r;
    r.ids.reserve(heap_.size());
    r.distances.reserve(heap_.size());
    for (const auto& [d, id] : heap_) {
      r.distances.push_back(d);
      r.ids.push_back(id);
    }
    return r;
  }

 private:
  std::size_t k_;
  std::vector<Candidate> heap_;
};

std::vector<float> to_f32(std::span<const double> q) { return {q.begin(), q.end()}; }

void check_query(const Datastore& store, std::size_t query_dim, std::size_t k, bool excluding) {
  if (query_dim != store.dim)
    throw DimensionError("query has " + std::to_string(query_dim) + " components, store keys have " +
                         std::to_string(store.dim));
  const std::size_t available = store.size() - (excluding ? 1 : 0);
  if (k == 0 || k > store.size() || (excluding && k > available))
    throw RequestError("K=" + std::to_string(k) + " is outside [1, " + std::to_string(store.size()) + "]");
}

// Search over queries [first, last) in blocks of kQueryBlock. Every distance
// accumulates the same terms in the same order as squared_distance.
void scan_block(const Datastore& store, const std::vector<float>& qf, std::size_t first, std::size_t last,
                std::size_t k, std::span<const EntryMeta> query_meta, bool exclude_self,
                std::vector<RetrievalResult>& out) {
  const std::size_t d = store.dim;
  const std::size_t m = store.size();
  for (std::size_t q0 = first; q0 < last; q0 += kQueryBlock) {
    const std::size_t nq = std::min(kQueryBlock, last - q0);
    std::vector<double> qt(d * kQueryBlock, 0.0);  // transposed block: qt[j][q]
    for (std::size_t q = 0; q < nq; ++q)
      for (std::size_t j = 0; j < d; ++j) qt[j * kQueryBlock + q] = static_cast<double>(qf[(q0 + q) * d + j]);
    std::vector<TopK> tops(nq, TopK(k));
    for (std::size_t i = 0; i < m; ++i) {
      const float* key = store.keys.data() + i * d;
      std::array<double, kQueryBlock> acc{};
      for (std::size_t j = 0; j < d; ++j) {
        const double kj = static_cast<double>(key[j]);
        const double* col = qt.data() + j * kQueryBlock;
        for (std::size_t q = 0; q < kQueryBlock; ++q) {
          const double diff = kj - col[q];
          acc[q] += diff * diff;
        }
      }
      for (std::size_t q = 0; q < nq; ++q) {
        if (exclude_self && store.meta[i] == query_meta[q0 + q]) continue;
        tops[q].offer(acc[q], static_cast<std::uint32_t>(i));
      }
    }
    for (std::size_t q = 0; q < nq; ++q) out[q0 + q] = tops[q].finish();
  }
}

// Fast distance for k-means only; its summation order differs from the exact kernel.
double kmeans_distance(const float* a, const double* c, std::size_t d) {
  std::array<double, 8> acc{};
  std::size_t j = 0;
  for (; j + 8 <= d; j += 8)
    for (std::size_t l = 0; l < 8; ++l) {
      const double diff = static_cast<double>(a[j + l]) - c[j + l];
      acc[l] += diff * diff;
    }
  double s = 0.0;
  for (; j < d; ++j) {
    const double diff = static_cast<double>(a[j]) - c[j];
    s += diff * diff;
  }
  for (double v : acc) s += v;
  return s;
}

}  // namespace

void Datastore::validate() const {
  const std::size_t m = meta.size();
  if (keys.size() != m * dim || values.size() != m * value_width)
    throw DimensionError("datastore arrays disagree: " + std::to_string(m) + " meta records, " +
                         std::to_string(keys.size()) + " key floats, " + std::to_string(values.size()) +
                         " value floats");
}

Datastore build_datastore(const HstEncoder& encoder, const WindowSet& train, const Fingerprint& fingerprint,
                          const BuildOptions& options) {
  if (train.empty()) throw ConfigError("cannot build a datastore: the split yields no windows");
  if (options.batch_size == 0) throw ConfigError("build batch size must be positive");
  const EncoderConfig& cfg = encoder.config();
  Datastore store;
  store.dim = cfg.hidden;
  store.value_width = cfg.output_width();
  store.fingerprint = fingerprint;
  const std::size_t per_node = train.per_node();
  const std::size_t m = train.size();
  store.keys.resize(m * store.dim);
  store.values.resize(m * store.value_width);
  store.meta.resize(m);

  const std::size_t batches = (per_node + options.batch_size - 1) / options.batch_size;
  // Each batch writes only the slots of its own positions, so workers never overlap.
  auto run = [&](std::size_t first_batch, std::size_t stride) {
    NoGradGuard no_grad;
    for (std::size_t b = first_batch; b < batches; b += stride) {
      const std::size_t start = b * options.batch_size;
      const std::size_t count = std::min(options.batch_size, per_node - start);
      std::vector<std::size_t> positions(count);
      std::iota(positions.begin(), positions.end(), start);
      const Batch batch = train.gather(positions);
      const EncoderOutput out = encoder.forward(batch);
      const auto keys = out.key(cfg.key_tap).data();
      const auto target = batch.target.data();
      for (std::size_t i = 0; i < count; ++i)
        for (std::size_t n = 0; n < batch.nodes; ++n) {
          const std::size_t row = i * batch.nodes + n;
          const std::size_t entry = n * per_node + positions[i];
          for (std::size_t j = 0; j < store.dim; ++j)
            store.keys[entry * store.dim + j] = static_cast<float>(keys[row * store.dim + j]);
          for (std::size_t j = 0; j < store.value_width; ++j)
            store.values[entry * store.value_width + j] = static_cast<float>(target[row * store.value_width + j]);
          store.meta[entry] = {static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(batch.end_steps[i])};
        }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(options.threads, batches));
  if (threads == 1) {
    run(0, 1);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        try {
          run(t, threads);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return store;
}

double squared_distance(std::span<const float> key, std::span<const float> query) {
  double s = 0.0;
  for (std::size_t j = 0; j < key.size(); ++j) {
    const double diff = static_cast<double>(key[j]) - static_cast<double>(query[j]);
    s += diff * diff;
  }
  return s;
}

RetrievalResult knn_exact(const Datastore& store, std::span<const double> query, std::size_t k,
                          const EntryMeta* self) {
  std::vector<EntryMeta> meta;
  SearchOptions options;
  if (self != nullptr) {
    meta.push_back(*self);
    options.exclude_self = true;
  }
  return std::move(knn_exact_batch(store, query, k, meta, options)[0]);
}

std::vector<RetrievalResult> knn_exact_batch(const Datastore& store, std::span<const double> queries, std::size_t k,
                                             std::span<const EntryMeta> query_meta, const SearchOptions& options) {
  if (store.dim == 0 || queries.size() % store.dim != 0)
    throw DimensionError("query buffer of " + std::to_string(queries.size()) + " values is not a multiple of d=" +
                         std::to_string(store.dim));
  const std::size_t count = queries.size() / store.dim;
  if (options.exclude_self && query_meta.size() != count)
    throw ContractError("exclude_self needs one meta record per query");
  check_query(store, store.dim, k, options.exclude_self);
  const std::vector<float> qf = to_f32(queries);
  std::vector<RetrievalResult> out(count);
  const std::size_t blocks = (count + kQueryBlock - 1) / kQueryBlock;
  const std::size_t threads = std::max<std::size_t>(1, std::min(options.threads, blocks));
  if (threads == 1) {
    scan_block(store, qf, 0, count, k, query_meta, options.exclude_self, out);
  } else {
    std::vector<std::thread> pool;
    const std::size_t per = (blocks + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t first = std::min(count, t * per * kQueryBlock);
      const std::size_t last = std::min(count, (t + 1) * per * kQueryBlock);
      if (first < last)
        pool.emplace_back([&, first, last] {
          scan_block(store, qf, first, last, k, query_meta, options.exclude_self, out);
        });
    }
    for (auto& th : pool) th.join();
  }
  return out;
}

IvfIndex build_ivf(const Datastore& store, std::size_t n_list, std::uint64_t seed, std::size_t max_iterations) {
  const std::size_t m = store.size(), d = store.dim;
  if (n_list == 0 || n_list > m)
    throw ConfigError("n_list=" + std::to_string(n_list) + " must be in [1, M=" + std::to_string(m) + "]");
  Rng rng(seed);
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(order));

  std::vector<double> centroids(n_list * d);
  for (std::size_t c = 0; c < n_list; ++c)
    for (std::size_t j = 0; j < d; ++j) centroids[c * d + j] = store.keys[order[c] * d + j];

  std::vector<std::uint32_t> assign(m, 0);
  IvfIndex index;
  index.dim = d;
  index.entries = m;
  for (std::size_t iter = 0; iter < max_iterations; ++iter) {
    for (std::size_t i = 0; i < m; ++i) {
      const float* x = store.keys.data() + i * d;
      double best = std::numeric_limits<double>::infinity();
      std::uint32_t arg = 0;
      for (std::size_t c = 0; c < n_list; ++c) {
        const double dist = kmeans_distance(x, centroids.data() + c * d, d);
        if (dist < best) {
          best = dist;
          arg = static_cast<std::uint32_t>(c);
        }
      }
      assign[i] = arg;
    }
    std::vector<double> sums(n_list * d, 0.0);
    std::vector<std::size_t> counts(n_list, 0);
    for (std::size_t i = 0; i < m; ++i) {
      ++counts[assign[i]];
      for (std::size_t j = 0; j < d; ++j) sums[assign[i] * d + j] += store.keys[i * d + j];
    }
    double max_shift = 0.0;
    for (std::size_t c = 0; c < n_list; ++c) {
      if (counts[c] == 0) continue;  // an empty cluster keeps its centroid
      double shift = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double v = sums[c * d + j] / static_cast<double>(counts[c]);
        shift += (v - centroids[c * d + j]) * (v - centroids[c * d + j]);
        centroids[c * d + j] = v;
      }
      max_shift = std::max(max_shift, std::sqrt(shift));
    }
    index.iterations = iter + 1;
    if (max_shift < 1e-6) break;
  }

  index.centroids.assign(centroids.begin(), centroids.end());
  // Final posting lists use the stored f32 centroids so search and lists agree.
  index.lists.assign(n_list, {});
  std::vector<double> cf(index.centroids.begin(), index.centroids.end());
  for (std::size_t i = 0; i < m; ++i) {
    const float* x = store.keys.data() + i * d;
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t arg = 0;
    for (std::size_t c = 0; c < n_list; ++c) {
      const double dist = kmeans_distance(x, cf.data() + c * d, d);
      if (dist < best) {
        best = dist;
        arg = static_cast<std::uint32_t>(c);
      }
    }
    index.lists[arg].push_back(static_cast<std::uint32_t>(i));
  }
  return index;
}

RetrievalResult knn_approx(const Datastore& store, const IvfIndex& index, std::span<const double> query,
                           std::size_t k, std::size_t n_probe, const EntryMeta* self) {
  check_query(store, query.size(), k, self != nullptr);
  if (index.dim != store.dim || index.entries != store.size())
    throw ContractError("IVF index was built for a different datastore");
  if (n_probe == 0) throw ConfigError("n_probe must be positive");
  const std::vector<float> qf = to_f32(query);
  const std::size_t d = store.dim;

  std::vector<Candidate> ranked(index.n_list());
  for (std::size_t c = 0; c < index.n_list(); ++c)
    ranked[c] = {squared_distance({index.centroids.data() + c * d, d}, qf), static_cast<std::uint32_t>(c)};
  std::sort(ranked.begin(), ranked.end());

  TopK top(k);
  std::size_t scanned = 0, probed = 0;
  bool widened = false;
  for (const auto& [cd, c] : ranked) {
    if (probed >= n_probe) {
      if (scanned >= k) break;
      widened = true;
    }
    const auto& list = index.lists[c];
    if (list.empty()) continue;
    ++probed;
    for (std::uint32_t id : list) {
      if (self != nullptr && store.meta[id] == *self) continue;
      top.offer(squared_distance(store.key(id), qf), id);
      ++scanned;
    }
  }
  RetrievalResult r = top.finish();
  r.widened = widened;
  return r;
}

std::vector<unsigned char> encode_datastore(const Datastore& store) {
  store.validate();
  detail::ByteWriter w;
  w.put_bytes(kStoreMagic);
  w.put<std::uint16_t>(kStoreVersion);
  w.put<std::uint64_t>(store.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(store.dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(store.value_width));
  w.put_array<unsigned char>(store.fingerprint);
  w.put_array<float>(store.keys);
  w.put_array<float>(store.values);
  for (const auto& m : store.meta) {
    w.put<std::uint32_t>(m.node);
    w.put<std::uint32_t>(m.end_step);
  }
  w.put_crc32();
  return std::move(w.bytes());
}

Datastore decode_datastore(std::span<const unsigned char> bytes) {
  detail::ByteReader r(bytes, "kmtds");
  r.expect_magic(kStoreMagic);
  r.verify_crc32();
  const auto version = r.get<std::uint16_t>();
  if (version != kStoreVersion) r.fail("unsupported version " + std::to_string(version));
  Datastore s;
  const auto m = r.get<std::uint64_t>();
  s.dim = r.get<std::uint32_t>();
  s.value_width = r.get<std::uint32_t>();
  r.get_array<unsigned char>(s.fingerprint);
  const std::uint64_t expected = m * (s.dim + s.value_width + 2) * 4;
  if (r.remaining() != expected)
    r.fail("payload holds " + std::to_string(r.remaining()) + " bytes, header implies " + std::to_string(expected));
  s.keys.resize(m * s.dim);
  s.values.resize(m * s.value_width);
  s.meta.resize(m);
  r.get_array<float>(s.keys);
  r.get_array<float>(s.values);
  for (auto& meta : s.meta) {
    meta.node = r.get<std::uint32_t>();
    meta.end_step = r.get<std::uint32_t>();
  }
  r.expect_end();
  return s;
}

void save_datastore(const Datastore& store, const std::filesystem::path& path, bool force) {
  if (!force && std::filesystem::exists(path))
    throw IoError("refusing to overwrite existing datastore " + path.string() + " (use --force)");
  detail::write_file_atomic(path, encode_datastore(store));
}

Datastore load_datastore(const std::filesystem::path& path) { return decode_datastore(detail::read_file(path)); }

std::vector<unsigned char> encode_ivf(const IvfIndex& index) {
  detail::ByteWriter w;
  w.put_bytes(kIvfMagic);
  w.put<std::uint16_t>(kIvfVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(index.n_list()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(index.dim));
  w.put<std::uint64_t>(index.entries);
  w.put_array<float>(index.centroids);
  for (const auto& list : index.lists) {
    w.put<std::uint64_t>(list.size());
    w.put_array<std::uint32_t>(list);
  }
  w.put_crc32();
  return std::move(w.bytes());
}

IvfIndex decode_ivf(std::span<const unsigned char> bytes) {
  detail::ByteReader r(bytes, "kmtdx");
  r.expect_magic(kIvfMagic);
  r.verify_crc32();
  const auto version = r.get<std::uint16_t>();
  if (version != kIvfVersion) r.fail("unsupported version " + std::to_string(version));
  IvfIndex index;
  const auto n_list = r.get<std::uint32_t>();
  index.dim = r.get<std::uint32_t>();
  index.entries = r.get<std::uint64_t>();
  if (static_cast<std::uint64_t>(n_list) * index.dim * 4 > r.remaining()) r.fail("centroid block truncated");
  index.centroids.resize(static_cast<std::size_t>(n_list) * index.dim);
  r.get_array<float>(index.centroids);
  index.lists.resize(n_list);
  std::size_t total = 0;
  for (auto& list : index.lists) {
    const auto len = r.get<std::uint64_t>();
    if (len > r.remaining() / 4) r.fail("posting list runs past the end of the file");
    list.resize(len);
    r.get_array<std::uint32_t>(list);
    for (std::uint32_t id : list)
      if (id >= index.entries) r.fail("posting list entry " + std::to_string(id) + " out of range");
    total += len;
  }
  r.expect_end();
  if (total != index.entries) throw IoError("kmtdx: posting lists cover " + std::to_string(total) + " of " +
                                            std::to_string(index.entries) + " entries");
  return index;
}

void save_ivf(const IvfIndex& index, const std::filesystem::path& path) {
  detail::write_file_atomic(path, encode_ivf(index));
}

IvfIndex load_ivf(const std::filesystem::path& path) { return decode_ivf(detail::read_file(path)); }

Datastore subsample(const Datastore& store, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("subsample fraction must be in (0, 1]");
  const std::size_t m = store.size();
  const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(m) + 1e-9));
  if (count == 0)
    throw RequestError("fraction " + std::to_string(fraction) + " of " + std::to_string(m) +
                       " entries leaves an empty datastore");
  std::vector<std::size_t> ids(m);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(ids));
  ids.resize(count);
  std::sort(ids.begin(), ids.end());

  Datastore out;
  out.dim = store.dim;
  out.value_width = store.value_width;
  out.fingerprint = store.fingerprint;
  out.keys.reserve(count * store.dim);
  out.values.reserve(count * store.value_width);
  out.meta.reserve(count);
  for (std::size_t id : ids) {
    const auto k = store.key(id);
    const auto v = store.value(id);
    out.keys.insert(out.keys.end(), k.begin(), k.end());
    out.values.insert(out.values.end(), v.begin(), v.end());
    out.meta.push_back(store.meta[id]);
  }
  return out;
}

}  // namespace knnmts
