#include "knnmts/data.hpp"

#include <spdlog/spdlog.h>

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "knnmts/errors.hpp"

namespace knnmts {

namespace {

constexpr std::string_view kDatasetMagic = "KMTS";
constexpr std::uint16_t kDatasetVersion = 1;

std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    std::string_view cell = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) cell.remove_suffix(1);
    cells.push_back(cell);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

std::optional<double> parse_double(std::string_view cell) {
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size()) return std::nullopt;
  return v;
}

MtsDataset load_csv(const std::filesystem::path& path, std::size_t channels) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  if (channels == 0) throw ConfigError("channel count must be positive");
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": empty file, expected a header row");
  const auto header = split_csv_line(line);
  if (header.size() % channels != 0) {
    throw IoError(path.string() + ": header has " + std::to_string(header.size()) +
                  " columns, not a multiple of " + std::to_string(channels) + " channels");
  }
  MtsDataset ds;
  ds.name = path.stem().string();
  ds.channels = channels;
  ds.nodes = header.size() / channels;
  for (std::size_t n = 0; n < ds.nodes; ++n) {
    std::string id(header[n * channels]);
    // multi-channel headers are written as "<node>:<channel>"
    if (channels > 1) id = id.substr(0, id.rfind(':'));
    ds.node_ids.push_back(std::move(id));
  }
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw IoError(path.string() + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                    " cells, header has " + std::to_string(header.size()));
    }
    for (std::size_t j = 0; j < cells.size(); ++j) {
      const auto v = parse_double(cells[j]);
      if (!v) {
        throw IoError(path.string() + ": row " + std::to_string(row) + " column " + std::to_string(j) +
                      ": not a number: \"" + std::string(cells[j]) + "\"");
      }
      if (!std::isfinite(*v)) {
        throw IoError(path.string() + ": row " + std::to_string(row) + " column " + std::to_string(j) +
                      ": missing or non-finite value");
      }
      ds.values.push_back(*v);
    }
    ++ds.steps;
  }
  if (ds.steps == 0) throw IoError(path.string() + ": no data rows");
  return ds;
}

void save_csv(const MtsDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (std::size_t n = 0; n < ds.nodes; ++n) {
    for (std::size_t c = 0; c < ds.channels; ++c) {
      if (n || c) out << ',';
      out << ds.node_ids[n];
      if (ds.channels > 1) out << ':' << c;
    }
  }
  out << '\n';
  char buf[64];
  for (std::size_t t = 0; t < ds.steps; ++t) {
    for (std::size_t j = 0; j < ds.nodes * ds.channels; ++j) {
      if (j) out << ',';
      // Shortest representation that reads back to the same double.
      const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), ds.values[t * ds.nodes * ds.channels + j]);
      out.write(buf, ptr - buf);
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

SeriesSplit cut(const MtsDataset& ds, const char* name, std::size_t first, std::size_t steps) {
  SeriesSplit s;
  s.name = name;
  s.first_step = first;
  s.steps = steps;
  s.nodes = ds.nodes;
  s.channels = ds.channels;
  const std::size_t row = ds.nodes * ds.channels;
  s.values.assign(ds.values.begin() + static_cast<std::ptrdiff_t>(first * row),
                  ds.values.begin() + static_cast<std::ptrdiff_t>((first + steps) * row));
  return s;
}

}  // namespace

const char* space_name(Space space) { return space == Space::raw ? "raw" : "normalized"; }

void MtsDataset::validate() const {
  if (steps == 0 || nodes == 0 || channels == 0) {
    throw ConfigError("dataset dimensions must be positive, got T=" + std::to_string(steps) +
                      " N=" + std::to_string(nodes) + " C=" + std::to_string(channels));
  }
  if (values.size() != steps * nodes * channels) {
    throw ConfigError("dataset holds " + std::to_string(values.size()) + " values, expected " +
                      std::to_string(steps * nodes * channels));
  }
  if (node_ids.size() != nodes) throw ConfigError("dataset node id count differs from N");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw ConfigError("non-finite value at timestep " + std::to_string(i / (nodes * channels)));
    }
  }
}

DatasetFormat format_from_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".csv") return DatasetFormat::csv;
  if (ext == ".kmtsbin") return DatasetFormat::kmtsbin;
  throw ConfigError("cannot infer dataset format from extension of " + path.string() +
                    " (expected .csv or .kmtsbin)");
}

std::vector<unsigned char> encode_kmtsbin(const MtsDataset& ds) {
  detail::ByteWriter w;
  w.put_bytes(kDatasetMagic);
  w.put<std::uint16_t>(kDatasetVersion);
  w.put<std::uint64_t>(ds.steps);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.nodes));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.channels));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.sample_rate_minutes));
  std::vector<float> narrow(ds.values.begin(), ds.values.end());
  w.put_array<float>(narrow);
  w.put_crc32();
  return std::move(w.bytes());
}

MtsDataset decode_kmtsbin(std::span<const unsigned char> bytes) {
  detail::ByteReader r(bytes, "kmtsbin");
  r.expect_magic(kDatasetMagic);
  r.verify_crc32();
  const auto version = r.get<std::uint16_t>();
  if (version != kDatasetVersion) r.fail("unsupported version " + std::to_string(version));
  MtsDataset ds;
  ds.steps = r.get<std::uint64_t>();
  ds.nodes = r.get<std::uint32_t>();
  ds.channels = r.get<std::uint32_t>();
  ds.sample_rate_minutes = r.get<std::uint32_t>();
  const std::size_t count = ds.steps * ds.nodes * ds.channels;
  if (count == 0) r.fail("empty dimensions");
  if (r.remaining() != count * sizeof(float)) {
    r.fail("payload holds " + std::to_string(r.remaining()) + " bytes, header implies " +
           std::to_string(count * sizeof(float)));
  }
  std::vector<float> narrow(count);
  r.get_array<float>(narrow);
  ds.values.assign(narrow.begin(), narrow.end());
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::isfinite(ds.values[i])) {
      throw IoError("kmtsbin: non-finite value at timestep " + std::to_string(i / (ds.nodes * ds.channels)));
    }
  }
  for (std::size_t n = 0; n < ds.nodes; ++n) ds.node_ids.push_back(std::to_string(n));
  return ds;
}

MtsDataset load_dataset(const std::filesystem::path& path, DatasetFormat format, std::size_t channels) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  MtsDataset ds;
  if (format == DatasetFormat::csv) {
    ds = load_csv(path, channels);
  } else {
    ds = decode_kmtsbin(detail::read_file(path));
    ds.name = path.stem().string();
  }
  ds.validate();
  return ds;
}

void save_dataset(const MtsDataset& dataset, const std::filesystem::path& path, DatasetFormat format) {
  dataset.validate();
  if (format == DatasetFormat::csv) {
    save_csv(dataset, path);
  } else {
    detail::write_file_atomic(path, encode_kmtsbin(dataset));
  }
}

DatasetSplits chronological_split(const MtsDataset& dataset, const SplitSpec& spec) {
  const double total = spec.train + spec.val + spec.test;
  if (spec.train <= 0 || spec.val <= 0 || spec.test <= 0 || std::fabs(total - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be positive and sum to 1");
  }
  const auto t = static_cast<double>(dataset.steps);
  // The small bias keeps exact products such as 0.7 * 10 from flooring down.
  const auto val = static_cast<std::size_t>(std::floor(spec.val * t + 1e-9));
  const auto test = static_cast<std::size_t>(std::floor(spec.test * t + 1e-9));
  const std::size_t train = dataset.steps - val - test;
  DatasetSplits out;
  out.train = cut(dataset, "train", 0, train);
  out.val = cut(dataset, "val", train, val);
  out.test = cut(dataset, "test", train + val, test);
  return out;
}

Normalizer::Normalizer(std::vector<double> mean, std::vector<double> stddev)
    : mean_(std::move(mean)), std_(std::move(stddev)) {
  if (mean_.size() != std_.size()) throw DimensionError("normalizer mean/std length mismatch");
  for (double s : std_) {
    if (!(s > 0.0)) throw ConfigError("normalizer standard deviation must be positive");
  }
}

Normalizer Normalizer::fit(const SeriesSplit& train) {
  if (train.space != Space::raw) throw ContractError("Normalizer::fit expects a raw-space split");
  const std::size_t c = train.channels;
  const std::size_t rows = train.steps * train.nodes;
  if (rows == 0) throw ConfigError("cannot fit a normalizer on an empty split");
  std::vector<double> mean(c, 0.0);
  std::vector<double> var(c, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t k = 0; k < c; ++k) mean[k] += train.values[i * c + k];
  }
  for (double& m : mean) m /= static_cast<double>(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      const double d = train.values[i * c + k] - mean[k];
      var[k] += d * d;
    }
  }
  std::vector<double> stddev(c);
  for (std::size_t k = 0; k < c; ++k) {
    stddev[k] = std::sqrt(var[k] / static_cast<double>(rows));
    if (!(stddev[k] > 0.0)) {
      throw ConfigError("degenerate training data: channel " + std::to_string(k) + " has zero variance");
    }
  }
  return Normalizer(std::move(mean), std::move(stddev));
}

SeriesSplit Normalizer::apply(const SeriesSplit& raw) const {
  if (raw.space != Space::raw) throw ContractError("Normalizer::apply expects a raw-space split");
  if (raw.channels != channels()) throw DimensionError("normalizer channel count differs from split");
  SeriesSplit out = raw;
  out.space = Space::normalized;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = apply(raw.values[i], i % out.channels);
  return out;
}

SeriesSplit Normalizer::inverse(const SeriesSplit& normalized) const {
  if (normalized.space != Space::normalized) throw ContractError("Normalizer::inverse expects a normalized split");
  if (normalized.channels != channels()) throw DimensionError("normalizer channel count differs from split");
  SeriesSplit out = normalized;
  out.space = Space::raw;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = inverse(normalized.values[i], i % out.channels);
  }
  return out;
}

WindowSet::WindowSet(const SeriesSplit& model_space, const SeriesSplit& raw_space, WindowShape shape)
    : model_(&model_space), raw_(&raw_space), shape_(shape) {
  if (shape.segment_length == 0 || shape.input_length < shape.segment_length || shape.horizon == 0) {
    throw ConfigError("window shape requires L >= L_s >= 1 and T_f >= 1");
  }
  if (raw_space.space != Space::raw) throw ContractError("WindowSet raw_space split is not in raw space");
  if (model_space.steps != raw_space.steps || model_space.nodes != raw_space.nodes ||
      model_space.channels != raw_space.channels || model_space.first_step != raw_space.first_step) {
    throw DimensionError("model-space and raw-space splits differ in extent");
  }
  const std::size_t need = shape.input_length + shape.horizon;
  if (model_space.steps >= need) {
    per_node_ = model_space.steps - need + 1;
  } else {
    warning_ = "split '" + model_space.name + "' has " + std::to_string(model_space.steps) +
               " steps, fewer than L + T_f = " + std::to_string(need) + "; no windows";
    spdlog::warn("{}", warning_);
  }
}

std::size_t WindowSet::end_step(std::size_t position) const {
  return model_->first_step + position + shape_.input_length - 1;
}

Sample WindowSet::at(std::size_t index) const {
  if (index >= size()) throw RequestError("window index " + std::to_string(index) + " out of range");
  const std::size_t node = node_of(index);
  const std::size_t pos = position_of(index);
  const std::size_t L = shape_.input_length;
  const std::size_t Ls = shape_.segment_length;
  const std::size_t Tf = shape_.horizon;
  const std::size_t C = channels();
  std::vector<double> hist(L * C);
  std::vector<double> tgt(Tf * C);
  std::vector<double> tgt_raw(Tf * C);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t c = 0; c < C; ++c) hist[t * C + c] = model_->at(pos + t, node, c);
  }
  for (std::size_t t = 0; t < Tf; ++t) {
    for (std::size_t c = 0; c < C; ++c) {
      tgt[t * C + c] = model_->at(pos + L + t, node, c);
      tgt_raw[t * C + c] = raw_->at(pos + L + t, node, c);
    }
  }
  Sample s;
  s.short_input = Tensor({Ls, C}, std::vector<double>(hist.end() - static_cast<std::ptrdiff_t>(Ls * C), hist.end()));
  s.long_input = Tensor({L, C}, std::move(hist));
  s.target = Tensor({Tf, C}, std::move(tgt));
  s.target_raw = std::move(tgt_raw);
  s.node = node;
  s.end_step = end_step(pos);
  return s;
}

Batch WindowSet::gather(std::span<const std::size_t> positions) const {
  const std::size_t B = positions.size();
  const std::size_t N = nodes();
  const std::size_t L = shape_.input_length;
  const std::size_t Ls = shape_.segment_length;
  const std::size_t Tf = shape_.horizon;
  const std::size_t C = channels();
  std::vector<double> lng(B * N * L * C);
  std::vector<double> shrt(B * N * Ls * C);
  std::vector<double> tgt(B * N * Tf * C);
  std::vector<double> tgt_raw(B * N * Tf * C);
  Batch batch;
  batch.size = B;
  batch.nodes = N;
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t pos = positions[b];
    if (pos >= per_node_) throw RequestError("window position " + std::to_string(pos) + " out of range");
    batch.end_steps.push_back(end_step(pos));
    for (std::size_t n = 0; n < N; ++n) {
      double* dst = lng.data() + (b * N + n) * L * C;
      for (std::size_t t = 0; t < L; ++t) {
        for (std::size_t c = 0; c < C; ++c) dst[t * C + c] = model_->at(pos + t, n, c);
      }
      std::copy(dst + (L - Ls) * C, dst + L * C, shrt.data() + (b * N + n) * Ls * C);
      for (std::size_t t = 0; t < Tf; ++t) {
        for (std::size_t c = 0; c < C; ++c) {
          tgt[((b * N + n) * Tf + t) * C + c] = model_->at(pos + L + t, n, c);
          tgt_raw[((b * N + n) * Tf + t) * C + c] = raw_->at(pos + L + t, n, c);
        }
      }
    }
  }
  batch.long_input = Tensor({B, N, L, C}, std::move(lng));
  batch.short_input = Tensor({B, N, Ls, C}, std::move(shrt));
  batch.target = Tensor({B * N, Tf * C}, std::move(tgt));
  batch.target_raw = std::move(tgt_raw);
  return batch;
}

}  // namespace knnmts
