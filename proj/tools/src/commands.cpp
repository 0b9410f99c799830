#include "commands.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <fmt/format.h>
#include <fstream>
#include <memory>
#include <sstream>

#include "knnmts/checkpoint.hpp"
#include "knnmts/datastore.hpp"
#include "knnmts/errors.hpp"
#include "knnmts/forecaster.hpp"
#include "knnmts/graph.hpp"
#include "knnmts/trainer.hpp"

namespace knnmts::cli {

namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<unsigned char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
  }
  fs::rename(tmp, path);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

// Dataset, splits, normalizer and window sets for one run. Window sets keep
// pointers into the splits, so the object stays where it was built.
class Workspace {
 public:
  Workspace(RunConfig& config, const Normalizer* normalizer) {
    if (config.data.path.empty()) throw ConfigError("data.path is not set");
    const fs::path path(config.data.path);
    dataset_ = load_dataset(path, format_from_path(path), config.data.channels);
    config.model.nodes = dataset_.nodes;
    config.model.channels = dataset_.channels;
    config.model.predefined_graph = !config.data.adjacency.empty();
    if (config.model.predefined_graph)
      graph_ = transition_matrices(load_adjacency(config.data.adjacency, dataset_.node_ids));
    config.model.validate();
    raw_ = chronological_split(dataset_, config.data.split);
    normalizer_ = normalizer != nullptr ? *normalizer : Normalizer::fit(raw_.train);
    train_z_ = normalizer_.apply(raw_.train);
    val_z_ = normalizer_.apply(raw_.val);
    test_z_ = normalizer_.apply(raw_.test);
    const WindowShape shape = config.model.window();
    train_ = std::make_unique<WindowSet>(train_z_, raw_.train, shape);
    val_ = std::make_unique<WindowSet>(val_z_, raw_.val, shape);
    test_ = std::make_unique<WindowSet>(test_z_, raw_.test, shape);
  }
  Workspace(const Workspace&) = delete;
  Workspace& operator=(const Workspace&) = delete;

  const MtsDataset& dataset() const { return dataset_; }
  const Normalizer& normalizer() const { return normalizer_; }
  const std::optional<TransitionMatrices>& graph() const { return graph_; }
  const WindowSet& train() const { return *train_; }
  const WindowSet& val() const { return *val_; }
  const WindowSet& test() const { return *test_; }

  const WindowSet& split(const std::string& name) const {
    if (name == "train") return train();
    if (name == "val") return val();
    if (name == "test") return test();
    throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
  }

 private:
  MtsDataset dataset_;
  DatasetSplits raw_;
  Normalizer normalizer_;
  SeriesSplit train_z_, val_z_, test_z_;
  std::optional<TransitionMatrices> graph_;
  std::unique_ptr<WindowSet> train_, val_, test_;
};

// Checkpoint of a run plus its data; the encoder shape comes from the
// checkpoint, the data location from the config.
struct TrainedRun {
  Checkpoint checkpoint;
  Fingerprint fingerprint{};
  std::unique_ptr<Workspace> workspace;
  std::unique_ptr<HstEncoder> encoder;
};

TrainedRun open_run(RunConfig& config) {
  TrainedRun run;
  const fs::path ck_path = config.run_dir() / "checkpoint.kmtw";
  const auto bytes = read_bytes(ck_path);
  run.checkpoint = decode_checkpoint(bytes);
  run.fingerprint = fingerprint_of(bytes);
  config.model = run.checkpoint.config;
  run.workspace = std::make_unique<Workspace>(config, &run.checkpoint.normalizer);
  if (config.model.nodes != run.checkpoint.config.nodes)
    throw ContractError("dataset has " + std::to_string(config.model.nodes) + " nodes, checkpoint expects " +
                        std::to_string(run.checkpoint.config.nodes));
  run.encoder = std::make_unique<HstEncoder>(run.checkpoint.make_encoder());
  return run;
}

double mean_epoch_seconds(const fs::path& trace) {
  std::ifstream in(trace);
  if (!in) return 0.0;
  std::string line;
  std::getline(in, line);
  double total = 0.0;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) continue;
    total += std::stod(line.substr(comma + 1));
    ++n;
  }
  return n > 0 ? total / static_cast<double>(n) : 0.0;
}

std::string metric_or_blank(const std::optional<double>& v) { return v ? fmt::format("{:.6f}", *v) : ""; }

void append_report_rows(std::ostream& out, const std::string& variant, std::size_t k, double alpha, double tau,
                        const EvalReport& report) {
  for (const auto& h : report.horizons) {
    out << fmt::format("{},{},{},{},{},{},{},{}\n", variant, k, alpha, tau, h.horizon, metric_or_blank(h.metrics.mae),
                       metric_or_blank(h.metrics.rmse), metric_or_blank(h.metrics.mape));
  }
  out << fmt::format("{},{},{},{},avg,{},{},{}\n", variant, k, alpha, tau, metric_or_blank(report.average.mae),
                     metric_or_blank(report.average.rmse), metric_or_blank(report.average.mape));
}

}  // namespace

std::string file_sha256(const fs::path& path) { return to_hex(fingerprint_of(read_bytes(path))); }

void cmd_synth(const SynthOptions& options) {
  if (options.out.empty()) throw ConfigError("synth needs --out");
  const SynthResult result = synth_generate(options.config, options.seed);
  save_dataset(result.dataset, options.out, format_from_path(options.out));
  if (!options.adjacency_out.empty()) {
    if (result.adjacency.empty()) throw ConfigError("no adjacency was generated (ring graph disabled)");
    std::ostringstream a;
    const std::size_t n = result.dataset.nodes;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) a << result.adjacency[i * n + j] << (j + 1 == n ? '\n' : ',');
    write_text(options.adjacency_out, a.str());
  }
  if (!options.motifs_out.empty()) {
    std::ostringstream m;
    m << "kind,node,start,length\n";
    for (const auto& inst : result.motifs) m << fmt::format("{},{},{},{}\n", inst.kind, inst.node, inst.start, inst.length);
    write_text(options.motifs_out, m.str());
  }
  fmt::print("wrote {} ({} steps x {} nodes, {} motif instances)\nsha256 {}\n", options.out.string(),
             result.dataset.steps, result.dataset.nodes, result.motifs.size(), file_sha256(options.out));
}

void cmd_convert(const fs::path& in, const fs::path& out, std::size_t channels) {
  const MtsDataset ds = load_dataset(in, format_from_path(in), channels);
  save_dataset(ds, out, format_from_path(out));
  fmt::print("wrote {} ({} steps x {} nodes x {} channels)\n", out.string(), ds.steps, ds.nodes, ds.channels);
}

void cmd_train(RunConfig config) {
  config.finalize();
  Workspace ws(config, nullptr);
  const fs::path dir = config.run_dir();
  ensure_dir(dir);
  write_text(dir / "config.resolved", config.to_json());

  Rng rng(config.train.seed);
  HstEncoder encoder(config.model, ws.graph(), rng);
  spdlog::info("training {} encoder: {} parameters, {} train / {} val windows", to_string(config.model.mode),
               encoder.parameters().scalar_count(), ws.train().size(), ws.val().size());

  std::ofstream trace(dir / "trace.csv");
  if (!trace) throw IoError("cannot write " + (dir / "trace.csv").string());
  trace << trace_header() << '\n';
  auto on_epoch = [&](const EpochRecord& r) { trace << trace_row(r) << '\n' << std::flush; };

  FitResult result;
  try {
    result = fit(encoder, ws.train(), ws.val(), ws.normalizer(), config.train, on_epoch);
  } catch (const NumericError&) {
    // fit restored the best parameters; keep them before reporting failure
    save_checkpoint(make_checkpoint(encoder, ws.normalizer()), dir / "checkpoint.kmtw");
    throw;
  }
  save_checkpoint(make_checkpoint(encoder, ws.normalizer()), dir / "checkpoint.kmtw");
  fmt::print("trained {} epochs, best epoch {} (val MAE {:.6f}){}\n", result.trace.size(), result.best_epoch,
             result.best_val_mae, result.stopped_early ? ", stopped early" : "");
  fmt::print("checkpoint {} sha256 {}\n", (dir / "checkpoint.kmtw").string(), file_sha256(dir / "checkpoint.kmtw"));
}

void cmd_build_store(RunConfig config, const BuildStoreOptions& options) {
  config.finalize();
  TrainedRun run = open_run(config);
  const fs::path out = options.out.empty() ? config.run_dir() / "store.kmtds" : options.out;
  if (fs::exists(out) && !options.force) throw IoError(out.string() + " exists; pass --force to replace it");

  const auto start = Clock::now();
  Datastore store = build_datastore(*run.encoder, run.workspace->train(), run.fingerprint,
                                    {config.store.batch_size, config.threads});
  const double build_seconds = seconds_since(start);
  if (config.store.fraction < 1.0) store = subsample(store, config.store.fraction, config.store.seed);
  save_datastore(store, out, options.force);

  double index_seconds = 0.0;
  if (config.forecast.index == IndexKind::ivf) {
    const auto t0 = Clock::now();
    const IvfIndex index = build_ivf(store, std::min(config.forecast.n_list, store.size()), config.store.seed);
    index_seconds = seconds_since(t0);
    fs::path sidecar = out;
    sidecar.replace_extension(".kmtdx");
    save_ivf(index, sidecar);
    fmt::print("ivf index {} lists, {} k-means iterations, {:.2f} s\n", index.n_list(), index.iterations,
               index_seconds);
  }

  const double mib = static_cast<double>(fs::file_size(out)) / (1024.0 * 1024.0);
  fmt::print("store {} entries (fraction {}), d={}, {:.2f} MiB\n", store.size(), config.store.fraction, store.dim,
             mib);
  fmt::print("build time {:.2f} s\n", build_seconds + index_seconds);
  const double epoch = mean_epoch_seconds(config.run_dir() / "trace.csv");
  if (epoch > 0.0)
    fmt::print("mean training epoch {:.2f} s, build/epoch ratio {:.2f}\n", epoch, (build_seconds + index_seconds) / epoch);
  fmt::print("sha256 {}\n", file_sha256(out));
}

void cmd_eval(RunConfig config, const EvalOptions& options) {
  config.finalize();
  TrainedRun run = open_run(config);
  const WindowSet& windows = run.workspace->split(options.split);
  if (windows.empty()) throw ConfigError("split '" + options.split + "' has no windows");
  const std::vector<std::size_t> ks = options.ks.empty() ? std::vector<std::size_t>{config.forecast.k} : options.ks;
  const std::vector<double> alphas =
      options.alphas.empty() ? std::vector<double>{config.forecast.alpha} : options.alphas;
  for (double a : alphas)
    if (!(a > 0.0)) throw ConfigError("alpha must be positive");
  for (std::size_t k : ks)
    if (k == 0) throw ConfigError("K must be at least 1");

  const auto start = Clock::now();
  const QuerySet queries = encode_queries(*run.encoder, windows, config.forecast.batch_size, options.stride);
  double elapsed = seconds_since(start);
  const double null_value = config.train.null_value;

  std::ostringstream csv;
  csv << "variant,k,alpha,tau,horizon,mae,rmse,mape\n";
  const ForecastTable base = model_only(queries, run.workspace->normalizer());
  const EvalReport base_report = evaluate(base, null_value);
  append_report_rows(csv, "encoder", 0, 0.0, 0.0, base_report);
  fmt::print("encoder only ({} rows)\n{}", base_report.rows, format_report(base_report));

  ForecastTable dumped = base;
  std::size_t points = base.predictions.size();
  if (!options.no_store) {
    const fs::path store_path = options.store.empty() ? config.run_dir() / "store.kmtds" : options.store;
    const Datastore store = load_datastore(store_path);
    check_fingerprint(store, run.fingerprint);
    std::optional<IvfIndex> index;
    if (config.forecast.index == IndexKind::ivf) {
      fs::path sidecar = store_path;
      sidecar.replace_extension(".kmtdx");
      if (fs::exists(sidecar)) {
        index = load_ivf(sidecar);
      } else {
        spdlog::info("no {} found, building the ivf index", sidecar.string());
        index = build_ivf(store, std::min(config.forecast.n_list, store.size()), config.store.seed);
      }
    }
    const std::size_t k_max = *std::max_element(ks.begin(), ks.end());
    if (k_max > store.size())
      throw RequestError("K=" + std::to_string(k_max) + " exceeds the store size " + std::to_string(store.size()));
    const auto t0 = Clock::now();
    const auto hits = retrieve(store, queries, k_max, config.forecast, index ? &*index : nullptr);
    elapsed += seconds_since(t0);
    bool first = true;
    for (std::size_t k : ks) {
      for (double alpha : alphas) {
        const auto t1 = Clock::now();
        const ForecastTable t = combine(store, queries, hits, run.workspace->normalizer(), k, config.forecast.tau, alpha);
        if (first) elapsed += seconds_since(t1);
        const EvalReport report = evaluate(t, null_value);
        append_report_rows(csv, "knn", k, alpha, config.forecast.tau, report);
        if (ks.size() * alphas.size() == 1) {
          fmt::print("kNN (K={}, tau={}, alpha={})\n{}", k, config.forecast.tau, alpha, format_report(report));
        } else {
          fmt::print("K={:<4} alpha={:<6} MAE {}\n", k, alpha, metric_or_blank(report.average.mae));
        }
        if (first) {
          dumped = t;
          points = t.predictions.size();
        }
        first = false;
      }
    }
  }
  ensure_dir(config.run_dir());
  write_text(config.run_dir() / "eval.csv", csv.str());
  write_prediction_dump(dumped, options.dump.empty() ? config.run_dir() / "predictions.csv" : options.dump);
  const double nodes = static_cast<double>(config.model.nodes);
  fmt::print("throughput {:.1f} points/s/node ({} points in {:.2f} s)\n",
             elapsed > 0.0 ? static_cast<double>(points) / elapsed / nodes : 0.0, points, elapsed);
}

void cmd_inspect(RunConfig config, const InspectOptions& options) {
  config.finalize();
  TrainedRun run = open_run(config);
  const WindowSet& windows = run.workspace->split(options.split);
  const QuerySet queries = encode_queries(*run.encoder, windows, config.forecast.batch_size, 1);
  std::size_t row = 0;
  if (options.row) {
    row = *options.row;
  } else if (options.node && options.end_step) {
    bool found = false;
    for (std::size_t r = 0; r < queries.rows() && !found; ++r) {
      if (queries.nodes[r] == *options.node && queries.end_steps[r] == *options.end_step) {
        row = r;
        found = true;
      }
    }
    if (!found)
      throw RequestError(fmt::format("no {} window ends at step {} on node {}", options.split, *options.end_step,
                                     *options.node));
  } else {
    throw ConfigError("inspect needs --row or both --node and --end-step");
  }
  if (row >= queries.rows()) throw RequestError("row " + std::to_string(row) + " is out of range");

  const fs::path store_path = options.store.empty() ? config.run_dir() / "store.kmtds" : options.store;
  const Datastore store = load_datastore(store_path);
  check_fingerprint(store, run.fingerprint);
  const EntryMeta self = queries.meta(row);
  const RetrievalResult hit =
      knn_exact(store, queries.key(row), config.forecast.k, config.forecast.exclude_self ? &self : nullptr);
  const fs::path out = options.out.empty() ? config.run_dir() / "neighbors.csv" : options.out;
  inspect_neighbors(store, queries, row, hit, windows, run.workspace->normalizer(), config.forecast.k,
                    config.forecast.tau, config.forecast.alpha, out);
  fmt::print("query node {} end_step {}: {} neighbors written to {}\n", self.node, self.end_step, hit.ids.size(),
             out.string());
}

}  // namespace knnmts::cli
