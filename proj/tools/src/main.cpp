#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <fmt/format.h>

#include "CLI11.hpp"
#include "commands.hpp"
#include "knnmts/errors.hpp"
#include "knnmts/runtime.hpp"

namespace fs = std::filesystem;
using namespace knnmts;
using namespace knnmts::cli;

namespace {

// Flags shared by every run-based command; unset flags leave the config alone.
struct RunFlags {
  std::string config_path;
  std::optional<std::string> name, runs_dir, data, adjacency;
  std::optional<std::size_t> threads;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "JSON run config");
    cmd->add_option("--name", name, "run name (directory under the runs dir)");
    cmd->add_option("--runs-dir", runs_dir, "parent directory of run directories");
    cmd->add_option("--data", data, "dataset path (.csv or .kmtsbin)");
    cmd->add_option("--adjacency", adjacency, "adjacency CSV (dense or src,dst,weight)");
    cmd->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  }

  // Training starts from --config or defaults; later stages default to the
  // resolved config that training echoed into the run directory.
  RunConfig resolve(bool from_run_dir) const {
    RunConfig c;
    if (!config_path.empty()) {
      c = RunConfig::load(config_path);
    } else if (from_run_dir) {
      RunConfig probe;
      if (name) probe.name = *name;
      if (runs_dir) probe.runs_dir = *runs_dir;
      c = RunConfig::load(probe.run_dir() / "config.resolved");
      c.patience_explicit = true;
    }
    if (name) c.name = *name;
    if (runs_dir) c.runs_dir = *runs_dir;
    if (data) c.data.path = *data;
    if (adjacency) c.data.adjacency = *adjacency;
    if (threads) c.threads = *threads;
    return c;
  }
};

struct ForecastFlags {
  std::optional<std::size_t> k, n_list, n_probe;
  std::optional<double> tau, alpha;
  std::optional<std::string> index;
  bool exclude_self = false;

  void attach(CLI::App* cmd, bool with_k_alpha) {
    if (with_k_alpha) {
      cmd->add_option("--k", k, "neighbors to retrieve");
      cmd->add_option("--alpha", alpha, "interpolation scale");
    }
    cmd->add_option("--tau", tau, "softmax temperature");
    cmd->add_option("--index", index, "exact or ivf");
    cmd->add_option("--n-list", n_list, "ivf lists");
    cmd->add_option("--n-probe", n_probe, "ivf lists probed per query");
    cmd->add_flag("--exclude-self", exclude_self, "skip entries with the query's own (node, end_step)");
  }

  void apply(RunConfig& c) const {
    if (k) c.forecast.k = *k;
    if (alpha) c.forecast.alpha = *alpha;
    if (tau) c.forecast.tau = *tau;
    if (index) c.forecast.index = parse_index_kind(*index);
    if (n_list) c.forecast.n_list = *n_list;
    if (n_probe) c.forecast.n_probe = *n_probe;
    if (exclude_self) c.forecast.exclude_self = true;
  }
};

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const IoError*>(&e)) return 3;
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  if (dynamic_cast<const Error*>(&e)) return 2;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  configure_allocator();
  CLI::App app{"kNN-augmented multivariate time series forecasting"};
  app.require_subcommand(1);
  bool verbose = false, quiet = false;
  app.add_flag("-v,--verbose", verbose, "debug logging");
  app.add_flag("-q,--quiet", quiet, "warnings and errors only");

  // synth
  SynthOptions synth;
  std::string synth_out, synth_adj, synth_motifs;
  auto* synth_cmd = app.add_subcommand("synth", "generate the planted-motif benchmark");
  synth_cmd->add_option("--out", synth_out, "output dataset (.kmtsbin or .csv)")->required();
  synth_cmd->add_option("--nodes", synth.config.nodes);
  synth_cmd->add_option("--steps", synth.config.steps);
  synth_cmd->add_option("--period", synth.config.period, "daily period in steps");
  synth_cmd->add_option("--motif-length", synth.config.motif_length);
  synth_cmd->add_option("--motif-kinds", synth.config.motif_kinds);
  synth_cmd->add_option("--motif-count", synth.config.motif_count, "placements per motif shape");
  synth_cmd->add_option("--noise", synth.config.noise, "Gaussian sigma");
  synth_cmd->add_option("--seed", synth.seed);
  synth_cmd->add_option("--adjacency-out", synth_adj, "write the ring adjacency as dense CSV");
  synth_cmd->add_option("--motifs-out", synth_motifs, "write motif placements as CSV");

  // convert
  std::string convert_in, convert_out;
  std::size_t convert_channels = 1;
  auto* convert_cmd = app.add_subcommand("convert", "convert between CSV and kmtsbin");
  convert_cmd->add_option("input", convert_in)->required();
  convert_cmd->add_option("output", convert_out)->required();
  convert_cmd->add_option("--channels", convert_channels, "channels per node in a CSV input")
      ->check(CLI::PositiveNumber);

  // train
  RunFlags train_flags;
  std::optional<std::string> mode, key_tap;
  std::optional<std::size_t> epochs, batch_size, patience, max_batches, seed;
  std::optional<double> lr;
  auto* train_cmd = app.add_subcommand("train", "train an encoder");
  train_flags.attach(train_cmd);
  train_cmd->add_option("--mode", mode, "hybrid, long_only or short_only");
  train_cmd->add_option("--key-tap", key_tap, "fusion_output, head_hidden_linear or head_hidden_relu");
  train_cmd->add_option("--epochs", epochs, "maximum epochs");
  train_cmd->add_option("--patience", patience);
  train_cmd->add_option("--batch-size", batch_size);
  train_cmd->add_option("--max-batches", max_batches, "cap on batches per epoch (0 = all)");
  train_cmd->add_option("--lr", lr);
  train_cmd->add_option("--seed", seed);

  // build-store
  RunFlags store_flags;
  BuildStoreOptions store_options;
  std::string store_out;
  std::optional<double> fraction;
  std::optional<std::uint64_t> store_seed;
  ForecastFlags store_forecast;
  auto* store_cmd = app.add_subcommand("build-store", "encode the training windows into a datastore");
  store_flags.attach(store_cmd);
  store_cmd->add_option("--fraction", fraction, "keep a uniform subset of the entries");
  store_cmd->add_option("--seed", store_seed, "subsampling and k-means seed");
  store_cmd->add_flag("--force", store_options.force, "replace an existing store");
  store_cmd->add_option("--out", store_out, "store path (default <run>/store.kmtds)");
  store_forecast.attach(store_cmd, false);

  // eval
  RunFlags eval_flags;
  EvalOptions eval_options;
  ForecastFlags eval_forecast;
  std::string k_list, alpha_list, eval_store, eval_dump;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate the encoder alone or with retrieval");
  eval_flags.attach(eval_cmd);
  eval_forecast.attach(eval_cmd, false);
  eval_cmd->add_flag("--no-store", eval_options.no_store, "encoder-only baseline");
  eval_cmd->add_option("--k", k_list, "K values: 50, 1,10,50 or 1..100");
  eval_cmd->add_option("--alpha", alpha_list, "alpha values: 0.2, 0.1,0.2 or 0.05..0.5[:step]");
  eval_cmd->add_option("--split", eval_options.split, "train, val or test");
  eval_cmd->add_option("--stride", eval_options.stride, "evaluate every n-th window position")
      ->check(CLI::PositiveNumber);
  eval_cmd->add_option("--store", eval_store, "store path (default <run>/store.kmtds)");
  eval_cmd->add_option("--dump", eval_dump, "prediction dump path (default <run>/predictions.csv)");

  // inspect
  RunFlags inspect_flags;
  InspectOptions inspect_options;
  ForecastFlags inspect_forecast;
  std::string inspect_store, inspect_out;
  auto* inspect_cmd = app.add_subcommand("inspect", "dump the neighbors of one query window");
  inspect_flags.attach(inspect_cmd);
  inspect_forecast.attach(inspect_cmd, true);
  inspect_cmd->add_option("--split", inspect_options.split);
  inspect_cmd->add_option("--row", inspect_options.row, "query row in (end_step, node) order");
  inspect_cmd->add_option("--node", inspect_options.node);
  inspect_cmd->add_option("--end-step", inspect_options.end_step, "dataset step of the window's last input");
  inspect_cmd->add_option("--store", inspect_store);
  inspect_cmd->add_option("--out", inspect_out, "neighbor CSV path (default <run>/neighbors.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  // results go to stdout, diagnostics to stderr
  spdlog::set_default_logger(spdlog::stderr_color_mt("knnmts"));
  spdlog::set_level(verbose ? spdlog::level::debug : quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (*synth_cmd) {
      synth.out = synth_out;
      synth.adjacency_out = synth_adj;
      synth.motifs_out = synth_motifs;
      cmd_synth(synth);
    } else if (*convert_cmd) {
      cmd_convert(convert_in, convert_out, convert_channels);
    } else if (*train_cmd) {
      RunConfig c = train_flags.resolve(false);
      if (mode) c.model.mode = parse_encoder_mode(*mode);
      if (key_tap) c.model.key_tap = parse_key_tap(*key_tap);
      if (epochs) c.train.max_epochs = *epochs;
      if (patience) {
        c.train.patience = *patience;
        c.patience_explicit = true;
      }
      if (batch_size) c.train.batch_size = *batch_size;
      if (max_batches) c.train.max_batches_per_epoch = *max_batches;
      if (lr) c.train.lr = *lr;
      if (seed) c.train.seed = *seed;
      cmd_train(c);
    } else if (*store_cmd) {
      RunConfig c = store_flags.resolve(true);
      if (fraction) c.store.fraction = *fraction;
      if (store_seed) c.store.seed = *store_seed;
      store_forecast.apply(c);
      store_options.out = store_out;
      cmd_build_store(c, store_options);
    } else if (*eval_cmd) {
      RunConfig c = eval_flags.resolve(true);
      eval_forecast.apply(c);
      if (!k_list.empty()) eval_options.ks = parse_size_list(k_list);
      if (!alpha_list.empty()) eval_options.alphas = parse_double_list(alpha_list);
      eval_options.store = eval_store;
      eval_options.dump = eval_dump;
      cmd_eval(c, eval_options);
    } else if (*inspect_cmd) {
      RunConfig c = inspect_flags.resolve(true);
      inspect_forecast.apply(c);
      inspect_options.store = inspect_store;
      inspect_options.out = inspect_out;
      cmd_inspect(c, inspect_options);
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return exit_code_for(e);
  }
  return 0;
}
