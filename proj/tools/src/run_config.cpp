#include "run_config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "json.hpp"
#include "knnmts/errors.hpp"

namespace knnmts::cli {

namespace {

using json = nlohmann::json;

// Reads known keys out of one object and rejects whatever is left.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + "must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where() + key + " has the wrong type");
    }
  }

  std::optional<Section> child(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return Section(j_.at(key), path_ + key + ".");
  }

  const json& raw() const { return j_; }
  bool has(const char* key) const { return j_.contains(key); }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + path_ + key + "'");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config: " : "config " + path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

// Keys the model section accepts: every encoder field except those derived
// from the dataset.
std::set<std::string> model_keys() {
  std::set<std::string> keys;
  const json defaults = json::parse(EncoderConfig{}.to_json());
  for (const auto& [key, value] : defaults.items()) keys.insert(key);
  for (const char* derived : {"nodes", "channels", "predefined_graph"}) keys.erase(derived);
  return keys;
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError("not a number: '" + s + "'");
  return v;
}

std::size_t parse_size(const std::string& s) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError("not a count: '" + s + "'");
  return v;
}

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) parts.push_back(item);
  }
  if (parts.empty()) throw ConfigError("empty list '" + text + "'");
  return parts;
}

}  // namespace

RunConfig RunConfig::from_json(const std::string& text) {
  RunConfig c;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  Section root(doc, "");
  root.get("name", c.name);
  root.get("runs_dir", c.runs_dir);
  root.get("threads", c.threads);

  if (auto data = root.child("data")) {
    data->get("path", c.data.path);
    data->get("adjacency", c.data.adjacency);
    data->get("channels", c.data.channels);
    if (auto split = data->child("split")) {
      split->get("train", c.data.split.train);
      split->get("val", c.data.split.val);
      split->get("test", c.data.split.test);
      split->finish();
    }
    data->finish();
  }

  if (root.has("model")) {
    const json& m = doc.at("model");
    if (!m.is_object()) throw ConfigError("config model must be an object");
    const auto allowed = model_keys();
    for (const auto& [key, value] : m.items()) {
      if (!allowed.count(key)) throw ConfigError("unknown config key 'model." + key + "'");
    }
    json merged = json::parse(c.model.to_json());
    merged.update(m);
    c.model = EncoderConfig::from_json(merged.dump());
  }
  root.child("model");  // mark as seen

  if (auto train = root.child("train")) {
    train->get("lr", c.train.lr);
    train->get("batch_size", c.train.batch_size);
    train->get("max_epochs", c.train.max_epochs);
    c.patience_explicit = train->has("patience");
    train->get("patience", c.train.patience);
    train->get("seed", c.train.seed);
    train->get("null_value", c.train.null_value);
    train->get("clip_norm", c.train.clip_norm);
    train->get("max_batches_per_epoch", c.train.max_batches_per_epoch);
    train->get("val_stride", c.train.val_stride);
    train->finish();
  }

  if (auto store = root.child("store")) {
    store->get("fraction", c.store.fraction);
    store->get("seed", c.store.seed);
    store->get("batch_size", c.store.batch_size);
    store->finish();
  }

  if (auto fc = root.child("forecast")) {
    fc->get("k", c.forecast.k);
    fc->get("tau", c.forecast.tau);
    fc->get("alpha", c.forecast.alpha);
    std::string index = to_string(c.forecast.index);
    fc->get("index", index);
    c.forecast.index = parse_index_kind(index);
    fc->get("n_list", c.forecast.n_list);
    fc->get("n_probe", c.forecast.n_probe);
    fc->get("exclude_self", c.forecast.exclude_self);
    fc->get("batch_size", c.forecast.batch_size);
    fc->finish();
  }
  root.finish();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::string RunConfig::to_json() const {
  json j;
  j["name"] = name;
  j["runs_dir"] = runs_dir;
  j["threads"] = threads;
  j["data"] = {{"path", data.path},
               {"adjacency", data.adjacency},
               {"channels", data.channels},
               {"split", {{"train", data.split.train}, {"val", data.split.val}, {"test", data.split.test}}}};
  json m = json::parse(model.to_json());
  for (const char* derived : {"nodes", "channels", "predefined_graph"}) m.erase(derived);
  j["model"] = m;
  j["train"] = {{"lr", train.lr},
                {"batch_size", train.batch_size},
                {"max_epochs", train.max_epochs},
                {"patience", train.patience},
                {"seed", train.seed},
                {"null_value", train.null_value},
                {"clip_norm", train.clip_norm},
                {"max_batches_per_epoch", train.max_batches_per_epoch},
                {"val_stride", train.val_stride}};
  j["store"] = {{"fraction", store.fraction}, {"seed", store.seed}, {"batch_size", store.batch_size}};
  j["forecast"] = {{"k", forecast.k},
                   {"tau", forecast.tau},
                   {"alpha", forecast.alpha},
                   {"index", to_string(forecast.index)},
                   {"n_list", forecast.n_list},
                   {"n_probe", forecast.n_probe},
                   {"exclude_self", forecast.exclude_self},
                   {"batch_size", forecast.batch_size}};
  return j.dump(2) + "\n";
}

void RunConfig::finalize() {
  if (name.empty() || name.find('/') != std::string::npos) throw ConfigError("run name must be a plain directory name");
  if (threads == 0) throw ConfigError("threads must be at least 1");
  if (data.channels == 0) throw ConfigError("data.channels must be at least 1");
  // an unset patience follows a shortened epoch budget
  if (!patience_explicit && train.max_epochs > 0) train.patience = std::min(train.patience, train.max_epochs);
  train.validate();
  if (!(store.fraction > 0.0 && store.fraction <= 1.0)) throw ConfigError("store.fraction must be in (0, 1]");
  if (store.batch_size == 0) throw ConfigError("store.batch_size must be at least 1");
  forecast.threads = threads;
  forecast.validate();
}

std::vector<std::size_t> parse_size_list(const std::string& text) {
  std::vector<std::size_t> out;
  for (const std::string& part : split_commas(text)) {
    const auto dots = part.find("..");
    if (dots == std::string::npos) {
      out.push_back(parse_size(part));
      continue;
    }
    const std::size_t lo = parse_size(part.substr(0, dots)), hi = parse_size(part.substr(dots + 2));
    if (lo > hi) throw ConfigError("empty range '" + part + "'");
    for (std::size_t v = lo; v <= hi; ++v) out.push_back(v);
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  for (const std::string& part : split_commas(text)) {
    const auto dots = part.find("..");
    if (dots == std::string::npos) {
      out.push_back(parse_double(part));
      continue;
    }
    const double lo = parse_double(part.substr(0, dots));
    std::string rest = part.substr(dots + 2);
    const auto colon = rest.find(':');
    const double hi = parse_double(rest.substr(0, colon));
    if (!(lo <= hi)) throw ConfigError("empty range '" + part + "'");
    std::size_t count = 10;
    if (colon != std::string::npos) {
      const double step = parse_double(rest.substr(colon + 1));
      if (!(step > 0.0)) throw ConfigError("range step must be positive in '" + part + "'");
      count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
    }
    if (count == 1 || lo == hi) {
      out.push_back(lo);
      continue;
    }
    const double step = colon != std::string::npos ? parse_double(rest.substr(colon + 1)) : (hi - lo) / (count - 1);
    // round away accumulated binary noise so 0.1..0.3:0.1 yields 0.3, not 0.30000000000000004
    for (std::size_t i = 0; i < count; ++i)
      out.push_back(std::stod(fmt::format("{:.12g}", lo + step * static_cast<double>(i))));
  }
  return out;
}

}  // namespace knnmts::cli
