#include "knnmts/encoder.hpp"

#include <cmath>
#include "json.hpp"
#include <sstream>
#include <utility>

#include "knnmts/errors.hpp"
#include "knnmts/ops.hpp"

namespace knnmts {

namespace {

using json = nlohmann::json;

enum class Init { xavier, zeros, ones, position, normal };

struct Slot {
  std::string name;
  Shape shape;
  Init init;
};

std::string layer_prefix(const char* branch, std::size_t l) {
  return std::string(branch) + ".layer" + std::to_string(l) + ".";
}

void add_linear(std::vector<Slot>& slots, const std::string& prefix, std::size_t in, std::size_t out) {
  slots.push_back({prefix + ".w", {in, out}, Init::xavier});
  slots.push_back({prefix + ".b", {out}, Init::zeros});
}

// Every learnable tensor the config needs, in checkpoint order.
std::vector<Slot> parameter_layout(const EncoderConfig& c) {
  std::vector<Slot> slots;
  const std::size_t d = c.hidden;
  if (c.uses_long()) {
    slots.push_back({"long.embed.w", {c.segment_length * c.channels, d}, Init::xavier});
    slots.push_back({"long.embed.b", {d}, Init::zeros});
    slots.push_back({"long.embed.pos", {c.segments(), d}, Init::position});
    for (std::size_t l = 0; l < c.transformer_layers; ++l) {
      const std::string p = layer_prefix("long", l);
      for (const char* proj : {"attn.q", "attn.k", "attn.v", "attn.o"}) add_linear(slots, p + proj, d, d);
      slots.push_back({p + "norm1.gain", {d}, Init::ones});
      slots.push_back({p + "norm1.bias", {d}, Init::zeros});
      add_linear(slots, p + "ffn.in", d, d * c.ffn_multiplier);
      add_linear(slots, p + "ffn.out", d * c.ffn_multiplier, d);
      slots.push_back({p + "norm2.gain", {d}, Init::ones});
      slots.push_back({p + "norm2.bias", {d}, Init::zeros});
    }
  }
  if (c.uses_short()) {
    add_linear(slots, "short.input", c.channels, d);
    slots.push_back({"short.adaptive.e1", {c.nodes, c.adaptive_embedding}, Init::normal});
    slots.push_back({"short.adaptive.e2", {c.nodes, c.adaptive_embedding}, Init::normal});
    for (std::size_t l = 0; l < c.dilations.size(); ++l) {
      const std::string p = layer_prefix("short", l);
      add_linear(slots, p + "filter", c.filter_length * d, d);
      add_linear(slots, p + "gate", c.filter_length * d, d);
      for (std::size_t k = 0; k <= c.diffusion_order; ++k) {
        if (c.predefined_graph) {
          slots.push_back({p + "gconv.fwd" + std::to_string(k), {d, d}, Init::xavier});
          slots.push_back({p + "gconv.bwd" + std::to_string(k), {d, d}, Init::xavier});
        }
        slots.push_back({p + "gconv.adp" + std::to_string(k), {d, d}, Init::xavier});
      }
      add_linear(slots, p + "skip", d, d);
    }
  }
  if (c.uses_short()) {
    add_linear(slots, "fusion.short.hidden", d, d);
    add_linear(slots, "fusion.short.out", d, d);
  }
  if (c.uses_long()) {
    add_linear(slots, "fusion.long.hidden", d, d);
    add_linear(slots, "fusion.long.out", d, d);
  }
  add_linear(slots, "head.hidden", d, d);
  add_linear(slots, "head.out", d, c.output_width());
  return slots;
}

Tensor linear(const ParameterSet& params, const std::string& prefix, const Tensor& x) {
  return add(matmul(x, params.get(prefix + ".w")), params.get(prefix + ".b"));
}

Tensor dropout(const Tensor& x, const ForwardContext& ctx, double rate) {
  if (!ctx.training || rate <= 0.0) return x;
  if (ctx.rng == nullptr) throw ContractError("dropout during training needs an rng");
  std::vector<double> mask(x.numel());
  const double keep = 1.0 / (1.0 - rate);
  for (double& m : mask) m = ctx.rng->uniform() < rate ? 0.0 : keep;
  return mul(x, Tensor(x.shape(), std::move(mask)));
}

std::size_t get_size(const json& j, const char* key, std::size_t fallback) {
  return j.contains(key) ? j.at(key).get<std::size_t>() : fallback;
}

}  // namespace

const char* to_string(EncoderMode mode) {
  switch (mode) {
    case EncoderMode::hybrid: return "hybrid";
    case EncoderMode::long_only: return "long_only";
    case EncoderMode::short_only: return "short_only";
  }
  return "?";
}

const char* to_string(KeyTap tap) {
  switch (tap) {
    case KeyTap::fusion_output: return "fusion_output";
    case KeyTap::head_hidden_linear: return "head_hidden_linear";
    case KeyTap::head_hidden_relu: return "head_hidden_relu";
  }
  return "?";
}

EncoderMode parse_encoder_mode(const std::string& s) {
  for (EncoderMode m : {EncoderMode::hybrid, EncoderMode::long_only, EncoderMode::short_only})
    if (s == to_string(m)) return m;
  throw ConfigError("unknown encoder mode '" + s + "' (expected hybrid, long_only or short_only)");
}

KeyTap parse_key_tap(const std::string& s) {
  for (KeyTap t : {KeyTap::fusion_output, KeyTap::head_hidden_linear, KeyTap::head_hidden_relu})
    if (s == to_string(t)) return t;
  throw ConfigError("unknown key tap '" + s + "'");
}

std::size_t EncoderConfig::receptive_field() const {
  std::size_t r = 1;
  for (std::size_t a : dilations) r += a * (filter_length - 1);
  return r;
}

void EncoderConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("encoder: " + msg); };
  if (nodes == 0) fail("nodes must be positive");
  if (channels == 0) fail("channels must be positive");
  if (segment_length == 0) fail("segment_length must be positive");
  if (input_length == 0 || input_length % segment_length != 0)
    fail("input_length " + std::to_string(input_length) + " is not a multiple of segment_length " +
         std::to_string(segment_length));
  if (horizon == 0) fail("horizon must be positive");
  if (hidden == 0) fail("hidden must be positive");
  if (heads == 0 || hidden % heads != 0)
    fail("hidden " + std::to_string(hidden) + " is not divisible by heads " + std::to_string(heads));
  if (uses_long() && transformer_layers == 0) fail("transformer_layers must be positive");
  if (ffn_multiplier == 0) fail("ffn_multiplier must be positive");
  if (uses_short()) {
    if (filter_length == 0) fail("filter_length must be positive");
    if (dilations.empty()) fail("dilations must not be empty");
    for (std::size_t a : dilations)
      if (a == 0) fail("dilations must be positive");
    if (receptive_field() > segment_length)
      fail("receptive field " + std::to_string(receptive_field()) + " exceeds segment_length " +
           std::to_string(segment_length));
    if (adaptive_embedding == 0) fail("adaptive_embedding must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
}

std::string EncoderConfig::to_json() const {
  json j;
  j["nodes"] = nodes;
  j["channels"] = channels;
  j["input_length"] = input_length;
  j["segment_length"] = segment_length;
  j["horizon"] = horizon;
  j["hidden"] = hidden;
  j["heads"] = heads;
  j["transformer_layers"] = transformer_layers;
  j["ffn_multiplier"] = ffn_multiplier;
  j["dilations"] = dilations;
  j["filter_length"] = filter_length;
  j["diffusion_order"] = diffusion_order;
  j["adaptive_embedding"] = adaptive_embedding;
  j["dropout"] = dropout;
  j["predefined_graph"] = predefined_graph;
  j["mode"] = to_string(mode);
  j["key_tap"] = to_string(key_tap);
  return j.dump();
}

EncoderConfig EncoderConfig::from_json(const std::string& text) {
  EncoderConfig c;
  try {
    const json j = json::parse(text);
    c.nodes = get_size(j, "nodes", c.nodes);
    c.channels = get_size(j, "channels", c.channels);
    c.input_length = get_size(j, "input_length", c.input_length);
    c.segment_length = get_size(j, "segment_length", c.segment_length);
    c.horizon = get_size(j, "horizon", c.horizon);
    c.hidden = get_size(j, "hidden", c.hidden);
    c.heads = get_size(j, "heads", c.heads);
    c.transformer_layers = get_size(j, "transformer_layers", c.transformer_layers);
    c.ffn_multiplier = get_size(j, "ffn_multiplier", c.ffn_multiplier);
    if (j.contains("dilations")) c.dilations = j.at("dilations").get<std::vector<std::size_t>>();
    c.filter_length = get_size(j, "filter_length", c.filter_length);
    c.diffusion_order = get_size(j, "diffusion_order", c.diffusion_order);
    c.adaptive_embedding = get_size(j, "adaptive_embedding", c.adaptive_embedding);
    if (j.contains("dropout")) c.dropout = j.at("dropout").get<double>();
    if (j.contains("predefined_graph")) c.predefined_graph = j.at("predefined_graph").get<bool>();
    if (j.contains("mode")) c.mode = parse_encoder_mode(j.at("mode").get<std::string>());
    if (j.contains("key_tap")) c.key_tap = parse_key_tap(j.at("key_tap").get<std::string>());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("encoder config: ") + e.what());
  }
  return c;
}

// ---- ParameterSet ----

Tensor& ParameterSet::add(std::string name, Tensor value) {
  if (contains(name)) throw ContractError("duplicate parameter " + name);
  items_.push_back({std::move(name), std::move(value)});
  return items_.back().value;
}

const Tensor& ParameterSet::get(const std::string& name) const {
  for (const auto& item : items_)
    if (item.name == name) return item.value;
  throw ContractError("no parameter named " + name);
}

Tensor& ParameterSet::get(const std::string& name) {
  return const_cast<Tensor&>(std::as_const(*this).get(name));
}

bool ParameterSet::contains(const std::string& name) const {
  for (const auto& item : items_)
    if (item.name == name) return true;
  return false;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& item : items_) n += item.value.numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& item : items_) item.value.zero_grad();
}

ParameterSet ParameterSet::clone() const {
  ParameterSet out;
  for (const auto& item : items_) {
    auto data = item.value.data();
    out.add(item.name, Tensor(item.value.shape(), std::vector<double>(data.begin(), data.end()),
                              item.value.requires_grad()));
  }
  return out;
}

void ParameterSet::copy_from(const ParameterSet& other) {
  if (other.size() != size()) throw ContractError("parameter sets differ in size");
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto& src = other.items_[i];
    auto& dst = items_[i];
    if (src.name != dst.name || src.value.shape() != dst.value.shape())
      throw ContractError("parameter mismatch at " + dst.name);
    auto in = src.value.data();
    auto out = dst.value.mutable_data();
    std::copy(in.begin(), in.end(), out.begin());
  }
}

const Tensor& EncoderOutput::key(KeyTap tap) const {
  switch (tap) {
    case KeyTap::fusion_output: return hybrid;
    case KeyTap::head_hidden_linear: return head_linear;
    case KeyTap::head_hidden_relu: return head_relu;
  }
  return hybrid;
}

// ---- building blocks ----

Tensor dilated_taps(const Tensor& x, std::size_t filter_length, std::size_t dilation) {
  if (x.rank() < 2) throw DimensionError("dilated_taps needs [..., time, features], got " + shape_string(x.shape()));
  if (filter_length == 0) throw ConfigError("filter length must be positive");
  const std::size_t len = x.dim(-2);
  const std::size_t reach = dilation * (filter_length - 1);
  if (len <= reach)
    throw ConfigError("sequence of length " + std::to_string(len) + " is shorter than the receptive field; need at least " +
                      std::to_string(reach + 1) + " steps");
  if (filter_length == 1) return x;
  const std::size_t out_len = len - reach;
  const int time_axis = static_cast<int>(x.rank()) - 2;
  std::vector<Tensor> taps;
  taps.reserve(filter_length);
  for (std::size_t m = 0; m < filter_length; ++m) taps.push_back(slice(x, time_axis, reach - dilation * m, out_len));
  return concat(taps, -1);
}

Tensor dilated_causal_conv(const Tensor& x, const Tensor& filter, std::size_t filter_length, std::size_t dilation) {
  if (filter.rank() != 2 || filter.dim(0) != filter_length * x.dim(-1))
    throw DimensionError("filter " + shape_string(filter.shape()) + " does not match " + std::to_string(filter_length) +
                         " taps of " + std::to_string(x.dim(-1)) + " features");
  return matmul(dilated_taps(x, filter_length, dilation), filter);
}

Tensor gated_tcn(const Tensor& x, const Tensor& theta1, const Tensor& c, const Tensor& theta2, const Tensor& d,
                 std::size_t filter_length, std::size_t dilation) {
  const Tensor taps = dilated_taps(x, filter_length, dilation);
  const Tensor filt = knnmts::tanh(add(matmul(taps, theta1), c));
  const Tensor gate = sigmoid(add(matmul(taps, theta2), d));
  return mul(filt, gate);
}

Tensor graph_conv(const Tensor& z, const std::vector<Tensor>& forward_powers,
                  const std::vector<Tensor>& backward_powers, const std::vector<Tensor>& adaptive_powers,
                  const GraphConvWeights& weights) {
  if (z.rank() != 4) throw DimensionError("graph_conv expects [B, N, T, F], got " + shape_string(z.shape()));
  const Shape zs = z.shape();
  const std::size_t nodes = zs[1];
  const Tensor flat = reshape(z, {zs[0], nodes, zs[2] * zs[3]});
  Tensor out;
  auto accumulate = [&](const std::vector<Tensor>& powers, const std::vector<Tensor>& ws) {
    if (ws.size() > powers.size()) throw ContractError("graph_conv has more weights than matrix powers");
    for (std::size_t k = 0; k < ws.size(); ++k) {
      const Tensor& p = powers[k];
      if (p.rank() != 2 || p.dim(0) != nodes || p.dim(1) != nodes)
        throw DimensionError("graph of shape " + shape_string(p.shape()) + " does not match " + std::to_string(nodes) +
                             " nodes");
      // P^0 is the identity.
      const Tensor mixed = k == 0 ? z : reshape(matmul(p, flat), zs);
      const Tensor term = matmul(mixed, ws[k]);
      out = out.defined() ? add(out, term) : term;
    }
  };
  accumulate(forward_powers, weights.forward);
  accumulate(backward_powers, weights.backward);
  accumulate(adaptive_powers, weights.adaptive);
  if (!out.defined()) throw ContractError("graph_conv called without weights");
  return out;
}

// ---- HstEncoder ----

HstEncoder::HstEncoder(EncoderConfig config, std::optional<TransitionMatrices> graph, Rng& rng)
    : config_(std::move(config)), graph_(std::move(graph)) {
  config_.validate();
  if (config_.predefined_graph != graph_.has_value())
    throw ConfigError(config_.predefined_graph ? "encoder configured for a predefined graph but none was given"
                                               : "a graph was given but predefined_graph is off");
  init_parameters(rng);
  check_structure();
  prepare_graph();
}

HstEncoder::HstEncoder(EncoderConfig config, ParameterSet params, std::optional<TransitionMatrices> graph)
    : config_(std::move(config)), params_(std::move(params)), graph_(std::move(graph)) {
  config_.validate();
  if (config_.predefined_graph != graph_.has_value())
    throw ConfigError("predefined_graph setting disagrees with the supplied graph");
  check_structure();
  prepare_graph();
}

void HstEncoder::init_parameters(Rng& rng) {
  for (const Slot& slot : parameter_layout(config_)) {
    std::vector<double> v(shape_numel(slot.shape), 0.0);
    switch (slot.init) {
      case Init::xavier: {
        const double limit = std::sqrt(6.0 / static_cast<double>(slot.shape[0] + slot.shape[1]));
        for (double& x : v) x = rng.uniform(-limit, limit);
        break;
      }
      case Init::zeros: break;
      case Init::ones: std::fill(v.begin(), v.end(), 1.0); break;
      case Init::position: {
        const std::size_t rows = slot.shape[0], cols = slot.shape[1];
        for (std::size_t i = 0; i < (rows - 1) * cols; ++i) v[i] = rng.uniform(-0.02, 0.02);
        // The latest segment's row starts from a truncated normal instead.
        for (std::size_t j = 0; j < cols; ++j) v[(rows - 1) * cols + j] = rng.truncated_normal(0.0, 0.02);
        break;
      }
      case Init::normal:
        for (double& x : v) x = rng.normal();
        break;
    }
    params_.add(slot.name, Tensor(slot.shape, std::move(v), true));
  }
}

void HstEncoder::check_structure() const {
  const auto layout = parameter_layout(config_);
  if (layout.size() != params_.size())
    throw ConfigError("encoder expects " + std::to_string(layout.size()) + " parameter tensors, got " +
                      std::to_string(params_.size()));
  for (const Slot& slot : layout) {
    if (!params_.contains(slot.name)) throw ConfigError("missing parameter " + slot.name);
    if (params_.get(slot.name).shape() != slot.shape)
      throw DimensionError("parameter " + slot.name + " has shape " + shape_string(params_.get(slot.name).shape()) +
                           ", expected " + shape_string(slot.shape));
  }
  if (graph_) {
    const std::size_t n = config_.nodes;
    for (const Tensor* p : {&graph_->forward, &graph_->backward})
      if (p->rank() != 2 || p->dim(0) != n || p->dim(1) != n)
        throw DimensionError("graph shape " + shape_string(p->shape()) + " does not match " + std::to_string(n) +
                             " nodes");
  }
}

void HstEncoder::prepare_graph() {
  if (!graph_) return;
  forward_powers_ = matrix_power_series(graph_->forward, config_.diffusion_order);
  backward_powers_ = matrix_power_series(graph_->backward, config_.diffusion_order);
}

Tensor HstEncoder::segment_embed(const Tensor& long_input) const {
  const EncoderConfig& c = config_;
  const Shape& s = long_input.shape();
  if (s.size() < 3 || s[s.size() - 2] != c.input_length || s.back() != c.channels)
    throw DimensionError("long input " + shape_string(s) + " does not end in [" + std::to_string(c.input_length) +
                         ", " + std::to_string(c.channels) + "]");
  const std::size_t series = long_input.numel() / (c.input_length * c.channels);
  const Tensor segs = reshape(long_input, {series, c.segments(), c.segment_length * c.channels});
  return add(add(matmul(segs, params_.get("long.embed.w")), params_.get("long.embed.b")),
             params_.get("long.embed.pos"));
}

Tensor HstEncoder::transformer_layer(std::size_t layer, const Tensor& embedded, const ForwardContext& ctx,
                                     Tensor* attention) const {
  return transformer_block(layer, embedded, ctx, attention, false);
}

// With `last_only` only the final segment's output row is produced. Rows are
// computed independently, so it equals the last row of the full block.
Tensor HstEncoder::transformer_block(std::size_t layer, const Tensor& embedded, const ForwardContext& ctx,
                                     Tensor* attention, bool last_only) const {
  const EncoderConfig& c = config_;
  if (layer >= c.transformer_layers) throw ContractError("transformer layer index out of range");
  if (embedded.rank() != 3 || embedded.dim(2) != c.hidden)
    throw DimensionError("transformer input must be [S, P, d], got " + shape_string(embedded.shape()));
  const std::string p = layer_prefix("long", layer);
  const std::size_t series = embedded.dim(0), segs = embedded.dim(1), h = c.heads, dh = c.hidden / c.heads;
  const std::size_t rows = last_only ? 1 : segs;
  const Tensor query_in = last_only ? slice(embedded, 1, segs - 1, 1) : embedded;

  auto split_heads = [&](const Tensor& t, std::size_t len) {
    return permute(reshape(t, {series, len, h, dh}), {0, 2, 1, 3});
  };
  const Tensor q = split_heads(linear(params_, p + "attn.q", query_in), rows);
  const Tensor k = split_heads(linear(params_, p + "attn.k", embedded), segs);
  const Tensor v = split_heads(linear(params_, p + "attn.v", embedded), segs);
  const Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(dh)));
  const Tensor attn = softmax(scores, -1);
  if (attention != nullptr) *attention = attn;
  const Tensor heads = reshape(permute(matmul(attn, v), {0, 2, 1, 3}), {series, rows, c.hidden});
  const Tensor msa = linear(params_, p + "attn.o", heads);

  const Tensor u = layer_norm(add(query_in, dropout(msa, ctx, c.dropout)), params_.get(p + "norm1.gain"),
                              params_.get(p + "norm1.bias"));
  const Tensor ffn = linear(params_, p + "ffn.out", relu(linear(params_, p + "ffn.in", u)));
  return layer_norm(add(u, dropout(ffn, ctx, c.dropout)), params_.get(p + "norm2.gain"),
                    params_.get(p + "norm2.bias"));
}

Tensor HstEncoder::long_branch(const Tensor& long_input, const ForwardContext& ctx) const {
  if (!config_.uses_long()) throw ContractError("long branch is disabled in short_only mode");
  Tensor h = segment_embed(long_input);
  const std::size_t layers = config_.transformer_layers;
  for (std::size_t l = 0; l < layers; ++l) h = transformer_block(l, h, ctx, nullptr, l + 1 == layers);
  return reshape(h, {h.dim(0), config_.hidden});
}

Tensor HstEncoder::adaptive_matrix() const {
  return adaptive_adjacency(params_.get("short.adaptive.e1"), params_.get("short.adaptive.e2"));
}

Tensor HstEncoder::short_branch(const Tensor& short_input) const {
  const EncoderConfig& c = config_;
  if (!c.uses_short()) throw ContractError("short branch is disabled in long_only mode");
  const Shape& s = short_input.shape();
  if (s.size() != 4 || s[1] != c.nodes || s[2] != c.segment_length || s[3] != c.channels)
    throw DimensionError("short input " + shape_string(s) + " is not [B, " + std::to_string(c.nodes) + ", " +
                         std::to_string(c.segment_length) + ", " + std::to_string(c.channels) + "]");
  const std::size_t batch = s[0], d = c.hidden;

  const std::vector<Tensor> adaptive_powers = matrix_power_series(adaptive_matrix(), c.diffusion_order);
  const std::vector<Tensor> none;

  Tensor x = linear(params_, "short.input", short_input);  // [B, N, L_s, d]
  Tensor skip;
  for (std::size_t l = 0; l < c.dilations.size(); ++l) {
    const std::string p = layer_prefix("short", l);
    const std::size_t a = c.dilations[l];
    const Tensor z = gated_tcn(x, params_.get(p + "filter.w"), params_.get(p + "filter.b"), params_.get(p + "gate.w"),
                               params_.get(p + "gate.b"), c.filter_length, a);
    GraphConvWeights w;
    for (std::size_t k = 0; k <= c.diffusion_order; ++k) {
      if (c.predefined_graph) {
        w.forward.push_back(params_.get(p + "gconv.fwd" + std::to_string(k)));
        w.backward.push_back(params_.get(p + "gconv.bwd" + std::to_string(k)));
      }
      w.adaptive.push_back(params_.get(p + "gconv.adp" + std::to_string(k)));
    }
    const Tensor g = c.predefined_graph ? graph_conv(z, forward_powers_, backward_powers_, adaptive_powers, w)
                                        : graph_conv(z, none, none, adaptive_powers, w);
    const std::size_t len = g.dim(2);
    const Tensor last = reshape(slice(g, 2, len - 1, 1), {batch, c.nodes, d});
    const Tensor contribution = linear(params_, p + "skip", last);
    skip = skip.defined() ? add(skip, contribution) : contribution;
    x = add(g, slice(x, 2, x.dim(2) - len, len));
  }
  return reshape(skip, {batch * c.nodes, d});
}

Tensor HstEncoder::mlp(const std::string& prefix, const Tensor& x) const {
  return linear(params_, prefix + ".out", relu(linear(params_, prefix + ".hidden", x)));
}

EncoderOutput HstEncoder::forward(const Batch& batch, const ForwardContext& ctx) const {
  const EncoderConfig& c = config_;
  if (batch.nodes != c.nodes)
    throw ContractError("encoder needs node-complete batches of " + std::to_string(c.nodes) + " nodes, got " +
                        std::to_string(batch.nodes));
  EncoderOutput out;
  Tensor fused;
  if (c.uses_short()) fused = mlp("fusion.short", short_branch(batch.short_input));
  if (c.uses_long()) {
    const Tensor from_long = mlp("fusion.long", long_branch(batch.long_input, ctx));
    fused = fused.defined() ? add(fused, from_long) : from_long;
  }
  out.hybrid = fused;
  out.head_linear = linear(params_, "head.hidden", fused);
  out.head_relu = relu(out.head_linear);
  out.forecast = linear(params_, "head.out", out.head_relu);
  return out;
}

}  // namespace knnmts
