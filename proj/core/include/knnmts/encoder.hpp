#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "knnmts/data.hpp"
#include "knnmts/graph.hpp"
#include "knnmts/rng.hpp"
#include "knnmts/tensor.hpp"

namespace knnmts {

enum class EncoderMode { hybrid, long_only, short_only };

/// Which internal state is written to the datastore as key (and used as query).
enum class KeyTap {
  fusion_output,       // H_hybrid, the fused hidden state
  head_hidden_linear,  // head hidden layer before its relu
  head_hidden_relu,    // head hidden layer after its relu
};

const char* to_string(EncoderMode mode);
const char* to_string(KeyTap tap);
EncoderMode parse_encoder_mode(const std::string& s);
KeyTap parse_key_tap(const std::string& s);

struct EncoderConfig {
  std::size_t nodes = 0;
  std::size_t channels = 1;
  std::size_t input_length = 2016;   // L
  std::size_t segment_length = 12;   // L_s
  std::size_t horizon = 12;          // T_f
  std::size_t hidden = 96;           // d
  std::size_t heads = 4;
  std::size_t transformer_layers = 4;
  std::size_t ffn_multiplier = 4;
  std::vector<std::size_t> dilations{1, 2, 1, 2};
  std::size_t filter_length = 2;     // taps per dilated convolution
  std::size_t diffusion_order = 2;   // highest graph power in the graph convolution
  std::size_t adaptive_embedding = 10;
  double dropout = 0.0;
  bool predefined_graph = false;
  EncoderMode mode = EncoderMode::hybrid;
  KeyTap key_tap = KeyTap::fusion_output;

  std::size_t segments() const { return input_length / segment_length; }
  std::size_t receptive_field() const;
  std::size_t output_width() const { return horizon * channels; }
  WindowShape window() const { return {input_length, segment_length, horizon}; }
  bool uses_long() const { return mode != EncoderMode::short_only; }
  bool uses_short() const { return mode != EncoderMode::long_only; }

  /// Throws ConfigError naming the first inconsistent field.
  void validate() const;

  std::string to_json() const;
  static EncoderConfig from_json(const std::string& text);
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Ordered list of named learnable tensors.
class ParameterSet {
 public:
  Tensor& add(std::string name, Tensor value);
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  bool contains(const std::string& name) const;

  std::size_t size() const { return items_.size(); }
  std::size_t scalar_count() const;
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  void zero_grad();
  /// Deep copy of the current values (no graph, no grads).
  ParameterSet clone() const;
  /// Overwrites values from a set with identical names and shapes.
  void copy_from(const ParameterSet& other);

 private:
  std::vector<NamedTensor> items_;
};

/// Training-time switches for a forward pass.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;  // required when training with dropout > 0
};

struct EncoderOutput {
  Tensor hybrid;       // [B*N, d]
  Tensor head_linear;  // [B*N, d]
  Tensor head_relu;    // [B*N, d]
  Tensor forecast;     // [B*N, T_f*C], normalized space

  const Tensor& key(KeyTap tap) const;
};

/// x: [..., l, F] -> [..., l - a(B_f - 1), B_f * F]; tap m of the output block
/// holds x[t - a*m]. Only positions where every tap is in range are kept.
Tensor dilated_taps(const Tensor& x, std::size_t filter_length, std::size_t dilation);

/// out[t] = sum_m x[t - a*m] * W_m with W stacked as [B_f * F_in, F_out].
Tensor dilated_causal_conv(const Tensor& x, const Tensor& filter, std::size_t filter_length, std::size_t dilation);

/// tanh(conv(x, theta1) + c) * sigmoid(conv(x, theta2) + d).
Tensor gated_tcn(const Tensor& x, const Tensor& theta1, const Tensor& c, const Tensor& theta2, const Tensor& d,
                 std::size_t filter_length, std::size_t dilation);

/// Diffusion weights per power k; an empty family is skipped.
struct GraphConvWeights {
  std::vector<Tensor> forward;   // W_k1, used with P_f^k
  std::vector<Tensor> backward;  // W_k2, used with P_b^k
  std::vector<Tensor> adaptive;  // W_k3, used with A_apt^k
};

/// sum_k P_f^k Z W_k1 + P_b^k Z W_k2 + A^k Z W_k3 for z of shape [B, N, T, F].
/// Power lists start at k = 0 (identity) and must cover every weight.
Tensor graph_conv(const Tensor& z, const std::vector<Tensor>& forward_powers,
                  const std::vector<Tensor>& backward_powers, const std::vector<Tensor>& adaptive_powers,
                  const GraphConvWeights& weights);

/// Hybrid spatial-temporal encoder: a segment Transformer over the long
/// history, a gated dilated-convolution + graph-convolution stack over the
/// last segment of every node, fused into one hidden state and a forecast head.
class HstEncoder {
 public:
  /// Fresh, randomly initialized encoder. `graph` is required iff
  /// config.predefined_graph is set.
  HstEncoder(EncoderConfig config, std::optional<TransitionMatrices> graph, Rng& rng);
  /// Encoder around existing parameters (e.g. from a checkpoint).
  HstEncoder(EncoderConfig config, ParameterSet params, std::optional<TransitionMatrices> graph);

  const EncoderConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  const std::optional<TransitionMatrices>& graph() const { return graph_; }

  EncoderOutput forward(const Batch& batch, const ForwardContext& ctx = {}) const;

  /// [S, L, C] or [B, N, L, C] -> [S, P, d].
  Tensor segment_embed(const Tensor& long_input) const;
  /// One post-norm block; optionally exposes the attention weights [S, h, P, P].
  Tensor transformer_layer(std::size_t layer, const Tensor& embedded, const ForwardContext& ctx = {},
                           Tensor* attention = nullptr) const;
  /// [B, N, L, C] -> H_long [B*N, d] (final segment after all layers).
  Tensor long_branch(const Tensor& long_input, const ForwardContext& ctx = {}) const;
  /// [B, N, L_s, C] -> H_short [B*N, d] (skip sum at the last timestep).
  Tensor short_branch(const Tensor& short_input) const;
  /// Row-stochastic learned adjacency from the current embeddings.
  Tensor adaptive_matrix() const;

 private:
  void init_parameters(Rng& rng);
  void check_structure() const;
  void prepare_graph();
  Tensor transformer_block(std::size_t layer, const Tensor& embedded, const ForwardContext& ctx, Tensor* attention,
                           bool last_only) const;
  Tensor mlp(const std::string& prefix, const Tensor& x) const;

  EncoderConfig config_;
  ParameterSet params_;
  std::optional<TransitionMatrices> graph_;
  std::vector<Tensor> forward_powers_;
  std::vector<Tensor> backward_powers_;
};

}  // namespace knnmts
