#pragma once

#include "bdt/autodiff.hpp"

#include <json.hpp>

#include <string>
#include <vector>

// Layers, the transformer trunk with incremental decoding, the AdamW
// optimizer and parameter (de)serialization. Layers own their parameter
// tensors; a forward pass strings autodiff ops over them, so layer structs
// are cheap handles onto long-lived leaf nodes.
namespace bdt::nn {

struct NamedParam {
  std::string name;
  ad::Tensor tensor;
};
using ParamMap = std::vector<NamedParam>;

// Dense layer, y = x W + b with x holding one row per token.
struct Linear {
  ad::Tensor W;  // [in x out]
  ad::Tensor b;  // [1 x out]

  Linear() = default;
  // Weights ~ N(0, 1/sqrt(in)), bias zero.
  Linear(Eigen::Index in, Eigen::Index out, RngStream& rng);
  static Linear zeros(Eigen::Index in, Eigen::Index out);

  ad::Tensor forward(const ad::Tensor& x) const;
  void collect(const std::string& prefix, ParamMap& out);
};

struct LayerNorm {
  ad::Tensor gain, bias;  // [1 x d]

  LayerNorm() = default;
  explicit LayerNorm(Eigen::Index d);
  ad::Tensor forward(const ad::Tensor& x) const;
  void collect(const std::string& prefix, ParamMap& out);
};

struct MlpConfig {
  int input_dim = 0;
  int output_dim = 0;
  int hidden_dim = 256;
  int hidden_layers = 3;
  double dropout = 0.1;
  bool tanh_output = true;
};

// ReLU hidden stack with optional TanH output squashing; dropout after each
// hidden activation.
struct Mlp {
  MlpConfig cfg;
  std::vector<Linear> layers;

  Mlp() = default;
  Mlp(const MlpConfig& cfg, RngStream& rng);
  ad::Tensor forward(const ad::Tensor& x, RngStream& rng, bool training) const;
  void collect(const std::string& prefix, ParamMap& out);
};

struct TransformerConfig {
  int n_layers = 3;
  int n_heads = 1;
  int embed_dim = 128;
  int context_steps = 20;  // timesteps in the attention window
  double dropout = 0.1;

  void validate() const;
};

struct Block {
  LayerNorm ln1, ln2;
  Linear wq, wk, wv, wo;
  Linear fc1, fc2;  // position-wise MLP, hidden = 4 * embed
};

// Keys/values of every token fed so far, one entry per appended chunk.
struct BlockCache {
  std::vector<ad::Tensor> k_chunks, v_chunks;
};
struct TrunkState {
  std::vector<BlockCache> blocks;
  Eigen::Index tokens = 0;
};

// Pre-norm causal transformer. Tokens are fed in chunks; each chunk attends
// to every cached token plus the causal prefix inside itself, which makes a
// sequence of chunked calls exactly equivalent to one full causal pass.
struct Trunk {
  TransformerConfig cfg;
  std::vector<Block> blocks;
  LayerNorm ln_f;

  Trunk() = default;
  Trunk(const TransformerConfig& cfg, RngStream& rng);

  TrunkState new_state() const;
  // x: [chunk x embed] token embeddings (position already added).
  ad::Tensor forward_chunk(TrunkState& state, const ad::Tensor& x, RngStream& rng,
                           bool training) const;
  void collect(const std::string& prefix, ParamMap& out);
};

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  double grad_clip = 0.25;  // global-norm clip; <= 0 disables
};

class AdamW {
 public:
  AdamW(const AdamWConfig& cfg, const ParamMap& params);

  // Clips the global gradient norm, then applies one decoupled-decay Adam
  // update to every parameter. Throws on non-finite gradients.
  void step(ParamMap& params);
  void zero_grad(ParamMap& params);

  // Pre-clip global norm observed by the latest step().
  double last_grad_norm() const { return last_grad_norm_; }
  std::int64_t steps_taken() const { return t_; }

 private:
  AdamWConfig cfg_;
  std::vector<Mat> m_, v_;
  std::int64_t t_ = 0;
  double last_grad_norm_ = 0.0;
};

// Parameter payloads: {"name": {"shape": [r, c], "data": base64 of row-major
// little-endian doubles}}. Round-trips bit-exactly.
nlohmann::json params_to_json(const ParamMap& params);
void params_from_json(ParamMap& params, const nlohmann::json& j);

nlohmann::json transformer_config_to_json(const TransformerConfig& cfg);
TransformerConfig transformer_config_from_json(const nlohmann::json& j);
nlohmann::json mlp_config_to_json(const MlpConfig& cfg);
MlpConfig mlp_config_from_json(const nlohmann::json& j);

}  // namespace bdt::nn
