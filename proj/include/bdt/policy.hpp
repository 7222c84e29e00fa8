#pragma once

#include "bdt/data.hpp"
#include "bdt/nn.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

// Policy families over one interface: memory-less BC/RCBC MLPs and the
// (budgeted) decision transformer, all with an optional acquisition head
// that prices observation features before the action is computed.
//
// Sequence token layout, per timestep: (rtg, observation, action), causal
// left-to-right. The acquisition head reads the trunk output at the current
// step's rtg token: the desired return is known before any feature of that
// step is bought, so it is the last legal conditioning point for the query
// mask. The action head reads the trunk output at the observation token.
// Positions are window-relative (0..K-1), shared by the three tokens of a
// step, identical between training slices and evaluation-time trailing
// windows.
namespace bdt::policy {

enum class Mode { bc, rcbc, dt, bdt };
Mode mode_from_string(const std::string& s);
std::string to_string(Mode mode);
// bdt/dt run the transformer trunk; bc/rcbc the memory-less MLP.
bool is_sequence_mode(Mode mode);
// bc ignores the reward-to-go entirely.
bool uses_rtg(Mode mode);
// Modes with a learned acquisition head (dt always takes full observations).
bool learns_acquisition(Mode mode);

struct PolicyConfig {
  Mode mode = Mode::bdt;
  int m = 0;           // feature count
  int action_dim = 0;
  double rtg_scale = 100.0;  // rtg tokens are fed as rtg / rtg_scale

  nn::TransformerConfig transformer;  // sequence modes

  // Memory-less action MLP (hidden stack per the baseline recipe).
  int mlp_hidden = 256;
  int mlp_layers = 3;
  double mlp_dropout = 0.1;
  // Memory-less acquisition head: sigmoid MLP applied to a learned constant
  // input; context-free by construction.
  int acq_input_dim = 16;
  int acq_hidden = 64;

  void validate() const;
  nlohmann::json to_json() const;
  static PolicyConfig from_json(const nlohmann::json& j);
};

struct LossOptions {
  double gamma = 0.0;
  // Skip the acquisition path entirely: masks are all-ones constants, the
  // step cost is the constant 1.0 and no mask rng is consumed. Always on in
  // dt mode; exposed so a budgeted model can be pinned to the unconstrained
  // code path for equivalence checks.
  bool force_full_masks = false;
  bool training = true;  // enables dropout
  // Replay hook for gradient checking: when set, step t uses
  // probs + constant(st_shifts[t]) instead of a fresh Bernoulli draw, and
  // the draws the sampler would have consumed are burned so downstream rng
  // stays aligned. With shifts recorded at the same seed and parameters the
  // forward trace is reproduced bit-exactly while the loss becomes a smooth
  // function of the parameters, which a finite-difference oracle requires.
  const std::vector<Vec>* st_shifts = nullptr;  // unit space, one per step
};

struct LossResult {
  ad::Tensor loss;   // scalar graph node: delta + gamma * phi
  double delta = 0.0;  // action MSE term
  double phi = 0.0;    // hinge penalty on the probability-path costs
  double mean_probability_cost = 0.0;  // mean over steps of <q~, f>/||f||_1
  double mean_sampled_cost = 0.0;      // same for the sampled binary masks
  int steps = 0;
  // Per-step forward values, for the causality/masking metamorphic suites:
  // the sampled feature mask and the predicted action at each slice step.
  std::vector<Vec> step_masks;
  std::vector<Vec> step_preds;
  // Unit-space (draw - probability) shifts, one per sampled step; feeding
  // them back through LossOptions::st_shifts reproduces this pass with the
  // draws frozen. Empty when masks are forced full.
  std::vector<Vec> step_unit_shifts;
};

// One evaluation-time step already in the history: the rtg that was targeted,
// the masked observation that was bought, and the action that was executed.
struct EvalStep {
  double rtg = 0.0;
  Vec obs_values;  // zeros where not acquired
  Vec mask;
  Vec action;
};
using EvalHistory = std::vector<EvalStep>;

struct AcquireOptions {
  // iid Bernoulli(rate) masks, ignoring the learned head (ablation mode).
  std::optional<double> random_rate;
  bool force_full = false;
};

class Policy {
 public:
  Policy(const PolicyConfig& cfg, const budget::FeatureSpec& features,
         std::uint64_t seed);

  const PolicyConfig& config() const { return cfg_; }
  const budget::FeatureSpec& features() const { return features_; }
  nn::ParamMap& params() { return params_; }
  const nn::ParamMap& params() const { return params_; }

  // Teacher-forced loss over one context window. Per step: sample the query
  // mask (straight-through), encode [q*o, q], predict the action, accumulate
  // squared error; delta = sum / (steps * action_dim); phi = windowed hinge
  // on the probability-path costs; loss = delta + gamma * phi.
  LossResult sequence_loss(const data::Slice& slice,
                           const budget::BudgetConfig& budget,
                           const LossOptions& opt, RngStream& rng);

  // Evaluation-time mask for the current step, from the trailing history
  // window and the current rtg target. Binary, feature-space. Consumes one
  // Bernoulli draw per acquisition unit (none when forced full).
  budget::QueryMask acquire(const EvalHistory& past, double rtg,
                            RngStream& rng, const AcquireOptions& opt = {});

  // Evaluation-time action for the current step given the acquired
  // observation. Deterministic; TanH-bounded to [-1, 1] per dimension.
  Vec act(const EvalHistory& past, double rtg, const Vec& obs_values,
          const Vec& mask);

 private:
  ad::Tensor acq_logits_memoryless(RngStream& rng, bool training);
  ad::Tensor expand_unit_probs(const ad::Tensor& unit_probs) const;
  // Feeds history steps (and the current rtg token) into a fresh trunk
  // state; returns the trunk output row at the current rtg token.
  ad::Tensor seq_context_forward(nn::TrunkState& state, const EvalHistory& past,
                                 double rtg, RngStream& rng) const;
  ad::Tensor embed_step_rtg(double rtg, int pos) const;
  ad::Tensor embed_obs_row(const ad::Tensor& masked_row, int pos) const;
  ad::Tensor embed_act_row(const ad::Tensor& act_row, int pos) const;
  ad::Tensor pos_row(int pos) const;

  LossResult sequence_loss_seq(const data::Slice& slice,
                               const budget::BudgetConfig& budget,
                               const LossOptions& opt, RngStream& rng);
  LossResult sequence_loss_memoryless(const data::Slice& slice,
                                      const budget::BudgetConfig& budget,
                                      const LossOptions& opt, RngStream& rng);

  PolicyConfig cfg_;
  budget::FeatureSpec features_;
  nn::ParamMap params_;

  // Sequence modes.
  nn::Linear embed_rtg_, embed_obs_, embed_act_;
  ad::Tensor pos_;  // [context_steps x embed]
  nn::Trunk trunk_;
  nn::Linear head_action_;
  nn::Linear head_acq_;  // bdt only: embed -> n_units logits

  // Memory-less modes.
  nn::Mlp act_mlp_;
  ad::Tensor acq_input_;  // learned constant input row
  nn::Mlp acq_mlp_;

  Mat unit_expand_;  // [n_units x m] 0/1 expansion; identity when singleton
  bool singleton_groups_ = true;
};

// Checkpoint: config + feature spec + parameters plus caller-supplied
// provenance (env id, spec hash, budget, target rtg). Self-describing for
// evaluation; byte-stable for identical inputs.
void save_policy(const std::string& path, const Policy& policy,
                 const nlohmann::json& extras);

struct LoadedPolicy {
  std::unique_ptr<Policy> policy;
  nlohmann::json extras;
};
LoadedPolicy load_policy(const std::string& path);

}  // namespace bdt::policy
