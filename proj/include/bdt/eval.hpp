#pragma once

#include "bdt/data.hpp"
#include "bdt/envs.hpp"
#include "bdt/policy.hpp"

#include <optional>
#include <string>
#include <vector>

// Closed-loop evaluation: roll the policy in the environment under its own
// acquisition masks, decrement the reward-to-go target by received rewards,
// and account costs from the sampled binary masks. Episodes use rng streams
// derived from the master seed, so they are order-independent and the loop
// could fan out to workers without changing results.
namespace bdt::eval {

// Salts for per-episode stream derivation (see data::derive_episode_seed).
inline constexpr std::uint64_t kRolloutEnvSalt = 0x0e7a1001;
inline constexpr std::uint64_t kRolloutPolicySalt = 0x0e7a1002;

struct RolloutOptions {
  int episodes = 256;
  double target_rtg = 0.0;  // initial desired return, decremented per step
  std::uint64_t seed = 0;
  // Reference returns anchoring the normalized score (random -> 0,
  // expert -> 100); taken from the dataset manifest.
  double ref_random = 0.0;
  double ref_expert = 1.0;
  std::optional<double> random_rate;  // iid Bernoulli(p) masks, ablation
  bool force_full = false;            // full-feature evaluation

  void validate() const;
};

struct EpisodeMetrics {
  double ret = 0.0;
  double score = 0.0;      // normalized
  double mean_cost = 0.0;  // time-average of per-step mask costs
  int length = 0;
  std::optional<bool> success;
  // Per-step records for independent audits: the sampled mask, the reward
  // received, and the rtg target the policy saw (target[t] must equal
  // target[0] minus the rewards before t).
  std::vector<Vec> masks;
  std::vector<double> rewards;
  std::vector<double> targets;
};

struct RolloutMetrics {
  int episodes = 0;
  double mean_return = 0.0, sd_return = 0.0;
  double mean_score = 0.0, sd_score = 0.0;
  double mean_cost = 0.0, sd_cost = 0.0;
  double mean_length = 0.0;
  bool has_success = false;
  double success_rate = 0.0;
};

struct RolloutResult {
  RolloutMetrics metrics;
  // [m x horizon] acquisition frequency of feature i at step t, averaged
  // over the episodes still running at t; entries in [0, 1].
  Mat heatmap;
  std::vector<EpisodeMetrics> episodes;
};

RolloutResult rollout(policy::Policy& policy, const envs::Env& proto,
                      const RolloutOptions& opts);

// Environment instance for held-out evaluation: GridNav ids draw goals from
// the eval pool, everything else is the plain environment.
std::unique_ptr<envs::Env> eval_env_for(const std::string& env_id);

// Re-derives the aggregate mean cost from the logged per-episode masks with
// the same accumulation order the rollout used; equal 64-bit for 64-bit.
double recompute_mean_cost(const RolloutResult& result,
                           const budget::FeatureSpec& features);

// CSV artifacts. Deterministic formatting: re-exporting the same result is
// byte-identical.
void write_metrics_csv(const std::string& path, const RolloutResult& result);
void write_heatmap_csv(const std::string& path,
                       const budget::FeatureSpec& features, const Mat& heatmap);

}  // namespace bdt::eval
