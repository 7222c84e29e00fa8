#pragma once

#include "bdt/data.hpp"
#include "bdt/eval.hpp"
#include "bdt/policy.hpp"

#include <json.hpp>

#include <memory>
#include <optional>
#include <string>
#include <vector>

// The budgeted training loop. Per batch: sample slices, run the sequence
// loss with the current multiplier, take one optimizer step over the mean
// slice loss, then raise the multiplier if the batch-mean penalty was
// positive. Deterministic end to end: identical (config, seed, dataset)
// produce identical logs and checkpoints byte for byte.
namespace bdt::train {

// Substream salts (see data::derive_episode_seed for the derivation).
inline constexpr std::uint64_t kBatchSalt = 0x7a1b001;
inline constexpr std::uint64_t kModelSalt = 0x7a1b002;
inline constexpr std::uint64_t kEvalSalt = 0x7a1b003;

struct TrainConfig {
  policy::PolicyConfig policy;
  budget::BudgetConfig budget;
  int steps = 50000;
  int batch_size = 64;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double grad_clip = 0.25;  // 0.25 for the transformer family, 2.0 for MLPs
  std::uint64_t seed = 0;
  // Pin the unconstrained code path (all-ones masks, cost 1.0). dt mode
  // takes it implicitly; exposing it lets a budgeted model be trained as a
  // bit-exact control run.
  bool force_full_masks = false;
  int eval_every = 1000;  // rollout cadence; 0 disables model selection
  int eval_episodes = 32;
  // A snapshot qualifies for best-checkpoint selection only when its
  // achieved rollout cost is within this margin of the budget.
  double eval_cost_slack = 0.05;
  std::optional<double> target_rtg;  // default: dataset expert reference

  static double default_grad_clip(policy::Mode mode);
  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct LogRow {
  std::int64_t k = 0;      // 1-based batch counter
  double delta = 0.0;      // batch mean action term
  double phi = 0.0;        // batch mean penalty
  double gamma = 0.0;      // multiplier used for this batch (pre-update)
  double mean_cost = 0.0;  // batch mean probability-path cost
  double grad_norm = 0.0;  // pre-clip global norm
};

struct EvalRow {
  std::int64_t k = 0;
  double score = 0.0;      // mean normalized score over rollout episodes
  double mean_cost = 0.0;  // sampled binary-mask cost
  double mean_return = 0.0;
  double success_rate = 0.0;
  bool feasible = false;   // mean_cost <= budget + eval_cost_slack
};

struct BestSnapshot {
  std::int64_t k = -1;
  double score = 0.0;
  double mean_cost = 0.0;
  bool feasible = false;
  nlohmann::json params;  // nn::params_to_json at the snapshot
};

struct TrainResult {
  std::unique_ptr<policy::Policy> policy;  // final weights
  std::vector<LogRow> log;
  std::vector<EvalRow> evals;
  // Highest-scoring feasible snapshot; falls back to the final weights
  // (feasible=false, k = last completed batch) when nothing qualified or
  // evaluation was disabled.
  BestSnapshot best;
  bool aborted = false;        // non-finite loss or gradients
  std::int64_t abort_k = -1;   // batch at which training stopped
  double final_gamma = 0.0;
};

TrainResult train(const TrainConfig& cfg, const data::Dataset& ds);

void write_train_log_csv(const std::string& path, const std::vector<LogRow>& log);
void write_eval_log_csv(const std::string& path, const std::vector<EvalRow>& evals);

// Constraint sweep: one run per (constraint, seed), failures recorded as
// rows rather than aborting the sweep.
struct SweepRow {
  double constraint = 1.0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;       // nonempty when the run failed or aborted
  std::int64_t best_k = -1;
  bool feasible = false;
  double score = 0.0;
  double achieved_cost = 0.0;
  double final_gamma = 0.0;
};

std::vector<SweepRow> sweep(const TrainConfig& base, const data::Dataset& ds,
                            const std::vector<double>& constraints,
                            const std::vector<std::uint64_t>& seeds);

// Per-constraint aggregation over the runs that finished, in first-seen
// constraint order; sd is the sample standard deviation over seeds.
struct SweepAggregate {
  double constraint = 1.0;
  int runs = 0;
  double mean_score = 0.0, sd_score = 0.0;
  double mean_cost = 0.0, sd_cost = 0.0;
};

std::vector<SweepAggregate> aggregate_sweep(const std::vector<SweepRow>& rows);
void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows);
void write_sweep_table_csv(const std::string& path,
                           const std::vector<SweepAggregate>& aggs);

}  // namespace bdt::train
