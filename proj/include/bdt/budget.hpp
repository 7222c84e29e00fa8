#pragma once

#include "bdt/autodiff.hpp"

#include <json.hpp>

#include <string>
#include <vector>

// Feature-cost bookkeeping: which observation features exist, what each one
// costs to compute, how a binary query mask maps to a normalized per-step
// cost, and the hinge penalty plus its multiplier schedule that turn a cost
// budget into a training signal.
//
// The closed-form functions below accumulate in plain forward-order loops on
// purpose: their outputs are contract values (tested for 64-bit equality
// against naive reference implementations), so they must not pick up
// vectorized reduction reorderings.
namespace bdt::budget {

struct FeatureSpec {
  std::vector<std::string> names;
  Vec costs;  // per-feature computation cost, >= 0, sum > 0
  // Acquisition units: each inner vector is a set of feature indices bought
  // atomically. Defaults to one singleton group per feature.
  std::vector<std::vector<int>> groups;

  int m() const { return static_cast<int>(costs.size()); }
  int n_units() const { return static_cast<int>(groups.size()); }
  double total_cost() const;  // ||f||_1, forward-order sum
  void validate() const;

  // Expands a per-unit binary vector to a per-feature binary mask.
  Vec expand_units(const Vec& unit_bits) const;

  static FeatureSpec uniform(std::vector<std::string> names, double cost = 1.0);
  static FeatureSpec make(std::vector<std::string> names, Vec costs);

  nlohmann::json to_json() const;
  static FeatureSpec from_json(const nlohmann::json& j);
};

// Binary per-feature mask, entries in {0.0, 1.0}.
using QueryMask = Vec;
bool is_binary_mask(const QueryMask& q, int m);

// Normalized cost of one query: <q, costs> / ||costs||_1, in [0, 1].
double query_cost(const QueryMask& q, const FeatureSpec& spec);

// Hinge penalty over an episode or slice of per-step normalized costs.
// Step t is judged on the trailing mean of the last `window` costs (fewer at
// the start when t+1 < window):
//   penalty = (1/T) * sum_t max(window_mean_t - budget, 0)
double penalty(const std::vector<double>& step_costs, double budget, int window);

// Graph-building counterparts used inside the training loss. q may be
// [1 x m] or [m x 1] of acquisition probabilities or sampled bits.
ad::Tensor query_cost_t(const ad::Tensor& q, const FeatureSpec& spec);
ad::Tensor penalty_t(const std::vector<ad::Tensor>& step_costs, double budget,
                     int window);
ad::Tensor budgeted_loss(const ad::Tensor& delta, const ad::Tensor& phi, double gamma);

// Masked input encoding fed to the policies: [q1*o1 .. qm*om, q1 .. qm].
// Unqueried features contribute a zero value and a zero indicator bit.
Vec masked_input(const Vec& obs, const QueryMask& q);

// Constraint parameters carried through training configs and checkpoints.
// budget is the normalized ceiling C; raw per-feature budgets are converted
// with FeatureSpec::total_cost() before they get here.
struct BudgetConfig {
  double budget = 1.0;     // C in [0, 1]
  int window = 1;          // N: trailing steps averaged before the hinge
  double epsilon = 1e-3;   // gamma increment per violating batch
  double gamma_max = 100.0;

  void validate() const;
  nlohmann::json to_json() const;
  static BudgetConfig from_json(const nlohmann::json& j);
};

// Penalty-multiplier schedule: gamma starts at 0 and rises by epsilon after
// every batch whose mean penalty is positive, capped at gamma_max.
struct PenaltySchedule {
  double gamma = 0.0;
  double epsilon = 1e-3;
  double gamma_max = 100.0;
  std::int64_t k = 1;  // batch counter, starts at 1
  bool saturated = false;

  static PenaltySchedule from_config(const BudgetConfig& cfg);
  void update(double batch_penalty);
};

}  // namespace bdt::budget
