#include "bdt/budget.hpp"

#include <set>

namespace bdt::budget {

double FeatureSpec::total_cost() const {
  double total = 0.0;
  for (Eigen::Index i = 0; i < costs.size(); ++i) total += costs(i);
  return total;
}

void FeatureSpec::validate() const {
  if (names.size() != static_cast<std::size_t>(costs.size())) {
    throw std::invalid_argument("FeatureSpec: names/costs length mismatch");
  }
  if (costs.size() == 0) throw std::invalid_argument("FeatureSpec: no features");
  for (Eigen::Index i = 0; i < costs.size(); ++i) {
    if (!(costs(i) >= 0.0)) {
      throw std::invalid_argument("FeatureSpec: cost of '" + names[i] +
                                  "' must be non-negative");
    }
  }
  if (!(total_cost() > 0.0)) {
    throw std::invalid_argument("FeatureSpec: total cost must be positive");
  }
  std::set<std::string> seen(names.begin(), names.end());
  if (seen.size() != names.size()) {
    throw std::invalid_argument("FeatureSpec: duplicate feature names");
  }
  std::vector<int> hit(m(), 0);
  for (const auto& g : groups) {
    if (g.empty()) throw std::invalid_argument("FeatureSpec: empty group");
    for (int idx : g) {
      if (idx < 0 || idx >= m()) throw std::invalid_argument("FeatureSpec: group index out of range");
      if (hit[idx]++) throw std::invalid_argument("FeatureSpec: feature in two groups");
    }
  }
  for (int i = 0; i < m(); ++i) {
    if (!hit[i]) throw std::invalid_argument("FeatureSpec: feature missing from groups");
  }
}

Vec FeatureSpec::expand_units(const Vec& unit_bits) const {
  if (unit_bits.size() != n_units()) {
    throw std::invalid_argument("expand_units: expected " + std::to_string(n_units()) +
                                " unit bits, got " + std::to_string(unit_bits.size()));
  }
  Vec q = Vec::Zero(m());
  for (int u = 0; u < n_units(); ++u) {
    for (int idx : groups[u]) q(idx) = unit_bits(u);
  }
  return q;
}

FeatureSpec FeatureSpec::uniform(std::vector<std::string> names, double cost) {
  FeatureSpec s;
  s.costs = Vec::Constant(static_cast<Eigen::Index>(names.size()), cost);
  s.names = std::move(names);
  s.groups.resize(s.names.size());
  for (int i = 0; i < s.m(); ++i) s.groups[i] = {i};
  s.validate();
  return s;
}

FeatureSpec FeatureSpec::make(std::vector<std::string> names, Vec costs) {
  FeatureSpec s;
  s.names = std::move(names);
  s.costs = std::move(costs);
  s.groups.resize(s.m());
  for (int i = 0; i < s.m(); ++i) s.groups[i] = {i};
  s.validate();
  return s;
}

nlohmann::json FeatureSpec::to_json() const {
  nlohmann::json j;
  j["names"] = names;
  std::vector<double> c(costs.data(), costs.data() + costs.size());
  j["costs"] = c;
  j["groups"] = groups;
  return j;
}

FeatureSpec FeatureSpec::from_json(const nlohmann::json& j) {
  FeatureSpec s;
  s.names = j.at("names").get<std::vector<std::string>>();
  const auto c = j.at("costs").get<std::vector<double>>();
  s.costs = Eigen::Map<const Vec>(c.data(), static_cast<Eigen::Index>(c.size()));
  s.groups = j.at("groups").get<std::vector<std::vector<int>>>();
  s.validate();
  return s;
}

bool is_binary_mask(const QueryMask& q, int m) {
  if (q.size() != m) return false;
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    if (q(i) != 0.0 && q(i) != 1.0) return false;
  }
  return true;
}

double query_cost(const QueryMask& q, const FeatureSpec& spec) {
  if (q.size() != spec.costs.size()) {
    throw std::invalid_argument("query_cost: mask has " + std::to_string(q.size()) +
                                " entries, spec has " + std::to_string(spec.m()));
  }
  double acquired = 0.0;
  for (Eigen::Index i = 0; i < q.size(); ++i) acquired += q(i) * spec.costs(i);
  return acquired / spec.total_cost();
}

double penalty(const std::vector<double>& step_costs, double budget, int window) {
  if (window < 1) throw std::invalid_argument("penalty: window must be >= 1");
  if (step_costs.empty()) return 0.0;
  const int T = static_cast<int>(step_costs.size());
  double total = 0.0;
  for (int t = 0; t < T; ++t) {
    const int lo = t - window + 1 > 0 ? t - window + 1 : 0;
    double sum = 0.0;
    for (int s = lo; s <= t; ++s) sum += step_costs[s];
    const double mean = sum / static_cast<double>(t - lo + 1);
    const double over = mean - budget;
    if (over > 0.0) total += over;
  }
  return total / static_cast<double>(T);
}

ad::Tensor query_cost_t(const ad::Tensor& q, const FeatureSpec& spec) {
  const bool row = q.rows() == 1;
  if ((row && q.cols() != spec.m()) || (!row && (q.cols() != 1 || q.rows() != spec.m()))) {
    throw std::invalid_argument("query_cost_t: mask shape does not match feature count");
  }
  // Accumulated in forward index order with a final true division so the
  // result rounds exactly like query_cost; in particular it never exceeds
  // 1.0 for inputs in [0, 1], which keeps the hinge at C = 1 exactly zero.
  auto at = [&](int i) { return row ? ad::cols(q, i, 1) : ad::rows(q, i, 1); };
  ad::Tensor num = ad::mul_scalar(at(0), spec.costs(0));
  for (int i = 1; i < spec.m(); ++i) {
    num = num + ad::mul_scalar(at(i), spec.costs(i));
  }
  return ad::div_scalar(num, spec.total_cost());
}

ad::Tensor penalty_t(const std::vector<ad::Tensor>& step_costs, double budget,
                     int window) {
  if (window < 1) throw std::invalid_argument("penalty_t: window must be >= 1");
  if (step_costs.empty()) return ad::scalar(0.0);
  const int T = static_cast<int>(step_costs.size());
  ad::Tensor total = ad::scalar(0.0);
  for (int t = 0; t < T; ++t) {
    const int lo = t - window + 1 > 0 ? t - window + 1 : 0;
    ad::Tensor sum = step_costs[lo];
    for (int s = lo + 1; s <= t; ++s) sum = sum + step_costs[s];
    ad::Tensor mean = sum * (1.0 / static_cast<double>(t - lo + 1));
    total = total + ad::max_with_scalar(mean - budget, 0.0);
  }
  return total * (1.0 / static_cast<double>(T));
}

ad::Tensor budgeted_loss(const ad::Tensor& delta, const ad::Tensor& phi, double gamma) {
  return delta + phi * gamma;
}

Vec masked_input(const Vec& obs, const QueryMask& q) {
  if (obs.size() != q.size()) {
    throw std::invalid_argument("masked_input: obs/mask length mismatch");
  }
  const Eigen::Index m = obs.size();
  Vec out(2 * m);
  for (Eigen::Index i = 0; i < m; ++i) out(i) = q(i) * obs(i);
  for (Eigen::Index i = 0; i < m; ++i) out(m + i) = q(i);
  return out;
}

void BudgetConfig::validate() const {
  if (!(budget >= 0.0 && budget <= 1.0)) {
    throw std::invalid_argument("BudgetConfig: budget must lie in [0, 1]");
  }
  if (window < 1) throw std::invalid_argument("BudgetConfig: window must be >= 1");
  if (!(epsilon > 0.0)) throw std::invalid_argument("BudgetConfig: epsilon must be > 0");
  if (!(gamma_max > 0.0)) {
    throw std::invalid_argument("BudgetConfig: gamma_max must be > 0");
  }
}

nlohmann::json BudgetConfig::to_json() const {
  return nlohmann::json{{"budget", budget},
                        {"window", window},
                        {"epsilon", epsilon},
                        {"gamma_max", gamma_max}};
}

BudgetConfig BudgetConfig::from_json(const nlohmann::json& j) {
  BudgetConfig cfg;
  cfg.budget = j.at("budget").get<double>();
  cfg.window = j.at("window").get<int>();
  cfg.epsilon = j.at("epsilon").get<double>();
  cfg.gamma_max = j.at("gamma_max").get<double>();
  cfg.validate();
  return cfg;
}

PenaltySchedule PenaltySchedule::from_config(const BudgetConfig& cfg) {
  PenaltySchedule s;
  s.epsilon = cfg.epsilon;
  s.gamma_max = cfg.gamma_max;
  return s;
}

void PenaltySchedule::update(double batch_penalty) {
  if (batch_penalty > 0.0) {
    gamma = gamma + epsilon < gamma_max ? gamma + epsilon : gamma_max;
    if (gamma == gamma_max) saturated = true;
  }
  ++k;
}

}  // namespace bdt::budget
