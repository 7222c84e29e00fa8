#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bdt/budget.hpp"

#include <cmath>

using namespace bdt;
namespace bb = bdt::budget;

namespace {
Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

bb::FeatureSpec spec3() {
  return bb::FeatureSpec::make({"a", "b", "c"}, vec({2.0, 1.0, 1.0}));
}
}  // namespace

TEST_CASE("query cost worked examples") {
  auto spec = spec3();
  CHECK(bb::query_cost(vec({1, 0, 1}), spec) == 0.75);
  CHECK(bb::query_cost(vec({1, 1, 1}), spec) == 1.0);  // exact by construction
  CHECK(bb::query_cost(vec({0, 0, 0}), spec) == 0.0);
  CHECK(bb::query_cost(vec({0, 1, 0}), spec) == 0.25);

  // Free (zero-cost) features never change the bill.
  auto with_free = bb::FeatureSpec::make({"free", "a", "b", "c"}, vec({0.0, 2.0, 1.0, 1.0}));
  CHECK(bb::query_cost(vec({1, 1, 0, 1}), with_free) == 0.75);
  CHECK(bb::query_cost(vec({0, 1, 0, 1}), with_free) == 0.75);
}

TEST_CASE("query cost is monotone and bounded") {
  RngStream rng(404);
  for (int trial = 0; trial < 200; ++trial) {
    const int m = 1 + static_cast<int>(rng.integer(12));
    Vec costs(m);
    std::vector<std::string> names;
    for (int i = 0; i < m; ++i) {
      costs(i) = rng.uniform() < 0.2 ? 0.0 : rng.uniform(0.0, 10.0);
      names.push_back("f" + std::to_string(i));
    }
    if (costs.sum() <= 0.0) costs(0) = 1.0;
    auto spec = bb::FeatureSpec::make(names, costs);
    Vec q(m);
    for (int i = 0; i < m; ++i) q(i) = rng.bernoulli(0.5) ? 1.0 : 0.0;
    const double c = bb::query_cost(q, spec);
    CHECK(c >= 0.0);
    CHECK(c <= 1.0);
    for (int i = 0; i < m; ++i) {
      if (q(i) == 0.0) {
        Vec q2 = q;
        q2(i) = 1.0;
        CHECK(bb::query_cost(q2, spec) >= c);
      }
    }
  }
}

TEST_CASE("penalty worked examples") {
  // Two steps, window 2: first window mean 0.8 (prefix), second (0.8+0.2)/2.
  CHECK(bb::penalty({0.8, 0.2}, 0.5, 2) == doctest::Approx(0.15).epsilon(1e-12));
  // Window 1 is the plain per-step hinge mean.
  CHECK(bb::penalty({0.8, 0.2}, 0.5, 1) == doctest::Approx(0.15).epsilon(1e-12));
  CHECK(bb::penalty({0.6, 0.6, 0.6}, 0.5, 1) ==
        doctest::Approx(0.1).epsilon(1e-12));
  // All step costs at or under budget: exactly zero.
  CHECK(bb::penalty({0.5, 0.25, 0.0}, 0.5, 1) == 0.0);
  CHECK(bb::penalty({0.5, 0.25, 0.0}, 0.5, 3) == 0.0);
  CHECK(bb::penalty({}, 0.5, 1) == 0.0);
  // Window longer than the sequence degrades to prefix means.
  CHECK(bb::penalty({1.0, 0.0}, 0.25, 10) ==
        doctest::Approx((0.75 + 0.25) / 2.0).epsilon(1e-12));
  CHECK_THROWS_AS(bb::penalty({0.1}, 0.5, 0), std::invalid_argument);
}

TEST_CASE("penalty is zero whenever the budget is the full range") {
  RngStream rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const int T = 1 + static_cast<int>(rng.integer(30));
    std::vector<double> costs(T);
    for (auto& c : costs) c = rng.uniform();  // in [0,1)
    const int window = 1 + static_cast<int>(rng.integer(5));
    CHECK(bb::penalty(costs, 1.0, window) == 0.0);
    CHECK(bb::penalty(costs, 0.0, window) >= 0.0);
  }
}

TEST_CASE("smoothing window can hide a spike that window 1 catches") {
  const std::vector<double> costs = {0.0, 0.0, 1.0, 0.0, 0.0, 1.0};
  CHECK(bb::penalty(costs, 0.4, 1) > 0.0);
  CHECK(bb::penalty(costs, 0.4, 3) == 0.0);  // every trailing-3 mean <= 1/3
}

TEST_CASE("graph penalty matches the closed form") {
  RngStream rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    const int T = 1 + static_cast<int>(rng.integer(12));
    const int window = 1 + static_cast<int>(rng.integer(4));
    const double budget = rng.uniform();
    std::vector<double> costs(T);
    std::vector<ad::Tensor> cost_ts;
    for (auto& c : costs) {
      c = rng.uniform();
      cost_ts.push_back(ad::scalar(c));
    }
    const double closed = bb::penalty(costs, budget, window);
    const double graph = bb::penalty_t(cost_ts, budget, window).item();
    CHECK(graph == doctest::Approx(closed).epsilon(1e-14));
  }
}

TEST_CASE("graph penalty gradients match finite differences") {
  RngStream rng(55);
  ad::Tensor costs(Mat::NullaryExpr(6, 1, [&](Eigen::Index, Eigen::Index) {
                     return rng.uniform(0.05, 0.95);
                   }),
                   true);
  auto build = [&] {
    std::vector<ad::Tensor> per_step;
    for (int t = 0; t < 6; ++t) per_step.push_back(ad::rows(costs, t, 1));
    return bb::penalty_t(per_step, 0.4, 3);
  };
  costs.zero_grad();
  ad::backward(build());
  REQUIRE(costs.has_grad());
  const double h = 1e-7;
  for (int t = 0; t < 6; ++t) {
    const double saved = costs.value()(t, 0);
    costs.value_mut()(t, 0) = saved + h;
    const double fp = build().item();
    costs.value_mut()(t, 0) = saved - h;
    const double fm = build().item();
    costs.value_mut()(t, 0) = saved;
    const double fd = (fp - fm) / (2 * h);
    CHECK(costs.grad()(t, 0) == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("graph query cost matches closed form and has gradient f/||f||") {
  auto spec = spec3();
  Mat q_row(1, 3);
  q_row << 1, 0, 1;
  ad::Tensor qr(q_row, true);
  ad::Tensor cost = bb::query_cost_t(qr, spec);
  CHECK(cost.item() == 0.75);
  ad::backward(cost);
  CHECK(qr.grad()(0, 0) == 0.5);
  CHECK(qr.grad()(0, 1) == 0.25);
  CHECK(qr.grad()(0, 2) == 0.25);

  ad::Tensor qc(Mat(q_row.transpose()), true);
  CHECK(bb::query_cost_t(qc, spec).item() == 0.75);

  // Probabilities (soft masks) are valid inputs on the training path.
  Mat soft(1, 3);
  soft << 0.5, 0.5, 0.5;
  CHECK(bb::query_cost_t(ad::Tensor(soft), spec).item() == doctest::Approx(0.5));
}

TEST_CASE("budgeted loss composition") {
  ad::Tensor delta = ad::scalar(1.25);
  ad::Tensor phi = ad::scalar(0.5);
  CHECK(bb::budgeted_loss(delta, phi, 0.0).item() == 1.25);
  CHECK(bb::budgeted_loss(delta, phi, 2.0).item() == 2.25);
}

TEST_CASE("masked input encoding") {
  Vec out = bb::masked_input(vec({3, -1, 2}), vec({1, 0, 1}));
  CHECK(out == vec({3, 0, 2, 1, 0, 1}));
  // A genuinely zero observed value is distinguishable from an unqueried one
  // through the indicator half.
  Vec zeroed = bb::masked_input(vec({0, -1, 2}), vec({1, 0, 0}));
  CHECK(zeroed == vec({0, 0, 0, 1, 0, 0}));
  CHECK_THROWS_AS(bb::masked_input(vec({1, 2}), vec({1, 0, 0})), std::invalid_argument);
}

TEST_CASE("feature spec validation") {
  CHECK_THROWS_AS(bb::FeatureSpec::make({"a"}, vec({-1.0})), std::invalid_argument);
  CHECK_THROWS_AS(bb::FeatureSpec::make({"a", "b"}, vec({0.0, 0.0})),
                  std::invalid_argument);
  CHECK_THROWS_AS(bb::FeatureSpec::make({"a", "a"}, vec({1.0, 1.0})),
                  std::invalid_argument);
  CHECK_THROWS_AS(bb::FeatureSpec::make({"a"}, vec({1.0, 2.0})), std::invalid_argument);

  bb::FeatureSpec grouped = spec3();
  grouped.groups = {{0, 2}, {1}};
  CHECK_NOTHROW(grouped.validate());
  grouped.groups = {{0}, {1}};  // feature 2 unassigned
  CHECK_THROWS_AS(grouped.validate(), std::invalid_argument);
  grouped.groups = {{0, 1}, {1, 2}};  // feature 1 twice
  CHECK_THROWS_AS(grouped.validate(), std::invalid_argument);
}

TEST_CASE("grouped features are bought atomically") {
  bb::FeatureSpec spec = spec3();
  spec.groups = {{0, 2}, {1}};
  spec.validate();
  CHECK(spec.n_units() == 2);
  Vec q = spec.expand_units(vec({1, 0}));
  CHECK(q == vec({1, 0, 1}));
  CHECK(bb::query_cost(q, spec) == 0.75);  // cost of the pair {a, c}
  CHECK(spec.expand_units(vec({0, 1})) == vec({0, 1, 0}));
  CHECK_THROWS_AS(spec.expand_units(vec({1, 0, 0})), std::invalid_argument);
}

TEST_CASE("penalty schedule raises gamma only on violating batches") {
  bb::PenaltySchedule sched;
  sched.epsilon = 0.5;
  sched.gamma_max = 1.25;
  CHECK(sched.gamma == 0.0);
  CHECK(sched.k == 1);

  sched.update(0.0);  // satisfied batch
  CHECK(sched.gamma == 0.0);
  CHECK(sched.k == 2);

  sched.update(0.3);
  CHECK(sched.gamma == 0.5);
  sched.update(1e-9);
  CHECK(sched.gamma == 1.0);
  sched.update(0.0);
  CHECK(sched.gamma == 1.0);
  CHECK_FALSE(sched.saturated);

  sched.update(0.1);
  CHECK(sched.gamma == 1.25);  // capped
  CHECK(sched.saturated);
  sched.update(0.1);
  CHECK(sched.gamma == 1.25);
  CHECK(sched.k == 7);
}

TEST_CASE("feature spec json round trip") {
  bb::FeatureSpec spec = spec3();
  spec.groups = {{0, 2}, {1}};
  bb::FeatureSpec back =
      bb::FeatureSpec::from_json(nlohmann::json::parse(spec.to_json().dump()));
  CHECK(back.names == spec.names);
  CHECK(back.costs == spec.costs);
  CHECK(back.groups == spec.groups);
}

TEST_CASE("binary mask check") {
  CHECK(bb::is_binary_mask(vec({1, 0, 1}), 3));
  CHECK_FALSE(bb::is_binary_mask(vec({1, 0.5, 1}), 3));
  CHECK_FALSE(bb::is_binary_mask(vec({1, 0}), 3));
}

TEST_CASE("budget config validation and json round trip") {
  bb::BudgetConfig cfg;
  cfg.budget = 0.25;
  cfg.window = 3;
  cfg.epsilon = 0.01;
  cfg.gamma_max = 5.0;
  cfg.validate();

  bb::BudgetConfig back =
      bb::BudgetConfig::from_json(nlohmann::json::parse(cfg.to_json().dump()));
  CHECK(back.budget == cfg.budget);
  CHECK(back.window == cfg.window);
  CHECK(back.epsilon == cfg.epsilon);
  CHECK(back.gamma_max == cfg.gamma_max);

  auto bad = [](auto mut) {
    bb::BudgetConfig c;
    mut(c);
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  };
  bad([](bb::BudgetConfig& c) { c.budget = -0.1; });
  bad([](bb::BudgetConfig& c) { c.budget = 1.5; });
  bad([](bb::BudgetConfig& c) { c.window = 0; });
  bad([](bb::BudgetConfig& c) { c.epsilon = 0.0; });
  bad([](bb::BudgetConfig& c) { c.gamma_max = 0.0; });

  bb::PenaltySchedule sched = bb::PenaltySchedule::from_config(cfg);
  CHECK(sched.gamma == 0.0);
  CHECK(sched.epsilon == cfg.epsilon);
  CHECK(sched.gamma_max == cfg.gamma_max);
  CHECK(sched.k == 1);
}

TEST_CASE("graph query cost is bitwise identical to the scalar closed form") {
  RngStream rng(0x5eedc0de);
  const int m = 7;
  Vec costs(m);
  for (int i = 0; i < m; ++i) costs(i) = 0.1 + 10.0 * rng.uniform();
  std::vector<std::string> names;
  for (int i = 0; i < m; ++i) names.push_back("f" + std::to_string(i));
  auto spec = bb::FeatureSpec::make(names, costs);

  for (int trial = 0; trial < 200; ++trial) {
    Vec q(m);
    for (int i = 0; i < m; ++i) {
      q(i) = (trial % 2 == 0) ? static_cast<double>(rng.bernoulli(0.5))
                              : rng.uniform();
    }
    double closed = bb::query_cost(q, spec);
    double graph = bb::query_cost_t(ad::Tensor(Mat(q.transpose())), spec).item();
    CHECK(graph == closed);  // same additions in the same order, then one divide
  }
}

TEST_CASE("soft masks never cost more than the full query") {
  // q close to all-ones must not round above 1.0: the schedule relies on
  // penalty being exactly zero at budget 1.0.
  RngStream rng(77);
  for (int m : {1, 3, 11}) {
    Vec costs(m);
    std::vector<std::string> names;
    for (int i = 0; i < m; ++i) {
      costs(i) = 1e-3 + 37.0 * rng.uniform();
      names.push_back("f" + std::to_string(i));
    }
    auto spec = bb::FeatureSpec::make(names, costs);
    for (int trial = 0; trial < 500; ++trial) {
      Vec q(m);
      for (int i = 0; i < m; ++i) {
        q(i) = 1.0 - 1e-16 * rng.uniform();
        if (q(i) > 1.0) q(i) = 1.0;
      }
      double closed = bb::query_cost(q, spec);
      double graph = bb::query_cost_t(ad::Tensor(Mat(q.transpose())), spec).item();
      CHECK(closed <= 1.0);
      CHECK(graph <= 1.0);
      CHECK(graph == closed);
    }
    Vec ones = Vec::Ones(m);
    CHECK(bb::query_cost(ones, spec) == 1.0);
    CHECK(bb::query_cost_t(ad::Tensor(Mat(ones.transpose())), spec).item() == 1.0);
  }
}
