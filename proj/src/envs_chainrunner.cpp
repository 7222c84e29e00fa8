#include "bdt/envs.hpp"

#include <algorithm>
#include <cmath>

namespace bdt::envs {

namespace {

// 1-D cart with position-dependent drag and a signed drive polarity. The
// drive efficiency saturates near +/-kEtaGain and flips sign along x with a
// per-episode random phase, so the profitable throttle direction cannot be
// assumed: it has to be read from the eta feature (or inferred from how v
// responds). Both drive terms are exposed directly as features; their random
// phases keep them from being recoverable from position alone.
class ChainRunnerEnv final : public Env {
 public:
  static constexpr double kDt = 0.1;
  static constexpr double kDragAmp = 0.4;
  static constexpr double kDragPeriod = 0.9;
  static constexpr double kEtaPeriod = 1.7;
  static constexpr double kEtaGain = 0.9;
  static constexpr double kActionCost = 0.1;
  static constexpr double kKappa = 3.0;
  static constexpr double kXScale = 30.0;
  static constexpr int kHorizon = 60;

  ChainRunnerEnv() {
    spec_.id = "chainrunner";
    spec_.action_dim = 1;
    spec_.horizon = kHorizon;
    spec_.termination = "fixed horizon, no early termination";
    spec_.features = budget::FeatureSpec::uniform({"x", "v", "drag", "eta"});
    reset(0);
  }

  const EnvSpec& spec() const override { return spec_; }

  void reset(std::uint64_t seed) override {
    RngStream rng(seed);
    x_ = rng.uniform(-20.0, 20.0);
    theta_drag_ = rng.uniform(0.0, 2.0 * M_PI);
    theta_eta_ = rng.uniform(0.0, 2.0 * M_PI);
    v_ = 0.0;
    t_ = 0;
    done_ = false;
  }

  StepResult step(const Vec& action) override {
    if (action.size() != 1) throw std::invalid_argument("chainrunner: action must be 1-d");
    if (done_) throw std::logic_error("chainrunner: step after episode end");
    const double a = std::clamp(action(0), -1.0, 1.0);
    StepResult res;
    res.reward = v_ - kActionCost * a * a;  // velocity before the update
    v_ = std::clamp(v_ + kDt * (a * eta(x_) - drag(x_)), -1.0, 1.0);
    x_ += kDt * v_;
    ++t_;
    if (t_ >= kHorizon) done_ = true;
    res.done = done_;
    return res;
  }

  bool done() const override { return done_; }
  int t() const override { return t_; }

  Vec full_observation() override {
    Vec obs(4);
    obs << x_ / kXScale, v_, drag(x_) / kDragAmp, eta(x_) / kEtaGain;
    return obs;
  }

  MaskedObservation observe(const budget::QueryMask& q) override {
    if (!budget::is_binary_mask(q, 4)) {
      throw std::invalid_argument("chainrunner: query mask must be binary of size 4");
    }
    MaskedObservation out;
    out.mask = q;
    out.values = Vec::Zero(4);
    const Vec full = full_observation();
    for (int i = 0; i < 4; ++i) {
      if (q(i) == 1.0) out.values(i) = full(i);
    }
    return out;
  }

  // Velocity servo toward the speed cap with drag feedforward; dividing by
  // the signed efficiency also picks the correct throttle direction.
  Vec expert_action(RngStream&) override {
    Vec a(1);
    const double e = eta(x_);
    a(0) = std::abs(e) < 1e-8
               ? 0.0  // no control authority at a polarity boundary
               : std::clamp((kKappa * (1.0 - v_) + drag(x_)) / e, -1.0, 1.0);
    return a;
  }

  std::unique_ptr<Env> clone() const override {
    return std::make_unique<ChainRunnerEnv>(*this);
  }

 private:
  double drag(double x) const { return kDragAmp * std::sin(x / kDragPeriod + theta_drag_); }
  double eta(double x) const {
    return kEtaGain * std::tanh(3.0 * std::cos(x / kEtaPeriod + theta_eta_));
  }

  EnvSpec spec_;
  double x_ = 0.0, v_ = 0.0, theta_drag_ = 0.0, theta_eta_ = 0.0;
  int t_ = 0;
  bool done_ = false;
};

}  // namespace

std::unique_ptr<Env> make_chainrunner() { return std::make_unique<ChainRunnerEnv>(); }

}  // namespace bdt::envs
