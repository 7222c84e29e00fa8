#include "bdt/envs.hpp"

#include <cmath>

namespace bdt::envs {

namespace {

class NoisyTierEnv final : public Env {
 public:
  NoisyTierEnv(std::unique_ptr<Env> base, const NoisyTierConfig& cfg)
      : base_(std::move(base)), cfg_(cfg) {
    const EnvSpec& bs = base_->spec();
    spec_.id = bs.id + "-noisy";
    spec_.action_dim = bs.action_dim;
    spec_.horizon = bs.horizon;
    spec_.termination = bs.termination;
    const int m = bs.features.m();
    std::vector<std::string> names;
    Vec costs(3 * m);
    for (int i = 0; i < m; ++i) {
      const std::string& n = bs.features.names[i];
      names.push_back(n);
      names.push_back(n + "_mid");
      names.push_back(n + "_cheap");
      costs(3 * i) = cfg_.cost_exact;
      costs(3 * i + 1) = cfg_.cost_mid;
      costs(3 * i + 2) = cfg_.cost_cheap;
    }
    spec_.features = budget::FeatureSpec::make(std::move(names), std::move(costs));
    invalidate();
  }

  NoisyTierEnv(const NoisyTierEnv& other)
      : base_(other.base_->clone()),
        cfg_(other.cfg_),
        spec_(other.spec_),
        ep_seed_(other.ep_seed_),
        cached_t_(other.cached_t_),
        base_vals_(other.base_vals_),
        base_have_(other.base_have_) {}

  const EnvSpec& spec() const override { return spec_; }

  void reset(std::uint64_t seed) override {
    ep_seed_ = seed;
    base_->reset(seed);
    invalidate();
  }

  StepResult step(const Vec& action) override {
    StepResult res = base_->step(action);
    invalidate();
    return res;
  }

  bool done() const override { return base_->done(); }
  int t() const override { return base_->t(); }

  Vec full_observation() override {
    return observe(Vec::Ones(spec_.features.m())).values;
  }

  MaskedObservation observe(const budget::QueryMask& q) override {
    const int m3 = spec_.features.m();
    const int m = m3 / 3;
    if (!budget::is_binary_mask(q, m3)) {
      throw std::invalid_argument("noisy wrapper: query mask must be binary of size 3m");
    }
    ensure_base(q);
    MaskedObservation out;
    out.mask = q;
    out.values = Vec::Zero(m3);
    const int step_t = base_->t();
    for (int i = 0; i < m; ++i) {
      for (int tier = 0; tier < 3; ++tier) {
        const int idx = 3 * i + tier;
        if (q(idx) != 1.0) continue;
        double v = base_vals_(i);
        const double sigma = tier == 0 ? 0.0 : (tier == 1 ? cfg_.sigma_mid : cfg_.sigma_cheap);
        if (sigma > 0.0) v += sigma * noise(step_t, idx);
        out.values(idx) = v;
      }
    }
    return out;
  }

  Vec expert_action(RngStream& rng) override { return base_->expert_action(rng); }
  std::uint64_t sensor_ops() const override { return base_->sensor_ops(); }

  std::unique_ptr<Env> clone() const override {
    return std::unique_ptr<Env>(new NoisyTierEnv(*this));
  }

 private:
  void invalidate() {
    const int m = base_->spec().features.m();
    cached_t_ = -1;
    base_vals_ = Vec::Zero(m);
    base_have_ = Vec::Zero(m);
  }

  // Computes (at most once per step) the base features some queried tier
  // depends on; repeated queries in a step reuse the cache.
  void ensure_base(const budget::QueryMask& q) {
    const int m = base_->spec().features.m();
    if (cached_t_ != base_->t()) {
      cached_t_ = base_->t();
      base_have_.setZero();
    }
    Vec need = Vec::Zero(m);
    bool any = false;
    for (int i = 0; i < m; ++i) {
      const bool wanted = q(3 * i) == 1.0 || q(3 * i + 1) == 1.0 || q(3 * i + 2) == 1.0;
      if (wanted && base_have_(i) == 0.0) {
        need(i) = 1.0;
        any = true;
      }
    }
    if (!any) return;
    MaskedObservation mo = base_->observe(need);
    for (int i = 0; i < m; ++i) {
      if (need(i) == 1.0) {
        base_vals_(i) = mo.values(i);
        base_have_(i) = 1.0;
      }
    }
  }

  // Deterministic in (episode seed, step, wrapped feature index).
  double noise(int step_t, int idx) const {
    const std::uint64_t key =
        mix64(ep_seed_ + 0x517cc1b727220a95ULL) ^
        mix64(static_cast<std::uint64_t>(step_t) * 0x2545f4914f6cdd1dULL +
              static_cast<std::uint64_t>(idx));
    RngStream s(mix64(key));
    return s.normal();
  }

  std::unique_ptr<Env> base_;
  NoisyTierConfig cfg_;
  EnvSpec spec_;
  std::uint64_t ep_seed_ = 0;
  int cached_t_ = -1;
  Vec base_vals_, base_have_;
};

}  // namespace

std::unique_ptr<Env> wrap_noisy(std::unique_ptr<Env> base, const NoisyTierConfig& cfg) {
  return std::make_unique<NoisyTierEnv>(std::move(base), cfg);
}

}  // namespace bdt::envs
