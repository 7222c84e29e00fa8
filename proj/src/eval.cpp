#include "bdt/eval.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace bdt::eval {

void RolloutOptions::validate() const {
  if (episodes < 0) throw std::invalid_argument("rollout: episodes must be >= 0");
  if (ref_expert == ref_random) {
    throw std::invalid_argument("rollout: reference returns must differ");
  }
  if (random_rate && !(*random_rate >= 0.0 && *random_rate <= 1.0)) {
    throw std::invalid_argument("rollout: random_rate must lie in [0, 1]");
  }
}

namespace {

// Sample standard deviation over the values produced by get(e); 0 when
// fewer than two episodes.
template <typename Get>
double sample_sd(int n, double mean, Get get) {
  if (n < 2) return 0.0;
  double ss = 0.0;
  for (int e = 0; e < n; ++e) {
    const double d = get(e) - mean;
    ss += d * d;
  }
  return std::sqrt(ss / (n - 1));
}

}  // namespace

RolloutResult rollout(policy::Policy& policy, const envs::Env& proto,
                      const RolloutOptions& opts) {
  opts.validate();
  const envs::EnvSpec& spec = proto.spec();
  if (spec.features.m() != policy.config().m ||
      spec.action_dim != policy.config().action_dim) {
    throw std::invalid_argument("rollout: policy does not fit environment '" +
                                spec.id + "'");
  }
  const int m = spec.features.m();
  const int horizon = spec.horizon;

  RolloutResult out;
  out.heatmap = Mat::Zero(m, horizon);
  Vec alive = Vec::Zero(horizon);

  policy::AcquireOptions acquire_opts;
  acquire_opts.random_rate = opts.random_rate;
  acquire_opts.force_full = opts.force_full;

  for (int e = 0; e < opts.episodes; ++e) {
    auto env = proto.clone();
    env->reset(data::derive_episode_seed(opts.seed, e, kRolloutEnvSalt));
    RngStream prng(data::derive_episode_seed(opts.seed, e, kRolloutPolicySalt));

    EpisodeMetrics ep;
    policy::EvalHistory hist;
    double target = opts.target_rtg;
    double cost_sum = 0.0;

    while (!env->done()) {
      const Vec mask = policy.acquire(hist, target, prng, acquire_opts);
      envs::MaskedObservation mo = env->observe(mask);
      const Vec action = policy.act(hist, target, mo.values, mask);
      const envs::StepResult sr = env->step(action);

      const int t = ep.length;
      out.heatmap.col(t) += mask;
      alive(t) += 1.0;
      cost_sum += budget::query_cost(mask, spec.features);
      ep.masks.push_back(mask);
      ep.rewards.push_back(sr.reward);
      ep.targets.push_back(target);
      hist.push_back({target, mo.values, mask, action});
      ep.ret += sr.reward;
      target -= sr.reward;
      ++ep.length;
    }

    ep.mean_cost = ep.length > 0 ? cost_sum / ep.length : 0.0;
    ep.score = data::normalized_score(ep.ret, opts.ref_random, opts.ref_expert);
    ep.success = env->success();
    out.episodes.push_back(std::move(ep));
  }

  for (int t = 0; t < horizon; ++t) {
    if (alive(t) > 0.0) out.heatmap.col(t) /= alive(t);
  }

  RolloutMetrics& agg = out.metrics;
  agg.episodes = opts.episodes;
  if (opts.episodes > 0) {
    const int n = opts.episodes;
    double rsum = 0.0, ssum = 0.0, csum = 0.0, lsum = 0.0;
    int succ_known = 0, succ_true = 0;
    for (const EpisodeMetrics& ep : out.episodes) {
      rsum += ep.ret;
      ssum += ep.score;
      csum += ep.mean_cost;
      lsum += ep.length;
      if (ep.success.has_value()) {
        ++succ_known;
        if (*ep.success) ++succ_true;
      }
    }
    agg.mean_return = rsum / n;
    agg.mean_score = ssum / n;
    agg.mean_cost = csum / n;
    agg.mean_length = lsum / n;
    agg.sd_return = sample_sd(n, agg.mean_return,
                              [&](int e) { return out.episodes[e].ret; });
    agg.sd_score = sample_sd(n, agg.mean_score,
                             [&](int e) { return out.episodes[e].score; });
    agg.sd_cost = sample_sd(n, agg.mean_cost,
                            [&](int e) { return out.episodes[e].mean_cost; });
    agg.has_success = succ_known == opts.episodes && succ_known > 0;
    agg.success_rate =
        succ_known > 0 ? static_cast<double>(succ_true) / succ_known : 0.0;
  }
  return out;
}

std::unique_ptr<envs::Env> eval_env_for(const std::string& env_id) {
  if (env_id.rfind("gridnav", 0) == 0) {
    envs::GridNavOptions opts;
    opts.eval_goals = true;
    return envs::make_env(env_id, opts);
  }
  return envs::make_env(env_id);
}

double recompute_mean_cost(const RolloutResult& result,
                           const budget::FeatureSpec& features) {
  if (result.episodes.empty()) return 0.0;
  double total = 0.0;
  for (const EpisodeMetrics& ep : result.episodes) {
    double cost_sum = 0.0;
    for (const Vec& mask : ep.masks) cost_sum += budget::query_cost(mask, features);
    total += ep.masks.empty() ? 0.0
                              : cost_sum / static_cast<double>(ep.masks.size());
  }
  return total / static_cast<double>(result.episodes.size());
}

void write_metrics_csv(const std::string& path, const RolloutResult& result) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "episode,return,score,mean_cost,length,success\n";
  for (std::size_t e = 0; e < result.episodes.size(); ++e) {
    const EpisodeMetrics& ep = result.episodes[e];
    out << e << ',' << format_double(ep.ret) << ',' << format_double(ep.score)
        << ',' << format_double(ep.mean_cost) << ',' << ep.length << ',';
    if (ep.success.has_value()) out << (*ep.success ? 1 : 0);
    out << '\n';
  }
}

void write_heatmap_csv(const std::string& path,
                       const budget::FeatureSpec& features, const Mat& heatmap) {
  if (heatmap.rows() != features.m()) {
    throw std::invalid_argument("heatmap rows do not match the feature spec");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "feature";
  for (Eigen::Index t = 0; t < heatmap.cols(); ++t) out << ",t" << t;
  out << '\n';
  for (Eigen::Index i = 0; i < heatmap.rows(); ++i) {
    out << features.names[static_cast<std::size_t>(i)];
    for (Eigen::Index t = 0; t < heatmap.cols(); ++t) {
      out << ',' << format_double(heatmap(i, t));
    }
    out << '\n';
  }
}

}  // namespace bdt::eval
