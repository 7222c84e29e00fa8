#include "bdt/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

namespace bdt::train {

using nlohmann::json;

double TrainConfig::default_grad_clip(policy::Mode mode) {
  return policy::is_sequence_mode(mode) ? 0.25 : 2.0;
}

void TrainConfig::validate() const {
  policy.validate();
  budget.validate();
  if (steps < 0) throw std::invalid_argument("TrainConfig: steps must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
  if (weight_decay < 0.0) {
    throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
  }
  if (eval_every < 0) throw std::invalid_argument("TrainConfig: eval_every must be >= 0");
  if (eval_every > 0 && eval_episodes < 1) {
    throw std::invalid_argument("TrainConfig: eval_episodes must be >= 1");
  }
  if (eval_cost_slack < 0.0) {
    throw std::invalid_argument("TrainConfig: eval_cost_slack must be >= 0");
  }
  if (target_rtg && !std::isfinite(*target_rtg)) {
    throw std::invalid_argument("TrainConfig: target_rtg must be finite");
  }
}

json TrainConfig::to_json() const {
  json j{{"policy", policy.to_json()},
         {"budget", budget.to_json()},
         {"steps", steps},
         {"batch_size", batch_size},
         {"lr", lr},
         {"weight_decay", weight_decay},
         {"grad_clip", grad_clip},
         {"seed", seed},
         {"force_full_masks", force_full_masks},
         {"eval_every", eval_every},
         {"eval_episodes", eval_episodes},
         {"eval_cost_slack", eval_cost_slack}};
  j["target_rtg"] = target_rtg ? json(*target_rtg) : json(nullptr);
  return j;
}

TrainConfig TrainConfig::from_json(const json& j) {
  static const std::set<std::string> known{
      "policy",     "budget",          "steps",      "batch_size",
      "lr",         "weight_decay",    "grad_clip",  "seed",
      "force_full_masks", "eval_every", "eval_episodes", "eval_cost_slack",
      "target_rtg"};
  for (const auto& item : j.items()) {
    if (!known.count(item.key())) {
      throw std::invalid_argument("TrainConfig: unknown key '" + item.key() + "'");
    }
  }
  TrainConfig c;
  c.policy = policy::PolicyConfig::from_json(j.at("policy"));
  c.budget = j.contains("budget") ? budget::BudgetConfig::from_json(j.at("budget"))
                                  : budget::BudgetConfig{};
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.grad_clip = j.value("grad_clip", default_grad_clip(c.policy.mode));
  c.seed = j.value("seed", c.seed);
  c.force_full_masks = j.value("force_full_masks", c.force_full_masks);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.eval_episodes = j.value("eval_episodes", c.eval_episodes);
  c.eval_cost_slack = j.value("eval_cost_slack", c.eval_cost_slack);
  if (j.contains("target_rtg") && !j.at("target_rtg").is_null()) {
    c.target_rtg = j.at("target_rtg").get<double>();
  }
  c.validate();
  return c;
}

TrainResult train(const TrainConfig& cfg, const data::Dataset& ds) {
  cfg.validate();
  if (ds.episodes.empty()) throw std::invalid_argument("train: dataset is empty");
  if (ds.manifest.m != cfg.policy.m ||
      ds.manifest.action_dim != cfg.policy.action_dim) {
    throw std::invalid_argument("train: dataset dims do not match the policy config");
  }

  // The environment supplies the feature costs and hosts the periodic
  // rollouts; its spec must be the one the dataset was generated under.
  std::unique_ptr<envs::Env> env = eval::eval_env_for(ds.manifest.env_id);
  data::check_spec_match(ds.manifest, env->spec());
  const budget::FeatureSpec features = env->spec().features;

  auto pol = std::make_unique<policy::Policy>(cfg.policy, features, cfg.seed);

  nn::AdamWConfig ocfg;
  ocfg.lr = cfg.lr;
  ocfg.weight_decay = cfg.weight_decay;
  ocfg.grad_clip = cfg.grad_clip;
  nn::AdamW opt(ocfg, pol->params());

  budget::PenaltySchedule sched = budget::PenaltySchedule::from_config(cfg.budget);
  RngStream batch_rng = RngStream::substream(cfg.seed, kBatchSalt);
  RngStream model_rng = RngStream::substream(cfg.seed, kModelSalt);

  const int context = policy::is_sequence_mode(cfg.policy.mode)
                          ? cfg.policy.transformer.context_steps
                          : 1;
  const double target =
      cfg.target_rtg ? *cfg.target_rtg : ds.manifest.score_expert;
  const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);

  TrainResult out;
  std::int64_t last_k = 0;

  for (std::int64_t k = 1; k <= cfg.steps; ++k) {
    std::vector<data::Slice> slices =
        data::sample_batch(ds, cfg.batch_size, context, batch_rng);
    opt.zero_grad(pol->params());

    double sum_delta = 0.0, sum_phi = 0.0, sum_cost = 0.0;
    bool bad = false;
    for (const data::Slice& sl : slices) {
      policy::LossOptions lo;
      lo.gamma = sched.gamma;
      lo.force_full_masks = cfg.force_full_masks;
      lo.training = true;
      policy::LossResult res = pol->sequence_loss(sl, cfg.budget, lo, model_rng);
      if (!std::isfinite(res.delta) || !std::isfinite(res.phi)) {
        bad = true;
        break;
      }
      ad::backward(res.loss * inv_b);
      sum_delta += res.delta;
      sum_phi += res.phi;
      sum_cost += res.mean_probability_cost;
    }
    if (!bad) {
      double sq = 0.0;
      for (const auto& np : pol->params()) {
        if (np.tensor.has_grad()) sq += np.tensor.grad().squaredNorm();
      }
      if (!std::isfinite(sq)) bad = true;
    }
    if (bad) {
      // The step is not applied: the weights stay at their last good state.
      out.aborted = true;
      out.abort_k = k;
      break;
    }

    opt.step(pol->params());
    const double mean_phi = sum_phi * inv_b;
    out.log.push_back({k, sum_delta * inv_b, mean_phi, sched.gamma,
                       sum_cost * inv_b, opt.last_grad_norm()});
    sched.update(mean_phi);
    last_k = k;

    if (cfg.eval_every > 0 && (k % cfg.eval_every == 0 || k == cfg.steps)) {
      eval::RolloutOptions ro;
      ro.episodes = cfg.eval_episodes;
      ro.target_rtg = target;
      ro.seed = data::derive_episode_seed(cfg.seed,
                                          static_cast<std::uint64_t>(k), kEvalSalt);
      ro.ref_random = ds.manifest.score_random;
      ro.ref_expert = ds.manifest.score_expert;
      ro.force_full = cfg.force_full_masks;
      eval::RolloutResult rr = eval::rollout(*pol, *env, ro);

      EvalRow row;
      row.k = k;
      row.score = rr.metrics.mean_score;
      row.mean_cost = rr.metrics.mean_cost;
      row.mean_return = rr.metrics.mean_return;
      row.success_rate = rr.metrics.success_rate;
      row.feasible = row.mean_cost <= cfg.budget.budget + cfg.eval_cost_slack;
      out.evals.push_back(row);

      if (row.feasible && (out.best.k < 0 || row.score > out.best.score)) {
        out.best.k = k;
        out.best.score = row.score;
        out.best.mean_cost = row.mean_cost;
        out.best.feasible = true;
        out.best.params = nn::params_to_json(pol->params());
      }
    }
  }

  if (out.best.k < 0) {
    out.best.k = last_k;
    out.best.feasible = false;
    if (!out.evals.empty()) {
      out.best.score = out.evals.back().score;
      out.best.mean_cost = out.evals.back().mean_cost;
    }
    out.best.params = nn::params_to_json(pol->params());
  }
  out.final_gamma = sched.gamma;
  out.policy = std::move(pol);
  return out;
}

void write_train_log_csv(const std::string& path, const std::vector<LogRow>& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "k,delta,phi,gamma,mean_cost,grad_norm\n";
  for (const LogRow& r : log) {
    out << r.k << ',' << format_double(r.delta) << ',' << format_double(r.phi)
        << ',' << format_double(r.gamma) << ',' << format_double(r.mean_cost)
        << ',' << format_double(r.grad_norm) << '\n';
  }
}

void write_eval_log_csv(const std::string& path, const std::vector<EvalRow>& evals) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "k,score,mean_cost,mean_return,success_rate,feasible\n";
  for (const EvalRow& r : evals) {
    out << r.k << ',' << format_double(r.score) << ',' << format_double(r.mean_cost)
        << ',' << format_double(r.mean_return) << ','
        << format_double(r.success_rate) << ',' << (r.feasible ? 1 : 0) << '\n';
  }
}

std::vector<SweepRow> sweep(const TrainConfig& base, const data::Dataset& ds,
                            const std::vector<double>& constraints,
                            const std::vector<std::uint64_t>& seeds) {
  std::vector<SweepRow> rows;
  for (double c : constraints) {
    for (std::uint64_t s : seeds) {
      SweepRow row;
      row.constraint = c;
      row.seed = s;
      try {
        TrainConfig cfg = base;
        cfg.budget.budget = c;
        cfg.seed = s;
        TrainResult r = train(cfg, ds);
        row.ok = !r.aborted;
        if (r.aborted) {
          row.error = "non-finite loss at step " + std::to_string(r.abort_k);
        }
        row.best_k = r.best.k;
        row.feasible = r.best.feasible;
        row.score = r.best.score;
        row.achieved_cost = r.best.mean_cost;
        row.final_gamma = r.final_gamma;
      } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::vector<SweepAggregate> aggregate_sweep(const std::vector<SweepRow>& rows) {
  std::vector<SweepAggregate> out;
  for (const SweepRow& r : rows) {
    if (!r.ok) continue;
    auto it = std::find_if(out.begin(), out.end(), [&](const SweepAggregate& a) {
      return a.constraint == r.constraint;
    });
    if (it == out.end()) {
      out.push_back({r.constraint, 0, 0.0, 0.0, 0.0, 0.0});
      it = out.end() - 1;
    }
    ++it->runs;
    it->mean_score += r.score;
    it->mean_cost += r.achieved_cost;
  }
  for (SweepAggregate& a : out) {
    a.mean_score /= a.runs;
    a.mean_cost /= a.runs;
  }
  for (const SweepRow& r : rows) {
    if (!r.ok) continue;
    for (SweepAggregate& a : out) {
      if (a.constraint == r.constraint) {
        a.sd_score += (r.score - a.mean_score) * (r.score - a.mean_score);
        a.sd_cost += (r.achieved_cost - a.mean_cost) * (r.achieved_cost - a.mean_cost);
      }
    }
  }
  for (SweepAggregate& a : out) {
    a.sd_score = a.runs > 1 ? std::sqrt(a.sd_score / (a.runs - 1)) : 0.0;
    a.sd_cost = a.runs > 1 ? std::sqrt(a.sd_cost / (a.runs - 1)) : 0.0;
  }
  return out;
}

namespace {

// Error strings land in a comma-separated file; strip the separators.
std::string csv_safe(std::string s) {
  for (char& ch : s) {
    if (ch == ',' || ch == '\n' || ch == '\r') ch = ';';
  }
  return s;
}

}  // namespace

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "constraint,seed,ok,best_k,feasible,score,achieved_cost,final_gamma,error\n";
  for (const SweepRow& r : rows) {
    out << format_double(r.constraint) << ',' << r.seed << ',' << (r.ok ? 1 : 0)
        << ',' << r.best_k << ',' << (r.feasible ? 1 : 0) << ','
        << format_double(r.score) << ',' << format_double(r.achieved_cost) << ','
        << format_double(r.final_gamma) << ',' << csv_safe(r.error) << '\n';
  }
}

void write_sweep_table_csv(const std::string& path,
                           const std::vector<SweepAggregate>& aggs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "constraint,runs,mean_score,sd_score,mean_cost,sd_cost\n";
  for (const SweepAggregate& a : aggs) {
    out << format_double(a.constraint) << ',' << a.runs << ','
        << format_double(a.mean_score) << ',' << format_double(a.sd_score) << ','
        << format_double(a.mean_cost) << ',' << format_double(a.sd_cost) << '\n';
  }
}

}  // namespace bdt::train
