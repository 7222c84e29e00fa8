#include "bdt/policy.hpp"

#include <fstream>

namespace bdt::policy {

using ad::Tensor;
using nlohmann::json;

Mode mode_from_string(const std::string& s) {
  if (s == "bc") return Mode::bc;
  if (s == "rcbc") return Mode::rcbc;
  if (s == "dt") return Mode::dt;
  if (s == "bdt") return Mode::bdt;
  throw std::invalid_argument("unknown policy mode '" + s + "'");
}

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::bc: return "bc";
    case Mode::rcbc: return "rcbc";
    case Mode::dt: return "dt";
    case Mode::bdt: return "bdt";
  }
  throw std::logic_error("bad mode");
}

bool is_sequence_mode(Mode mode) { return mode == Mode::dt || mode == Mode::bdt; }
bool uses_rtg(Mode mode) { return mode != Mode::bc; }
bool learns_acquisition(Mode mode) { return mode != Mode::dt; }

void PolicyConfig::validate() const {
  if (m < 1) throw std::invalid_argument("PolicyConfig: m must be >= 1");
  if (action_dim < 1) throw std::invalid_argument("PolicyConfig: action_dim must be >= 1");
  if (!(rtg_scale > 0.0)) throw std::invalid_argument("PolicyConfig: rtg_scale must be > 0");
  if (is_sequence_mode(mode)) {
    transformer.validate();
  } else {
    if (mlp_hidden < 1 || mlp_layers < 1) {
      throw std::invalid_argument("PolicyConfig: mlp dimensions must be >= 1");
    }
    if (!(mlp_dropout >= 0.0 && mlp_dropout < 1.0)) {
      throw std::invalid_argument("PolicyConfig: mlp_dropout must lie in [0, 1)");
    }
  }
  if (learns_acquisition(mode) && (acq_input_dim < 1 || acq_hidden < 1)) {
    throw std::invalid_argument("PolicyConfig: acquisition head dimensions must be >= 1");
  }
}

json PolicyConfig::to_json() const {
  json j{{"mode", policy::to_string(mode)},
         {"m", m},
         {"action_dim", action_dim},
         {"rtg_scale", rtg_scale}};
  if (is_sequence_mode(mode)) {
    j["transformer"] = nn::transformer_config_to_json(transformer);
  } else {
    j["mlp_hidden"] = mlp_hidden;
    j["mlp_layers"] = mlp_layers;
    j["mlp_dropout"] = mlp_dropout;
  }
  if (learns_acquisition(mode)) {
    j["acq_input_dim"] = acq_input_dim;
    j["acq_hidden"] = acq_hidden;
  }
  return j;
}

PolicyConfig PolicyConfig::from_json(const json& j) {
  PolicyConfig cfg;
  cfg.mode = mode_from_string(j.at("mode").get<std::string>());
  cfg.m = j.at("m").get<int>();
  cfg.action_dim = j.at("action_dim").get<int>();
  cfg.rtg_scale = j.at("rtg_scale").get<double>();
  if (is_sequence_mode(cfg.mode)) {
    cfg.transformer = nn::transformer_config_from_json(j.at("transformer"));
  } else {
    cfg.mlp_hidden = j.at("mlp_hidden").get<int>();
    cfg.mlp_layers = j.at("mlp_layers").get<int>();
    cfg.mlp_dropout = j.at("mlp_dropout").get<double>();
  }
  if (learns_acquisition(cfg.mode)) {
    cfg.acq_input_dim = j.at("acq_input_dim").get<int>();
    cfg.acq_hidden = j.at("acq_hidden").get<int>();
  }
  cfg.validate();
  return cfg;
}

Policy::Policy(const PolicyConfig& cfg, const budget::FeatureSpec& features,
               std::uint64_t seed)
    : cfg_(cfg), features_(features) {
  cfg_.validate();
  features_.validate();
  if (features_.m() != cfg_.m) {
    throw std::invalid_argument("Policy: feature spec has m=" +
                                std::to_string(features_.m()) + ", config says " +
                                std::to_string(cfg_.m));
  }
  const int m = cfg_.m;
  const int units = features_.n_units();

  singleton_groups_ = units == m;
  if (singleton_groups_) {
    for (int u = 0; u < units; ++u) {
      if (features_.groups[u].size() != 1 || features_.groups[u][0] != u) {
        singleton_groups_ = false;
        break;
      }
    }
  }
  if (!singleton_groups_) {
    unit_expand_ = Mat::Zero(units, m);
    for (int u = 0; u < units; ++u) {
      for (int i : features_.groups[u]) unit_expand_(u, i) = 1.0;
    }
  }

  if (is_sequence_mode(cfg_.mode)) {
    const int d = cfg_.transformer.embed_dim;
    {
      RngStream r = RngStream::substream(seed, 0);
      embed_rtg_ = nn::Linear(1, d, r);
    }
    {
      RngStream r = RngStream::substream(seed, 1);
      embed_obs_ = nn::Linear(2 * m, d, r);
    }
    {
      RngStream r = RngStream::substream(seed, 2);
      embed_act_ = nn::Linear(cfg_.action_dim, d, r);
    }
    {
      RngStream r = RngStream::substream(seed, 3);
      Mat p(cfg_.transformer.context_steps, d);
      for (Eigen::Index i = 0; i < p.rows(); ++i) {
        for (Eigen::Index j = 0; j < p.cols(); ++j) p(i, j) = 0.02 * r.normal();
      }
      pos_ = Tensor(p, true);
    }
    {
      RngStream r = RngStream::substream(seed, 4);
      trunk_ = nn::Trunk(cfg_.transformer, r);
    }
    {
      RngStream r = RngStream::substream(seed, 5);
      head_action_ = nn::Linear(d, cfg_.action_dim, r);
    }
    embed_rtg_.collect("embed_rtg", params_);
    embed_obs_.collect("embed_obs", params_);
    embed_act_.collect("embed_act", params_);
    params_.push_back({"pos", pos_});
    trunk_.collect("trunk", params_);
    head_action_.collect("head_action", params_);
    if (learns_acquisition(cfg_.mode)) {
      RngStream r = RngStream::substream(seed, 6);
      head_acq_ = nn::Linear(d, units, r);
      head_acq_.collect("head_acq", params_);
    }
  } else {
    nn::MlpConfig mc;
    mc.input_dim = 2 * m + (uses_rtg(cfg_.mode) ? 1 : 0);
    mc.output_dim = cfg_.action_dim;
    mc.hidden_dim = cfg_.mlp_hidden;
    mc.hidden_layers = cfg_.mlp_layers;
    mc.dropout = cfg_.mlp_dropout;
    mc.tanh_output = true;
    {
      RngStream r = RngStream::substream(seed, 10);
      act_mlp_ = nn::Mlp(mc, r);
    }
    act_mlp_.collect("mlp", params_);
    if (learns_acquisition(cfg_.mode)) {
      {
        RngStream r = RngStream::substream(seed, 11);
        Mat c(1, cfg_.acq_input_dim);
        for (Eigen::Index j = 0; j < c.cols(); ++j) c(0, j) = r.normal();
        acq_input_ = Tensor(c, true);
      }
      nn::MlpConfig ac;
      ac.input_dim = cfg_.acq_input_dim;
      ac.output_dim = units;
      ac.hidden_dim = cfg_.acq_hidden;
      ac.hidden_layers = 1;
      ac.dropout = 0.0;  // deterministic probabilities per step
      ac.tanh_output = false;
      {
        RngStream r = RngStream::substream(seed, 12);
        acq_mlp_ = nn::Mlp(ac, r);
      }
      params_.push_back({"acq_input", acq_input_});
      acq_mlp_.collect("acq_mlp", params_);
    }
  }
}

Tensor Policy::expand_unit_probs(const Tensor& unit_probs) const {
  if (singleton_groups_) return unit_probs;
  return matmul(unit_probs, ad::constant(unit_expand_));
}

Tensor Policy::pos_row(int pos) const {
  if (pos < 0 || pos >= cfg_.transformer.context_steps) {
    throw std::logic_error("position index outside the context window");
  }
  return ad::row(pos_, pos);
}

Tensor Policy::embed_step_rtg(double rtg, int pos) const {
  Mat v(1, 1);
  v(0, 0) = rtg / cfg_.rtg_scale;
  return embed_rtg_.forward(ad::constant(v)) + pos_row(pos);
}

Tensor Policy::embed_obs_row(const Tensor& masked_row, int pos) const {
  return embed_obs_.forward(masked_row) + pos_row(pos);
}

Tensor Policy::embed_act_row(const Tensor& act_row, int pos) const {
  return embed_act_.forward(act_row) + pos_row(pos);
}

Tensor Policy::acq_logits_memoryless(RngStream& rng, bool training) {
  return acq_mlp_.forward(acq_input_, rng, training);
}

LossResult Policy::sequence_loss(const data::Slice& slice,
                                 const budget::BudgetConfig& budget,
                                 const LossOptions& opt, RngStream& rng) {
  if (slice.episode == nullptr || slice.len < 1) {
    throw std::invalid_argument("sequence_loss: slice must cover at least one step");
  }
  if (slice.start < 0 || slice.start + slice.len > slice.episode->length()) {
    throw std::invalid_argument("sequence_loss: slice outside the episode");
  }
  if (slice.episode->obs.cols() != cfg_.m ||
      slice.episode->act.cols() != cfg_.action_dim) {
    throw std::invalid_argument("sequence_loss: episode dims do not match policy");
  }
  return is_sequence_mode(cfg_.mode)
             ? sequence_loss_seq(slice, budget, opt, rng)
             : sequence_loss_memoryless(slice, budget, opt, rng);
}

namespace {

// Draw the unit mask, or replay a recorded (draw - probability) shift so the
// graph stays smooth for finite-difference probes. Either way one rng draw
// per unit is consumed and the shift in effect is appended to the result.
Tensor sample_units(const Tensor& probs, const LossOptions& opt, int t,
                    RngStream& rng, LossResult& res) {
  const Eigen::Index units = probs.value().cols();
  if (opt.st_shifts) {
    const auto& shifts = *opt.st_shifts;
    if (static_cast<std::size_t>(t) >= shifts.size() ||
        shifts[static_cast<std::size_t>(t)].size() != units) {
      throw std::invalid_argument("sequence_loss: st_shifts shape mismatch");
    }
    const Vec& s = shifts[static_cast<std::size_t>(t)];
    for (Eigen::Index i = 0; i < units; ++i) rng.uniform();
    res.step_unit_shifts.push_back(s);
    return probs + ad::constant(Mat(s.transpose()));
  }
  Tensor drawn = ad::bernoulli_straight_through(probs, rng);
  res.step_unit_shifts.push_back(
      Vec((drawn.value() - probs.value()).transpose()));
  return drawn;
}

}  // namespace

LossResult Policy::sequence_loss_seq(const data::Slice& slice,
                                     const budget::BudgetConfig& budget,
                                     const LossOptions& opt, RngStream& rng) {
  const data::Episode& ep = *slice.episode;
  const int T = slice.len;
  if (T > cfg_.transformer.context_steps) {
    throw std::invalid_argument("sequence_loss: slice longer than the context window");
  }
  const bool full = opt.force_full_masks || cfg_.mode == Mode::dt;

  nn::TrunkState state = trunk_.new_state();
  std::vector<Tensor> step_costs;
  step_costs.reserve(T);
  Tensor sq_total = ad::scalar(0.0);
  double prob_cost_sum = 0.0, sampled_cost_sum = 0.0;
  LossResult res;

  for (int t = 0; t < T; ++t) {
    const int step = slice.start + t;
    Tensor h_rtg =
        trunk_.forward_chunk(state, embed_step_rtg(ep.rtg(step), t), rng, opt.training);

    Tensor q_feat;  // [1 x m], binary forward values
    if (full) {
      q_feat = ad::constant(Mat::Ones(1, cfg_.m));
      step_costs.push_back(ad::scalar(1.0));
      prob_cost_sum += 1.0;
      sampled_cost_sum += 1.0;
    } else {
      Tensor probs = ad::sigmoid(head_acq_.forward(h_rtg));  // [1 x units]
      Tensor probs_feat = expand_unit_probs(probs);
      Tensor cost = budget::query_cost_t(probs_feat, features_);
      step_costs.push_back(cost);
      prob_cost_sum += cost.item();
      Tensor units_st = sample_units(probs, opt, t, rng, res);
      q_feat = expand_unit_probs(units_st);
      sampled_cost_sum +=
          budget::query_cost(q_feat.value().transpose(), features_);
    }

    Tensor obs_const = ad::constant(ep.obs.row(step));
    Tensor x_obs = ad::concat_cols({cwise_mul(q_feat, obs_const), q_feat});
    Tensor act_const = ad::constant(ep.act.row(step));
    Tensor chunk =
        ad::concat_rows({embed_obs_row(x_obs, t), embed_act_row(act_const, t)});
    Tensor out = trunk_.forward_chunk(state, chunk, rng, opt.training);
    Tensor pred = ad::tanh(head_action_.forward(ad::row(out, 0)));
    res.step_masks.push_back(q_feat.value().transpose());
    res.step_preds.push_back(pred.value().transpose());
    Tensor diff = pred - act_const;
    sq_total = sq_total + ad::sum(cwise_mul(diff, diff));
  }

  res.steps = T;
  Tensor delta = sq_total * (1.0 / (static_cast<double>(T) * cfg_.action_dim));
  Tensor phi = budget::penalty_t(step_costs, budget.budget, budget.window);
  res.loss = budget::budgeted_loss(delta, phi, opt.gamma);
  res.delta = delta.item();
  res.phi = phi.item();
  res.mean_probability_cost = prob_cost_sum / T;
  res.mean_sampled_cost = sampled_cost_sum / T;
  return res;
}

LossResult Policy::sequence_loss_memoryless(const data::Slice& slice,
                                            const budget::BudgetConfig& budget,
                                            const LossOptions& opt, RngStream& rng) {
  const data::Episode& ep = *slice.episode;
  const int T = slice.len;
  const bool full = opt.force_full_masks;
  if (cfg_.mode == Mode::dt) throw std::logic_error("dt is not a memory-less mode");

  Tensor probs;  // [1 x units], shared across steps: context-free head
  if (!full) {
    probs = ad::sigmoid(acq_logits_memoryless(rng, opt.training));
  }

  std::vector<Tensor> step_costs;
  step_costs.reserve(T);
  Tensor sq_total = ad::scalar(0.0);
  double prob_cost_sum = 0.0, sampled_cost_sum = 0.0;
  LossResult res;

  for (int t = 0; t < T; ++t) {
    const int step = slice.start + t;
    Tensor q_feat;
    if (full) {
      q_feat = ad::constant(Mat::Ones(1, cfg_.m));
      step_costs.push_back(ad::scalar(1.0));
      prob_cost_sum += 1.0;
      sampled_cost_sum += 1.0;
    } else {
      Tensor cost = budget::query_cost_t(expand_unit_probs(probs), features_);
      step_costs.push_back(cost);
      prob_cost_sum += cost.item();
      Tensor units_st = sample_units(probs, opt, t, rng, res);
      q_feat = expand_unit_probs(units_st);
      sampled_cost_sum +=
          budget::query_cost(q_feat.value().transpose(), features_);
    }

    Tensor obs_const = ad::constant(ep.obs.row(step));
    Tensor x = ad::concat_cols({cwise_mul(q_feat, obs_const), q_feat});
    if (uses_rtg(cfg_.mode)) {
      Mat r(1, 1);
      r(0, 0) = ep.rtg(step) / cfg_.rtg_scale;
      x = ad::concat_cols({x, ad::constant(r)});
    }
    Tensor pred = act_mlp_.forward(x, rng, opt.training);
    res.step_masks.push_back(q_feat.value().transpose());
    res.step_preds.push_back(pred.value().transpose());
    Tensor diff = pred - ad::constant(ep.act.row(step));
    sq_total = sq_total + ad::sum(cwise_mul(diff, diff));
  }

  res.steps = T;
  Tensor delta = sq_total * (1.0 / (static_cast<double>(T) * cfg_.action_dim));
  Tensor phi = budget::penalty_t(step_costs, budget.budget, budget.window);
  res.loss = budget::budgeted_loss(delta, phi, opt.gamma);
  res.delta = delta.item();
  res.phi = phi.item();
  res.mean_probability_cost = prob_cost_sum / T;
  res.mean_sampled_cost = sampled_cost_sum / T;
  return res;
}

Tensor Policy::seq_context_forward(nn::TrunkState& state, const EvalHistory& past,
                                   double rtg, RngStream& rng) const {
  const int K = cfg_.transformer.context_steps;
  const int window = std::min<int>(static_cast<int>(past.size()), K - 1);
  const int offset = static_cast<int>(past.size()) - window;
  std::vector<Tensor> tokens;
  tokens.reserve(3 * window);
  for (int i = 0; i < window; ++i) {
    const EvalStep& s = past[offset + i];
    tokens.push_back(embed_step_rtg(s.rtg, i));
    Tensor x = ad::constant(
        budget::masked_input(s.obs_values, s.mask).transpose());
    tokens.push_back(embed_obs_row(x, i));
    tokens.push_back(embed_act_row(ad::constant(s.action.transpose()), i));
  }
  if (!tokens.empty()) {
    trunk_.forward_chunk(state, ad::concat_rows(tokens), rng, false);
  }
  return trunk_.forward_chunk(state, embed_step_rtg(rtg, window), rng, false);
}

budget::QueryMask Policy::acquire(const EvalHistory& past, double rtg,
                                  RngStream& rng, const AcquireOptions& opt) {
  const int m = cfg_.m;
  const int units = features_.n_units();
  if (opt.force_full || cfg_.mode == Mode::dt) return Vec::Ones(m);

  Vec unit_bits(units);
  if (opt.random_rate.has_value()) {
    const double p = *opt.random_rate;
    if (!(p >= 0.0 && p <= 1.0)) {
      throw std::invalid_argument("acquire: random rate must lie in [0, 1]");
    }
    for (int u = 0; u < units; ++u) unit_bits(u) = rng.bernoulli(p) ? 1.0 : 0.0;
    return features_.expand_units(unit_bits);
  }

  ad::NoGradGuard guard;
  Mat probs;
  if (is_sequence_mode(cfg_.mode)) {
    nn::TrunkState state = trunk_.new_state();
    RngStream unused(0);  // dropout is off outside training; consumes nothing
    Tensor h = seq_context_forward(state, past, rtg, unused);
    probs = ad::sigmoid(head_acq_.forward(h)).value();
  } else {
    RngStream unused(0);
    probs = ad::sigmoid(acq_mlp_.forward(acq_input_, unused, false)).value();
  }
  for (int u = 0; u < units; ++u) {
    unit_bits(u) = rng.bernoulli(probs(0, u)) ? 1.0 : 0.0;
  }
  return features_.expand_units(unit_bits);
}

Vec Policy::act(const EvalHistory& past, double rtg, const Vec& obs_values,
                const Vec& mask) {
  if (obs_values.size() != cfg_.m || mask.size() != cfg_.m) {
    throw std::invalid_argument("act: observation size does not match policy");
  }
  ad::NoGradGuard guard;
  RngStream unused(0);
  if (is_sequence_mode(cfg_.mode)) {
    nn::TrunkState state = trunk_.new_state();
    seq_context_forward(state, past, rtg, unused);
    const int window = std::min<int>(static_cast<int>(past.size()),
                                     cfg_.transformer.context_steps - 1);
    Tensor x = ad::constant(budget::masked_input(obs_values, mask).transpose());
    Tensor h = trunk_.forward_chunk(state, embed_obs_row(x, window), unused, false);
    return ad::tanh(head_action_.forward(h)).value().transpose();
  }
  Tensor x = ad::constant(budget::masked_input(obs_values, mask).transpose());
  if (uses_rtg(cfg_.mode)) {
    Mat r(1, 1);
    r(0, 0) = rtg / cfg_.rtg_scale;
    x = ad::concat_cols({x, ad::constant(r)});
  }
  return act_mlp_.forward(x, unused, false).value().transpose();
}

void save_policy(const std::string& path, const Policy& policy,
                 const json& extras) {
  json doc{{"schema_version", 1},
           {"config", policy.config().to_json()},
           {"features", policy.features().to_json()},
           {"extras", extras},
           {"params", nn::params_to_json(policy.params())}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out << doc.dump(2) << '\n';
}

LoadedPolicy load_policy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint " + path + ": " + e.what());
  }
  if (doc.at("schema_version").get<int>() != 1) {
    throw std::runtime_error("checkpoint " + path + ": unsupported schema version");
  }
  LoadedPolicy out;
  PolicyConfig cfg = PolicyConfig::from_json(doc.at("config"));
  budget::FeatureSpec features = budget::FeatureSpec::from_json(doc.at("features"));
  out.policy = std::make_unique<Policy>(cfg, features, 0);
  nn::params_from_json(out.policy->params(), doc.at("params"));
  out.extras = doc.value("extras", json::object());
  return out;
}

}  // namespace bdt::policy
