#include <CLI11.hpp>

#include "acceptance/criteria.hpp"
#include "bdt/train.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

using namespace bdt;
namespace fs = std::filesystem;
namespace bp = bdt::policy;
using nlohmann::json;

namespace {

// Exit codes: 0 success, 2 configuration or input error, 3 numeric failure
// during training, 4 acceptance-criterion failure.
constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kNumericError = 3;
constexpr int kAcceptanceError = 4;

fs::path out_root() {
  const char* v = std::getenv("BDT_OUT_ROOT");
  return (v && *v) ? fs::path(v) : fs::path("runs");
}

// --out wins; otherwise a deterministic directory name under the output
// root. Existing files are overwritten so reruns stay byte-comparable.
fs::path resolve_out(const std::string& flag, const std::string& def_name) {
  fs::path dir = flag.empty() ? out_root() / def_name : fs::path(flag);
  fs::create_directories(dir);
  return dir;
}

std::uint64_t hash_file(const fs::path& path, std::uint64_t h) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

// Order-fixed FNV over the two dataset files; identifies the exact bytes a
// run trained on.
std::uint64_t dataset_hash(const fs::path& dir) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  h = hash_file(dir / "manifest.json", h);
  return hash_file(dir / "episodes.jsonl", h);
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

std::string num_tag(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// gen-data

struct GenArgs {
  std::string env, quality = "medium", out;
  int episodes = 250, ref_episodes = 100;
  std::uint64_t seed = 0;
};

int run_gen(const GenArgs& a) {
  data::GenConfig cfg;
  cfg.env_id = a.env;
  cfg.quality = envs::quality_from_string(a.quality);
  cfg.episodes = a.episodes;
  cfg.ref_episodes = a.ref_episodes;
  cfg.seed = a.seed;
  data::Dataset ds = data::generate_dataset(cfg);
  fs::path dir = resolve_out(
      a.out, "data-" + a.env + "-" + a.quality + "-e" +
                 std::to_string(a.episodes) + "-s" + std::to_string(a.seed));
  data::write_dataset(ds, dir.string());
  write_json(dir / "config.json",
             json{{"command", "gen-data"},
                  {"env", a.env},
                  {"quality", a.quality},
                  {"episodes", a.episodes},
                  {"ref_episodes", a.ref_episodes},
                  {"seed", a.seed},
                  {"spec_hash", hex64(ds.manifest.spec_hash)},
                  {"score_random", ds.manifest.score_random},
                  {"score_expert", ds.manifest.score_expert}});
  std::cout << "wrote " << ds.episodes.size() << " episodes to " << dir.string()
            << " (expert " << ds.manifest.score_expert << ", random "
            << ds.manifest.score_random << ")\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// train / sweep share the flag surface that assembles a TrainConfig.

struct TrainFlags {
  std::string data, config_file, mode = "bdt", out;
  double budget = 1.0, raw_budget = 0.0, epsilon = 1e-3, gamma_max = 100.0;
  int window = 1;
  long long steps = 50000;
  int batch = 64;
  double lr = 1e-4, weight_decay = 1e-4, grad_clip = 0.25;
  std::uint64_t seed = 0;
  long long eval_every = 1000;
  int eval_episodes = 32;
  double eval_cost_slack = 0.05, target_rtg = 0.0, rtg_scale = 100.0;
  bool force_full = false;
  int layers = 3, heads = 1, embed = 128, context = 20;
  double dropout = 0.1;
  int mlp_hidden = 256, mlp_layers = 3;

  // Option handles, to apply only the flags the user actually set on top of
  // a config file.
  CLI::Option *o_mode = nullptr, *o_budget = nullptr, *o_raw = nullptr,
              *o_window = nullptr, *o_epsilon = nullptr, *o_gamma_max = nullptr,
              *o_steps = nullptr, *o_batch = nullptr, *o_lr = nullptr,
              *o_wd = nullptr, *o_clip = nullptr, *o_seed = nullptr,
              *o_eval_every = nullptr, *o_eval_eps = nullptr,
              *o_slack = nullptr, *o_target = nullptr, *o_rtg_scale = nullptr,
              *o_force = nullptr, *o_layers = nullptr, *o_heads = nullptr,
              *o_embed = nullptr, *o_context = nullptr, *o_dropout = nullptr,
              *o_mlp_hidden = nullptr, *o_mlp_layers = nullptr;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f, bool sweep) {
  cmd->add_option("--data", f.data, "dataset directory (from gen-data)")
      ->required();
  cmd->add_option("--config", f.config_file,
                  "JSON training config; explicit flags override its fields");
  f.o_mode = cmd->add_option("--mode", f.mode, "bc, rcbc, dt or bdt");
  if (!sweep) {
    f.o_budget = cmd->add_option(
        "--budget", f.budget, "normalized per-step cost ceiling C in [0,1]");
    f.o_raw = cmd->add_option("--raw-budget", f.raw_budget,
                              "cost ceiling in raw feature-cost units; "
                              "converted to C via the env's total cost");
    f.o_raw->excludes(f.o_budget);
  }
  f.o_window = cmd->add_option("--window", f.window,
                               "trailing steps the cost constraint averages");
  f.o_epsilon =
      cmd->add_option("--epsilon", f.epsilon, "penalty multiplier increment");
  f.o_gamma_max =
      cmd->add_option("--gamma-max", f.gamma_max, "penalty multiplier cap");
  f.o_steps = cmd->add_option("--steps", f.steps, "optimizer steps");
  f.o_batch = cmd->add_option("--batch", f.batch, "sequences per batch");
  f.o_lr = cmd->add_option("--lr", f.lr, "learning rate");
  f.o_wd = cmd->add_option("--weight-decay", f.weight_decay, "decoupled weight decay");
  f.o_clip = cmd->add_option("--grad-clip", f.grad_clip,
                             "global gradient norm cap; 0 disables");
  f.o_seed = cmd->add_option("--seed", f.seed,
                             sweep ? "base seed; run i uses seed+i" : "training seed");
  f.o_eval_every =
      cmd->add_option("--eval-every", f.eval_every,
                      "steps between checkpoint evaluations; 0 disables");
  f.o_eval_eps = cmd->add_option("--eval-episodes", f.eval_episodes,
                                 "episodes per checkpoint evaluation");
  f.o_slack = cmd->add_option("--eval-cost-slack", f.eval_cost_slack,
                              "cost overshoot tolerated when selecting the "
                              "best checkpoint");
  f.o_target = cmd->add_option("--target-rtg", f.target_rtg,
                               "conditioning return; default: dataset expert "
                               "reference");
  f.o_rtg_scale = cmd->add_option("--rtg-scale", f.rtg_scale,
                                  "divisor applied to rtg model inputs");
  f.o_force = cmd->add_flag("--force-full-masks", f.force_full,
                            "pin every query mask to all-ones");
  f.o_layers = cmd->add_option("--layers", f.layers, "transformer layers");
  f.o_heads = cmd->add_option("--heads", f.heads, "attention heads");
  f.o_embed = cmd->add_option("--embed", f.embed, "embedding width");
  f.o_context = cmd->add_option("--context", f.context, "context steps K");
  f.o_dropout = cmd->add_option("--dropout", f.dropout, "dropout rate");
  f.o_mlp_hidden = cmd->add_option("--mlp-hidden", f.mlp_hidden,
                                   "hidden width of the memory-less nets");
  f.o_mlp_layers = cmd->add_option("--mlp-layers", f.mlp_layers,
                                   "hidden layers of the memory-less nets");
}

train::TrainConfig assemble_train_config(const TrainFlags& f,
                                         const data::Dataset& ds) {
  train::TrainConfig cfg;
  bool from_file = false;
  if (!f.config_file.empty()) {
    std::ifstream in(f.config_file);
    if (!in) throw std::runtime_error("cannot read config " + f.config_file);
    cfg = train::TrainConfig::from_json(json::parse(in));
    from_file = true;
  }
  if (f.o_mode->count()) cfg.policy.mode = bp::mode_from_string(f.mode);
  if (f.o_window->count()) cfg.budget.window = f.window;
  if (f.o_epsilon->count()) cfg.budget.epsilon = f.epsilon;
  if (f.o_gamma_max->count()) cfg.budget.gamma_max = f.gamma_max;
  if (f.o_steps->count()) cfg.steps = f.steps;
  if (f.o_batch->count()) cfg.batch_size = f.batch;
  if (f.o_lr->count()) cfg.lr = f.lr;
  if (f.o_wd->count()) cfg.weight_decay = f.weight_decay;
  if (f.o_seed->count()) cfg.seed = f.seed;
  if (f.o_eval_every->count()) cfg.eval_every = f.eval_every;
  if (f.o_eval_eps->count()) cfg.eval_episodes = f.eval_episodes;
  if (f.o_slack->count()) cfg.eval_cost_slack = f.eval_cost_slack;
  if (f.o_target->count()) cfg.target_rtg = f.target_rtg;
  if (f.o_rtg_scale->count()) cfg.policy.rtg_scale = f.rtg_scale;
  if (f.o_force->count()) cfg.force_full_masks = f.force_full;
  if (f.o_layers->count()) cfg.policy.transformer.n_layers = f.layers;
  if (f.o_heads->count()) cfg.policy.transformer.n_heads = f.heads;
  if (f.o_embed->count()) cfg.policy.transformer.embed_dim = f.embed;
  if (f.o_context->count()) cfg.policy.transformer.context_steps = f.context;
  if (f.o_dropout->count()) {
    cfg.policy.transformer.dropout = f.dropout;
    cfg.policy.mlp_dropout = f.dropout;
  }
  if (f.o_mlp_hidden->count()) cfg.policy.mlp_hidden = f.mlp_hidden;
  if (f.o_mlp_layers->count()) cfg.policy.mlp_layers = f.mlp_layers;

  if (f.o_budget && f.o_budget->count()) cfg.budget.budget = f.budget;
  if (f.o_raw && f.o_raw->count()) {
    const double total = envs::make_env(ds.manifest.env_id)->spec().features.total_cost();
    cfg.budget.budget = f.raw_budget / total;
  }
  // Model dimensions come from the dataset unless a config file pinned them.
  if (cfg.policy.m == 0) cfg.policy.m = ds.manifest.m;
  if (cfg.policy.action_dim == 0) cfg.policy.action_dim = ds.manifest.action_dim;
  if (!from_file && !f.o_clip->count()) {
    cfg.grad_clip = train::TrainConfig::default_grad_clip(cfg.policy.mode);
  } else if (f.o_clip->count()) {
    cfg.grad_clip = f.grad_clip;
  }
  cfg.validate();
  return cfg;
}

json checkpoint_extras(const train::TrainConfig& cfg, const data::Dataset& ds,
                       std::uint64_t data_hash, const std::string& snapshot,
                       std::int64_t snapshot_k) {
  return json{{"env_id", ds.manifest.env_id},
              {"spec_hash", hex64(ds.manifest.spec_hash)},
              {"dataset_hash", hex64(data_hash)},
              {"budget", cfg.budget.to_json()},
              {"target_rtg", cfg.target_rtg.value_or(ds.manifest.score_expert)},
              {"score_random", ds.manifest.score_random},
              {"score_expert", ds.manifest.score_expert},
              {"seed", cfg.seed},
              {"snapshot", snapshot},
              {"snapshot_k", snapshot_k}};
}

int run_train(const TrainFlags& f) {
  data::Dataset ds = data::read_dataset(f.data);
  train::TrainConfig cfg = assemble_train_config(f, ds);
  const std::uint64_t dhash = dataset_hash(f.data);

  fs::path dir = resolve_out(
      f.out, "train-" + bp::to_string(cfg.policy.mode) + "-c" +
                 num_tag(cfg.budget.budget) + "-s" + std::to_string(cfg.seed));
  write_json(dir / "config.json", json{{"command", "train"},
                                       {"data", f.data},
                                       {"dataset_hash", hex64(dhash)},
                                       {"train", cfg.to_json()}});

  train::TrainResult r = train::train(cfg, ds);
  train::write_train_log_csv((dir / "train_log.csv").string(), r.log);
  train::write_eval_log_csv((dir / "eval_log.csv").string(), r.evals);

  const std::int64_t completed = static_cast<std::int64_t>(r.log.size());
  bp::save_policy((dir / "checkpoint_final.json").string(), *r.policy,
                  checkpoint_extras(cfg, ds, dhash, "final", completed));
  bp::Policy best(cfg.policy, r.policy->features(), cfg.seed);
  nn::params_from_json(best.params(), r.best.params);
  json best_extras = checkpoint_extras(cfg, ds, dhash, "best", r.best.k);
  best_extras["score"] = r.best.score;
  best_extras["mean_cost"] = r.best.mean_cost;
  best_extras["feasible"] = r.best.feasible;
  bp::save_policy((dir / "checkpoint_best.json").string(), best, best_extras);

  write_json(dir / "summary.json",
             json{{"aborted", r.aborted},
                  {"abort_k", r.abort_k},
                  {"steps_completed", completed},
                  {"final_gamma", r.final_gamma},
                  {"best",
                   {{"k", r.best.k},
                    {"score", r.best.score},
                    {"mean_cost", r.best.mean_cost},
                    {"feasible", r.best.feasible}}}});
  if (r.aborted) {
    std::cerr << "error: non-finite loss at step " << r.abort_k
              << "; wrote last finite weights to " << dir.string() << "\n";
    return kNumericError;
  }
  std::cout << "trained " << completed << " steps; best k=" << r.best.k
            << " score " << r.best.score << " cost " << r.best.mean_cost
            << "; artifacts in " << dir.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// sweep

int run_sweep(const TrainFlags& f, const std::vector<double>& constraints,
              int n_seeds) {
  data::Dataset ds = data::read_dataset(f.data);
  train::TrainConfig base = assemble_train_config(f, ds);
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < n_seeds; ++i) seeds.push_back(base.seed + i);

  fs::path dir = resolve_out(
      f.out, "sweep-" + bp::to_string(base.policy.mode) + "-s" +
                 std::to_string(base.seed));
  write_json(dir / "config.json", json{{"command", "sweep"},
                                       {"data", f.data},
                                       {"dataset_hash", hex64(dataset_hash(f.data))},
                                       {"constraints", constraints},
                                       {"seeds", seeds},
                                       {"train", base.to_json()}});

  std::vector<train::SweepRow> rows = train::sweep(base, ds, constraints, seeds);
  train::write_sweep_csv((dir / "sweep.csv").string(), rows);
  train::write_sweep_table_csv((dir / "sweep_table.csv").string(),
                               train::aggregate_sweep(rows));
  int failed = 0;
  for (const auto& row : rows) {
    if (!row.ok) {
      ++failed;
      std::cerr << "run C=" << row.constraint << " seed " << row.seed
                << " failed: " << row.error << "\n";
    }
  }
  std::cout << rows.size() - failed << "/" << rows.size()
            << " runs succeeded; tables in " << dir.string() << "\n";
  return failed == 0 ? kOk : kNumericError;
}

// ---------------------------------------------------------------------------
// eval / heatmap

struct EvalArgs {
  std::string ckpt, env, out;
  int episodes = 256;
  std::uint64_t seed = 0;
  double target_rtg = 0.0, ref_random = 0.0, ref_expert = 0.0;
  double random_rate = 0.0;
  bool force_full = false;
  CLI::Option *o_target = nullptr, *o_rr = nullptr, *o_re = nullptr,
              *o_rate = nullptr;
};

void add_eval_flags(CLI::App* cmd, EvalArgs& a) {
  cmd->add_option("--ckpt", a.ckpt, "checkpoint file from train")->required();
  cmd->add_option("--env", a.env,
                  "environment id; default: the checkpoint's env");
  cmd->add_option("--episodes", a.episodes, "rollout episodes");
  cmd->add_option("--seed", a.seed, "evaluation seed");
  a.o_target = cmd->add_option("--target-rtg", a.target_rtg,
                               "conditioning return; default from checkpoint");
  a.o_rr = cmd->add_option("--ref-random", a.ref_random,
                           "random-policy reference return for the score");
  a.o_re = cmd->add_option("--ref-expert", a.ref_expert,
                           "expert-policy reference return for the score");
  a.o_rate = cmd->add_option("--random-acquisition", a.random_rate,
                             "replace the learned masks with iid "
                             "Bernoulli(p) masks");
  cmd->add_flag("--force-full", a.force_full, "acquire every feature");
}

double extras_number(const json& extras, const char* key, const char* flag) {
  if (!extras.contains(key) || !extras[key].is_number()) {
    throw std::runtime_error(std::string("checkpoint lacks '") + key +
                             "'; pass " + flag);
  }
  return extras[key].get<double>();
}

int run_eval(const EvalArgs& a, bool heatmap_only) {
  bp::LoadedPolicy lp = bp::load_policy(a.ckpt);
  std::string env_id = a.env;
  if (env_id.empty()) {
    if (!lp.extras.contains("env_id")) {
      throw std::runtime_error("checkpoint lacks 'env_id'; pass --env");
    }
    env_id = lp.extras["env_id"].get<std::string>();
  }
  auto env = eval::eval_env_for(env_id);
  if (lp.extras.contains("spec_hash") &&
      lp.extras["spec_hash"].get<std::string>() !=
          hex64(data::env_spec_hash(env->spec()))) {
    throw std::runtime_error("checkpoint was trained against a different '" +
                             env_id + "' feature spec");
  }

  eval::RolloutOptions opt;
  opt.episodes = a.episodes;
  opt.seed = a.seed;
  opt.target_rtg = a.o_target->count()
                       ? a.target_rtg
                       : extras_number(lp.extras, "target_rtg", "--target-rtg");
  opt.ref_random = a.o_rr->count()
                       ? a.ref_random
                       : extras_number(lp.extras, "score_random", "--ref-random");
  opt.ref_expert = a.o_re->count()
                       ? a.ref_expert
                       : extras_number(lp.extras, "score_expert", "--ref-expert");
  if (a.o_rate->count()) opt.random_rate = a.random_rate;
  opt.force_full = a.force_full;

  eval::RolloutResult r = eval::rollout(*lp.policy, *env, opt);

  std::string def = std::string(heatmap_only ? "heatmap-" : "eval-") + env_id +
                    "-s" + std::to_string(a.seed);
  if (a.o_rate->count()) def += "-rand" + num_tag(a.random_rate);
  if (a.force_full) def += "-full";
  fs::path dir = resolve_out(a.out, def);

  write_json(dir / "config.json",
             json{{"command", heatmap_only ? "heatmap" : "eval"},
                  {"ckpt", a.ckpt},
                  {"env", env_id},
                  {"episodes", opt.episodes},
                  {"seed", opt.seed},
                  {"target_rtg", opt.target_rtg},
                  {"ref_random", opt.ref_random},
                  {"ref_expert", opt.ref_expert},
                  {"random_rate",
                   a.o_rate->count() ? json(a.random_rate) : json(nullptr)},
                  {"force_full", opt.force_full}});
  eval::write_heatmap_csv((dir / "heatmap.csv").string(),
                          lp.policy->features(), r.heatmap);
  if (!heatmap_only) {
    eval::write_metrics_csv((dir / "metrics.csv").string(), r);
  }
  json summary{{"episodes", r.metrics.episodes},
               {"mean_return", r.metrics.mean_return},
               {"sd_return", r.metrics.sd_return},
               {"mean_score", r.metrics.mean_score},
               {"sd_score", r.metrics.sd_score},
               {"mean_cost", r.metrics.mean_cost},
               {"sd_cost", r.metrics.sd_cost},
               {"mean_length", r.metrics.mean_length},
               {"recomputed_mean_cost",
                eval::recompute_mean_cost(r, lp.policy->features())}};
  if (r.metrics.has_success) summary["success_rate"] = r.metrics.success_rate;
  write_json(dir / "summary.json", summary);

  if (!std::isfinite(r.metrics.mean_return)) {
    std::cerr << "error: non-finite evaluation return\n";
    return kNumericError;
  }
  std::cout << "score " << r.metrics.mean_score << " cost "
            << r.metrics.mean_cost << " over " << r.metrics.episodes
            << " episodes; artifacts in " << dir.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// verify

int run_verify(const std::string& filter, const std::string& out) {
  if (!out.empty()) {
    fs::create_directories(out);
    setenv("BDT_ACCEPT_DIR", out.c_str(), 1);
  }
  int failures = 0, ran = 0;
  for (const auto& c : accept::criteria()) {
    if (!filter.empty() &&
        std::string(c.name).find(filter) == std::string::npos) {
      continue;
    }
    ++ran;
    accept::CriterionResult r;
    try {
      r = c.run();
    } catch (const std::exception& e) {
      r.name = c.name;
      r.passed = false;
      r.detail = std::string("exception: ") + e.what();
    }
    accept::print_result(r);
    if (!r.passed) ++failures;
  }
  if (ran == 0) {
    std::cerr << "error: no criterion matches '" << filter << "'\n";
    return kConfigError;
  }
  std::cout << (ran - failures) << "/" << ran << " criteria passed\n";
  return failures == 0 ? kOk : kAcceptanceError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Offline training of budget-constrained policies: dataset generation, "
      "training, evaluation, constraint sweeps and release verification"};
  app.require_subcommand(1);

  GenArgs gen;
  CLI::App* cmd_gen =
      app.add_subcommand("gen-data", "roll scripted episodes into a dataset");
  cmd_gen->add_option("--env", gen.env, "environment id")
      ->required()
      ->check(CLI::IsMember(envs::env_ids()));
  cmd_gen->add_option("--quality", gen.quality, "random, medium or expert")
      ->check(CLI::IsMember({"random", "medium", "expert"}));
  cmd_gen->add_option("--episodes", gen.episodes, "episodes to record");
  cmd_gen->add_option("--ref-episodes", gen.ref_episodes,
                      "episodes behind the random/expert reference returns");
  cmd_gen->add_option("--seed", gen.seed, "generation seed");
  cmd_gen->add_option("--out", gen.out, "output directory");

  TrainFlags tf;
  CLI::App* cmd_train =
      app.add_subcommand("train", "train one policy on a dataset");
  add_train_flags(cmd_train, tf, false);
  cmd_train->add_option("--out", tf.out, "output directory");

  TrainFlags sf;
  std::vector<double> constraints{1.0, 0.75, 0.5, 0.25};
  int n_seeds = 3;
  CLI::App* cmd_sweep = app.add_subcommand(
      "sweep", "train across cost constraints and seeds, tabulate scores");
  add_train_flags(cmd_sweep, sf, true);
  cmd_sweep->add_option("--constraints", constraints,
                        "normalized budgets, e.g. 0.25,0.5,0.75,1.0")
      ->delimiter(',');
  cmd_sweep->add_option("--seeds", n_seeds, "number of seeds per constraint");
  cmd_sweep->add_option("--out", sf.out, "output directory");

  EvalArgs ea;
  CLI::App* cmd_eval =
      app.add_subcommand("eval", "roll out a checkpoint and score it");
  add_eval_flags(cmd_eval, ea);
  cmd_eval->add_option("--out", ea.out, "output directory");

  EvalArgs ha;
  CLI::App* cmd_heat = app.add_subcommand(
      "heatmap", "acquisition-frequency matrix of a checkpoint");
  add_eval_flags(cmd_heat, ha);
  cmd_heat->add_option("--out", ha.out, "output directory");

  std::string verify_filter, verify_out;
  CLI::App* cmd_verify =
      app.add_subcommand("verify", "run the acceptance criteria");
  cmd_verify->add_option("--filter", verify_filter,
                         "run only criteria whose name contains this");
  cmd_verify->add_option("--out", verify_out,
                         "artifact directory (default $BDT_ACCEPT_DIR)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (cmd_gen->parsed()) return run_gen(gen);
    if (cmd_train->parsed()) return run_train(tf);
    if (cmd_sweep->parsed()) return run_sweep(sf, constraints, n_seeds);
    if (cmd_eval->parsed()) return run_eval(ea, false);
    if (cmd_heat->parsed()) return run_eval(ha, true);
    if (cmd_verify->parsed()) return run_verify(verify_filter, verify_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  }
  return kConfigError;
}
