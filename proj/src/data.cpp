#include "bdt/data.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace bdt::data {

using nlohmann::json;

void Episode::recompute_rtg() { rtg = reward_to_go(rew); }

Vec reward_to_go(const Vec& rewards) {
  const int T = static_cast<int>(rewards.size());
  if (T < 1) throw std::invalid_argument("reward_to_go: need at least one reward");
  Vec out(T);
  out(T - 1) = rewards(T - 1);
  for (int t = T - 2; t >= 0; --t) out(t) = rewards(t) + out(t + 1);
  return out;
}

double normalized_score(double s, double s_random, double s_expert) {
  if (s_expert == s_random) {
    throw std::invalid_argument("normalized_score: reference scores coincide");
  }
  return 100.0 * (s - s_random) / (s_expert - s_random);
}

std::uint64_t env_spec_hash(const envs::EnvSpec& spec) {
  std::ostringstream os;
  os << "env-spec-v1|" << spec.id << '|' << spec.action_dim << '|' << spec.horizon;
  os << "|features";
  for (int i = 0; i < spec.features.m(); ++i) {
    os << '|' << spec.features.names[i] << '=' << format_double(spec.features.costs(i));
  }
  os << "|groups";
  for (const auto& g : spec.features.groups) {
    os << '|';
    for (std::size_t i = 0; i < g.size(); ++i) os << (i ? "," : "") << g[i];
  }
  return fnv1a64(os.str());
}

void check_spec_match(const DatasetManifest& manifest, const envs::EnvSpec& spec) {
  if (manifest.env_id != spec.id) {
    throw std::runtime_error("dataset env '" + manifest.env_id +
                             "' does not match environment '" + spec.id + "'");
  }
  if (manifest.spec_hash != env_spec_hash(spec)) {
    throw std::runtime_error("dataset spec hash " + hex64(manifest.spec_hash) +
                             " does not match environment spec hash " +
                             hex64(env_spec_hash(spec)));
  }
}

Episode record_episode(envs::Env& env, envs::Quality q, std::uint64_t ep_seed) {
  env.reset(ep_seed);
  RngStream act_rng = RngStream::substream(ep_seed, kActionRngIndex);
  const int m = env.spec().features.m();
  const int A = env.spec().action_dim;
  std::vector<Vec> obs, act;
  std::vector<double> rew;
  while (!env.done()) {
    obs.push_back(env.full_observation());
    Vec a = envs::scripted_action(env, q, act_rng);
    rew.push_back(env.step(a).reward);
    act.push_back(std::move(a));
  }
  Episode ep;
  ep.seed = ep_seed;
  ep.quality = envs::to_string(q);
  const int T = static_cast<int>(rew.size());
  ep.obs.resize(T, m);
  ep.act.resize(T, A);
  ep.rew.resize(T);
  for (int t = 0; t < T; ++t) {
    ep.obs.row(t) = obs[t].transpose();
    ep.act.row(t) = act[t].transpose();
    ep.rew(t) = rew[t];
  }
  if (!ep.obs.allFinite() || !ep.act.allFinite() || !ep.rew.allFinite()) {
    throw std::runtime_error("record_episode: non-finite value in recorded episode");
  }
  ep.recompute_rtg();
  return ep;
}

double reference_mean_return(envs::Env& env, envs::Quality q, int episodes,
                             std::uint64_t seed) {
  if (episodes < 1) throw std::invalid_argument("reference_mean_return: episodes >= 1");
  const std::uint64_t salt =
      q == envs::Quality::expert ? kRefExpertSalt : kRefRandomSalt;
  double total = 0.0;
  for (int i = 0; i < episodes; ++i) {
    const std::uint64_t ep_seed = derive_episode_seed(seed, i, salt);
    env.reset(ep_seed);
    RngStream rng = RngStream::substream(ep_seed, kActionRngIndex);
    while (!env.done()) total += env.step(envs::scripted_action(env, q, rng)).reward;
  }
  return total / episodes;
}

Dataset generate_dataset(const GenConfig& cfg) {
  if (cfg.episodes < 0) throw std::invalid_argument("generate_dataset: episodes >= 0");
  auto env = envs::make_env(cfg.env_id);
  Dataset ds;
  ds.manifest.env_id = cfg.env_id;
  ds.manifest.spec_hash = env_spec_hash(env->spec());
  ds.manifest.episodes = cfg.episodes;
  ds.manifest.quality = envs::to_string(cfg.quality);
  ds.manifest.seed = cfg.seed;
  ds.manifest.ref_episodes = cfg.ref_episodes;
  ds.manifest.m = env->spec().features.m();
  ds.manifest.action_dim = env->spec().action_dim;
  ds.manifest.horizon = env->spec().horizon;
  ds.manifest.score_random =
      reference_mean_return(*env, envs::Quality::random, cfg.ref_episodes, cfg.seed);
  ds.manifest.score_expert =
      reference_mean_return(*env, envs::Quality::expert, cfg.ref_episodes, cfg.seed);
  ds.episodes.reserve(cfg.episodes);
  for (int i = 0; i < cfg.episodes; ++i) {
    ds.episodes.push_back(
        record_episode(*env, cfg.quality, derive_episode_seed(cfg.seed, i, kDataEpisodeSalt)));
  }
  return ds;
}

namespace {

json manifest_to_json(const DatasetManifest& man) {
  return json{{"schema_version", man.schema_version},
              {"env_id", man.env_id},
              {"spec_hash", hex64(man.spec_hash)},
              {"episodes", man.episodes},
              {"quality", man.quality},
              {"seed", man.seed},
              {"ref_episodes", man.ref_episodes},
              {"score_random", man.score_random},
              {"score_expert", man.score_expert},
              {"m", man.m},
              {"action_dim", man.action_dim},
              {"horizon", man.horizon}};
}

DatasetManifest manifest_from_json(const json& j) {
  DatasetManifest man;
  man.schema_version = j.at("schema_version").get<int>();
  if (man.schema_version != 1) {
    throw std::runtime_error("manifest: unsupported schema_version " +
                             std::to_string(man.schema_version));
  }
  man.env_id = j.at("env_id").get<std::string>();
  man.spec_hash = std::stoull(j.at("spec_hash").get<std::string>(), nullptr, 16);
  man.episodes = j.at("episodes").get<int>();
  man.quality = j.at("quality").get<std::string>();
  man.seed = j.at("seed").get<std::uint64_t>();
  man.ref_episodes = j.at("ref_episodes").get<int>();
  man.score_random = j.at("score_random").get<double>();
  man.score_expert = j.at("score_expert").get<double>();
  man.m = j.at("m").get<int>();
  man.action_dim = j.at("action_dim").get<int>();
  man.horizon = j.at("horizon").get<int>();
  return man;
}

json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (int r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Mat mat_from_json(const json& j, int expect_cols, const char* what) {
  const int rows = static_cast<int>(j.size());
  Mat m(rows, expect_cols);
  for (int r = 0; r < rows; ++r) {
    const json& row = j.at(r);
    if (static_cast<int>(row.size()) != expect_cols) {
      throw std::runtime_error(std::string(what) + " row " + std::to_string(r) +
                               " has " + std::to_string(row.size()) +
                               " entries, expected " + std::to_string(expect_cols));
    }
    for (int c = 0; c < expect_cols; ++c) m(r, c) = row.at(c).get<double>();
  }
  return m;
}

}  // namespace

void write_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream out(fs::path(dir) / "manifest.json", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + dir + "/manifest.json");
    out << manifest_to_json(ds.manifest).dump(2) << '\n';
  }
  std::ofstream out(fs::path(dir) / "episodes.jsonl", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + dir + "/episodes.jsonl");
  for (const Episode& ep : ds.episodes) {
    json line{{"obs", mat_to_json(ep.obs)},
              {"act", mat_to_json(ep.act)},
              {"rew", json::array()},
              {"meta", json{{"env", ds.manifest.env_id},
                            {"quality", ep.quality},
                            {"seed", ep.seed}}}};
    for (int t = 0; t < ep.rew.size(); ++t) line["rew"].push_back(ep.rew(t));
    out << line.dump() << '\n';
  }
}

Dataset read_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  Dataset ds;
  {
    std::ifstream in(fs::path(dir) / "manifest.json", std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + dir + "/manifest.json");
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw std::runtime_error(dir + "/manifest.json: " + e.what());
    }
    ds.manifest = manifest_from_json(j);
  }
  std::ifstream in(fs::path(dir) / "episodes.jsonl", std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + dir + "/episodes.jsonl");
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      Episode ep;
      ep.obs = mat_from_json(j.at("obs"), ds.manifest.m, "obs");
      ep.act = mat_from_json(j.at("act"), ds.manifest.action_dim, "act");
      const json& rew = j.at("rew");
      ep.rew.resize(static_cast<int>(rew.size()));
      for (int t = 0; t < ep.rew.size(); ++t) ep.rew(t) = rew.at(t).get<double>();
      if (ep.obs.rows() != ep.rew.size() || ep.act.rows() != ep.rew.size()) {
        throw std::runtime_error("obs/act/rew lengths disagree");
      }
      if (ep.rew.size() == 0) throw std::runtime_error("empty episode");
      const json& meta = j.at("meta");
      ep.quality = meta.at("quality").get<std::string>();
      ep.seed = meta.at("seed").get<std::uint64_t>();
      ep.recompute_rtg();
      ds.episodes.push_back(std::move(ep));
    } catch (const std::exception& e) {
      throw std::runtime_error(dir + "/episodes.jsonl line " +
                               std::to_string(lineno) + ": " + e.what());
    }
  }
  if (static_cast<int>(ds.episodes.size()) != ds.manifest.episodes) {
    throw std::runtime_error(dir + ": manifest declares " +
                             std::to_string(ds.manifest.episodes) +
                             " episodes, file has " +
                             std::to_string(ds.episodes.size()));
  }
  return ds;
}

std::vector<Slice> sample_batch(const Dataset& ds, int batch_size, int context,
                                RngStream& rng) {
  if (ds.episodes.empty()) throw std::invalid_argument("sample_batch: empty dataset");
  if (batch_size < 1 || context < 1) {
    throw std::invalid_argument("sample_batch: batch_size and context must be >= 1");
  }
  std::vector<Slice> out;
  out.reserve(batch_size);
  for (int b = 0; b < batch_size; ++b) {
    const Episode& ep = ds.episodes[rng.integer(ds.episodes.size())];
    const int L = ep.length();
    const int max_start = std::max(0, L - context);
    Slice s;
    s.episode = &ep;
    s.start = static_cast<int>(rng.integer(max_start + 1));
    s.len = std::min(context, L - s.start);
    out.push_back(s);
  }
  return out;
}

}  // namespace bdt::data
