#pragma once

#include "bdt/envs.hpp"

#include <cstdint>
#include <string>
#include <vector>

// Offline dataset layer: scripted-policy episode recording, reward-to-go,
// score normalization, JSONL persistence and context-window batching.
//
// Episodes store full (unmasked) observations; query masking is applied by
// the policies at training and evaluation time, never in storage.
namespace bdt::data {

// Seed derivation contract (part of the on-disk format: the manifest's
// reference scores must be reproducible from the creation seed alone).
// Episode i of a dataset runs on env seed mix64(seed ^ mix64(i + salt)),
// with the salt below per role; the data-collection policy's rng is
// RngStream::substream(ep_seed, kActionRngIndex).
inline constexpr std::uint64_t kDataEpisodeSalt = 0x0d47a001;
inline constexpr std::uint64_t kRefExpertSalt = 0x0d47a002;
inline constexpr std::uint64_t kRefRandomSalt = 0x0d47a003;
inline constexpr std::uint64_t kActionRngIndex = 7;

inline std::uint64_t derive_episode_seed(std::uint64_t seed, std::uint64_t index,
                                         std::uint64_t salt) {
  return mix64(seed ^ mix64(index + salt));
}

struct Episode {
  Mat obs;   // T x m, full observations as seen by the collector
  Mat act;   // T x action_dim
  Vec rew;   // T
  Vec rtg;   // T, recomputed after load/recording, never serialized
  std::uint64_t seed = 0;
  std::string quality;

  int length() const { return static_cast<int>(rew.size()); }
  double total_reward() const { return rew.size() ? rew.sum() : 0.0; }
  void recompute_rtg();
};

// Undiscounted suffix sums: out_t = sum_{t' >= t} r_{t'}. T >= 1.
Vec reward_to_go(const Vec& rewards);

// 100 * (s - s_random) / (s_expert - s_random); throws when the reference
// scores coincide.
double normalized_score(double s, double s_random, double s_expert);

struct DatasetManifest {
  int schema_version = 1;
  std::string env_id;
  std::uint64_t spec_hash = 0;  // env_spec_hash of the generating env
  int episodes = 0;
  std::string quality;      // collection policy quality
  std::uint64_t seed = 0;   // creation seed; all episode seeds derive from it
  int ref_episodes = 0;     // rollouts behind each reference score
  double score_random = 0.0;
  double score_expert = 0.0;
  int m = 0;
  int action_dim = 0;
  int horizon = 0;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Episode> episodes;
};

// FNV-1a over a canonical rendering of the spec (id, dims, horizon, feature
// names/costs/groups). Train/eval refuse datasets whose hash disagrees with
// the env they are about to use.
std::uint64_t env_spec_hash(const envs::EnvSpec& spec);
void check_spec_match(const DatasetManifest& manifest, const envs::EnvSpec& spec);

struct GenConfig {
  std::string env_id;
  envs::Quality quality = envs::Quality::medium;
  int episodes = 250;
  std::uint64_t seed = 0;
  int ref_episodes = 100;
};

// Rolls out the scripted policy per the seed contract above and records
// full-observation episodes plus the random/expert reference scores.
Dataset generate_dataset(const GenConfig& cfg);

Episode record_episode(envs::Env& env, envs::Quality q, std::uint64_t ep_seed);
double reference_mean_return(envs::Env& env, envs::Quality q, int episodes,
                             std::uint64_t seed);

// Directory layout: <dir>/manifest.json + <dir>/episodes.jsonl, one episode
// per line with schema {"obs": [[..]], "act": [[..]], "rew": [..],
// "meta": {"env": .., "quality": .., "seed": ..}}. Doubles are written with
// shortest round-trip formatting, so write -> read -> write is byte-stable.
void write_dataset(const Dataset& ds, const std::string& dir);
Dataset read_dataset(const std::string& dir);

// A context window into an episode. Windows keep their true length instead
// of carrying padding rows: start is uniform over [0, max(0, L - K)], so a
// window is shorter than K only when the whole episode is. Positions beyond
// len contribute no loss, matching a front-padded layout with the pad
// excluded.
struct Slice {
  const Episode* episode = nullptr;
  int start = 0;
  int len = 0;
};

std::vector<Slice> sample_batch(const Dataset& ds, int batch_size, int context,
                                RngStream& rng);

}  // namespace bdt::data
