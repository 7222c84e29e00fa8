#pragma once

#include "bdt/budget.hpp"

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

// Simulated environments with per-feature computation costs. Observations
// are never pushed to the agent; the agent asks for a feature subset via a
// query mask and only those features are computed (GridNav instruments its
// ray tracer so tests can prove laziness). Scripted controllers that read
// privileged simulator state are attached for offline data collection; they
// are data collectors, not baselines under the budget.
namespace bdt::envs {

struct StepResult {
  double reward = 0.0;
  bool done = false;
};

struct MaskedObservation {
  Vec values;            // zero where unqueried
  budget::QueryMask mask;
};

struct EnvSpec {
  std::string id;
  int action_dim = 0;
  int horizon = 0;
  budget::FeatureSpec features;
  std::string termination;  // human-readable termination semantics
};

class Env {
 public:
  virtual ~Env() = default;
  virtual const EnvSpec& spec() const = 0;

  // Deterministic: the seed fixes every episode-level random choice.
  virtual void reset(std::uint64_t seed) = 0;
  virtual StepResult step(const Vec& action) = 0;
  virtual bool done() const = 0;
  virtual int t() const = 0;

  virtual Vec full_observation() = 0;
  virtual MaskedObservation observe(const budget::QueryMask& q) = 0;

  // Privileged scripted controller used for data collection.
  virtual Vec expert_action(RngStream& rng) = 0;

  // Monotone counter of expensive sensor computations (GridNav ray marches);
  // 0 for environments without instrumented sensors.
  virtual std::uint64_t sensor_ops() const { return 0; }

  // Whether the episode ended in the designated success state, for
  // environments that have one (GridNav: goal reached before the horizon).
  virtual std::optional<bool> success() const { return std::nullopt; }

  virtual std::unique_ptr<Env> clone() const = 0;
};

enum class Quality { expert, medium, random };
Quality quality_from_string(const std::string& s);
std::string to_string(Quality q);

// expert: scripted controller; random: uniform in [-1,1]^A;
// medium: expert with probability 0.7, uniform otherwise.
Vec scripted_action(Env& env, Quality q, RngStream& rng);

// ---------------------------------------------------------------------------
// GridNav: 8-heading pose on a 2-D cell grid with lava/water hazards, walls
// and a goal pool. Free pose features plus 48 priced raycasts (8 directions
// x 6 ranges).

// Plain-text map format, version 1: equal-length rows of
//   .  ground        #  wall          L  lava (deadly)
//   W  water (deadly)    G  goal-pool cell   S  start-pool cell
//   K  keyed hazard (cells come in same-column pairs; each episode one cell
//      of the pair is lava and the other is ground)
struct GridMap {
  int width = 0, height = 0;
  std::vector<char> cells;  // row-major
  std::vector<std::pair<int, int>> starts, goals;      // (x, y), scan order
  std::vector<std::array<int, 4>> keyed_pairs;         // x, y_north, x, y_south

  static GridMap parse(const std::string& text);
  char at(int x, int y) const;
  bool in_bounds(int x, int y) const;
};

const std::string& gridnav_default_map();
const std::string& gridnav_keyed_map();

// Shortest 8-connected path length avoiding walls and deadly cells;
// -1 when unreachable. keyed_north_active[i] tells which half of keyed pair
// i is currently lava.
int grid_bfs_distance(const GridMap& map, std::pair<int, int> from,
                      std::pair<int, int> to,
                      const std::vector<bool>& keyed_north_active);

struct GridNavOptions {
  bool eval_goals = false;       // odd-indexed goal-pool cells
  std::optional<std::string> map_text;  // overrides the built-in map
};

// ---------------------------------------------------------------------------
// ChainRunner: 1-D cart on an endless track, drive force scaled by a
// position-dependent efficiency and opposed by a position-dependent drag.
// Reward is forward velocity minus an action cost; fixed 60-step episodes.
// Features: position, velocity, and the two sinusoidal drive terms (drag and
// efficiency), all cost 1. Each episode randomizes the phases of the drive
// terms, so position alone does not reveal them.

// ---------------------------------------------------------------------------
// Noisy-tier wrapper: every base feature is exposed in three versions with
// descending price and ascending noise. Noise is deterministic in
// (episode seed, step, feature index). Base features are computed lazily,
// once per step, and only when some tier of them is queried.
struct NoisyTierConfig {
  double cost_exact = 20.0, cost_mid = 5.0, cost_cheap = 1.0;
  double sigma_mid = 0.1, sigma_cheap = 1.0;
};

std::unique_ptr<Env> wrap_noisy(std::unique_ptr<Env> base, const NoisyTierConfig& cfg);

// Factory over the registered ids: gridnav, gridnav-keyed, chainrunner,
// chainrunner-noisy. GridNav options apply to the gridnav ids only.
std::unique_ptr<Env> make_env(const std::string& id,
                              const GridNavOptions& grid_opts = {});
std::vector<std::string> env_ids();

std::unique_ptr<Env> make_gridnav(const GridNavOptions& opts, bool keyed);
std::unique_ptr<Env> make_chainrunner();

}  // namespace bdt::envs
