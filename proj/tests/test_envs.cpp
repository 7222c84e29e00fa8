#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bdt/envs.hpp"

#include <cmath>
#include <cstring>
#include <set>

using namespace bdt;
using namespace bdt::envs;

namespace {

double rollout_return(Env& env, Quality q, std::uint64_t seed) {
  env.reset(seed);
  RngStream rng(seed ^ 0xabcdef);
  double total = 0.0;
  while (!env.done()) {
    total += env.step(scripted_action(env, q, rng)).reward;
  }
  return total;
}

double mean_return(Env& env, Quality q, int episodes, std::uint64_t seed0) {
  double total = 0.0;
  for (int i = 0; i < episodes; ++i) total += rollout_return(env, q, seed0 + i);
  return total / episodes;
}

int heading_from_obs(const Vec& o) {
  for (int h = 0; h < 8; ++h) {
    if (std::abs(std::sin(h * M_PI / 4) - o(2)) < 1e-9 &&
        std::abs(std::cos(h * M_PI / 4) - o(3)) < 1e-9) {
      return h;
    }
  }
  throw std::logic_error("unrecognized heading");
}

// One step of "face east and advance" driving from observations only.
void step_east(Env& env) {
  Vec o = env.full_observation();
  int delta = (2 - heading_from_obs(o) + 8) % 8;
  if (delta > 4) delta -= 8;
  Vec a(2);
  if (std::abs(delta) <= 2) {
    a << delta / 2.0, 1.0;
  } else {
    a << (delta > 0 ? 1.0 : -1.0), -1.0;
  }
  env.step(a);
}

int x_from_obs(const Vec& o, int width) {
  return static_cast<int>(std::lround((o(0) + 1.0) / 2.0 * (width - 1)));
}

const std::string kTinyMap =
    "#######\n"
    "#S..L.#\n"
    "#.#.W.#\n"
    "#..G..#\n"
    "#..G..#\n"
    "#######\n";

std::unique_ptr<Env> tiny_env() {
  GridNavOptions opts;
  opts.map_text = kTinyMap;
  return make_gridnav(opts, false);
}

// Resets until the agent faces the requested heading (heading is seeded).
std::uint64_t reset_with_heading(Env& env, int want, std::uint64_t from = 0) {
  for (std::uint64_t seed = from; seed < from + 200; ++seed) {
    env.reset(seed);
    if (heading_from_obs(env.full_observation()) == want) return seed;
  }
  throw std::logic_error("no seed with requested heading");
}

}  // namespace

TEST_CASE("map parsing and validation") {
  GridMap def = GridMap::parse(gridnav_default_map());
  CHECK(def.width == 16);
  CHECK(def.height == 16);
  CHECK(def.starts.size() == 3);
  CHECK(def.goals.size() == 4);
  CHECK(def.keyed_pairs.empty());

  GridMap keyed = GridMap::parse(gridnav_keyed_map());
  CHECK(keyed.width == 46);
  CHECK(keyed.height == 18);
  CHECK(keyed.goals.size() == 4);
  REQUIRE(keyed.keyed_pairs.size() == 3);
  for (const auto& p : keyed.keyed_pairs) {
    CHECK(p[0] == p[2]);  // same column
    CHECK(p[1] == 3);
    CHECK(p[3] == 15);
  }

  CHECK_THROWS_AS(GridMap::parse("###\n##\n"), std::invalid_argument);
  CHECK_THROWS_AS(GridMap::parse("#S?G#\n"), std::invalid_argument);
  CHECK_THROWS_AS(GridMap::parse("#..G#\n"), std::invalid_argument);  // no start
  CHECK_THROWS_AS(GridMap::parse("#S..#\n"), std::invalid_argument);  // no goal
  CHECK_THROWS_AS(GridMap::parse("#SKG#\n"), std::invalid_argument);  // unpaired K
}

TEST_CASE("every start reaches every goal on both shipped maps") {
  for (const std::string* text : {&gridnav_default_map(), &gridnav_keyed_map()}) {
    GridMap map = GridMap::parse(*text);
    const int n_pairs = static_cast<int>(map.keyed_pairs.size());
    for (int pattern = 0; pattern < (1 << n_pairs); ++pattern) {
      std::vector<bool> north(n_pairs);
      for (int i = 0; i < n_pairs; ++i) north[i] = (pattern >> i) & 1;
      for (const auto& s : map.starts) {
        for (const auto& g : map.goals) {
          INFO("map w=", map.width, " start=(", s.first, ",", s.second, ") goal=(",
               g.first, ",", g.second, ") pattern=", pattern);
          CHECK(grid_bfs_distance(map, s, g, north) > 0);
        }
      }
    }
  }
}

TEST_CASE("gridnav resets are seed-deterministic") {
  auto a = make_env("gridnav");
  auto b = make_env("gridnav");
  a->reset(42);
  b->reset(42);
  Vec oa = a->full_observation(), ob = b->full_observation();
  CHECK(std::memcmp(oa.data(), ob.data(), sizeof(double) * oa.size()) == 0);

  bool differs = false;
  for (std::uint64_t s = 43; s < 50 && !differs; ++s) {
    b->reset(s);
    differs = (b->full_observation() - oa).cwiseAbs().maxCoeff() > 0;
  }
  CHECK(differs);
}

TEST_CASE("train and eval goal pools are disjoint") {
  GridMap map = GridMap::parse(gridnav_default_map());
  auto goals_seen = [&](bool eval_goals) {
    GridNavOptions opts;
    opts.eval_goals = eval_goals;
    auto env = make_gridnav(opts, false);
    std::set<std::pair<int, int>> seen;
    for (std::uint64_t s = 0; s < 64; ++s) {
      env->reset(s);
      Vec o = env->full_observation();
      const int x = x_from_obs(o, map.width);
      const int y = static_cast<int>(std::lround((o(1) + 1.0) / 2.0 * (map.height - 1)));
      const int gx = x + static_cast<int>(std::lround(o(4) * (map.width - 1)));
      const int gy = y + static_cast<int>(std::lround(o(5) * (map.height - 1)));
      seen.insert({gx, gy});
    }
    return seen;
  };
  auto train = goals_seen(false), eval = goals_seen(true);
  CHECK(train.size() == 2);
  CHECK(eval.size() == 2);
  for (const auto& g : train) CHECK(eval.count(g) == 0);
}

TEST_CASE("gridnav step semantics on a pocket map") {
  auto env = tiny_env();

  SUBCASE("turning changes heading only") {
    reset_with_heading(*env, 0);
    Vec a(2);
    a << 0.5, -1.0;  // +45 degrees, no move
    env->step(a);
    Vec o = env->full_observation();
    CHECK(heading_from_obs(o) == 1);
    CHECK(x_from_obs(o, 7) == 1);
  }

  SUBCASE("walls block movement") {
    reset_with_heading(*env, 0);  // facing the top wall at (1,1)
    Vec a(2);
    a << 0.0, 1.0;
    env->step(a);
    Vec o = env->full_observation();
    CHECK(x_from_obs(o, 7) == 1);
    CHECK(std::lround((o(1) + 1.0) / 2.0 * 5) == 1);
  }

  SUBCASE("moving toward the goal pays +1 per new best distance") {
    reset_with_heading(*env, 4);  // south, toward the goal region
    StepResult r = env->step((Vec(2) << 0.0, 1.0).finished());
    CHECK(r.reward == 1.0);
    CHECK_FALSE(r.done);
    // Standing still cannot improve the best distance.
    StepResult r2 = env->step((Vec(2) << 0.0, -1.0).finished());
    CHECK(r2.reward == 0.0);
  }

  SUBCASE("lava ends the episode at -10") {
    reset_with_heading(*env, 2);
    // From (1,1) facing east: three forward steps reach the lava at (4,1).
    env->step((Vec(2) << 0.0, 1.0).finished());
    env->step((Vec(2) << 0.0, 1.0).finished());
    StepResult r = env->step((Vec(2) << 0.0, 1.0).finished());
    CHECK(r.reward == -10.0);
    CHECK(r.done);
    CHECK(env->done());
  }

  SUBCASE("expert reaches the goal with the +10 bonus") {
    env->reset(reset_with_heading(*env, 2));
    RngStream rng(0);
    double total = 0.0, last = 0.0;
    while (!env->done()) {
      last = env->step(env->expert_action(rng)).reward;
      total += last;
    }
    CHECK(last == 10.0);
    CHECK(total >= 10.0);
  }
}

TEST_CASE("gridnav ray geometry") {
  auto env = tiny_env();
  reset_with_heading(*env, 2);  // at (1,1)
  Vec o = env->full_observation();
  const int ray_e_5 = 6 + 2 * 6 + 1;
  const int ray_e_1 = 6 + 2 * 6 + 0;
  const int ray_n_1 = 6 + 0 * 6 + 0;
  const int ray_s_5 = 6 + 4 * 6 + 1;
  const int ray_se_5 = 6 + 3 * 6 + 1;
  CHECK(o(ray_e_5) == -3.0 / 5.0);  // lava at distance 3
  CHECK(o(ray_e_1) == 1.0);         // nothing within one cell
  CHECK(o(ray_n_1) == 1.0);         // wall at distance 1 reads 1/1
  CHECK(o(ray_s_5) == 4.0 / 5.0);   // wall at distance 4
  CHECK(o(ray_se_5) == 1.0 / 5.0);  // wall diagonal at distance 1
}

TEST_CASE("gridnav computes only queried rays") {
  auto env = make_env("gridnav");
  env->reset(3);
  const int m = env->spec().features.m();

  Vec none = Vec::Zero(m);
  none.head(6).setOnes();  // free features only
  std::uint64_t before = env->sensor_ops();
  MaskedObservation mo = env->observe(none);
  CHECK(env->sensor_ops() - before == 0);

  Vec two = none;
  two(6) = 1.0;
  two(17) = 1.0;
  before = env->sensor_ops();
  mo = env->observe(two);
  CHECK(env->sensor_ops() - before == 2);

  before = env->sensor_ops();
  Vec full = env->full_observation();
  CHECK(env->sensor_ops() - before == 48);

  // Queried entries agree with the full observation; others are zero.
  CHECK(mo.values(6) == full(6));
  CHECK(mo.values(17) == full(17));
  CHECK(mo.values(20) == 0.0);
}

TEST_CASE("keyed junction is readable only through long rays") {
  GridMap map = GridMap::parse(gridnav_keyed_map());
  const int ray_n_10 = 6 + 0 * 6 + 2;
  const int ray_n_5 = 6 + 0 * 6 + 1;
  const int ray_s_10 = 6 + 4 * 6 + 2;
  bool saw_north_hazard = false, saw_south_hazard = false;
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    auto env = make_env("gridnav-keyed");
    env->reset(seed);
    for (int guard = 0; guard < 40; ++guard) {
      if (x_from_obs(env->full_observation(), map.width) == 10) break;
      step_east(*env);
    }
    Vec o = env->full_observation();
    REQUIRE(x_from_obs(o, map.width) == 10);
    CHECK(o(ray_n_5) == 1.0);  // hazard is out of short-ray reach
    const double n10 = o(ray_n_10), s10 = o(ray_s_10);
    if (n10 < 0.0) {
      saw_north_hazard = true;
      CHECK(n10 == -6.0 / 10.0);
      CHECK(s10 == 8.0 / 10.0);  // clear shaft, wall past the branch row
    } else {
      saw_south_hazard = true;
      CHECK(s10 == -6.0 / 10.0);
      CHECK(n10 == 8.0 / 10.0);
    }
  }
  CHECK(saw_north_hazard);
  CHECK(saw_south_hazard);
}

TEST_CASE("keyed expert survives and scores on every seed") {
  auto env = make_env("gridnav-keyed");
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const double ret = rollout_return(*env, Quality::expert, seed);
    INFO("seed ", seed);
    CHECK(ret >= 10.0);  // reached the goal, never died
  }
}

TEST_CASE("scripted quality ordering on gridnav") {
  auto env = make_env("gridnav");
  const double expert = mean_return(*env, Quality::expert, 30, 100);
  const double medium = mean_return(*env, Quality::medium, 30, 100);
  const double random = mean_return(*env, Quality::random, 30, 100);
  CHECK(expert > medium);
  CHECK(medium > random);
  CHECK(expert - random > 15.0);
}

TEST_CASE("chainrunner basics") {
  auto env = make_env("chainrunner");

  SUBCASE("zero action from rest earns exactly zero reward") {
    env->reset(5);
    StepResult r = env->step(Vec::Zero(1));
    CHECK(r.reward == 0.0);
  }

  SUBCASE("episodes run exactly the horizon") {
    env->reset(8);
    int steps = 0;
    while (!env->done()) {
      StepResult r = env->step(Vec::Constant(1, 0.3));
      ++steps;
      CHECK(r.done == (steps == env->spec().horizon));
    }
    CHECK(steps == 60);
    CHECK_THROWS_AS(env->step(Vec::Zero(1)), std::logic_error);
  }

  SUBCASE("velocity stays clamped under saturated throttle") {
    env->reset(11);
    for (int i = 0; i < 60; ++i) {
      env->step(Vec::Constant(1, 1.0));
      CHECK(std::abs(env->full_observation()(1)) <= 1.0);
    }
  }

  SUBCASE("features are consistent with the dynamics") {
    env->reset(21);
    for (int i = 0; i < 59; ++i) {
      Vec o = env->full_observation();
      const double a = 0.5;
      const double eta = 0.9 * o(3);
      const double drag = 0.4 * o(2);
      const double v_pred = std::clamp(o(1) + 0.1 * (a * eta - drag), -1.0, 1.0);
      env->step(Vec::Constant(1, a));
      CHECK(env->full_observation()(1) == doctest::Approx(v_pred).epsilon(1e-12));
    }
  }

  SUBCASE("throttle direction matters: the polarity flips across episodes") {
    // Constant full throttle ends with high v on some seeds and deeply
    // negative v on others; expert-quality control always ends fast.
    int good = 0, bad = 0;
    for (std::uint64_t s = 0; s < 20; ++s) {
      env->reset(s);
      double ret = 0.0;
      while (!env->done()) ret += env->step(Vec::Constant(1, 1.0)).reward;
      (ret > 20.0 ? good : bad) += 1;
    }
    CHECK(good >= 3);
    CHECK(bad >= 3);
  }

  SUBCASE("same seed, same trajectory, bit for bit") {
    auto env2 = make_env("chainrunner");
    env->reset(33);
    env2->reset(33);
    for (int i = 0; i < 60; ++i) {
      Vec a = Vec::Constant(1, std::sin(i * 0.37));
      env->step(a);
      env2->step(a);
      Vec o1 = env->full_observation(), o2 = env2->full_observation();
      REQUIRE(std::memcmp(o1.data(), o2.data(), sizeof(double) * 4) == 0);
    }
  }
}

TEST_CASE("chainrunner quality ordering") {
  auto env = make_env("chainrunner");
  const double expert = mean_return(*env, Quality::expert, 25, 500);
  const double medium = mean_return(*env, Quality::medium, 25, 500);
  const double random = mean_return(*env, Quality::random, 25, 500);
  CHECK(expert > 40.0);
  CHECK(random < 15.0);
  CHECK(expert > medium);
  CHECK(medium > random);
}

TEST_CASE("noisy wrapper feature layout and costs") {
  auto env = make_env("chainrunner-noisy");
  const auto& f = env->spec().features;
  REQUIRE(f.m() == 12);
  CHECK(f.names[0] == "x");
  CHECK(f.names[1] == "x_mid");
  CHECK(f.names[2] == "x_cheap");
  CHECK(f.names[3] == "v");
  for (int i = 0; i < 4; ++i) {
    CHECK(f.costs(3 * i) == 20.0);
    CHECK(f.costs(3 * i + 1) == 5.0);
    CHECK(f.costs(3 * i + 2) == 1.0);
  }
  CHECK(f.total_cost() == 104.0);
}

TEST_CASE("noisy wrapper tiers: exact matches base, noise scales by tier") {
  auto wrapped = make_env("chainrunner-noisy");
  auto base = make_env("chainrunner");
  wrapped->reset(77);
  base->reset(77);
  std::vector<double> mid_noise, cheap_noise;
  for (int step = 0; step < 60; ++step) {
    Vec wo = wrapped->full_observation();
    Vec bo = base->full_observation();
    for (int i = 0; i < 4; ++i) {
      CHECK(wo(3 * i) == bo(i));  // exact tier is bit-identical to the base
      mid_noise.push_back(wo(3 * i + 1) - bo(i));
      cheap_noise.push_back(wo(3 * i + 2) - bo(i));
    }
    Vec a = Vec::Constant(1, 0.4);
    wrapped->step(a);
    base->step(a);
  }
  auto sd = [](const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= xs.size();
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    return std::sqrt(var / (xs.size() - 1));
  };
  CHECK(sd(mid_noise) > 0.07);
  CHECK(sd(mid_noise) < 0.14);
  CHECK(sd(cheap_noise) > 0.7);
  CHECK(sd(cheap_noise) < 1.4);
}

TEST_CASE("noisy wrapper is deterministic per (seed, step, feature)") {
  auto env = make_env("chainrunner-noisy");
  env->reset(9);
  Vec mask = Vec::Zero(12);
  mask(2) = 1.0;  // x_cheap
  const double first = env->observe(mask).values(2);
  CHECK(env->observe(mask).values(2) == first);  // same step: same draw
  env->step(Vec::Zero(1));
  const double next = env->observe(mask).values(2);
  CHECK(next != first);

  auto env2 = make_env("chainrunner-noisy");
  env2->reset(9);
  CHECK(env2->observe(mask).values(2) == first);
}

TEST_CASE("noisy wrapper computes base features lazily, once per step") {
  auto env = wrap_noisy(make_env("gridnav"), NoisyTierConfig{});
  env->reset(4);
  const int base_ray0 = 6;  // first priced base feature
  Vec mask = Vec::Zero(env->spec().features.m());
  mask(3 * base_ray0 + 2) = 1.0;  // cheap tier of one ray

  std::uint64_t before = env->sensor_ops();
  env->observe(mask);
  CHECK(env->sensor_ops() - before == 1);

  // Same step: other tiers of the same ray reuse the cached base value.
  mask(3 * base_ray0) = 1.0;
  mask(3 * base_ray0 + 1) = 1.0;
  before = env->sensor_ops();
  env->observe(mask);
  CHECK(env->sensor_ops() - before == 0);

  Vec two = Vec::Zero(env->spec().features.m());
  two(3 * (base_ray0 + 1)) = 1.0;
  two(3 * (base_ray0 + 2) + 2) = 1.0;
  before = env->sensor_ops();
  env->observe(two);
  CHECK(env->sensor_ops() - before == 2);
}

TEST_CASE("clone produces an independent environment") {
  auto env = make_env("chainrunner");
  env->reset(13);
  env->step(Vec::Constant(1, 0.8));
  auto copy = env->clone();
  Vec before = copy->full_observation();
  env->step(Vec::Constant(1, -0.7));
  CHECK((copy->full_observation() - before).cwiseAbs().maxCoeff() == 0.0);
  CHECK(copy->t() == 1);
  CHECK(env->t() == 2);
}

TEST_CASE("factory ids") {
  for (const auto& id : env_ids()) {
    auto env = make_env(id);
    CHECK(env->spec().id == id);
    CHECK(env->spec().horizon > 0);
  }
  CHECK_THROWS_AS(make_env("mars-rover"), std::invalid_argument);
}
