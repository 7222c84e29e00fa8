#include "bdt/envs.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <sstream>

namespace bdt::envs {

Quality quality_from_string(const std::string& s) {
  if (s == "expert") return Quality::expert;
  if (s == "medium") return Quality::medium;
  if (s == "random") return Quality::random;
  throw std::invalid_argument("unknown quality '" + s + "' (expert|medium|random)");
}

std::string to_string(Quality q) {
  switch (q) {
    case Quality::expert: return "expert";
    case Quality::medium: return "medium";
    case Quality::random: return "random";
  }
  return "?";
}

Vec scripted_action(Env& env, Quality q, RngStream& rng) {
  const int a = env.spec().action_dim;
  auto uniform_action = [&] {
    Vec u(a);
    for (int i = 0; i < a; ++i) u(i) = rng.uniform(-1.0, 1.0);
    return u;
  };
  switch (q) {
    case Quality::expert: return env.expert_action(rng);
    case Quality::random: return uniform_action();
    case Quality::medium:
      // Draw order is fixed: coin first, then whichever branch needs draws.
      return rng.bernoulli(0.7) ? env.expert_action(rng) : uniform_action();
  }
  throw std::logic_error("unreachable");
}

// ---------------------------------------------------------------------------
// Maps

GridMap GridMap::parse(const std::string& text) {
  GridMap map;
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    rows.push_back(line);
  }
  if (rows.empty()) throw std::invalid_argument("map: empty");
  map.height = static_cast<int>(rows.size());
  map.width = static_cast<int>(rows[0].size());
  map.cells.resize(static_cast<std::size_t>(map.width) * map.height);
  std::map<int, std::vector<int>> keyed_by_col;  // col -> rows with K
  for (int y = 0; y < map.height; ++y) {
    if (static_cast<int>(rows[y].size()) != map.width) {
      throw std::invalid_argument("map: row " + std::to_string(y) +
                                  " length differs from row 0");
    }
    for (int x = 0; x < map.width; ++x) {
      const char c = rows[y][x];
      switch (c) {
        case '.': case '#': case 'L': case 'W': break;
        case 'S': map.starts.push_back({x, y}); break;
        case 'G': map.goals.push_back({x, y}); break;
        case 'K': keyed_by_col[x].push_back(y); break;
        default:
          throw std::invalid_argument(std::string("map: invalid character '") + c +
                                      "' at row " + std::to_string(y) + " col " +
                                      std::to_string(x));
      }
      map.cells[static_cast<std::size_t>(y) * map.width + x] = c;
    }
  }
  if (map.starts.empty()) throw std::invalid_argument("map: no start cells");
  if (map.goals.empty()) throw std::invalid_argument("map: no goal cells");
  for (const auto& [col, ys] : keyed_by_col) {
    if (ys.size() != 2) {
      throw std::invalid_argument("map: column " + std::to_string(col) + " has " +
                                  std::to_string(ys.size()) +
                                  " keyed cells, pairs require exactly 2");
    }
    map.keyed_pairs.push_back({col, std::min(ys[0], ys[1]), col, std::max(ys[0], ys[1])});
  }
  return map;
}

char GridMap::at(int x, int y) const {
  if (!in_bounds(x, y)) return '#';
  return cells[static_cast<std::size_t>(y) * width + x];
}

bool GridMap::in_bounds(int x, int y) const {
  return x >= 0 && x < width && y >= 0 && y < height;
}

const std::string& gridnav_default_map() {
  static const std::string map =
      "################\n"
      "#S.....#....G..#\n"
      "#..##..#..LL...#\n"
      "#..##..#..LL...#\n"
      "#..##......#...#\n"
      "#S....##...#..G#\n"
      "#..#..##...#..##\n"
      "#..#....W..#...#\n"
      "#..###..W..##..#\n"
      "#..#.#..W..#...#\n"
      "#..#.#.....#.G.#\n"
      "#....#..#..#.#.#\n"
      "#S...#..#..#.#.#\n"
      "#..........#...#\n"
      "#G.............#\n"
      "################\n";
  return map;
}

namespace {
// Three one-cell-wide junction shafts; each hides a keyed hazard 6 cells
// from the main corridor, past the reach of the range-5 rays.
std::string build_keyed_map() {
  const int W = 46, H = 18;
  const int main_row = 9, branch_n = 2, branch_s = 16;
  std::vector<std::string> rows(H, std::string(W, '#'));
  auto open = [&](int x, int y, char c = '.') { rows[y][x] = c; };
  const int junctions[3] = {10, 22, 34};
  // Main corridor segments between junction entry and exit shafts.
  for (int x = 1; x <= 10; ++x) open(x, main_row);
  for (int x = 16; x <= 22; ++x) open(x, main_row);
  for (int x = 28; x <= 34; ++x) open(x, main_row);
  for (int x = 40; x <= 44; ++x) open(x, main_row);
  // Vertical shafts (entry at the junction column, exit 6 columns east).
  for (int cx : {10, 16, 22, 28, 34, 40}) {
    for (int y = branch_n; y <= branch_s; ++y) open(cx, y);
  }
  // North/south branch corridors over each junction.
  for (int cj : junctions) {
    for (int x = cj; x <= cj + 6; ++x) {
      open(x, branch_n);
      open(x, branch_s);
    }
    open(cj, branch_n + 1, 'K');
    open(cj, branch_s - 1, 'K');
  }
  // Start cells and the goal room.
  open(1, main_row, 'S');
  open(2, main_row, 'S');
  for (int y = 6; y <= 12; ++y) {
    for (int x = 41; x <= 44; ++x) open(x, y);
  }
  for (int y : {6, 8, 10, 12}) open(43, y, 'G');
  std::string out;
  for (const auto& r : rows) {
    out += r;
    out += '\n';
  }
  return out;
}
}  // namespace

const std::string& gridnav_keyed_map() {
  static const std::string map = build_keyed_map();
  return map;
}

// ---------------------------------------------------------------------------
// GridNav environment

namespace {

constexpr int kDX[8] = {0, 1, 1, 1, 0, -1, -1, -1};  // 0=N, clockwise
constexpr int kDY[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
constexpr int kRayRanges[6] = {1, 5, 10, 25, 50, 100};
constexpr double kRayCosts[6] = {2.58, 4.27, 5.14, 5.37, 5.49, 7.9};
constexpr const char* kDirNames[8] = {"n", "ne", "e", "se", "s", "sw", "w", "nw"};
constexpr int kFreeFeatures = 6;

struct DistanceField {
  std::vector<int> d;  // steps to goal, -1 unreachable
  int width = 0;
};

bool cell_deadly(const GridMap& map, int x, int y,
                 const std::vector<bool>& keyed_north_active) {
  const char c = map.at(x, y);
  if (c == 'L' || c == 'W') return true;
  if (c == 'K') {
    for (std::size_t i = 0; i < map.keyed_pairs.size(); ++i) {
      const auto& p = map.keyed_pairs[i];
      if (p[0] == x && p[1] == y) return keyed_north_active[i];
      if (p[2] == x && p[3] == y) return !keyed_north_active[i];
    }
  }
  return false;
}

bool cell_passable(const GridMap& map, int x, int y,
                   const std::vector<bool>& keyed_north_active) {
  return map.in_bounds(x, y) && map.at(x, y) != '#' &&
         !cell_deadly(map, x, y, keyed_north_active);
}

DistanceField bfs_from(const GridMap& map, std::pair<int, int> target,
                       const std::vector<bool>& keyed_north_active) {
  DistanceField f;
  f.width = map.width;
  f.d.assign(static_cast<std::size_t>(map.width) * map.height, -1);
  if (!cell_passable(map, target.first, target.second, keyed_north_active)) return f;
  std::deque<std::pair<int, int>> queue;
  f.d[static_cast<std::size_t>(target.second) * map.width + target.first] = 0;
  queue.push_back(target);
  while (!queue.empty()) {
    auto [x, y] = queue.front();
    queue.pop_front();
    const int base = f.d[static_cast<std::size_t>(y) * map.width + x];
    for (int dir = 0; dir < 8; ++dir) {
      const int nx = x + kDX[dir], ny = y + kDY[dir];
      if (!cell_passable(map, nx, ny, keyed_north_active)) continue;
      int& slot = f.d[static_cast<std::size_t>(ny) * map.width + nx];
      if (slot < 0) {
        slot = base + 1;
        queue.push_back({nx, ny});
      }
    }
  }
  return f;
}

}  // namespace

int grid_bfs_distance(const GridMap& map, std::pair<int, int> from,
                      std::pair<int, int> to,
                      const std::vector<bool>& keyed_north_active) {
  DistanceField f = bfs_from(map, to, keyed_north_active);
  if (!map.in_bounds(from.first, from.second)) return -1;
  return f.d[static_cast<std::size_t>(from.second) * map.width + from.first];
}

namespace {

class GridNavEnv final : public Env {
 public:
  GridNavEnv(GridMap map, bool eval_goals, bool keyed, int horizon)
      : map_(std::move(map)), eval_goals_(eval_goals) {
    for (std::size_t i = 0; i < map_.goals.size(); ++i) {
      ((i % 2 == 0) ? train_goals_ : eval_goals_pool_).push_back(map_.goals[i]);
    }
    const auto& pool = eval_goals_ ? eval_goals_pool_ : train_goals_;
    if (pool.empty()) {
      throw std::invalid_argument("gridnav: goal pool for this split is empty "
                                  "(maps need at least two goal cells)");
    }
    spec_.id = keyed ? "gridnav-keyed" : "gridnav";
    spec_.action_dim = 2;
    spec_.horizon = horizon;
    spec_.termination =
        "goal +10 ends; lava/water -10 ends; otherwise fixed horizon";
    std::vector<std::string> names = {"pos_x",      "pos_y",       "heading_sin",
                                      "heading_cos", "goal_dx",    "goal_dy"};
    Vec costs = Vec::Zero(kFreeFeatures + 48);
    for (int dir = 0; dir < 8; ++dir) {
      for (int ri = 0; ri < 6; ++ri) {
        names.push_back(std::string("ray_") + kDirNames[dir] + "_" +
                        std::to_string(kRayRanges[ri]));
        costs(kFreeFeatures + dir * 6 + ri) = kRayCosts[ri];
      }
    }
    spec_.features = budget::FeatureSpec::make(std::move(names), std::move(costs));
    reset(0);
  }

  const EnvSpec& spec() const override { return spec_; }

  void reset(std::uint64_t seed) override {
    RngStream rng(seed);
    const auto& starts = map_.starts;
    const auto& pool = eval_goals_ ? eval_goals_pool_ : train_goals_;
    std::tie(x_, y_) = starts[rng.integer(starts.size())];
    std::tie(gx_, gy_) = pool[rng.integer(pool.size())];
    heading_ = static_cast<int>(rng.integer(8));
    keyed_north_active_.clear();
    for (std::size_t i = 0; i < map_.keyed_pairs.size(); ++i) {
      keyed_north_active_.push_back(rng.bernoulli(0.5));
    }
    best_dist_ = distance_to_goal();
    t_ = 0;
    done_ = false;
    reached_goal_ = false;
  }

  StepResult step(const Vec& action) override {
    if (action.size() != 2) throw std::invalid_argument("gridnav: action must be 2-d");
    if (done_) throw std::logic_error("gridnav: step after episode end");
    const double turn = std::clamp(action(0), -1.0, 1.0);
    const double move = std::clamp(action(1), -1.0, 1.0);
    heading_ = (heading_ + static_cast<int>(std::lround(turn * 2.0)) + 8) % 8;
    if (move > 0.0) {
      const int nx = x_ + kDX[heading_], ny = y_ + kDY[heading_];
      if (map_.in_bounds(nx, ny) && map_.at(nx, ny) != '#') {
        x_ = nx;
        y_ = ny;
      }
    }
    StepResult res;
    if (cell_deadly(map_, x_, y_, keyed_north_active_)) {
      res.reward = -10.0;
      done_ = true;
    } else if (x_ == gx_ && y_ == gy_) {
      res.reward = 10.0;
      done_ = true;
      reached_goal_ = true;
    } else {
      const double d = distance_to_goal();
      if (d < best_dist_ - 1e-9) {
        res.reward = 1.0;
        best_dist_ = d;
      }
    }
    ++t_;
    if (t_ >= spec_.horizon) done_ = true;
    res.done = done_;
    return res;
  }

  bool done() const override { return done_; }
  std::optional<bool> success() const override { return reached_goal_; }
  int t() const override { return t_; }

  Vec full_observation() override {
    Vec obs(spec_.features.m());
    for (int i = 0; i < spec_.features.m(); ++i) obs(i) = compute_feature(i);
    return obs;
  }

  MaskedObservation observe(const budget::QueryMask& q) override {
    if (!budget::is_binary_mask(q, spec_.features.m())) {
      throw std::invalid_argument("gridnav: query mask must be binary of size m");
    }
    MaskedObservation out;
    out.mask = q;
    out.values = Vec::Zero(spec_.features.m());
    for (int i = 0; i < spec_.features.m(); ++i) {
      if (q(i) == 1.0) out.values(i) = compute_feature(i);
    }
    return out;
  }

  Vec expert_action(RngStream&) override {
    DistanceField f = bfs_from(map_, {gx_, gy_}, keyed_north_active_);
    int best_dir = -1;
    int best = f.d[static_cast<std::size_t>(y_) * map_.width + x_];
    if (best < 0) return Vec::Zero(2);  // cut off from the goal; hold position
    for (int dir = 0; dir < 8; ++dir) {
      const int nx = x_ + kDX[dir], ny = y_ + kDY[dir];
      if (!cell_passable(map_, nx, ny, keyed_north_active_)) continue;
      const int d = f.d[static_cast<std::size_t>(ny) * map_.width + nx];
      if (d >= 0 && d < best) {
        best = d;
        best_dir = dir;
      }
    }
    if (best_dir < 0) return Vec::Zero(2);
    int delta = (best_dir - heading_ + 8) % 8;
    if (delta > 4) delta -= 8;
    Vec a(2);
    if (std::abs(delta) <= 2) {
      a << delta / 2.0, 1.0;  // turn and move in the new heading
    } else {
      a << (delta > 0 ? 1.0 : -1.0), -1.0;  // 90 degrees toward, no move
    }
    return a;
  }

  std::uint64_t sensor_ops() const override { return rays_; }

  std::unique_ptr<Env> clone() const override {
    return std::make_unique<GridNavEnv>(*this);
  }

 private:
  double distance_to_goal() const {
    return std::hypot(static_cast<double>(gx_ - x_), static_cast<double>(gy_ - y_));
  }

  double compute_feature(int i) {
    switch (i) {
      case 0: return 2.0 * x_ / (map_.width - 1) - 1.0;
      case 1: return 2.0 * y_ / (map_.height - 1) - 1.0;
      case 2: return std::sin(heading_ * M_PI / 4.0);
      case 3: return std::cos(heading_ * M_PI / 4.0);
      case 4: return static_cast<double>(gx_ - x_) / (map_.width - 1);
      case 5: return static_cast<double>(gy_ - y_) / (map_.height - 1);
      default: break;
    }
    const int ray = i - kFreeFeatures;
    const int dir = ray / 6, ri = ray % 6;
    return trace_ray(dir, kRayRanges[ri]);
  }

  // March up to `range` cells; walls (and the map edge) reflect +k/range,
  // deadly cells -k/range, nothing within range 1.0.
  double trace_ray(int dir, int range) {
    ++rays_;
    for (int k = 1; k <= range; ++k) {
      const int cx = x_ + k * kDX[dir], cy = y_ + k * kDY[dir];
      if (!map_.in_bounds(cx, cy) || map_.at(cx, cy) == '#') {
        return static_cast<double>(k) / range;
      }
      if (cell_deadly(map_, cx, cy, keyed_north_active_)) {
        return -static_cast<double>(k) / range;
      }
    }
    return 1.0;
  }

  GridMap map_;
  bool eval_goals_;
  std::vector<std::pair<int, int>> train_goals_, eval_goals_pool_;
  EnvSpec spec_;
  int x_ = 0, y_ = 0, heading_ = 0, gx_ = 0, gy_ = 0;
  double best_dist_ = 0.0;
  int t_ = 0;
  bool done_ = false;
  bool reached_goal_ = false;
  std::vector<bool> keyed_north_active_;
  std::uint64_t rays_ = 0;
};

}  // namespace

std::unique_ptr<Env> make_gridnav(const GridNavOptions& opts, bool keyed) {
  const std::string& text =
      opts.map_text ? *opts.map_text : (keyed ? gridnav_keyed_map() : gridnav_default_map());
  GridMap map = GridMap::parse(text);
  const int horizon = keyed ? 120 : 64;
  return std::make_unique<GridNavEnv>(std::move(map), opts.eval_goals, keyed, horizon);
}

std::unique_ptr<Env> make_env(const std::string& id, const GridNavOptions& grid_opts) {
  if (id == "gridnav") return make_gridnav(grid_opts, false);
  if (id == "gridnav-keyed") return make_gridnav(grid_opts, true);
  if (id == "chainrunner") return make_chainrunner();
  if (id == "chainrunner-noisy") return wrap_noisy(make_chainrunner(), NoisyTierConfig{});
  throw std::invalid_argument("unknown env id '" + id + "'");
}

std::vector<std::string> env_ids() {
  return {"gridnav", "gridnav-keyed", "chainrunner", "chainrunner-noisy"};
}

}  // namespace bdt::envs
