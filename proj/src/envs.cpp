#include "episodic/envs.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <queue>
#include <sstream>

#ifndef EPISODIC_DATA_DIR
#define EPISODIC_DATA_DIR "data"
#endif

namespace episodic {

namespace {

double uniform_in(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double wrap(double x, double lo, double hi) {
  const double span = hi - lo;
  while (x > hi) x -= span;
  while (x < lo) x += span;
  return x;
}

}  // namespace

EnvState Environment::reset(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  reset_impl(rng);
  state_.observation = observe();
  state_.step_count = 0;
  state_.done = false;
  started_ = true;
  return state_;
}

StepResult Environment::step(Index action) {
  if (!started_) throw UsageError(id() + ": step before reset");
  if (state_.done) throw UsageError(id() + ": step after the episode ended");
  if (action < 0 || action >= action_count()) throw DomainError(id() + ": action out of range");
  const Outcome o = step_impl(action);
  state_.observation = observe();
  ++state_.step_count;
  state_.done = o.terminal || state_.step_count >= episode_cap();
  return StepResult{state_, o.reward, state_.done};
}

void Environment::save(BinaryWriter& out) const {
  out.header("EPEV", 1);
  out.string(id());
  out.pod<std::uint8_t>(started_ ? 1 : 0);
  out.pod<std::uint8_t>(state_.done ? 1 : 0);
  out.pod<std::int64_t>(state_.step_count);
  save_impl(out);
}

void Environment::load(BinaryReader& in) {
  in.expect_header("EPEV", 1);
  if (in.string() != id()) throw ValidationError("environment snapshot is for a different environment");
  started_ = in.pod<std::uint8_t>() != 0;
  state_.done = in.pod<std::uint8_t>() != 0;
  state_.step_count = in.pod<std::int64_t>();
  load_impl(in);
  state_.observation = observe();
}

namespace {

Eigen::Vector4d read_vec4(BinaryReader& in) {
  const Vector v = in.vector();
  if (v.size() != 4) throw ValidationError("environment snapshot: bad state size");
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------

void CartPole::load_impl(BinaryReader& in) { s_ = read_vec4(in); }

Vector CartPole::reset_impl(std::mt19937_64& rng) {
  for (int i = 0; i < 4; ++i) s_(i) = uniform_in(rng, -0.05, 0.05);
  return s_;
}

CartPole::Outcome CartPole::step_impl(Index action) {
  const double x = s_(0), x_dot = s_(1), theta = s_(2), theta_dot = s_(3);
  const double force = action == 1 ? kForce : -kForce;
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);
  const double total_mass = kMassPole + kMassCart;
  const double pole_mass_length = kMassPole * kHalfLength;
  const double temp = (force + pole_mass_length * theta_dot * theta_dot * sin_t) / total_mass;
  const double theta_acc = (kGravity * sin_t - cos_t * temp) /
                           (kHalfLength * (4.0 / 3.0 - kMassPole * cos_t * cos_t / total_mass));
  const double x_acc = temp - pole_mass_length * theta_acc * cos_t / total_mass;
  s_ << x + kTau * x_dot, x_dot + kTau * x_acc, theta + kTau * theta_dot, theta_dot + kTau * theta_acc;
  const bool terminal = s_(0) < -kXThreshold || s_(0) > kXThreshold || s_(2) < -kThetaThreshold ||
                        s_(2) > kThetaThreshold;
  return {1.0, terminal};
}

// ---------------------------------------------------------------------------

Eigen::Vector4d Acrobot::derivatives(const Eigen::Vector4d& s, double torque) {
  constexpr double m1 = kLinkMass1, m2 = kLinkMass2, l1 = kLinkLength1;
  constexpr double lc1 = kLinkCom1, lc2 = kLinkCom2, i1 = kLinkMoi, i2 = kLinkMoi, g = kGravity;
  const double theta1 = s(0), theta2 = s(1), dtheta1 = s(2), dtheta2 = s(3);
  const double d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2 * l1 * lc2 * std::cos(theta2)) + i1 + i2;
  const double d2 = m2 * (lc2 * lc2 + l1 * lc2 * std::cos(theta2)) + i2;
  const double phi2 = m2 * lc2 * g * std::cos(theta1 + theta2 - std::numbers::pi / 2.0);
  const double phi1 = -m2 * l1 * lc2 * dtheta2 * dtheta2 * std::sin(theta2) -
                      2 * m2 * l1 * lc2 * dtheta2 * dtheta1 * std::sin(theta2) +
                      (m1 * lc1 + m2 * l1) * g * std::cos(theta1 - std::numbers::pi / 2.0) + phi2;
  const double ddtheta2 =
      (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1 * dtheta1 * std::sin(theta2) - phi2) /
      (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
  const double ddtheta1 = -(d2 * ddtheta2 + phi1) / d1;
  return {dtheta1, dtheta2, ddtheta1, ddtheta2};
}

void Acrobot::load_impl(BinaryReader& in) { s_ = read_vec4(in); }

Vector Acrobot::reset_impl(std::mt19937_64& rng) {
  for (int i = 0; i < 4; ++i) s_(i) = uniform_in(rng, -0.1, 0.1);
  return observe();
}

Acrobot::Outcome Acrobot::step_impl(Index action) {
  const double torque = static_cast<double>(action) - 1.0;
  const Eigen::Vector4d k1 = derivatives(s_, torque);
  const Eigen::Vector4d k2 = derivatives(s_ + kDt / 2 * k1, torque);
  const Eigen::Vector4d k3 = derivatives(s_ + kDt / 2 * k2, torque);
  const Eigen::Vector4d k4 = derivatives(s_ + kDt * k3, torque);
  Eigen::Vector4d ns = s_ + kDt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  ns(0) = wrap(ns(0), -std::numbers::pi, std::numbers::pi);
  ns(1) = wrap(ns(1), -std::numbers::pi, std::numbers::pi);
  ns(2) = std::clamp(ns(2), -kMaxVel1, kMaxVel1);
  ns(3) = std::clamp(ns(3), -kMaxVel2, kMaxVel2);
  s_ = ns;
  const bool terminal = -std::cos(s_(0)) - std::cos(s_(1) + s_(0)) > 1.0;
  return {terminal ? 0.0 : -1.0, terminal};
}

Vector Acrobot::observe() const {
  Vector o(6);
  o << std::cos(s_(0)), std::sin(s_(0)), std::cos(s_(1)), std::sin(s_(1)), s_(2), s_(3);
  return o;
}

// ---------------------------------------------------------------------------

bool GridLayout::is_wall(Index row, Index col) const {
  if (row < 0 || col < 0 || row >= height || col >= width) return true;
  return wall[static_cast<std::size_t>(row * width + col)];
}

Index GridLayout::free_cell_count() const {
  Index n = 0;
  for (bool w : wall) n += w ? 0 : 1;
  return n;
}

GridLayout GridLayout::parse(const std::string& text) {
  GridLayout layout;
  std::vector<std::string> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty() && line.front() == ';') continue;
    if (line.rfind("cap ", 0) == 0) {
      try {
        layout.cap = std::stoll(line.substr(4));
      } catch (const std::exception&) {
        throw ValidationError("layout: bad cap line '" + line + "'");
      }
      if (layout.cap < 1) throw ValidationError("layout: cap must be positive");
      continue;
    }
    if (line.empty()) continue;
    rows.push_back(line);
  }
  if (rows.empty()) throw ValidationError("layout: no grid rows");
  layout.height = static_cast<Index>(rows.size());
  layout.width = static_cast<Index>(rows.front().size());
  layout.wall.assign(static_cast<std::size_t>(layout.width * layout.height), false);
  bool has_start = false, has_goal = false;
  for (Index r = 0; r < layout.height; ++r) {
    const std::string& row = rows[static_cast<std::size_t>(r)];
    if (static_cast<Index>(row.size()) != layout.width) throw ValidationError("layout: ragged rows");
    for (Index c = 0; c < layout.width; ++c) {
      const char ch = row[static_cast<std::size_t>(c)];
      switch (ch) {
        case '#': layout.wall[static_cast<std::size_t>(r * layout.width + c)] = true; break;
        case '.':
        case ' ': break;
        case 'S':
          if (has_start) throw ValidationError("layout: more than one start");
          layout.start = {r, c};
          has_start = true;
          break;
        case 'G':
          if (has_goal) throw ValidationError("layout: more than one goal");
          layout.goal = {r, c};
          has_goal = true;
          break;
        default: throw ValidationError(std::string("layout: unknown character '") + ch + "'");
      }
    }
  }
  if (!has_start || !has_goal) throw ValidationError("layout: needs exactly one start and one goal");
  if (layout.start == layout.goal) throw ValidationError("layout: start equals goal");

  std::vector<bool> seen(layout.wall.size(), false);
  std::queue<Cell> frontier;
  frontier.push(layout.start);
  seen[static_cast<std::size_t>(layout.start.row * layout.width + layout.start.col)] = true;
  bool reached = false;
  while (!frontier.empty() && !reached) {
    const Cell c = frontier.front();
    frontier.pop();
    const Cell next[4] = {{c.row - 1, c.col}, {c.row + 1, c.col}, {c.row, c.col - 1}, {c.row, c.col + 1}};
    for (const Cell& n : next) {
      if (layout.is_wall(n.row, n.col)) continue;
      auto&& mark = seen[static_cast<std::size_t>(n.row * layout.width + n.col)];
      if (mark) continue;
      mark = true;
      if (n == layout.goal) reached = true;
      frontier.push(n);
    }
  }
  if (!reached) throw ValidationError("layout: goal unreachable from start");
  return layout;
}

GridLayout GridLayout::load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open layout file " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str());
}

GridWorld::GridWorld(std::string id, GridLayout layout)
    : id_(std::move(id)), layout_(std::move(layout)), pos_(layout_.start) {
  index_of_.assign(layout_.wall.size(), -1);
  for (Index r = 0; r < layout_.height; ++r) {
    for (Index c = 0; c < layout_.width; ++c) {
      if (layout_.is_wall(r, c)) continue;
      index_of_[static_cast<std::size_t>(r * layout_.width + c)] = static_cast<Index>(free_cells_.size());
      free_cells_.push_back({r, c});
    }
  }
}

Index GridWorld::cell_index(Cell c) const {
  return index_of_.at(static_cast<std::size_t>(c.row * layout_.width + c.col));
}

Vector GridWorld::reset_impl(std::mt19937_64& /*rng*/) {
  pos_ = layout_.start;
  return observe();
}

GridWorld::Outcome GridWorld::step_impl(Index action) {
  static constexpr Index kDr[4] = {-1, 1, 0, 0};
  static constexpr Index kDc[4] = {0, 0, -1, 1};
  const Cell next{pos_.row + kDr[action], pos_.col + kDc[action]};
  if (!layout_.is_wall(next.row, next.col)) pos_ = next;
  const bool at_goal = pos_ == layout_.goal;
  return {at_goal ? 1.0 : 0.0, at_goal};
}

Vector GridWorld::observe() const {
  Vector o = Vector::Zero(observation_size());
  o(cell_index(pos_)) = 1.0;
  return o;
}

void GridWorld::save_impl(BinaryWriter& out) const {
  out.pod<std::int64_t>(pos_.row);
  out.pod<std::int64_t>(pos_.col);
}

void GridWorld::load_impl(BinaryReader& in) {
  const Cell c{in.pod<std::int64_t>(), in.pod<std::int64_t>()};
  if (layout_.is_wall(c.row, c.col)) throw ValidationError("gridworld snapshot: position on a wall");
  pos_ = c;
}

// ---------------------------------------------------------------------------

std::string layout_directory() { return std::string(EPISODIC_DATA_DIR) + "/layouts"; }

std::unique_ptr<Environment> make_environment(const std::string& id) {
  if (id == "cartpole") return std::make_unique<CartPole>();
  if (id == "acrobot") return std::make_unique<Acrobot>();
  if (id == "open_room" || id == "four_room") {
    return std::make_unique<GridWorld>(id, GridLayout::load_file(layout_directory() + "/" + id + ".txt"));
  }
  if (id.rfind("grid:", 0) == 0) return std::make_unique<GridWorld>(id, GridLayout::load_file(id.substr(5)));
  throw ValidationError("unknown environment '" + id + "'");
}

}  // namespace episodic
