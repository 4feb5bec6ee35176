#pragma once

// CartPole, Acrobot and gridworlds behind one seeded stepping interface.

#include "episodic/serialize.hpp"
#include "episodic/types.hpp"

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace episodic {

struct EnvState {
  Vector observation;
  std::int64_t step_count = 0;
  bool done = false;
};

struct StepResult {
  EnvState state;
  double reward = 0.0;
  bool done = false;
};

class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string id() const = 0;
  virtual Index action_count() const = 0;
  virtual Index observation_size() const = 0;
  virtual std::int64_t episode_cap() const = 0;

  /// Starts an episode; the initial state is a function of the seed only.
  EnvState reset(std::uint64_t seed);
  /// One transition. Ends the episode on termination or at the cap; throws
  /// UsageError after the episode has ended or before the first reset.
  StepResult step(Index action);

  const EnvState& state() const { return state_; }
  virtual std::unique_ptr<Environment> clone() const = 0;

  /// Mid-episode snapshot; load expects an environment of the same id.
  void save(BinaryWriter& out) const;
  void load(BinaryReader& in);

 protected:
  virtual void save_impl(BinaryWriter& out) const = 0;
  virtual void load_impl(BinaryReader& in) = 0;

  struct Outcome {
    double reward;
    bool terminal;
  };
  virtual Vector reset_impl(std::mt19937_64& rng) = 0;
  virtual Outcome step_impl(Index action) = 0;
  virtual Vector observe() const = 0;

 private:
  EnvState state_;
  bool started_ = false;
};

/// Cart-pole balancing with the Gym constants and explicit Euler updates.
class CartPole final : public Environment {
 public:
  static constexpr double kGravity = 9.8;
  static constexpr double kMassCart = 1.0;
  static constexpr double kMassPole = 0.1;
  static constexpr double kHalfLength = 0.5;
  static constexpr double kForce = 10.0;
  static constexpr double kTau = 0.02;
  static constexpr double kXThreshold = 2.4;
  static constexpr double kThetaThreshold = 12.0 * 2.0 * 3.14159265358979323846 / 360.0;

  std::string id() const override { return "cartpole"; }
  Index action_count() const override { return 2; }
  Index observation_size() const override { return 4; }
  std::int64_t episode_cap() const override { return 200; }
  std::unique_ptr<Environment> clone() const override { return std::make_unique<CartPole>(*this); }

  /// Physical state (x, x_dot, theta, theta_dot).
  const Eigen::Vector4d& physical_state() const { return s_; }
  void set_physical_state(const Eigen::Vector4d& s) { s_ = s; }

 protected:
  Vector reset_impl(std::mt19937_64& rng) override;
  Outcome step_impl(Index action) override;
  Vector observe() const override { return s_; }
  void save_impl(BinaryWriter& out) const override { out.dense(Vector(s_)); }
  void load_impl(BinaryReader& in) override;

 private:
  Eigen::Vector4d s_ = Eigen::Vector4d::Zero();
};

/// Two-link swing-up with the Gym "book" dynamics integrated by one RK4 step.
class Acrobot final : public Environment {
 public:
  static constexpr double kDt = 0.2;
  static constexpr double kLinkLength1 = 1.0;
  static constexpr double kLinkMass1 = 1.0;
  static constexpr double kLinkMass2 = 1.0;
  static constexpr double kLinkCom1 = 0.5;
  static constexpr double kLinkCom2 = 0.5;
  static constexpr double kLinkMoi = 1.0;
  static constexpr double kGravity = 9.8;
  static constexpr double kMaxVel1 = 4.0 * 3.14159265358979323846;
  static constexpr double kMaxVel2 = 9.0 * 3.14159265358979323846;

  std::string id() const override { return "acrobot"; }
  Index action_count() const override { return 3; }
  Index observation_size() const override { return 6; }
  std::int64_t episode_cap() const override { return 500; }
  std::unique_ptr<Environment> clone() const override { return std::make_unique<Acrobot>(*this); }

  /// (theta1, theta2, dtheta1, dtheta2).
  const Eigen::Vector4d& physical_state() const { return s_; }
  void set_physical_state(const Eigen::Vector4d& s) { s_ = s; }

  /// Time derivative of the physical state under torque a.
  static Eigen::Vector4d derivatives(const Eigen::Vector4d& s, double torque);

 protected:
  Vector reset_impl(std::mt19937_64& rng) override;
  Outcome step_impl(Index action) override;
  Vector observe() const override;
  void save_impl(BinaryWriter& out) const override { out.dense(Vector(s_)); }
  void load_impl(BinaryReader& in) override;

 private:
  Eigen::Vector4d s_ = Eigen::Vector4d::Zero();
};

struct Cell {
  Index row = 0;
  Index col = 0;
  bool operator==(const Cell&) const = default;
};

/// Map file: '#' wall, '.' or ' ' floor, 'S' start, 'G' goal. Lines starting
/// with ';' are comments; an optional "cap N" line sets the episode cap.
struct GridLayout {
  Index width = 0;
  Index height = 0;
  std::vector<bool> wall;  // row-major
  Cell start;
  Cell goal;
  std::int64_t cap = 100;

  bool is_wall(Index row, Index col) const;
  Index free_cell_count() const;

  static GridLayout parse(const std::string& text);
  static GridLayout load_file(const std::string& path);
};

/// Deterministic gridworld with one-hot observations over free cells.
/// Actions: 0 up, 1 down, 2 left, 3 right.
class GridWorld final : public Environment {
 public:
  GridWorld(std::string id, GridLayout layout);

  std::string id() const override { return id_; }
  Index action_count() const override { return 4; }
  Index observation_size() const override { return static_cast<Index>(free_cells_.size()); }
  std::int64_t episode_cap() const override { return layout_.cap; }
  std::unique_ptr<Environment> clone() const override { return std::make_unique<GridWorld>(*this); }

  const GridLayout& layout() const { return layout_; }
  Cell position() const { return pos_; }
  Index cell_index(Cell c) const;

 protected:
  Vector reset_impl(std::mt19937_64& rng) override;
  Outcome step_impl(Index action) override;
  Vector observe() const override;
  void save_impl(BinaryWriter& out) const override;
  void load_impl(BinaryReader& in) override;

 private:
  std::string id_;
  GridLayout layout_;
  std::vector<Cell> free_cells_;
  std::vector<Index> index_of_;  // row-major cell -> free index or -1
  Cell pos_;
};

/// Directory holding the shipped layout files.
std::string layout_directory();

/// "cartpole", "acrobot", "open_room", "four_room" or "grid:<path>".
std::unique_ptr<Environment> make_environment(const std::string& id);

}  // namespace episodic
