#pragma once

// Action selection over an agent's value estimates.

#include "episodic/softmax.hpp"
#include "episodic/types.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace episodic {

/// Linear ramp from `initial` at start_step to `final` at end_step.
struct AnnealSchedule {
  double initial = 1.0;
  double final = 5e-3;
  std::int64_t start_step = 5000;
  std::int64_t end_step = 25000;
};

double epsilon_at(const AnnealSchedule& sched, std::int64_t step);

/// Index of the largest entry; ties go to the lowest index.
Index argmax(const Eigen::Ref<const Vector>& q);

Index sample_action(const PolicyDistribution& dist, std::mt19937_64& rng);

Index select_epsilon_greedy(const Eigen::Ref<const Vector>& q, double epsilon, std::mt19937_64& rng);
Index select_boltzmann(const Eigen::Ref<const Vector>& q, double beta, std::mt19937_64& rng);
Index select_ucb(const Eigen::Ref<const Vector>& q, const Eigen::Ref<const Vector>& sigma, double c);
Index select_thompson(const Eigen::Ref<const Vector>& q, const Eigen::Ref<const Vector>& sigma,
                      std::mt19937_64& rng);
/// Samples from the maximum-entropy mellowmax policy; beta is re-solved for
/// every call. Throws SolverFailure when the solve fails.
Index select_memec(const Eigen::Ref<const Vector>& q, double omega, std::mt19937_64& rng,
                   double tol = 1e-8);

/// Value estimates handed from an agent to a policy.
struct ActionValues {
  Vector q;                 // always finite
  Vector sigma;             // standard deviations; empty unless requested
  std::vector<bool> known;  // false where the action's store is empty

  bool all_known() const;
  /// First action with no estimate, or -1.
  Index first_unknown() const;
};

enum class ExplorationKind { kEpsilonGreedy, kBoltzmann, kUcb, kThompson, kMellowmax };

ExplorationKind parse_exploration_kind(const std::string& name);
std::string to_string(ExplorationKind kind);

struct ExplorationConfig {
  ExplorationKind kind = ExplorationKind::kEpsilonGreedy;
  AnnealSchedule epsilon;
  double beta = 1.0;
  double omega = 7.5;
  double ucb_c = 1.0;
  double solver_tol = 1e-8;
};

/// Greedy choice used for evaluation: an action without an estimate first,
/// otherwise the argmax.
Index greedy_action(const ActionValues& values);

/// Stateful wrapper that dispatches on the configured kind and counts
/// mellowmax solver failures (which fall back to the greedy action).
class ExplorationPolicy {
 public:
  explicit ExplorationPolicy(ExplorationConfig config) : config_(config) {}

  const ExplorationConfig& config() const { return config_; }
  bool needs_uncertainty() const;
  bool softmax_based() const;

  Index select(const ActionValues& values, std::int64_t step, std::mt19937_64& rng);

  std::uint64_t solver_failures() const { return solver_failures_; }
  void set_solver_failures(std::uint64_t n) { solver_failures_ = n; }

 private:
  ExplorationConfig config_;
  std::uint64_t solver_failures_ = 0;
};

}  // namespace episodic
