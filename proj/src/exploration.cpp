#include "episodic/exploration.hpp"

#include "episodic/seeding.hpp"

#include <algorithm>
#include <iostream>

namespace episodic {

double epsilon_at(const AnnealSchedule& sched, std::int64_t step) {
  if (step <= sched.start_step) return sched.initial;
  if (step >= sched.end_step) return sched.final;
  const double frac = static_cast<double>(step - sched.start_step) /
                      static_cast<double>(sched.end_step - sched.start_step);
  return sched.initial + frac * (sched.final - sched.initial);
}

Index argmax(const Eigen::Ref<const Vector>& q) {
  if (q.size() == 0) throw DomainError("argmax of an empty vector");
  Index best = 0;
  for (Index i = 1; i < q.size(); ++i) {
    if (q(i) > q(best)) best = i;
  }
  return best;
}

Index sample_action(const PolicyDistribution& dist, std::mt19937_64& rng) {
  const double u = uniform01(rng);
  double cumulative = 0.0;
  for (Index i = 0; i < dist.size(); ++i) {
    cumulative += dist[i];
    if (u < cumulative) return i;
  }
  // u landed in the rounding slack above the final partial sum.
  Index last = dist.size() - 1;
  while (last > 0 && dist[last] == 0.0) --last;
  return last;
}

Index select_epsilon_greedy(const Eigen::Ref<const Vector>& q, double epsilon, std::mt19937_64& rng) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw DomainError("epsilon must lie in [0, 1]");
  if (q.size() == 0) throw DomainError("empty value vector");
  if (uniform01(rng) < epsilon) {
    return std::min<Index>(static_cast<Index>(uniform01(rng) * static_cast<double>(q.size())), q.size() - 1);
  }
  return argmax(q);
}

Index select_boltzmann(const Eigen::Ref<const Vector>& q, double beta, std::mt19937_64& rng) {
  return sample_action(boltzmann_policy(q, beta), rng);
}

Index select_ucb(const Eigen::Ref<const Vector>& q, const Eigen::Ref<const Vector>& sigma, double c) {
  if (q.size() != sigma.size()) throw DomainError("ucb: value and deviation lengths differ");
  if ((sigma.array() < 0.0).any()) throw DomainError("ucb: negative deviation");
  return argmax(q + c * sigma);
}

Index select_thompson(const Eigen::Ref<const Vector>& q, const Eigen::Ref<const Vector>& sigma,
                      std::mt19937_64& rng) {
  if (q.size() != sigma.size()) throw DomainError("thompson: value and deviation lengths differ");
  if ((sigma.array() < 0.0).any()) throw DomainError("thompson: negative deviation");
  Vector draws(q.size());
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index i = 0; i < q.size(); ++i) draws(i) = q(i) + sigma(i) * normal(rng);
  return argmax(draws);
}

Index select_memec(const Eigen::Ref<const Vector>& q, double omega, std::mt19937_64& rng, double tol) {
  return sample_action(mellowmax_policy(q, omega, tol), rng);
}

bool ActionValues::all_known() const {
  return std::all_of(known.begin(), known.end(), [](bool k) { return k; });
}

Index ActionValues::first_unknown() const {
  for (std::size_t i = 0; i < known.size(); ++i) {
    if (!known[i]) return static_cast<Index>(i);
  }
  return -1;
}

ExplorationKind parse_exploration_kind(const std::string& name) {
  if (name == "epsilon_greedy") return ExplorationKind::kEpsilonGreedy;
  if (name == "boltzmann") return ExplorationKind::kBoltzmann;
  if (name == "ucb") return ExplorationKind::kUcb;
  if (name == "thompson") return ExplorationKind::kThompson;
  if (name == "mellowmax") return ExplorationKind::kMellowmax;
  throw ValidationError("unknown exploration kind '" + name + "'");
}

std::string to_string(ExplorationKind kind) {
  switch (kind) {
    case ExplorationKind::kEpsilonGreedy: return "epsilon_greedy";
    case ExplorationKind::kBoltzmann: return "boltzmann";
    case ExplorationKind::kUcb: return "ucb";
    case ExplorationKind::kThompson: return "thompson";
    case ExplorationKind::kMellowmax: return "mellowmax";
  }
  return "unknown";
}

Index greedy_action(const ActionValues& values) {
  const Index unknown = values.first_unknown();
  return unknown >= 0 ? unknown : argmax(values.q);
}

bool ExplorationPolicy::needs_uncertainty() const {
  return config_.kind == ExplorationKind::kUcb || config_.kind == ExplorationKind::kThompson;
}

bool ExplorationPolicy::softmax_based() const {
  return config_.kind == ExplorationKind::kBoltzmann || config_.kind == ExplorationKind::kMellowmax;
}

Index ExplorationPolicy::select(const ActionValues& values, std::int64_t step, std::mt19937_64& rng) {
  const Index unknown = values.first_unknown();
  switch (config_.kind) {
    case ExplorationKind::kEpsilonGreedy: {
      const double eps = epsilon_at(config_.epsilon, step);
      if (unknown < 0) return select_epsilon_greedy(values.q, eps, rng);
      // Unknown actions act as +inf in the greedy branch; same draws as above.
      if (uniform01(rng) < eps) {
        const auto n = static_cast<double>(values.q.size());
        return std::min<Index>(static_cast<Index>(uniform01(rng) * n), values.q.size() - 1);
      }
      return unknown;
    }
    case ExplorationKind::kBoltzmann:
      return select_boltzmann(values.q, config_.beta, rng);
    case ExplorationKind::kUcb:
      if (unknown >= 0) return unknown;
      return select_ucb(values.q, values.sigma, config_.ucb_c);
    case ExplorationKind::kThompson:
      if (unknown >= 0) return unknown;
      return select_thompson(values.q, values.sigma, rng);
    case ExplorationKind::kMellowmax:
      try {
        return select_memec(values.q, config_.omega, rng, config_.solver_tol);
      } catch (const SolverFailure& e) {
        if (solver_failures_++ == 0) {
          std::clog << "warning: mellowmax temperature solve failed (" << e.what()
                    << "); acting greedily\n";
        }
        return greedy_action(values);
      }
  }
  throw UsageError("unhandled exploration kind");
}

}  // namespace episodic
