#pragma once

// MFEC and NEC control: value estimation from episodic memory, end-of-episode
// memory writes and NEC's replay-based training step.

#include "episodic/encoder.hpp"
#include "episodic/exploration.hpp"
#include "episodic/memory.hpp"
#include "episodic/serialize.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace episodic {

struct Transition {
  Vector observation;
  EmbeddingKey key;  // encoder output at acting time
  Index action = 0;
  double reward = 0.0;
  bool done = false;
};

/// Transitions of one episode; only the last may carry done = true.
class EpisodeTrace {
 public:
  void push(Transition t);
  void clear() { steps_.clear(); }

  Index size() const { return static_cast<Index>(steps_.size()); }
  bool empty() const { return steps_.empty(); }
  bool complete() const { return !steps_.empty() && steps_.back().done; }
  const Transition& operator[](Index t) const { return steps_[static_cast<std::size_t>(t)]; }
  const std::vector<Transition>& steps() const { return steps_; }

  void save(BinaryWriter& out) const;
  static EpisodeTrace load(BinaryReader& in);

 private:
  std::vector<Transition> steps_;
};

/// sum_{j<m} gamma^j r_{t+j} + gamma^n max_a bootstrap(a) when the episode
/// continues past t + n; m = min(n, steps remaining).
double n_step_return(const EpisodeTrace& trace, Index t, Index n, double gamma,
                     const Eigen::Ref<const Vector>& bootstrap);

/// Discounted Monte Carlo return from t to the end of a complete episode.
double episodic_return(const EpisodeTrace& trace, Index t, double gamma);

enum class AgentKind { kMfec, kNec };

struct AgentConfig {
  double gamma = 0.99;
  Index k = 11;
  double delta = 1e-3;
  Index capacity = 10000;
  double jitter = 1e-6;

  // MFEC observation projection; 0 keeps raw observations.
  Index projection_dim = 0;

  // NEC
  Index n_step = 100;
  double alpha = 0.1;
  double match_tol = 1e-9;
  Index key_dim = 64;
  std::vector<Index> hidden = {64, 64};
  Index replay_capacity = 100000;
  Index batch_size = 32;
  std::int64_t training_start = 1000;
  RmspropConfig rmsprop;
  double clip_norm = 10.0;
  bool train_dictionary = true;
};

class Agent {
 public:
  virtual ~Agent() = default;

  virtual AgentKind kind() const = 0;
  virtual Index action_count() const = 0;

  /// Key for an observation under the current mapping; no side effects.
  virtual EmbeddingKey key_of(const Eigen::Ref<const Vector>& observation) const = 0;

  /// Per-action estimates for a key. Actions with an empty store are marked
  /// unknown and carry the mean of the known estimates (0 if none). With
  /// `touch`, read entries are stamped as recently used.
  virtual ActionValues values_for_key(const Eigen::Ref<const Vector>& key, bool with_uncertainty,
                                      bool touch) = 0;
  virtual ActionValues values_for_key(const Eigen::Ref<const Vector>& key,
                                      bool with_uncertainty) const = 0;

  virtual void end_of_episode(const EpisodeTrace& trace) = 0;

  /// Called once per environment step with the global step count.
  virtual void on_step(std::int64_t /*global_step*/) {}

  virtual void save(BinaryWriter& out) const = 0;
  virtual void load(BinaryReader& in) = 0;
};

/// Estimates for an observation without touching memory.
ActionValues q_values(const Agent& agent, const Eigen::Ref<const Vector>& observation);

class MfecAgent final : public Agent {
 public:
  MfecAgent(const AgentConfig& config, Index observation_dim, Index actions, std::uint64_t seed);

  AgentKind kind() const override { return AgentKind::kMfec; }
  Index action_count() const override { return table_.actions(); }
  EmbeddingKey key_of(const Eigen::Ref<const Vector>& observation) const override;
  ActionValues values_for_key(const Eigen::Ref<const Vector>& key, bool with_uncertainty,
                              bool touch) override;
  ActionValues values_for_key(const Eigen::Ref<const Vector>& key, bool with_uncertainty) const override;
  void end_of_episode(const EpisodeTrace& trace) override;
  void save(BinaryWriter& out) const override;
  void load(BinaryReader& in) override;

  const MfecTable& table() const { return table_; }
  const AgentConfig& config() const { return config_; }

 private:
  AgentConfig config_;
  std::optional<GaussianProjection> projection_;
  MfecTable table_;
};

struct NecGradients {
  double loss = 0.0;
  Vector encoder;  // flat, aligned with FeedforwardEncoder::parameters()
  struct Entry {
    double d_value = 0.0;
    Vector d_key;
  };
  std::map<std::pair<Index, Index>, Entry> dictionary;  // (action, slot) -> partials
};

class NecAgent final : public Agent {
 public:
  NecAgent(const AgentConfig& config, Index observation_dim, Index actions, std::uint64_t seed);

  AgentKind kind() const override { return AgentKind::kNec; }
  Index action_count() const override { return static_cast<Index>(dictionaries_.size()); }
  EmbeddingKey key_of(const Eigen::Ref<const Vector>& observation) const override;
  ActionValues values_for_key(const Eigen::Ref<const Vector>& key, bool with_uncertainty,
                              bool touch) override;
  ActionValues values_for_key(const Eigen::Ref<const Vector>& key, bool with_uncertainty) const override;
  void end_of_episode(const EpisodeTrace& trace) override;
  void on_step(std::int64_t global_step) override;
  void save(BinaryWriter& out) const override;
  void load(BinaryReader& in) override;

  /// One replay minibatch: MSE loss, backprop through dictionary and
  /// encoder, clipping and one optimizer step. Returns the batch loss.
  double train_step(std::int64_t global_step);

  /// Mean squared error of the current model on a batch (no side effects).
  double batch_loss(const std::vector<ReplayItem>& batch) const;
  /// Loss and its exact gradients on a batch; parameters are not changed.
  NecGradients batch_gradients(const std::vector<ReplayItem>& batch);
  /// Clips and applies gradients.
  void apply_gradients(NecGradients& grads);

  const AgentConfig& config() const { return config_; }
  FeedforwardEncoder& encoder() { return encoder_; }
  const FeedforwardEncoder& encoder() const { return encoder_; }
  Dnd& dictionary(Index action) { return dictionaries_.at(static_cast<std::size_t>(action)); }
  const Dnd& dictionary(Index action) const { return dictionaries_.at(static_cast<std::size_t>(action)); }
  ReplayBuffer& replay() { return replay_; }
  const ReplayBuffer& replay() const { return replay_; }
  std::mt19937_64& rng() { return rng_; }
  const RmspropState& optimizer() const { return optimizer_; }

 private:
  AgentConfig config_;
  FeedforwardEncoder encoder_;
  std::vector<Dnd> dictionaries_;
  ReplayBuffer replay_;
  RmspropState optimizer_;
  std::mt19937_64 rng_;
};

/// Runs one NEC training step; fails before the training-start step.
double train_step(NecAgent& agent, std::int64_t global_step);

std::unique_ptr<Agent> make_agent(AgentKind kind, const AgentConfig& config, Index observation_dim,
                                  Index actions, std::uint64_t seed);

AgentKind parse_agent_kind(const std::string& name);
std::string to_string(AgentKind kind);

}  // namespace episodic
