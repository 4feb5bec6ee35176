#include "episodic/agents.hpp"

#include "episodic/seeding.hpp"

#include <cmath>
#include <utility>

namespace episodic {

namespace {

constexpr std::uint32_t kTraceVersion = 1;
constexpr std::uint32_t kMfecAgentVersion = 1;
constexpr std::uint32_t kNecAgentVersion = 1;

// Unknown actions take the mean of the known estimates.
void fill_placeholders(ActionValues& v) {
  double sum = 0.0;
  Index known = 0;
  for (Index a = 0; a < v.q.size(); ++a) {
    if (v.known[static_cast<std::size_t>(a)]) {
      sum += v.q(a);
      ++known;
    }
  }
  const double placeholder = known > 0 ? sum / static_cast<double>(known) : 0.0;
  for (Index a = 0; a < v.q.size(); ++a) {
    if (!v.known[static_cast<std::size_t>(a)]) v.q(a) = placeholder;
  }
}

ActionValues blank_values(Index actions, bool with_uncertainty) {
  ActionValues v;
  v.q = Vector::Zero(actions);
  if (with_uncertainty) v.sigma = Vector::Zero(actions);
  v.known.assign(static_cast<std::size_t>(actions), false);
  return v;
}

double best_known(const ActionValues& v) {
  double best = 0.0;
  bool any = false;
  for (Index a = 0; a < v.q.size(); ++a) {
    if (!v.known[static_cast<std::size_t>(a)]) continue;
    best = any ? std::max(best, v.q(a)) : v.q(a);
    any = true;
  }
  return best;
}

}  // namespace

// ---------------------------------------------------------------------------
// Episode bookkeeping

void EpisodeTrace::push(Transition t) {
  if (complete()) throw UsageError("episode trace already ended");
  steps_.push_back(std::move(t));
}

void EpisodeTrace::save(BinaryWriter& out) const {
  out.header("EPTR", kTraceVersion);
  out.pod<std::uint64_t>(steps_.size());
  for (const Transition& t : steps_) {
    out.dense(t.observation);
    out.dense(t.key);
    out.pod<std::int64_t>(t.action);
    out.pod<double>(t.reward);
    out.pod<std::uint8_t>(t.done ? 1 : 0);
  }
}

EpisodeTrace EpisodeTrace::load(BinaryReader& in) {
  in.expect_header("EPTR", kTraceVersion);
  EpisodeTrace trace;
  const auto n = in.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) {
    Transition t;
    t.observation = in.vector();
    t.key = in.vector();
    t.action = in.pod<std::int64_t>();
    t.reward = in.pod<double>();
    t.done = in.pod<std::uint8_t>() != 0;
    trace.push(std::move(t));
  }
  return trace;
}

double n_step_return(const EpisodeTrace& trace, Index t, Index n, double gamma,
                     const Eigen::Ref<const Vector>& bootstrap) {
  if (t < 0 || t >= trace.size()) throw DomainError("n_step_return: index out of range");
  if (n < 1) throw DomainError("n_step_return: horizon must be positive");
  const Index m = std::min(n, trace.size() - t);
  double ret = 0.0;
  double discount = 1.0;
  for (Index j = 0; j < m; ++j) {
    ret += discount * trace[t + j].reward;
    discount *= gamma;
  }
  if (t + n < trace.size()) {
    if (bootstrap.size() == 0) throw DomainError("n_step_return: bootstrap values required");
    ret += discount * bootstrap.maxCoeff();
  }
  return ret;
}

double episodic_return(const EpisodeTrace& trace, Index t, double gamma) {
  if (!trace.complete()) throw UsageError("episodic_return needs a complete episode");
  if (t < 0 || t >= trace.size()) throw DomainError("episodic_return: index out of range");
  double ret = 0.0;
  double discount = 1.0;
  for (Index j = t; j < trace.size(); ++j) {
    ret += discount * trace[j].reward;
    discount *= gamma;
  }
  return ret;
}

ActionValues q_values(const Agent& agent, const Eigen::Ref<const Vector>& observation) {
  return agent.values_for_key(agent.key_of(observation), false);
}

// ---------------------------------------------------------------------------
// MFEC

MfecAgent::MfecAgent(const AgentConfig& config, Index observation_dim, Index actions, std::uint64_t seed)
    : config_(config) {
  Index key_dim = observation_dim;
  if (config.projection_dim > 0) {
    projection_.emplace(observation_dim, config.projection_dim, derive_seed(seed, SeedStream::kAgentInit));
    key_dim = config.projection_dim;
  }
  table_ = MfecTable(actions, key_dim, config.capacity, config.k);
}

EmbeddingKey MfecAgent::key_of(const Eigen::Ref<const Vector>& observation) const {
  if (projection_) return project(*projection_, observation);
  return observation;
}

ActionValues MfecAgent::values_for_key(const Eigen::Ref<const Vector>& key, bool with_uncertainty) const {
  ActionValues v = blank_values(action_count(), with_uncertainty);
  for (Index a = 0; a < action_count(); ++a) {
    if (table_.size(a) == 0) continue;
    v.known[static_cast<std::size_t>(a)] = true;
    v.q(a) = mfec_estimate(table_, key, a);
    if (with_uncertainty) v.sigma(a) = estimate_uncertainty(table_, key, a, config_.delta, config_.jitter);
  }
  fill_placeholders(v);
  return v;
}

ActionValues MfecAgent::values_for_key(const Eigen::Ref<const Vector>& key, bool with_uncertainty,
                                       bool /*touch*/) {
  // Table recency only moves on writes.
  return std::as_const(*this).values_for_key(key, with_uncertainty);
}

void MfecAgent::end_of_episode(const EpisodeTrace& trace) {
  if (trace.empty()) return;
  std::vector<double> returns(static_cast<std::size_t>(trace.size()));
  double ret = 0.0;
  for (Index t = trace.size() - 1; t >= 0; --t) {
    ret = trace[t].reward + config_.gamma * ret;
    returns[static_cast<std::size_t>(t)] = ret;
  }
  for (Index t = 0; t < trace.size(); ++t) {
    mfec_update(table_, trace[t].key, trace[t].action, returns[static_cast<std::size_t>(t)]);
  }
}

void MfecAgent::save(BinaryWriter& out) const {
  out.header("EPMA", kMfecAgentVersion);
  out.pod(static_cast<std::uint8_t>(projection_.has_value()));
  if (projection_) {
    out.pod(projection_->in_dim());
    out.pod(projection_->seed());
  }
  table_.save(out);
}

void MfecAgent::load(BinaryReader& in) {
  in.expect_header("EPMA", kMfecAgentVersion);
  std::optional<GaussianProjection> projection;
  if (in.pod<std::uint8_t>() != 0) {
    const auto in_dim = in.pod<Index>();
    const auto seed = in.pod<std::uint64_t>();
    if (!projection_ || in_dim != projection_->in_dim()) {
      throw ValidationError("mfec checkpoint projection does not match the configured agent");
    }
    projection.emplace(in_dim, projection_->out_dim(), seed);
  } else if (projection_) {
    throw ValidationError("mfec checkpoint has no projection but the agent is configured with one");
  }
  MfecTable table = MfecTable::load(in);
  if (table.actions() != table_.actions() || table.store(0).dim() != table_.store(0).dim()) {
    throw ValidationError("mfec checkpoint does not match the configured agent");
  }
  table_ = std::move(table);
  projection_ = std::move(projection);
}

// ---------------------------------------------------------------------------
// NEC

NecAgent::NecAgent(const AgentConfig& config, Index observation_dim, Index actions, std::uint64_t seed)
    : config_(config), replay_(config.replay_capacity), rng_(derive_seed(seed, SeedStream::kReplay)) {
  if (actions < 1) throw DomainError("agent needs at least one action");
  std::vector<Index> widths{observation_dim};
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  widths.push_back(config.key_dim);
  encoder_ = FeedforwardEncoder(widths, Activation::kRelu, derive_seed(seed, SeedStream::kAgentInit));
  optimizer_ = RmspropState(encoder_.parameter_count(), config.rmsprop);
  DndConfig dnd;
  dnd.key_dim = config.key_dim;
  dnd.capacity = config.capacity;
  dnd.k = config.k;
  dnd.delta = config.delta;
  dnd.match_tol = config.match_tol;
  dnd.jitter = config.jitter;
  dictionaries_.assign(static_cast<std::size_t>(actions), Dnd(dnd));
}

EmbeddingKey NecAgent::key_of(const Eigen::Ref<const Vector>& observation) const {
  return encoder_.forward(observation);
}

ActionValues NecAgent::values_for_key(const Eigen::Ref<const Vector>& key, bool with_uncertainty) const {
  ActionValues v = blank_values(action_count(), with_uncertainty);
  for (Index a = 0; a < action_count(); ++a) {
    const Dnd& dnd = dictionary(a);
    if (dnd.empty()) continue;
    const LookupResult r = dnd_lookup(dnd, key);
    v.known[static_cast<std::size_t>(a)] = true;
    v.q(a) = r.q_estimate;
    if (with_uncertainty) v.sigma(a) = std::sqrt(r.variance);
  }
  fill_placeholders(v);
  return v;
}

ActionValues NecAgent::values_for_key(const Eigen::Ref<const Vector>& key, bool with_uncertainty,
                                      bool touch) {
  ActionValues v = blank_values(action_count(), with_uncertainty);
  for (Index a = 0; a < action_count(); ++a) {
    Dnd& dnd = dictionary(a);
    if (dnd.empty()) continue;
    const LookupResult r = dnd_lookup(dnd, key);
    if (touch) dnd.touch(r);
    v.known[static_cast<std::size_t>(a)] = true;
    v.q(a) = r.q_estimate;
    if (with_uncertainty) v.sigma(a) = std::sqrt(r.variance);
  }
  fill_placeholders(v);
  return v;
}

void NecAgent::end_of_episode(const EpisodeTrace& trace) {
  if (trace.empty()) return;
  const Index len = trace.size();
  const Index n = config_.n_step;
  // Bootstraps use the model as it stands before this episode's writes.
  std::vector<double> targets(static_cast<std::size_t>(len));
  for (Index t = 0; t < len; ++t) {
    Vector bootstrap;
    if (t + n < len) {
      const ActionValues v = values_for_key(key_of(trace[t + n].observation), false);
      bootstrap = Vector::Constant(1, best_known(v));
    }
    targets[static_cast<std::size_t>(t)] = n_step_return(trace, t, n, config_.gamma, bootstrap);
  }
  for (Index t = 0; t < len; ++t) {
    const Transition& tr = trace[t];
    const double target = targets[static_cast<std::size_t>(t)];
    dictionary(tr.action).write(tr.key, target, config_.alpha);
    replay_.push(ReplayItem{tr.observation, tr.action, target});
  }
}

void NecAgent::on_step(std::int64_t global_step) {
  if (global_step >= config_.training_start && !replay_.empty()) train_step(global_step);
}

double NecAgent::batch_loss(const std::vector<ReplayItem>& batch) const {
  double loss = 0.0;
  for (const ReplayItem& item : batch) {
    const Dnd& dnd = dictionary(item.action);
    if (dnd.empty()) continue;
    const double err = dnd_lookup(dnd, encoder_.forward(item.observation)).q_estimate - item.target;
    loss += err * err;
  }
  return loss / static_cast<double>(batch.size());
}

NecGradients NecAgent::batch_gradients(const std::vector<ReplayItem>& batch) {
  NecGradients g;
  g.encoder = Vector::Zero(encoder_.parameter_count());
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const ReplayItem& item : batch) {
    const Dnd& dnd = dictionary(item.action);
    if (dnd.empty()) continue;
    const EmbeddingKey h = encoder_.encode(item.observation);
    const LookupResult lookup = dnd_lookup(dnd, h);
    const double err = lookup.q_estimate - item.target;
    g.loss += scale * err * err;
    const DndGradients d = dnd_gradients(dnd, lookup, 2.0 * scale * err);
    g.encoder += encoder_.backward(d.d_query);
    for (std::size_t i = 0; i < d.slots.size(); ++i) {
      auto& entry = g.dictionary[{item.action, d.slots[i]}];
      if (entry.d_key.size() == 0) entry.d_key = Vector::Zero(dnd.store().dim());
      entry.d_value += d.d_values(static_cast<Index>(i));
      entry.d_key += d.d_keys.col(static_cast<Index>(i));
    }
  }
  return g;
}

void NecAgent::apply_gradients(NecGradients& grads) {
  double sq = grads.encoder.squaredNorm();
  if (config_.train_dictionary) {
    for (const auto& [slot, entry] : grads.dictionary) sq += entry.d_value * entry.d_value + entry.d_key.squaredNorm();
  }
  const double norm = std::sqrt(sq);
  const double scale = norm > config_.clip_norm ? config_.clip_norm / norm : 1.0;
  grads.encoder *= scale;
  rmsprop_step(optimizer_, encoder_.parameters(), grads.encoder);
  if (!config_.train_dictionary) return;
  const double lr = config_.rmsprop.learning_rate * scale;
  for (const auto& [where, entry] : grads.dictionary) {
    Dnd& dnd = dictionary(where.first);
    const Index slot = where.second;
    dnd.set_value(slot, dnd.store().value(slot) - lr * entry.d_value);
    dnd.set_key(slot, dnd.store().key(slot) - lr * entry.d_key);
  }
}

double NecAgent::train_step(std::int64_t global_step) {
  if (global_step < config_.training_start) throw UsageError("train_step called before training start");
  if (replay_.empty()) throw UsageError("train_step called with an empty replay buffer");
  const std::vector<ReplayItem> batch = replay_sample(replay_, config_.batch_size, rng_);
  NecGradients grads = batch_gradients(batch);
  apply_gradients(grads);
  return grads.loss;
}

void NecAgent::save(BinaryWriter& out) const {
  out.header("EPNA", kNecAgentVersion);
  encoder_.save(out);
  out.pod<std::int64_t>(action_count());
  for (const Dnd& d : dictionaries_) d.save(out);
  replay_.save(out);
  episodic::save(out, optimizer_);
  out.rng(rng_);
}

void NecAgent::load(BinaryReader& in) {
  in.expect_header("EPNA", kNecAgentVersion);
  FeedforwardEncoder enc = FeedforwardEncoder::load(in);
  if (enc.widths() != encoder_.widths()) throw ValidationError("nec checkpoint encoder shape mismatch");
  const auto actions = in.pod<std::int64_t>();
  if (actions != action_count()) throw ValidationError("nec checkpoint action count mismatch");
  std::vector<Dnd> dicts;
  for (Index a = 0; a < actions; ++a) dicts.push_back(Dnd::load(in));
  ReplayBuffer replay = ReplayBuffer::load(in);
  RmspropState opt = load_rmsprop(in);
  in.rng(rng_);
  encoder_ = std::move(enc);
  dictionaries_ = std::move(dicts);
  replay_ = std::move(replay);
  optimizer_ = std::move(opt);
}

double train_step(NecAgent& agent, std::int64_t global_step) { return agent.train_step(global_step); }

std::unique_ptr<Agent> make_agent(AgentKind kind, const AgentConfig& config, Index observation_dim,
                                  Index actions, std::uint64_t seed) {
  if (kind == AgentKind::kMfec) return std::make_unique<MfecAgent>(config, observation_dim, actions, seed);
  return std::make_unique<NecAgent>(config, observation_dim, actions, seed);
}

AgentKind parse_agent_kind(const std::string& name) {
  if (name == "mfec") return AgentKind::kMfec;
  if (name == "nec") return AgentKind::kNec;
  throw ValidationError("unknown agent kind '" + name + "'");
}

std::string to_string(AgentKind kind) { return kind == AgentKind::kMfec ? "mfec" : "nec"; }

}  // namespace episodic
