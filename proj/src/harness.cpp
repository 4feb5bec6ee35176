#include "episodic/harness.hpp"

#include "episodic/seeding.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#ifndef EPISODIC_CONFIG_DIR
#define EPISODIC_CONFIG_DIR "configs"
#endif

namespace fs = std::filesystem;

namespace episodic {

namespace {

constexpr const char* kCurvesHeader = "step,seed,mean_return,std_return,episodes";
constexpr const char* kAggregateHeader = "step,mean,std";
constexpr std::uint32_t kCheckpointVersion = 1;

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

void unknown_keys(const Json& doc, const Json& schema, const std::string& prefix,
                  std::vector<std::string>& found) {
  if (!doc.is_object()) return;
  for (const auto& [key, value] : doc.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!schema.contains(key)) {
      found.push_back(path);
    } else if (schema[key].is_object()) {
      unknown_keys(value, schema[key], path, found);
    }
  }
}

std::string auto_preset(const std::string& env) {
  if (env == "cartpole" || env == "acrobot") return "classic_control";
  if (env == "open_room" || env == "four_room" || env.rfind("grid:", 0) == 0) return "gridworld";
  return "none";
}

/// Value of a top-level key as the layers would resolve it.
Json layered_value(const std::string& key, const Json& document, const Json& overrides) {
  if (overrides.contains(key)) return overrides[key];
  if (document.contains(key)) return document[key];
  if (document.contains("defaults") && document["defaults"].contains(key)) return document["defaults"][key];
  return default_config_json()[key];
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

class Issues {
 public:
  template <typename T>
  T get(const Json& j, const std::string& path) {
    const Json* node = &j;
    std::size_t start = 0;
    while (true) {
      const std::size_t dot = path.find('.', start);
      const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (!node->is_object() || !node->contains(key)) {
        add(path, "missing");
        return T{};
      }
      node = &(*node)[key];
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    try {
      return node->get<T>();
    } catch (const Json::exception&) {
      add(path, "wrong type");
      return T{};
    }
  }

  void check(bool ok, const std::string& key, const std::string& why) {
    if (!ok) add(key, why);
  }
  void add(const std::string& key, const std::string& why) { list_.push_back(key + " (" + why + ")"); }
  void raise() const {
    if (!list_.empty()) throw ValidationError("invalid configuration: " + join(list_, "; "));
  }

 private:
  std::vector<std::string> list_;
};

void validate_into(const ExperimentConfig& c, Issues& is) {
  const AgentConfig& a = c.agent_config;
  is.check(!c.environment.empty(), "environment", "empty");
  is.check(a.gamma >= 0.0 && a.gamma < 1.0, "gamma", "must lie in [0, 1)");
  is.check(a.k >= 1, "memory.k", "must be positive");
  is.check(a.delta > 0.0, "memory.delta", "must be positive");
  is.check(a.capacity >= 1, "memory.capacity", "must be positive");
  is.check(a.jitter >= 0.0, "memory.jitter", "must be non-negative");
  is.check(a.projection_dim >= 0, "memory.projection_dim", "must be non-negative");
  is.check(a.n_step >= 1, "nec.n_step", "must be positive");
  is.check(a.alpha > 0.0 && a.alpha <= 1.0, "nec.alpha", "must lie in (0, 1]");
  is.check(a.match_tol >= 0.0, "nec.match_tol", "must be non-negative");
  is.check(a.key_dim >= 1, "nec.key_dim", "must be positive");
  is.check(std::all_of(a.hidden.begin(), a.hidden.end(), [](Index w) { return w >= 1; }), "nec.hidden",
           "widths must be positive");
  is.check(a.replay_capacity >= 1, "nec.replay_capacity", "must be positive");
  is.check(a.batch_size >= 1, "nec.batch_size", "must be positive");
  is.check(a.training_start >= 0, "nec.training_start", "must be non-negative");
  is.check(a.rmsprop.learning_rate > 0.0, "nec.learning_rate", "must be positive");
  is.check(a.rmsprop.decay >= 0.0 && a.rmsprop.decay < 1.0, "nec.rms_decay", "must lie in [0, 1)");
  is.check(a.rmsprop.epsilon > 0.0, "nec.rms_epsilon", "must be positive");
  is.check(a.rmsprop.momentum >= 0.0 && a.rmsprop.momentum < 1.0, "nec.momentum", "must lie in [0, 1)");
  is.check(a.clip_norm > 0.0, "nec.clip_norm", "must be positive");

  const ExplorationConfig& e = c.exploration;
  is.check(e.epsilon.initial >= e.epsilon.final && e.epsilon.final >= 0.0 && e.epsilon.initial <= 1.0,
           "exploration.epsilon", "needs 1 >= initial >= final >= 0");
  is.check(e.epsilon.start_step >= 0 && e.epsilon.start_step <= e.epsilon.end_step, "exploration.epsilon",
           "needs 0 <= start_step <= end_step");
  is.check(e.beta >= 0.0 && std::isfinite(e.beta), "exploration.beta", "must be finite and non-negative");
  is.check(e.omega > 0.0 && std::isfinite(e.omega), "exploration.omega", "must be finite and positive");
  is.check(e.ucb_c >= 0.0, "exploration.ucb_c", "must be non-negative");
  is.check(e.solver_tol > 0.0, "exploration.solver_tol", "must be positive");

  is.check(c.eval_interval >= 1, "protocol.eval_interval", "must be positive");
  is.check(c.total_steps >= c.eval_interval, "protocol.total_steps", "must be at least protocol.eval_interval");
  is.check(c.eval_episodes >= 1 && c.eval_episodes <= 1000, "protocol.eval_episodes", "must lie in [1, 1000]");
  is.check(!c.seeds.empty(), "protocol.seeds", "must be nonempty");
  is.check(std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() == c.seeds.size(),
           "protocol.seeds", "duplicate seed");
  is.check(c.workers >= 1, "workers", "must be positive");
}

Json fingerprint(const ExperimentConfig& cfg) {
  Json j = to_json(cfg);
  for (const char* key : {"output_dir", "workers", "checkpoint", "resume", "halt_after_step"}) j.erase(key);
  j["protocol"].erase("seeds");
  return j;
}

// ---------------------------------------------------------------------------
// One (config, seed) cell

struct CellResult {
  std::vector<EvalRecord> records;
  std::uint64_t solver_failures = 0;
  bool halted = false;
};

std::string seed_csv_path(const ExperimentConfig& cfg, std::uint64_t seed) {
  return (fs::path(cfg.output_dir) / "seeds" / ("seed_" + std::to_string(seed) + ".csv")).string();
}

std::string checkpoint_path(const ExperimentConfig& cfg, std::uint64_t seed) {
  return (fs::path(cfg.output_dir) / "checkpoints" / ("seed_" + std::to_string(seed) + ".bin")).string();
}

std::string record_line(const EvalRecord& r) {
  return std::to_string(r.step) + "," + std::to_string(r.seed) + "," + format_double(r.mean_return) + "," +
         format_double(r.std_return) + "," + std::to_string(r.episodes);
}

struct CellState {
  std::int64_t step = 0;
  std::uint64_t episode = 0;
  std::mt19937_64 policy_rng;
  EpisodeTrace trace;
  std::vector<EvalRecord> records;
};

void save_checkpoint(const std::string& path, const ExperimentConfig& cfg, const CellState& s,
                     const Agent& agent, const Environment& env, const ExplorationPolicy& policy) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream file(tmp, std::ios::binary | std::ios::trunc);
    if (!file) throw std::runtime_error("cannot write checkpoint " + tmp);
    BinaryWriter out(file);
    out.header("EPCK", kCheckpointVersion);
    out.string(fingerprint(cfg).dump());
    out.pod<std::int64_t>(s.step);
    out.pod<std::uint64_t>(s.episode);
    out.pod<std::uint64_t>(policy.solver_failures());
    out.rng(s.policy_rng);
    out.pod<std::uint64_t>(s.records.size());
    for (const EvalRecord& r : s.records) {
      out.pod(r.step);
      out.pod(r.seed);
      out.pod(r.mean_return);
      out.pod(r.std_return);
      out.pod<std::int64_t>(r.episodes);
    }
    agent.save(out);
    env.save(out);
    s.trace.save(out);
    if (!file) throw std::runtime_error("failed writing checkpoint " + tmp);
  }
  fs::rename(tmp, path);
}

void load_checkpoint(const std::string& path, const ExperimentConfig& cfg, CellState& s, Agent& agent,
                     Environment& env, ExplorationPolicy& policy) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw ValidationError("cannot open checkpoint " + path);
  BinaryReader in(file);
  in.expect_header("EPCK", kCheckpointVersion);
  if (in.string() != fingerprint(cfg).dump()) {
    throw ValidationError("checkpoint " + path + " was written by a different configuration");
  }
  s.step = in.pod<std::int64_t>();
  s.episode = in.pod<std::uint64_t>();
  policy.set_solver_failures(in.pod<std::uint64_t>());
  in.rng(s.policy_rng);
  const auto n = in.pod<std::uint64_t>();
  s.records.clear();
  for (std::uint64_t i = 0; i < n; ++i) {
    EvalRecord r;
    r.step = in.pod<std::int64_t>();
    r.seed = in.pod<std::uint64_t>();
    r.mean_return = in.pod<double>();
    r.std_return = in.pod<double>();
    r.episodes = in.pod<std::int64_t>();
    s.records.push_back(r);
  }
  agent.load(in);
  env.load(in);
  s.trace = EpisodeTrace::load(in);
}

}  // namespace

CheckpointedAgent load_checkpointed_agent(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (cfg.output_dir.empty()) throw ValidationError("no output directory to read checkpoints from");
  const std::unique_ptr<Environment> env = make_environment(cfg.environment);
  CheckpointedAgent out;
  out.agent = make_agent(cfg.agent, cfg.agent_config, env->observation_size(), env->action_count(), seed);
  ExplorationPolicy policy(cfg.exploration);
  CellState s;
  load_checkpoint(checkpoint_path(cfg, seed), cfg, s, *out.agent, *env, policy);
  out.step = s.step;
  return out;
}

namespace {

CellResult run_cell(const ExperimentConfig& cfg, std::uint64_t seed) {
  const std::unique_ptr<Environment> prototype = make_environment(cfg.environment);
  std::unique_ptr<Environment> env = prototype->clone();
  std::unique_ptr<Agent> agent =
      make_agent(cfg.agent, cfg.agent_config, env->observation_size(), env->action_count(), seed);
  ExplorationPolicy policy(cfg.exploration);

  CellState s;
  s.policy_rng.seed(derive_seed(seed, SeedStream::kPolicy));

  const bool persist = !cfg.output_dir.empty();
  const std::string csv_path = persist ? seed_csv_path(cfg, seed) : "";
  const std::string ckpt_path = persist ? checkpoint_path(cfg, seed) : "";
  if (persist && cfg.resume && fs::exists(ckpt_path)) {
    load_checkpoint(ckpt_path, cfg, s, *agent, *env, policy);
  } else {
    env->reset(derive_seed(seed, SeedStream::kEnvironment, s.episode));
  }

  std::ofstream csv;
  if (persist) {
    csv.open(csv_path, std::ios::trunc);
    if (!csv) throw std::runtime_error("cannot write " + csv_path);
    csv << kCurvesHeader << '\n';
    for (const EvalRecord& r : s.records) csv << record_line(r) << '\n';
    csv.flush();
  }

  CellResult result;
  while (s.step < cfg.total_steps) {
    const Vector observation = env->state().observation;
    const EmbeddingKey key = agent->key_of(observation);
    const ActionValues values = agent->values_for_key(key, policy.needs_uncertainty(), true);
    const Index action = policy.select(values, s.step, s.policy_rng);
    const StepResult r = env->step(action);
    s.trace.push(Transition{observation, key, action, r.reward, r.done});
    ++s.step;
    agent->on_step(s.step);
    if (r.done) {
      agent->end_of_episode(s.trace);
      s.trace.clear();
      ++s.episode;
      env->reset(derive_seed(seed, SeedStream::kEnvironment, s.episode));
    }
    if (s.step % cfg.eval_interval == 0) {
      EvalRecord rec = evaluate(*agent, *prototype, seed, s.step, cfg.eval_episodes);
      s.records.push_back(rec);
      if (persist) {
        csv << record_line(rec) << '\n';
        csv.flush();
        if (cfg.checkpoint) save_checkpoint(ckpt_path, cfg, s, *agent, *env, policy);
      }
      if (cfg.halt_after_step >= 0 && s.step >= cfg.halt_after_step) {
        result.halted = true;
        break;
      }
    }
  }
  result.records = std::move(s.records);
  result.solver_failures = policy.solver_failures();
  return result;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

Json default_config_json() { return to_json(ExperimentConfig{}); }

std::string preset_directory() { return std::string(EPISODIC_CONFIG_DIR) + "/presets"; }

Json to_json(const ExperimentConfig& c) {
  const AgentConfig& a = c.agent_config;
  const ExplorationConfig& e = c.exploration;
  Json j;
  j["preset"] = c.preset;
  j["environment"] = c.environment;
  j["agent"] = to_string(c.agent);
  j["gamma"] = a.gamma;
  j["memory"] = {{"k", a.k},
                 {"delta", a.delta},
                 {"capacity", a.capacity},
                 {"jitter", a.jitter},
                 {"projection_dim", a.projection_dim}};
  j["nec"] = {{"n_step", a.n_step},
              {"alpha", a.alpha},
              {"match_tol", a.match_tol},
              {"key_dim", a.key_dim},
              {"hidden", a.hidden},
              {"replay_capacity", a.replay_capacity},
              {"batch_size", a.batch_size},
              {"training_start", a.training_start},
              {"learning_rate", a.rmsprop.learning_rate},
              {"rms_decay", a.rmsprop.decay},
              {"rms_epsilon", a.rmsprop.epsilon},
              {"momentum", a.rmsprop.momentum},
              {"clip_norm", a.clip_norm},
              {"train_dictionary", a.train_dictionary}};
  j["exploration"] = {{"kind", to_string(e.kind)},
                      {"epsilon",
                       {{"initial", e.epsilon.initial},
                        {"final", e.epsilon.final},
                        {"start_step", e.epsilon.start_step},
                        {"end_step", e.epsilon.end_step}}},
                      {"beta", e.beta},
                      {"omega", e.omega},
                      {"ucb_c", e.ucb_c},
                      {"solver_tol", e.solver_tol}};
  j["protocol"] = {{"total_steps", c.total_steps},
                   {"eval_interval", c.eval_interval},
                   {"eval_episodes", c.eval_episodes},
                   {"seeds", c.seeds}};
  j["output_dir"] = c.output_dir;
  j["workers"] = c.workers;
  j["checkpoint"] = c.checkpoint;
  j["resume"] = c.resume;
  j["halt_after_step"] = c.halt_after_step;
  return j;
}

Json resolve_config(const Json& document, const Json& overrides) {
  if (!document.is_object()) throw ValidationError("configuration must be a JSON object");
  if (!overrides.is_object()) throw ValidationError("overrides must be a JSON object");
  const Json schema = default_config_json();

  std::vector<std::string> unknown;
  Json top = document;
  top.erase("defaults");
  unknown_keys(top, schema, "", unknown);
  if (document.contains("defaults")) {
    if (!document["defaults"].is_object()) throw ValidationError("invalid configuration: defaults (not an object)");
    unknown_keys(document["defaults"], schema, "defaults", unknown);
  }
  unknown_keys(overrides, schema, "", unknown);

  Json merged = schema;
  const Json env = layered_value("environment", document, overrides);
  const Json preset_value = layered_value("preset", document, overrides);
  if (!env.is_string() || !preset_value.is_string()) {
    throw ValidationError("invalid configuration: environment and preset must be strings");
  }
  std::string preset = preset_value.get<std::string>();
  if (preset == "auto") preset = auto_preset(env.get<std::string>());
  if (preset != "none") {
    const std::string path = preset_directory() + "/" + preset + ".json";
    if (!fs::exists(path)) throw ValidationError("invalid configuration: preset (no preset named '" + preset + "')");
    const Json preset_doc = read_json_file(path);
    const Json layer = preset_doc.value("defaults", Json::object());
    unknown_keys(layer, schema, "preset " + preset, unknown);
    merged.merge_patch(layer);
  }
  if (!unknown.empty()) throw ValidationError("unknown configuration keys: " + join(unknown, ", "));

  if (document.contains("defaults")) merged.merge_patch(document["defaults"]);
  merged.merge_patch(top);
  merged.merge_patch(overrides);
  merged["preset"] = preset;
  return merged;
}

ExperimentConfig config_from_json(const Json& j) {
  Issues is;
  std::vector<std::string> unknown;
  unknown_keys(j, default_config_json(), "", unknown);
  for (const std::string& key : unknown) is.add(key, "unknown key");

  ExperimentConfig c;
  AgentConfig& a = c.agent_config;
  ExplorationConfig& e = c.exploration;
  c.preset = is.get<std::string>(j, "preset");
  c.environment = is.get<std::string>(j, "environment");
  const auto agent_name = is.get<std::string>(j, "agent");
  try {
    c.agent = parse_agent_kind(agent_name);
  } catch (const ValidationError&) {
    is.add("agent", "unknown agent '" + agent_name + "'");
  }
  a.gamma = is.get<double>(j, "gamma");
  a.k = is.get<Index>(j, "memory.k");
  a.delta = is.get<double>(j, "memory.delta");
  a.capacity = is.get<Index>(j, "memory.capacity");
  a.jitter = is.get<double>(j, "memory.jitter");
  a.projection_dim = is.get<Index>(j, "memory.projection_dim");
  a.n_step = is.get<Index>(j, "nec.n_step");
  a.alpha = is.get<double>(j, "nec.alpha");
  a.match_tol = is.get<double>(j, "nec.match_tol");
  a.key_dim = is.get<Index>(j, "nec.key_dim");
  a.hidden = is.get<std::vector<Index>>(j, "nec.hidden");
  a.replay_capacity = is.get<Index>(j, "nec.replay_capacity");
  a.batch_size = is.get<Index>(j, "nec.batch_size");
  a.training_start = is.get<std::int64_t>(j, "nec.training_start");
  a.rmsprop.learning_rate = is.get<double>(j, "nec.learning_rate");
  a.rmsprop.decay = is.get<double>(j, "nec.rms_decay");
  a.rmsprop.epsilon = is.get<double>(j, "nec.rms_epsilon");
  a.rmsprop.momentum = is.get<double>(j, "nec.momentum");
  a.clip_norm = is.get<double>(j, "nec.clip_norm");
  a.train_dictionary = is.get<bool>(j, "nec.train_dictionary");

  const auto kind_name = is.get<std::string>(j, "exploration.kind");
  try {
    e.kind = parse_exploration_kind(kind_name);
  } catch (const ValidationError&) {
    is.add("exploration.kind", "unknown policy '" + kind_name + "'");
  }
  e.epsilon.initial = is.get<double>(j, "exploration.epsilon.initial");
  e.epsilon.final = is.get<double>(j, "exploration.epsilon.final");
  e.epsilon.start_step = is.get<std::int64_t>(j, "exploration.epsilon.start_step");
  e.epsilon.end_step = is.get<std::int64_t>(j, "exploration.epsilon.end_step");
  e.beta = is.get<double>(j, "exploration.beta");
  e.omega = is.get<double>(j, "exploration.omega");
  e.ucb_c = is.get<double>(j, "exploration.ucb_c");
  e.solver_tol = is.get<double>(j, "exploration.solver_tol");

  c.total_steps = is.get<std::int64_t>(j, "protocol.total_steps");
  c.eval_interval = is.get<std::int64_t>(j, "protocol.eval_interval");
  c.eval_episodes = is.get<Index>(j, "protocol.eval_episodes");
  c.seeds = is.get<std::vector<std::uint64_t>>(j, "protocol.seeds");
  c.output_dir = is.get<std::string>(j, "output_dir");
  c.workers = is.get<Index>(j, "workers");
  c.checkpoint = is.get<bool>(j, "checkpoint");
  c.resume = is.get<bool>(j, "resume");
  c.halt_after_step = is.get<std::int64_t>(j, "halt_after_step");
  validate_into(c, is);
  is.raise();
  return c;
}

void validate(const ExperimentConfig& cfg) {
  Issues is;
  validate_into(cfg, is);
  is.raise();
}

ExperimentConfig load_config(const std::string& path, const Json& overrides) {
  return config_from_json(resolve_config(read_json_file(path), overrides));
}

// ---------------------------------------------------------------------------
// Running

EvalRecord evaluate(const Agent& agent, const Environment& prototype, std::uint64_t seed, std::int64_t step,
                    Index episodes) {
  std::vector<double> returns;
  returns.reserve(static_cast<std::size_t>(episodes));
  for (Index e = 0; e < episodes; ++e) {
    std::unique_ptr<Environment> env = prototype.clone();
    const std::uint64_t counter = static_cast<std::uint64_t>(step) * 1000u + static_cast<std::uint64_t>(e);
    env->reset(derive_seed(seed, SeedStream::kEvaluation, counter));
    double ret = 0.0;
    while (!env->state().done) {
      const ActionValues values = agent.values_for_key(agent.key_of(env->state().observation), false);
      ret += env->step(greedy_action(values)).reward;
    }
    returns.push_back(ret);
  }
  const Eigen::Map<const Vector> r(returns.data(), static_cast<Index>(returns.size()));
  const double mean = r.mean();
  EvalRecord rec;
  rec.step = step;
  rec.seed = seed;
  rec.mean_return = mean;
  rec.std_return = std::sqrt((r.array() - mean).square().mean());
  rec.episodes = episodes;
  return rec;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  validate(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  if (!cfg.output_dir.empty()) {
    fs::create_directories(fs::path(cfg.output_dir) / "seeds");
    if (cfg.checkpoint) fs::create_directories(fs::path(cfg.output_dir) / "checkpoints");
    std::ofstream(fs::path(cfg.output_dir) / "config.json") << to_json(cfg).dump(2) << '\n';
  }

  const std::size_t n = cfg.seeds.size();
  std::vector<CellResult> cells(n);
  std::vector<std::string> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        cells[i] = run_cell(cfg, cfg.seeds[i]);
      } catch (const std::exception& e) {
        errors[i] = e.what();
        if (errors[i].empty()) errors[i] = "unknown failure";
      }
    }
  };
  const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(cfg.workers), n);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();
  }

  ExperimentResult result;
  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i].empty()) {
      result.failures.push_back({cfg.seeds[i], errors[i]});
      continue;
    }
    result.records.insert(result.records.end(), cells[i].records.begin(), cells[i].records.end());
    result.solver_failures += cells[i].solver_failures;
    result.halted = result.halted || cells[i].halted;
  }
  std::stable_sort(result.records.begin(), result.records.end(), [](const EvalRecord& a, const EvalRecord& b) {
    return a.seed != b.seed ? a.seed < b.seed : a.step < b.step;
  });
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (!cfg.output_dir.empty()) {
    if (!result.failures.empty()) {
      Json manifest = Json::array();
      for (const CellFailure& f : result.failures) manifest.push_back({{"seed", f.seed}, {"error", f.message}});
      std::ofstream(fs::path(cfg.output_dir) / "failures.json") << manifest.dump(2) << '\n';
    } else if (!result.halted) {
      export_curves(result.records, cfg.output_dir, to_json(cfg), result.wall_seconds, result.solver_failures);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Aggregation and sweeps

Aggregate aggregate(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw ValidationError("aggregate: no records");
  std::map<std::uint64_t, std::map<std::int64_t, double>> by_seed;
  for (const EvalRecord& r : records) {
    if (!by_seed[r.seed].emplace(r.step, r.mean_return).second) {
      throw ValidationError("aggregate: duplicate record for seed " + std::to_string(r.seed) + " at step " +
                            std::to_string(r.step));
    }
  }
  const auto& reference = by_seed.begin()->second;
  for (const auto& [seed, series] : by_seed) {
    const bool same = series.size() == reference.size() &&
                      std::equal(series.begin(), series.end(), reference.begin(),
                                 [](const auto& x, const auto& y) { return x.first == y.first; });
    if (!same) throw ValidationError("aggregate: ragged records for seed " + std::to_string(seed));
  }

  Aggregate out;
  const auto seeds = static_cast<double>(by_seed.size());
  for (const auto& [step, unused] : reference) {
    double sum = 0.0;
    for (const auto& [seed, series] : by_seed) sum += series.at(step);
    const double mean = sum / seeds;
    double sq = 0.0;
    for (const auto& [seed, series] : by_seed) sq += (series.at(step) - mean) * (series.at(step) - mean);
    out.points.push_back({step, mean, std::sqrt(sq / seeds)});
  }
  const std::size_t window = std::min(kFinalWindow, out.points.size());
  double tail = 0.0;
  for (std::size_t i = out.points.size() - window; i < out.points.size(); ++i) tail += out.points[i].mean;
  out.final_score = tail / static_cast<double>(window);
  for (const auto& [seed, series] : by_seed) {
    double s = 0.0;
    auto it = series.end();
    for (std::size_t i = 0; i < window; ++i) s += (--it)->second;
    out.seed_final_scores.emplace_back(seed, s / static_cast<double>(window));
  }
  return out;
}

SweepResult sweep_omega(const ExperimentConfig& base, const std::vector<double>& omegas,
                        const ExperimentRunner& runner) {
  if (base.exploration.kind != ExplorationKind::kMellowmax) {
    throw ValidationError("invalid configuration: exploration.kind (omega sweep needs the mellowmax policy)");
  }
  if (omegas.empty()) throw ValidationError("omega sweep needs at least one value");
  SweepResult out;
  for (double omega : omegas) {
    if (!(omega > 0.0) || !std::isfinite(omega)) throw ValidationError("omega values must be finite and positive");
    ExperimentConfig cfg = base;
    cfg.exploration.omega = omega;
    if (!base.output_dir.empty()) {
      cfg.output_dir = (fs::path(base.output_dir) / ("omega_" + format_double(omega))).string();
    }
    const ExperimentResult result = runner(cfg);
    if (!result.failures.empty()) {
      throw std::runtime_error("omega " + format_double(omega) + ": seed " +
                               std::to_string(result.failures.front().seed) + " failed: " +
                               result.failures.front().message);
    }
    out.rows.push_back({omega, aggregate(result.records).final_score});
  }
  const SweepRow* best = &out.rows.front();
  for (const SweepRow& row : out.rows) {
    if (row.final_score > best->final_score || (row.final_score == best->final_score && row.omega < best->omega)) {
      best = &row;
    }
  }
  out.best_omega = best->omega;
  return out;
}

// ---------------------------------------------------------------------------
// Files

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

namespace {

double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ValidationError(where + ": bad number '" + s + "'");
  }
  return v;
}

template <typename Int>
Int parse_int(const std::string& s, const std::string& where) {
  Int v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ValidationError(where + ": bad integer '" + s + "'");
  }
  return v;
}

std::ofstream open_for_write(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

}  // namespace

void write_curves_csv(const std::vector<EvalRecord>& records, const std::string& path) {
  std::ofstream out = open_for_write(path);
  out << kCurvesHeader << '\n';
  for (const EvalRecord& r : records) out << record_line(r) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path);
}

std::vector<EvalRecord> read_curves_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != kCurvesHeader) throw ValidationError(path + ": unexpected header");
  std::vector<EvalRecord> records;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    const std::string where = path + ":" + std::to_string(lineno);
    if (f.size() != 5) throw ValidationError(where + ": expected 5 fields");
    EvalRecord r;
    r.step = parse_int<std::int64_t>(f[0], where);
    r.seed = parse_int<std::uint64_t>(f[1], where);
    r.mean_return = parse_double(f[2], where);
    r.std_return = parse_double(f[3], where);
    r.episodes = parse_int<Index>(f[4], where);
    if (r.episodes < 1) throw ValidationError(where + ": episodes must be positive");
    records.push_back(r);
  }
  return records;
}

void export_curves(const std::vector<EvalRecord>& records, const std::string& dir, const Json& config_echo,
                   double wall_seconds, std::uint64_t solver_failures) {
  if (records.empty()) throw ValidationError("export: no records");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir + ": " + ec.message());

  write_curves_csv(records, (fs::path(dir) / "curves.csv").string());

  const Aggregate agg = aggregate(records);
  {
    const std::string path = (fs::path(dir) / "aggregate.csv").string();
    std::ofstream out = open_for_write(path);
    out << kAggregateHeader << '\n';
    for (const AggregatePoint& p : agg.points) {
      out << p.step << ',' << format_double(p.mean) << ',' << format_double(p.std) << '\n';
    }
    if (!out) throw std::runtime_error("failed writing " + path);
  }

  Json summary;
  summary["schema_version"] = kSummarySchemaVersion;
  summary["config"] = config_echo;
  summary["final_window"] = std::min(kFinalWindow, agg.points.size());
  summary["final_score"] = agg.final_score;
  Json per_seed = Json::object();
  for (const auto& [seed, score] : agg.seed_final_scores) per_seed[std::to_string(seed)] = score;
  summary["final_scores"] = per_seed;
  summary["evaluation_points"] = agg.points.size();
  summary["wall_clock_seconds"] = wall_seconds;
  summary["solver_failures"] = solver_failures;
  const std::string path = (fs::path(dir) / "summary.json").string();
  std::ofstream out = open_for_write(path);
  out << summary.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path);
}

}  // namespace episodic
