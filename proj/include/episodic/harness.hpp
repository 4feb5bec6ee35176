#pragma once

// Config-driven experiment runner: seeded training with periodic greedy
// evaluation, aggregation across seeds, the omega sweep and result files.

#include "episodic/agents.hpp"
#include "episodic/envs.hpp"
#include "episodic/exploration.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace episodic {

using Json = nlohmann::ordered_json;

inline constexpr int kSummarySchemaVersion = 1;

struct ExperimentConfig {
  std::string preset = "auto";  // "auto", "none" or a preset name
  std::string environment = "cartpole";
  AgentKind agent = AgentKind::kMfec;
  AgentConfig agent_config;
  ExplorationConfig exploration;
  std::int64_t total_steps = 100000;
  std::int64_t eval_interval = 500;
  Index eval_episodes = 5;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::string output_dir;  // empty: nothing written
  Index workers = 1;
  bool checkpoint = true;
  bool resume = false;
  std::int64_t halt_after_step = -1;  // stop (as if interrupted) after this eval step
};

/// Built-in defaults in config-file form.
Json default_config_json();

/// Directory holding the preset files.
std::string preset_directory();

/// Layers built-in defaults, the preset's "defaults", the document's own
/// "defaults", its top-level keys and finally `overrides`. Throws
/// ValidationError naming every unknown or invalid key.
Json resolve_config(const Json& document, const Json& overrides = Json::object());

/// Validates a fully resolved document and converts it.
ExperimentConfig config_from_json(const Json& resolved);
Json to_json(const ExperimentConfig& cfg);

ExperimentConfig load_config(const std::string& path, const Json& overrides = Json::object());

/// Checks the struct invariants; throws ValidationError listing offending keys.
void validate(const ExperimentConfig& cfg);

struct EvalRecord {
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  double mean_return = 0.0;
  double std_return = 0.0;  // population std over the block's episodes
  Index episodes = 0;

  bool operator==(const EvalRecord&) const = default;
};

struct CellFailure {
  std::uint64_t seed = 0;
  std::string message;
};

struct ExperimentResult {
  std::vector<EvalRecord> records;  // ordered by (seed, step)
  std::uint64_t solver_failures = 0;
  double wall_seconds = 0.0;
  std::vector<CellFailure> failures;
  bool halted = false;
};

/// Runs every seed (up to cfg.workers at a time). Per-seed CSVs and
/// checkpoints go under cfg.output_dir when set.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// Agent restored from the checkpoint a run wrote for `seed`, with the step
/// it was taken at.
struct CheckpointedAgent {
  std::unique_ptr<Agent> agent;
  std::int64_t step = 0;
};
CheckpointedAgent load_checkpointed_agent(const ExperimentConfig& cfg, std::uint64_t seed);

/// Greedy evaluation block: `episodes` fresh copies of `prototype`, reset
/// from the evaluation stream of `seed` at `step`. Agent state is untouched.
EvalRecord evaluate(const Agent& agent, const Environment& prototype, std::uint64_t seed,
                    std::int64_t step, Index episodes);

struct AggregatePoint {
  std::int64_t step = 0;
  double mean = 0.0;
  double std = 0.0;  // population std over seeds
};

struct Aggregate {
  std::vector<AggregatePoint> points;
  double final_score = 0.0;  // mean of the last (up to) 5 points
  std::vector<std::pair<std::uint64_t, double>> seed_final_scores;
};

inline constexpr std::size_t kFinalWindow = 5;

/// Throws ValidationError when seeds disagree on their evaluation steps.
Aggregate aggregate(const std::vector<EvalRecord>& records);

struct SweepRow {
  double omega = 0.0;
  double final_score = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  double best_omega = 0.0;
};

using ExperimentRunner = std::function<ExperimentResult(const ExperimentConfig&)>;

/// One experiment per omega; best by final score, ties to the smaller omega.
SweepResult sweep_omega(const ExperimentConfig& base, const std::vector<double>& omegas,
                        const ExperimentRunner& runner = run_experiment);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double x);

void write_curves_csv(const std::vector<EvalRecord>& records, const std::string& path);
std::vector<EvalRecord> read_curves_csv(const std::string& path);

/// Writes curves.csv, aggregate.csv and summary.json into `dir`.
void export_curves(const std::vector<EvalRecord>& records, const std::string& dir, const Json& config_echo,
                   double wall_seconds, std::uint64_t solver_failures);

}  // namespace episodic
