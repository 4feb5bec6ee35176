// Command-line front end for the experiment harness.
//
//   episodic run <config> [--seeds 0,1,2] [--steps N] [--eval-interval N] [--workers N] [--out DIR]
//   episodic sweep --omega 5,7,9,12 <config> [same overrides]
//   episodic aggregate <dir>
//   episodic export <dir> <out>
//
// Exit codes: 0 success, 1 configuration error, 2 runtime failure.

#include "episodic/harness.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace episodic;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct Overrides {
  std::vector<std::uint64_t> seeds;
  std::int64_t steps = -1;
  std::int64_t eval_interval = -1;
  Index workers = -1;
  std::string out;
  bool resume = false;

  void attach(CLI::App* app) {
    app->add_option("--seeds", seeds, "Comma-separated master seeds")->delimiter(',');
    app->add_option("--steps", steps, "Total training steps per seed");
    app->add_option("--eval-interval", eval_interval, "Steps between evaluation blocks");
    app->add_option("--workers", workers, "Seeds run concurrently");
    app->add_option("--out", out, "Output directory");
    app->add_flag("--resume", resume, "Continue from checkpoints in the output directory");
  }

  Json to_json() const {
    Json j = Json::object();
    if (!seeds.empty()) j["protocol"]["seeds"] = seeds;
    if (steps >= 0) j["protocol"]["total_steps"] = steps;
    if (eval_interval >= 0) j["protocol"]["eval_interval"] = eval_interval;
    if (workers >= 0) j["workers"] = workers;
    if (!out.empty()) j["output_dir"] = out;
    if (resume) j["resume"] = true;
    return j;
  }
};

void print_aggregate(const Aggregate& agg) {
  std::cout << "step,mean,std\n";
  for (const AggregatePoint& p : agg.points) {
    std::cout << p.step << ',' << format_double(p.mean) << ',' << format_double(p.std) << '\n';
  }
  std::cout << "final score (mean of last " << std::min(kFinalWindow, agg.points.size())
            << " evaluations): " << format_double(agg.final_score) << '\n';
  for (const auto& [seed, score] : agg.seed_final_scores) {
    std::cout << "  seed " << seed << ": " << format_double(score) << '\n';
  }
}

int report_failures(const ExperimentResult& result) {
  if (result.failures.empty()) return kExitOk;
  std::cerr << "failed cells:\n";
  for (const CellFailure& f : result.failures) std::cerr << "  seed " << f.seed << ": " << f.message << '\n';
  return kExitRuntime;
}

/// Records from a run directory: curves.csv when present, else the per-seed files.
std::vector<EvalRecord> load_records(const std::string& dir) {
  const fs::path curves = fs::path(dir) / "curves.csv";
  if (fs::exists(curves)) return read_curves_csv(curves.string());
  const fs::path seeds = fs::path(dir) / "seeds";
  if (!fs::is_directory(seeds)) throw ValidationError("no curves.csv or seeds/ directory in " + dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(seeds)) {
    if (entry.path().extension() == ".csv") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<EvalRecord> records;
  for (const fs::path& f : files) {
    const std::vector<EvalRecord> part = read_curves_csv(f.string());
    records.insert(records.end(), part.begin(), part.end());
  }
  if (records.empty()) throw ValidationError("no evaluation records in " + dir);
  std::stable_sort(records.begin(), records.end(), [](const EvalRecord& a, const EvalRecord& b) {
    return a.seed != b.seed ? a.seed < b.seed : a.step < b.step;
  });
  return records;
}

Json read_optional_json(const fs::path& path) {
  if (!fs::exists(path)) return Json::object();
  std::ifstream in(path);
  return Json::parse(in);
}

int cmd_run(const std::string& config_path, const Overrides& ov) {
  const ExperimentConfig cfg = load_config(config_path, ov.to_json());
  const ExperimentResult result = run_experiment(cfg);
  if (const int code = report_failures(result)) return code;
  if (result.halted) {
    std::cout << "halted after step " << cfg.halt_after_step << "; resume with --resume\n";
    return kExitOk;
  }
  print_aggregate(aggregate(result.records));
  std::cout << "solver failures: " << result.solver_failures << "\nwall clock: "
            << format_double(result.wall_seconds) << " s\n";
  if (!cfg.output_dir.empty()) std::cout << "results written to " << cfg.output_dir << '\n';
  return kExitOk;
}

int cmd_sweep(const std::string& config_path, const std::vector<double>& omegas, const Overrides& ov) {
  const ExperimentConfig cfg = load_config(config_path, ov.to_json());
  int code = kExitOk;
  const SweepResult sweep = sweep_omega(cfg, omegas, [&](const ExperimentConfig& c) {
    ExperimentResult r = run_experiment(c);
    if (!r.failures.empty()) code = report_failures(r);
    return r;
  });
  std::cout << "omega,final_score\n";
  for (const SweepRow& row : sweep.rows) {
    std::cout << format_double(row.omega) << ',' << format_double(row.final_score) << '\n';
  }
  std::cout << "best omega: " << format_double(sweep.best_omega) << '\n';
  if (!cfg.output_dir.empty()) {
    Json j;
    j["schema_version"] = kSummarySchemaVersion;
    j["best_omega"] = sweep.best_omega;
    for (const SweepRow& row : sweep.rows) j["rows"].push_back({{"omega", row.omega}, {"final_score", row.final_score}});
    std::ofstream(fs::path(cfg.output_dir) / "sweep.json") << j.dump(2) << '\n';
  }
  return code;
}

int cmd_aggregate(const std::string& dir) {
  const std::vector<EvalRecord> records = load_records(dir);
  const Aggregate agg = aggregate(records);
  print_aggregate(agg);
  std::ofstream out(fs::path(dir) / "aggregate.csv", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write aggregate.csv in " + dir);
  out << "step,mean,std\n";
  for (const AggregatePoint& p : agg.points) {
    out << p.step << ',' << format_double(p.mean) << ',' << format_double(p.std) << '\n';
  }
  return kExitOk;
}

int cmd_export(const std::string& dir, const std::string& out) {
  const std::vector<EvalRecord> records = load_records(dir);
  Json config = read_optional_json(fs::path(dir) / "config.json");
  const Json summary = read_optional_json(fs::path(dir) / "summary.json");
  if (config.empty() && summary.contains("config")) config = summary["config"];
  export_curves(records, out, config, summary.value("wall_clock_seconds", 0.0),
                summary.value("solver_failures", std::uint64_t{0}));
  std::cout << records.size() << " records exported to " << out << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Episodic control experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string dir;
  std::string out;
  std::vector<double> omegas;
  Overrides run_ov;
  Overrides sweep_ov;

  CLI::App* run = app.add_subcommand("run", "Train and evaluate every seed of a configuration");
  run->add_option("config", config_path, "Experiment JSON")->required()->check(CLI::ExistingFile);
  run_ov.attach(run);

  CLI::App* sweep = app.add_subcommand("sweep", "Grid search over the mellowmax omega");
  sweep->add_option("--omega", omegas, "Comma-separated omega values")->required()->delimiter(',');
  sweep->add_option("config", config_path, "Experiment JSON")->required()->check(CLI::ExistingFile);
  sweep_ov.attach(sweep);

  CLI::App* agg = app.add_subcommand("aggregate", "Per-step mean and std over seeds of a run directory");
  agg->add_option("dir", dir, "Run directory")->required()->check(CLI::ExistingDirectory);

  CLI::App* exp = app.add_subcommand("export", "Write curves, aggregate and summary files for a run");
  exp->add_option("dir", dir, "Run directory")->required()->check(CLI::ExistingDirectory);
  exp->add_option("out", out, "Destination directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (run->parsed()) return cmd_run(config_path, run_ov);
    if (sweep->parsed()) return cmd_sweep(config_path, omegas, sweep_ov);
    if (agg->parsed()) return cmd_aggregate(dir);
    if (exp->parsed()) return cmd_export(dir, out);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const Json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}
