#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tbo/bo_engine.hpp"
#include "tbo/discrete_benchmark.hpp"
#include "tbo/verification.hpp"

namespace tbo {

struct BenchmarkConfig {
  std::optional<Family> family;
  std::string discrete_file;  // resolved against the config file's directory
  std::optional<int> target_task;
};

/// JSON keys match the field names. `seeds` is either a count (seeds 0..n-1)
/// or an explicit list; `verification` is a scope string, a list of scopes or
/// a bool.
struct ExperimentConfig {
  BenchmarkConfig benchmark;
  int n_s = 1;
  Eigen::Index points_per_source = 20;
  double sigma_s = 0.1;
  double sigma_t = 0.1;
  std::vector<ModelKind> model_kinds;
  int iterations = 30;
  std::vector<std::uint64_t> seeds{0};
  int tasks = 1;
  std::string output_dir = "results";
  std::vector<std::string> verification;
  double beta = 3.0;
  int n_restarts = 10;
  std::uint64_t master_seed = 0;
  bool record_timing = true;

  static ExperimentConfig from_json(const nlohmann::json& doc, const std::string& base_dir = "");
  nlohmann::json to_json() const;
  void validate() const;
};

/// Throws ParseError (with line) on malformed JSON and InputError on bad values.
ExperimentConfig load_config(const std::string& path);

std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts);
std::uint64_t problem_seed(std::uint64_t master, int task, std::uint64_t seed);
std::uint64_t run_seed(std::uint64_t master, ModelKind kind, int task, std::uint64_t seed);

struct RunKey {
  ModelKind kind = ModelKind::Gpbo;
  int task = 0;
  std::uint64_t seed = 0;
  std::string stem() const;
};

/// Target task, source data and reference values for one (task, seed) cell.
/// `table` must be non-null for discrete benchmarks.
BoProblem build_problem(const ExperimentConfig& config, int task, std::uint64_t seed,
                        const DiscreteTaskTable* table = nullptr);

extern const char* const kTraceHeader;
std::string format_trace_csv(const RunKey& key, const BoTrace& trace, bool record_timing);

struct RunOutcome {
  RunKey key;
  bool skipped = false;  // completion marker already present
  bool failed = false;
  std::string error;
};

struct ExperimentResult {
  std::vector<RunOutcome> runs;
  int failed = 0;
  bool verification_passed = true;
  nlohmann::json summary;
  int exit_code() const;
};

/// Runs the model x task x seed grid on `jobs` workers. Writes
/// `<out>/runs/<stem>.csv` plus a `.done` (or `.failed`) marker per run and
/// `<out>/summary.json`. Runs with a `.done` marker are not repeated.
ExperimentResult run_experiment(const ExperimentConfig& config, int jobs,
                                std::ostream* log = nullptr);

/// Summary recomputed purely from the completed trace CSVs under `<out>/runs`.
nlohmann::json aggregate_traces(const ExperimentConfig& config);

/// `--jobs` when given, else TRANSFER_BO_JOBS, else 1.
int resolve_jobs(std::optional<int> flag);

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& body);

struct TimingGrid {
  std::vector<ModelKind> kinds;
  std::vector<Eigen::Index> source_sizes;
  Eigen::Index target_size = 100;
  int reps = 5;
};

/// e.g. "kinds=hgp,shgp,mhgp;ns=200,400,800;nt=100;reps=5".
TimingGrid parse_timing_grid(const std::string& spec);
void write_timing_csv(std::ostream& out, const std::vector<TimingRecord>& records);

}  // namespace tbo
