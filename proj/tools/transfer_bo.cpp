// transfer-bo: experiment runner, oracle verification and timing sweeps.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "tbo/errors.hpp"
#include "tbo/experiment.hpp"
#include "tbo/function_families.hpp"
#include "tbo/verification.hpp"

namespace fs = std::filesystem;

namespace {

int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed,
            const std::string& out, std::optional<int> jobs) {
  tbo::ExperimentConfig config = tbo::load_config(config_path);
  if (seed) config.master_seed = *seed;
  if (!out.empty()) config.output_dir = out;
  const tbo::ExperimentResult result = tbo::run_experiment(config, tbo::resolve_jobs(jobs), &std::cerr);
  int skipped = 0;
  for (const auto& r : result.runs) skipped += r.skipped ? 1 : 0;
  std::cout << result.runs.size() << " runs, " << result.failed << " failed, " << skipped
            << " already complete; summary in " << (fs::path(config.output_dir) / "summary.json").string()
            << "\n";
  return result.exit_code();
}

int cmd_verify(const std::vector<std::string>& scopes, std::uint64_t seed, const std::string& out) {
  nlohmann::json doc = nlohmann::json::object();
  bool passed = true;
  std::size_t n_checks = 0;
  for (const std::string& scope : scopes) {
    const tbo::VerificationReport report = tbo::run_verification(scope, seed);
    for (const auto& c : report.checks) {
      std::cout << (c.passed ? "PASS " : "FAIL ") << c.suite << '/' << c.name;
      if (!c.passed) std::cout << ' ' << c.details.dump();
      std::cout << '\n';
    }
    n_checks += report.checks.size();
    passed = passed && report.passed();
    doc[scope] = report.to_json();
  }
  std::cout << n_checks << " checks, " << (passed ? "all passed" : "FAILURES") << '\n';
  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) throw tbo::InputError("cannot write '" + out + "'");
    f << doc.dump(2) << '\n';
  }
  return passed ? 0 : 1;
}

int cmd_timing(const std::string& spec, std::optional<std::uint64_t> seed, const std::string& out) {
  const tbo::TimingGrid grid = tbo::parse_timing_grid(spec);
  tbo::TimingOptions options;
  if (seed) options.seed = *seed;
  const tbo::TimingSweepResult sweep =
      tbo::timing_sweep(grid.kinds, grid.source_sizes, grid.target_size, grid.reps, options);
  if (out.empty()) {
    tbo::write_timing_csv(std::cout, sweep.records);
    std::cout << '\n';
  } else {
    fs::create_directories(out);
    std::ofstream csv(fs::path(out) / "timing.csv");
    tbo::write_timing_csv(csv, sweep.records);
    std::ofstream slopes(fs::path(out) / "slopes.csv");
    slopes << "kind,slope\n";
    for (const auto& [kind, slope] : sweep.slopes) slopes << kind << ',' << slope << '\n';
  }
  std::cout << "kind,slope\n";
  for (const auto& [kind, slope] : sweep.slopes) std::cout << kind << ',' << slope << '\n';
  return 0;
}

int cmd_families() {
  for (const tbo::Family f : tbo::all_families()) {
    const tbo::Box box = tbo::family_box(f);
    std::cout << tbo::to_string(f) << "  dim=" << box.dim() << "  box=";
    for (Eigen::Index d = 0; d < box.dim(); ++d)
      std::cout << (d ? "x" : "") << '[' << box.lower[d] << ',' << box.upper[d] << ']';
    std::cout << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transfer-learning Bayesian optimization experiments"};
  app.require_subcommand(1);
  app.fallthrough();

  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> jobs;
  app.add_option("--seed", seed, "Master seed (overrides the config)");
  app.add_option("--out", out, "Output directory (run, timing) or report file (verify)");
  app.add_option("--jobs", jobs, "Parallel runs (default: TRANSFER_BO_JOBS or 1)");

  std::string config_path;
  auto* run = app.add_subcommand("run", "Run a BO experiment grid from a JSON config");
  run->add_option("config", config_path, "Config file")->required();

  std::vector<std::string> scopes;
  auto* verify = app.add_subcommand("verify", "Run verification oracle suites");
  verify->add_option("--scope", scopes, "lemma1, props, corollary, gradient, wsgp, all or none")
      ->delimiter(',');

  std::string grid;
  auto* timing = app.add_subcommand("timing", "Time one training gradient step across sizes");
  timing->add_option("grid", grid, "e.g. kinds=hgp,shgp,mhgp;ns=200,400,800,1600;nt=100;reps=5")
      ->required();

  auto* families = app.add_subcommand("families", "Benchmark function families");
  families->add_subcommand("list", "List families and their input boxes");
  families->require_subcommand(1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*run) return cmd_run(config_path, seed, out, jobs);
    if (*verify) return cmd_verify(scopes.empty() ? std::vector<std::string>{"all"} : scopes,
                                   seed.value_or(0), out);
    if (*timing) return cmd_timing(grid, seed, out);
    if (*families) return cmd_families();
  } catch (const tbo::ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return 2;
  } catch (const tbo::InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
