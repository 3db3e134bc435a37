#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "tbo/errors.hpp"
#include "tbo/experiment.hpp"

using namespace tbo;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CmdResult {
  int status = -1;
  std::string output;
};

CmdResult sh(const std::string& cmd) {
  CmdResult r;
  FILE* p = popen((cmd + " 2>&1").c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  while (std::fgets(buf, sizeof buf, p)) r.output += buf;
  const int raw = pclose(p);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string cli() {
  const char* path = std::getenv("TRANSFER_BO_CLI");
  REQUIRE_MESSAGE(path != nullptr, "TRANSFER_BO_CLI must point at the transfer-bo binary");
  return path;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("tbo_cli_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string l;
  while (std::getline(ss, l))
    if (!l.empty()) out.push_back(l);
  return out;
}

json small_config(const fs::path& out, std::vector<std::string> kinds, int iterations, int seeds) {
  return {{"benchmark", {{"family", "forrester"}}},
          {"n_s", 1},
          {"points_per_source", 10},
          {"sigma_s", 0.1},
          {"sigma_t", 0.1},
          {"model_kinds", kinds},
          {"iterations", iterations},
          {"seeds", seeds},
          {"output_dir", out.string()},
          {"n_restarts", 2},
          {"record_timing", false}};
}

}  // namespace

TEST_CASE("families list") {
  const auto r = sh(cli() + " families list");
  CHECK(r.status == 0);
  for (const char* f : {"forrester", "alpine", "branin", "hartmann3", "hartmann6"})
    CHECK(r.output.find(f) != std::string::npos);
}

TEST_CASE("run writes one trace row per iteration with the fixed header") {
  const fs::path dir = scratch("run_basic");
  write(dir / "cfg.json", small_config(dir / "out", {"gpbo"}, 2, 1).dump());
  const auto r = sh(cli() + " run " + (dir / "cfg.json").string());
  CHECK(r.status == 0);
  const auto csv = lines(slurp(dir / "out" / "runs" / "gpbo_task0_seed0.csv"));
  REQUIRE(csv.size() == 3);
  CHECK(csv[0] == "seed,model,task,iteration,x_json,y,best_so_far,simple_regret,adtm,train_ms,acq_ms");
  CHECK(csv[1].rfind("0,gpbo,0,1,\"[", 0) == 0);
  CHECK(fs::exists(dir / "out" / "runs" / "gpbo_task0_seed0.done"));
  const json summary = json::parse(slurp(dir / "out" / "summary.json"));
  CHECK(summary["models"]["gpbo"]["mean_regret"].size() == 2);
  CHECK(summary["models"]["gpbo"]["sem_regret"][0].get<double>() == 0.0);
}

TEST_CASE("reruns are deterministic and resumable; jobs do not change results") {
  const fs::path dir = scratch("determinism");
  write(dir / "a.json", small_config(dir / "a", {"gpbo", "mhgp"}, 3, 2).dump());
  write(dir / "b.json", small_config(dir / "b", {"gpbo", "mhgp"}, 3, 2).dump());
  CHECK(sh(cli() + " run --jobs 1 " + (dir / "a.json").string()).status == 0);
  CHECK(sh("TRANSFER_BO_JOBS=2 " + cli() + " run " + (dir / "b.json").string()).status == 0);
  for (const char* stem : {"gpbo_task0_seed0", "gpbo_task0_seed1", "mhgp_task0_seed0", "mhgp_task0_seed1"}) {
    const std::string name = std::string(stem) + ".csv";
    CHECK(slurp(dir / "a" / "runs" / name) == slurp(dir / "b" / "runs" / name));
  }
  const std::string before = slurp(dir / "a" / "runs" / "gpbo_task0_seed0.csv");
  const auto again = sh(cli() + " run " + (dir / "a.json").string());
  CHECK(again.status == 0);
  CHECK(again.output.find("4 already complete") != std::string::npos);
  CHECK(slurp(dir / "a" / "runs" / "gpbo_task0_seed0.csv") == before);

  // Adding a model leaves the other runs' randomness alone.
  write(dir / "c.json", small_config(dir / "c", {"gpbo"}, 3, 2).dump());
  CHECK(sh(cli() + " run " + (dir / "c.json").string()).status == 0);
  CHECK(slurp(dir / "c" / "runs" / "gpbo_task0_seed1.csv") == slurp(dir / "a" / "runs" / "gpbo_task0_seed1.csv"));
}

TEST_CASE("summary statistics are recomputable from the traces") {
  const fs::path dir = scratch("aggregate");
  const json cfg = small_config(dir / "out", {"gpbo"}, 3, 3);
  write(dir / "cfg.json", cfg.dump());
  REQUIRE(sh(cli() + " run " + (dir / "cfg.json").string()).status == 0);
  std::vector<std::vector<double>> regret;
  for (int s = 0; s < 3; ++s) {
    const auto rows = lines(slurp(dir / "out" / "runs" / ("gpbo_task0_seed" + std::to_string(s) + ".csv")));
    std::vector<double> r;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      // x_json is quoted and may contain commas; regret is the fourth field from the end.
      std::vector<std::string> cells;
      std::stringstream ss(rows[i]);
      std::string c;
      while (std::getline(ss, c, ',')) cells.push_back(c);
      r.push_back(std::stod(cells[cells.size() - 4]));
      const double adtm = std::stod(cells[cells.size() - 3]);
      CHECK(adtm >= 0.0);
      CHECK(adtm <= 1.0);
    }
    regret.push_back(r);
  }
  const json summary = json::parse(slurp(dir / "out" / "summary.json"));
  for (int it = 0; it < 3; ++it) {
    double m = 0.0;
    for (const auto& r : regret) m += r[it] / 3.0;
    double ss = 0.0;
    for (const auto& r : regret) ss += (r[it] - m) * (r[it] - m);
    const double sem = std::sqrt(ss / 2.0) / std::sqrt(3.0);
    CHECK(summary["models"]["gpbo"]["mean_regret"][it].get<double>() == doctest::Approx(m).epsilon(1e-12));
    CHECK(summary["models"]["gpbo"]["sem_regret"][it].get<double>() == doctest::Approx(sem).epsilon(1e-12));
  }
  ExperimentConfig parsed = ExperimentConfig::from_json(cfg);
  CHECK(aggregate_traces(parsed)["models"] == summary["models"]);
}

TEST_CASE("verify command") {
  const auto none = sh(cli() + " verify --scope none");
  CHECK(none.status == 0);
  CHECK(none.output.find("0 checks") != std::string::npos);
  const auto lemma = sh(cli() + " verify --scope lemma1");
  CHECK(lemma.status == 0);
  CHECK(lines(lemma.output).size() == 21);
  CHECK(sh(cli() + " verify --scope bogus").status != 0);
}

TEST_CASE("timing command") {
  const auto r = sh(cli() + " timing 'kinds=mhgp,shgp;ns=40;nt=10;reps=3'");
  CHECK(r.status == 0);
  int mhgp = 0, shgp = 0;
  for (const auto& l : lines(r.output)) {
    if (l.rfind("mhgp,target-train,1,40,10,", 0) == 0) ++mhgp;
    if (l.rfind("shgp,target-train,1,40,10,", 0) == 0) ++shgp;
  }
  CHECK(mhgp == 3);
  CHECK(shgp == 3);
  CHECK(lines(r.output).front() == "kind,stage,n_s,N_s,N_t,rep,ms");
  CHECK(sh(cli() + " timing 'kinds=;ns=40;nt=10;reps=3'").status != 0);
  CHECK_THROWS_AS(parse_timing_grid("ns=10,20"), InputError);
  const TimingGrid g = parse_timing_grid("kinds=hgp,shgp,mhgp;ns=200,400,800,1600;nt=100;reps=5");
  CHECK(g.kinds.size() == 3);
  CHECK(g.source_sizes == std::vector<Eigen::Index>{200, 400, 800, 1600});
  CHECK(g.target_size == 100);
  CHECK(g.reps == 5);
}

TEST_CASE("config errors") {
  const fs::path dir = scratch("config_errors");
  write(dir / "broken.json", "{\n  \"benchmark\": \"branin\",\n  \"iterations\": ,\n}\n");
  const auto r = sh(cli() + " run " + (dir / "broken.json").string());
  CHECK(r.status == 2);
  CHECK(r.output.find("line 3") != std::string::npos);

  json bad = small_config(dir / "out", {"gpbo"}, 0, 1);
  CHECK_THROWS_AS(ExperimentConfig::from_json(bad), InputError);
  bad = small_config(dir / "out", {"gpbo"}, 2, 1);
  bad["seeds"] = {1, 1};
  CHECK_THROWS_AS(ExperimentConfig::from_json(bad), InputError);
  bad["seeds"] = {1, 2};
  bad["sigma_t"] = -1.0;
  CHECK_THROWS_AS(ExperimentConfig::from_json(bad), InputError);
  bad["sigma_t"] = 0.1;
  bad["colour"] = "blue";
  CHECK_THROWS_AS(ExperimentConfig::from_json(bad), InputError);
}

TEST_CASE("seed derivation") {
  CHECK(run_seed(0, ModelKind::Gpbo, 0, 1) != run_seed(0, ModelKind::Hgp, 0, 1));
  CHECK(run_seed(0, ModelKind::Gpbo, 0, 1) != run_seed(0, ModelKind::Gpbo, 1, 1));
  CHECK(run_seed(0, ModelKind::Gpbo, 0, 1) != run_seed(1, ModelKind::Gpbo, 0, 1));
  CHECK(run_seed(3, ModelKind::Gpbo, 2, 1) == run_seed(3, ModelKind::Gpbo, 2, 1));
  CHECK(problem_seed(0, 0, 1) != problem_seed(0, 0, 2));
}

TEST_CASE("failure threshold") {
  ExperimentResult r;
  r.runs.resize(4);
  r.failed = 2;
  CHECK(r.exit_code() == 0);
  r.failed = 3;
  CHECK(r.exit_code() == 1);
  r.failed = 0;
  r.verification_passed = false;
  CHECK(r.exit_code() == 1);
}

TEST_CASE("jobs resolution") {
  CHECK(resolve_jobs(3) == 3);
  CHECK_THROWS_AS(resolve_jobs(0), InputError);
}

TEST_CASE("discrete benchmark ingestion") {
  std::stringstream two;
  two << "task_id,x1,x2,objective\n";
  for (int t = 0; t < 2; ++t)
    for (int i = 0; i < 10; ++i) two << t << ',' << i * 0.1 << ',' << t << ',' << i * 1.5 - t << '\n';
  const DiscreteTaskTable table = parse_discrete_csv(two);
  CHECK(table.dim == 2);
  CHECK(table.task_ids == std::vector<int>{0, 1});
  Rng rng(1);
  const DiscreteBenchmark b = ingest_discrete_benchmark(table, rng, 1, 0, 5);
  CHECK(b.target_task == 1);
  REQUIRE(b.sources.size() == 1);
  CHECK(b.sources[0].size() == 5);
  CHECK(b.domain.candidates().rows() == 10);  // target rows are never downsampled
  CHECK(b.candidate_values.size() == 10);

  std::stringstream dup("task_id,x,objective\n0,1.0,5\n0,1.0,7\n0,2.0,1\n1,1.0,3\n");
  const DiscreteTaskTable d = parse_discrete_csv(dup);
  CHECK(d.features.at(0).rows() == 2);
  CHECK(d.objective.at(0)[0] == 5.0);

  std::stringstream bad("task_id,x,objective\n0,1.0,5\n0,oops,7\n");
  try {
    parse_discrete_csv(bad);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  std::stringstream short_row("task_id,x,objective\n0,1.0\n");
  CHECK_THROWS_AS(parse_discrete_csv(short_row), ParseError);
  std::stringstream one("task_id,x,objective\n0,1.0,5\n0,2.0,6\n");
  CHECK_THROWS_AS(parse_discrete_csv(one), InputError);
}

TEST_CASE("run on a discrete benchmark file") {
  const fs::path dir = scratch("discrete");
  std::stringstream csv;
  csv << "task_id,x,objective\n";
  for (int t = 0; t < 3; ++t)
    for (int i = 0; i < 12; ++i) {
      const double x = i / 11.0;
      csv << t << ',' << x << ',' << (x - 0.3 - 0.05 * t) * (x - 0.3 - 0.05 * t) << '\n';
    }
  write(dir / "tasks.csv", csv.str());
  const json cfg = {{"benchmark", {{"discrete_file", "tasks.csv"}}},
                    {"n_s", 2},
                    {"points_per_source", 6},
                    {"sigma_s", 0.0},
                    {"sigma_t", 0.0},
                    {"model_kinds", {"gpbo", "mhgp"}},
                    {"iterations", 4},
                    {"seeds", 2},
                    {"output_dir", "out"},
                    {"n_restarts", 1},
                    {"record_timing", false}};
  write(dir / "cfg.json", cfg.dump());
  const auto r = sh(cli() + " run " + (dir / "cfg.json").string());
  CHECK(r.status == 0);
  const json summary = json::parse(slurp(dir / "out" / "summary.json"));
  for (const char* k : {"gpbo", "mhgp"}) {
    CHECK(summary["models"][k]["runs"].get<int>() == 2);
    for (const auto& v : summary["models"][k]["mean_adtm"]) {
      CHECK(v.get<double>() >= 0.0);
      CHECK(v.get<double>() <= 1.0);
    }
  }
}
