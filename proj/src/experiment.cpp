#include "tbo/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "tbo/errors.hpp"

namespace tbo {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_ms(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::uint64_t splitmix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <class T>
T get_or(const json& doc, const char* key, T fallback) {
  if (!doc.contains(key)) return fallback;
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception& e) {
    throw InputError(std::string("config key '") + key + "': " + e.what());
  }
}

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    const auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    const auto e = item.find_last_not_of(" \t");
    out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

// Splits one CSV line, honouring double-quoted cells.
std::vector<std::string> csv_cells(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      out.emplace_back();
    } else if (c != '\r') {
      out.back() += c;
    }
  }
  return out;
}

void write_atomically(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write '" + tmp.string() + "'");
    out << content;
  }
  fs::rename(tmp, path);
}

std::vector<RunKey> grid(const ExperimentConfig& config) {
  std::vector<RunKey> keys;
  for (ModelKind kind : config.model_kinds)
    for (int task = 0; task < config.tasks; ++task)
      for (std::uint64_t seed : config.seeds) keys.push_back({kind, task, seed});
  return keys;
}

std::vector<FamilyTask> alpine_sources(int n_s, Rng& rng) {
  std::vector<FamilyTask> all = alpine_benchmark_sources();
  if (n_s > static_cast<int>(all.size()))
    throw InputError("alpine benchmark has only " + std::to_string(all.size()) + " source shifts");
  std::vector<std::size_t> idx(all.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(static_cast<std::size_t>(n_s));
  std::sort(idx.begin(), idx.end());
  std::vector<FamilyTask> out;
  for (std::size_t i : idx) out.push_back(all[i]);
  return out;
}

}  // namespace

// --- config -----------------------------------------------------------------------

ExperimentConfig ExperimentConfig::from_json(const json& doc, const std::string& base_dir) {
  if (!doc.is_object()) throw InputError("config must be an object");
  static const std::set<std::string> known{
      "benchmark", "n_s",        "points_per_source", "sigma_s",     "sigma_t",
      "model_kinds", "iterations", "seeds",           "tasks",       "output_dir",
      "verification", "beta",    "n_restarts",        "master_seed", "record_timing"};
  for (const auto& item : doc.items())
    if (!known.count(item.key())) throw InputError("unknown config key '" + item.key() + "'");

  ExperimentConfig c;
  if (!doc.contains("benchmark")) throw InputError("config needs a 'benchmark'");
  const json& b = doc.at("benchmark");
  if (b.is_string()) {
    c.benchmark.family = parse_family(b.get<std::string>());
  } else if (b.is_object()) {
    if (b.contains("family")) c.benchmark.family = parse_family(b.at("family").get<std::string>());
    if (b.contains("discrete_file")) {
      fs::path p = b.at("discrete_file").get<std::string>();
      if (p.is_relative() && !base_dir.empty()) p = fs::path(base_dir) / p;
      c.benchmark.discrete_file = p.string();
    }
    if (b.contains("target_task")) c.benchmark.target_task = b.at("target_task").get<int>();
  } else {
    throw InputError("'benchmark' must be a family name or an object");
  }

  c.n_s = get_or(doc, "n_s", c.n_s);
  c.points_per_source = get_or<Eigen::Index>(doc, "points_per_source", c.points_per_source);
  c.sigma_s = get_or(doc, "sigma_s", c.sigma_s);
  c.sigma_t = get_or(doc, "sigma_t", c.sigma_t);
  c.iterations = get_or(doc, "iterations", c.iterations);
  c.tasks = get_or(doc, "tasks", c.tasks);
  c.output_dir = get_or(doc, "output_dir", c.output_dir);
  if (fs::path(c.output_dir).is_relative() && !base_dir.empty())
    c.output_dir = (fs::path(base_dir) / c.output_dir).string();
  c.beta = get_or(doc, "beta", c.beta);
  c.n_restarts = get_or(doc, "n_restarts", c.n_restarts);
  c.master_seed = get_or(doc, "master_seed", c.master_seed);
  c.record_timing = get_or(doc, "record_timing", c.record_timing);

  if (!doc.contains("model_kinds")) throw InputError("config needs 'model_kinds'");
  for (const auto& k : doc.at("model_kinds")) c.model_kinds.push_back(parse_model_kind(k.get<std::string>()));

  if (doc.contains("seeds")) {
    const json& s = doc.at("seeds");
    c.seeds.clear();
    if (s.is_number_integer()) {
      const auto n = s.get<std::int64_t>();
      if (n < 1) throw InputError("'seeds' count must be >= 1");
      for (std::int64_t i = 0; i < n; ++i) c.seeds.push_back(static_cast<std::uint64_t>(i));
    } else if (s.is_array()) {
      for (const auto& v : s) c.seeds.push_back(v.get<std::uint64_t>());
    } else {
      throw InputError("'seeds' must be a count or a list");
    }
  }

  if (doc.contains("verification")) {
    const json& v = doc.at("verification");
    if (v.is_boolean()) {
      if (v.get<bool>()) c.verification = {"all"};
    } else if (v.is_string()) {
      if (v.get<std::string>() != "none") c.verification = {v.get<std::string>()};
    } else if (v.is_array()) {
      for (const auto& s : v) c.verification.push_back(s.get<std::string>());
    } else {
      throw InputError("'verification' must be a bool, a scope or a list of scopes");
    }
  }
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  if (benchmark.family.has_value() == !benchmark.discrete_file.empty())
    throw InputError("benchmark needs exactly one of 'family' or 'discrete_file'");
  if (iterations < 1) throw InputError("iterations must be >= 1");
  if (tasks < 1) throw InputError("tasks must be >= 1");
  if (n_s < 0) throw InputError("n_s must be >= 0");
  if (points_per_source < 0) throw InputError("points_per_source must be >= 0");
  if (!(sigma_s >= 0.0) || !(sigma_t >= 0.0)) throw InputError("noise levels must be >= 0");
  if (!(beta >= 0.0)) throw InputError("beta must be >= 0");
  if (n_restarts < 1) throw InputError("n_restarts must be >= 1");
  if (model_kinds.empty()) throw InputError("model_kinds is empty");
  if (std::set<ModelKind>(model_kinds.begin(), model_kinds.end()).size() != model_kinds.size())
    throw InputError("model_kinds contains duplicates");
  if (seeds.empty()) throw InputError("no seeds");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw InputError("seeds must be distinct");
  for (ModelKind k : model_kinds)
    if (k != ModelKind::Gpbo && n_s < 1)
      throw InputError(std::string(to_string(k)) + " needs n_s >= 1");
}

json ExperimentConfig::to_json() const {
  json b = json::object();
  if (benchmark.family) b["family"] = std::string(to_string(*benchmark.family));
  if (!benchmark.discrete_file.empty()) b["discrete_file"] = benchmark.discrete_file;
  if (benchmark.target_task) b["target_task"] = *benchmark.target_task;
  json kinds = json::array();
  for (ModelKind k : model_kinds) kinds.push_back(std::string(to_string(k)));
  return {{"benchmark", b},
          {"n_s", n_s},
          {"points_per_source", points_per_source},
          {"sigma_s", sigma_s},
          {"sigma_t", sigma_t},
          {"model_kinds", kinds},
          {"iterations", iterations},
          {"seeds", seeds},
          {"tasks", tasks},
          {"output_dir", output_dir},
          {"verification", verification},
          {"beta", beta},
          {"n_restarts", n_restarts},
          {"master_seed", master_seed},
          {"record_timing", record_timing}};
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(upto), '\n'));
    throw ParseError(e.what(), line);
  }
  return ExperimentConfig::from_json(doc, fs::path(path).parent_path().string());
}

// --- seeding ------------------------------------------------------------------------

std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (std::uint64_t p : parts) h = splitmix(h ^ splitmix(p));
  return h;
}

std::uint64_t problem_seed(std::uint64_t master, int task, std::uint64_t seed) {
  return mix_seed({master, 0x70726f62ULL, static_cast<std::uint64_t>(task), seed});
}

std::uint64_t run_seed(std::uint64_t master, ModelKind kind, int task, std::uint64_t seed) {
  return mix_seed({master, fnv1a(to_string(kind)), static_cast<std::uint64_t>(task), seed});
}

std::string RunKey::stem() const {
  return std::string(to_string(kind)) + "_task" + std::to_string(task) + "_seed" + std::to_string(seed);
}

// --- problems -----------------------------------------------------------------------

BoProblem build_problem(const ExperimentConfig& config, int task, std::uint64_t seed,
                        const DiscreteTaskTable* table) {
  Rng rng(problem_seed(config.master_seed, task, seed));
  BoProblem problem;
  problem.noise_std = config.sigma_t;

  if (!config.benchmark.family) {
    if (table == nullptr) throw InputError("discrete benchmark table not loaded");
    DiscreteBenchmark bench = ingest_discrete_benchmark(*table, rng, config.benchmark.target_task,
                                                        config.n_s, config.points_per_source);
    problem.domain = bench.domain;
    problem.candidate_values = bench.candidate_values;
    problem.sources = std::move(bench.sources);
    problem.true_minimum = problem.candidate_values.minCoeff();
    problem.adtm_range = std::make_pair(problem.candidate_values.minCoeff(), problem.candidate_values.maxCoeff());
    return problem;
  }

  const Family family = *config.benchmark.family;
  std::vector<FamilyTask> source_tasks;
  std::optional<FamilyTask> target;
  if (family == Family::Alpine) {
    source_tasks = alpine_sources(config.n_s, rng);
    target = alpine_benchmark_target();
  } else {
    target = sample_task(family, rng);
    for (int s = 0; s < config.n_s; ++s) source_tasks.push_back(sample_task(family, rng));
  }
  for (std::size_t s = 0; s < source_tasks.size(); ++s)
    problem.sources.push_back(generate_source_data(source_tasks[s], config.points_per_source,
                                                   config.sigma_s, rng, static_cast<int>(s)));

  const FamilyTask t = *target;
  problem.domain = Domain::continuous(t.box());
  problem.objective = [t](const Eigen::VectorXd& x) { return t(x); };
  const Minimum min = true_minimum(t);
  problem.true_minimum = min.value;
  problem.adtm_range = observed_value_range(t, min.value);
  return problem;
}

// --- traces ---------------------------------------------------------------------------

const char* const kTraceHeader =
    "seed,model,task,iteration,x_json,y,best_so_far,simple_regret,adtm,train_ms,acq_ms";

std::string format_trace_csv(const RunKey& key, const BoTrace& trace, bool record_timing) {
  std::string out = std::string(kTraceHeader) + "\n";
  const std::string prefix =
      std::to_string(key.seed) + "," + std::string(to_string(key.kind)) + "," + std::to_string(key.task) + ",";
  for (const IterationRecord& r : trace.records) {
    std::string x = "\"[";
    for (Eigen::Index d = 0; d < r.x.size(); ++d) x += (d ? "," : "") + fmt(r.x[d]);
    x += "]\"";
    out += prefix + std::to_string(r.iteration) + "," + x + "," + fmt(r.y) + "," + fmt(r.best_so_far) +
           "," + fmt(r.simple_regret) + "," + fmt(r.adtm) + "," +
           fmt_ms(record_timing ? r.train_ms : 0.0) + "," + fmt_ms(record_timing ? r.acq_ms : 0.0) + "\n";
  }
  return out;
}

// --- orchestration ------------------------------------------------------------------

int resolve_jobs(std::optional<int> flag) {
  if (flag) {
    if (*flag < 1) throw InputError("--jobs must be >= 1");
    return *flag;
  }
  if (const char* env = std::getenv("TRANSFER_BO_JOBS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) throw InputError("TRANSFER_BO_JOBS must be a positive integer");
    return static_cast<int>(v);
  }
  return 1;
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& body) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

int ExperimentResult::exit_code() const {
  if (!verification_passed) return 1;
  return 2 * failed > static_cast<int>(runs.size()) ? 1 : 0;
}

ExperimentResult run_experiment(const ExperimentConfig& config, int jobs, std::ostream* log) {
  config.validate();
  const fs::path out_dir(config.output_dir);
  const fs::path runs_dir = out_dir / "runs";
  fs::create_directories(runs_dir);
  write_atomically(out_dir / "config.json", config.to_json().dump(2) + "\n");

  ExperimentResult result;
  std::mutex log_mutex;
  auto say = [&](const std::string& msg) {
    if (!log) return;
    std::lock_guard lock(log_mutex);
    *log << msg << std::endl;
  };

  json verification = json::object();
  for (const std::string& scope : config.verification) {
    const VerificationReport report = run_verification(scope, config.master_seed);
    verification[scope] = report.to_json();
    if (!report.passed()) result.verification_passed = false;
    say("verification " + scope + ": " + (report.passed() ? "pass" : "FAIL"));
  }
  if (!config.verification.empty())
    write_atomically(out_dir / "verification.json", verification.dump(2) + "\n");

  std::optional<DiscreteTaskTable> table;
  if (!config.benchmark.discrete_file.empty()) table = read_discrete_csv(config.benchmark.discrete_file);

  const std::vector<RunKey> keys = grid(config);
  result.runs.resize(keys.size());
  parallel_for(keys.size(), jobs, [&](std::size_t i) {
    const RunKey& key = keys[i];
    RunOutcome& outcome = result.runs[i];
    outcome.key = key;
    const fs::path csv = runs_dir / (key.stem() + ".csv");
    const fs::path done = runs_dir / (key.stem() + ".done");
    const fs::path failed = runs_dir / (key.stem() + ".failed");
    if (fs::exists(done) && fs::exists(csv)) {
      outcome.skipped = true;
      return;
    }
    BoTrace trace;
    try {
      const BoProblem problem = build_problem(config, key.task, key.seed, table ? &*table : nullptr);
      BoConfig bo;
      bo.kind = key.kind;
      bo.iterations = config.iterations;
      bo.beta = config.beta;
      bo.training.n_restarts = config.n_restarts;
      Rng rng(run_seed(config.master_seed, key.kind, key.task, key.seed));
      trace = run_bo(problem, bo, rng);
    } catch (const std::exception& e) {
      trace.failed = true;
      trace.error = e.what();
    }
    write_atomically(csv, format_trace_csv(key, trace, config.record_timing));
    if (trace.failed) {
      outcome.failed = true;
      outcome.error = trace.error;
      write_atomically(failed, trace.error + "\n");
      say("run " + key.stem() + " failed: " + trace.error);
    } else {
      fs::remove(failed);
      write_atomically(done, "");
      say("run " + key.stem() + " done");
    }
  });

  for (const RunOutcome& r : result.runs) result.failed += r.failed ? 1 : 0;
  result.summary = aggregate_traces(config);
  result.summary["runs_total"] = result.runs.size();
  result.summary["runs_failed"] = result.failed;
  if (!config.verification.empty()) result.summary["verification_passed"] = result.verification_passed;
  write_atomically(out_dir / "summary.json", result.summary.dump(2) + "\n");
  return result;
}

json aggregate_traces(const ExperimentConfig& config) {
  const fs::path runs_dir = fs::path(config.output_dir) / "runs";
  const auto n_iter = static_cast<std::size_t>(config.iterations);
  json models = json::object();
  for (ModelKind kind : config.model_kinds) {
    std::vector<std::vector<double>> regret, adtm;
    double train_ms = 0.0, acq_ms = 0.0;
    std::size_t timing_rows = 0;
    int failed = 0;
    for (int task = 0; task < config.tasks; ++task) {
      for (std::uint64_t seed : config.seeds) {
        const RunKey key{kind, task, seed};
        const fs::path csv = runs_dir / (key.stem() + ".csv");
        if (!fs::exists(runs_dir / (key.stem() + ".done")) || !fs::exists(csv)) {
          ++failed;
          continue;
        }
        std::ifstream in(csv);
        std::string line;
        std::getline(in, line);
        std::vector<double> r, a;
        int line_no = 1;
        while (std::getline(in, line)) {
          ++line_no;
          if (line.empty()) continue;
          const auto cells = csv_cells(line);
          if (cells.size() != 11) throw ParseError("malformed trace row in " + csv.string(), line_no);
          r.push_back(std::stod(cells[7]));
          a.push_back(std::stod(cells[8]));
          train_ms += std::stod(cells[9]);
          acq_ms += std::stod(cells[10]);
          ++timing_rows;
        }
        // A discrete run may stop early once every candidate is observed; its
        // best value then stays fixed for the remaining iterations.
        if (r.empty() || r.size() > n_iter)
          throw InputError("trace " + csv.string() + " has the wrong number of rows");
        r.resize(n_iter, r.back());
        a.resize(n_iter, a.back());
        regret.push_back(std::move(r));
        adtm.push_back(std::move(a));
      }
    }
    auto moments = [&](const std::vector<std::vector<double>>& runs, json& mean, json& sem) {
      mean = json::array();
      sem = json::array();
      const double n = static_cast<double>(runs.size());
      for (std::size_t it = 0; it < n_iter && !runs.empty(); ++it) {
        double m = 0.0;
        for (const auto& run : runs) m += run[it];
        m /= n;
        double ss = 0.0;
        for (const auto& run : runs) ss += (run[it] - m) * (run[it] - m);
        mean.push_back(m);
        sem.push_back(runs.size() > 1 ? std::sqrt(ss / (n - 1.0)) / std::sqrt(n) : 0.0);
      }
    };
    json entry;
    entry["runs"] = regret.size();
    entry["failed"] = failed;
    moments(regret, entry["mean_regret"], entry["sem_regret"]);
    moments(adtm, entry["mean_adtm"], entry["sem_adtm"]);
    entry["mean_train_ms"] = timing_rows ? train_ms / static_cast<double>(timing_rows) : 0.0;
    entry["mean_acq_ms"] = timing_rows ? acq_ms / static_cast<double>(timing_rows) : 0.0;
    models[std::string(to_string(kind))] = entry;
  }
  return {{"iterations", config.iterations}, {"models", models}};
}

// --- timing grid ------------------------------------------------------------------------

TimingGrid parse_timing_grid(const std::string& spec) {
  TimingGrid grid;
  bool have_kinds = false, have_ns = false;
  for (const std::string& part : split_list(spec, ';')) {
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw InputError("timing grid: expected key=value, got '" + part + "'");
    const std::string key = part.substr(0, eq);
    const std::vector<std::string> values = split_list(part.substr(eq + 1), ',');
    auto to_int = [&](const std::string& s) {
      std::size_t used = 0;
      long v = 0;
      try {
        v = std::stol(s, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != s.size()) throw InputError("timing grid: '" + s + "' is not an integer");
      return v;
    };
    if (key == "kinds") {
      have_kinds = true;
      for (const auto& v : values) grid.kinds.push_back(parse_model_kind(v));
    } else if (key == "ns") {
      have_ns = true;
      for (const auto& v : values) grid.source_sizes.push_back(to_int(v));
    } else if (key == "nt" && values.size() == 1) {
      grid.target_size = to_int(values[0]);
    } else if (key == "reps" && values.size() == 1) {
      grid.reps = static_cast<int>(to_int(values[0]));
    } else {
      throw InputError("timing grid: unknown or malformed key '" + key + "'");
    }
  }
  if (!have_kinds || grid.kinds.empty()) throw InputError("timing grid: empty kinds list");
  if (!have_ns || grid.source_sizes.empty()) throw InputError("timing grid: empty ns list");
  if (grid.reps < 3) throw InputError("timing grid: reps must be >= 3");
  return grid;
}

void write_timing_csv(std::ostream& out, const std::vector<TimingRecord>& records) {
  out << "kind,stage,n_s,N_s,N_t,rep,ms\n";
  for (const TimingRecord& r : records)
    out << r.kind << ',' << r.stage << ',' << r.n_sources << ',' << r.n_source_points << ','
        << r.n_target_points << ',' << r.rep << ',' << fmt(r.ms) << '\n';
}

}  // namespace tbo
