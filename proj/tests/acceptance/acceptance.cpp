// Acceptance criteria runner: `acceptance AC-n` checks one criterion, no
// argument checks them all. One PASS/FAIL line per criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>

#include "tbo/experiment.hpp"
#include "tbo/transfer_models.hpp"
#include "tbo/verification.hpp"

using namespace tbo;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct Outcome {
  bool passed = false;
  std::string details;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

double max_abs(const MatrixXd& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

Outcome suite_outcome(const std::vector<CheckResult>& checks, const std::string& what) {
  int failed = 0;
  std::string first;
  for (const auto& c : checks)
    if (!c.passed) {
      if (!failed) first = c.name + " " + c.details.dump();
      ++failed;
    }
  return {failed == 0 && !checks.empty(),
          std::to_string(checks.size() - failed) + "/" + std::to_string(checks.size()) + " " + what +
              (failed ? "; first failure: " + first : "")};
}

// HGP conditioned on the source equals the SHGP target prior.
Outcome ac1() { return suite_outcome(verify_corollary(101, 10), "instances within 1e-8"); }

// SHGP closed form against prior averaging over source draws.
Outcome ac2() {
  Rng rng(202);
  const OracleInstance inst = make_oracle_instance(rng, 8, 4, 5);
  Rng mc(203);
  const McEstimate est = mc_prior_average(condition(inst.source_hp, inst.source), inst.target,
                                          inst.target_hp, inst.queries, 5000, mc);
  const auto shgp = hierarchical_from_hyperparameters(ModelKind::Shgp, {inst.source}, inst.target,
                                                      {inst.source_hp, inst.target_hp})
                        .predict(inst.queries);
  const EstimateComparison c = compare_to_estimate(shgp.mean, shgp.covariance, est, 3.0);
  return {c.passed, "max |z| mean " + num(c.max_mean_z) + ", variance " + num(c.max_variance_z) +
                        " (limit 3, M=5000, ESS " + num(est.effective_sample_size) + ")"};
}

// BHGP closed form against posterior averaging; BHGP mean equals MHGP mean.
Outcome ac3() {
  Rng rng(302);
  const OracleInstance inst = make_oracle_instance(rng, 8, 4, 5);
  Rng mc(303);
  const McEstimate est = mc_posterior_average(condition(inst.source_hp, inst.source), inst.target,
                                              inst.target_hp, inst.queries, 5000, mc);
  auto model = [&](ModelKind k) {
    return hierarchical_from_hyperparameters(k, {inst.source}, inst.target, {inst.source_hp, inst.target_hp})
        .predict(inst.queries);
  };
  const auto bhgp = model(ModelKind::Bhgp), mhgp = model(ModelKind::Mhgp);
  const EstimateComparison c = compare_to_estimate(bhgp.mean, bhgp.covariance, est, 3.0);
  const double mean_gap = max_abs(bhgp.mean - mhgp.mean);
  return {c.passed && mean_gap <= 1e-10,
          "max |z| mean " + num(c.max_mean_z) + ", variance " + num(c.max_variance_z) +
              " (limit 3, M=5000); |BHGP mean - MHGP mean| = " + num(mean_gap)};
}

Outcome ac4() { return suite_outcome(verify_lemma1(404, 20, 20000), "instances within 4 SE at M=20000"); }

Outcome ac5() { return suite_outcome(verify_gradients(505, 50), "instances with rel. error < 1e-4"); }

// Blocked WSGP inverse plus training-step scaling slopes.
Outcome ac6() {
  const Outcome blocked = suite_outcome(verify_wsgp_blocked(606, 10), "WSGP instances within 1e-8");
  const std::vector<Eigen::Index> sizes{200, 400, 800, 1600};
  const TimingSweepResult sweep =
      timing_sweep({ModelKind::Hgp, ModelKind::Shgp, ModelKind::Mhgp}, sizes, 100, 5);
  const std::map<std::string, std::pair<double, double>> ranges{
      {"hgp", {2.5, 3.5}}, {"shgp", {1.5, 2.5}}, {"mhgp", {0.7, 1.3}}};
  bool ok = blocked.passed;
  std::string d = blocked.details + "; slopes:";
  for (const auto& [kind, range] : ranges) {
    const double s = sweep.slopes.at(kind);
    const bool in = s >= range.first && s <= range.second;
    ok = ok && in;
    d += " " + kind + "=" + num(s) + (in ? "" : " (outside [" + num(range.first) + "," + num(range.second) + "])");
  }
  // Median time per size, for the record.
  d += "; median ms at N_s=1600:";
  for (const auto& [kind, range] : ranges) {
    std::vector<double> t;
    for (const auto& r : sweep.records)
      if (r.kind == kind && r.n_source_points == 1600) t.push_back(r.ms);
    std::sort(t.begin(), t.end());
    d += " " + kind + "=" + num(t[t.size() / 2]);
  }
  return {ok, d};
}

// Branin single-source regret ordering at desk scale.
Outcome ac7() {
  ExperimentConfig cfg;
  cfg.benchmark.family = Family::Branin;
  cfg.n_s = 1;
  cfg.points_per_source = 40;
  cfg.sigma_s = 1.0;
  cfg.sigma_t = 1.0;
  cfg.iterations = 30;
  cfg.seeds.clear();
  for (std::uint64_t s = 0; s < 30; ++s) cfg.seeds.push_back(s);
  cfg.model_kinds = {ModelKind::Gpbo, ModelKind::Hgp, ModelKind::Wsgp,
                     ModelKind::Shgp, ModelKind::Bhgp, ModelKind::Mhgp};
  cfg.master_seed = 2024;

  struct Job {
    ModelKind kind;
    std::uint64_t seed;
    double regret = std::numeric_limits<double>::quiet_NaN();
    std::string error;
  };
  std::vector<Job> jobs;
  for (ModelKind k : cfg.model_kinds)
    for (std::uint64_t s : cfg.seeds) jobs.push_back({k, s});
  parallel_for(jobs.size(), resolve_jobs(std::nullopt), [&](std::size_t i) {
    Job& job = jobs[i];
    const BoProblem problem = build_problem(cfg, 0, job.seed);
    BoConfig bo;
    bo.kind = job.kind;
    bo.iterations = cfg.iterations;
    Rng rng(run_seed(cfg.master_seed, job.kind, 0, job.seed));
    const BoTrace trace = run_bo(problem, bo, rng);
    if (trace.failed || trace.records.size() != static_cast<std::size_t>(cfg.iterations))
      job.error = trace.error.empty() ? "short trace" : trace.error;
    else
      job.regret = trace.records.back().simple_regret;
  });

  std::map<ModelKind, std::pair<double, double>> stats;  // mean, SE
  int failures = 0;
  for (ModelKind k : cfg.model_kinds) {
    std::vector<double> r;
    for (const Job& j : jobs)
      if (j.kind == k) {
        if (j.error.empty())
          r.push_back(j.regret);
        else
          ++failures;
      }
    double m = 0.0;
    for (double v : r) m += v;
    m /= static_cast<double>(r.size());
    double ss = 0.0;
    for (double v : r) ss += (v - m) * (v - m);
    stats[k] = {m, std::sqrt(ss / (r.size() - 1.0)) / std::sqrt(static_cast<double>(r.size()))};
  }
  const auto [g_mean, g_se] = stats[ModelKind::Gpbo];
  bool ok = failures == 0;
  std::string d;
  for (ModelKind k : {ModelKind::Hgp, ModelKind::Wsgp, ModelKind::Shgp}) {
    const auto [m, se] = stats[k];
    const double pooled = std::sqrt(se * se + g_se * g_se);
    const bool below = m < g_mean - pooled;
    ok = ok && below;
    d += std::string(to_string(k)) + " " + num(m) + (below ? " < " : " NOT < ") + num(g_mean - pooled) + "; ";
  }
  const bool boost = stats[ModelKind::Bhgp].first <= stats[ModelKind::Mhgp].first;
  ok = ok && boost;
  d += "bhgp " + num(stats[ModelKind::Bhgp].first) + (boost ? " <= " : " NOT <= ") + "mhgp " +
       num(stats[ModelKind::Mhgp].first) + "; means(SE):";
  for (const auto& [k, s] : stats) d += " " + std::string(to_string(k)) + "=" + num(s.first) + "(" + num(s.second) + ")";
  if (failures) d += "; failed runs: " + std::to_string(failures);
  return {ok, d};
}

// Alpine visualisation instance with trained models.
Outcome ac8() {
  auto f = [](double x, double c) { return x * std::sin(x + std::numbers::pi) + c * x; };
  Rng data(808);
  std::uniform_real_distribution<double> u(-10.0, 0.0);
  std::normal_distribution<double> noise(0.0, 0.1);
  MatrixXd xs(20, 1);
  VectorXd ys(20);
  for (Eigen::Index i = 0; i < 20; ++i) {
    xs(i, 0) = u(data);
    ys[i] = f(xs(i, 0), 0.5) + noise(data);
  }
  MatrixXd xt(4, 1);
  xt << 1, 2, 3, 4;
  VectorXd yt(4);
  for (Eigen::Index i = 0; i < 4; ++i) yt[i] = f(xt(i, 0), -0.5) + noise(data);
  const std::vector<TaskDataset> sources{TaskDataset(xs, ys, 0)};
  const TaskDataset target(xt, yt, 1);

  auto train = [&](ModelKind k) {
    Rng rng(809);
    return ModelTrainer(k, sources, rng).train(target, rng);
  };
  const MatrixXd q = VectorXd::LinSpaced(9, 1.0, 9.0);
  const auto shgp = train(ModelKind::Shgp)->predict_marginal(q);
  const auto mhgp = train(ModelKind::Mhgp)->predict_marginal(q);
  const auto bhgp = train(ModelKind::Bhgp)->predict_marginal(q);
  const double sd_m = std::sqrt(mhgp.variance[7]), sd_s = std::sqrt(shgp.variance[7]);
  bool dominates = true;
  for (Eigen::Index i = 0; i < 9; ++i) dominates = dominates && bhgp.variance[i] >= mhgp.variance[i];
  return {sd_m < sd_s && dominates,
          "std at x=8: MHGP " + num(sd_m) + ", SHGP " + num(sd_s) + ", BHGP " + num(std::sqrt(bhgp.variance[7])) +
              "; BHGP >= MHGP on 1..9: " + (dominates ? "yes" : "no")};
}

// Degenerate cases where the models must coincide.
Outcome ac9() {
  Rng rng(909);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto task = [&](Eigen::Index n, int id) {
    MatrixXd x(n, 1);
    VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      x(i, 0) = u(rng);
      y[i] = std::sin(5.0 * x(i, 0)) + 0.1 * u(rng);
    }
    return TaskDataset(x, y, id);
  };
  const auto ks = KernelHyperparams::isotropic(1, 1.2, 0.3, 0.01);
  const auto kt = KernelHyperparams::isotropic(1, 0.4, 0.5, 0.02);
  const MatrixXd q = VectorXd::LinSpaced(11, -0.2, 1.2);
  const TaskDataset s = task(10, 0), t = task(5, 1);

  const auto e_sh = hierarchical_from_hyperparameters(ModelKind::Shgp, {s}, TaskDataset::empty(1, 1), {ks, kt}).predict(q);
  const auto e_bh = hierarchical_from_hyperparameters(ModelKind::Bhgp, {s}, TaskDataset::empty(1, 1), {ks, kt}).predict(q);
  const double empty_gap = std::max(max_abs(e_sh.mean - e_bh.mean), max_abs(e_sh.covariance - e_bh.covariance));

  const std::vector<KernelHyperparams> flat{ks.with_signal_variance(0.0), kt};
  double zero_gap = 0.0;
  const auto z_sh = hierarchical_from_hyperparameters(ModelKind::Shgp, {s}, t, flat, {0.4, 0.0}).predict(q);
  for (ModelKind k : {ModelKind::Bhgp, ModelKind::Mhgp}) {
    const auto p = hierarchical_from_hyperparameters(k, {s}, t, flat, {0.4, 0.0}).predict(q);
    zero_gap = std::max({zero_gap, max_abs(p.mean - z_sh.mean), max_abs(p.covariance - z_sh.covariance)});
  }

  const JointModel ws(ModelKind::Wsgp, wsgp_coregionalization(VectorXd::Zero(1)), {ks, kt}, {s}, t);
  const JointModel gp(ModelKind::Gpbo, coregionalization_for(ModelKind::Gpbo, 0), {kt}, {}, t);
  const auto a = ws.predict(q), b = gp.predict(q);
  const double ws_gap = std::max(max_abs(a.mean - b.mean), max_abs(a.covariance - b.covariance));

  return {empty_gap <= 1e-8 && zero_gap <= 1e-8 && ws_gap <= 1e-10,
          "empty target SHGP-BHGP " + num(empty_gap) + " (<=1e-8); zero source covariance " + num(zero_gap) +
              " (<=1e-8); WSGP w=0 vs GPBO " + num(ws_gap) + " (<=1e-10)"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"AC-1", ac1}, {"AC-2", ac2}, {"AC-3", ac3}, {"AC-4", ac4}, {"AC-5", ac5},
      {"AC-6", ac6}, {"AC-7", ac7}, {"AC-8", ac8}, {"AC-9", ac9}};
  const std::string only = argc > 1 ? argv[1] : "";
  bool all_passed = true, matched = false;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && only != name) continue;
    matched = true;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << name << (o.passed ? " PASS " : " FAIL ") << "(" << num(secs) << " s) " << o.details << std::endl;
    all_passed = all_passed && o.passed;
  }
  if (!matched) {
    std::cerr << "unknown criterion '" << only << "'\n";
    return 2;
  }
  return all_passed ? 0 : 1;
}
