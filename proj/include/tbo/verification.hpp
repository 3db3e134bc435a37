#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "tbo/gp_core.hpp"
#include "tbo/joint_kernel.hpp"

namespace tbo {

/// Moment-matched Gaussian mixture estimate with per-entry standard errors.
struct McEstimate {
  int samples = 0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  Eigen::VectorXd mean_se;
  Eigen::MatrixXd covariance_se;
  double effective_sample_size = 0.0;
};

/// Draws source functions at X_t and Xq from the source posterior, uses each
/// draw as the target prior mean, and averages the resulting target posteriors
/// weighted by the target evidence under that draw (the Bayesian model average
/// over source functions).
McEstimate mc_prior_average(const ConditionedGP& source, const TaskDataset& target,
                            const KernelHyperparams& target_hp, const Eigen::MatrixXd& queries,
                            int samples, Rng& rng);

/// Same draws, but the per-draw target posteriors are averaged with equal
/// weights (the source is not updated by the target data).
McEstimate mc_posterior_average(const ConditionedGP& source, const TaskDataset& target,
                                const KernelHyperparams& target_hp, const Eigen::MatrixXd& queries,
                                int samples, Rng& rng);

struct EstimateComparison {
  double max_mean_z = 0.0;      // max |closed - estimate| / SE over the mean entries
  double max_variance_z = 0.0;  // same over the diagonal variances
  bool passed = false;
};

/// Entrywise check of mean and diagonal variance at `k` standard errors, with
/// an absolute floor of `floor` on each SE.
EstimateComparison compare_to_estimate(const Eigen::VectorXd& mean, const Eigen::MatrixXd& covariance,
                                       const McEstimate& estimate, double k, double floor = 1e-10);

struct Lemma1Report {
  int samples = 0;
  double max_mean_z = 0.0;
  double max_covariance_z = 0.0;
  bool passed = false;
};

/// Samples eps ~ N(0, I), Y | eps ~ N(mu + L eps, Sigma), and compares the
/// empirical moments with N(mu, Sigma + L L^T) at 4 standard errors per entry.
Lemma1Report lemma1_check(const Eigen::VectorXd& mu, const Eigen::MatrixXd& l,
                          const Eigen::MatrixXd& sigma, int samples, Rng& rng, double k = 4.0);

/// The fixed one-dimensional instance used for the proposition checks.
struct OracleInstance {
  TaskDataset source;
  TaskDataset target;
  KernelHyperparams source_hp;
  KernelHyperparams target_hp;
  Eigen::MatrixXd queries;
};
OracleInstance make_oracle_instance(Rng& rng, Eigen::Index n_source = 8, Eigen::Index n_target = 4,
                                    Eigen::Index n_queries = 5);

struct CheckResult {
  std::string suite;
  std::string name;
  bool passed = false;
  nlohmann::json details;
};

struct VerificationReport {
  std::vector<CheckResult> checks;

  bool passed() const;
  nlohmann::json to_json() const;
};

/// Suites: "lemma1", "props", "corollary", "gradient", "wsgp"; "all" runs every
/// suite, "none" none.
VerificationReport run_verification(const std::string& scope, std::uint64_t seed);
const std::vector<std::string>& verification_suites();

// Individual suites, each self-seeded from `seed`.
std::vector<CheckResult> verify_lemma1(std::uint64_t seed, int instances = 20, int samples = 20000);
std::vector<CheckResult> verify_propositions(std::uint64_t seed, int samples = 5000);
std::vector<CheckResult> verify_corollary(std::uint64_t seed, int instances = 10);
std::vector<CheckResult> verify_gradients(std::uint64_t seed, int instances = 50);
std::vector<CheckResult> verify_wsgp_blocked(std::uint64_t seed, int instances = 10);

// --- timing ---------------------------------------------------------------------

struct TimingRecord {
  std::string kind;
  std::string stage;
  int n_sources = 1;
  Eigen::Index n_source_points = 0;
  Eigen::Index n_target_points = 0;
  int rep = 0;
  double ms = 0.0;
  int inner_repetitions = 1;
};

struct TimingSweepResult {
  std::vector<TimingRecord> records;
  std::map<std::string, double> slopes;  // log(ms) vs log(N_s), per kind
};

struct TimingOptions {
  double min_measure_ms = 20.0;  // inner repetitions grow until a measurement spans this long
  std::uint64_t seed = 7;
};

/// Times one target-stage likelihood-gradient step per kind on Hartmann6 data:
/// the joint gradient for hgp; for sequential kinds the source propagation to
/// the target inputs plus one target-level gradient. A warm-up run per size is
/// discarded.
TimingSweepResult timing_sweep(const std::vector<ModelKind>& kinds,
                               const std::vector<Eigen::Index>& source_sizes,
                               Eigen::Index target_size, int reps,
                               const TimingOptions& options = {});

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace tbo
