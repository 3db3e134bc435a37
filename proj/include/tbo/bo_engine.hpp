#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tbo/function_families.hpp"
#include "tbo/transfer_models.hpp"

namespace tbo {

class Domain {
 public:
  enum class Kind { ContinuousBox, DiscreteCandidates };

  static Domain continuous(Box box);
  /// Candidate rows must be distinct.
  static Domain discrete(Eigen::MatrixXd candidates);

  Kind kind() const { return kind_; }
  bool is_discrete() const { return kind_ == Kind::DiscreteCandidates; }
  Eigen::Index dim() const { return bounds_.dim(); }
  /// The box for continuous domains; the candidates' bounding box otherwise.
  const Box& bounds() const { return bounds_; }
  const Eigen::MatrixXd& candidates() const { return candidates_; }

  /// Affine map of the bounds onto [0, 1]^D (zero-width axes map to 0).
  Eigen::MatrixXd to_unit(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd from_unit(const Eigen::MatrixXd& u) const;
  /// Same domain expressed in unit coordinates.
  Domain unit() const;

 private:
  Domain() = default;
  Kind kind_ = Kind::ContinuousBox;
  Box bounds_;
  Eigen::MatrixXd candidates_;
};

/// Lower confidence bound mean - beta * sqrt(var); the proposal minimizes it.
Eigen::VectorXd acquisition_lcb(const MarginalPrediction& pred, double beta);
Eigen::VectorXd acquisition_lcb(const GaussianPrediction& pred, double beta);
/// Index of the smallest entry; the lowest index wins exact ties.
Eigen::Index argmin_first(const Eigen::VectorXd& scores);

using MarginalPredictor = std::function<MarginalPrediction(const Eigen::MatrixXd&)>;

struct ProposalOptions {
  int candidates_per_dim = 1000;
  int refine_top = 5;
  int refine_sweeps = 2;
  double bracket_fraction = 0.1;  // local half-width of the golden-section bracket
  double tolerance = 1e-4;        // relative to the box width
};

struct Proposal {
  Eigen::VectorXd x;
  double score = 0.0;
  Eigen::Index candidate_index = -1;  // discrete domains only
};

/// Continuous: LCB on random candidates, then coordinate-wise golden-section
/// refinement of the best few. Discrete: exhaustive over candidates whose
/// index is not in `observed`; throws DomainExhausted when none remain.
Proposal propose_next(const MarginalPredictor& predictor, const Domain& domain, double beta,
                      Rng& rng, const std::vector<Eigen::Index>& observed = {},
                      const ProposalOptions& options = {});
Proposal propose_next(const TransferModel& model, const Domain& domain, double beta, Rng& rng,
                      const std::vector<Eigen::Index>& observed = {},
                      const ProposalOptions& options = {});

struct IterationRecord {
  int iteration = 0;  // 1-based
  Eigen::VectorXd x;
  double y = 0.0;            // observed, with noise
  double f = 0.0;            // noise-free value at x
  double best_so_far = 0.0;  // smallest noise-free value observed so far
  double simple_regret = std::numeric_limits<double>::quiet_NaN();
  double adtm = std::numeric_limits<double>::quiet_NaN();
  double train_ms = 0.0;
  double acq_ms = 0.0;
};

struct BoTrace {
  std::vector<IterationRecord> records;
  bool failed = false;
  std::string error;  // set when the run aborted early
};

struct BoProblem {
  Domain domain = Domain::continuous(family_box(Family::Forrester));
  std::function<double(const Eigen::VectorXd&)> objective;  // noise-free
  /// Discrete domains: objective value of each candidate row (used instead of `objective`).
  Eigen::VectorXd candidate_values;
  std::vector<TaskDataset> sources;  // original input units
  double noise_std = 0.0;
  std::optional<double> true_minimum;
  std::optional<std::pair<double, double>> adtm_range;  // (y_min, y_max)
};

struct BoConfig {
  ModelKind kind = ModelKind::Gpbo;
  int iterations = 30;
  double beta = 3.0;
  TrainingOptions training{};
  ProposalOptions proposal{};
};

/// Starts with no target observations; each iteration refits the target model,
/// proposes the LCB minimizer and observes it with noise. Model inputs live in
/// unit-cube coordinates. Training failures end the run with a partial trace.
BoTrace run_bo(const BoProblem& problem, const BoConfig& config, Rng& rng);

struct RegretSeries {
  std::vector<double> simple_regret;
  std::vector<double> adtm;
};

/// simple regret = best - true_min; ADTM = (best - y_min) / (y_max - y_min) clamped to [0, 1].
/// Throws InputError when y_max == y_min.
RegretSeries regret_metrics(const std::vector<double>& best_so_far, double true_min, double y_min,
                            double y_max);

/// (min, max) of f over a fixed, seeded uniform probe set of 1000*D points plus `true_min`.
std::pair<double, double> observed_value_range(const FamilyTask& task, double true_min);

}  // namespace tbo
