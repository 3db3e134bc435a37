#include "tbo/bo_engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>

#include "tbo/errors.hpp"

namespace tbo {

// --- domain ------------------------------------------------------------------------

Domain Domain::continuous(Box box) {
  if (box.dim() == 0 || box.upper.size() != box.dim())
    throw InputError("Domain: box bounds are malformed");
  if ((box.lower.array() >= box.upper.array()).any())
    throw InputError("Domain: every lower bound must be below its upper bound");
  Domain d;
  d.kind_ = Kind::ContinuousBox;
  d.bounds_ = std::move(box);
  return d;
}

Domain Domain::discrete(Eigen::MatrixXd candidates) {
  if (candidates.rows() == 0 || candidates.cols() == 0)
    throw InputError("Domain: candidate set is empty");
  std::set<std::vector<double>> seen;
  for (Eigen::Index i = 0; i < candidates.rows(); ++i) {
    std::vector<double> row(candidates.cols());
    for (Eigen::Index j = 0; j < candidates.cols(); ++j) row[j] = candidates(i, j);
    if (!seen.insert(std::move(row)).second)
      throw InputError("Domain: duplicate candidate row " + std::to_string(i));
  }
  Domain d;
  d.kind_ = Kind::DiscreteCandidates;
  d.bounds_ = {candidates.colwise().minCoeff().transpose(),
               candidates.colwise().maxCoeff().transpose()};
  d.candidates_ = std::move(candidates);
  return d;
}

Eigen::MatrixXd Domain::to_unit(const Eigen::MatrixXd& x) const {
  if (x.cols() != dim()) throw InputError("Domain::to_unit: dimension mismatch");
  Eigen::MatrixXd u(x.rows(), x.cols());
  for (Eigen::Index d = 0; d < dim(); ++d) {
    const double w = bounds_.upper[d] - bounds_.lower[d];
    if (w > 0.0) u.col(d) = (x.col(d).array() - bounds_.lower[d]) / w;
    else u.col(d).setZero();
  }
  return u;
}

Eigen::MatrixXd Domain::from_unit(const Eigen::MatrixXd& u) const {
  if (u.cols() != dim()) throw InputError("Domain::from_unit: dimension mismatch");
  Eigen::MatrixXd x(u.rows(), u.cols());
  for (Eigen::Index d = 0; d < dim(); ++d)
    x.col(d) = (u.col(d).array() * (bounds_.upper[d] - bounds_.lower[d]) + bounds_.lower[d]).matrix();
  return x;
}

Domain Domain::unit() const {
  if (is_discrete()) {
    Domain d;
    d.kind_ = Kind::DiscreteCandidates;
    d.candidates_ = to_unit(candidates_);
    d.bounds_ = {d.candidates_.colwise().minCoeff().transpose(),
                 d.candidates_.colwise().maxCoeff().transpose()};
    return d;
  }
  return continuous({Eigen::VectorXd::Zero(dim()), Eigen::VectorXd::Ones(dim())});
}

// --- acquisition -------------------------------------------------------------------

Eigen::VectorXd acquisition_lcb(const MarginalPrediction& pred, double beta) {
  if (beta < 0.0) throw InputError("acquisition_lcb: beta must be non-negative");
  return (pred.mean.array() - beta * pred.variance.array().max(0.0).sqrt()).matrix();
}

Eigen::VectorXd acquisition_lcb(const GaussianPrediction& pred, double beta) {
  return acquisition_lcb(MarginalPrediction{pred.mean, pred.variance()}, beta);
}

Eigen::Index argmin_first(const Eigen::VectorXd& scores) {
  if (scores.size() == 0) throw InputError("argmin_first: empty score vector");
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < scores.size(); ++i)
    if (scores[i] < scores[best]) best = i;
  return best;
}

namespace {

double score_at(const MarginalPredictor& predictor, const Eigen::VectorXd& x, double beta) {
  const MarginalPrediction p = predictor(x.transpose());
  return acquisition_lcb(p, beta)[0];
}

/// Golden-section minimization of g on [a, b]; returns the best point seen.
std::pair<double, double> golden_section(const std::function<double(double)>& g, double a, double b,
                                         double tol) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double gc = g(c), gd = g(d);
  while (b - a > tol) {
    if (gc <= gd) {
      b = d;
      d = c;
      gd = gc;
      c = b - inv_phi * (b - a);
      gc = g(c);
    } else {
      a = c;
      c = d;
      gc = gd;
      d = a + inv_phi * (b - a);
      gd = g(d);
    }
  }
  return gc <= gd ? std::pair{c, gc} : std::pair{d, gd};
}

}  // namespace

Proposal propose_next(const MarginalPredictor& predictor, const Domain& domain, double beta,
                      Rng& rng, const std::vector<Eigen::Index>& observed,
                      const ProposalOptions& options) {
  if (beta < 0.0) throw InputError("propose_next: beta must be non-negative");
  if (domain.is_discrete()) {
    const Eigen::MatrixXd& cand = domain.candidates();
    std::vector<bool> taken(static_cast<std::size_t>(cand.rows()), false);
    for (Eigen::Index i : observed)
      if (i >= 0 && i < cand.rows()) taken[static_cast<std::size_t>(i)] = true;
    std::vector<Eigen::Index> free;
    for (Eigen::Index i = 0; i < cand.rows(); ++i)
      if (!taken[static_cast<std::size_t>(i)]) free.push_back(i);
    if (free.empty()) throw DomainExhausted("propose_next: every candidate has been observed");
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(free.size()), cand.cols());
    for (std::size_t k = 0; k < free.size(); ++k) rows.row(static_cast<Eigen::Index>(k)) = cand.row(free[k]);
    const Eigen::VectorXd scores = acquisition_lcb(predictor(rows), beta);
    const Eigen::Index best = argmin_first(scores);
    return {cand.row(free[static_cast<std::size_t>(best)]).transpose(), scores[best],
            free[static_cast<std::size_t>(best)]};
  }

  const Box& box = domain.bounds();
  const Eigen::Index dim = domain.dim();
  const Eigen::Index n = std::max<Eigen::Index>(1, options.candidates_per_dim * dim);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::MatrixXd cand(n, dim);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index d = 0; d < dim; ++d)
      cand(i, d) = box.lower[d] + unit(rng) * (box.upper[d] - box.lower[d]);
  const Eigen::VectorXd scores = acquisition_lcb(predictor(cand), beta);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return scores[a] < scores[b]; });
  const std::size_t top = std::min<std::size_t>(order.size(), static_cast<std::size_t>(std::max(0, options.refine_top)));

  Proposal best{cand.row(order[0]).transpose(), scores[order[0]], -1};
  for (std::size_t r = 0; r < top; ++r) {
    Eigen::VectorXd x = cand.row(order[r]).transpose();
    double s = scores[order[r]];
    for (int sweep = 0; sweep < options.refine_sweeps; ++sweep) {
      for (Eigen::Index d = 0; d < dim; ++d) {
        const double w = box.upper[d] - box.lower[d];
        const double a = std::max(box.lower[d], x[d] - options.bracket_fraction * w);
        const double b = std::min(box.upper[d], x[d] + options.bracket_fraction * w);
        Eigen::VectorXd probe = x;
        const auto g = [&](double t) {
          probe[d] = t;
          return score_at(predictor, probe, beta);
        };
        const auto [t, v] = golden_section(g, a, b, options.tolerance * w);
        if (v < s) {
          x[d] = t;
          s = v;
        }
      }
    }
    if (s < best.score) best = {std::move(x), s, -1};
  }
  return best;
}

Proposal propose_next(const TransferModel& model, const Domain& domain, double beta, Rng& rng,
                      const std::vector<Eigen::Index>& observed, const ProposalOptions& options) {
  const MarginalPredictor predictor = [&model](const Eigen::MatrixXd& q) {
    return model.predict_marginal(q);
  };
  return propose_next(predictor, domain, beta, rng, observed, options);
}

// --- loop ----------------------------------------------------------------------------

namespace {
double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}
}  // namespace

BoTrace run_bo(const BoProblem& problem, const BoConfig& config, Rng& rng) {
  if (config.iterations < 0) throw InputError("run_bo: negative iteration budget");
  if (problem.noise_std < 0.0) throw InputError("run_bo: negative noise level");
  const Domain& domain = problem.domain;
  if (domain.is_discrete() && problem.candidate_values.size() != domain.candidates().rows())
    throw InputError("run_bo: discrete domains need one objective value per candidate");
  if (!domain.is_discrete() && !problem.objective)
    throw InputError("run_bo: continuous domains need an objective");

  BoTrace trace;
  if (config.iterations == 0) return trace;
  const Domain unit = domain.unit();
  const int target_id = static_cast<int>(problem.sources.size());

  std::optional<ModelTrainer> trainer;
  std::vector<TaskDataset> scaled_sources;
  for (const auto& s : problem.sources)
    scaled_sources.emplace_back(domain.to_unit(s.inputs), s.observations, s.task_id);

  Eigen::MatrixXd xu(0, domain.dim());
  Eigen::VectorXd y(0);
  std::vector<Eigen::Index> observed;
  std::normal_distribution<double> normal(0.0, 1.0);
  double best = std::numeric_limits<double>::infinity();

  for (int it = 1; it <= config.iterations; ++it) {
    IterationRecord rec;
    rec.iteration = it;
    std::shared_ptr<const TransferModel> model;
    auto t0 = std::chrono::steady_clock::now();
    try {
      if (!trainer) trainer.emplace(config.kind, scaled_sources, rng, config.training);
      model = trainer->train(TaskDataset(xu, y, target_id), rng);
    } catch (const std::exception& e) {
      trace.failed = true;
      trace.error = "iteration " + std::to_string(it) + ": model training failed: " + e.what();
      return trace;
    }
    rec.train_ms = elapsed_ms(t0);

    t0 = std::chrono::steady_clock::now();
    Proposal prop;
    try {
      prop = propose_next(*model, unit, config.beta, rng, observed, config.proposal);
    } catch (const DomainExhausted& e) {
      trace.error = e.what();
      return trace;
    } catch (const std::exception& e) {
      trace.failed = true;
      trace.error = "iteration " + std::to_string(it) + ": proposal failed: " + e.what();
      return trace;
    }
    rec.acq_ms = elapsed_ms(t0);

    if (domain.is_discrete()) {
      observed.push_back(prop.candidate_index);
      rec.x = domain.candidates().row(prop.candidate_index).transpose();
      rec.f = problem.candidate_values[prop.candidate_index];
    } else {
      rec.x = domain.from_unit(prop.x.transpose()).row(0).transpose();
      rec.x = rec.x.cwiseMax(domain.bounds().lower).cwiseMin(domain.bounds().upper);
      rec.f = problem.objective(rec.x);
    }
    rec.y = rec.f + problem.noise_std * normal(rng);
    best = std::min(best, rec.f);
    rec.best_so_far = best;
    if (problem.true_minimum) rec.simple_regret = best - *problem.true_minimum;
    if (problem.adtm_range) {
      const auto [lo, hi] = *problem.adtm_range;
      if (hi == lo) throw InputError("run_bo: degenerate ADTM range");
      rec.adtm = std::clamp((best - lo) / (hi - lo), 0.0, 1.0);
    }

    xu.conservativeResize(xu.rows() + 1, Eigen::NoChange);
    if (domain.is_discrete()) xu.row(xu.rows() - 1) = unit.candidates().row(prop.candidate_index);
    else xu.row(xu.rows() - 1) = prop.x.transpose();
    y.conservativeResize(y.size() + 1);
    y[y.size() - 1] = rec.y;
    trace.records.push_back(std::move(rec));
  }
  return trace;
}

RegretSeries regret_metrics(const std::vector<double>& best_so_far, double true_min, double y_min,
                            double y_max) {
  if (!std::isfinite(true_min)) throw InputError("regret_metrics: true minimum must be finite");
  if (y_max == y_min) throw InputError("regret_metrics: degenerate rescaling range");
  RegretSeries out;
  for (double b : best_so_far) {
    out.simple_regret.push_back(b - true_min);
    out.adtm.push_back(std::clamp((b - y_min) / (y_max - y_min), 0.0, 1.0));
  }
  return out;
}

std::pair<double, double> observed_value_range(const FamilyTask& task, double true_min) {
  Rng rng(0xad7e5eedULL);
  const Box box = task.box();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double lo = true_min, hi = true_min;
  Eigen::VectorXd x(box.dim());
  for (Eigen::Index i = 0; i < 1000 * box.dim(); ++i) {
    for (Eigen::Index d = 0; d < box.dim(); ++d)
      x[d] = box.lower[d] + unit(rng) * (box.upper[d] - box.lower[d]);
    const double v = task(x);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return {lo, hi};
}

}  // namespace tbo
