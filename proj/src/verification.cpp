#include "tbo/verification.hpp"

#include <cmath>
#include <numeric>

#include "tbo/errors.hpp"
#include "tbo/transfer_models.hpp"
#include "tbo/wsgp_block_inverse.hpp"

namespace tbo {

namespace {

Eigen::MatrixXd sample_factor(const Eigen::MatrixXd& cov) {
  if (cov.size() == 0 || cov.cwiseAbs().maxCoeff() == 0.0)
    return Eigen::MatrixXd::Zero(cov.rows(), cov.cols());
  return robust_cholesky(cov).lower();
}

Eigen::VectorXd standard_normal(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

McEstimate mc_average(const ConditionedGP& source, const TaskDataset& target,
                      const KernelHyperparams& target_hp, const Eigen::MatrixXd& queries,
                      int samples, Rng& rng, bool evidence_weighted) {
  if (samples < 2) throw InputError("mc estimate: need at least two samples");
  if (queries.cols() != target.dim() || target_hp.dim() != target.dim())
    throw InputError("mc estimate: dimension mismatch");
  const Eigen::Index nt = target.size();
  const Eigen::Index nq = queries.rows();

  Eigen::MatrixXd z(nt + nq, queries.cols());
  if (nt > 0) z.topRows(nt) = target.inputs;
  z.bottomRows(nq) = queries;
  const GaussianPrediction src = source.predict(z);
  const Eigen::MatrixXd l = sample_factor(src.covariance);

  // Target conditioning pieces shared by every draw.
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(nq, nt);  // k_t(Q, X_t) C^{-1}
  Eigen::MatrixXd v_post = kernel_eval(target_hp, queries, queries);
  RobustCholesky c;
  if (nt > 0) {
    Eigen::MatrixXd cm = kernel_eval(target_hp, target.inputs, target.inputs);
    cm.diagonal().array() += target_hp.noise_variance();
    c = robust_cholesky(cm);
    const Eigen::MatrixXd k_tq = kernel_eval(target_hp, target.inputs, queries);
    a = c.llt.solve(k_tq).transpose();
    v_post -= a * k_tq;
  }

  Eigen::MatrixXd g(samples, nq);
  Eigen::VectorXd log_w = Eigen::VectorXd::Zero(samples);
  for (int i = 0; i < samples; ++i) {
    const Eigen::VectorXd f = src.mean + l * standard_normal(nt + nq, rng);
    Eigen::VectorXd gi = f.tail(nq);
    if (nt > 0) {
      const Eigen::VectorXd r = target.observations - f.head(nt);
      gi += a * r;
      if (evidence_weighted) log_w[i] = -0.5 * r.dot(c.llt.solve(r));
    }
    g.row(i) = gi.transpose();
  }
  Eigen::VectorXd w = (log_w.array() - log_w.maxCoeff()).exp().matrix();
  w /= w.sum();

  McEstimate out;
  out.samples = samples;
  out.effective_sample_size = 1.0 / w.squaredNorm();
  out.mean = g.transpose() * w;
  const Eigen::MatrixXd centred = g.rowwise() - out.mean.transpose();
  const Eigen::MatrixXd between = centred.transpose() * w.asDiagonal() * centred;
  out.covariance = v_post + between;
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose());

  // Delta-method standard errors of self-normalized weighted means.
  const Eigen::VectorXd w2 = w.cwiseAbs2();
  out.mean_se = (centred.cwiseAbs2().transpose() * w2).cwiseSqrt();
  out.covariance_se.resize(nq, nq);
  for (Eigen::Index j = 0; j < nq; ++j)
    for (Eigen::Index k = j; k < nq; ++k) {
      const Eigen::ArrayXd h = centred.col(j).array() * centred.col(k).array() - between(j, k);
      out.covariance_se(j, k) = out.covariance_se(k, j) = std::sqrt((w2.array() * h.square()).sum());
    }
  return out;
}

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Eigen::MatrixXd uniform_matrix(Eigen::Index rows, Eigen::Index cols, double lo, double hi, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = uniform(rng, lo, hi);
  return m;
}

KernelHyperparams random_hyperparams(Eigen::Index dim, Rng& rng) {
  Eigen::VectorXd ls(dim);
  for (Eigen::Index d = 0; d < dim; ++d) ls[d] = uniform(rng, 0.1, 0.6);
  return KernelHyperparams(uniform(rng, 0.5, 2.0), ls, uniform(rng, 1e-3, 0.1));
}

double max_abs(const Eigen::MatrixXd& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

Rng suite_rng(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt)};
  return Rng(seq);
}

}  // namespace

McEstimate mc_prior_average(const ConditionedGP& source, const TaskDataset& target,
                            const KernelHyperparams& target_hp, const Eigen::MatrixXd& queries,
                            int samples, Rng& rng) {
  return mc_average(source, target, target_hp, queries, samples, rng, true);
}

McEstimate mc_posterior_average(const ConditionedGP& source, const TaskDataset& target,
                                const KernelHyperparams& target_hp, const Eigen::MatrixXd& queries,
                                int samples, Rng& rng) {
  return mc_average(source, target, target_hp, queries, samples, rng, false);
}

EstimateComparison compare_to_estimate(const Eigen::VectorXd& mean, const Eigen::MatrixXd& covariance,
                                       const McEstimate& estimate, double k, double floor) {
  if (mean.size() != estimate.mean.size() || covariance.rows() != estimate.covariance.rows())
    throw InputError("compare_to_estimate: size mismatch");
  EstimateComparison out;
  for (Eigen::Index j = 0; j < mean.size(); ++j) {
    out.max_mean_z = std::max(out.max_mean_z, std::abs(mean[j] - estimate.mean[j]) /
                                                  std::max(estimate.mean_se[j], floor));
    out.max_variance_z =
        std::max(out.max_variance_z, std::abs(covariance(j, j) - estimate.covariance(j, j)) /
                                         std::max(estimate.covariance_se(j, j), floor));
  }
  out.passed = out.max_mean_z <= k && out.max_variance_z <= k;
  return out;
}

Lemma1Report lemma1_check(const Eigen::VectorXd& mu, const Eigen::MatrixXd& l,
                          const Eigen::MatrixXd& sigma, int samples, Rng& rng, double k) {
  const Eigen::Index n = mu.size();
  if (l.rows() != n || sigma.rows() != n || sigma.cols() != n)
    throw InputError("lemma1_check: shapes are inconsistent");
  if (samples < 2) throw InputError("lemma1_check: need at least two samples");
  const Eigen::MatrixXd s_factor = sample_factor(sigma);

  Eigen::MatrixXd y(samples, n);
  for (int i = 0; i < samples; ++i) {
    const Eigen::VectorXd eps = standard_normal(l.cols(), rng);
    y.row(i) = (mu + l * eps + s_factor * standard_normal(n, rng)).transpose();
  }
  const Eigen::VectorXd mean = y.colwise().mean().transpose();
  const Eigen::MatrixXd centred = y.rowwise() - mean.transpose();
  const Eigen::MatrixXd cov = centred.transpose() * centred / static_cast<double>(samples - 1);
  const Eigen::MatrixXd truth = sigma + l * l.transpose();

  Lemma1Report out;
  out.samples = samples;
  const double m = static_cast<double>(samples);
  constexpr double kFloor = 1e-12;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double se = std::max(std::sqrt(truth(j, j) / m), kFloor);
    out.max_mean_z = std::max(out.max_mean_z, std::abs(mean[j] - mu[j]) / se);
    for (Eigen::Index q = j; q < n; ++q) {
      const double cse =
          std::max(std::sqrt((truth(j, j) * truth(q, q) + truth(j, q) * truth(j, q)) / m), kFloor);
      out.max_covariance_z = std::max(out.max_covariance_z, std::abs(cov(j, q) - truth(j, q)) / cse);
    }
  }
  out.passed = out.max_mean_z <= k && out.max_covariance_z <= k;
  return out;
}

OracleInstance make_oracle_instance(Rng& rng, Eigen::Index n_source, Eigen::Index n_target,
                                    Eigen::Index n_queries) {
  std::normal_distribution<double> noise(0.0, 0.1);
  const auto source_f = [](double x) { return std::sin(6.0 * x); };
  const auto target_f = [&](double x) { return source_f(x) + 0.4 * std::cos(4.0 * x); };
  Eigen::MatrixXd xs = uniform_matrix(n_source, 1, 0.0, 1.0, rng);
  Eigen::VectorXd ys(n_source);
  for (Eigen::Index i = 0; i < n_source; ++i) ys[i] = source_f(xs(i, 0)) + noise(rng);
  Eigen::MatrixXd xt = uniform_matrix(n_target, 1, 0.0, 1.0, rng);
  Eigen::VectorXd yt(n_target);
  for (Eigen::Index i = 0; i < n_target; ++i) yt[i] = target_f(xt(i, 0)) + noise(rng);
  Eigen::MatrixXd q(n_queries, 1);
  for (Eigen::Index i = 0; i < n_queries; ++i)
    q(i, 0) = n_queries == 1 ? 0.5 : -0.1 + 1.2 * static_cast<double>(i) / (n_queries - 1);
  return {TaskDataset(xs, ys, 0), TaskDataset(xt, yt, 1),
          KernelHyperparams::isotropic(1, 1.0, 0.25, 0.01),
          KernelHyperparams::isotropic(1, 0.3, 0.3, 0.01), q};
}

bool VerificationReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

nlohmann::json VerificationReport::to_json() const {
  nlohmann::json doc;
  doc["passed"] = passed();
  doc["checks"] = nlohmann::json::array();
  for (const auto& c : checks)
    doc["checks"].push_back(
        {{"suite", c.suite}, {"name", c.name}, {"passed", c.passed}, {"details", c.details}});
  return doc;
}

std::vector<CheckResult> verify_lemma1(std::uint64_t seed, int instances, int samples) {
  Rng rng = suite_rng(seed, 1);
  std::vector<CheckResult> out;
  for (int i = 0; i < instances; ++i) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(i % 4);
    const Eigen::Index k = 1 + static_cast<Eigen::Index>((i / 4) % 3);
    const Eigen::VectorXd mu = uniform_matrix(n, 1, -2.0, 2.0, rng);
    const Eigen::MatrixXd l = uniform_matrix(n, k, -1.0, 1.0, rng);
    const Eigen::MatrixXd b = uniform_matrix(n, n, -1.0, 1.0, rng);
    const Eigen::MatrixXd sigma = b * b.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n);
    const Lemma1Report r = lemma1_check(mu, l, sigma, samples, rng);
    out.push_back({"lemma1", "instance_" + std::to_string(i), r.passed,
                   {{"dim", n}, {"rank", k}, {"samples", r.samples}, {"max_mean_z", r.max_mean_z},
                    {"max_covariance_z", r.max_covariance_z}, {"tolerance_se", 4.0}}});
  }
  return out;
}

std::vector<CheckResult> verify_propositions(std::uint64_t seed, int samples) {
  Rng data_rng = suite_rng(seed, 2);
  Rng mc_rng = suite_rng(seed, 3);
  const OracleInstance inst = make_oracle_instance(data_rng);
  const std::vector<TaskDataset> sources{inst.source};
  const std::vector<KernelHyperparams> kernels{inst.source_hp, inst.target_hp};
  const GaussianPrediction shgp =
      hierarchical_from_hyperparameters(ModelKind::Shgp, sources, inst.target, kernels).predict(inst.queries);
  const GaussianPrediction bhgp =
      hierarchical_from_hyperparameters(ModelKind::Bhgp, sources, inst.target, kernels).predict(inst.queries);
  const GaussianPrediction mhgp =
      hierarchical_from_hyperparameters(ModelKind::Mhgp, sources, inst.target, kernels).predict(inst.queries);

  const ConditionedGP source_gp = condition(inst.source_hp, inst.source);
  const McEstimate prior_avg =
      mc_prior_average(source_gp, inst.target, inst.target_hp, inst.queries, samples, mc_rng);
  const McEstimate post_avg =
      mc_posterior_average(source_gp, inst.target, inst.target_hp, inst.queries, samples, mc_rng);
  const EstimateComparison c1 = compare_to_estimate(shgp.mean, shgp.covariance, prior_avg, 3.0);
  const EstimateComparison c2 = compare_to_estimate(bhgp.mean, bhgp.covariance, post_avg, 3.0);
  const double mean_gap = max_abs(bhgp.mean - mhgp.mean);

  return {
      {"props", "shgp_vs_prior_average", c1.passed,
       {{"samples", samples}, {"max_mean_z", c1.max_mean_z}, {"max_variance_z", c1.max_variance_z},
        {"effective_sample_size", prior_avg.effective_sample_size}, {"tolerance_se", 3.0}}},
      {"props", "bhgp_vs_posterior_average", c2.passed,
       {{"samples", samples}, {"max_mean_z", c2.max_mean_z}, {"max_variance_z", c2.max_variance_z},
        {"tolerance_se", 3.0}}},
      {"props", "bhgp_mean_equals_mhgp_mean", mean_gap <= 1e-10,
       {{"max_abs_difference", mean_gap}, {"tolerance", 1e-10}}},
  };
}

std::vector<CheckResult> verify_corollary(std::uint64_t seed, int instances) {
  Rng rng = suite_rng(seed, 4);
  std::vector<CheckResult> out;
  for (int i = 0; i < instances; ++i) {
    const Eigen::Index ns = 4 + static_cast<Eigen::Index>(i % 9);
    const Eigen::MatrixXd xs = uniform_matrix(ns, 1, 0.0, 1.0, rng);
    const Eigen::VectorXd ys = uniform_matrix(ns, 1, -1.0, 1.0, rng);
    const TaskDataset source(xs, ys, 0);
    const TaskDataset target = TaskDataset::empty(1, 1);
    const KernelHyperparams hp_s = random_hyperparams(1, rng);
    const KernelHyperparams hp_t = random_hyperparams(1, rng);
    const Eigen::MatrixXd q = uniform_matrix(6, 1, -0.2, 1.2, rng);

    const JointModel hgp(ModelKind::Hgp, hgp_coregionalization(1), {hp_s, hp_t}, {source}, target);
    const GaussianPrediction ph = hgp.predict(q);
    const GaussianPrediction ps =
        hierarchical_from_hyperparameters(ModelKind::Shgp, {source}, target, {hp_s, hp_t}).predict(q);
    // Direct form: (source posterior mean, k_t + source posterior covariance).
    const GaussianPrediction src = condition(hp_s, source).predict(q);
    const Eigen::MatrixXd prior_cov = kernel_eval(hp_t, q, q) + src.covariance;

    const double e_hgp = std::max(max_abs(ph.mean - src.mean), max_abs(ph.covariance - prior_cov));
    const double e_shgp = std::max(max_abs(ps.mean - src.mean), max_abs(ps.covariance - prior_cov));
    const double e_pair = std::max(max_abs(ph.mean - ps.mean), max_abs(ph.covariance - ps.covariance));
    out.push_back({"corollary", "instance_" + std::to_string(i),
                   e_hgp <= 1e-8 && e_shgp <= 1e-8 && e_pair <= 1e-8,
                   {{"hgp_vs_direct", e_hgp}, {"shgp_vs_direct", e_shgp}, {"hgp_vs_shgp", e_pair},
                    {"tolerance", 1e-8}}});
  }
  return out;
}

std::vector<CheckResult> verify_gradients(std::uint64_t seed, int instances) {
  Rng rng = suite_rng(seed, 5);
  std::vector<CheckResult> out;
  std::normal_distribution<double> normal(0.0, 1.0);
  const double h = 1e-5;
  for (int i = 0; i < instances; ++i) {
    const Eigen::Index dim = 1 + static_cast<Eigen::Index>(i % 3);
    const Eigen::Index n = 2 + static_cast<Eigen::Index>((i * 7) % 19);
    const TaskDataset data(uniform_matrix(n, dim, 0.0, 1.0, rng), uniform_matrix(n, 1, -1.0, 1.0, rng),
                           0);
    const BoxBounds bounds = softplus_bounds(KernelHyperparams::raw_size(dim), 1e-6, 1e3);
    Eigen::VectorXd raw(KernelHyperparams::raw_size(dim));
    for (Eigen::Index j = 0; j < raw.size(); ++j) raw[j] = normal(rng);
    raw = bounds.clamp(raw);

    const Eigen::VectorXd analytic =
        log_marginal_likelihood(KernelHyperparams::from_raw(raw), data).gradient;
    Eigen::VectorXd fd(raw.size());
    for (Eigen::Index j = 0; j < raw.size(); ++j) {
      Eigen::VectorXd up = raw, dn = raw;
      up[j] += h;
      dn[j] -= h;
      fd[j] = (log_marginal_likelihood(KernelHyperparams::from_raw(up), data).value -
               log_marginal_likelihood(KernelHyperparams::from_raw(dn), data).value) /
              (2.0 * h);
    }
    const double rel = (analytic - fd).norm() / std::max(fd.norm(), 1e-6);
    out.push_back({"gradient", "instance_" + std::to_string(i), rel < 1e-4,
                   {{"dim", dim}, {"points", n}, {"relative_error", rel}, {"tolerance", 1e-4}}});
  }
  return out;
}

std::vector<CheckResult> verify_wsgp_blocked(std::uint64_t seed, int instances) {
  Rng rng = suite_rng(seed, 6);
  std::vector<CheckResult> out;
  for (int i = 0; i < instances; ++i) {
    const Eigen::Index dim = 1 + static_cast<Eigen::Index>(i % 2);
    std::vector<TaskDataset> sources;
    for (int s = 0; s < 2; ++s) {
      const Eigen::Index n = 3 + static_cast<Eigen::Index>(uniform(rng, 0.0, 6.0));
      sources.emplace_back(uniform_matrix(n, dim, 0.0, 1.0, rng), uniform_matrix(n, 1, -1, 1, rng), s);
    }
    const Eigen::Index nt = 2 + static_cast<Eigen::Index>(uniform(rng, 0.0, 4.0));
    const TaskDataset target(uniform_matrix(nt, dim, 0.0, 1.0, rng), uniform_matrix(nt, 1, -1, 1, rng), 2);
    const CoregionalizationSpec spec =
        wsgp_coregionalization(Eigen::Vector2d(uniform(rng, 0.0, 2.0), uniform(rng, 0.0, 2.0)));
    const JointKernel kernel = build_joint_kernel(
        spec, {random_hyperparams(dim, rng), random_hyperparams(dim, rng), random_hyperparams(dim, rng)});
    const StackedData st = stack_tasks(sources, target);
    const Eigen::MatrixXd k = kernel.gram(st.inputs, st.tasks);
    const Eigen::VectorXd v = uniform_matrix(st.size(), 1, -1.0, 1.0, rng);

    const WsgpBlockInverse blocked = block_inverse_from_stacked(k, st.offsets);
    const Eigen::VectorXd x_blocked = blocked.solve(v);
    const Eigen::VectorXd x_dense = k.fullPivLu().solve(v);
    const double err = max_abs(x_blocked - x_dense) / std::max(1.0, max_abs(x_dense));
    const double logdet_err =
        std::abs(blocked.log_determinant() - std::log(k.fullPivLu().determinant()));
    out.push_back({"wsgp", "instance_" + std::to_string(i), err <= 1e-8 && logdet_err <= 1e-8,
                   {{"solve_error", err}, {"log_determinant_error", logdet_err}, {"tolerance", 1e-8}}});
  }
  return out;
}

const std::vector<std::string>& verification_suites() {
  static const std::vector<std::string> suites{"lemma1", "props", "corollary", "gradient", "wsgp"};
  return suites;
}

VerificationReport run_verification(const std::string& scope, std::uint64_t seed) {
  VerificationReport report;
  if (scope == "none") return report;
  const bool all = scope == "all";
  if (!all && std::find(verification_suites().begin(), verification_suites().end(), scope) ==
                  verification_suites().end())
    throw InputError("unknown verification scope '" + scope + "'");
  auto add = [&](std::vector<CheckResult> checks) {
    for (auto& c : checks) report.checks.push_back(std::move(c));
  };
  if (all || scope == "lemma1") add(verify_lemma1(seed));
  if (all || scope == "props") add(verify_propositions(seed));
  if (all || scope == "corollary") add(verify_corollary(seed));
  if (all || scope == "gradient") add(verify_gradients(seed));
  if (all || scope == "wsgp") add(verify_wsgp_blocked(seed));
  return report;
}

}  // namespace tbo
