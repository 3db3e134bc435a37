#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "tbo/errors.hpp"
#include "tbo/transfer_models.hpp"

using namespace tbo;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

TaskDataset make_task(Rng& rng, Eigen::Index n, double lo, double hi, double c, int id) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::normal_distribution<double> noise(0.0, 0.05);
  MatrixXd x(n, 1);
  VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i, 0) = u(rng);
    y[i] = std::sin(3.0 * x(i, 0)) + c * x(i, 0) + noise(rng);
  }
  return {x, y, id};
}

double max_abs(const MatrixXd& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

const KernelHyperparams kSource = KernelHyperparams::isotropic(1, 1.0, 0.4, 0.01);
const KernelHyperparams kTarget = KernelHyperparams::isotropic(1, 0.3, 0.6, 0.02);

HierarchicalModel build(ModelKind kind, const std::vector<TaskDataset>& src, const TaskDataset& t,
                        std::vector<KernelHyperparams> kernels = {}) {
  if (kernels.empty()) {
    kernels.assign(src.size(), kSource);
    kernels.push_back(kTarget);
  }
  return hierarchical_from_hyperparameters(kind, src, t, kernels);
}

}  // namespace

TEST_CASE("empty target: SHGP and BHGP predict the transferred prior") {
  Rng rng(1);
  const TaskDataset s = make_task(rng, 8, 0.0, 1.0, 0.0, 0);
  const TaskDataset none = TaskDataset::empty(1, 1);
  const MatrixXd q = VectorXd::LinSpaced(6, -0.2, 1.2);
  const auto src = condition(kSource, s).predict(q);
  const auto shgp = build(ModelKind::Shgp, {s}, none).predict(q);
  const auto bhgp = build(ModelKind::Bhgp, {s}, none).predict(q);
  CHECK(max_abs(shgp.mean - src.mean) < 1e-10);
  CHECK(max_abs(shgp.covariance - (src.covariance + kernel_eval(kTarget, q, q))) < 1e-10);
  CHECK(max_abs(bhgp.mean - shgp.mean) < 1e-8);
  CHECK(max_abs(bhgp.covariance - shgp.covariance) < 1e-8);
}

TEST_CASE("HGP conditioned on the sources equals the SHGP prior, and posterior with target data") {
  Rng rng(2);
  for (int ns = 1; ns <= 3; ++ns) {
    std::vector<TaskDataset> src;
    std::vector<KernelHyperparams> kernels;
    for (int s = 0; s < ns; ++s) {
      src.push_back(make_task(rng, 6 + s, 0.0, 1.0, 0.2 * s, s));
      kernels.push_back(KernelHyperparams::isotropic(1, 0.5 + 0.3 * s, 0.3 + 0.1 * s, 0.01 * (s + 1)));
    }
    kernels.push_back(kTarget);
    const MatrixXd q = VectorXd::LinSpaced(5, -0.1, 1.1);
    for (Eigen::Index nt : {0, 4}) {
      const TaskDataset t = nt ? make_task(rng, nt, 0.0, 1.0, 0.5, ns) : TaskDataset::empty(1, ns);
      const JointModel hgp(ModelKind::Hgp, hgp_coregionalization(ns), kernels, src, t);
      const auto shgp = build(ModelKind::Shgp, src, t, kernels).predict(q);
      const auto joint = hgp.predict(q);
      INFO("n_s=", ns, " N_t=", nt);
      CHECK(max_abs(joint.mean - shgp.mean) < 1e-8);
      CHECK(max_abs(joint.covariance - shgp.covariance) < 1e-8);
    }
  }
}

TEST_CASE("zero source posterior covariance collapses SHGP, BHGP and MHGP") {
  Rng rng(3);
  const TaskDataset s = make_task(rng, 6, 0.0, 1.0, 0.0, 0);
  const TaskDataset t = make_task(rng, 4, 0.0, 1.0, 0.4, 1);
  // A zero-variance source kernel leaves only its constant offset.
  const std::vector<KernelHyperparams> kernels{kSource.with_signal_variance(0.0), kTarget};
  const std::vector<double> offsets{0.7, 0.0};
  const MatrixXd q = VectorXd::LinSpaced(5, 0.0, 1.0);
  const auto ref = condition(kTarget, t, constant_mean(0.7)).predict(q);
  for (ModelKind kind : {ModelKind::Shgp, ModelKind::Bhgp, ModelKind::Mhgp}) {
    const auto p = hierarchical_from_hyperparameters(kind, {s}, t, kernels, offsets).predict(q);
    INFO(to_string(kind));
    CHECK(max_abs(p.mean - ref.mean) < 1e-8);
    CHECK(max_abs(p.covariance - ref.covariance) < 1e-8);
  }
}

TEST_CASE("BHGP on a single target point matches the hand formula") {
  MatrixXd xs(1, 1), xt(1, 1), q(2, 1);
  xs << 0.0;
  xt << 0.5;
  q << 0.2, 1.0;
  const double ys = 1.0, yt = -0.3;
  const double ss = kSource.signal_variance(), ls = kSource.lengthscales()[0], ns = kSource.noise_variance();
  const double st = kTarget.signal_variance(), lt = kTarget.lengthscales()[0], nt = kTarget.noise_variance();
  auto kS = [&](double a, double b) { return ss * std::exp(-0.5 * (a - b) * (a - b) / (ls * ls)); };
  auto kT = [&](double a, double b) { return st * std::exp(-0.5 * (a - b) * (a - b) / (lt * lt)); };
  auto mu = [&](double a) { return kS(a, 0.0) / (ss + ns) * ys; };
  auto sig = [&](double a, double b) { return kS(a, b) - kS(a, 0.0) * kS(0.0, b) / (ss + ns); };
  const double t0 = 0.5;
  double alpha[2], mean[2];
  const double qs[2] = {0.2, 1.0};
  for (int i = 0; i < 2; ++i) {
    alpha[i] = kT(qs[i], t0) / (st + nt);
    mean[i] = mu(qs[i]) + alpha[i] * (yt - mu(t0));
  }
  MatrixXd cov(2, 2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      cov(i, j) = kT(qs[i], qs[j]) - alpha[i] * kT(t0, qs[j]) + sig(qs[i], qs[j]) -
                  alpha[i] * sig(t0, qs[j]) - alpha[j] * sig(t0, qs[i]) + alpha[i] * alpha[j] * sig(t0, t0);

  const auto p = build(ModelKind::Bhgp, {TaskDataset(xs, VectorXd::Constant(1, ys), 0)},
                       TaskDataset(xt, VectorXd::Constant(1, yt), 1))
                     .predict(q);
  CHECK(p.mean[0] == doctest::Approx(mean[0]).epsilon(1e-12));
  CHECK(p.mean[1] == doctest::Approx(mean[1]).epsilon(1e-12));
  CHECK(max_abs(p.covariance - cov) < 1e-12);
}

TEST_CASE("boost_covariance formula") {
  Rng rng(9);
  std::normal_distribution<double> g;
  MatrixXd f(5, 5);
  for (auto& v : f.reshaped()) v = g(rng);
  const MatrixXd sigma = f * f.transpose();  // joint over 3 queries and 2 targets
  MatrixXd alpha(3, 2);
  for (auto& v : alpha.reshaped()) v = g(rng);
  const MatrixXd sqq = sigma.topLeftCorner(3, 3), stt = sigma.bottomRightCorner(2, 2),
                 stq = sigma.bottomLeftCorner(2, 3);
  // Covariance of f_q - alpha f_t.
  MatrixXd a(3, 5);
  a << MatrixXd::Identity(3, 3), -alpha;
  const MatrixXd expect = a * sigma * a.transpose();
  CHECK(max_abs(boost_covariance(sqq, stt, stq, alpha) - expect) < 1e-10);
}

TEST_CASE("BHGP mean equals MHGP mean; BHGP variance dominates; MHGP ignores source noise") {
  Rng rng(4);
  std::vector<TaskDataset> src{make_task(rng, 8, 0.0, 1.0, 0.0, 0), make_task(rng, 7, 0.0, 1.0, 0.3, 1)};
  const TaskDataset t = make_task(rng, 5, 0.0, 1.0, 0.6, 2);
  const MatrixXd q = VectorXd::LinSpaced(9, -0.5, 1.5);
  const auto mhgp = build(ModelKind::Mhgp, src, t).predict(q);
  const auto bhgp = build(ModelKind::Bhgp, src, t).predict(q);
  const auto single = hierarchical_from_hyperparameters(ModelKind::Bhgp, src, t,
                                                        {kSource, kSource, kTarget}, {}, true)
                          .predict(q);
  CHECK(max_abs(bhgp.mean - mhgp.mean) < 1e-10);
  CHECK(max_abs(single.mean - mhgp.mean) < 1e-10);
  CHECK((bhgp.variance().array() >= mhgp.variance().array() - 1e-12).all());
  CHECK((single.variance().array() >= mhgp.variance().array() - 1e-12).all());
  // The recursive boost carries the lower level's uncertainty too.
  CHECK((bhgp.variance().array() >= single.variance().array() - 1e-12).all());
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(bhgp.covariance - mhgp.covariance);
  CHECK(es.eigenvalues().minCoeff() >= -1e-8 * std::max(1.0, es.eigenvalues().maxCoeff()));

  std::vector<KernelHyperparams> noisy{kSource.with_noise(kSource.noise_variance() * 100.0),
                                       kSource.with_noise(kSource.noise_variance() * 100.0), kTarget};
  const auto inflated = build(ModelKind::Mhgp, src, t, noisy).predict(q);
  CHECK(max_abs(inflated.covariance - mhgp.covariance) == 0.0);
  CHECK(max_abs(inflated.mean - mhgp.mean) > 0.0);

  const auto marg = build(ModelKind::Bhgp, src, t).predict_marginal(q);
  CHECK(max_abs(marg.variance - bhgp.variance()) < 1e-10);
  CHECK(max_abs(marg.mean - bhgp.mean) < 1e-12);
}

TEST_CASE("single-source BHGP: recursive and single-layer boosts coincide") {
  Rng rng(5);
  const TaskDataset s = make_task(rng, 8, 0.0, 1.0, 0.0, 0), t = make_task(rng, 4, 0.0, 1.0, 0.2, 1);
  const MatrixXd q = VectorXd::LinSpaced(5, 0.0, 1.0);
  const auto rec = hierarchical_from_hyperparameters(ModelKind::Bhgp, {s}, t, {kSource, kTarget}, {}, false).predict(q);
  const auto one = hierarchical_from_hyperparameters(ModelKind::Bhgp, {s}, t, {kSource, kTarget}, {}, true).predict(q);
  CHECK(max_abs(rec.covariance - one.covariance) < 1e-12);
}

TEST_CASE("MHGP with a zero source mean is plain GP regression") {
  Rng rng(6);
  MatrixXd xs = VectorXd::LinSpaced(5, 0.0, 1.0);
  const TaskDataset s(xs, VectorXd::Zero(5), 0);
  const TaskDataset t = make_task(rng, 4, 0.0, 1.0, 0.0, 1);
  const MatrixXd q = VectorXd::LinSpaced(5, 0.0, 1.0);
  const auto m = build(ModelKind::Mhgp, {s}, t).predict(q);
  const auto g = condition(kTarget, t).predict(q);
  CHECK(max_abs(m.mean - g.mean) < 1e-12);
  CHECK(max_abs(m.covariance - g.covariance) < 1e-12);
}

TEST_CASE("SHGP: an extra target observation never raises the variance there") {
  Rng rng(7);
  const TaskDataset s = make_task(rng, 8, 0.0, 1.0, 0.0, 0);
  for (int inst = 0; inst < 10; ++inst) {
    const TaskDataset t = make_task(rng, 3, 0.0, 1.0, 0.5, 1);
    const TaskDataset extra = make_task(rng, 1, 0.0, 1.0, 0.5, 1);
    MatrixXd x(4, 1);
    x << t.inputs, extra.inputs;
    VectorXd y(4);
    y << t.observations, extra.observations;
    const auto before = build(ModelKind::Shgp, {s}, t).predict(extra.inputs);
    const auto after = build(ModelKind::Shgp, {s}, TaskDataset(x, y, 1)).predict(extra.inputs);
    CHECK(after.covariance(0, 0) <= before.covariance(0, 0) + 1e-10);
  }
}

TEST_CASE("Alpine visualisation instance: MHGP is overconfident far from the target data") {
  // Source c = +1/2 on (-10, 0); target c = -1/2 observed at 1..4.
  auto alpine = [](double x, double c) { return x * std::sin(x + std::numbers::pi) + c * x; };
  MatrixXd xs = VectorXd::LinSpaced(15, -9.5, -0.5);
  VectorXd ys(15);
  for (Eigen::Index i = 0; i < 15; ++i) ys[i] = alpine(xs(i, 0), 0.5);
  MatrixXd xt(4, 1);
  xt << 1, 2, 3, 4;
  VectorXd yt(4);
  for (Eigen::Index i = 0; i < 4; ++i) yt[i] = alpine(xt(i, 0), -0.5);
  const auto ks = KernelHyperparams::isotropic(1, 20.0, 1.5, 0.01);
  const auto kt = KernelHyperparams::isotropic(1, 5.0, 2.0, 0.01);
  const TaskDataset s(xs, ys, 0), t(xt, yt, 1);
  const MatrixXd q = VectorXd::LinSpaced(9, 1.0, 9.0);
  const auto mhgp = hierarchical_from_hyperparameters(ModelKind::Mhgp, {s}, t, {ks, kt}).predict(q);
  const auto shgp = hierarchical_from_hyperparameters(ModelKind::Shgp, {s}, t, {ks, kt}).predict(q);
  const auto bhgp = hierarchical_from_hyperparameters(ModelKind::Bhgp, {s}, t, {ks, kt}).predict(q);
  CHECK(mhgp.covariance(7, 7) < shgp.covariance(7, 7));
  CHECK((bhgp.variance().array() >= mhgp.variance().array()).all());
}

TEST_CASE("level chains are immutable and share storage") {
  Rng rng(8);
  const TaskDataset s = make_task(rng, 6, 0.0, 1.0, 0.0, 0);
  LevelChain base(LevelCoupling::Covariance, 1);
  const LevelChain one = base.with_level(base.prior_for(s.inputs), s, kSource, 0.0);
  CHECK(base.size() == 0);
  CHECK(one.size() == 1);
  const TaskDataset t = make_task(rng, 3, 0.0, 1.0, 0.2, 1);
  const LevelChain two = one.with_level(one.prior_for(t.inputs), t, kTarget, 0.0);
  CHECK(one.size() == 1);
  CHECK(&two.level(0) == &one.level(0));
  CHECK(two.prefix(1).size() == 1);
  CHECK_THROWS_AS(one.posterior(MatrixXd::Zero(2, 2)), InputError);
}

TEST_CASE("sequential training freezes the source levels") {
  Rng rng(9);
  std::vector<TaskDataset> src{make_task(rng, 12, 0.0, 1.0, 0.0, 0)};
  TrainingOptions opts;
  opts.n_restarts = 2;
  for (ModelKind kind : {ModelKind::Shgp, ModelKind::Bhgp, ModelKind::Mhgp}) {
    Rng fit(1);
    const LevelChain sources = train_source_chain(coupling_for(kind), src, fit, opts);
    const HierarchicalModel m1 = train_sequential(kind, src, make_task(rng, 3, 0.0, 1.0, 0.4, 1), fit, opts);
    const HierarchicalModel m2 = retrain_target(m1, make_task(rng, 5, 0.0, 1.0, 0.4, 1), fit, opts);
    CHECK(m1.chain().level(0).kernel == m2.chain().level(0).kernel);
    CHECK(&m1.chain().level(0) == &m2.chain().level(0));
    CHECK(m2.target().size() == 5);
    // Source stage of the trained model is a plain ML fit on the source data.
    CHECK(sources.level(0).kernel.dim() == 1);
  }
  // MHGP and BHGP share their source stage.
  Rng a(5), b(5);
  const LevelChain mh = train_source_chain(LevelCoupling::MeanOnly, src, a, opts);
  const LevelChain bh = train_source_chain(coupling_for(ModelKind::Bhgp), src, b, opts);
  CHECK(mh.level(0).kernel == bh.level(0).kernel);
}

TEST_CASE("MHGP target stage is a GP fit on residuals about the source mean") {
  Rng rng(10);
  std::vector<TaskDataset> src{make_task(rng, 12, 0.0, 1.0, 0.0, 0)};
  const TaskDataset t = make_task(rng, 6, 0.0, 1.0, 0.7, 1);
  TrainingOptions opts;
  opts.n_restarts = 3;
  Rng fit(2);
  const HierarchicalModel m = train_sequential(ModelKind::Mhgp, src, t, fit, opts);
  const VectorXd source_mean = m.source_chain().posterior_mean(t.inputs);
  const KernelHyperparams& kt = m.chain().level(1).kernel;
  const double offset = m.mean_offsets()[1];
  const MatrixXd q = VectorXd::LinSpaced(5, 0.0, 1.0);
  const TaskDataset resid(t.inputs, t.observations - source_mean, 1);
  const auto ref = condition(kt, resid, constant_mean(offset)).predict(q);
  const auto got = m.predict(q);
  CHECK(max_abs(got.mean - (ref.mean + m.source_chain().posterior_mean(q))) < 1e-9);
  CHECK(max_abs(got.covariance - ref.covariance) < 1e-9);
}
