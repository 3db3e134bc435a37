#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tbo/errors.hpp"
#include "tbo/lbfgsb.hpp"

using namespace tbo;
using Eigen::VectorXd;

namespace {

double rosenbrock(const VectorXd& x, VectorXd& g) {
  g.resize(x.size());
  g.setZero();
  double f = 0.0;
  for (Eigen::Index i = 0; i + 1 < x.size(); ++i) {
    const double a = x[i + 1] - x[i] * x[i];
    const double b = 1.0 - x[i];
    f += 100.0 * a * a + b * b;
    g[i] += -400.0 * a * x[i] - 2.0 * b;
    g[i + 1] += 200.0 * a;
  }
  return f;
}

}  // namespace

TEST_CASE("unconstrained Rosenbrock converges to (1, ..., 1)") {
  const BoxBounds box = BoxBounds::uniform(4, -10.0, 10.0);
  LbfgsbOptions opts;
  opts.max_iterations = 500;
  const auto r = minimize_lbfgsb(rosenbrock, VectorXd::Constant(4, -1.2), box, opts);
  CHECK((r.x.array() - 1.0).abs().maxCoeff() < 1e-4);
  CHECK(r.value < 1e-8);
}

TEST_CASE("bound-constrained quadratic lands on the projected minimizer") {
  // f = |x - c|^2 with c outside the box: solution is clamp(c).
  const VectorXd c = (VectorXd(3) << 2.0, -3.0, 0.25).finished();
  const BoxBounds box = BoxBounds::uniform(3, -1.0, 1.0);
  auto f = [&](const VectorXd& x, VectorXd& g) {
    g = 2.0 * (x - c);
    return (x - c).squaredNorm();
  };
  const auto r = minimize_lbfgsb(f, VectorXd::Zero(3), box);
  CHECK(r.x[0] == doctest::Approx(1.0));
  CHECK(r.x[1] == doctest::Approx(-1.0));
  CHECK(r.x[2] == doctest::Approx(0.25).epsilon(1e-6));
  CHECK(r.converged);
  // Iterates never leave the box.
  CHECK((r.x.array() >= -1.0).all());
  CHECK((r.x.array() <= 1.0).all());
}

TEST_CASE("start outside the box is projected") {
  const BoxBounds box = BoxBounds::uniform(2, 0.0, 1.0);
  auto f = [](const VectorXd& x, VectorXd& g) {
    g = 2.0 * x;
    return x.squaredNorm();
  };
  const auto r = minimize_lbfgsb(f, VectorXd::Constant(2, 5.0), box);
  CHECK(r.x.norm() < 1e-8);
}

TEST_CASE("throwing objective at the start is a numerical error") {
  auto bad = [](const VectorXd&, VectorXd&) -> double { throw NumericalError("nope"); };
  CHECK_THROWS_AS(minimize_lbfgsb(bad, VectorXd::Zero(1), BoxBounds::uniform(1, -1, 1)),
                  NumericalError);
}

TEST_CASE("multistart keeps the best restart, lowest index on ties") {
  // Maximize -(x^2 - 1)^2: two equal maxima at +-1.
  auto f = [](const VectorXd& x, VectorXd& g) {
    const double a = x[0] * x[0] - 1.0;
    g.resize(1);
    g[0] = -4.0 * a * x[0];
    return -a * a;
  };
  const BoxBounds box = BoxBounds::uniform(1, -3.0, 3.0);
  const std::vector<VectorXd> starts{VectorXd::Constant(1, 0.5), VectorXd::Constant(1, -0.5)};
  const auto r = multistart_maximize(f, starts, box);
  CHECK(r.best_restart == 0);
  CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(r.restarts.size() == 2);
  for (const auto& rep : r.restarts) CHECK(r.value >= rep.initial_value);
}

TEST_CASE("multistart skips failing restarts and reports when all fail") {
  auto partial = [](const VectorXd& x, VectorXd& g) -> double {
    if (x[0] < 0.0) throw NumericalError("negative");
    g = -2.0 * (x.array() - 0.5).matrix();
    return -(x.array() - 0.5).square().sum();
  };
  const BoxBounds box = BoxBounds::uniform(1, -1.0, 1.0);
  const auto r = multistart_maximize(partial, {VectorXd::Constant(1, -0.5), VectorXd::Constant(1, 0.9)}, box);
  CHECK(r.best_restart == 1);
  CHECK(r.restarts[0].failed);
  CHECK(r.x[0] == doctest::Approx(0.5).epsilon(1e-5));

  auto never = [](const VectorXd&, VectorXd&) -> double { throw NumericalError("always"); };
  try {
    multistart_maximize(never, {VectorXd::Zero(1), VectorXd::Zero(1)}, box);
    FAIL("expected OptimizationError");
  } catch (const OptimizationError& e) {
    CHECK(e.diagnostics().size() == 2);
  }
}
