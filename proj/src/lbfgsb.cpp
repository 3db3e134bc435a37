#include "tbo/lbfgsb.hpp"

#include <cmath>
#include <deque>
#include <limits>

#include "tbo/errors.hpp"

namespace tbo {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Evaluation {
  double value = kInf;
  Eigen::VectorXd gradient;
  bool ok = false;
};

Evaluation evaluate(const DifferentiableObjective& f, const Eigen::VectorXd& x) {
  Evaluation e;
  e.gradient = Eigen::VectorXd::Zero(x.size());
  try {
    e.value = f(x, e.gradient);
  } catch (const NumericalError&) {
    return e;
  } catch (const InputError&) {
    return e;
  }
  e.ok = std::isfinite(e.value) && e.gradient.allFinite() && e.gradient.size() == x.size();
  if (!e.ok) e.value = kInf;
  return e;
}

// Mask of variables that are free to move: not pinned at a bound by a gradient
// pointing out of the box.
Eigen::ArrayXd free_mask(const Eigen::VectorXd& x, const Eigen::VectorXd& g,
                         const BoxBounds& bounds) {
  Eigen::ArrayXd mask = Eigen::ArrayXd::Ones(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (x[i] <= bounds.lower[i] && g[i] > 0.0) mask[i] = 0.0;
    if (x[i] >= bounds.upper[i] && g[i] < 0.0) mask[i] = 0.0;
  }
  return mask;
}

}  // namespace

LbfgsbResult minimize_lbfgsb(const DifferentiableObjective& objective, const Eigen::VectorXd& x0,
                             const BoxBounds& bounds, const LbfgsbOptions& options) {
  if (bounds.lower.size() != x0.size() || bounds.upper.size() != x0.size())
    throw InputError("minimize_lbfgsb: bounds do not match the starting point");
  if ((bounds.lower.array() > bounds.upper.array()).any())
    throw InputError("minimize_lbfgsb: lower bound exceeds upper bound");

  LbfgsbResult res;
  res.x = bounds.clamp(x0);
  Evaluation cur = evaluate(objective, res.x);
  res.evaluations = 1;
  if (!cur.ok) throw NumericalError("minimize_lbfgsb: objective not finite at the initial point");

  std::deque<Eigen::VectorXd> s_hist;
  std::deque<Eigen::VectorXd> y_hist;
  std::deque<double> rho_hist;

  for (res.iterations = 0; res.iterations < options.max_iterations; ++res.iterations) {
    const Eigen::ArrayXd mask = free_mask(res.x, cur.gradient, bounds);
    const Eigen::VectorXd pg = (cur.gradient.array() * mask).matrix();
    if (pg.lpNorm<Eigen::Infinity>() < options.projected_gradient_tolerance) {
      res.converged = true;
      res.message = "projected gradient below tolerance";
      break;
    }

    // Two-loop recursion on the free subspace.
    Eigen::VectorXd q = pg;
    const std::size_t m = s_hist.size();
    std::vector<double> alpha(m);
    for (std::size_t k = m; k-- > 0;) {
      const Eigen::VectorXd sk = (s_hist[k].array() * mask).matrix();
      alpha[k] = rho_hist[k] * sk.dot(q);
      q -= alpha[k] * (y_hist[k].array() * mask).matrix();
    }
    if (m > 0) {
      const double gamma = s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
      q *= gamma;
    }
    for (std::size_t k = 0; k < m; ++k) {
      const Eigen::VectorXd yk = (y_hist[k].array() * mask).matrix();
      const double beta = rho_hist[k] * yk.dot(q);
      q += (s_hist[k].array() * mask).matrix() * (alpha[k] - beta);
    }
    Eigen::VectorXd direction = -(q.array() * mask).matrix();
    if (direction.dot(pg) >= 0.0) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      direction = -pg;
    }

    double step = 1.0;
    if (m == 0) step = std::min(1.0, 1.0 / std::max(pg.norm(), 1e-12));

    Evaluation next;
    Eigen::VectorXd x_next;
    bool accepted = false;
    for (int ls = 0; ls < options.max_line_search; ++ls) {
      x_next = bounds.clamp(res.x + step * direction);
      const Eigen::VectorXd delta = x_next - res.x;
      if (delta.lpNorm<Eigen::Infinity>() == 0.0) break;
      next = evaluate(objective, x_next);
      ++res.evaluations;
      if (next.ok && next.value <= cur.value + 1e-4 * cur.gradient.dot(delta)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      res.converged = s_hist.empty();
      res.message = "line search could not decrease the objective";
      if (!s_hist.empty()) {
        // Retry once from steepest descent before giving up.
        s_hist.clear();
        y_hist.clear();
        rho_hist.clear();
        continue;
      }
      break;
    }

    const Eigen::VectorXd s = x_next - res.x;
    const Eigen::VectorXd y = next.gradient - cur.gradient;
    const double sy = s.dot(y);
    const double reduction = cur.value - next.value;
    res.x = x_next;
    const double scale = std::max({std::abs(cur.value), std::abs(next.value), 1.0});
    cur = std::move(next);
    if (sy > 1e-10 * y.squaredNorm()) {
      s_hist.push_back(s);
      y_hist.push_back(y);
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > options.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    if (reduction <= options.relative_tolerance * scale) {
      res.converged = true;
      res.message = "relative reduction below tolerance";
      ++res.iterations;
      break;
    }
  }
  if (res.message.empty()) res.message = "iteration limit reached";
  res.value = cur.value;
  res.gradient = cur.gradient;
  return res;
}

MultiStartResult multistart_maximize(const DifferentiableObjective& objective,
                                     const std::vector<Eigen::VectorXd>& initial_points,
                                     const BoxBounds& bounds, const LbfgsbOptions& options) {
  if (initial_points.empty()) throw InputError("multistart_maximize: no initial points");
  const DifferentiableObjective negated = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    const double v = objective(x, g);
    g = -g;
    return -v;
  };

  MultiStartResult out;
  out.value = -kInf;
  bool any = false;
  std::vector<std::string> diagnostics;
  for (std::size_t r = 0; r < initial_points.size(); ++r) {
    RestartReport report;
    report.initial = bounds.clamp(initial_points[r]);
    try {
      const LbfgsbResult res = minimize_lbfgsb(negated, report.initial, bounds, options);
      // The first evaluation inside the solver is at the initial point; the
      // final value can only be lower (line search is monotone).
      Eigen::VectorXd g0;
      report.initial_value = -negated(report.initial, g0);
      report.final_value = -res.value;
      report.message = res.message;
      if (!any || report.final_value > out.value) {
        out.value = report.final_value;
        out.x = res.x;
        out.best_restart = r;
        any = true;
      }
    } catch (const std::exception& e) {
      report.failed = true;
      report.initial_value = -kInf;
      report.final_value = -kInf;
      report.message = e.what();
      diagnostics.push_back("restart " + std::to_string(r) + ": " + e.what());
    }
    out.restarts.push_back(std::move(report));
  }
  if (!any) throw OptimizationError("all optimizer restarts failed", std::move(diagnostics));
  return out;
}

}  // namespace tbo
