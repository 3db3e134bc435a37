#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "tbo/gp_core.hpp"

namespace tbo {

enum class Family { Forrester, Alpine, Branin, Hartmann3, Hartmann6 };

std::string_view to_string(Family family);
Family parse_family(std::string_view name);
const std::vector<Family>& all_families();

/// Axis-aligned input box.
struct Box {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  Eigen::Index dim() const { return lower.size(); }
  Eigen::VectorXd width() const { return upper - lower; }
  bool contains(const Eigen::VectorXd& x, double tolerance = 1e-12) const;
};

Box family_box(Family family);
/// Inclusive parameter ranges of the family distribution (empty for Alpine,
/// whose shifts are a fixed list).
std::vector<std::pair<double, double>> family_parameter_ranges(Family family);

/// One member of a family: a concrete parameter vector plus its evaluator.
///
/// Parameters: Forrester (a, b, c); Alpine (s); Branin (a, b, c, r, s, t);
/// Hartmann3/6 (alpha_1 .. alpha_4).
class FamilyTask {
 public:
  FamilyTask(Family family, Eigen::VectorXd params);

  static FamilyTask forrester(double a, double b, double c);
  static FamilyTask alpine(double shift);
  static FamilyTask branin(double a, double b, double c, double r, double s, double t);
  static FamilyTask branin_canonical();
  static FamilyTask hartmann3(const Eigen::Vector4d& alpha);
  static FamilyTask hartmann6(const Eigen::Vector4d& alpha);

  Family family() const { return family_; }
  const Eigen::VectorXd& params() const { return params_; }
  Box box() const { return family_box(family_); }
  Eigen::Index dim() const { return box().dim(); }

  /// Throws InputError outside the box.
  double operator()(const Eigen::VectorXd& x) const;
  /// Row-wise evaluation.
  Eigen::VectorXd evaluate(const Eigen::MatrixXd& x) const;
  std::string describe() const;

 private:
  double eval_unchecked(const Eigen::VectorXd& x) const;

  Family family_;
  Eigen::VectorXd params_;
};

const Eigen::Matrix<double, 4, 3>& hartmann3_a();
const Eigen::Matrix<double, 4, 3>& hartmann3_p();
const Eigen::Matrix<double, 4, 6>& hartmann6_a();
const Eigen::Matrix<double, 4, 6>& hartmann6_p();

/// Parameters drawn uniformly from the family ranges. For Alpine, one of the
/// five benchmark source shifts k*pi/12 (k = 1..5) at random.
FamilyTask sample_task(Family family, Rng& rng);
std::vector<FamilyTask> alpine_benchmark_sources();
FamilyTask alpine_benchmark_target();

/// `n` inputs uniform over the box with y = f(x) + N(0, sigma^2).
TaskDataset generate_source_data(const FamilyTask& task, Eigen::Index n, double sigma, Rng& rng,
                                 int task_id = 0);

struct Minimum {
  Eigen::VectorXd x;
  double value = 0.0;
};

/// Global minimum: a grid with `grid_density` points per axis (0 picks a
/// per-family default) followed by local pattern-search polish for D <= 3;
/// 100-start local descent for D = 6. Results are cached per task.
/// Throws InputError when the grid would exceed 1e7 evaluations.
Minimum true_minimum(const FamilyTask& task, int grid_density = 0);

}  // namespace tbo
