#include "tbo/function_families.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>

#include "tbo/errors.hpp"

namespace tbo {

namespace {
constexpr double kPi = std::numbers::pi;

constexpr std::array<std::pair<Family, std::string_view>, 5> kFamilyNames{{
    {Family::Forrester, "forrester"},
    {Family::Alpine, "alpine"},
    {Family::Branin, "branin"},
    {Family::Hartmann3, "hartmann3"},
    {Family::Hartmann6, "hartmann6"},
}};

Eigen::Index param_count(Family family) {
  switch (family) {
    case Family::Forrester: return 3;
    case Family::Alpine: return 1;
    case Family::Branin: return 6;
    default: return 4;
  }
}
}  // namespace

std::string_view to_string(Family family) {
  for (const auto& [f, name] : kFamilyNames)
    if (f == family) return name;
  return "unknown";
}

Family parse_family(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (const auto& [f, n] : kFamilyNames)
    if (n == lower) return f;
  throw InputError("unknown function family '" + std::string(name) + "'");
}

const std::vector<Family>& all_families() {
  static const std::vector<Family> families{Family::Forrester, Family::Alpine, Family::Branin,
                                            Family::Hartmann3, Family::Hartmann6};
  return families;
}

bool Box::contains(const Eigen::VectorXd& x, double tolerance) const {
  if (x.size() != dim()) return false;
  const Eigen::ArrayXd slack = tolerance * width().array().max(1.0);
  return (x.array() >= lower.array() - slack).all() && (x.array() <= upper.array() + slack).all();
}

Box family_box(Family family) {
  switch (family) {
    case Family::Forrester: return {Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1)};
    case Family::Alpine:
      return {Eigen::VectorXd::Constant(1, -10.0), Eigen::VectorXd::Constant(1, 10.0)};
    case Family::Branin: return {Eigen::Vector2d(-5.0, 0.0), Eigen::Vector2d(10.0, 15.0)};
    case Family::Hartmann3: return {Eigen::VectorXd::Zero(3), Eigen::VectorXd::Ones(3)};
    case Family::Hartmann6: return {Eigen::VectorXd::Zero(6), Eigen::VectorXd::Ones(6)};
  }
  throw InputError("family_box: unknown family");
}

std::vector<std::pair<double, double>> family_parameter_ranges(Family family) {
  switch (family) {
    case Family::Forrester: return {{0.2, 3.0}, {-5.0, 15.0}, {-5.0, 5.0}};
    case Family::Alpine: return {};
    case Family::Branin:
      return {{0.5, 1.5}, {0.1, 0.15}, {1.0, 2.0}, {5.0, 7.0}, {8.0, 12.0}, {0.03, 0.05}};
    case Family::Hartmann3:
    case Family::Hartmann6: return {{1.00, 1.02}, {1.18, 1.20}, {2.8, 3.0}, {3.2, 3.4}};
  }
  throw InputError("family_parameter_ranges: unknown family");
}

const Eigen::Matrix<double, 4, 3>& hartmann3_a() {
  static const Eigen::Matrix<double, 4, 3> a = (Eigen::Matrix<double, 4, 3>() <<
      3.0, 10, 30,
      0.1, 10, 35,
      3.0, 10, 30,
      0.1, 10, 35).finished();
  return a;
}

const Eigen::Matrix<double, 4, 3>& hartmann3_p() {
  static const Eigen::Matrix<double, 4, 3> p = 1e-4 * (Eigen::Matrix<double, 4, 3>() <<
      3689, 1170, 2673,
      4699, 4387, 7470,
      1091, 8732, 5547,
      381, 5743, 8828).finished();
  return p;
}

const Eigen::Matrix<double, 4, 6>& hartmann6_a() {
  static const Eigen::Matrix<double, 4, 6> a = (Eigen::Matrix<double, 4, 6>() <<
      10, 3, 17, 3.5, 1.7, 8,
      0.05, 10, 17, 0.1, 8, 14,
      3, 3.5, 1.7, 10, 17, 8,
      17, 8, 0.05, 10, 0.1, 14).finished();
  return a;
}

const Eigen::Matrix<double, 4, 6>& hartmann6_p() {
  static const Eigen::Matrix<double, 4, 6> p = 1e-4 * (Eigen::Matrix<double, 4, 6>() <<
      1312, 1696, 5569, 124, 8283, 5886,
      2329, 4135, 8307, 3736, 1004, 9991,
      2348, 1451, 3522, 2883, 3047, 6650,
      4047, 8828, 8732, 5743, 1091, 381).finished();
  return p;
}

FamilyTask::FamilyTask(Family family, Eigen::VectorXd params)
    : family_(family), params_(std::move(params)) {
  if (params_.size() != param_count(family_))
    throw InputError("FamilyTask: wrong parameter count for " + std::string(to_string(family_)));
  if (!params_.allFinite()) throw InputError("FamilyTask: non-finite parameter");
}

FamilyTask FamilyTask::forrester(double a, double b, double c) {
  return FamilyTask(Family::Forrester, Eigen::Vector3d(a, b, c));
}

FamilyTask FamilyTask::alpine(double shift) {
  return FamilyTask(Family::Alpine, Eigen::VectorXd::Constant(1, shift));
}

FamilyTask FamilyTask::branin(double a, double b, double c, double r, double s, double t) {
  Eigen::VectorXd p(6);
  p << a, b, c, r, s, t;
  return FamilyTask(Family::Branin, std::move(p));
}

FamilyTask FamilyTask::branin_canonical() {
  return branin(1.0, 5.1 / (4.0 * kPi * kPi), 5.0 / kPi, 6.0, 10.0, 1.0 / (8.0 * kPi));
}

FamilyTask FamilyTask::hartmann3(const Eigen::Vector4d& alpha) {
  return FamilyTask(Family::Hartmann3, alpha);
}

FamilyTask FamilyTask::hartmann6(const Eigen::Vector4d& alpha) {
  return FamilyTask(Family::Hartmann6, alpha);
}

double FamilyTask::eval_unchecked(const Eigen::VectorXd& x) const {
  const auto& p = params_;
  switch (family_) {
    case Family::Forrester: {
      const double u = 6.0 * x[0] - 2.0;
      return p[0] * u * u * std::sin(12.0 * x[0] - 4.0) + p[1] * (x[0] - 0.5) - p[2];
    }
    case Family::Alpine:
      return x[0] * std::sin(x[0] + kPi + p[0]) + 0.1 * x[0];
    case Family::Branin: {
      const double x1 = x[0], x2 = x[1];
      const double inner = x2 - p[1] * x1 * x1 + p[2] * x1 - p[3];
      return p[0] * inner * inner + p[4] * (1.0 - p[5]) * std::cos(x1) + p[4];
    }
    case Family::Hartmann3: {
      double sum = 0.0;
      for (int i = 0; i < 4; ++i) {
        double e = 0.0;
        for (int j = 0; j < 3; ++j) {
          const double d = x[j] - hartmann3_p()(i, j);
          e += hartmann3_a()(i, j) * d * d;
        }
        sum += p[i] * std::exp(-e);
      }
      return -sum;
    }
    case Family::Hartmann6: {
      double sum = 0.0;
      for (int i = 0; i < 4; ++i) {
        double e = 0.0;
        for (int j = 0; j < 6; ++j) {
          const double d = x[j] - hartmann6_p()(i, j);
          e += hartmann6_a()(i, j) * d * d;
        }
        sum += p[i] * std::exp(-e);
      }
      return -sum;
    }
  }
  return 0.0;
}

double FamilyTask::operator()(const Eigen::VectorXd& x) const {
  if (!box().contains(x))
    throw InputError("FamilyTask: input outside the " + std::string(to_string(family_)) + " box");
  return eval_unchecked(x);
}

Eigen::VectorXd FamilyTask::evaluate(const Eigen::MatrixXd& x) const {
  Eigen::VectorXd out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = (*this)(x.row(i).transpose());
  return out;
}

std::string FamilyTask::describe() const {
  std::ostringstream os;
  os.precision(17);
  os << to_string(family_) << '(';
  for (Eigen::Index i = 0; i < params_.size(); ++i) os << (i ? "," : "") << params_[i];
  os << ')';
  return os.str();
}

FamilyTask sample_task(Family family, Rng& rng) {
  if (family == Family::Alpine) {
    std::uniform_int_distribution<int> pick(1, 5);
    return FamilyTask::alpine(pick(rng) * kPi / 12.0);
  }
  const auto ranges = family_parameter_ranges(family);
  Eigen::VectorXd p(static_cast<Eigen::Index>(ranges.size()));
  for (std::size_t i = 0; i < ranges.size(); ++i)
    p[static_cast<Eigen::Index>(i)] =
        std::uniform_real_distribution<double>(ranges[i].first, ranges[i].second)(rng);
  return FamilyTask(family, std::move(p));
}

std::vector<FamilyTask> alpine_benchmark_sources() {
  std::vector<FamilyTask> out;
  for (int k = 1; k <= 5; ++k) out.push_back(FamilyTask::alpine(k * kPi / 12.0));
  return out;
}

FamilyTask alpine_benchmark_target() { return FamilyTask::alpine(0.0); }

TaskDataset generate_source_data(const FamilyTask& task, Eigen::Index n, double sigma, Rng& rng,
                                 int task_id) {
  if (n < 0) throw InputError("generate_source_data: negative point count");
  if (sigma < 0.0) throw InputError("generate_source_data: negative noise level");
  const Box box = task.box();
  Eigen::MatrixXd x(n, box.dim());
  Eigen::VectorXd y(n);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index d = 0; d < box.dim(); ++d)
      x(i, d) = box.lower[d] + unit(rng) * (box.upper[d] - box.lower[d]);
    y[i] = task(x.row(i).transpose());
    if (sigma > 0.0) y[i] += sigma * normal(rng);
  }
  return TaskDataset(std::move(x), std::move(y), task_id);
}

// --- true minimum --------------------------------------------------------------------

namespace {

/// Compass search inside the box, halving the step until below `tol` of the width.
Minimum pattern_search(const FamilyTask& task, Eigen::VectorXd x, double value, double initial_step,
                       double tol) {
  const Box box = task.box();
  const Eigen::VectorXd width = box.width();
  double step = initial_step;
  while (step > tol) {
    bool improved = false;
    for (Eigen::Index d = 0; d < x.size(); ++d) {
      for (double sign : {-1.0, 1.0}) {
        Eigen::VectorXd trial = x;
        trial[d] = std::clamp(x[d] + sign * step * width[d], box.lower[d], box.upper[d]);
        if (trial[d] == x[d]) continue;
        const double v = task(trial);
        if (v < value) {
          x = std::move(trial);
          value = v;
          improved = true;
          break;
        }
      }
    }
    if (!improved) step *= 0.5;
  }
  return {std::move(x), value};
}

struct CacheKey {
  Family family;
  std::vector<double> params;
  int density;
  bool operator<(const CacheKey& o) const {
    return std::tie(family, params, density) < std::tie(o.family, o.params, o.density);
  }
};

std::mutex& cache_mutex() {
  static std::mutex m;
  return m;
}
std::map<CacheKey, Minimum>& cache() {
  static std::map<CacheKey, Minimum> c;
  return c;
}

int default_density(Eigen::Index dim, Family family) {
  if (family == Family::Alpine) return 200001;  // 1e-4 resolution on [-10, 10]
  switch (dim) {
    case 1: return 100001;
    case 2: return 1501;
    case 3: return 151;
    default: return 0;
  }
}

Minimum compute_minimum(const FamilyTask& task, int density) {
  const Box box = task.box();
  const Eigen::Index dim = box.dim();
  const Eigen::VectorXd width = box.width();

  if (dim > 3) {
    // Multi-start local descent from a fixed, task-independent set of starts.
    Rng rng(0x5eedULL + static_cast<std::uint64_t>(dim));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Minimum best{Eigen::VectorXd(), std::numeric_limits<double>::infinity()};
    for (int s = 0; s < 100; ++s) {
      Eigen::VectorXd x(dim);
      for (Eigen::Index d = 0; d < dim; ++d) x[d] = box.lower[d] + unit(rng) * width[d];
      const Minimum m = pattern_search(task, x, task(x), 0.1, 1e-9);
      if (m.value < best.value) best = m;
    }
    return best;
  }

  if (density < 2) throw InputError("true_minimum: grid density must be at least 2");
  const double total = std::pow(static_cast<double>(density), static_cast<double>(dim));
  if (total > 1e7) throw InputError("true_minimum: grid exceeds the 1e7 evaluation budget");

  // Keep the few best grid points as polish seeds.
  constexpr std::size_t kSeeds = 5;
  std::vector<std::pair<double, Eigen::VectorXd>> seeds;
  std::vector<int> idx(static_cast<std::size_t>(dim), 0);
  Eigen::VectorXd x(dim);
  const auto n_total = static_cast<long long>(total);
  for (long long flat = 0; flat < n_total; ++flat) {
    long long rem = flat;
    for (Eigen::Index d = 0; d < dim; ++d) {
      idx[static_cast<std::size_t>(d)] = static_cast<int>(rem % density);
      rem /= density;
      x[d] = box.lower[d] + width[d] * idx[static_cast<std::size_t>(d)] / (density - 1);
    }
    const double v = task(x);
    if (seeds.size() < kSeeds || v < seeds.back().first) {
      auto pos = std::upper_bound(seeds.begin(), seeds.end(), v,
                                  [](double a, const auto& b) { return a < b.first; });
      seeds.insert(pos, {v, x});
      if (seeds.size() > kSeeds) seeds.pop_back();
    }
  }
  Minimum best{seeds.front().second, seeds.front().first};
  const double cell = 1.0 / (density - 1);
  for (const auto& [v, s] : seeds) {
    const Minimum m = pattern_search(task, s, v, cell, 1e-10);
    if (m.value < best.value) best = m;
  }
  return best;
}

}  // namespace

Minimum true_minimum(const FamilyTask& task, int grid_density) {
  const int density = grid_density > 0 ? grid_density : default_density(task.dim(), task.family());
  CacheKey key{task.family(),
               std::vector<double>(task.params().data(), task.params().data() + task.params().size()),
               density};
  {
    std::lock_guard<std::mutex> lock(cache_mutex());
    auto it = cache().find(key);
    if (it != cache().end()) return it->second;
  }
  Minimum m = compute_minimum(task, density);
  std::lock_guard<std::mutex> lock(cache_mutex());
  return cache().emplace(std::move(key), std::move(m)).first->second;
}

}  // namespace tbo
