#include <chrono>
#include <cmath>
#include <functional>

#include "tbo/errors.hpp"
#include "tbo/function_families.hpp"
#include "tbo/transfer_models.hpp"
#include "tbo/verification.hpp"

namespace tbo {

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InputError("loglog_slope: need two or more points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw InputError("loglog_slope: values must be positive");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0.0) throw InputError("loglog_slope: all x values are equal");
  return sxy / sxx;
}

namespace {

using Step = std::function<void()>;

/// One gradient step of the target stage for `kind`, with everything that does
/// not depend on the current target hyperparameters built beforehand.
Step make_step(ModelKind kind, const TaskDataset& source, const TaskDataset& target,
               const KernelHyperparams& hp) {
  const std::vector<TaskDataset> sources{source};
  const Eigen::Index dim = target.dim();
  if (is_joint(kind)) {
    const bool single = kind == ModelKind::Gpbo;
    const JointParameterization param(kind, single ? 0 : 1, dim);
    Eigen::VectorXd raw = Eigen::VectorXd::Zero(param.size());
    if (kind == ModelKind::Hgp || kind == ModelKind::Wsgp || single) {
      const Eigen::VectorXd r = hp.raw();
      for (int t = 0; t < param.n_tasks(); ++t) raw.segment(t * r.size(), r.size()) = r;
    }
    auto stacked = std::make_shared<StackedData>(
        stack_tasks(single ? std::vector<TaskDataset>{} : sources, target));
    return [param, raw, stacked] { (void)joint_log_likelihood(param, raw, *stacked); };
  }
  auto chain = std::make_shared<LevelChain>(coupling_for(kind), dim);
  *chain = chain->with_level(chain->prior_for(source.inputs), source, hp, 0.0);
  auto tgt = std::make_shared<TaskDataset>(target);
  switch (kind) {
    case ModelKind::Shgp:
      return [chain, tgt, hp] {
        const LevelPrior prior = chain->prior_for(tgt->inputs);
        const TaskDataset resid(tgt->inputs, tgt->observations - prior.mean, tgt->task_id);
        (void)log_marginal_likelihood(hp, resid, zero_mean(), &prior.covariance);
      };
    case ModelKind::Bhgp:
      // The mean-only likelihood plus the source posterior blocks the boost term needs.
      return [chain, tgt, hp] {
        const GaussianPrediction src = chain->posterior(tgt->inputs);
        const TaskDataset resid(tgt->inputs, tgt->observations - src.mean, tgt->task_id);
        (void)log_marginal_likelihood(hp, resid);
      };
    default:
      return [chain, tgt, hp] {
        const Eigen::VectorXd mean = chain->posterior_mean(tgt->inputs);
        const TaskDataset resid(tgt->inputs, tgt->observations - mean, tgt->task_id);
        (void)log_marginal_likelihood(hp, resid);
      };
  }
}

std::pair<double, int> measure(const Step& step, double min_ms) {
  int inner = 1;
  while (true) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < inner; ++i) step();
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (ms >= min_ms || inner >= (1 << 20)) return {ms / inner, inner};
    // Aim past the threshold next time rather than doubling blindly.
    const double factor = ms > 0.0 ? std::min(1024.0, 1.5 * min_ms / ms) : 16.0;
    inner = std::max(inner * 2, static_cast<int>(std::ceil(inner * factor)));
  }
}

}  // namespace

TimingSweepResult timing_sweep(const std::vector<ModelKind>& kinds,
                               const std::vector<Eigen::Index>& source_sizes,
                               Eigen::Index target_size, int reps, const TimingOptions& options) {
  if (kinds.empty()) throw InputError("timing_sweep: no model kinds given");
  if (source_sizes.empty()) throw InputError("timing_sweep: empty size grid");
  if (!std::is_sorted(source_sizes.begin(), source_sizes.end()))
    throw InputError("timing_sweep: size grid must be ascending");
  if (source_sizes.front() < 1 || target_size < 1)
    throw InputError("timing_sweep: sizes must be positive");
  if (reps < 1) throw InputError("timing_sweep: reps must be >= 1");

  Rng rng(options.seed);
  const FamilyTask source_task = sample_task(Family::Hartmann6, rng);
  const FamilyTask target_task = sample_task(Family::Hartmann6, rng);
  const TaskDataset target = generate_source_data(target_task, target_size, 0.1, rng, 1);
  const KernelHyperparams hp = KernelHyperparams::isotropic(6, 1.0, 0.5, 0.01);

  TimingSweepResult out;
  for (const ModelKind kind : kinds) {
    std::vector<double> xs, ys;
    for (const Eigen::Index ns : source_sizes) {
      Rng data_rng(options.seed + static_cast<std::uint64_t>(ns));
      const TaskDataset source = generate_source_data(source_task, ns, 0.1, data_rng, 0);
      const Step step = make_step(kind, source, target, hp);
      step();  // warm-up
      for (int r = 0; r < reps; ++r) {
        const auto [ms, inner] = measure(step, options.min_measure_ms);
        out.records.push_back({std::string(to_string(kind)), "target-train", 1, ns, target_size, r,
                               ms, inner});
        xs.push_back(static_cast<double>(ns));
        ys.push_back(ms);
      }
    }
    if (source_sizes.size() >= 2 && source_sizes.front() != source_sizes.back())
      out.slopes[std::string(to_string(kind))] = loglog_slope(xs, ys);
  }
  return out;
}

}  // namespace tbo
