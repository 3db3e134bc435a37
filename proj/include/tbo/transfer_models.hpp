#pragma once

#include <memory>
#include <optional>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "tbo/gp_core.hpp"
#include "tbo/hierarchy.hpp"
#include "tbo/joint_kernel.hpp"
#include "tbo/wsgp_block_inverse.hpp"

namespace tbo {

struct TrainingOptions {
  int n_restarts = 10;
  double lower_bound = 1e-6;
  double upper_bound = 1e3;
  /// Rank of Lambda_nu for MTGP/MTKGP. 0 selects min(n_tasks, 2); negative selects full rank.
  int coregionalization_rank = 0;
  /// BHGP: boost only the top level instead of every level.
  bool single_layer_boost = false;
  /// WSGP: factor the joint matrix with the blocked scheme (dense Cholesky otherwise).
  bool wsgp_blocked = true;
  LbfgsbOptions optimizer{};
};

/// A trained model over n_s sources and one target. Immutable; prediction is thread-safe.
class TransferModel {
 public:
  virtual ~TransferModel() = default;

  virtual ModelKind kind() const = 0;
  virtual const std::vector<TaskDataset>& sources() const = 0;
  virtual const TaskDataset& target() const = 0;
  /// Per-task kernels in original units, sources first. For MTGP/MTKGP the
  /// signal variance lives in the coregionalization matrices and reads as 1.
  virtual std::vector<KernelHyperparams> task_kernels() const = 0;

  /// Target-task posterior at the query rows.
  virtual GaussianPrediction predict(const Eigen::MatrixXd& queries) const = 0;
  virtual MarginalPrediction predict_marginal(const Eigen::MatrixXd& queries) const = 0;

  int n_sources() const { return static_cast<int>(sources().size()); }
  Eigen::Index dim() const { return target().dim(); }
};

/// Raw-parameter layout of a jointly trained kind.
///
///  - Gpbo/Hgp/Wsgp: per task [signal, lengthscales, noise] (softplus), then for
///    Wsgp one softplus weight per source.
///  - Mtgp: per task [lengthscales], Lambda_nu (column-major T x r), kappa_nu
///    (softplus); then T softplus noises.
///  - Mtkgp: the same with a single (lengthscales, Lambda, kappa) group.
class JointParameterization {
 public:
  JointParameterization(ModelKind kind, int n_sources, Eigen::Index dim, int rank = 0);

  ModelKind kind() const { return kind_; }
  int n_tasks() const { return n_tasks_; }
  int rank() const { return rank_; }
  Eigen::Index size() const { return size_; }
  BoxBounds bounds(double lower, double upper) const;

  CoregionalizationSpec coregionalization(const Eigen::VectorXd& raw) const;
  std::vector<KernelHyperparams> task_kernels(const Eigen::VectorXd& raw) const;
  JointKernel kernel(const Eigen::VectorXd& raw) const;

  /// Chain rule from kernel-level derivatives to raw parameters.
  struct KernelGradients {
    std::vector<Eigen::MatrixXd> coregionalization;  // dL/dW_nu
    std::vector<double> signal;                      // dL/d sf_nu^2
    std::vector<Eigen::VectorXd> lengthscale;        // dL/d l_nu
    Eigen::VectorXd noise;                           // dL/d sigma_i^2
  };
  Eigen::VectorXd raw_gradient(const Eigen::VectorXd& raw, const KernelGradients& g) const;

 private:
  Eigen::Index group_size() const;
  Eigen::Index n_groups() const;

  ModelKind kind_;
  int n_tasks_;
  Eigen::Index dim_;
  int rank_ = 0;
  Eigen::Index size_ = 0;
};

/// Joint LML of the stacked data (already normalized) and its raw gradient.
LikelihoodValue joint_log_likelihood(const JointParameterization& param, const Eigen::VectorXd& raw,
                                     const StackedData& data, bool wsgp_blocked = true);

/// Joint-kernel model conditioned on every source and target observation.
class JointModel final : public TransferModel {
 public:
  /// Conditions the joint kernel implied by `spec` and `task_kernels` (original
  /// units) on the data; the prior mean is the constant `mean_offset`.
  JointModel(ModelKind kind, CoregionalizationSpec spec, std::vector<KernelHyperparams> task_kernels,
             std::vector<TaskDataset> sources, TaskDataset target, double mean_offset = 0.0,
             bool wsgp_blocked = true);

  ModelKind kind() const override { return kind_; }
  const std::vector<TaskDataset>& sources() const override { return sources_; }
  const TaskDataset& target() const override { return target_; }
  std::vector<KernelHyperparams> task_kernels() const override { return task_kernels_; }
  GaussianPrediction predict(const Eigen::MatrixXd& queries) const override;
  MarginalPrediction predict_marginal(const Eigen::MatrixXd& queries) const override;

  const CoregionalizationSpec& coregionalization() const { return spec_; }
  const JointKernel& kernel() const { return kernel_; }
  double mean_offset() const { return mean_offset_; }
  bool uses_block_inverse() const { return blocked_.has_value(); }
  /// Factorization multiply-add count of the blocked WSGP path (0 otherwise).
  std::uint64_t factorization_flops() const;

 private:
  Eigen::MatrixXd cross_to_data(const Eigen::MatrixXd& queries) const;
  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const;

  ModelKind kind_;
  CoregionalizationSpec spec_;
  std::vector<KernelHyperparams> task_kernels_;
  std::vector<TaskDataset> sources_;
  TaskDataset target_;
  double mean_offset_;
  JointKernel kernel_;
  StackedData stacked_;
  std::optional<RobustCholesky> dense_;
  std::optional<WsgpBlockInverse> blocked_;
  Eigen::VectorXd weights_;
};

/// SHGP, BHGP or MHGP: sources as the lower levels of a chain, target on top.
class HierarchicalModel final : public TransferModel {
 public:
  HierarchicalModel(ModelKind kind, LevelChain chain, bool single_layer_boost = false);

  ModelKind kind() const override { return kind_; }
  const std::vector<TaskDataset>& sources() const override { return sources_; }
  const TaskDataset& target() const override { return chain_.level(chain_.size() - 1).data; }
  std::vector<KernelHyperparams> task_kernels() const override;
  GaussianPrediction predict(const Eigen::MatrixXd& queries) const override;
  MarginalPrediction predict_marginal(const Eigen::MatrixXd& queries) const override;

  const LevelChain& chain() const { return chain_; }
  LevelChain source_chain() const { return chain_.prefix(chain_.size() - 1); }
  std::vector<double> mean_offsets() const;
  bool single_layer_boost() const { return single_layer_boost_; }

 private:
  ModelKind kind_;
  LevelChain chain_;
  bool single_layer_boost_;
  std::vector<TaskDataset> sources_;
};

LevelCoupling coupling_for(ModelKind kind);

/// Builds a hierarchical model from fixed per-level hyperparameters (sources
/// first, target last) and per-level constant mean offsets (zeros if empty).
HierarchicalModel hierarchical_from_hyperparameters(ModelKind kind,
                                                    const std::vector<TaskDataset>& sources,
                                                    const TaskDataset& target,
                                                    const std::vector<KernelHyperparams>& kernels,
                                                    const std::vector<double>& mean_offsets = {},
                                                    bool single_layer_boost = false);

/// Coregionalization spec of a kind at fixed parameters: HGP/SHGP use the
/// hierarchical pattern, MHGP/BHGP the block-diagonal one.
CoregionalizationSpec coregionalization_for(ModelKind kind, int n_sources);

JointModel train_joint(ModelKind kind, const std::vector<TaskDataset>& sources,
                       const TaskDataset& target, Rng& rng, const TrainingOptions& options = {});

/// Meta-trains the source levels only.
LevelChain train_source_chain(LevelCoupling coupling, const std::vector<TaskDataset>& sources,
                              Rng& rng, const TrainingOptions& options = {});
/// Fits a new top level on `data`, with every level below frozen.
LevelChain fit_level(const LevelChain& chain, const TaskDataset& data, Rng& rng,
                     const TrainingOptions& options = {});

HierarchicalModel train_sequential(ModelKind kind, const std::vector<TaskDataset>& sources,
                                   const TaskDataset& target, Rng& rng,
                                   const TrainingOptions& options = {});
/// Refits only the target level of `model` on new target data.
HierarchicalModel retrain_target(const HierarchicalModel& model, const TaskDataset& target,
                                 Rng& rng, const TrainingOptions& options = {});

/// Trains models of one kind for a fixed set of sources, reusing the
/// meta-trained source chain across target refits.
class ModelTrainer {
 public:
  ModelTrainer(ModelKind kind, std::vector<TaskDataset> sources, Rng& rng,
               TrainingOptions options = {});

  ModelKind kind() const { return kind_; }
  std::shared_ptr<const TransferModel> train(const TaskDataset& target, Rng& rng) const;

 private:
  ModelKind kind_;
  std::vector<TaskDataset> sources_;
  TrainingOptions options_;
  std::optional<LevelChain> source_chain_;
};

}  // namespace tbo
