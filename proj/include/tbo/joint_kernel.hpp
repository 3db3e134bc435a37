#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "tbo/gp_core.hpp"

namespace tbo {

/// Surrogate models. Gpbo is the no-transfer baseline (a single-task GP).
enum class ModelKind { Gpbo, Mtgp, Mtkgp, Wsgp, Hgp, Shgp, Bhgp, Mhgp };

std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);
/// Kinds whose hyperparameters are fitted jointly on all tasks.
bool is_joint(ModelKind kind);
/// Kinds trained level by level with frozen sources.
bool is_sequential(ModelKind kind);
const std::vector<ModelKind>& all_model_kinds();

/// Coregionalization matrices W_nu of a sum-of-separable-kernels model.
///
/// Task indices run over sources 0..n_s-1 followed by the target n_s. One
/// matrix per task kernel, or a single matrix when all tasks share one kernel
/// (MTKGP).
struct CoregionalizationSpec {
  ModelKind kind = ModelKind::Hgp;
  std::vector<Eigen::MatrixXd> matrices;
  Eigen::VectorXd source_weights;  // WSGP only

  int n_tasks() const { return matrices.empty() ? 0 : static_cast<int>(matrices.front().rows()); }
};

/// [W_nu]_{ij} = 1 for i, j >= nu, else 0.
CoregionalizationSpec hgp_coregionalization(int n_sources);
/// Block-diagonal: [W_nu]_{ij} = delta_{i nu} delta_{j nu}.
CoregionalizationSpec mhgp_coregionalization(int n_sources);
/// W_nu = e_nu e_nu^T + w_nu (e_nu + e_t)(e_nu + e_t)^T for sources, W_t = e_t e_t^T.
CoregionalizationSpec wsgp_coregionalization(const Eigen::VectorXd& weights);
/// W_nu = Lambda_nu Lambda_nu^T + diag(kappa_nu). One factor pair per task kernel for
/// MTGP, a single pair for MTKGP.
CoregionalizationSpec mtgp_coregionalization(ModelKind kind,
                                             const std::vector<Eigen::MatrixXd>& factors,
                                             const std::vector<Eigen::VectorXd>& diagonals);

struct KernelTerm {
  Eigen::MatrixXd coregionalization;
  KernelHyperparams kernel;  // noise field unused; task noise lives in JointKernel
};

/// k((x,i),(x',j)) = sum_nu [W_nu]_{ij} k_nu(x,x') + delta_{xx'} delta_{ij} sigma_i^2.
class JointKernel {
 public:
  JointKernel(std::vector<KernelTerm> terms, Eigen::VectorXd task_noise);

  int n_tasks() const { return static_cast<int>(task_noise_.size()); }
  Eigen::Index dim() const { return terms_.front().kernel.dim(); }
  const std::vector<KernelTerm>& terms() const { return terms_; }
  const Eigen::VectorXd& task_noise() const { return task_noise_; }

  /// Pointwise form; the noise term applies on bitwise-equal inputs of the same task.
  double operator()(const Eigen::VectorXd& x, int i, const Eigen::VectorXd& xp, int j) const;

  /// Noise-free covariance between task-labelled point sets.
  Eigen::MatrixXd cross(const Eigen::MatrixXd& a, const std::vector<int>& tasks_a,
                        const Eigen::MatrixXd& b, const std::vector<int>& tasks_b) const;
  /// Training covariance: cross(x, x) plus each observation's task noise on the diagonal.
  Eigen::MatrixXd gram(const Eigen::MatrixXd& x, const std::vector<int>& tasks) const;

 private:
  void check_tasks(const std::vector<int>& tasks, Eigen::Index rows) const;

  std::vector<KernelTerm> terms_;
  Eigen::VectorXd task_noise_;
};

/// `task_kernels[nu]` supplies k_nu and the noise of task nu. With a single
/// coregionalization matrix every task must share the same SE parameters.
JointKernel build_joint_kernel(const CoregionalizationSpec& spec,
                               const std::vector<KernelHyperparams>& task_kernels);

/// Sources followed by the target, with per-row task labels.
struct StackedData {
  Eigen::MatrixXd inputs;
  Eigen::VectorXd observations;
  std::vector<int> tasks;
  std::vector<Eigen::Index> offsets;  // first row of each task, plus a final end marker

  Eigen::Index size() const { return observations.size(); }
  Eigen::Index task_size(int task) const { return offsets[task + 1] - offsets[task]; }
};

StackedData stack_tasks(const std::vector<TaskDataset>& sources, const TaskDataset& target);

}  // namespace tbo
