#include "tbo/joint_kernel.hpp"

#include <algorithm>
#include <array>
#include <string>

#include "tbo/errors.hpp"

namespace tbo {

namespace {
constexpr std::array<std::pair<ModelKind, std::string_view>, 8> kNames{{
    {ModelKind::Gpbo, "gpbo"},
    {ModelKind::Mtgp, "mtgp"},
    {ModelKind::Mtkgp, "mtkgp"},
    {ModelKind::Wsgp, "wsgp"},
    {ModelKind::Hgp, "hgp"},
    {ModelKind::Shgp, "shgp"},
    {ModelKind::Bhgp, "bhgp"},
    {ModelKind::Mhgp, "mhgp"},
}};
}  // namespace

std::string_view to_string(ModelKind kind) {
  for (const auto& [k, name] : kNames)
    if (k == kind) return name;
  return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (const auto& [k, n] : kNames)
    if (n == lower) return k;
  throw InputError("unknown model kind '" + std::string(name) + "'");
}

bool is_joint(ModelKind kind) {
  return kind == ModelKind::Gpbo || kind == ModelKind::Mtgp || kind == ModelKind::Mtkgp ||
         kind == ModelKind::Wsgp || kind == ModelKind::Hgp;
}

bool is_sequential(ModelKind kind) { return !is_joint(kind); }

const std::vector<ModelKind>& all_model_kinds() {
  static const std::vector<ModelKind> kinds{ModelKind::Gpbo, ModelKind::Mtgp, ModelKind::Mtkgp,
                                            ModelKind::Wsgp, ModelKind::Hgp,  ModelKind::Shgp,
                                            ModelKind::Bhgp, ModelKind::Mhgp};
  return kinds;
}

CoregionalizationSpec hgp_coregionalization(int n_sources) {
  if (n_sources < 0) throw InputError("hgp_coregionalization: negative source count");
  const int t = n_sources + 1;
  CoregionalizationSpec spec;
  spec.kind = ModelKind::Hgp;
  for (int nu = 0; nu < t; ++nu) {
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(t, t);
    w.bottomRightCorner(t - nu, t - nu).setOnes();
    spec.matrices.push_back(std::move(w));
  }
  return spec;
}

CoregionalizationSpec mhgp_coregionalization(int n_sources) {
  if (n_sources < 0) throw InputError("mhgp_coregionalization: negative source count");
  const int t = n_sources + 1;
  CoregionalizationSpec spec;
  spec.kind = ModelKind::Mhgp;
  for (int nu = 0; nu < t; ++nu) {
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(t, t);
    w(nu, nu) = 1.0;
    spec.matrices.push_back(std::move(w));
  }
  return spec;
}

CoregionalizationSpec wsgp_coregionalization(const Eigen::VectorXd& weights) {
  const int ns = static_cast<int>(weights.size());
  const int t = ns + 1;
  if ((weights.array() < 0.0).any()) throw InputError("wsgp_coregionalization: negative weight");
  CoregionalizationSpec spec;
  spec.kind = ModelKind::Wsgp;
  spec.source_weights = weights;
  for (int nu = 0; nu < ns; ++nu) {
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(t, t);
    w(nu, nu) = 1.0 + weights[nu];
    w(nu, ns) = w(ns, nu) = weights[nu];
    w(ns, ns) = weights[nu];
    spec.matrices.push_back(std::move(w));
  }
  Eigen::MatrixXd wt = Eigen::MatrixXd::Zero(t, t);
  wt(ns, ns) = 1.0;
  spec.matrices.push_back(std::move(wt));
  return spec;
}

CoregionalizationSpec mtgp_coregionalization(ModelKind kind,
                                             const std::vector<Eigen::MatrixXd>& factors,
                                             const std::vector<Eigen::VectorXd>& diagonals) {
  if (kind != ModelKind::Mtgp && kind != ModelKind::Mtkgp)
    throw InputError("mtgp_coregionalization: kind must be mtgp or mtkgp");
  if (factors.size() != diagonals.size() || factors.empty())
    throw InputError("mtgp_coregionalization: factor/diagonal count mismatch");
  CoregionalizationSpec spec;
  spec.kind = kind;
  for (std::size_t i = 0; i < factors.size(); ++i) {
    if (factors[i].rows() != diagonals[i].size())
      throw InputError("mtgp_coregionalization: factor rows must equal task count");
    if ((diagonals[i].array() < 0.0).any())
      throw InputError("mtgp_coregionalization: negative diagonal");
    Eigen::MatrixXd w = factors[i] * factors[i].transpose();
    w.diagonal() += diagonals[i];
    spec.matrices.push_back(std::move(w));
  }
  return spec;
}

JointKernel::JointKernel(std::vector<KernelTerm> terms, Eigen::VectorXd task_noise)
    : terms_(std::move(terms)), task_noise_(std::move(task_noise)) {
  if (terms_.empty()) throw InputError("JointKernel: no terms");
  const Eigen::Index t = task_noise_.size();
  for (const auto& term : terms_) {
    if (term.coregionalization.rows() != t || term.coregionalization.cols() != t)
      throw InputError("JointKernel: coregionalization matrix has wrong shape");
    if (term.kernel.dim() != terms_.front().kernel.dim())
      throw InputError("JointKernel: terms disagree on input dimension");
  }
  if ((task_noise_.array() < 0.0).any()) throw InputError("JointKernel: negative noise");
}

void JointKernel::check_tasks(const std::vector<int>& tasks, Eigen::Index rows) const {
  if (static_cast<Eigen::Index>(tasks.size()) != rows)
    throw InputError("JointKernel: task label count does not match rows");
  for (int task : tasks)
    if (task < 0 || task >= n_tasks()) throw InputError("JointKernel: task index out of range");
}

double JointKernel::operator()(const Eigen::VectorXd& x, int i, const Eigen::VectorXd& xp,
                               int j) const {
  if (i < 0 || j < 0 || i >= n_tasks() || j >= n_tasks())
    throw InputError("JointKernel: task index out of range");
  if (x.size() != dim() || xp.size() != dim()) throw InputError("JointKernel: dimension mismatch");
  double value = 0.0;
  for (const auto& term : terms_) {
    const double w = term.coregionalization(i, j);
    if (w == 0.0) continue;
    const double r2 = ((x - xp).array() / term.kernel.lengthscales().array()).square().sum();
    value += w * term.kernel.signal_variance() * std::exp(-0.5 * r2);
  }
  if (i == j && x == xp) value += task_noise_[i];
  return value;
}

Eigen::MatrixXd JointKernel::cross(const Eigen::MatrixXd& a, const std::vector<int>& tasks_a,
                                   const Eigen::MatrixXd& b,
                                   const std::vector<int>& tasks_b) const {
  check_tasks(tasks_a, a.rows());
  check_tasks(tasks_b, b.rows());
  if (a.cols() != dim() || b.cols() != dim())
    throw InputError("JointKernel: dimension mismatch");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(a.rows(), b.rows());
  for (const auto& term : terms_) {
    const Eigen::MatrixXd& w = term.coregionalization;
    Eigen::MatrixXd mask(a.rows(), b.rows());
    bool any = false;
    for (Eigen::Index j = 0; j < b.rows(); ++j)
      for (Eigen::Index i = 0; i < a.rows(); ++i) {
        mask(i, j) = w(tasks_a[i], tasks_b[j]);
        any = any || mask(i, j) != 0.0;
      }
    if (!any) continue;
    out += mask.cwiseProduct(kernel_eval(term.kernel, a, b));
  }
  return out;
}

Eigen::MatrixXd JointKernel::gram(const Eigen::MatrixXd& x, const std::vector<int>& tasks) const {
  Eigen::MatrixXd k = cross(x, tasks, x, tasks);
  for (Eigen::Index i = 0; i < x.rows(); ++i) k(i, i) += task_noise_[tasks[i]];
  return k;
}

JointKernel build_joint_kernel(const CoregionalizationSpec& spec,
                               const std::vector<KernelHyperparams>& task_kernels) {
  const int t = spec.n_tasks();
  if (t == 0) throw InputError("build_joint_kernel: empty coregionalization spec");
  if (static_cast<int>(task_kernels.size()) != t)
    throw InputError("build_joint_kernel: need one kernel per task");
  const std::size_t n_terms = spec.matrices.size();
  if (n_terms != 1 && n_terms != static_cast<std::size_t>(t))
    throw InputError("build_joint_kernel: need one matrix per task or a single shared matrix");
  if (n_terms == 1 && t > 1) {
    for (const auto& hp : task_kernels)
      if (hp.signal_variance() != task_kernels.front().signal_variance() ||
          hp.lengthscales() != task_kernels.front().lengthscales())
        throw InputError("build_joint_kernel: a shared matrix requires a shared kernel");
  }
  std::vector<KernelTerm> terms;
  Eigen::VectorXd noise(t);
  for (int i = 0; i < t; ++i) noise[i] = task_kernels[i].noise_variance();
  for (std::size_t nu = 0; nu < n_terms; ++nu)
    terms.push_back({spec.matrices[nu], task_kernels[nu].with_noise(0.0)});
  return JointKernel(std::move(terms), std::move(noise));
}

StackedData stack_tasks(const std::vector<TaskDataset>& sources, const TaskDataset& target) {
  const Eigen::Index dim = target.dim();
  Eigen::Index total = target.size();
  for (const auto& s : sources) {
    if (s.dim() != dim) throw InputError("stack_tasks: sources and target differ in dimension");
    total += s.size();
  }
  StackedData out;
  out.inputs.resize(total, dim);
  out.observations.resize(total);
  out.tasks.reserve(total);
  Eigen::Index row = 0;
  auto append = [&](const TaskDataset& d, int task) {
    out.offsets.push_back(row);
    if (d.size() > 0) {
      out.inputs.middleRows(row, d.size()) = d.inputs;
      out.observations.segment(row, d.size()) = d.observations;
    }
    for (Eigen::Index i = 0; i < d.size(); ++i) out.tasks.push_back(task);
    row += d.size();
  };
  for (std::size_t s = 0; s < sources.size(); ++s) append(sources[s], static_cast<int>(s));
  append(target, static_cast<int>(sources.size()));
  out.offsets.push_back(row);
  return out;
}

}  // namespace tbo
