#include "tbo/errors.hpp"
#include "tbo/transfer_models.hpp"

namespace tbo {

LevelCoupling coupling_for(ModelKind kind) {
  switch (kind) {
    case ModelKind::Shgp:
      return LevelCoupling::Covariance;
    case ModelKind::Bhgp:
    case ModelKind::Mhgp:
      return LevelCoupling::MeanOnly;
    default:
      throw InputError("coupling_for: kind is not sequential");
  }
}

HierarchicalModel::HierarchicalModel(ModelKind kind, LevelChain chain, bool single_layer_boost)
    : kind_(kind), chain_(std::move(chain)), single_layer_boost_(single_layer_boost) {
  if (coupling_for(kind) != chain_.coupling())
    throw InputError("HierarchicalModel: chain coupling does not match the model kind");
  if (chain_.size() == 0) throw InputError("HierarchicalModel: chain has no target level");
  for (std::size_t i = 0; i + 1 < chain_.size(); ++i) sources_.push_back(chain_.level(i).data);
}

std::vector<KernelHyperparams> HierarchicalModel::task_kernels() const {
  std::vector<KernelHyperparams> out;
  for (std::size_t i = 0; i < chain_.size(); ++i) out.push_back(chain_.level(i).kernel);
  return out;
}

std::vector<double> HierarchicalModel::mean_offsets() const {
  std::vector<double> out;
  for (std::size_t i = 0; i < chain_.size(); ++i) out.push_back(chain_.level(i).mean_offset);
  return out;
}

GaussianPrediction HierarchicalModel::predict(const Eigen::MatrixXd& queries) const {
  if (kind_ == ModelKind::Bhgp) return chain_.boosted_posterior(queries, !single_layer_boost_);
  return chain_.posterior(queries);
}

MarginalPrediction HierarchicalModel::predict_marginal(const Eigen::MatrixXd& queries) const {
  if (kind_ == ModelKind::Bhgp)
    return chain_.boosted_posterior_marginal(queries, !single_layer_boost_);
  return chain_.posterior_marginal(queries);
}

HierarchicalModel hierarchical_from_hyperparameters(ModelKind kind,
                                                    const std::vector<TaskDataset>& sources,
                                                    const TaskDataset& target,
                                                    const std::vector<KernelHyperparams>& kernels,
                                                    const std::vector<double>& mean_offsets,
                                                    bool single_layer_boost) {
  const std::size_t levels = sources.size() + 1;
  if (kernels.size() != levels)
    throw InputError("hierarchical_from_hyperparameters: need one kernel per level");
  if (!mean_offsets.empty() && mean_offsets.size() != levels)
    throw InputError("hierarchical_from_hyperparameters: need one mean offset per level");
  LevelChain chain(coupling_for(kind), target.dim());
  for (std::size_t i = 0; i < levels; ++i) {
    const TaskDataset& data = i < sources.size() ? sources[i] : target;
    const LevelPrior prior = chain.prior_for(data.inputs);
    chain = chain.with_level(prior, data, kernels[i], mean_offsets.empty() ? 0.0 : mean_offsets[i]);
  }
  return HierarchicalModel(kind, std::move(chain), single_layer_boost);
}

LevelChain fit_level(const LevelChain& chain, const TaskDataset& data, Rng& rng,
                     const TrainingOptions& options) {
  const LevelPrior prior = chain.prior_for(data.inputs);
  if (data.is_empty()) {
    // Nothing to fit: inherit the kernel of the level below.
    const KernelHyperparams kernel =
        chain.size() > 0 ? chain.level(chain.size() - 1).kernel
                         : KernelHyperparams::from_raw(
                               Eigen::VectorXd::Zero(KernelHyperparams::raw_size(data.dim())));
    return chain.with_level(prior, data, kernel, 0.0);
  }
  const Normalization norm = normalize_targets(data.observations - prior.mean);
  const double scale = norm.std * norm.std;
  const TaskDataset normalized(data.inputs, norm.normalized, data.task_id);

  Eigen::MatrixXd extra;
  HyperparameterOptions hopts;
  hopts.n_restarts = options.n_restarts;
  hopts.lower_bound = options.lower_bound;
  hopts.upper_bound = options.upper_bound;
  hopts.optimizer = options.optimizer;
  if (chain.coupling() == LevelCoupling::Covariance && chain.size() > 0) {
    extra = prior.covariance / scale;
    hopts.extra_covariance = &extra;
  }
  const HyperparameterFit fit = optimize_hyperparameters(normalized, zero_mean(), rng, hopts);
  return chain.with_level(prior, data, fit.hyperparams.scaled(scale), norm.mean);
}

LevelChain train_source_chain(LevelCoupling coupling, const std::vector<TaskDataset>& sources,
                              Rng& rng, const TrainingOptions& options) {
  if (sources.empty()) throw InputError("train_source_chain: at least one source is required");
  LevelChain chain(coupling, sources.front().dim());
  for (const auto& source : sources) {
    if (source.dim() != chain.dim()) throw InputError("train_source_chain: dimension mismatch");
    chain = fit_level(chain, source, rng, options);
  }
  return chain;
}

HierarchicalModel train_sequential(ModelKind kind, const std::vector<TaskDataset>& sources,
                                   const TaskDataset& target, Rng& rng,
                                   const TrainingOptions& options) {
  LevelChain chain = train_source_chain(coupling_for(kind), sources, rng, options);
  if (target.dim() != chain.dim()) throw InputError("train_sequential: dimension mismatch");
  return HierarchicalModel(kind, fit_level(chain, target, rng, options),
                           options.single_layer_boost);
}

HierarchicalModel retrain_target(const HierarchicalModel& model, const TaskDataset& target,
                                 Rng& rng, const TrainingOptions& options) {
  if (target.dim() != model.dim()) throw InputError("retrain_target: dimension mismatch");
  return HierarchicalModel(model.kind(), fit_level(model.source_chain(), target, rng, options),
                           model.single_layer_boost());
}

ModelTrainer::ModelTrainer(ModelKind kind, std::vector<TaskDataset> sources, Rng& rng,
                           TrainingOptions options)
    : kind_(kind), sources_(std::move(sources)), options_(std::move(options)) {
  if (is_sequential(kind_))
    source_chain_.emplace(train_source_chain(coupling_for(kind_), sources_, rng, options_));
}

std::shared_ptr<const TransferModel> ModelTrainer::train(const TaskDataset& target, Rng& rng) const {
  if (source_chain_) {
    if (target.dim() != source_chain_->dim()) throw InputError("ModelTrainer: dimension mismatch");
    return std::make_shared<HierarchicalModel>(kind_, fit_level(*source_chain_, target, rng, options_),
                                               options_.single_layer_boost);
  }
  return std::make_shared<JointModel>(train_joint(kind_, sources_, target, rng, options_));
}

}  // namespace tbo
