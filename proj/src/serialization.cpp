#include "tbo/serialization.hpp"

#include "tbo/errors.hpp"

namespace tbo {

using nlohmann::json;

namespace {

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_to_json(const Eigen::VectorXd& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

Eigen::VectorXd vector_from_json(const json& doc) {
  const auto values = doc.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

Eigen::MatrixXd matrix_from_json(const json& doc, Eigen::Index cols) {
  if (!doc.is_array()) throw ParseError("expected an array of rows", 1);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(doc.size()), cols);
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto row = doc[i].get<std::vector<double>>();
    if (static_cast<Eigen::Index>(row.size()) != cols) throw ParseError("ragged matrix row", 1);
    for (Eigen::Index j = 0; j < cols; ++j) m(static_cast<Eigen::Index>(i), j) = row[j];
  }
  return m;
}

json dataset_to_json(const TaskDataset& d) {
  return {{"task_id", d.task_id},
          {"inputs", matrix_to_json(d.inputs)},
          {"observations", vector_to_json(d.observations)}};
}

TaskDataset dataset_from_json(const json& doc, Eigen::Index dim) {
  return TaskDataset(matrix_from_json(doc.at("inputs"), dim),
                     vector_from_json(doc.at("observations")), doc.at("task_id").get<int>());
}

}  // namespace

json hyperparams_to_json(const KernelHyperparams& hp) {
  return {{"signal_variance", hp.signal_variance()},
          {"lengthscales", vector_to_json(hp.lengthscales())},
          {"noise_variance", hp.noise_variance()}};
}

KernelHyperparams hyperparams_from_json(const json& doc) {
  return KernelHyperparams(doc.at("signal_variance").get<double>(),
                           vector_from_json(doc.at("lengthscales")),
                           doc.at("noise_variance").get<double>());
}

json model_to_json(const TransferModel& model) {
  json doc;
  doc["format_version"] = kModelFormatVersion;
  doc["kind"] = std::string(to_string(model.kind()));
  doc["dim"] = model.dim();
  json sources = json::array();
  for (const auto& s : model.sources()) sources.push_back(dataset_to_json(s));
  doc["sources"] = std::move(sources);
  doc["target"] = dataset_to_json(model.target());
  json kernels = json::array();
  for (const auto& hp : model.task_kernels()) kernels.push_back(hyperparams_to_json(hp));
  doc["task_kernels"] = std::move(kernels);

  if (const auto* joint = dynamic_cast<const JointModel*>(&model)) {
    doc["mean_offset"] = joint->mean_offset();
    json mats = json::array();
    for (const auto& w : joint->coregionalization().matrices) mats.push_back(matrix_to_json(w));
    doc["coregionalization"] = std::move(mats);
    doc["source_weights"] = vector_to_json(joint->coregionalization().source_weights);
    doc["block_inverse"] = joint->uses_block_inverse();
  } else if (const auto* hier = dynamic_cast<const HierarchicalModel*>(&model)) {
    doc["mean_offsets"] = hier->mean_offsets();
    doc["single_layer_boost"] = hier->single_layer_boost();
  } else {
    throw InputError("model_to_json: unsupported model type");
  }
  return doc;
}

std::shared_ptr<const TransferModel> model_from_json(const json& doc) {
  try {
    const int version = doc.at("format_version").get<int>();
    if (version != kModelFormatVersion)
      throw ParseError("unsupported model format version " + std::to_string(version), 1);
    const ModelKind kind = parse_model_kind(doc.at("kind").get<std::string>());
    const auto dim = doc.at("dim").get<Eigen::Index>();
    std::vector<TaskDataset> sources;
    for (const auto& s : doc.at("sources")) sources.push_back(dataset_from_json(s, dim));
    TaskDataset target = dataset_from_json(doc.at("target"), dim);
    std::vector<KernelHyperparams> kernels;
    for (const auto& k : doc.at("task_kernels")) kernels.push_back(hyperparams_from_json(k));

    if (is_joint(kind)) {
      CoregionalizationSpec spec;
      spec.kind = kind;
      const auto n_tasks = static_cast<Eigen::Index>(sources.size() + 1);
      for (const auto& w : doc.at("coregionalization"))
        spec.matrices.push_back(matrix_from_json(w, n_tasks));
      spec.source_weights = vector_from_json(doc.at("source_weights"));
      return std::make_shared<JointModel>(kind, std::move(spec), std::move(kernels),
                                          std::move(sources), std::move(target),
                                          doc.at("mean_offset").get<double>(),
                                          doc.value("block_inverse", true));
    }
    return std::make_shared<HierarchicalModel>(hierarchical_from_hyperparameters(
        kind, sources, target, kernels, doc.at("mean_offsets").get<std::vector<double>>(),
        doc.value("single_layer_boost", false)));
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed model document: ") + e.what(), 1);
  }
}

std::string serialize_model(const TransferModel& model) { return model_to_json(model).dump(2); }

std::shared_ptr<const TransferModel> deserialize_model(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    // byte offset -> line number
    const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + upto, '\n'));
    throw ParseError(e.what(), line);
  }
  return model_from_json(doc);
}

}  // namespace tbo
