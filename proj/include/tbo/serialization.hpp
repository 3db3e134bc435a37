#pragma once

#include <memory>
#include <string>

#include <json.hpp>

#include "tbo/transfer_models.hpp"

namespace tbo {

inline constexpr int kModelFormatVersion = 1;

/// Kind tag, per-level or per-task hyperparameters in constrained space, mean
/// offsets, coregionalization matrices and the training data.
nlohmann::json model_to_json(const TransferModel& model);
/// Rebuilds and re-conditions a model. Throws ParseError on malformed documents.
std::shared_ptr<const TransferModel> model_from_json(const nlohmann::json& doc);

std::string serialize_model(const TransferModel& model);
std::shared_ptr<const TransferModel> deserialize_model(const std::string& text);

nlohmann::json hyperparams_to_json(const KernelHyperparams& hp);
KernelHyperparams hyperparams_from_json(const nlohmann::json& doc);

}  // namespace tbo
