#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "hybridflow/metrics.hpp"
#include "hybridflow/tensor.hpp"

namespace hybridflow {

// One (dataset, method, seed) evaluation row. Metrics over multi-output
// targets are computed over all elements. ECE is stored on the x100 scale.
struct ResultRecord {
  std::string dataset;
  std::string method;
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  std::string config_hash;
  double rmse = 0.0;
  // Absent for methods without uncertainty.
  std::optional<metrics::ComponentScores> aleatoric;
  std::optional<metrics::ComponentScores> epistemic;
  std::optional<metrics::ComponentScores> total;
  nlohmann::json extra = nlohmann::json::object();
};

// Per-sample arrays kept for the correlation analysis.
struct SampleUncertainty {
  grad::Tensor y;
  grad::Tensor mean;
  grad::Tensor aleatoric;
  grad::Tensor epistemic;
};

ResultRecord evaluate_point(const grad::Tensor& y, const grad::Tensor& mean);
ResultRecord evaluate_uncertainty(const grad::Tensor& y, const grad::Tensor& mean, const grad::Tensor& aleatoric,
                                  const grad::Tensor& epistemic, double alpha, int ece_levels);

nlohmann::json to_json(const ResultRecord& r);
ResultRecord record_from_json(const nlohmann::json& j);

}  // namespace hybridflow
