#include "hybridflow/record.hpp"

#include <stdexcept>

namespace hybridflow {

namespace {

metrics::ComponentScores scores(const grad::Tensor& y, const grad::Tensor& mean, const grad::Tensor& var, double alpha,
                                int levels) {
  metrics::ComponentScores s = metrics::score_component(mean.values(), var.values(), y.values(), alpha, levels);
  s.ece *= 100.0;
  return s;
}

nlohmann::json scores_json(const std::optional<metrics::ComponentScores>& s) {
  if (!s) return nullptr;
  return {{"nll", s->nll}, {"crps", s->crps}, {"ece", s->ece},
          {"picp", s->picp}, {"mpiw", s->mpiw}, {"winkler", s->winkler}};
}

std::optional<metrics::ComponentScores> scores_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return metrics::ComponentScores{j.at("nll"), j.at("crps"), j.at("ece"), j.at("picp"), j.at("mpiw"), j.at("winkler")};
}

}  // namespace

ResultRecord evaluate_point(const grad::Tensor& y, const grad::Tensor& mean) {
  if (y.shape() != mean.shape()) throw std::invalid_argument("evaluate: prediction and target shapes differ");
  ResultRecord r;
  r.rmse = metrics::rmse(mean.values(), y.values());
  return r;
}

ResultRecord evaluate_uncertainty(const grad::Tensor& y, const grad::Tensor& mean, const grad::Tensor& aleatoric,
                                  const grad::Tensor& epistemic, double alpha, int ece_levels) {
  ResultRecord r = evaluate_point(y, mean);
  if (aleatoric.shape() != y.shape() || epistemic.shape() != y.shape()) {
    throw std::invalid_argument("evaluate: variance shapes differ from the target");
  }
  grad::Tensor total = aleatoric;
  for (std::size_t i = 0; i < total.size(); ++i) total[i] += epistemic[i];
  r.aleatoric = scores(y, mean, aleatoric, alpha, ece_levels);
  r.epistemic = scores(y, mean, epistemic, alpha, ece_levels);
  r.total = scores(y, mean, total, alpha, ece_levels);
  return r;
}

nlohmann::json to_json(const ResultRecord& r) {
  nlohmann::json j;
  j["dataset"] = r.dataset;
  j["method"] = r.method;
  j["seed"] = r.seed;
  j["ok"] = r.ok;
  if (!r.ok) j["error"] = r.error;
  j["config_hash"] = r.config_hash;
  j["rmse"] = r.ok ? nlohmann::json(r.rmse) : nlohmann::json(nullptr);
  j["aleatoric"] = scores_json(r.aleatoric);
  j["epistemic"] = scores_json(r.epistemic);
  j["total"] = scores_json(r.total);
  j["extra"] = r.extra;
  return j;
}

ResultRecord record_from_json(const nlohmann::json& j) {
  ResultRecord r;
  r.dataset = j.at("dataset");
  r.method = j.at("method");
  r.seed = j.at("seed");
  r.ok = j.at("ok");
  r.error = j.value("error", "");
  r.config_hash = j.value("config_hash", "");
  r.rmse = j.at("rmse").is_null() ? 0.0 : j.at("rmse").get<double>();
  r.aleatoric = scores_from(j.at("aleatoric"));
  r.epistemic = scores_from(j.at("epistemic"));
  r.total = scores_from(j.at("total"));
  r.extra = j.value("extra", nlohmann::json::object());
  return r;
}

}  // namespace hybridflow
