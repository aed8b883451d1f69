#include "hybridflow/hybrid.hpp"

#include <stdexcept>

#include "hybridflow/errors.hpp"
#include "hybridflow/random.hpp"
#include "hybridflow/serialize.hpp"

namespace hybridflow::hybrid {

namespace {

const char* estimator_name(EpistemicEstimator e) { return e == EpistemicEstimator::ensemble ? "ensemble" : "mc_dropout"; }

const char* loss_name(predictor::LossKind k) {
  switch (k) {
    case predictor::LossKind::mse: return "mse";
    case predictor::LossKind::gaussian_nll: return "gaussian_nll";
    case predictor::LossKind::beta_nll: return "beta_nll";
  }
  return "?";
}

// Exact text for doubles so the hash sees every bit.
nlohmann::json exact(double v) { return tensor_to_json(Tensor::scalar(v)).at("bits"); }

void require_fingerprint(const data::Dataset& ds, const data::Normalizer& norm, const char* op) {
  if (ds.normalizer_fingerprint != norm.fingerprint()) {
    throw std::invalid_argument(std::string(op) +
                                ": input was not normalized with the model's normalizer (fingerprint mismatch)");
  }
}

struct PredictorFit {
  std::vector<predictor::PredictorModel> models;
  double lr = 0.0;
};

// Rows held out from stage 2 for early stopping; their features use the
// inference-time latent.
struct Stage2Data {
  Tensor x_tr, y_tr, z_tr, x_val, y_val, z_val;
};

Stage2Data stage2_data(const data::Dataset& train, const flow::FlowModel& flow, const HybridConfig& cfg) {
  const std::size_t n = train.rows();
  const auto n_val = static_cast<std::size_t>(
      std::llround(cfg.predictor_train.validation_fraction * static_cast<double>(n)));
  if (n_val == 0 || n_val >= n) throw std::invalid_argument("fit_hybrid: too few rows for a validation split");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(cfg.predictor_seed, "hybrid-validation"));
  std::shuffle(idx.begin(), idx.end(), rng);
  std::span<const std::size_t> val(idx.data(), n_val), tr(idx.data() + n_val, n - n_val);
  Stage2Data s;
  s.x_tr = train.x.gather_rows(tr);
  s.y_tr = train.y.gather_rows(tr);
  s.z_tr = flow::latent_from_target(flow, s.y_tr, s.x_tr);
  s.x_val = train.x.gather_rows(val);
  s.y_val = train.y.gather_rows(val);
  s.z_val = flow::latent_expected(flow, s.x_val);
  return s;
}

predictor::PredictorArchitecture predictor_arch_for(const HybridConfig& cfg, std::size_t in, std::size_t out) {
  predictor::PredictorArchitecture a = cfg.predictor_arch;
  a.input_dim = in;
  a.output_dim = out;
  return a;
}

// Joint low-learning-rate pass over flow and predictor, starting from the
// stage-2 solution; early-stopped on the same validation rows.
void finetune(flow::FlowModel& flow, predictor::PredictorModel& pred, const Stage2Data& s, const HybridConfig& cfg,
              double predictor_lr) {
  using grad::Tape;
  using grad::Var;
  std::vector<grad::ParamGroup> groups{{pred.parameters(), grad::AdamOptions{.lr = predictor_lr}},
                                       {flow.parameters(), grad::AdamOptions{.lr = cfg.finetune_lr}}};
  Rng drop_rng(derive_seed(cfg.predictor_seed, "finetune-dropout"));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  predictor::UniformSource uniform = [&] { return u(drop_rng); };
  auto batch_loss = [&](Tape& tape, std::span<const std::size_t> rows) {
    Var xb = tape.constant(s.x_tr.gather_rows(rows));
    Var yb = tape.constant(s.y_tr.gather_rows(rows));
    Var z = flow::latent_from_target(flow, tape, yb, xb);
    Var feats = xb;
    if (cfg.inputs == InputMode::x_and_z) {
      Var parts[] = {xb, z};
      feats = grad::concat_last_axis(parts);
    } else if (cfg.inputs == InputMode::z_only) {
      feats = z;
    }
    Var pred_loss = predictor::mse_loss(predictor::predictor_forward(pred, tape, feats, &uniform).mean, yb);
    Var nll = grad::neg(grad::reduce_mean(flow::log_prob(flow, tape, yb, xb)));
    return pred_loss + nll;
  };
  auto val_loss = [&] {
    Tensor z = flow::latent_expected(flow, s.x_val);
    Tensor f = select_features(s.x_val, z, cfg.inputs);
    return predictor::evaluate_loss(pred, f, s.y_val, cfg.predictor_train);
  };
  grad::TrainerOptions opts{cfg.predictor_train.epochs, cfg.predictor_train.batch_size, cfg.predictor_train.patience,
                            derive_seed(cfg.predictor_seed, "finetune-batches")};
  grad::train_minibatch(groups, s.x_tr.rows(), batch_loss, val_loss, opts);
}

}  // namespace

std::string to_string(InputMode m) {
  switch (m) {
    case InputMode::x_and_z: return "x_and_z";
    case InputMode::x_only: return "x_only";
    case InputMode::z_only: return "z_only";
  }
  return "?";
}

InputMode input_mode_from_string(const std::string& s) {
  if (s == "x_and_z") return InputMode::x_and_z;
  if (s == "x_only") return InputMode::x_only;
  if (s == "z_only") return InputMode::z_only;
  throw std::invalid_argument("unknown input mode '" + s + "'");
}

nlohmann::json to_json(const HybridConfig& c) {
  nlohmann::json lr_grid = nlohmann::json::array();
  for (double lr : c.predictor_train.lr_grid) lr_grid.push_back(exact(lr));
  return {
      {"flow", {{"layers", c.flow_arch.layers},
                {"made_hidden", c.flow_arch.made_hidden},
                {"base_hidden", c.flow_arch.base_hidden},
                {"permutation", "reverse"},
                {"epochs", c.flow_train.epochs},
                {"batch_size", c.flow_train.batch_size},
                {"lr", exact(c.flow_train.lr)},
                {"patience", c.flow_train.patience},
                {"validation_fraction", exact(c.flow_train.validation_fraction)}}},
      {"predictor", {{"hidden", c.predictor_arch.hidden},
                     {"dropout", exact(c.predictor_arch.dropout)},
                     {"loss", loss_name(c.predictor_train.loss)},
                     {"beta", exact(c.predictor_train.beta)},
                     {"epochs", c.predictor_train.epochs},
                     {"batch_size", c.predictor_train.batch_size},
                     {"patience", c.predictor_train.patience},
                     {"lr_grid", lr_grid},
                     {"validation_fraction", exact(c.predictor_train.validation_fraction)},
                     {"weight_decay", exact(c.predictor_train.weight_decay)}}},
      {"estimator", estimator_name(c.estimator)},
      {"ensemble_members", c.ensemble_members},
      {"mc_passes", c.mc_passes},
      {"flow_samples", c.flow_samples},
      {"inputs", to_string(c.inputs)},
      {"finetune_flow", c.finetune_flow},
      {"finetune_lr", exact(c.finetune_lr)},
      {"flow_seed", c.flow_seed},
      {"predictor_seed", c.predictor_seed},
  };
}

Tensor feature_concat(const Tensor& x, const Tensor& z) {
  if (x.rows() != z.rows()) {
    throw ShapeError("feature_concat: batch sizes differ " + grad::shape_string(x.shape()) + " vs " +
                     grad::shape_string(z.shape()));
  }
  if (z.rank() == 2 && z.cols() == 0) return x;
  return grad::hconcat(x, z);
}

Tensor select_features(const Tensor& x, const Tensor& z, InputMode mode) {
  switch (mode) {
    case InputMode::x_and_z: return feature_concat(x, z);
    case InputMode::x_only: return x;
    case InputMode::z_only: return z;
  }
  throw std::logic_error("unreachable");
}

flow::FlowTrainResult fit_flow_stage(const data::Dataset& train, const HybridConfig& cfg) {
  flow::FlowArchitecture arch = cfg.flow_arch;
  arch.d = train.y.cols();
  arch.c = train.x.cols();
  flow::FlowTrainConfig tc = cfg.flow_train;
  tc.seed = derive_seed(cfg.flow_seed, "flow-train");
  return flow::train_flow(flow::build_flow(arch, derive_seed(cfg.flow_seed, "flow-init")), train.x, train.y, tc);
}

HybridModel fit_hybrid(const data::Dataset& train, const data::Normalizer& norm, const HybridConfig& cfg,
                       flow::FlowModel trained_flow, grad::TrainHistory flow_history) {
  require_fingerprint(train, norm, "fit_hybrid");
  if (trained_flow.arch.d != train.y.cols() || trained_flow.arch.c != train.x.cols()) {
    throw ShapeError("fit_hybrid: flow dimensions do not match the training data");
  }
  HybridModel m;
  m.flow = std::move(trained_flow);
  m.flow_history = std::move(flow_history);
  m.normalizer = norm;
  m.config = cfg;

  const Stage2Data s = stage2_data(train, m.flow, cfg);
  const Tensor f_tr = select_features(s.x_tr, s.z_tr, cfg.inputs);
  const Tensor f_val = select_features(s.x_val, s.z_val, cfg.inputs);
  const predictor::PredictorArchitecture arch = predictor_arch_for(cfg, f_tr.cols(), train.y.cols());
  const std::size_t count = cfg.estimator == EpistemicEstimator::ensemble ? cfg.ensemble_members : 1;
  if (cfg.estimator == EpistemicEstimator::ensemble && count < 2) {
    throw std::invalid_argument("fit_hybrid: an ensemble needs at least 2 members");
  }
  for (std::size_t k = 0; k < count; ++k) {
    const std::uint64_t member_seed = count == 1 ? cfg.predictor_seed : derive_seed(cfg.predictor_seed, k);
    predictor::TrainConfig tc = cfg.predictor_train;
    tc.seed = derive_seed(member_seed, "predictor-train");
    predictor::TrainResult r = predictor::train_predictor(
        predictor::build_predictor(arch, derive_seed(member_seed, "predictor-init")), f_tr, s.y_tr, f_val, s.y_val, tc);
    m.predictors.push_back(std::move(r.model));
    m.predictor_lr = r.best_lr;
  }
  if (cfg.finetune_flow) {
    if (count != 1) throw std::invalid_argument("fit_hybrid: flow fine-tuning is supported with a single predictor");
    finetune(m.flow, m.predictors.front(), s, cfg, m.predictor_lr);
  }
  return m;
}

HybridModel fit_hybrid(const data::Dataset& train, const data::Normalizer& norm, const HybridConfig& cfg) {
  require_fingerprint(train, norm, "fit_hybrid");
  flow::FlowTrainResult fr = fit_flow_stage(train, cfg);
  return fit_hybrid(train, norm, cfg, std::move(fr.model), std::move(fr.history));
}

UncertaintyReport predict_with_uncertainty(const HybridModel& model, const data::Dataset& x, std::uint64_t seed) {
  require_fingerprint(x, model.normalizer, "predict_with_uncertainty");
  const HybridConfig& cfg = model.config;
  const Tensor z = flow::latent_expected(model.flow, x.x);
  const Tensor f = select_features(x.x, z, cfg.inputs);
  predictor::Prediction p;
  if (model.predictors.size() == 1) {
    p = predictor::mc_dropout_predict(model.predictors.front(), f, cfg.mc_passes, derive_seed(seed, "mc-dropout"));
  } else {
    p = predictor::ensemble_predict(predictor::EnsembleModel{model.predictors}, f);
  }
  const Tensor al = flow::aleatoric_variance(model.flow, x.x, cfg.flow_samples, derive_seed(seed, "flow-samples"));
  UncertaintyReport r;
  r.mean = data::denormalize_targets(model.normalizer, p.mean);
  r.aleatoric = data::denormalize_variances(model.normalizer, al);
  r.epistemic = data::denormalize_variances(model.normalizer, p.epistemic_var);
  r.total = r.aleatoric;
  for (std::size_t i = 0; i < r.total.size(); ++i) r.total[i] += r.epistemic[i];
  return r;
}

ResultRecord input_ablation(const data::Dataset& train, const data::Dataset& test, const data::Normalizer& norm,
                            const flow::FlowModel& shared_flow, InputMode mode, const HybridConfig& cfg, double alpha,
                            int ece_levels) {
  HybridConfig c = cfg;
  c.inputs = mode;
  HybridModel m = fit_hybrid(train, norm, c, shared_flow);
  UncertaintyReport rep = predict_with_uncertainty(m, test, derive_seed(cfg.predictor_seed, "evaluate"));
  const Tensor y = data::denormalize_targets(norm, test.y);
  ResultRecord r = evaluate_uncertainty(y, rep.mean, rep.aleatoric, rep.epistemic, alpha, ece_levels);
  r.dataset = test.name;
  r.method = "hybridflow_" + to_string(mode);
  r.extra["inputs"] = to_string(mode);
  r.extra["feature_dim"] = m.predictors.front().arch.input_dim;
  return r;
}

std::string to_checkpoint(const HybridModel& model) {
  nlohmann::json j;
  j["format"] = "hybridflow-model";
  j["version"] = 1;
  j["flow"] = nlohmann::json::parse(flow::to_checkpoint(model.flow));
  nlohmann::json preds = nlohmann::json::array();
  for (const auto& p : model.predictors) preds.push_back(predictor::to_json(p));
  j["predictors"] = std::move(preds);
  j["normalizer"] = model.normalizer.fingerprint();
  j["config_hash"] = sha256_hex(to_json(model.config).dump());
  return j.dump();
}

std::string flow_hash(const HybridModel& model) { return sha256_hex(flow::to_checkpoint(model.flow)); }

}  // namespace hybridflow::hybrid
