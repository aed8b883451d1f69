#include "hybridflow/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "hybridflow/errors.hpp"
#include "hybridflow/random.hpp"
#include "hybridflow/serialize.hpp"

namespace hybridflow::predictor {

namespace {

bool is_hetero(const PredictorModel& m) { return m.arch.head == HeadKind::heteroscedastic; }

Var nll_elements(Var mu, Var logvar, Var y) {
  Var r = y - mu;
  return grad::scale(grad::square(r) * grad::exp(grad::neg(logvar)) + logvar, 0.5);
}

void check_loss_head(const PredictorModel& m, const TrainConfig& cfg) {
  if (cfg.loss != LossKind::mse && !is_hetero(m)) {
    throw std::invalid_argument("train_predictor: NLL losses need a heteroscedastic head");
  }
  if (cfg.loss == LossKind::beta_nll && !(cfg.beta >= 0.0 && cfg.beta <= 1.0)) {
    throw std::invalid_argument("train_predictor: beta must lie in [0, 1]");
  }
  if (cfg.lr_grid.empty()) throw std::invalid_argument("train_predictor: empty learning-rate grid");
}

Var loss_on(const PredictorModel& m, Tape& tape, Var x, Var y, const TrainConfig& cfg, const UniformSource* drop) {
  ForwardOutput o = predictor_forward(m, tape, x, drop);
  switch (cfg.loss) {
    case LossKind::mse:
      return mse_loss(o.mean, y);
    case LossKind::gaussian_nll:
      return gaussian_nll_loss(o.mean, o.logvar, y);
    case LossKind::beta_nll:
      return beta_nll_loss(o.mean, o.logvar, y, cfg.beta);
  }
  throw std::logic_error("unreachable");
}

// Mean and sum of squared deviations of element i across tensors, computed
// on values shifted by the first one so identical inputs give exactly zero.
std::pair<double, double> shifted_moments(const std::vector<Tensor>& ts, std::size_t i) {
  const double ref = ts.front()[i];
  double s = 0.0, s2 = 0.0;
  for (const Tensor& t : ts) {
    const double d = t[i] - ref;
    s += d;
    s2 += d * d;
  }
  const double n = static_cast<double>(ts.size());
  return {ref + s / n, std::max(0.0, s2 - s * s / n)};
}

}  // namespace

std::vector<Tensor*> PredictorModel::parameters() {
  std::vector<Tensor*> out;
  for (grad::Linear& l : hidden) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  out.push_back(&this->out.weight);
  out.push_back(&this->out.bias);
  return out;
}

PredictorModel build_predictor(const PredictorArchitecture& arch, std::uint64_t seed) {
  if (!(arch.dropout >= 0.0 && arch.dropout < 1.0)) throw std::invalid_argument("build_predictor: dropout in [0, 1)");
  if (arch.output_dim == 0) throw std::invalid_argument("build_predictor: output_dim must be positive");
  PredictorModel m;
  m.arch = arch;
  Rng rng(seed);
  std::size_t width = arch.input_dim;
  for (std::size_t h : arch.hidden) {
    m.hidden.push_back(grad::Linear::uniform_fan_in(width, h, rng));
    width = h;
  }
  const std::size_t outs = arch.head == HeadKind::heteroscedastic ? 2 * arch.output_dim : arch.output_dim;
  m.out = grad::Linear::uniform_fan_in(width, outs, rng);
  return m;
}

ForwardOutput predictor_forward(const PredictorModel& model, Tape& tape, Var x, const UniformSource* dropout) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || xv.cols() != model.arch.input_dim) {
    throw ShapeError("predictor_forward: input has shape " + grad::shape_string(xv.shape()) + ", expected [n," +
                     std::to_string(model.arch.input_dim) + "]");
  }
  const double rate = model.arch.dropout;
  Var h = x;
  for (const grad::Linear& l : model.hidden) {
    h = grad::relu(l.apply(tape, h));
    if (dropout && rate > 0.0) {
      Tensor mask(h.value().shape());
      const double keep = 1.0 / (1.0 - rate);
      for (double& v : mask.values()) v = (*dropout)() >= rate ? keep : 0.0;
      h = h * tape.constant(std::move(mask));
    }
  }
  Var out = model.out.apply(tape, h);
  const std::size_t k = model.arch.output_dim;
  if (is_hetero(model)) return ForwardOutput{grad::slice_cols(out, 0, k), grad::slice_cols(out, k, 2 * k)};
  return ForwardOutput{out, out};
}

Var mse_loss(Var pred, Var y) { return grad::reduce_mean(grad::square(pred - y)); }

Var gaussian_nll_loss(Var mu, Var logvar, Var y) { return grad::reduce_mean(nll_elements(mu, logvar, y)); }

Var beta_nll_loss(Var mu, Var logvar, Var y, double beta) {
  Tensor w = logvar.value();
  for (double& v : w.values()) v = std::exp(beta * v);
  return grad::reduce_mean(nll_elements(mu, logvar, y) * mu.tape->constant(std::move(w)));
}

double evaluate_loss(const PredictorModel& model, const Tensor& x, const Tensor& y, const TrainConfig& cfg) {
  Tape tape;
  return loss_on(model, tape, tape.constant(x), tape.constant(y), cfg, nullptr).value().item();
}

TrainResult train_predictor(const PredictorModel& init, const Tensor& x, const Tensor& y, const Tensor& x_val,
                            const Tensor& y_val, const TrainConfig& cfg) {
  check_loss_head(init, cfg);
  if (y.cols() != init.arch.output_dim || x.rows() != y.rows()) {
    throw ShapeError("train_predictor: targets have shape " + grad::shape_string(y.shape()) + " for inputs " +
                     grad::shape_string(x.shape()));
  }
  TrainResult best;
  best.best_val = std::numeric_limits<double>::infinity();
  bool any = false;
  std::string last_error;
  for (std::size_t gi = 0; gi < cfg.lr_grid.size(); ++gi) {
    const double lr = cfg.lr_grid[gi];
    PredictorModel m = init;
    std::vector<grad::ParamGroup> groups{{m.parameters(), grad::AdamOptions{.lr = lr, .weight_decay = cfg.weight_decay}}};
    Rng drop_rng(derive_seed(cfg.seed, "dropout-" + std::to_string(gi)));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    UniformSource uniform = [&] { return u(drop_rng); };
    auto batch_loss = [&](Tape& tape, std::span<const std::size_t> rows) {
      return loss_on(m, tape, tape.constant(x.gather_rows(rows)), tape.constant(y.gather_rows(rows)), cfg, &uniform);
    };
    auto val_loss = [&] { return evaluate_loss(m, x_val, y_val, cfg); };
    grad::TrainerOptions opts{cfg.epochs, cfg.batch_size, cfg.patience,
                              derive_seed(cfg.seed, "batches-" + std::to_string(gi))};
    try {
      grad::TrainHistory h = grad::train_minibatch(groups, x.rows(), batch_loss, val_loss, opts);
      best.val_by_lr.push_back(h.best_val);
      if (!any || h.best_val < best.best_val) {
        best.model = m;
        best.best_lr = lr;
        best.best_val = h.best_val;
        best.history = std::move(h);
        any = true;
      }
    } catch (const TrainingDiverged& e) {
      best.val_by_lr.push_back(std::numeric_limits<double>::quiet_NaN());
      last_error = e.what();
    }
  }
  if (!any) throw TrainingDiverged("train_predictor: every learning rate diverged; last: " + last_error, -1, -1);
  return best;
}

TrainResult train_predictor(const PredictorModel& init, const Tensor& x, const Tensor& y, const TrainConfig& cfg) {
  if (!(cfg.validation_fraction > 0.0 && cfg.validation_fraction < 1.0)) {
    throw std::invalid_argument("train_predictor: validation fraction must lie in (0, 1)");
  }
  const std::size_t n = x.rows();
  const auto n_val = static_cast<std::size_t>(std::llround(cfg.validation_fraction * static_cast<double>(n)));
  if (n_val == 0 || n_val >= n) throw std::invalid_argument("train_predictor: too few rows for a validation split");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(cfg.seed, "validation"));
  std::shuffle(idx.begin(), idx.end(), rng);
  std::span<const std::size_t> val(idx.data(), n_val), tr(idx.data() + n_val, n - n_val);
  return train_predictor(init, x.gather_rows(tr), y.gather_rows(tr), x.gather_rows(val), y.gather_rows(val), cfg);
}

Prediction predict(const PredictorModel& model, const Tensor& x) {
  Tape tape;
  ForwardOutput o = predictor_forward(model, tape, tape.constant(x), nullptr);
  Prediction p{o.mean.value(), Tensor(o.mean.value().shape()), Tensor(o.mean.value().shape())};
  if (is_hetero(model)) {
    p.aleatoric_var = o.logvar.value();
    for (double& v : p.aleatoric_var.values()) v = std::exp(v);
  }
  return p;
}

Prediction mc_dropout_predict(const PredictorModel& model, const Tensor& x, std::size_t passes,
                              const UniformSource& uniform) {
  if (passes < 2) throw std::invalid_argument("mc_dropout_predict: need at least 2 passes");
  const std::size_t n = x.rows(), k = model.arch.output_dim;
  Tensor sum({n, k}), sumsq({n, k}), alea({n, k});
  std::vector<Tensor> means;
  means.reserve(passes);
  for (std::size_t p = 0; p < passes; ++p) {
    Tape tape;
    ForwardOutput o = predictor_forward(model, tape, tape.constant(x), &uniform);
    means.push_back(o.mean.value());
    if (is_hetero(model)) {
      const Tensor& lv = o.logvar.value();
      for (std::size_t i = 0; i < lv.size(); ++i) alea[i] += std::exp(lv[i]);
    }
  }
  const double P = static_cast<double>(passes);
  Prediction out{Tensor({n, k}), Tensor({n, k}), Tensor({n, k})};
  for (std::size_t i = 0; i < n * k; ++i) {
    const auto [m, ss] = shifted_moments(means, i);
    out.mean[i] = m;
    out.epistemic_var[i] = ss / (P - 1.0);
    out.aleatoric_var[i] = alea[i] / P;
  }
  return out;
}

Prediction mc_dropout_predict(const PredictorModel& model, const Tensor& x, std::size_t passes, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return mc_dropout_predict(model, x, passes, [&] { return u(rng); });
}

EnsembleModel train_ensemble(const PredictorArchitecture& arch, const Tensor& x, const Tensor& y,
                             const TrainConfig& cfg, std::size_t members) {
  if (members < 2) throw std::invalid_argument("train_ensemble: need at least 2 members");
  EnsembleModel ens;
  for (std::size_t m = 0; m < members; ++m) {
    TrainConfig c = cfg;
    c.seed = derive_seed(cfg.seed, m);
    ens.members.push_back(train_predictor(build_predictor(arch, derive_seed(c.seed, "init")), x, y, c).model);
  }
  return ens;
}

Prediction ensemble_predict(const EnsembleModel& ens, const Tensor& x) {
  if (ens.members.size() < 2) throw std::invalid_argument("ensemble_predict: need at least 2 members");
  const std::size_t k = ens.members.front().arch.output_dim;
  for (const PredictorModel& m : ens.members) {
    if (m.arch.output_dim != k) throw ShapeError("ensemble_predict: members disagree on output dimension");
  }
  std::vector<Prediction> preds;
  for (const PredictorModel& m : ens.members) preds.push_back(predict(m, x));
  const double M = static_cast<double>(preds.size());
  Prediction out{Tensor(preds[0].mean.shape()), Tensor(preds[0].mean.shape()), Tensor(preds[0].mean.shape())};
  std::vector<Tensor> means;
  for (const Prediction& p : preds) means.push_back(p.mean);
  for (std::size_t i = 0; i < out.mean.size(); ++i) {
    const auto [m, ss] = shifted_moments(means, i);
    double a = 0.0;
    for (const Prediction& p : preds) a += p.aleatoric_var[i];
    out.mean[i] = m;
    out.epistemic_var[i] = ss / M;
    out.aleatoric_var[i] = a / M;
  }
  return out;
}

nlohmann::json to_json(const PredictorModel& model) {
  nlohmann::json j;
  const PredictorArchitecture& a = model.arch;
  j["arch"] = {{"input_dim", a.input_dim},
               {"output_dim", a.output_dim},
               {"hidden", a.hidden},
               {"head", a.head == HeadKind::heteroscedastic ? "heteroscedastic" : "point"},
               {"dropout", tensor_to_json(Tensor::scalar(a.dropout))}};
  nlohmann::json params = nlohmann::json::array();
  for (Tensor* p : const_cast<PredictorModel&>(model).parameters()) params.push_back(tensor_to_json(*p));
  j["parameters"] = std::move(params);
  return j;
}

PredictorModel predictor_from_json(const nlohmann::json& j) {
  PredictorArchitecture a;
  const auto& ja = j.at("arch");
  a.input_dim = ja.at("input_dim");
  a.output_dim = ja.at("output_dim");
  a.hidden = ja.at("hidden").get<std::vector<std::size_t>>();
  a.head = ja.at("head") == "heteroscedastic" ? HeadKind::heteroscedastic : HeadKind::point;
  a.dropout = tensor_from_json(ja.at("dropout")).item();
  PredictorModel m = build_predictor(a, 0);
  std::vector<Tensor*> params = m.parameters();
  const auto& jp = j.at("parameters");
  if (jp.size() != params.size()) throw std::runtime_error("predictor checkpoint: parameter count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor t = tensor_from_json(jp[k]);
    if (t.shape() != params[k]->shape()) throw std::runtime_error("predictor checkpoint: parameter shape mismatch");
    *params[k] = std::move(t);
  }
  return m;
}

}  // namespace hybridflow::predictor
