#include "hybridflow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "hybridflow/errors.hpp"
#include "hybridflow/random.hpp"
#include "hybridflow/serialize.hpp"

namespace hybridflow::flow {

namespace {

constexpr double kLogStdClamp = 7.0;
const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

void check_rows(const char* op, const Tensor& a, const Tensor& ctx, const FlowArchitecture& arch) {
  if (a.rank() != 2 || a.cols() != arch.d) {
    throw ShapeError(std::string(op) + ": target has shape " + grad::shape_string(a.shape()) + ", expected [n," +
                     std::to_string(arch.d) + "]");
  }
  if (ctx.rank() != 2 || ctx.cols() != arch.c || ctx.rows() != a.rows()) {
    throw ShapeError(std::string(op) + ": context has shape " + grad::shape_string(ctx.shape()) + ", expected [" +
                     std::to_string(a.rows()) + "," + std::to_string(arch.c) + "]");
  }
}

void check_ctx(const char* op, const Tensor& ctx, const FlowArchitecture& arch) {
  if (ctx.rank() != 2 || ctx.cols() != arch.c) {
    throw ShapeError(std::string(op) + ": context has shape " + grad::shape_string(ctx.shape()) + ", expected [n," +
                     std::to_string(arch.c) + "]");
  }
}

Tensor unpermute(const Tensor& u, const std::vector<std::size_t>& perm) {
  Tensor out(u.shape());
  for (std::size_t r = 0; r < u.rows(); ++r)
    for (std::size_t j = 0; j < perm.size(); ++j) out(r, perm[j]) = u(r, j);
  return out;
}

Tensor repeat_rows(const Tensor& t, std::size_t n) {
  Tensor out({t.rows() * n, t.cols()});
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t j = 0; j < t.cols(); ++j) out(r * n + s, j) = t(r, j);
  return out;
}

}  // namespace

std::vector<Tensor*> FlowModel::parameters() {
  std::vector<Tensor*> out;
  for (MadeNetwork& l : layers)
    for (Tensor* p : l.parameters()) out.push_back(p);
  for (grad::Linear& h : base.hidden) {
    out.push_back(&h.weight);
    out.push_back(&h.bias);
  }
  out.push_back(&base.out.weight);
  out.push_back(&base.out.bias);
  return out;
}

FlowModel build_flow(const FlowArchitecture& arch, std::uint64_t seed) {
  if (arch.layers == 0) throw std::invalid_argument("build_flow: need at least one flow layer");
  if (arch.d == 0) throw std::invalid_argument("build_flow: target dimension must be at least 1");
  FlowModel f;
  f.arch = arch;
  for (std::size_t k = 0; k < arch.layers; ++k) {
    f.layers.push_back(made::build_made(arch.d, arch.c, arch.made_hidden, derive_seed(seed, k)));
  }
  for (std::size_t k = 0; k + 1 < arch.layers; ++k) {
    std::vector<std::size_t> rev(arch.d);
    for (std::size_t j = 0; j < arch.d; ++j) rev[j] = arch.d - 1 - j;
    f.permutations.push_back(rev);
  }
  Rng rng(derive_seed(seed, "base"));
  std::size_t width = arch.c;
  for (std::size_t h : arch.base_hidden) {
    f.base.hidden.push_back(grad::Linear::uniform_fan_in(width, h, rng));
    width = h;
  }
  f.base.out = grad::Linear::zeros(width, 2 * arch.d);
  return f;
}

LayerInverse layer_inverse(const MadeNetwork& layer, const Tensor& y, const Tensor& ctx) {
  made::MadeValues mv = made::made_forward(layer, y, ctx);
  LayerInverse out{Tensor(y.shape()), Tensor({y.rows(), 1})};
  for (std::size_t r = 0; r < y.rows(); ++r) {
    double ld = 0.0;
    for (std::size_t i = 0; i < layer.d; ++i) {
      out.z(r, i) = (y(r, i) - mv.shift(r, i)) * std::exp(-mv.log_scale(r, i));
      ld -= mv.log_scale(r, i);
    }
    out.logdet[r] = ld;
  }
  if (!out.z.all_finite()) throw NumericError("layer_inverse: non-finite latent");
  return out;
}

Tensor layer_forward(const MadeNetwork& layer, const Tensor& z, const Tensor& ctx) {
  Tensor y(z.shape());
  for (std::size_t i = 0; i < layer.d; ++i) {
    made::MadeValues mv = made::made_forward(layer, y, ctx);
    for (std::size_t r = 0; r < z.rows(); ++r) y(r, i) = z(r, i) * std::exp(mv.log_scale(r, i)) + mv.shift(r, i);
  }
  if (!y.all_finite()) throw NumericError("layer_forward: non-finite output");
  return y;
}

BaseParams base_forward(const FlowModel& flow, Tape& tape, Var ctx) {
  Var h = ctx;
  for (const grad::Linear& l : flow.base.hidden) h = grad::tanh(l.apply(tape, h));
  Var out = flow.base.out.apply(tape, h);
  const std::size_t d = flow.arch.d;
  return BaseParams{grad::slice_cols(out, 0, d),
                    grad::clamp(grad::slice_cols(out, d, 2 * d), -kLogStdClamp, kLogStdClamp)};
}

namespace {

struct InverseTrace {
  Var z;
  Var logdet;  // [batch, 1]
};

InverseTrace inverse_pass(const FlowModel& flow, Tape& tape, Var y, Var ctx) {
  Var u = y;
  Var logdet = tape.constant(Tensor({y.value().rows(), 1}));
  for (std::size_t k = 0; k < flow.layers.size(); ++k) {
    made::MadeOutput m = made::made_forward(flow.layers[k], tape, u, ctx);
    u = (u - m.shift) * grad::exp(grad::neg(m.log_scale));
    logdet = logdet - grad::row_sum(m.log_scale);
    if (!u.value().all_finite()) throw NumericError("log_prob: non-finite latent after flow layer " + std::to_string(k));
    if (k + 1 < flow.layers.size()) u = grad::permute_cols(u, flow.permutations[k]);
  }
  return InverseTrace{u, logdet};
}

}  // namespace

Var latent_from_target(const FlowModel& flow, Tape& tape, Var y, Var ctx) {
  check_rows("latent_from_target", y.value(), ctx.value(), flow.arch);
  return inverse_pass(flow, tape, y, ctx).z;
}

Var log_prob(const FlowModel& flow, Tape& tape, Var y, Var ctx) {
  check_rows("log_prob", y.value(), ctx.value(), flow.arch);
  InverseTrace inv = inverse_pass(flow, tape, y, ctx);
  BaseParams b = base_forward(flow, tape, ctx);
  Var eps = (inv.z - b.mean) * grad::exp(grad::neg(b.log_std));
  Var base = grad::row_sum(grad::neg(grad::scale(grad::square(eps), 0.5) + b.log_std));
  base = grad::add_scalar(base, -static_cast<double>(flow.arch.d) * kHalfLog2Pi);
  return base + inv.logdet;
}

std::vector<double> log_prob(const FlowModel& flow, const Tensor& y, const Tensor& ctx) {
  Tape tape;
  Var lp = log_prob(flow, tape, tape.constant(y), tape.constant(ctx));
  const auto v = lp.value().values();
  return {v.begin(), v.end()};
}

Tensor latent_from_target(const FlowModel& flow, const Tensor& y, const Tensor& ctx) {
  check_rows("latent_from_target", y, ctx, flow.arch);
  Tensor u = y;
  for (std::size_t k = 0; k < flow.layers.size(); ++k) {
    u = layer_inverse(flow.layers[k], u, ctx).z;
    if (k + 1 < flow.layers.size()) {
      Tensor p(u.shape());
      const auto& perm = flow.permutations[k];
      for (std::size_t r = 0; r < u.rows(); ++r)
        for (std::size_t j = 0; j < perm.size(); ++j) p(r, j) = u(r, perm[j]);
      u = std::move(p);
    }
  }
  return u;
}

Tensor latent_expected(const FlowModel& flow, const Tensor& ctx) {
  check_ctx("latent_expected", ctx, flow.arch);
  Tape tape;
  return base_forward(flow, tape, tape.constant(ctx)).mean.value();
}

Tensor sample(const FlowModel& flow, const Tensor& ctx, std::size_t n, const NoiseSource& noise) {
  if (n == 0) throw std::invalid_argument("sample: n must be at least 1");
  check_ctx("sample", ctx, flow.arch);
  const std::size_t d = flow.arch.d;
  Tensor mean, log_std;
  {
    Tape tape;
    BaseParams b = base_forward(flow, tape, tape.constant(ctx));
    mean = b.mean.value();
    log_std = b.log_std.value();
  }
  const Tensor rep = repeat_rows(ctx, n);
  Tensor v({ctx.rows() * n, d});
  for (std::size_t r = 0; r < ctx.rows(); ++r)
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t j = 0; j < d; ++j) v(r * n + s, j) = mean(r, j) + std::exp(log_std(r, j)) * noise();
  return target_from_latent(flow, v, rep);
}

Tensor target_from_latent(const FlowModel& flow, const Tensor& z, const Tensor& ctx) {
  check_ctx("target_from_latent", ctx, flow.arch);
  if (z.rank() != 2 || z.cols() != flow.arch.d || z.rows() != ctx.rows()) {
    throw ShapeError("target_from_latent: latent shape " + grad::shape_string(z.shape()) + " does not match the flow");
  }
  Tensor v = z;
  for (std::size_t k = flow.layers.size(); k-- > 0;) {
    v = layer_forward(flow.layers[k], v, ctx);
    if (k > 0) v = unpermute(v, flow.permutations[k - 1]);
  }
  return v;
}

Tensor sample(const FlowModel& flow, const Tensor& ctx, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  return sample(flow, ctx, n, [&] { return normal(rng); });
}

Tensor aleatoric_variance(const FlowModel& flow, const Tensor& ctx, std::size_t n_samples, const NoiseSource& noise) {
  if (n_samples < 2) throw std::invalid_argument("aleatoric_variance: need at least 2 samples");
  const Tensor s = sample(flow, ctx, n_samples, noise);
  const std::size_t d = flow.arch.d;
  Tensor var({ctx.rows(), d});
  for (std::size_t r = 0; r < ctx.rows(); ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      double mean = 0.0;
      for (std::size_t k = 0; k < n_samples; ++k) mean += s(r * n_samples + k, j);
      mean /= static_cast<double>(n_samples);
      double ss = 0.0;
      for (std::size_t k = 0; k < n_samples; ++k) {
        const double e = s(r * n_samples + k, j) - mean;
        ss += e * e;
      }
      var(r, j) = ss / static_cast<double>(n_samples - 1);
    }
  }
  return var;
}

Tensor aleatoric_variance(const FlowModel& flow, const Tensor& ctx, std::size_t n_samples, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  return aleatoric_variance(flow, ctx, n_samples, [&] { return normal(rng); });
}

double mean_nll(const FlowModel& flow, const Tensor& y, const Tensor& ctx) {
  const std::vector<double> lp = log_prob(flow, y, ctx);
  double s = 0.0;
  for (double v : lp) s -= v;
  return s / static_cast<double>(lp.size());
}

FlowTrainResult train_flow(FlowModel flow, const Tensor& x, const Tensor& y, const Tensor& x_val,
                           const Tensor& y_val, const FlowTrainConfig& cfg) {
  check_rows("train_flow", y, x, flow.arch);
  check_rows("train_flow", y_val, x_val, flow.arch);
  std::vector<grad::ParamGroup> groups{{flow.parameters(), grad::AdamOptions{.lr = cfg.lr}}};
  grad::TrainerOptions opts{cfg.epochs, cfg.batch_size, cfg.patience, derive_seed(cfg.seed, "flow-batches")};
  auto batch_loss = [&](Tape& tape, std::span<const std::size_t> rows) {
    Var yb = tape.constant(y.gather_rows(rows));
    Var xb = tape.constant(x.gather_rows(rows));
    return grad::neg(grad::reduce_mean(log_prob(flow, tape, yb, xb)));
  };
  auto val_loss = [&] { return mean_nll(flow, y_val, x_val); };
  grad::TrainHistory h = grad::train_minibatch(groups, y.rows(), batch_loss, val_loss, opts);
  return FlowTrainResult{std::move(flow), std::move(h)};
}

FlowTrainResult train_flow(FlowModel flow, const Tensor& x, const Tensor& y, const FlowTrainConfig& cfg) {
  if (!(cfg.validation_fraction > 0.0 && cfg.validation_fraction <= 0.5)) {
    throw std::invalid_argument("train_flow: validation fraction must lie in (0, 0.5]");
  }
  const std::size_t n = y.rows();
  const std::size_t n_val = static_cast<std::size_t>(std::llround(cfg.validation_fraction * static_cast<double>(n)));
  if (n_val == 0 || n_val >= n) throw std::invalid_argument("train_flow: too few rows for a validation split");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(cfg.seed, "flow-validation"));
  std::shuffle(idx.begin(), idx.end(), rng);
  std::span<const std::size_t> val(idx.data(), n_val), tr(idx.data() + n_val, n - n_val);
  return train_flow(std::move(flow), x.gather_rows(tr), y.gather_rows(tr), x.gather_rows(val), y.gather_rows(val),
                    cfg);
}

std::string to_checkpoint(const FlowModel& flow) {
  nlohmann::json j;
  j["format"] = "hybridflow-flow";
  j["version"] = 1;
  const FlowArchitecture& a = flow.arch;
  j["arch"] = {{"d", a.d}, {"c", a.c}, {"layers", a.layers}, {"made_hidden", a.made_hidden},
               {"base_hidden", a.base_hidden}};
  j["permutations"] = flow.permutations;
  nlohmann::json params = nlohmann::json::array();
  for (Tensor* p : const_cast<FlowModel&>(flow).parameters()) params.push_back(tensor_to_json(*p));
  j["parameters"] = std::move(params);
  return j.dump();
}

FlowModel from_checkpoint(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  if (j.value("format", "") != "hybridflow-flow" || j.value("version", 0) != 1) {
    throw std::runtime_error("flow checkpoint: unrecognized format or version");
  }
  FlowArchitecture a;
  const auto& ja = j.at("arch");
  a.d = ja.at("d");
  a.c = ja.at("c");
  a.layers = ja.at("layers");
  a.made_hidden = ja.at("made_hidden").get<std::vector<std::size_t>>();
  a.base_hidden = ja.at("base_hidden").get<std::vector<std::size_t>>();
  FlowModel f = build_flow(a, 0);
  f.permutations = j.at("permutations").get<std::vector<std::vector<std::size_t>>>();
  if (f.permutations.size() + 1 != a.layers) throw std::runtime_error("flow checkpoint: permutation count mismatch");
  std::vector<Tensor*> params = f.parameters();
  const auto& jp = j.at("parameters");
  if (jp.size() != params.size()) throw std::runtime_error("flow checkpoint: parameter count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor t = tensor_from_json(jp[k]);
    if (t.shape() != params[k]->shape()) throw std::runtime_error("flow checkpoint: parameter shape mismatch");
    *params[k] = std::move(t);
  }
  return f;
}

void save_checkpoint(const FlowModel& flow, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_checkpoint(flow);
}

FlowModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_checkpoint(ss.str());
}

}  // namespace hybridflow::flow
