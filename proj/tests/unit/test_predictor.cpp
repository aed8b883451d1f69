#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hybridflow/data.hpp"
#include "hybridflow/grad_check.hpp"
#include "hybridflow/predictor.hpp"

using namespace hybridflow;
using namespace hybridflow::predictor;

namespace {

Tensor col(std::initializer_list<double> v) { return Tensor({v.size(), 1}, std::vector<double>(v)); }

double loss_value(Var (*f)(Var, Var, Var), const Tensor& mu, const Tensor& lv, const Tensor& y) {
  Tape t;
  return f(t.constant(mu), t.constant(lv), t.constant(y)).value().item();
}

double beta_value(const Tensor& mu, const Tensor& lv, const Tensor& y, double beta) {
  Tape t;
  return beta_nll_loss(t.constant(mu), t.constant(lv), t.constant(y), beta).value().item();
}

// Point model computing a constant `value` for every input.
PredictorModel constant_model(double value, double variance = -1.0) {
  PredictorArchitecture a{.input_dim = 1, .hidden = {},
                          .head = variance > 0 ? HeadKind::heteroscedastic : HeadKind::point, .dropout = 0.0};
  PredictorModel m = build_predictor(a, 0);
  for (double& w : m.out.weight.values()) w = 0.0;
  m.out.bias[0] = value;
  if (variance > 0) m.out.bias[1] = std::log(variance);
  return m;
}

}  // namespace

TEST(GaussianNll, HandCases) {
  EXPECT_NEAR(loss_value(gaussian_nll_loss, col({1.5}), col({0.0}), col({1.5})), 0.0, 1e-12);
  EXPECT_NEAR(loss_value(gaussian_nll_loss, col({0.0}), col({0.0}), col({1.0})), 0.5, 1e-9);
  const double expected = 0.5 * (4.0 / 4.0) + 0.5 * std::log(4.0);
  EXPECT_NEAR(loss_value(gaussian_nll_loss, col({1.0}), col({std::log(4.0)}), col({3.0})), expected, 1e-9);
  EXPECT_NEAR(expected, 1.1931, 1e-4);
}

TEST(GaussianNll, MinimizedAtResidualSquared) {
  const double r = 0.7;
  double best_lv = 0, best = 1e300;
  for (double lv = -5; lv <= 3; lv += 1e-4) {
    const double v = loss_value(gaussian_nll_loss, col({0.0}), col({lv}), col({r}));
    if (v < best) {
      best = v;
      best_lv = lv;
    }
  }
  EXPECT_NEAR(std::exp(best_lv), r * r, 1e-3);
}

TEST(BetaNll, ReducesToGaussianAtBetaZero) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor mu({4, 2}), lv({4, 2}), y({4, 2});
    for (std::size_t i = 0; i < 8; ++i) {
      mu[i] = n(rng);
      lv[i] = n(rng);
      y[i] = n(rng) * 2;
    }
    EXPECT_NEAR(beta_value(mu, lv, y, 0.0), loss_value(gaussian_nll_loss, mu, lv, y), 1e-12);
  }
}

TEST(BetaNll, HandCaseAtBetaOne) {
  const double v = beta_value(col({1.0}), col({std::log(4.0)}), col({3.0}), 1.0);
  EXPECT_NEAR(v, 4.0 * (0.5 + 0.5 * std::log(4.0)), 1e-9);
  EXPECT_NEAR(v, 4.7726, 1e-4);
}

TEST(BetaNll, GradientScaledByDetachedWeight) {
  const Tensor lv = col({std::log(4.0)}), y = col({3.0});
  const double mu0 = 1.3, eps = 1e-6;
  // Finite differences on the Gaussian loss versus the analytic Beta-NLL gradient.
  const double fd_nll = (loss_value(gaussian_nll_loss, col({mu0 + eps}), lv, y) -
                         loss_value(gaussian_nll_loss, col({mu0 - eps}), lv, y)) / (2 * eps);
  const double fd_beta = (beta_value(col({mu0 + eps}), lv, y, 0.5) - beta_value(col({mu0 - eps}), lv, y, 0.5)) / (2 * eps);
  Tape t;
  Var mu = t.variable(col({mu0}));
  const double analytic = t.backward(beta_nll_loss(mu, t.constant(lv), t.constant(y), 0.5)).of(mu)[0];
  EXPECT_NEAR(fd_beta / fd_nll, 2.0, 1e-6);
  EXPECT_NEAR(analytic, 2.0 * fd_nll, 1e-6);
}

TEST(Losses, PassGradCheck) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor a({3, 1}), b({3, 1}), y({3, 1});
    for (std::size_t i = 0; i < 3; ++i) {
      a[i] = n(rng);
      b[i] = n(rng);
      y[i] = n(rng);
    }
    EXPECT_LE(grad::grad_check([&](Var mu) { return gaussian_nll_loss(mu, mu.tape->constant(b), mu.tape->constant(y)); }, a), 1e-4);
    EXPECT_LE(grad::grad_check([&](Var lv) { return gaussian_nll_loss(lv.tape->constant(a), lv, lv.tape->constant(y)); }, b), 1e-4);
    EXPECT_LE(grad::grad_check([&](Var mu) { return beta_nll_loss(mu, mu.tape->constant(b), mu.tape->constant(y), 0.5); }, a), 1e-4);
    EXPECT_LE(grad::grad_check([&](Var mu) { return mse_loss(mu, mu.tape->constant(y)); }, a), 1e-4);
  }
}

TEST(TrainPredictor, RealizableLinearFunction) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor x({500, 1}), y({500, 1});
  for (std::size_t i = 0; i < 500; ++i) {
    x[i] = u(rng);
    y[i] = 2.0 * x[i];
  }
  PredictorModel init = build_predictor(PredictorArchitecture{.input_dim = 1, .dropout = 0.0}, 1);
  TrainConfig cfg{.lr_grid = {1e-2, 1e-3}, .seed = 4};
  TrainResult r = train_predictor(init, x, y, cfg);
  EXPECT_LT(r.best_val, 1e-3);
  EXPECT_EQ(r.val_by_lr.size(), 2u);
  TrainResult again = train_predictor(init, x, y, cfg);
  EXPECT_EQ(again.best_lr, r.best_lr);
  EXPECT_EQ(again.best_val, r.best_val);
  EXPECT_EQ(to_json(again.model), to_json(r.model));
}

TEST(TrainPredictor, HeteroscedasticHeadRecoversNoise) {
  data::Dataset ds = data::synth_heteroscedastic(4000, 5);
  PredictorModel init = build_predictor(
      PredictorArchitecture{.input_dim = 1, .hidden = {50}, .head = HeadKind::heteroscedastic, .dropout = 0.0}, 2);
  TrainResult r = train_predictor(init, ds.x, ds.y, TrainConfig{.loss = LossKind::gaussian_nll, .lr_grid = {1e-3}, .seed = 1});
  Tensor grid({17, 1});
  for (std::size_t i = 0; i < 17; ++i) grid[i] = -0.8 + 0.1 * static_cast<double>(i);
  Prediction p = predict(r.model, grid);
  for (std::size_t i = 0; i < 17; ++i) {
    const double s = data::SynthSpec{}.noise_sd(grid[i]);
    EXPECT_LE(std::abs(p.aleatoric_var[i] - s * s) / (s * s), 0.30) << "x=" << grid[i];
  }
}

TEST(TrainPredictor, RejectsBadConfig) {
  PredictorModel point = build_predictor(PredictorArchitecture{}, 0);
  Tensor x({20, 1}), y({20, 1});
  EXPECT_THROW(train_predictor(point, x, y, TrainConfig{.loss = LossKind::gaussian_nll}), std::invalid_argument);
  EXPECT_THROW(train_predictor(point, x, y, TrainConfig{.lr_grid = {}}), std::invalid_argument);
}

TEST(McDropout, ZeroRateHasNoEpistemicVariance) {
  PredictorModel m = build_predictor(PredictorArchitecture{.input_dim = 2, .dropout = 0.0}, 1);
  Prediction p = mc_dropout_predict(m, Tensor::matrix(2, 2, {0.1, 0.2, -1, 3}), 10, 4);
  EXPECT_EQ(p.epistemic_var, Tensor({2, 1}));
}

TEST(McDropout, IdenticalMasksGiveZeroVariance) {
  PredictorModel m = build_predictor(PredictorArchitecture{.input_dim = 2, .dropout = 0.2}, 1);
  Prediction p = mc_dropout_predict(m, Tensor::matrix(1, 2, {0.5, -0.5}), 2, [] { return 0.9; });
  EXPECT_EQ(p.epistemic_var, Tensor({1, 1}));
  EXPECT_THROW(mc_dropout_predict(m, Tensor({1, 2}), 1, 0), std::invalid_argument);
}

TEST(McDropout, ConvergesWithPasses) {
  PredictorModel m = build_predictor(PredictorArchitecture{.input_dim = 3, .dropout = 0.2}, 7);
  Tensor x = Tensor::matrix(2, 3, {0.3, -1.2, 0.8, 1.0, 0.0, -0.4});
  Prediction small = mc_dropout_predict(m, x, 30, 1);
  Prediction large = mc_dropout_predict(m, x, 3000, 2);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_GT(large.epistemic_var[i], 0.0);
    EXPECT_LE(std::abs(small.mean[i] - large.mean[i]), 3.0 * std::sqrt(large.epistemic_var[i] / 30.0));
  }
}

TEST(McDropout, VarianceInvariantToPassOrder) {
  PredictorModel m = build_predictor(PredictorArchitecture{.input_dim = 2, .hidden = {8}, .dropout = 0.3}, 3);
  Tensor x = Tensor::matrix(1, 2, {0.4, 0.9});
  const std::size_t passes = 6, per_pass = 8;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> draws(passes * per_pass);
  for (double& d : draws) d = u(rng);
  auto run = [&](const std::vector<std::size_t>& order) {
    std::size_t k = 0;
    return mc_dropout_predict(m, x, passes, [&] {
      const std::size_t pass = order[k / per_pass], unit = k % per_pass;
      ++k;
      return draws[pass * per_pass + unit];
    });
  };
  Prediction a = run({0, 1, 2, 3, 4, 5}), b = run({5, 3, 1, 0, 4, 2});
  EXPECT_NEAR(a.epistemic_var[0], b.epistemic_var[0], 1e-12);
  EXPECT_NEAR(a.mean[0], b.mean[0], 1e-12);
}

TEST(Ensemble, HandAggregation) {
  Tensor x({3, 1}, 0.5);
  EnsembleModel same{{constant_model(2.0), constant_model(2.0)}};
  EXPECT_EQ(ensemble_predict(same, x).epistemic_var, Tensor({3, 1}));
  EnsembleModel two{{constant_model(1.0, 1.0), constant_model(3.0, 3.0)}};
  Prediction p = ensemble_predict(two, x);
  EXPECT_DOUBLE_EQ(p.mean[0], 2.0);
  EXPECT_DOUBLE_EQ(p.epistemic_var[0], 1.0);
  EXPECT_NEAR(p.aleatoric_var[0], 2.0, 1e-12);
  EnsembleModel one{{constant_model(1.0)}};
  EXPECT_THROW(ensemble_predict(one, x), std::invalid_argument);
  PredictorModel wide = build_predictor(PredictorArchitecture{.input_dim = 1, .output_dim = 2}, 0);
  EXPECT_THROW(ensemble_predict(EnsembleModel{{constant_model(1.0), wide}}, x), std::invalid_argument);
}

TEST(Ensemble, TrainsIndependentMembers) {
  data::Dataset ds = data::synth_heteroscedastic(200, 1);
  PredictorArchitecture a{.input_dim = 1, .hidden = {8}, .head = HeadKind::heteroscedastic, .dropout = 0.0};
  EnsembleModel e = train_ensemble(a, ds.x, ds.y, TrainConfig{.loss = LossKind::gaussian_nll, .epochs = 20, .lr_grid = {1e-2}}, 3);
  ASSERT_EQ(e.members.size(), 3u);
  EXPECT_NE(to_json(e.members[0]), to_json(e.members[1]));
  Prediction p = ensemble_predict(e, ds.x);
  for (double v : p.epistemic_var.values()) EXPECT_GE(v, 0.0);
}

TEST(PredictorCheckpoint, RoundTrip) {
  PredictorModel m = build_predictor(PredictorArchitecture{.input_dim = 4, .head = HeadKind::heteroscedastic}, 9);
  PredictorModel back = predictor_from_json(nlohmann::json::parse(to_json(m).dump()));
  EXPECT_EQ(to_json(back), to_json(m));
  EXPECT_EQ(back.arch.dropout, 0.2);
}
