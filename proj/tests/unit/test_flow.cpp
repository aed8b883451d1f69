#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <random>

#include "hybridflow/errors.hpp"
#include "hybridflow/flow.hpp"

using namespace hybridflow;
using namespace hybridflow::flow;

namespace {

const double kLogPhi0 = -0.5 * std::log(2.0 * std::numbers::pi);

double log_phi(double v) { return kLogPhi0 - 0.5 * v * v; }

Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double sd = 1.0) {
  Tensor t({r, c});
  std::normal_distribution<double> n(0.0, sd);
  for (double& v : t.values()) v = n(rng);
  return t;
}

void randomize_layers(FlowModel& f, std::uint64_t seed, double scale = 0.3) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (MadeNetwork& l : f.layers)
    for (Tensor* p : l.parameters())
      for (double& v : p->values()) v = u(rng);
}

void randomize_base(FlowModel& f, std::uint64_t seed, double scale = 0.3) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (double& v : f.base.out.weight.values()) v = u(rng);
  for (double& v : f.base.out.bias.values()) v = u(rng);
}

// Single-layer d=1 flow computing y = 2 z + 1 with a standard normal base.
FlowModel affine_flow() {
  FlowModel f = build_flow(FlowArchitecture{.d = 1, .c = 1, .layers = 1}, 0);
  f.layers[0].layers.back().bias[0] = 1.0;
  f.layers[0].layers.back().bias[1] = std::log(2.0);
  return f;
}

double sample_mean(const Tensor& s, std::size_t col) {
  double m = 0.0;
  for (std::size_t r = 0; r < s.rows(); ++r) m += s(r, col);
  return m / static_cast<double>(s.rows());
}

double sample_var(const Tensor& s, std::size_t col) {
  const double m = sample_mean(s, col);
  double v = 0.0;
  for (std::size_t r = 0; r < s.rows(); ++r) v += (s(r, col) - m) * (s(r, col) - m);
  return v / static_cast<double>(s.rows() - 1);
}

}  // namespace

TEST(LayerInverse, IdentityAtInit) {
  FlowModel f = build_flow(FlowArchitecture{.d = 3, .c = 2}, 1);
  std::mt19937_64 rng(1);
  Tensor y = random_matrix(5, 3, rng), ctx = random_matrix(5, 2, rng);
  LayerInverse inv = layer_inverse(f.layers[0], y, ctx);
  EXPECT_EQ(inv.z, y);
  EXPECT_EQ(inv.logdet, Tensor({5, 1}));
  EXPECT_EQ(layer_forward(f.layers[0], y, ctx), y);
}

TEST(LayerInverse, HandAffine) {
  FlowModel f = affine_flow();
  LayerInverse inv = layer_inverse(f.layers[0], Tensor({1, 1}, {3.0}), Tensor({1, 1}));
  EXPECT_DOUBLE_EQ(inv.z[0], 1.0);
  EXPECT_DOUBLE_EQ(inv.logdet[0], -std::log(2.0));
  EXPECT_DOUBLE_EQ(layer_forward(f.layers[0], Tensor({1, 1}, {1.0}), Tensor({1, 1}))[0], 3.0);
}

TEST(LayerInverse, LogDetMatchesNumericalJacobian) {
  const std::size_t d = 3;
  FlowModel f = build_flow(FlowArchitecture{.d = d, .c = 2, .layers = 1, .made_hidden = {16}}, 3);
  randomize_layers(f, 4);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor y = random_matrix(1, d, rng), ctx = random_matrix(1, 2, rng);
    const double eps = 1e-6;
    Eigen::MatrixXd J(d, d);
    for (std::size_t j = 0; j < d; ++j) {
      Tensor up = y, down = y;
      up[j] += eps;
      down[j] -= eps;
      Tensor zu = layer_inverse(f.layers[0], up, ctx).z, zd = layer_inverse(f.layers[0], down, ctx).z;
      for (std::size_t i = 0; i < d; ++i) J(i, j) = (zu[i] - zd[i]) / (2 * eps);
    }
    EXPECT_NEAR(layer_inverse(f.layers[0], y, ctx).logdet[0], std::log(std::abs(J.determinant())), 1e-5);
  }
}

TEST(LayerForward, RoundTrip) {
  std::mt19937_64 rng(6);
  for (std::size_t d : {1u, 2u, 4u}) {
    FlowModel f = build_flow(FlowArchitecture{.d = d, .c = 3, .layers = 1, .made_hidden = {8}}, d);
    randomize_layers(f, 10 + d, 0.6);
    for (int trial = 0; trial < 100; ++trial) {
      Tensor y = random_matrix(1, d, rng, 2.0), ctx = random_matrix(1, 3, rng);
      Tensor back = layer_forward(f.layers[0], layer_inverse(f.layers[0], y, ctx).z, ctx);
      for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(back[i], y[i], 1e-9);
    }
  }
}

TEST(FlowStack, RoundTripAndPermutations) {
  FlowModel f = build_flow(FlowArchitecture{.d = 3, .c = 2}, 2);
  randomize_layers(f, 3);
  for (const auto& p : f.permutations) {
    std::vector<std::size_t> inv(p.size());
    for (std::size_t j = 0; j < p.size(); ++j) inv[p[j]] = j;
    for (std::size_t j = 0; j < p.size(); ++j) EXPECT_EQ(p[inv[j]], j);
    EXPECT_EQ(p, (std::vector<std::size_t>{2, 1, 0}));
  }
  std::mt19937_64 rng(4);
  Tensor ctx = random_matrix(20, 2, rng);
  // Samples pushed back through the inverse recover the base draw.
  Tensor s = sample(f, ctx, 1, 99);
  Tensor z = latent_from_target(f, s, ctx);
  std::mt19937_64 again(99);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(z[i], normal(again), 1e-9);
}

TEST(FlowStack, TargetFromLatentInvertsLatentFromTarget) {
  FlowModel f = build_flow(FlowArchitecture{.d = 3, .c = 2}, 5);
  randomize_layers(f, 6);
  std::mt19937_64 rng(7);
  Tensor y = random_matrix(30, 3, rng), ctx = random_matrix(30, 2, rng);
  Tensor back = target_from_latent(f, latent_from_target(f, y, ctx), ctx);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(back[i], y[i], 1e-10);
  EXPECT_THROW(target_from_latent(f, Tensor({30, 2}), ctx), ShapeError);
}

TEST(LogProb, IdentityFlowIsStandardNormal) {
  FlowModel f = build_flow(FlowArchitecture{.d = 2, .c = 1}, 0);
  std::mt19937_64 rng(1);
  Tensor y = random_matrix(6, 2, rng), ctx = random_matrix(6, 1, rng);
  std::vector<double> lp = log_prob(f, y, ctx);
  for (std::size_t r = 0; r < 6; ++r) EXPECT_NEAR(lp[r], log_phi(y(r, 0)) + log_phi(y(r, 1)), 1e-12);
}

TEST(LogProb, HandAffine) {
  FlowModel f = affine_flow();
  const double expected = log_phi(1.0) - std::log(2.0);
  EXPECT_NEAR(log_prob(f, Tensor({1, 1}, {3.0}), Tensor({1, 1}))[0], expected, 1e-12);
  EXPECT_NEAR(expected, -2.1120, 1e-4);
}

TEST(LogProb, MatchesNumericalJacobianOfStack) {
  std::mt19937_64 rng(8);
  for (std::size_t d : {1u, 2u, 3u, 5u}) {
    FlowModel f = build_flow(FlowArchitecture{.d = d, .c = 2}, 20 + d);
    randomize_layers(f, 30 + d);
    for (int trial = 0; trial < 5; ++trial) {
      Tensor y = random_matrix(1, d, rng), ctx = random_matrix(1, 2, rng);
      const double eps = 1e-6;
      Eigen::MatrixXd J(d, d);
      for (std::size_t j = 0; j < d; ++j) {
        Tensor up = y, down = y;
        up[j] += eps;
        down[j] -= eps;
        Tensor zu = latent_from_target(f, up, ctx), zd = latent_from_target(f, down, ctx);
        for (std::size_t i = 0; i < d; ++i) J(i, j) = (zu[i] - zd[i]) / (2 * eps);
      }
      Tensor z = latent_from_target(f, y, ctx);
      double base = 0.0;
      for (std::size_t i = 0; i < d; ++i) base += log_phi(z[i]);
      EXPECT_NEAR(log_prob(f, y, ctx)[0] - base, std::log(std::abs(J.determinant())), 1e-5) << "d=" << d;
    }
  }
}

TEST(LogProb, GradientsMatchFiniteDifferences) {
  FlowModel f = build_flow(FlowArchitecture{.d = 2, .c = 2, .layers = 2, .made_hidden = {6}, .base_hidden = {4}}, 1);
  randomize_layers(f, 2);
  randomize_base(f, 3);
  std::mt19937_64 rng(4);
  Tensor y = random_matrix(3, 2, rng), ctx = random_matrix(3, 2, rng);
  for (Tensor* p : f.parameters()) {
    Tensor original = *p;
    Tensor analytic;
    {
      grad::Tape t;
      Var loss = grad::reduce_mean(log_prob(f, t, t.constant(y), t.constant(ctx)));
      analytic = t.backward(loss).of(*p);
    }
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double eps = 1e-5;
      (*p)[i] = original[i] + eps;
      const double up = -mean_nll(f, y, ctx);
      (*p)[i] = original[i] - eps;
      const double down = -mean_nll(f, y, ctx);
      (*p)[i] = original[i];
      const double numeric = (up - down) / (2 * eps);
      EXPECT_LE(std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)), 1e-4);
    }
  }
}

TEST(Sample, IdentityFlowMoments) {
  FlowModel f = build_flow(FlowArchitecture{.d = 1, .c = 1}, 0);
  Tensor s = sample(f, Tensor({1, 1}, {0.3}), 10000, 5);
  EXPECT_NEAR(sample_mean(s, 0), 0.0, 0.05);
  EXPECT_NEAR(sample_var(s, 0), 1.0, 0.1);
}

TEST(Sample, AffineVarianceAndDeterminism) {
  FlowModel f = affine_flow();
  Tensor s = sample(f, Tensor({1, 1}), 10000, 6);
  EXPECT_NEAR(sample_var(s, 0), 4.0, 0.2);
  EXPECT_EQ(s, sample(f, Tensor({1, 1}), 10000, 6));
  EXPECT_NEAR(aleatoric_variance(f, Tensor({1, 1}), 10000, 7)[0], 4.0, 0.2);
}

TEST(Sample, DegenerateNoiseGivesZeroVariance) {
  FlowModel f = affine_flow();
  Tensor v = aleatoric_variance(f, Tensor({2, 1}), 2, [] { return 0.25; });
  EXPECT_EQ(v, Tensor({2, 1}));
  EXPECT_THROW(aleatoric_variance(f, Tensor({1, 1}), 1, 0), std::invalid_argument);
}

TEST(LatentExpected, BaseMeanReadout) {
  FlowModel f = build_flow(FlowArchitecture{.d = 2, .c = 3, .base_hidden = {}}, 0);
  EXPECT_EQ(latent_expected(f, Tensor({2, 3}, 1.0)), Tensor({2, 2}));
  f.base.out.weight(0, 0) = 1.0;
  f.base.out.weight(1, 0) = 1.0;
  Tensor z = latent_expected(f, Tensor::matrix(1, 3, {0.7, -4, 2}));
  EXPECT_DOUBLE_EQ(z[0], 0.7);
  EXPECT_DOUBLE_EQ(z[1], 0.7);
}

TEST(Checkpoint, RoundTripsBitExactly) {
  FlowModel f = build_flow(FlowArchitecture{.d = 2, .c = 3, .layers = 3}, 1);
  randomize_layers(f, 2);
  randomize_base(f, 3);
  f.base.out.bias[0] = 0.1 + 0.2;  // not representable in short decimal
  FlowModel g = from_checkpoint(to_checkpoint(f));
  std::vector<Tensor*> a = f.parameters(), b = g.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(*a[k], *b[k]);
  EXPECT_EQ(g.permutations, f.permutations);
  EXPECT_EQ(to_checkpoint(g), to_checkpoint(f));
}

class TrainedFlow : public ::testing::Test {
 protected:
  // y | x ~ N(3x, 0.1^2), x ~ U[-1, 1].
  static void SetUpTestSuite() {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::normal_distribution<double> n(0.0, 0.1);
    auto make = [&](std::size_t rows, Tensor& x, Tensor& y) {
      x = Tensor({rows, 1});
      y = Tensor({rows, 1});
      for (std::size_t r = 0; r < rows; ++r) {
        x[r] = u(rng);
        y[r] = 3.0 * x[r] + n(rng);
      }
    };
    make(3000, x_, y_);
    make(5000, xv_, yv_);
    FlowTrainConfig cfg{.epochs = 300, .seed = 3};
    result_ = new FlowTrainResult(train_flow(build_flow(FlowArchitecture{.d = 1, .c = 1}, 2), x_, y_, xv_, yv_, cfg));
  }
  static void TearDownTestSuite() { delete result_; }
  static inline Tensor x_, y_, xv_, yv_;
  static inline FlowTrainResult* result_ = nullptr;
};

TEST_F(TrainedFlow, ReachesAnalyticNll) {
  const double target = std::log(0.1 * std::sqrt(2.0 * std::numbers::pi * std::numbers::e));
  EXPECT_NEAR(target, -0.884, 1e-3);
  EXPECT_NEAR(mean_nll(result_->model, yv_, xv_), target, 0.05);
  const auto& h = result_->history;
  EXPECT_EQ(h.best_val, *std::min_element(h.val_loss.begin(), h.val_loss.end()));
}

TEST_F(TrainedFlow, DensityIntegratesToOne) {
  for (double xc : {-0.9, -0.4, 0.0, 0.3, 0.8}) {
    const std::size_t n = 2001;
    Tensor ys({n, 1}), ctx({n, 1}, xc);
    for (std::size_t i = 0; i < n; ++i) ys[i] = -10.0 + 20.0 * static_cast<double>(i) / (n - 1);
    std::vector<double> lp = log_prob(result_->model, ys, ctx);
    double integral = 0.0;
    const double h = 20.0 / (n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) integral += 0.5 * h * (std::exp(lp[i]) + std::exp(lp[i + 1]));
    EXPECT_NEAR(integral, 1.0, 1e-3) << "x=" << xc;
  }
}

TEST_F(TrainedFlow, LatentExpectedIsMeanOfInverseOverModelSamples) {
  const Tensor ctx = Tensor::matrix(1, 1, {0.4});
  const std::size_t n = 10000;
  Tensor ys = sample(result_->model, ctx, n, 17);
  Tensor z = latent_from_target(result_->model, ys, Tensor({n, 1}, 0.4));
  const double m = sample_mean(z, 0), se = std::sqrt(sample_var(z, 0) / n);
  EXPECT_NEAR(m, latent_expected(result_->model, ctx)[0], 3 * se);
}

TEST(TrainFlow, StandardNormalTargetReachesEntropy) {
  std::mt19937_64 rng(2);
  for (std::size_t d : {1u, 2u}) {
    Tensor x = random_matrix(3000, 2, rng), y = random_matrix(3000, d, rng);
    Tensor xv = random_matrix(10000, 2, rng), yv = random_matrix(10000, d, rng);
    FlowTrainResult r = train_flow(build_flow(FlowArchitecture{.d = d, .c = 2}, 4), x, y, xv, yv,
                                   FlowTrainConfig{.epochs = 200, .seed = 1});
    // Cross-entropy of a model against N(0, 1) data is bounded below by the
    // entropy 0.5 log(2 pi e) per dimension.
    const double entropy = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);
    EXPECT_NEAR(r.history.best_val / d, entropy, 0.02);
  }
}

TEST(TrainFlow, SameSeedSameHistory) {
  std::mt19937_64 rng(3);
  Tensor x = random_matrix(300, 2, rng), y = random_matrix(300, 1, rng);
  FlowTrainConfig cfg{.epochs = 15, .seed = 9};
  FlowTrainResult a = train_flow(build_flow(FlowArchitecture{.d = 1, .c = 2}, 4), x, y, cfg);
  FlowTrainResult b = train_flow(build_flow(FlowArchitecture{.d = 1, .c = 2}, 4), x, y, cfg);
  EXPECT_EQ(a.history.train_loss, b.history.train_loss);
  EXPECT_EQ(a.history.val_loss, b.history.val_loss);
  EXPECT_EQ(to_checkpoint(a.model), to_checkpoint(b.model));
}

TEST(TrainFlow, HeteroscedasticVarianceTracksTruth) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  const std::size_t rows = 4000;
  Tensor x({rows, 1}), y({rows, 1});
  for (std::size_t r = 0; r < rows; ++r) {
    x[r] = u(rng);
    y[r] = std::sin(2.0 * x[r]) + (0.1 + 0.4 * x[r] * x[r]) * n(rng);
  }
  FlowTrainResult r = train_flow(build_flow(FlowArchitecture{.d = 1, .c = 1}, 1), x, y, FlowTrainConfig{.seed = 2});
  Tensor grid({19, 1});
  for (std::size_t i = 0; i < 19; ++i) grid[i] = -0.9 + 0.1 * static_cast<double>(i);
  Tensor var = aleatoric_variance(r.model, grid, 4000, 3);
  for (std::size_t i = 0; i < 19; ++i) {
    const double s = 0.1 + 0.4 * grid[i] * grid[i];
    EXPECT_LE(std::abs(var[i] - s * s) / (s * s), 0.25) << "x=" << grid[i];
  }
}

TEST(FlowErrors, ShapeMismatchRejected) {
  FlowModel f = build_flow(FlowArchitecture{.d = 2, .c = 1}, 0);
  EXPECT_THROW(log_prob(f, Tensor({3, 1}), Tensor({3, 1})), ShapeError);
  EXPECT_THROW(latent_from_target(f, Tensor({3, 2}), Tensor({2, 1})), ShapeError);
  EXPECT_THROW(build_flow(FlowArchitecture{.d = 2, .c = 1, .layers = 0}, 0), std::invalid_argument);
}
