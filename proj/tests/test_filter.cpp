#include <random>

#include <gtest/gtest.h>

#include "kafisto/filter.hpp"
#include "kafisto/optimizer.hpp"

using namespace kafisto;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) out[i++] = d;
  return out;
}

ObjectiveEvaluation observation(double loss, const Vector& g) {
  ObjectiveEvaluation ev;
  ev.loss = loss;
  ev.per_sample_losses = Vector::Constant(1, loss);
  ev.gradient = g;
  return ev;
}

FilterState state_of(const Vector& x, double var_x, double var_c = 0.0, double var_p = 0.0,
                     const Vector* p = nullptr) {
  FilterState s;
  s.x = x;
  s.p = p ? *p : Vector::Zero(x.size());
  s.var_x = var_x;
  s.var_c = var_c;
  s.var_p = var_p;
  return s;
}

}  // namespace

TEST(VanillaPredict, ZeroProcessNoiseIsIdentity) {
  const auto s = vanilla_predict(state_of(vec({1, 2}), 0.1), 0.0);
  EXPECT_EQ(s.x, vec({1, 2}));
  EXPECT_DOUBLE_EQ(s.var_x, 0.1);
}

TEST(VanillaPredict, AddsProcessVariance) {
  const auto s = vanilla_predict(state_of(vec({0}), 0.1), 0.05);
  EXPECT_EQ(s.x, vec({0}));
  EXPECT_NEAR(s.var_x, 0.15, 1e-15);
  EXPECT_EQ(s.iteration, 0u);
}

TEST(VanillaPredict, DefaultInitialVariance) {
  FilterConfig cfg;
  cfg.variant = FilterVariant::Vanilla;
  const auto s0 = FilterState::initial(vec({3, 4}), cfg);
  EXPECT_DOUBLE_EQ(s0.var_x, 0.1);
  EXPECT_NEAR(vanilla_predict(s0, 0.02).var_x, 0.12, 1e-15);
}

TEST(VanillaPredict, RejectsNegativeProcessNoise) {
  EXPECT_THROW(vanilla_predict(state_of(vec({0}), 0.1), -1e-3), InvalidArgument);
}

TEST(VanillaUpdate, ZeroGradientLeavesStateUnchanged) {
  const auto pred = state_of(vec({1, -1}), 0.3);
  const auto [s, d] = vanilla_update(pred, observation(2.0, Vector::Zero(2)), 0.0, 0.7);
  EXPECT_EQ(s.x, pred.x);
  EXPECT_DOUBLE_EQ(s.var_x, 0.3);
  EXPECT_DOUBLE_EQ(d.innovation_covariance, 0.7);
  EXPECT_DOUBLE_EQ(d.gain_scale_x, 0.3 * 2.0 / 0.7);
  EXPECT_EQ(s.iteration, 1u);
}

TEST(VanillaUpdate, ZeroInnovationOnlyShrinksCovariance) {
  const auto pred = state_of(vec({1, 2}), 0.4);
  const Vector g = vec({1, 1});
  const auto [s, d] = vanilla_update(pred, observation(0.25, g), 0.25, 0.5);
  EXPECT_EQ(s.x, pred.x);
  EXPECT_DOUBLE_EQ(s.var_x, 0.5 * 0.4 / (0.4 * 2.0 + 0.5));
  EXPECT_DOUBLE_EQ(d.innovation, 0.0);
}

TEST(VanillaUpdate, HandEvaluatedStep) {
  // S = 1*1 + 1 = 2, gain = 1*0.5/2 = 0.25.
  const auto [s, d] = vanilla_update(state_of(vec({1}), 1.0), observation(0.5, vec({1})), 0.0, 1.0);
  EXPECT_NEAR(s.x[0], 0.75, 1e-15);
  EXPECT_NEAR(s.var_x, 0.5, 1e-15);
  EXPECT_NEAR(d.innovation, -0.5, 1e-15);
  EXPECT_NEAR(d.innovation_covariance, 2.0, 1e-15);
  EXPECT_NEAR(d.gain_scale_x, 0.25, 1e-15);
  EXPECT_NEAR(d.grad_sq_norm, 1.0, 1e-15);
}

TEST(VanillaUpdate, NonFiniteObservationReportsIteration) {
  auto pred = state_of(vec({1}), 1.0);
  pred.iteration = 41;
  try {
    (void)vanilla_update(pred, observation(std::nan(""), vec({1})), 0.0, 1.0);
    FAIL() << "expected divergence";
  } catch (const NumericalDivergence& e) {
    EXPECT_EQ(e.iteration(), 42u);
  }
  EXPECT_THROW((void)vanilla_update(pred, observation(1.0, vec({INFINITY})), 0.0, 1.0),
               NumericalDivergence);
}

TEST(VanillaUpdate, RejectsBadArguments) {
  const auto pred = state_of(vec({1, 2}), 1.0);
  EXPECT_THROW((void)vanilla_update(pred, observation(1.0, vec({1})), 0.0, 1.0), InvalidArgument);
  EXPECT_THROW((void)vanilla_update(pred, observation(1.0, vec({1, 1})), 0.0, 0.0), InvalidArgument);
}

TEST(FilterConfig, AlphaRange) {
  FilterConfig cfg;
  cfg.alpha = 0.0;
  EXPECT_NO_THROW(cfg.validate());
  cfg.alpha = 0.99;
  EXPECT_NO_THROW(cfg.validate());
  cfg.alpha = 1.0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg.alpha = -0.1;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
}

TEST(FilterConfig, PaperDefaults) {
  const FilterConfig cfg;
  EXPECT_DOUBLE_EQ(cfg.alpha, 0.9);
  EXPECT_DOUBLE_EQ(cfg.var_x0, 0.1);
  EXPECT_DOUBLE_EQ(cfg.var_p0, 0.1);
  EXPECT_DOUBLE_EQ(cfg.var_c0, 0.0);
  EXPECT_DOUBLE_EQ(cfg.covariance_floor, 1e-12);
}

TEST(DynamicsPredict, DegenerateVelocityBlockIsVanillaPredict) {
  FilterConfig cfg;
  const auto s = state_of(vec({1, 2}), 0.3);
  const auto pred = dynamics_predict(s, cfg, 0.0, 0.0);
  EXPECT_EQ(pred.x, s.x);
  EXPECT_DOUBLE_EQ(pred.var_x, 0.3);
  EXPECT_DOUBLE_EQ(pred.var_c, 0.0);
  EXPECT_DOUBLE_EQ(pred.var_p, 0.0);
}

TEST(DynamicsPredict, MatchesExplicitTwoByTwoProduct) {
  FilterConfig cfg;
  cfg.alpha = 0.9;
  const Vector p = vec({0.5, -1});
  const auto s = state_of(vec({1, 2}), 0.1, 0.0, 0.1, &p);
  const auto pred = dynamics_predict(s, cfg, 0.0, 0.0);

  Eigen::Matrix2d F;
  F << 1.0, 1.0, 0.0, 0.9;
  Eigen::Matrix2d P;
  P << 0.1, 0.0, 0.0, 0.1;
  const Eigen::Matrix2d expected = F * P * F.transpose();
  EXPECT_NEAR(pred.var_x, expected(0, 0), 1e-15);
  EXPECT_NEAR(pred.var_c, expected(0, 1), 1e-15);
  EXPECT_NEAR(pred.var_p, expected(1, 1), 1e-15);
  EXPECT_NEAR(pred.var_x, 0.2, 1e-15);
  EXPECT_NEAR(pred.var_c, 0.09, 1e-15);
  EXPECT_NEAR(pred.var_p, 0.081, 1e-15);
  EXPECT_EQ(pred.x, vec({1.5, 1.0}));
  EXPECT_NEAR(pred.p[0], 0.45, 1e-15);
  EXPECT_NEAR(pred.p[1], -0.9, 1e-15);
}

TEST(DynamicsPredict, ProcessNoiseAddsToDiagonal) {
  FilterConfig cfg;
  cfg.alpha = 0.5;
  const auto s = state_of(vec({0}), 0.2, 0.05, 0.3);
  const auto pred = dynamics_predict(s, cfg, 0.01, 0.02);
  EXPECT_NEAR(pred.var_x, 0.2 + 0.1 + 0.3 + 0.01, 1e-15);
  EXPECT_NEAR(pred.var_c, 0.5 * 0.35, 1e-15);
  EXPECT_NEAR(pred.var_p, 0.25 * 0.3 + 0.02, 1e-15);
}

TEST(DynamicsUpdate, DecoupledBlocksMatchVanilla) {
  const Vector p = vec({0.3, -0.2});
  const auto pred = state_of(vec({1, 2}), 0.4, 0.0, 0.25, &p);
  const auto ev = observation(1.3, vec({0.7, -0.4}));
  const auto [dyn, dd] = dynamics_update(pred, ev, 0.1, 0.6);
  const auto [van, vd] = vanilla_update(pred, ev, 0.1, 0.6);
  EXPECT_EQ(dyn.p, pred.p);
  EXPECT_EQ(dyn.x, van.x);
  EXPECT_EQ(dyn.var_x, van.var_x);
  EXPECT_DOUBLE_EQ(dd.gain_scale_x, vd.gain_scale_x);
  EXPECT_DOUBLE_EQ(dd.gain_scale_p, 0.0);
}

TEST(DynamicsUpdate, WorkedExample) {
  // Values frozen from the dense stacked-state EKF with g g^T -> |g|^2 I
  // (see test_reference_ekf for the oracle run producing them).
  const Vector g = vec({0.6, 0.8});
  const Vector p = vec({0.1, 0.1});
  const auto pred = state_of(vec({1, 1}), 0.2, 0.09, 0.081, &p);
  const auto [s, d] = dynamics_update(pred, observation(0.5, g), 0.0, 1.0);
  EXPECT_NEAR(d.innovation_covariance, 1.2, 1e-15);
  EXPECT_NEAR((s.x - pred.x - (-0.5 * 0.2 / 1.2) * g).norm(), 0.0, 1e-15);
  EXPECT_NEAR((s.x - pred.x).dot(g), -0.0833333333333333, 1e-12);
  EXPECT_NEAR((s.p - pred.p).dot(g), -0.0375, 1e-15);
  EXPECT_NEAR(s.var_x, 0.166666666666667, 1e-12);
  EXPECT_NEAR(s.var_c, 0.075, 1e-15);
  EXPECT_NEAR(s.var_p, 0.07425, 1e-15);
  EXPECT_NEAR(d.gain_scale_x, 0.0833333333333333, 1e-12);
  EXPECT_NEAR(d.gain_scale_p, 0.0375, 1e-15);
}

TEST(DynamicsUpdate, ZeroGradientKeepsEverything) {
  const Vector p = vec({0.1});
  const auto pred = state_of(vec({2}), 0.2, 0.09, 0.081, &p);
  const auto [s, d] = dynamics_update(pred, observation(3.0, vec({0})), 0.0, 0.5);
  EXPECT_EQ(s.x, pred.x);
  EXPECT_EQ(s.p, pred.p);
  EXPECT_DOUBLE_EQ(s.var_x, pred.var_x);
  EXPECT_DOUBLE_EQ(s.var_c, pred.var_c);
  EXPECT_DOUBLE_EQ(s.var_p, pred.var_p);
  EXPECT_DOUBLE_EQ(d.innovation_covariance, 0.5);
}

TEST(DynamicsUpdate, CovarianceFloorHolds) {
  const auto pred = state_of(vec({0}), 1e-12, 0.0, 0.0);
  const auto [s, d] = dynamics_update(pred, observation(1.0, vec({1e6})), 0.0, 1e-9);
  EXPECT_GE(s.var_x, 1e-12);
}

TEST(DynamicsUpdate, NonFiniteIsDivergence) {
  const auto pred = state_of(vec({0}), 0.1);
  EXPECT_THROW((void)dynamics_update(pred, observation(INFINITY, vec({1})), 0.0, 1.0),
               NumericalDivergence);
}

// Random PSD predicted covariances must stay PSD after the update and the
// covariance must contract.
TEST(DynamicsUpdateProperty, PsdPreservationAndContraction) {
  std::mt19937_64 rng(20240611);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int trial = 0; trial < 100000; ++trial) {
    const int n = 1 + trial % 4;
    const double var_x = std::pow(10.0, -6.0 + 7.0 * u(rng));
    const double var_p = std::pow(10.0, -6.0 + 7.0 * u(rng));
    const double var_c = (2.0 * u(rng) - 1.0) * std::sqrt(var_x * var_p);
    Vector x(n), p(n), g(n);
    for (int j = 0; j < n; ++j) {
      x[j] = normal(rng);
      p[j] = normal(rng);
      g[j] = normal(rng) * std::pow(10.0, -3.0 + 5.0 * u(rng));
    }
    const auto pred = state_of(x, var_x, var_c, var_p, &p);
    const double R = std::pow(10.0, -6.0 + 8.0 * u(rng));
    const auto [s, d] = dynamics_update(pred, observation(u(rng) * 10.0, g), 0.0, R, 1e-300);
    ASSERT_LE(s.var_x, pred.var_x);
    ASSERT_GE(s.var_c * pred.var_c, 0.0);
    ASSERT_GE(s.var_p, -1e-12 * var_p);
    const double scale = var_x * var_p;
    ASSERT_LE(s.var_c * s.var_c - s.var_x * s.var_p, 1e-12 * scale) << "trial " << trial;
    ASSERT_GE(d.innovation_covariance, R);
  }
}

TEST(DynamicsUpdateProperty, TargetScheduleScalesIncrement) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    Vector x(3), g(3), p(3);
    for (int j = 0; j < 3; ++j) {
      x[j] = normal(rng);
      g[j] = normal(rng);
      p[j] = normal(rng);
    }
    const auto pred = state_of(x, 0.2, 0.05, 0.1, &p);
    const double L = std::abs(normal(rng)) + 0.1;
    const double eps = 0.01 + 0.98 * std::abs(std::tanh(normal(rng)));
    const auto [a, da] = dynamics_update(pred, observation(L, g), (1.0 - eps) * L, 0.3);
    const auto [b, db] = dynamics_update(pred, observation(L, g), 0.0, 0.3);
    ASSERT_LE(((a.x - pred.x) - eps * (b.x - pred.x)).cwiseAbs().maxCoeff(), 1e-12);
    ASSERT_EQ(a.var_x, b.var_x);
    ASSERT_EQ(a.var_c, b.var_c);
    ASSERT_EQ(a.var_p, b.var_p);
  }
}

TEST(KafistoStep, OneStepOnHandQuadratic) {
  // L(x) = 0.5 x^2 at x = 1: loss 0.5, gradient 1. var 1, R 1 -> x = 0.75.
  FilterConfig cfg;
  cfg.variant = FilterVariant::Vanilla;
  cfg.var_x0 = 1.0;
  NoiseState ns;
  ns.R = 1.0;
  ns.mode_R = NoiseMode::Constant;
  ns.mode_Q = NoiseMode::Constant;
  ns.x_avg = vec({1});
  ns.p_avg = vec({0});
  const auto s0 = FilterState::initial(vec({1}), cfg);
  const EvalFn f = [](const Vector& x) { return observation(0.5 * x[0] * x[0], x); };
  const auto out = kafisto_step(s0, cfg, ns, TargetPolicy::constant(0.0), f);
  EXPECT_NEAR(out.state.x[0], 0.75, 1e-15);
  EXPECT_NEAR(out.state.var_x, 0.5, 1e-15);
  EXPECT_EQ(out.state.iteration, 1u);
  EXPECT_DOUBLE_EQ(out.noise.R, 1.0);
}

TEST(KafistoStep, MatchesHandRolledVanillaLoop) {
  FilterConfig cfg;
  cfg.variant = FilterVariant::Vanilla;
  NoiseConfig nc;
  nc.mode_R = NoiseMode::Constant;
  nc.mode_Q = NoiseMode::Constant;
  nc.R = 0.5;
  nc.q_x2 = 1e-3;
  KafistoSettings settings{cfg, nc, TargetPolicy::constant(0.0), std::nullopt};
  const Vector x0 = vec({2.0, -1.0});
  KafistoOptimizer opt(x0, settings);
  const EvalFn f = [](const Vector& x) { return observation(0.5 * x.squaredNorm(), x); };

  Vector x = x0;
  double P = cfg.var_x0;
  for (int k = 0; k < 50; ++k) {
    P = P + 1e-3;
    const double L = 0.5 * x.squaredNorm();
    const double g2 = x.squaredNorm();
    const Vector g = x;
    x = x - (P * L / (P * g2 + 0.5)) * g;
    P = 0.5 / (P * g2 + 0.5) * P;
    opt.step(f);
  }
  EXPECT_LE((opt.state().x - x).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(opt.state().var_x, P, 1e-12 * P);
}

TEST(KafistoStep, EvaluatesAtPredictedMean) {
  FilterConfig cfg;
  NoiseConfig nc;
  nc.mode_R = NoiseMode::Constant;
  const Vector p = vec({0.5});
  FilterState s = FilterState::initial(vec({1.0}), cfg);
  s.p = p;
  NoiseState ns = make_noise_state(s.x, nc);
  Vector seen;
  const EvalFn f = [&](const Vector& x) {
    seen = x;
    return observation(0.5 * x.squaredNorm(), x);
  };
  (void)kafisto_step(s, cfg, ns, TargetPolicy::constant(0.0), f);
  ASSERT_EQ(seen.size(), 1);
  EXPECT_DOUBLE_EQ(seen[0], 1.5);
}

TEST(KafistoStep, DivergencePropagatesWithIteration) {
  FilterConfig cfg;
  NoiseConfig nc;
  KafistoOptimizer opt(vec({1.0}), {cfg, nc, TargetPolicy::constant(0.0), std::nullopt});
  int calls = 0;
  const EvalFn f = [&](const Vector& x) {
    ++calls;
    return observation(calls == 3 ? std::nan("") : 0.5 * x.squaredNorm(), x);
  };
  opt.step(f);
  opt.step(f);
  try {
    opt.step(f);
    FAIL();
  } catch (const NumericalDivergence& e) {
    EXPECT_EQ(e.iteration(), 3u);
  }
}

TEST(KafistoStep, AdaptiveRSeededFromFirstBatch) {
  FilterConfig cfg;
  NoiseConfig nc;
  KafistoOptimizer opt(vec({0.0}), {cfg, nc, TargetPolicy::constant(0.0), std::nullopt});
  const EvalFn f = [](const Vector& x) {
    ObjectiveEvaluation ev;
    ev.per_sample_losses = vec({2.0, 2.0});
    ev.loss = 2.0;
    ev.gradient = Vector::Zero(x.size());
    return ev;
  };
  const auto& r = opt.step(f);
  EXPECT_DOUBLE_EQ(r.R_used, 4.0);
  EXPECT_DOUBLE_EQ(r.noise.R, 4.0);
}
