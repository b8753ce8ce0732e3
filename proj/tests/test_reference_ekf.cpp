#include <random>

#include <gtest/gtest.h>

#include "kafisto/filter.hpp"
#include "kafisto/reference_ekf.hpp"

using namespace kafisto;
using namespace kafisto::reference;

namespace {

Vector random_vec(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
  std::normal_distribution<double> normal;
  return Vector::NullaryExpr(n, [&] { return scale * normal(rng); });
}

}  // namespace

TEST(ReferenceEkf, ScalarCaseApproximationsAgree) {
  const auto s = DenseEKFState::block_scalar(Vector::Constant(1, 0.4), Vector::Constant(1, -0.1), 0.3,
                                             0.02, 0.2);
  const auto pred = predict(s, 0.9, 0.01, 0.02);
  Vector g(1);
  g << 1.7;
  const auto a = update(pred, 0.8, g, 0.0, 0.5, HtHApproximation::ExactHtH);
  const auto b = update(pred, 0.8, g, 0.0, 0.5, HtHApproximation::ScaledIdentityHtH);
  EXPECT_LE((a.mean - b.mean).norm(), 1e-15);
  EXPECT_LE((a.covariance - b.covariance).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ReferenceEkf, WorkedExample) {
  // After prediction: var_x 0.2, var_c 0.09, var_p 0.081; g = [1, 0]; L = 0.5; R = 1.
  FilterState pred;
  pred.x = Vector::Zero(2);
  pred.p = Vector::Zero(2);
  pred.var_x = 0.2;
  pred.var_c = 0.09;
  pred.var_p = 0.081;
  const auto dense = DenseEKFState::block_scalar(pred.x, pred.p, 0.2, 0.09, 0.081);
  Vector g(2);
  g << 1.0, 0.0;
  const auto out = update(dense, 0.5, g, 0.0, 1.0, HtHApproximation::ScaledIdentityHtH);
  EXPECT_NEAR(out.mean[0], -0.5 * 0.2 / 1.2, 1e-15);
  EXPECT_NEAR(out.mean[2], -0.5 * 0.09 / 1.2, 1e-15);
  EXPECT_NEAR(out.covariance(0, 0), 0.2 / 1.2, 1e-15);
  EXPECT_NEAR(out.covariance(0, 2), 0.09 / 1.2, 1e-15);
  EXPECT_NEAR(out.covariance(2, 2), 0.081 - 0.09 * 0.09 / 1.2, 1e-15);
}

TEST(ReferenceEkf, ZeroGradientOnlyAddsProcessNoise) {
  const auto s = DenseEKFState::block_scalar(Vector::Ones(3), Vector::Zero(3), 0.1, 0.0, 0.1);
  const auto pred = predict(s, 0.0, 0.05, 0.07);
  const auto out = update(pred, 2.0, Vector::Zero(3), 0.0, 1.0, HtHApproximation::ExactHtH);
  EXPECT_EQ(out.mean, pred.mean);
  EXPECT_NEAR(out.covariance(0, 0), 0.1 + 0.1 + 0.05, 1e-15);  // var_x + var_p + q_x2
  EXPECT_NEAR(out.covariance(3, 3), 0.07, 1e-15);
}

TEST(ReferenceEkfProperty, ScaledIdentityPreservesBlockScalarForm) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index n = 1 + trial % 8;
    auto s = DenseEKFState::block_scalar(random_vec(rng, n), random_vec(rng, n), u(rng), 0.0, u(rng));
    for (int k = 0; k < 5; ++k) {
      s = predict(s, 0.9, u(rng) * 0.01, u(rng) * 0.01);
      s = update(s, u(rng), random_vec(rng, n), 0.0, u(rng), HtHApproximation::ScaledIdentityHtH);
      ASSERT_LE(block_scalar_defect(s.covariance), 1e-10);
    }
  }
}

TEST(ReferenceEkfProperty, MatchesScalarRecursion) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  FilterConfig cfg;
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index n = 1 + trial % 6;
    FilterState st = FilterState::initial(random_vec(rng, n), cfg);
    st.var_x = u(rng);
    st.var_p = u(rng);
    auto dense = DenseEKFState::block_scalar(st.x, st.p, st.var_x, st.var_c, st.var_p);
    for (int k = 0; k < 10; ++k) {
      const double qx = 0.01 * u(rng), qp = 0.01 * u(rng), R = u(rng);
      const FilterState pred = dynamics_predict(st, cfg, qx, qp);
      dense = predict(dense, cfg.alpha, qx, qp);
      ObjectiveEvaluation ev;
      ev.loss = u(rng);
      ev.per_sample_losses = Vector::Constant(1, ev.loss);
      ev.gradient = random_vec(rng, n);
      st = dynamics_update(pred, ev, 0.0, R).first;
      dense = update(dense, ev.loss, ev.gradient, 0.0, R, HtHApproximation::ScaledIdentityHtH);
      ASSERT_LE((dense.x() - st.x).norm(), 1e-9 * std::max(1.0, st.x.norm()));
      ASSERT_LE((dense.p() - st.p).norm(), 1e-9 * std::max(1.0, st.p.norm()));
      ASSERT_NEAR(dense.covariance(0, 0), st.var_x, 1e-9);
      ASSERT_NEAR(dense.covariance(0, n), st.var_c, 1e-9);
      ASSERT_NEAR(dense.covariance(n, n), st.var_p, 1e-9);
    }
  }
}

TEST(ReferenceEkf, ExactHtHBreaksBlockScalarForm) {
  const auto s = DenseEKFState::block_scalar(Vector::Zero(2), Vector::Zero(2), 0.2, 0.0, 0.1);
  Vector g(2);
  g << 1.0, 0.0;
  const auto out = update(s, 1.0, g, 0.0, 1.0, HtHApproximation::ExactHtH);
  EXPECT_GT(block_scalar_defect(out.covariance), 1e-3);
}

TEST(ReferenceEkf, DimensionCapEnforced) {
  EXPECT_THROW(DenseEKFState::block_scalar(Vector::Zero(17), Vector::Zero(17), 1, 0, 1),
               InvalidArgument);
  EXPECT_NO_THROW(DenseEKFState::block_scalar(Vector::Zero(16), Vector::Zero(16), 1, 0, 1));
}
