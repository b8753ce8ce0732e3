#pragma once

// Dense extended Kalman filter over the stacked state [x, p] with an
// explicit 2n x 2n covariance. Only meant to cross-check the three-scalar
// recursions at toy sizes.

#include <string>

#include "kafisto/core.hpp"

namespace kafisto::reference {

inline constexpr std::size_t kMaxDimension = 16;

enum class HtHApproximation { ExactHtH, ScaledIdentityHtH };

struct DenseEKFState {
  Vector mean;       // [x; p]
  Matrix covariance; // 2n x 2n

  std::size_t n() const { return static_cast<std::size_t>(mean.size() / 2); }
  auto x() const { return mean.head(mean.size() / 2); }
  auto p() const { return mean.tail(mean.size() / 2); }

  /// Covariance [[var_x I, var_c I], [var_c I, var_p I]].
  static DenseEKFState block_scalar(const Vector& x, const Vector& p, double var_x, double var_c,
                                    double var_p) {
    const auto n = x.size();
    if (p.size() != n) throw InvalidArgument("x and p must have equal length");
    if (static_cast<std::size_t>(n) > kMaxDimension) {
      throw InvalidArgument("reference EKF is capped at n <= " + std::to_string(kMaxDimension));
    }
    DenseEKFState s;
    s.mean.resize(2 * n);
    s.mean << x, p;
    const Matrix I = Matrix::Identity(n, n);
    s.covariance.resize(2 * n, 2 * n);
    s.covariance << var_x * I, var_c * I, var_c * I, var_p * I;
    return s;
  }
};

inline DenseEKFState predict(const DenseEKFState& s, double alpha, double q_x2, double q_p2) {
  const auto n = static_cast<Eigen::Index>(s.n());
  if (static_cast<std::size_t>(n) > kMaxDimension) throw InvalidArgument("dimension cap exceeded");
  const Matrix I = Matrix::Identity(n, n);
  Matrix F(2 * n, 2 * n);
  F << I, I, Matrix::Zero(n, n), alpha * I;
  Vector qdiag(2 * n);
  qdiag << Vector::Constant(n, q_x2), Vector::Constant(n, q_p2);

  DenseEKFState out;
  out.mean = F * s.mean;
  out.covariance = F * s.covariance * F.transpose();
  out.covariance.diagonal() += qdiag;
  return out;
}

/// Measurement update with H = [g^T, 0^T]; `loss` and `gradient` are taken
/// at the predicted mean.
inline DenseEKFState update(const DenseEKFState& pred, double loss, const Vector& gradient,
                            double l_min, double R, HtHApproximation approx) {
  const auto n = static_cast<Eigen::Index>(pred.n());
  if (gradient.size() != n) throw InvalidArgument("gradient length mismatch");
  Vector H = Vector::Zero(2 * n);
  H.head(n) = gradient;

  const Vector PHt = pred.covariance * H;
  const double S = H.dot(PHt) + R;
  const Vector K = PHt / S;

  DenseEKFState out;
  out.mean = pred.mean + K * (l_min - loss);

  Matrix HtH = Matrix::Zero(2 * n, 2 * n);
  if (approx == HtHApproximation::ExactHtH) {
    HtH.topLeftCorner(n, n) = gradient * gradient.transpose();
  } else {
    HtH.topLeftCorner(n, n).diagonal().setConstant(gradient.squaredNorm());
  }
  // K H = P_hat H^T H / S, with H^T H possibly replaced by its scaled identity.
  const Matrix KH = pred.covariance * HtH / S;
  out.covariance = (Matrix::Identity(2 * n, 2 * n) - KH) * pred.covariance;
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
  return out;
}

inline DenseEKFState full_ekf_step(const DenseEKFState& s, double alpha, double q_x2, double q_p2,
                                   const ObjectiveEvaluation& eval, double l_min, double R,
                                   HtHApproximation approx) {
  return update(predict(s, alpha, q_x2, q_p2), eval.loss, eval.gradient, l_min, R, approx);
}

/// Largest deviation of any n x n block from a multiple of the identity.
inline double block_scalar_defect(const Matrix& P) {
  const auto n = P.rows() / 2;
  double worst = 0.0;
  for (int bi = 0; bi < 2; ++bi) {
    for (int bj = 0; bj < 2; ++bj) {
      const Matrix B = P.block(bi * n, bj * n, n, n);
      const double s = B.diagonal().mean();
      worst = std::max(worst, (B - s * Matrix::Identity(n, n)).cwiseAbs().maxCoeff());
    }
  }
  return worst;
}

}  // namespace kafisto::reference
