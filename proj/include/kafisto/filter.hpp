#pragma once

// Scalar-covariance Kalman recursions for stochastic optimization.
//
// The state is the stacked vector [x, p] (parameters and velocities). Its
// posterior covariance is kept in the block-scalar form
//
//   P = [ var_x I   var_c I ]
//       [ var_c I   var_p I ]
//
// and the rank-one measurement term H^T H = g g^T is replaced by |g|^2 I, so
// every block stays a multiple of the identity and three scalars suffice.
// The observation is the target loss l_min, modelled as the minibatch loss
// at the predicted mean plus zero-mean noise of variance R.

#include <algorithm>
#include <cstdint>
#include <utility>
#include <string>

#include "kafisto/core.hpp"

namespace kafisto {

enum class FilterVariant { Vanilla, Dynamics };

struct FilterConfig {
  FilterVariant variant = FilterVariant::Dynamics;
  double alpha = 0.9;  // velocity decay
  double var_x0 = 0.1;
  double var_p0 = 0.1;
  double var_c0 = 0.0;
  double covariance_floor = 1e-12;

  void validate() const {
    if (!(alpha >= 0.0 && alpha < 1.0)) {
      throw InvalidArgument("alpha must lie in [0, 1), got " + std::to_string(alpha));
    }
    if (!(covariance_floor > 0.0)) throw InvalidArgument("covariance_floor must be positive");
    if (!(var_x0 >= covariance_floor)) throw InvalidArgument("var_x0 must be >= covariance_floor");
    if (!(var_p0 >= 0.0)) throw InvalidArgument("var_p0 must be nonnegative");
    if (variant == FilterVariant::Dynamics && var_c0 * var_c0 > var_x0 * var_p0) {
      throw InvalidArgument("initial covariance is not PSD: var_c0^2 > var_x0 * var_p0");
    }
  }
};

struct FilterState {
  Vector x;
  Vector p;
  double var_x = 0.1;
  double var_c = 0.0;
  double var_p = 0.0;
  std::uint64_t iteration = 0;

  std::size_t size() const { return static_cast<std::size_t>(x.size()); }

  /// Initial state from a parameter vector. Velocities start at zero.
  static FilterState initial(const Vector& x0, const FilterConfig& cfg) {
    cfg.validate();
    FilterState s;
    s.x = x0;
    s.p = Vector::Zero(x0.size());
    s.var_x = cfg.var_x0;
    if (cfg.variant == FilterVariant::Dynamics) {
      s.var_c = cfg.var_c0;
      s.var_p = cfg.var_p0;
    }
    return s;
  }
};

struct StepDiagnostics {
  double innovation = 0.0;             // l_min - L(x_hat)
  double innovation_covariance = 0.0;  // S = var_x_hat |g|^2 + R
  double gain_scale_x = 0.0;           // x = x_hat - gain_scale_x * g
  double gain_scale_p = 0.0;           // p = p_hat - gain_scale_p * g
  double grad_sq_norm = 0.0;
};

namespace detail {

inline void check_observation(const FilterState& pred, const ObjectiveEvaluation& eval,
                              double R) {
  const auto k = pred.iteration + 1;
  if (eval.gradient.size() != pred.x.size()) {
    throw InvalidArgument("gradient length " + std::to_string(eval.gradient.size()) +
                          " does not match state length " + std::to_string(pred.x.size()));
  }
  if (!(R > 0.0) || !std::isfinite(R)) {
    throw InvalidArgument("measurement variance R must be positive and finite");
  }
  if (!std::isfinite(eval.loss)) throw NumericalDivergence(k, "non-finite loss");
  if (!all_finite(eval.gradient)) throw NumericalDivergence(k, "non-finite gradient");
}

inline void check_state(const FilterState& s) {
  if (!all_finite(s.x) || !all_finite(s.p)) {
    throw NumericalDivergence(s.iteration, "non-finite state entry");
  }
  if (!std::isfinite(s.var_x) || !std::isfinite(s.var_c) || !std::isfinite(s.var_p)) {
    throw NumericalDivergence(s.iteration, "non-finite covariance scalar");
  }
}

// det of the 2x2 block covariance scales by a factor in (0, 1] under the
// update, so a violation beyond rounding relative to the prior means a bug.
inline void check_psd(const FilterState& post, const FilterState& prior) {
  const double scale = prior.var_x * prior.var_p + prior.var_c * prior.var_c;
  const double tol = 1e-9 * scale;
  if (post.var_p < -1e-9 * std::abs(prior.var_p) ||
      post.var_c * post.var_c > post.var_x * post.var_p + tol) {
    throw InternalConsistency("posterior covariance lost PSD at iteration " +
                              std::to_string(post.iteration));
  }
}

}  // namespace detail

/// x_hat = x, var_x_hat = var_x + q_x2.
inline FilterState vanilla_predict(const FilterState& state, double q_x2) {
  if (!(q_x2 >= 0.0)) throw InvalidArgument("process variance q_x2 must be nonnegative");
  FilterState pred = state;
  pred.var_x = state.var_x + q_x2;
  return pred;
}

/// Scalar Kalman update with the observation l_min of the minibatch loss.
/// `eval` must have been computed at pred.x.
inline std::pair<FilterState, StepDiagnostics> vanilla_update(const FilterState& pred,
                                                              const ObjectiveEvaluation& eval,
                                                              double l_min, double R,
                                                              double covariance_floor = 1e-12) {
  detail::check_observation(pred, eval, R);
  const Vector& g = eval.gradient;
  const double g2 = g.squaredNorm();
  const double S = pred.var_x * g2 + R;
  const double gain = pred.var_x * (eval.loss - l_min) / S;

  FilterState out = pred;
  out.x = pred.x - gain * g;
  out.var_x = std::max(R * pred.var_x / S, covariance_floor);
  out.iteration = pred.iteration + 1;
  detail::check_state(out);

  StepDiagnostics d;
  d.innovation = l_min - eval.loss;
  d.innovation_covariance = S;
  d.gain_scale_x = gain;
  d.gain_scale_p = 0.0;
  d.grad_sq_norm = g2;
  return {std::move(out), d};
}

/// Prediction through F = [[I, I], [0, alpha I]] plus Q = diag(q_x2 I, q_p2 I).
inline FilterState dynamics_predict(const FilterState& state, const FilterConfig& cfg,
                                    double q_x2, double q_p2) {
  cfg.validate();
  if (!(q_x2 >= 0.0) || !(q_p2 >= 0.0)) {
    throw InvalidArgument("process variances must be nonnegative");
  }
  const double a = cfg.alpha;
  FilterState pred = state;
  pred.x = state.x + state.p;
  pred.p = a * state.p;
  pred.var_x = state.var_x + 2.0 * state.var_c + state.var_p + q_x2;
  pred.var_c = a * (state.var_c + state.var_p);
  pred.var_p = a * a * state.var_p + q_p2;
  return pred;
}

/// Kalman update of the stacked [x, p] state. `eval` must be computed at
/// the predicted mean pred.x.
inline std::pair<FilterState, StepDiagnostics> dynamics_update(const FilterState& pred,
                                                               const ObjectiveEvaluation& eval,
                                                               double l_min, double R,
                                                               double covariance_floor = 1e-12) {
  detail::check_observation(pred, eval, R);
  const Vector& g = eval.gradient;
  const double g2 = g.squaredNorm();
  const double e = l_min - eval.loss;
  const double S = pred.var_x * g2 + R;

  FilterState out = pred;
  out.x = pred.x + (pred.var_x * e / S) * g;
  out.p = pred.p + (pred.var_c * e / S) * g;
  out.var_x = std::max(pred.var_x * R / S, covariance_floor);
  out.var_c = pred.var_c * R / S;
  out.var_p = pred.var_p - pred.var_c * pred.var_c * g2 / S;
  out.iteration = pred.iteration + 1;
  detail::check_state(out);
  detail::check_psd(out, pred);

  StepDiagnostics d;
  d.innovation = e;
  d.innovation_covariance = S;
  d.gain_scale_x = -pred.var_x * e / S;
  d.gain_scale_p = -pred.var_c * e / S;
  d.grad_sq_norm = g2;
  return {std::move(out), d};
}

}  // namespace kafisto
