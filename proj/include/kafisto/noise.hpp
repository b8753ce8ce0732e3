#pragma once

// Online estimates of the measurement variance R and of the process
// variances (q_x2, q_p2) from exponential running averages.

#include <string>

#include "kafisto/core.hpp"

namespace kafisto {

enum class NoiseMode { Adaptive, Constant };

struct NoiseConfig {
  NoiseMode mode_R = NoiseMode::Adaptive;
  NoiseMode mode_Q = NoiseMode::Adaptive;
  double R = 1.0;  // used when mode_R is Constant
  double q_x2 = 0.0;
  double q_p2 = 0.0;
  double beta_R = 0.9;
  double beta_x = 0.9;

  void validate() const {
    if (mode_R == NoiseMode::Constant && !(R > 0.0)) {
      throw InvalidArgument("constant measurement variance R must be positive");
    }
    if (!(q_x2 >= 0.0) || !(q_p2 >= 0.0)) {
      throw InvalidArgument("initial process variances must be nonnegative");
    }
    if (!(beta_R > 0.0 && beta_R < 1.0)) throw InvalidArgument("beta_R must lie in (0, 1)");
    if (!(beta_x > 0.0 && beta_x < 1.0)) throw InvalidArgument("beta_x must lie in (0, 1)");
  }
};

struct NoiseState {
  double R = 1.0;
  double q_x2 = 0.0;
  double q_p2 = 0.0;
  Vector x_avg;
  Vector p_avg;
  double beta_R = 0.9;
  double beta_x = 0.9;
  NoiseMode mode_R = NoiseMode::Adaptive;
  NoiseMode mode_Q = NoiseMode::Adaptive;
  // Set when R is still to be seeded from the first observed minibatch.
  bool seed_R_pending = false;
};

inline double mean_square(const Vector& v) {
  if (v.size() == 0) throw InvalidArgument("per-sample loss vector is empty");
  return v.squaredNorm() / static_cast<double>(v.size());
}

/// R <- beta_R R + (1 - beta_R) mean(l_i^2). Identity in Constant mode.
inline NoiseState update_measurement_noise(NoiseState ns, const Vector& per_sample_losses) {
  if (per_sample_losses.size() == 0) throw InvalidArgument("per-sample loss vector is empty");
  if (ns.mode_R == NoiseMode::Constant) return ns;
  if (!all_finite(per_sample_losses)) throw InvalidArgument("per-sample losses must be finite");
  ns.R = ns.beta_R * ns.R + (1.0 - ns.beta_R) * mean_square(per_sample_losses);
  return ns;
}

/// Running average first, then q = |prev - avg|^2 / n against the fresh
/// average. The velocity block mirrors the parameter rule.
inline NoiseState update_process_noise(NoiseState ns, const Vector& x_prev, const Vector& p_prev) {
  if (x_prev.size() != ns.x_avg.size() || p_prev.size() != ns.p_avg.size()) {
    throw InvalidArgument("process-noise input length mismatch: expected " +
                          std::to_string(ns.x_avg.size()));
  }
  if (ns.mode_Q == NoiseMode::Constant) return ns;
  const double n = static_cast<double>(x_prev.size());
  const double b = ns.beta_x;
  ns.x_avg = b * ns.x_avg + (1.0 - b) * x_prev;
  ns.q_x2 = (x_prev - ns.x_avg).squaredNorm() / n;
  ns.p_avg = b * ns.p_avg + (1.0 - b) * p_prev;
  ns.q_p2 = (p_prev - ns.p_avg).squaredNorm() / n;
  return ns;
}

/// Seeds R from the first minibatch (Adaptive) or takes the configured
/// constant; the running averages start at x0 and zero velocity.
inline NoiseState init_noise_state(const ObjectiveEvaluation& first_eval, const Vector& x0,
                                   const NoiseConfig& cfg) {
  cfg.validate();
  NoiseState ns;
  ns.mode_R = cfg.mode_R;
  ns.mode_Q = cfg.mode_Q;
  ns.beta_R = cfg.beta_R;
  ns.beta_x = cfg.beta_x;
  ns.q_x2 = cfg.q_x2;
  ns.q_p2 = cfg.q_p2;
  ns.x_avg = x0;
  ns.p_avg = Vector::Zero(x0.size());
  if (cfg.mode_R == NoiseMode::Adaptive) {
    ns.R = mean_square(first_eval.per_sample_losses);
    // A batch of exact zeros would leave R = 0; fall back to the constant.
    if (!(ns.R > 0.0)) ns.R = cfg.R;
  } else {
    ns.R = cfg.R;
  }
  return ns;
}

/// Noise state before any observation: identical to init_noise_state except
/// that an adaptive R is seeded lazily from the first minibatch the
/// optimizer evaluates.
inline NoiseState make_noise_state(const Vector& x0, const NoiseConfig& cfg) {
  ObjectiveEvaluation none;
  NoiseConfig as_constant = cfg;
  as_constant.mode_R = NoiseMode::Constant;
  if (!(as_constant.R > 0.0)) as_constant.R = 1.0;
  NoiseState ns = init_noise_state(none, x0, as_constant);
  ns.mode_R = cfg.mode_R;
  ns.seed_R_pending = cfg.mode_R == NoiseMode::Adaptive;
  return ns;
}

/// Resolves a pending R seed with the losses of the first minibatch.
inline NoiseState seed_measurement_noise(NoiseState ns, const Vector& per_sample_losses) {
  if (!ns.seed_R_pending) return ns;
  const double r0 = mean_square(per_sample_losses);
  if (r0 > 0.0) ns.R = r0;
  ns.seed_R_pending = false;
  return ns;
}

}  // namespace kafisto
