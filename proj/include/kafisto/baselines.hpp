#pragma once

// Reference first-order optimizers: plain SGD, heavy-ball momentum and Adam.

#include <cmath>
#include <cstdint>
#include <string>

#include "kafisto/core.hpp"

namespace kafisto {

struct BaselineHyper {
  double learning_rate = 0.01;
  double momentum = 0.9;  // heavy-ball rate
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("momentum must lie in [0, 1)");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw InvalidArgument("beta1 must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw InvalidArgument("beta2 must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw InvalidArgument("epsilon must be positive");
  }
};

struct BaselineState {
  Vector x;
  Vector velocity;   // momentum buffer, or Adam first moment
  Vector second;     // Adam second moment
  std::uint64_t step = 0;
  BaselineHyper hyper;

  static BaselineState initial(const Vector& x0, const BaselineHyper& hyper) {
    hyper.validate();
    BaselineState s;
    s.x = x0;
    s.velocity = Vector::Zero(x0.size());
    s.second = Vector::Zero(x0.size());
    s.hyper = hyper;
    return s;
  }
};

namespace detail {

inline void check_baseline_input(const BaselineState& s, const ObjectiveEvaluation& eval) {
  if (eval.gradient.size() != s.x.size()) throw InvalidArgument("gradient length mismatch");
  if (!std::isfinite(eval.loss) || !all_finite(eval.gradient)) {
    throw NumericalDivergence(s.step + 1, "non-finite loss or gradient");
  }
}

inline void check_baseline_output(const BaselineState& s) {
  if (!all_finite(s.x) || !all_finite(s.velocity) || !all_finite(s.second)) {
    throw NumericalDivergence(s.step, "non-finite optimizer state");
  }
}

}  // namespace detail

/// x <- x - lr g
inline BaselineState sgd_step(BaselineState s, const ObjectiveEvaluation& eval) {
  detail::check_baseline_input(s, eval);
  s.x -= s.hyper.learning_rate * eval.gradient;
  ++s.step;
  detail::check_baseline_output(s);
  return s;
}

/// v <- a v - lr g;  x <- x + v
inline BaselineState momentum_step(BaselineState s, const ObjectiveEvaluation& eval) {
  detail::check_baseline_input(s, eval);
  s.velocity = s.hyper.momentum * s.velocity - s.hyper.learning_rate * eval.gradient;
  s.x += s.velocity;
  ++s.step;
  detail::check_baseline_output(s);
  return s;
}

/// Bias-corrected Adam.
inline BaselineState adam_step(BaselineState s, const ObjectiveEvaluation& eval) {
  detail::check_baseline_input(s, eval);
  const auto& h = s.hyper;
  const Vector& g = eval.gradient;
  ++s.step;
  s.velocity = h.beta1 * s.velocity + (1.0 - h.beta1) * g;
  s.second = h.beta2 * s.second + (1.0 - h.beta2) * g.cwiseAbs2();
  const double k = static_cast<double>(s.step);
  const double c1 = 1.0 - std::pow(h.beta1, k);
  const double c2 = 1.0 - std::pow(h.beta2, k);
  const Vector m_hat = s.velocity / c1;
  const Vector v_hat = s.second / c2;
  s.x.array() -= h.learning_rate * m_hat.array() / (v_hat.array().sqrt() + h.epsilon);
  detail::check_baseline_output(s);
  return s;
}

}  // namespace kafisto
