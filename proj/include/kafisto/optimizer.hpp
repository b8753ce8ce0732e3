#pragma once

// One full KaFiStO iteration: predict, evaluate the minibatch at the
// predicted mean, resolve the target, update, then adapt the noise.

#include <functional>
#include <optional>
#include <utility>

#include "kafisto/filter.hpp"
#include "kafisto/layerwise.hpp"
#include "kafisto/noise.hpp"
#include "kafisto/target.hpp"

namespace kafisto {

using EvalFn = std::function<ObjectiveEvaluation(const Vector&)>;

struct KafistoStep {
  FilterState state;
  NoiseState noise;
  StepDiagnostics diagnostics;
  double loss = 0.0;  // minibatch loss at the predicted mean
  double R_used = 0.0;
};

/// `partition` selects the layer-wise update when non-null.
inline KafistoStep kafisto_step(const FilterState& state, const FilterConfig& cfg,
                                const NoiseState& noise, const TargetPolicy& policy,
                                const EvalFn& eval_fn, const BlockPartition* partition = nullptr) {
  const bool dynamics = cfg.variant == FilterVariant::Dynamics;
  FilterState pred = dynamics ? dynamics_predict(state, cfg, noise.q_x2, noise.q_p2)
                              : vanilla_predict(state, noise.q_x2);

  ObjectiveEvaluation eval = eval_fn(pred.x);
  const std::uint64_t k = state.iteration + 1;
  if (!std::isfinite(eval.loss) || !all_finite(eval.per_sample_losses)) {
    throw NumericalDivergence(k, "non-finite loss");
  }
  if (!all_finite(eval.gradient)) throw NumericalDivergence(k, "non-finite gradient");

  NoiseState ns = seed_measurement_noise(noise, eval.per_sample_losses);
  const double l_min = policy.resolve(eval.loss, state.iteration);

  std::pair<FilterState, StepDiagnostics> updated;
  if (partition != nullptr) {
    updated = blockwise_dynamics_update(pred, eval, *partition, l_min, ns.R, cfg.covariance_floor);
  } else if (dynamics) {
    updated = dynamics_update(pred, eval, l_min, ns.R, cfg.covariance_floor);
  } else {
    updated = vanilla_update(pred, eval, l_min, ns.R, cfg.covariance_floor);
  }

  KafistoStep out;
  out.R_used = ns.R;
  ns = update_measurement_noise(std::move(ns), eval.per_sample_losses);
  ns = update_process_noise(std::move(ns), state.x, state.p);
  out.state = std::move(updated.first);
  out.noise = std::move(ns);
  out.diagnostics = updated.second;
  out.loss = eval.loss;
  return out;
}

struct KafistoSettings {
  FilterConfig filter;
  NoiseConfig noise;
  TargetPolicy target = TargetPolicy::relative_epsilon(1.0);
  std::optional<BlockPartition> partition;
};

/// Stateful wrapper owning the filter and noise state of one run.
class KafistoOptimizer {
 public:
  KafistoOptimizer(const Vector& x0, KafistoSettings settings)
      : settings_(std::move(settings)),
        state_(FilterState::initial(x0, settings_.filter)),
        noise_(make_noise_state(x0, settings_.noise)) {
    if (settings_.partition && settings_.partition->dimension() != state_.size()) {
      throw InvalidArgument("layer partition does not match the parameter dimension");
    }
  }

  const KafistoStep& step(const EvalFn& eval_fn) {
    last_ = kafisto_step(state_, settings_.filter, noise_, settings_.target, eval_fn,
                         settings_.partition ? &*settings_.partition : nullptr);
    state_ = last_.state;
    noise_ = last_.noise;
    return last_;
  }

  const FilterState& state() const { return state_; }
  FilterState& mutable_state() { return state_; }
  const NoiseState& noise() const { return noise_; }
  const KafistoSettings& settings() const { return settings_; }

 private:
  KafistoSettings settings_;
  FilterState state_;
  NoiseState noise_;
  KafistoStep last_;
};

}  // namespace kafisto
