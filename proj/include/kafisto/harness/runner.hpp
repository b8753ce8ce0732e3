#pragma once

// Deterministic training loop shared by every optimizer. All optimizers
// consume the same minibatch sequence for a given seed, so runs compare
// batch-for-batch.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <optional>
#include <string>

#include "kafisto/baselines.hpp"
#include "kafisto/harness/config.hpp"
#include "kafisto/harness/metrics.hpp"
#include "kafisto/layerwise.hpp"
#include "kafisto/objectives.hpp"
#include "kafisto/optimizer.hpp"

namespace kafisto::harness {

struct StepRecord {
  double loss = 0.0;
  double grad_sq_norm = 0.0;
  double var_x = 0.0, var_c = 0.0, var_p = 0.0;
  double R = 0.0, q_x2 = 0.0, q_p2 = 0.0;
  double gain_scale_x = 0.0;
};

class Stepper {
 public:
  virtual ~Stepper() = default;
  virtual StepRecord step(const EvalFn& eval_fn) = 0;
  virtual const Vector& params() const = 0;
  virtual void scale_params(double factor) = 0;
};

class KafistoStepper final : public Stepper {
 public:
  KafistoStepper(const Vector& x0, KafistoSettings settings) : opt_(x0, std::move(settings)) {}

  StepRecord step(const EvalFn& eval_fn) override {
    const auto& r = opt_.step(eval_fn);
    StepRecord rec;
    rec.loss = r.loss;
    rec.grad_sq_norm = r.diagnostics.grad_sq_norm;
    rec.var_x = r.state.var_x;
    rec.var_c = r.state.var_c;
    rec.var_p = r.state.var_p;
    rec.R = r.noise.R;
    rec.q_x2 = r.noise.q_x2;
    rec.q_p2 = r.noise.q_p2;
    rec.gain_scale_x = r.diagnostics.gain_scale_x;
    return rec;
  }
  const Vector& params() const override { return opt_.state().x; }
  void scale_params(double factor) override { opt_.mutable_state().x *= factor; }

 private:
  KafistoOptimizer opt_;
};

class BaselineStepper final : public Stepper {
 public:
  BaselineStepper(const Vector& x0, OptimizerKind kind, const BaselineHyper& hyper)
      : kind_(kind), state_(BaselineState::initial(x0, hyper)) {}

  StepRecord step(const EvalFn& eval_fn) override {
    const ObjectiveEvaluation ev = eval_fn(state_.x);
    switch (kind_) {
      case OptimizerKind::Sgd: state_ = sgd_step(state_, ev); break;
      case OptimizerKind::Momentum: state_ = momentum_step(state_, ev); break;
      case OptimizerKind::Adam: state_ = adam_step(state_, ev); break;
      default: throw InvalidArgument("not a baseline optimizer");
    }
    StepRecord rec;
    rec.loss = ev.loss;
    rec.grad_sq_norm = ev.gradient.squaredNorm();
    rec.gain_scale_x = state_.hyper.learning_rate;
    return rec;
  }
  const Vector& params() const override { return state_.x; }
  void scale_params(double factor) override { state_.x *= factor; }

 private:
  OptimizerKind kind_;
  BaselineState state_;
};

inline std::unique_ptr<Stepper> make_stepper(const RunConfig& cfg, const Objective& obj,
                                             const Vector& x0) {
  if (!is_kafisto(cfg.optimizer)) {
    return std::make_unique<BaselineStepper>(x0, cfg.optimizer, cfg.baseline);
  }
  KafistoSettings s;
  s.filter = cfg.filter;
  s.noise = cfg.noise;
  s.target = cfg.target;
  if (cfg.optimizer == OptimizerKind::KafistoLayerwise) {
    s.partition = partition_parameters(cfg.layers.empty() ? obj.layer_sizes() : cfg.layers);
  }
  return std::make_unique<KafistoStepper>(x0, std::move(s));
}

struct RunResult {
  MetricsTable table;
  Vector initial_x;
  Vector final_x;
  std::optional<std::string> divergence;
  double final_full_loss = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> final_accuracy;
  std::optional<double> initial_distance;  // to the known optimum, when there is one
  std::optional<double> final_distance;

  bool diverged() const { return divergence.has_value(); }
};

/// Runs the configured loop. Divergence ends the run with a marker row
/// instead of propagating.
inline RunResult run_experiment(const RunConfig& cfg, const ObjectivePtr& objective = nullptr) {
  cfg.validate();
  const ObjectivePtr obj = objective ? objective : make_objective(cfg.objective);
  Rng init_rng = make_stream(cfg.seed, "init");
  const Vector x0 = obj->initial_point(init_rng);
  MinibatchSampler sampler(obj->samples(), cfg.batch_size, derive_seed(cfg.seed, "shuffle"));
  auto stepper = make_stepper(cfg, *obj, x0);

  RunResult res;
  res.initial_x = x0;
  const auto optimum = obj->optimum();
  if (optimum) res.initial_distance = (x0 - *optimum).norm();

  const auto t0 = std::chrono::steady_clock::now();
  const double decay = 1.0 - cfg.weight_decay;
  for (std::uint64_t k = 1; k <= cfg.iterations; ++k) {
    const auto batch = sampler.next();
    MetricsRow row;
    row.iteration = k;
    row.epoch = sampler.epoch();
    const EvalFn eval_fn = [&](const Vector& x) { return obj->evaluate(x, batch); };
    StepRecord rec;
    try {
      rec = stepper->step(eval_fn);
    } catch (const NumericalDivergence& e) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      row.train_loss = row.grad_sq_norm = nan;
      row.var_x = row.var_c = row.var_p = row.R = row.q_x2 = row.q_p2 = row.gain_scale_x = nan;
      res.table.append(row);
      res.divergence = e.what();
      break;
    }
    if (cfg.weight_decay > 0.0) stepper->scale_params(decay);

    row.train_loss = rec.loss;
    row.grad_sq_norm = rec.grad_sq_norm;
    row.var_x = rec.var_x;
    row.var_c = rec.var_c;
    row.var_p = rec.var_p;
    row.R = rec.R;
    row.q_x2 = rec.q_x2;
    row.q_p2 = rec.q_p2;
    row.gain_scale_x = rec.gain_scale_x;
    const bool periodic = cfg.full_batch_every > 0 && k % cfg.full_batch_every == 0;
    if (periodic || k == cfg.iterations) row.full_batch_loss = obj->full_loss(stepper->params());
    if (cfg.log_timing) {
      row.elapsed_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    res.table.append(row);
  }

  res.final_x = stepper->params();
  if (!res.diverged()) {
    res.final_full_loss = obj->full_loss(res.final_x);
    if (!std::isfinite(res.final_full_loss)) res.divergence = "non-finite final loss";
  }
  res.final_accuracy = obj->accuracy(res.final_x);
  if (optimum) res.final_distance = (res.final_x - *optimum).norm();
  return res;
}

/// Writes metrics.csv and a couple of default plots into `dir`.
inline void write_outputs(const RunResult& res, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir.string() + ": " + ec.message());
  auto write = [&](const std::filesystem::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    f << text;
    if (!f) throw std::runtime_error("write failed for " + p.string());
  };
  write(dir / "metrics.csv", emit_csv(res.table));
  write(dir / "train_loss.svg", emit_plot(res.table, "train_loss", {.log_scale = true}));
  write(dir / "gain_scale_x.svg", emit_plot(res.table, "gain_scale_x"));
  write(dir / "var_x.svg", emit_plot(res.table, "var_x", {.log_scale = true}));
}

}  // namespace kafisto::harness
