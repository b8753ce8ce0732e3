#pragma once

// Run configuration and its YAML loader. The schema is a strict key-value
// document: unknown keys are rejected with their path and line.
//
//   name: quadratic-default          # optional label
//   seed: 7                          # master seed
//   output_dir: out/quadratic        # optional
//   objective:
//     kind: noisy_quadratic          # | stochastic_rosenbrock | logistic_regression | tiny_mlp
//     dimension: 10
//     samples: 512
//     noise_scale: 0.1
//     condition_number: 10
//     init_scale: 1.0
//     separation: 2.0
//     hidden: 8
//     blobs_per_class: 2
//   optimizer:
//     name: kafisto-dynamics         # | kafisto-vanilla | kafisto-layerwise | sgd | momentum | adam
//     alpha: 0.9
//     var_x0: 0.1
//     var_p0: 0.1
//     var_c0: 0.0
//     covariance_floor: 1e-12
//     layers: [16, 8, 16, 2]         # layer-wise only; default is the objective's layout
//     learning_rate: 0.01            # baselines
//     momentum: 0.9
//     beta1: 0.9
//     beta2: 0.999
//     epsilon: 1e-8
//     weight_decay: 0.0
//   noise:
//     measurement: adaptive          # | constant
//     R: 1.0
//     process: adaptive              # | constant
//     q_x2: 0.0
//     q_p2: 0.0
//     beta_R: 0.9
//     beta_x: 0.9
//   target:
//     kind: relative_epsilon         # | constant | fixed_offset
//     value: 0.0                     # constant
//     offset: 4.0                    # fixed_offset
//     schedule:                      # relative_epsilon; milestones in epochs or iterations
//       - {epoch: 0, epsilon: 1.0}
//       - {epoch: 30, epsilon: 0.1}
//   training:
//     batch_size: 32
//     iterations: 2000               # or epochs: 50
//     full_batch_every: 0            # 0: only after the last iteration
//     log_timing: false              # wall-clock column; off keeps output bit-stable

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "kafisto/baselines.hpp"
#include "kafisto/filter.hpp"
#include "kafisto/noise.hpp"
#include "kafisto/objectives.hpp"
#include "kafisto/target.hpp"

namespace kafisto::harness {

class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

enum class OptimizerKind { KafistoVanilla, KafistoDynamics, KafistoLayerwise, Sgd, Momentum, Adam };

inline std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::KafistoVanilla: return "kafisto-vanilla";
    case OptimizerKind::KafistoDynamics: return "kafisto-dynamics";
    case OptimizerKind::KafistoLayerwise: return "kafisto-layerwise";
    case OptimizerKind::Sgd: return "sgd";
    case OptimizerKind::Momentum: return "momentum";
    case OptimizerKind::Adam: return "adam";
  }
  return "unknown";
}

inline bool is_kafisto(OptimizerKind k) {
  return k == OptimizerKind::KafistoVanilla || k == OptimizerKind::KafistoDynamics ||
         k == OptimizerKind::KafistoLayerwise;
}

struct RunConfig {
  std::string name = "run";
  std::uint64_t seed = 0;
  std::string output_dir;

  ObjectiveSpec objective;

  OptimizerKind optimizer = OptimizerKind::KafistoDynamics;
  FilterConfig filter;
  NoiseConfig noise;
  BaselineHyper baseline;
  std::vector<std::size_t> layers;
  double weight_decay = 0.0;

  TargetPolicy target = TargetPolicy::relative_epsilon(1.0);

  std::size_t batch_size = 32;
  std::uint64_t iterations = 1;
  std::size_t full_batch_every = 0;
  bool log_timing = false;

  std::size_t iterations_per_epoch() const {
    return (objective.samples + batch_size - 1) / batch_size;
  }

  void validate() const {
    objective.validate();
    if (batch_size < 1) throw ConfigError("training.batch_size must be >= 1");
    if (batch_size > objective.samples) {
      throw ConfigError("training.batch_size exceeds objective.samples");
    }
    if (iterations < 1) throw ConfigError("training budget must be >= 1 iteration");
    if (!(weight_decay >= 0.0 && weight_decay < 1.0)) {
      throw ConfigError("optimizer.weight_decay must lie in [0, 1)");
    }
    filter.validate();
    noise.validate();
    if (!is_kafisto(optimizer)) baseline.validate();
  }
};

namespace detail {

inline std::string where(const YAML::Node& n) {
  const auto m = n.Mark();
  if (m.is_null()) return "";
  return " (line " + std::to_string(m.line + 1) + ")";
}

inline void reject_unknown(const YAML::Node& node, const std::string& path,
                           const std::set<std::string>& allowed) {
  if (!node.IsMap()) throw ConfigError("'" + path + "' must be a mapping" + where(node));
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) {
      throw ConfigError("unknown key '" + (path.empty() ? key : path + "." + key) + "'" +
                        where(kv.first));
    }
  }
}

template <typename T>
T get(const YAML::Node& node, const std::string& key, const std::string& path, T fallback) {
  const YAML::Node v = node[key];
  if (!v) return fallback;
  try {
    return v.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError("invalid value for '" + path + "." + key + "'" + where(v));
  }
}

inline NoiseMode noise_mode(const YAML::Node& node, const std::string& key, NoiseMode fallback) {
  const auto s = get<std::string>(node, key, "noise", fallback == NoiseMode::Adaptive ? "adaptive" : "constant");
  if (s == "adaptive") return NoiseMode::Adaptive;
  if (s == "constant") return NoiseMode::Constant;
  throw ConfigError("noise." + key + " must be 'adaptive' or 'constant'" + where(node[key]));
}

inline OptimizerKind optimizer_kind(const std::string& s, const YAML::Node& at) {
  for (auto k : {OptimizerKind::KafistoVanilla, OptimizerKind::KafistoDynamics,
                 OptimizerKind::KafistoLayerwise, OptimizerKind::Sgd, OptimizerKind::Momentum,
                 OptimizerKind::Adam}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown optimizer.name '" + s + "'" + where(at));
}

}  // namespace detail

/// Parses and validates a YAML run configuration.
inline RunConfig load_config(const std::string& text) {
  using namespace detail;
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError("parse error at line " + std::to_string(e.mark.line + 1) + ", column " +
                      std::to_string(e.mark.column + 1) + ": " + e.msg);
  }
  if (!root || root.IsNull()) throw ConfigError("configuration document is empty");
  reject_unknown(root, "", {"name", "seed", "output_dir", "objective", "optimizer", "noise", "target", "training"});

  RunConfig cfg;
  cfg.name = get<std::string>(root, "name", "", cfg.name);
  cfg.seed = get<std::uint64_t>(root, "seed", "", cfg.seed);
  cfg.output_dir = get<std::string>(root, "output_dir", "", cfg.output_dir);

  const YAML::Node obj = root["objective"];
  if (!obj) throw ConfigError("missing required section 'objective'");
  reject_unknown(obj, "objective", {"kind", "dimension", "samples", "noise_scale", "condition_number",
                                    "init_scale", "separation", "hidden", "blobs_per_class"});
  if (!obj["kind"]) throw ConfigError("missing required key 'objective.kind'" + where(obj));
  try {
    cfg.objective.kind = objective_kind_from_string(obj["kind"].as<std::string>());
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("objective.kind: ") + e.what() + where(obj["kind"]));
  }
  auto& os = cfg.objective;
  os.dimension = get<std::size_t>(obj, "dimension", "objective", os.dimension);
  os.samples = get<std::size_t>(obj, "samples", "objective", os.samples);
  os.noise_scale = get<double>(obj, "noise_scale", "objective", os.noise_scale);
  os.condition_number = get<double>(obj, "condition_number", "objective", os.condition_number);
  os.init_scale = get<double>(obj, "init_scale", "objective", os.init_scale);
  os.separation = get<double>(obj, "separation", "objective", os.separation);
  os.hidden = get<std::size_t>(obj, "hidden", "objective", os.hidden);
  os.blobs_per_class = get<std::size_t>(obj, "blobs_per_class", "objective", os.blobs_per_class);
  os.seed = derive_seed(cfg.seed, "data");

  const YAML::Node opt = root["optimizer"];
  if (!opt) throw ConfigError("missing required section 'optimizer'");
  reject_unknown(opt, "optimizer", {"name", "alpha", "var_x0", "var_p0", "var_c0", "covariance_floor",
                                    "layers", "learning_rate", "momentum", "beta1", "beta2",
                                    "epsilon", "weight_decay"});
  if (!opt["name"]) throw ConfigError("missing required key 'optimizer.name'" + where(opt));
  cfg.optimizer = optimizer_kind(opt["name"].as<std::string>(), opt["name"]);
  auto& fc = cfg.filter;
  fc.variant = cfg.optimizer == OptimizerKind::KafistoVanilla ? FilterVariant::Vanilla
                                                              : FilterVariant::Dynamics;
  fc.alpha = get<double>(opt, "alpha", "optimizer", fc.alpha);
  fc.var_x0 = get<double>(opt, "var_x0", "optimizer", fc.var_x0);
  fc.var_p0 = get<double>(opt, "var_p0", "optimizer", fc.var_p0);
  fc.var_c0 = get<double>(opt, "var_c0", "optimizer", fc.var_c0);
  fc.covariance_floor = get<double>(opt, "covariance_floor", "optimizer", fc.covariance_floor);
  cfg.layers = get<std::vector<std::size_t>>(opt, "layers", "optimizer", {});
  auto& bh = cfg.baseline;
  bh.learning_rate = get<double>(opt, "learning_rate", "optimizer", bh.learning_rate);
  bh.momentum = get<double>(opt, "momentum", "optimizer", bh.momentum);
  bh.beta1 = get<double>(opt, "beta1", "optimizer", bh.beta1);
  bh.beta2 = get<double>(opt, "beta2", "optimizer", bh.beta2);
  bh.epsilon = get<double>(opt, "epsilon", "optimizer", bh.epsilon);
  cfg.weight_decay = get<double>(opt, "weight_decay", "optimizer", cfg.weight_decay);

  if (const YAML::Node nz = root["noise"]) {
    reject_unknown(nz, "noise", {"measurement", "R", "process", "q_x2", "q_p2", "beta_R", "beta_x"});
    auto& nc = cfg.noise;
    nc.mode_R = noise_mode(nz, "measurement", nc.mode_R);
    nc.mode_Q = noise_mode(nz, "process", nc.mode_Q);
    nc.R = get<double>(nz, "R", "noise", nc.R);
    nc.q_x2 = get<double>(nz, "q_x2", "noise", nc.q_x2);
    nc.q_p2 = get<double>(nz, "q_p2", "noise", nc.q_p2);
    nc.beta_R = get<double>(nz, "beta_R", "noise", nc.beta_R);
    nc.beta_x = get<double>(nz, "beta_x", "noise", nc.beta_x);
  }

  const YAML::Node tr = root["training"];
  if (!tr) throw ConfigError("missing required section 'training'");
  reject_unknown(tr, "training", {"batch_size", "iterations", "epochs", "full_batch_every", "log_timing"});
  const auto batch = get<long long>(tr, "batch_size", "training", 32);
  if (batch < 1) throw ConfigError("training.batch_size must be >= 1" + where(tr["batch_size"]));
  cfg.batch_size = static_cast<std::size_t>(batch);
  if (tr["iterations"] && tr["epochs"]) {
    throw ConfigError("training: give either 'iterations' or 'epochs', not both" + where(tr));
  }
  if (!tr["iterations"] && !tr["epochs"]) {
    throw ConfigError("training: a budget ('iterations' or 'epochs') is required" + where(tr));
  }
  cfg.full_batch_every = get<std::size_t>(tr, "full_batch_every", "training", 0);
  cfg.log_timing = get<bool>(tr, "log_timing", "training", false);
  if (cfg.batch_size > cfg.objective.samples) {
    throw ConfigError("training.batch_size exceeds objective.samples" + where(tr["batch_size"]));
  }
  const std::uint64_t per_epoch = cfg.iterations_per_epoch();
  if (tr["iterations"]) {
    const auto it = get<long long>(tr, "iterations", "training", 0);
    if (it < 1) throw ConfigError("training.iterations must be >= 1" + where(tr["iterations"]));
    cfg.iterations = static_cast<std::uint64_t>(it);
  } else {
    const auto ep = get<long long>(tr, "epochs", "training", 0);
    if (ep < 1) throw ConfigError("training.epochs must be >= 1" + where(tr["epochs"]));
    cfg.iterations = static_cast<std::uint64_t>(ep) * per_epoch;
  }

  if (const YAML::Node tg = root["target"]) {
    reject_unknown(tg, "target", {"kind", "value", "offset", "schedule"});
    const auto kind = get<std::string>(tg, "kind", "target", "relative_epsilon");
    try {
      if (kind == "constant") {
        cfg.target = TargetPolicy::constant(get<double>(tg, "value", "target", 0.0));
      } else if (kind == "fixed_offset") {
        cfg.target = TargetPolicy::fixed_offset(get<double>(tg, "offset", "target", 4.0));
      } else if (kind == "relative_epsilon") {
        std::vector<EpsilonMilestone> schedule;
        if (const YAML::Node sch = tg["schedule"]) {
          if (!sch.IsSequence()) throw ConfigError("target.schedule must be a list" + where(sch));
          for (const auto& entry : sch) {
            reject_unknown(entry, "target.schedule[]", {"epoch", "iteration", "epsilon"});
            if (entry["epoch"] && entry["iteration"]) {
              throw ConfigError("schedule entry: give 'epoch' or 'iteration', not both" + where(entry));
            }
            EpsilonMilestone m;
            m.epsilon = get<double>(entry, "epsilon", "target.schedule[]", 1.0);
            if (entry["epoch"]) {
              m.start_iteration = get<std::uint64_t>(entry, "epoch", "target.schedule[]", 0) * per_epoch;
            } else {
              m.start_iteration = get<std::uint64_t>(entry, "iteration", "target.schedule[]", 0);
            }
            schedule.push_back(m);
          }
        } else {
          schedule.push_back({0, 1.0});
        }
        cfg.target = TargetPolicy::relative_epsilon(std::move(schedule));
      } else {
        throw ConfigError("target.kind must be constant, relative_epsilon or fixed_offset" +
                          where(tg["kind"]));
      }
    } catch (const ConfigError&) {
      throw;
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("target: ") + e.what() + where(tg));
    }
  }

  try {
    cfg.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

}  // namespace kafisto::harness
