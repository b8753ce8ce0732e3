#pragma once

// Block-partitioned update: every parameter block gets its own innovation
// covariance from its own gradient, and the shared covariance scalars
// contract by the largest per-block ratio |g_i|^2 / S_i.

#include <algorithm>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "kafisto/filter.hpp"

namespace kafisto {

struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool operator==(const IndexRange&) const = default;
};

class BlockPartition {
 public:
  BlockPartition() = default;

  /// Validates that `blocks` are disjoint, nonempty and cover [0, n).
  BlockPartition(std::vector<IndexRange> blocks, std::size_t n) : blocks_(std::move(blocks)), n_(n) {
    if (blocks_.empty()) throw InvalidArgument("partition needs at least one block");
    std::vector<IndexRange> sorted = blocks_;
    std::sort(sorted.begin(), sorted.end(),
              [](const IndexRange& a, const IndexRange& b) { return a.begin < b.begin; });
    std::size_t next = 0;
    for (const auto& r : sorted) {
      if (r.begin != next || r.end <= r.begin) {
        throw InvalidArgument("blocks must be nonempty, disjoint and cover [0, n)");
      }
      next = r.end;
    }
    if (next != n_) throw InvalidArgument("blocks do not cover [0, " + std::to_string(n_) + ")");
  }

  const std::vector<IndexRange>& blocks() const { return blocks_; }
  std::size_t count() const { return blocks_.size(); }
  std::size_t dimension() const { return n_; }

 private:
  std::vector<IndexRange> blocks_;
  std::size_t n_ = 0;
};

/// Consecutive ranges, one per layer.
inline BlockPartition partition_parameters(const std::vector<std::size_t>& layer_sizes) {
  if (layer_sizes.empty()) throw InvalidArgument("layer size list is empty");
  std::vector<IndexRange> blocks;
  blocks.reserve(layer_sizes.size());
  std::size_t offset = 0;
  for (std::size_t s : layer_sizes) {
    if (s == 0) throw InvalidArgument("layer sizes must be positive");
    blocks.push_back({offset, offset + s});
    offset += s;
  }
  return BlockPartition(std::move(blocks), offset);
}

/// Layer-wise variant of dynamics_update. Vanilla states (var_c = var_p = 0,
/// p = 0) pass through unchanged in the velocity block.
inline std::pair<FilterState, StepDiagnostics> blockwise_dynamics_update(
    const FilterState& pred, const ObjectiveEvaluation& eval, const BlockPartition& part,
    double l_min, double R, double covariance_floor = 1e-12) {
  detail::check_observation(pred, eval, R);
  if (part.dimension() != pred.size()) {
    throw InvalidArgument("partition dimension does not match the state");
  }
  const Vector& g = eval.gradient;
  const double e = l_min - eval.loss;

  FilterState out = pred;
  double rho = 0.0;
  double max_gain = 0.0;
  double max_gain_p = 0.0;
  double S_at_rho = R;
  for (const auto& b : part.blocks()) {
    const auto start = static_cast<Eigen::Index>(b.begin);
    const auto len = static_cast<Eigen::Index>(b.size());
    const auto gb = g.segment(start, len);
    const double g2 = gb.squaredNorm();
    const double S = pred.var_x * g2 + R;
    out.x.segment(start, len) = pred.x.segment(start, len) + (pred.var_x * e / S) * gb;
    out.p.segment(start, len) = pred.p.segment(start, len) + (pred.var_c * e / S) * gb;
    const double ratio = g2 / S;
    if (ratio > rho) {
      rho = ratio;
      S_at_rho = S;
    }
    max_gain = std::max(max_gain, std::abs(pred.var_x * e / S));
    max_gain_p = std::max(max_gain_p, std::abs(pred.var_c * e / S));
  }

  const double shrink = 1.0 - pred.var_x * rho;
  out.var_x = std::max(pred.var_x * shrink, covariance_floor);
  out.var_c = pred.var_c * shrink;
  out.var_p = pred.var_p - pred.var_c * pred.var_c * rho;
  out.iteration = pred.iteration + 1;
  detail::check_state(out);
  detail::check_psd(out, pred);

  StepDiagnostics d;
  d.innovation = e;
  d.innovation_covariance = S_at_rho;
  d.gain_scale_x = e <= 0.0 ? max_gain : -max_gain;
  d.gain_scale_p = (e <= 0.0) == (pred.var_c >= 0.0) ? max_gain_p : -max_gain_p;
  d.grad_sq_norm = g.squaredNorm();
  return {std::move(out), d};
}

}  // namespace kafisto
