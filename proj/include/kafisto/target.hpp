#pragma once

#include <algorithm>
#include <iterator>
#include <cstdint>
#include <string>
#include <vector>

#include "kafisto/core.hpp"

namespace kafisto {

enum class TargetKind { Constant, RelativeEpsilon, FixedOffset };

struct EpsilonMilestone {
  std::uint64_t start_iteration = 0;
  double epsilon = 1.0;
};

/// Rule producing the observed target l_min each iteration.
class TargetPolicy {
 public:
  static TargetPolicy constant(double value = 0.0) {
    TargetPolicy p;
    p.kind_ = TargetKind::Constant;
    p.constant_value_ = value;
    return p;
  }

  /// Piecewise-constant epsilon, l_min = (1 - eps) * loss.
  static TargetPolicy relative_epsilon(std::vector<EpsilonMilestone> schedule) {
    if (schedule.empty()) throw InvalidArgument("epsilon schedule must be nonempty");
    for (std::size_t i = 0; i < schedule.size(); ++i) {
      const double eps = schedule[i].epsilon;
      if (!(eps > 0.0 && eps <= 1.0)) {
        throw InvalidArgument("epsilon must lie in (0, 1], got " + std::to_string(eps));
      }
      if (i > 0 && schedule[i].start_iteration <= schedule[i - 1].start_iteration) {
        throw InvalidArgument("epsilon schedule must be strictly increasing in start iteration");
      }
    }
    TargetPolicy p;
    p.kind_ = TargetKind::RelativeEpsilon;
    p.schedule_ = std::move(schedule);
    return p;
  }

  static TargetPolicy relative_epsilon(double epsilon) {
    return relative_epsilon({EpsilonMilestone{0, epsilon}});
  }

  /// l_min = loss - u, for losses without a known lower bound.
  static TargetPolicy fixed_offset(double offset_u) {
    if (!(offset_u > 0.0)) throw InvalidArgument("target offset must be positive");
    TargetPolicy p;
    p.kind_ = TargetKind::FixedOffset;
    p.offset_u_ = offset_u;
    return p;
  }

  TargetKind kind() const { return kind_; }
  double constant_value() const { return constant_value_; }
  double offset() const { return offset_u_; }
  const std::vector<EpsilonMilestone>& schedule() const { return schedule_; }

  double epsilon_at(std::uint64_t iteration) const {
    if (schedule_.empty()) throw InvalidArgument("policy has no epsilon schedule");
    if (iteration < schedule_.front().start_iteration) {
      throw InvalidArgument("iteration " + std::to_string(iteration) +
                            " precedes the first epsilon milestone");
    }
    auto it = std::upper_bound(
        schedule_.begin(), schedule_.end(), iteration,
        [](std::uint64_t k, const EpsilonMilestone& m) { return k < m.start_iteration; });
    return std::prev(it)->epsilon;
  }

  double resolve(double current_loss, std::uint64_t iteration) const {
    if (!std::isfinite(current_loss)) throw InvalidArgument("current loss must be finite");
    switch (kind_) {
      case TargetKind::Constant:
        return constant_value_;
      case TargetKind::RelativeEpsilon:
        return (1.0 - epsilon_at(iteration)) * current_loss;
      case TargetKind::FixedOffset:
        return current_loss - offset_u_;
    }
    return constant_value_;
  }

 private:
  TargetKind kind_ = TargetKind::Constant;
  double constant_value_ = 0.0;
  double offset_u_ = 4.0;
  std::vector<EpsilonMilestone> schedule_;
};

inline double resolve_target(const TargetPolicy& policy, double current_loss,
                             std::uint64_t iteration) {
  return policy.resolve(current_loss, iteration);
}

}  // namespace kafisto
