#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "langshape/frogger.hpp"
#include "langshape/rl.hpp"

namespace langshape {

/// Elementwise product of two strictly positive distributions, renormalized.
/// Combining with the uniform distribution is the identity.
ActionDistribution combine(const ActionDistribution& prq, const ActionDistribution& prc);

/// Positive-feedback baseline built from demonstrated (view, action) pairs.
/// Scores are raw occurrence counts pushed through a Boltzmann whose
/// temperature follows the same schedule as the language critique.
struct ObservationCritique {
  std::unordered_map<uint32_t, std::array<double, 5>> counts;
  size_t total = 0;
  TemperatureSchedule schedule;

  static ObservationCritique from_pairs(const std::vector<ViewActionPair>& pairs,
                                        const TemperatureSchedule& schedule);

  /// Unseen views count zero everywhere and therefore come out uniform.
  ActionDistribution critique(const LocalView& view, long episode) const;
};

using CritiqueFn = std::function<ActionDistribution(const LocalView&, long episode)>;

/// Pr_q plus at most one critique side. An empty critique function means the
/// plain Q-only agent.
struct ShapedPolicy {
  const QTable* table = nullptr;
  double q_temperature = 1.0;
  CritiqueFn critique;
};

ActionDistribution shaped_action_distribution(const GameState& state, const ShapedPolicy& policy,
                                              long episode);

}  // namespace langshape
