#pragma once

#include <array>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "langshape/frogger.hpp"
#include "langshape/rng.hpp"

namespace langshape {

/// Probabilities over the five actions. The currency of every policy here.
struct ActionDistribution {
  std::array<double, 5> probs{};

  int argmax() const;
  static ActionDistribution uniform();
};

/// Softmax of values/tau, computed with max-subtraction. Entries are clamped
/// strictly positive so downstream products never collapse to all-zero.
ActionDistribution boltzmann(const std::array<double, 5>& values, double tau);

/// Greedy over values with uniform mass on the tied maxima.
ActionDistribution greedy_distribution(const std::array<double, 5>& values);

struct TemperatureSchedule {
  enum class Shape { Constant, Linear, Geometric };

  double tau0 = 0.2;
  double tau_max = 5.0;
  long horizon = 1;  // episodes until tau_max is reached
  Shape shape = Shape::Linear;

  double at(long episode) const;
  void validate() const;

  static Shape shape_from_name(const std::string& name);  // throws ConfigError
  static const char* shape_name(Shape s);
};

struct QTable {
  double alpha = 0.1;
  double gamma = 0.95;
  double initial_value = 0.0;
  std::unordered_map<int64_t, std::array<double, 5>> entries;

  std::array<double, 5> values(const StateKey& key) const;
  double max_value(const StateKey& key) const;

  /// Watkins update: Q += alpha * (r + gamma * max_a' Q(next) - Q).
  /// The bootstrap term is zero for terminal transitions.
  void update(const StateKey& key, Action action, double reward, const StateKey& next,
              bool terminal);
};

std::string qtable_to_text(const QTable& table);
QTable qtable_from_text(const std::string& text);

struct EpisodeLimits {
  int step_cap = 200;
};

struct EpisodeStepRecord {
  StateKey key;
  Action action = Action::Up;
  double reward = 0.0;
};

struct EpisodeTrace {
  std::vector<EpisodeStepRecord> steps;
  double total_reward = 0.0;
  Terminal end = Terminal::None;  // None when the step cap was hit
};

/// Yields the exploration distribution for the current state. Plain
/// Boltzmann for the Q-only agent, shaped distributions otherwise.
using ActionSource = std::function<ActionDistribution(const GameState&)>;

/// Runs one training episode from the map's start cell, applying the Q
/// update online after each step.
EpisodeTrace run_episode(const FroggerMap& map, const Dynamics& dynamics, QTable& table,
                         const ActionSource& source, const EpisodeLimits& limits, Rng& rng);

/// Mean total reward of `episodes` greedy rollouts. Never learns, never
/// consults a critique; ties in Q break uniformly at random.
double evaluate_policy(const FroggerMap& map, const Dynamics& dynamics, const QTable& table,
                       int episodes, const EpisodeLimits& limits, Rng& rng);

}  // namespace langshape
