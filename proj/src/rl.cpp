#include "langshape/rl.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "langshape/errors.hpp"

namespace langshape {

namespace {
// Keeps Boltzmann outputs strictly positive even when exp underflows.
constexpr double kProbFloor = 1e-300;
}  // namespace

int ActionDistribution::argmax() const {
  int best = 0;
  for (int i = 1; i < 5; ++i)
    if (probs[i] > probs[best]) best = i;
  return best;
}

ActionDistribution ActionDistribution::uniform() {
  ActionDistribution d;
  d.probs.fill(0.2);
  return d;
}

ActionDistribution boltzmann(const std::array<double, 5>& values, double tau) {
  if (!(tau > 0.0)) throw ValidationError("boltzmann: temperature must be positive");
  for (double v : values)
    if (!std::isfinite(v)) throw ValidationError("boltzmann: non-finite input value");
  double vmax = *std::max_element(values.begin(), values.end());
  ActionDistribution d;
  double sum = 0.0;
  for (int i = 0; i < 5; ++i) {
    double e = std::exp((values[i] - vmax) / tau);
    if (e < kProbFloor) e = kProbFloor;
    d.probs[i] = e;
    sum += e;
  }
  for (double& p : d.probs) p /= sum;
  return d;
}

ActionDistribution greedy_distribution(const std::array<double, 5>& values) {
  double vmax = *std::max_element(values.begin(), values.end());
  ActionDistribution d;
  int ties = 0;
  for (int i = 0; i < 5; ++i)
    if (values[i] == vmax) ++ties;
  for (int i = 0; i < 5; ++i) d.probs[i] = values[i] == vmax ? 1.0 / ties : 0.0;
  return d;
}

double TemperatureSchedule::at(long episode) const {
  if (episode < 0) episode = 0;
  double f = horizon > 0 ? std::min(1.0, static_cast<double>(episode) / horizon) : 1.0;
  switch (shape) {
    case Shape::Constant: return tau0;
    case Shape::Linear: return tau0 + (tau_max - tau0) * f;
    case Shape::Geometric: return tau0 * std::pow(tau_max / tau0, f);
  }
  return tau0;
}

void TemperatureSchedule::validate() const {
  if (!(tau0 > 0.0)) throw ConfigError("temperature schedule: tau0 must be positive");
  if (tau_max < tau0) throw ConfigError("temperature schedule: tau_max must be >= tau0");
  if (horizon < 1) throw ConfigError("temperature schedule: horizon must be >= 1");
  if (shape == Shape::Constant && tau_max != tau0)
    throw ConfigError("temperature schedule: constant shape requires tau_max == tau0");
}

TemperatureSchedule::Shape TemperatureSchedule::shape_from_name(const std::string& name) {
  if (name == "constant") return Shape::Constant;
  if (name == "linear") return Shape::Linear;
  if (name == "geometric") return Shape::Geometric;
  throw ConfigError("unknown temperature schedule shape '" + name + "'");
}

const char* TemperatureSchedule::shape_name(Shape s) {
  switch (s) {
    case Shape::Constant: return "constant";
    case Shape::Linear: return "linear";
    case Shape::Geometric: return "geometric";
  }
  return "?";
}

std::array<double, 5> QTable::values(const StateKey& key) const {
  auto it = entries.find(key.packed());
  if (it == entries.end()) {
    std::array<double, 5> v;
    v.fill(initial_value);
    return v;
  }
  return it->second;
}

double QTable::max_value(const StateKey& key) const {
  auto v = values(key);
  return *std::max_element(v.begin(), v.end());
}

void QTable::update(const StateKey& key, Action action, double reward, const StateKey& next,
                    bool terminal) {
  auto [it, inserted] = entries.try_emplace(key.packed());
  if (inserted) it->second.fill(initial_value);
  double bootstrap = terminal ? 0.0 : gamma * max_value(next);
  double& q = it->second[static_cast<int>(action)];
  q += alpha * (reward + bootstrap - q);
}

std::string qtable_to_text(const QTable& table) {
  std::vector<int64_t> keys;
  keys.reserve(table.entries.size());
  for (const auto& [k, _] : table.entries) keys.push_back(k);
  std::sort(keys.begin(), keys.end());

  std::ostringstream out;
  out << "qtable v1 alpha " << table.alpha << " gamma " << table.gamma << " entries "
      << keys.size() << '\n';
  out.precision(17);
  for (int64_t k : keys) {
    int col = static_cast<int>(k & 0xffff);
    int row = static_cast<int>((k >> 16) & 0xffff);
    int phase = static_cast<int>(k >> 32);
    out << col << ' ' << row << ' ' << phase;
    for (double q : table.entries.at(k)) out << ' ' << q;
    out << '\n';
  }
  return out.str();
}

QTable qtable_from_text(const std::string& text) {
  std::istringstream in(text);
  std::string magic, version, word;
  QTable table;
  size_t n = 0;
  if (!(in >> magic >> version) || magic != "qtable" || version != "v1")
    throw ParseError("qtable snapshot: bad header");
  while (in >> word) {
    if (word == "alpha") in >> table.alpha;
    else if (word == "gamma") in >> table.gamma;
    else if (word == "entries") { in >> n; break; }
    else throw ParseError("qtable snapshot: unexpected header token '" + word + "'");
  }
  for (size_t i = 0; i < n; ++i) {
    StateKey key;
    std::array<double, 5> v{};
    if (!(in >> key.col >> key.row >> key.phase >> v[0] >> v[1] >> v[2] >> v[3] >> v[4]))
      throw ParseError("qtable snapshot: truncated entry " + std::to_string(i));
    table.entries[key.packed()] = v;
  }
  return table;
}

EpisodeTrace run_episode(const FroggerMap& map, const Dynamics& dynamics, QTable& table,
                         const ActionSource& source, const EpisodeLimits& limits, Rng& rng) {
  EpisodeTrace trace;
  GameState state = initial_state(map);
  for (int t = 0; t < limits.step_cap; ++t) {
    ActionDistribution dist = source(state);
    Action action = static_cast<Action>(rng.sample(dist.probs));
    StateKey key = markov_key(state);
    StepResult result = step(state, action, dynamics, rng);
    bool terminal = result.next.terminal != Terminal::None;
    StateKey next_key =
        terminal ? key : markov_key(result.next);  // unused bootstrap when terminal
    table.update(key, action, result.reward, next_key, terminal);
    trace.steps.push_back({key, action, result.reward});
    trace.total_reward += result.reward;
    state = result.next;
    if (terminal) {
      trace.end = state.terminal;
      break;
    }
  }
  return trace;
}

double evaluate_policy(const FroggerMap& map, const Dynamics& dynamics, const QTable& table,
                       int episodes, const EpisodeLimits& limits, Rng& rng) {
  double sum = 0.0;
  for (int e = 0; e < episodes; ++e) {
    GameState state = initial_state(map);
    double total = 0.0;
    for (int t = 0; t < limits.step_cap; ++t) {
      ActionDistribution dist = greedy_distribution(table.values(markov_key(state)));
      Action action = static_cast<Action>(rng.sample(dist.probs));
      StepResult result = step(state, action, dynamics, rng);
      total += result.reward;
      state = result.next;
      if (state.terminal != Terminal::None) break;
    }
    sum += total;
  }
  return sum / episodes;
}

}  // namespace langshape
