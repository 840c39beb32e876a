#include "langshape/trainer.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "langshape/errors.hpp"
#include "langshape/rl.hpp"

namespace langshape {

namespace {

// Hyperparameters of the throwaway one-row-forward learners. The sub-task is
// tiny, so a short horizon and a fast learning rate converge well inside the
// episode budget.
constexpr int kDemoEpisodes = 300;
constexpr int kDemoHorizon = 30;
constexpr double kDemoAlpha = 0.2;
constexpr double kDemoTau = 1.0;

bool safe_start(const FroggerMap& map, int col, int row) {
  const RowSpec& r = map.rows[row];
  switch (r.kind) {
    case RowKind::Grass: return true;
    case RowKind::Goal: return false;
    case RowKind::Road: return !map.occupied(row, col, 0);
    case RowKind::Water: return map.occupied(row, col, 0);
  }
  return false;
}

// Reward seen by the demonstration learner: the episode ends with +100 on
// reaching the row above the start, -10 on death, -1 per other step.
struct SubStep {
  GameState next;
  double reward;
  bool terminal;
  bool success;
};

SubStep sub_step(const GameState& state, Action action, int target_row, Rng& rng) {
  Dynamics deterministic;
  StepResult r = step(state, action, deterministic, rng);
  if (r.next.terminal == Terminal::Dead) return {r.next, -10.0, true, false};
  if (r.next.row == target_row) return {r.next, 100.0, true, true};
  return {r.next, -1.0, false, false};
}

}  // namespace

std::vector<ViewActionPair> collect_demonstrations(const FroggerMap& map, int n_agents,
                                                   uint64_t seed) {
  if (n_agents < 1) throw ValidationError("collect_demonstrations: need at least one agent");

  std::vector<std::pair<int, int>> starts;  // (col, row), rows with a row above them
  for (int row = 1; row < map.height; ++row)
    for (int col = 0; col < map.width; ++col)
      if (safe_start(map, col, row)) starts.emplace_back(col, row);
  if (starts.empty()) throw ValidationError("collect_demonstrations: map has no safe start cell");

  std::vector<ViewActionPair> pairs;
  for (int agent = 0; agent < n_agents; ++agent) {
    Rng rng(derive_seed(seed, "demo-agent", static_cast<uint64_t>(agent)));
    auto [col, row] = starts[rng.uniform_int(static_cast<int>(starts.size()))];
    int target_row = row - 1;

    QTable table;
    table.alpha = kDemoAlpha;
    for (int episode = 0; episode < kDemoEpisodes; ++episode) {
      GameState state = state_at(map, col, row);
      for (int t = 0; t < kDemoHorizon; ++t) {
        ActionDistribution dist = boltzmann(table.values(markov_key(state)), kDemoTau);
        Action action = static_cast<Action>(rng.sample(dist.probs));
        StateKey key = markov_key(state);
        SubStep s = sub_step(state, action, target_row, rng);
        StateKey next_key = s.terminal ? key : markov_key(s.next);
        table.update(key, action, s.reward, next_key, s.terminal);
        state = s.next;
        if (s.terminal) break;
      }
    }

    // Greedy replay; harvest only trajectories that complete the task.
    GameState state = state_at(map, col, row);
    std::vector<ViewActionPair> trajectory;
    bool success = false;
    for (int t = 0; t < kDemoHorizon; ++t) {
      ActionDistribution dist = greedy_distribution(table.values(markov_key(state)));
      Action action = static_cast<Action>(rng.sample(dist.probs));
      trajectory.push_back({local_view(state), action});
      SubStep s = sub_step(state, action, target_row, rng);
      state = s.next;
      if (s.terminal) {
        success = s.success;
        break;
      }
    }
    if (success) pairs.insert(pairs.end(), trajectory.begin(), trajectory.end());
  }
  return pairs;
}

void save_pairs(const std::vector<ViewActionPair>& pairs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write pairs file: " + path);
  for (const ViewActionPair& p : pairs)
    out << p.view.to_string() << '\t' << action_name(p.action) << '\n';
}

std::vector<ViewActionPair> load_pairs(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open pairs file: " + path);
  std::vector<ViewActionPair> pairs;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw ParseError("pairs file line " + std::to_string(lineno) + ": expected view<TAB>action");
    ViewActionPair p;
    p.view = LocalView::from_string(line.substr(0, tab));
    auto action = action_from_name(line.substr(tab + 1));
    if (!action)
      throw ParseError("pairs file line " + std::to_string(lineno) + ": unknown action '" +
                       line.substr(tab + 1) + "'");
    p.action = *action;
    pairs.push_back(p);
  }
  return pairs;
}

std::vector<AnnotatedExample> annotate_pairs(const std::vector<ViewActionPair>& pairs,
                                             const Grammar& grammar, double accuracy,
                                             uint64_t seed) {
  if (pairs.empty()) throw ValidationError("annotate_pairs: no demonstration pairs");
  std::vector<AnnotatedExample> examples;
  examples.reserve(pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    // Per-pair stream: utterances are independent of ordering and of each
    // other, so parallel and serial builds agree.
    Rng rng(derive_seed(seed, "describe", i));
    AnnotatedExample ex;
    ex.utterance = grammar.describe(pairs[i].view, pairs[i].action, accuracy, rng);
    ex.view = pairs[i].view;
    ex.action = pairs[i].action;
    examples.push_back(std::move(ex));
  }
  return examples;
}

DatasetStats compute_stats(const std::vector<AnnotatedExample>& examples) {
  DatasetStats stats;
  stats.size = examples.size();
  if (examples.empty()) return stats;
  std::map<std::vector<std::string>, size_t> sentence_freq;
  for (const AnnotatedExample& ex : examples) ++sentence_freq[ex.utterance];
  size_t top = 0;
  double share_sum = 0.0;
  for (const auto& [_, freq] : sentence_freq) {
    top = std::max(top, freq);
    share_sum += static_cast<double>(freq) / examples.size();
  }
  stats.top_sentence_share = static_cast<double>(top) / examples.size();
  stats.mean_repetition_share = share_sum / sentence_freq.size();
  return stats;
}

Dataset build_dataset(const std::vector<ViewActionPair>& pairs, const Grammar& grammar,
                      double accuracy, uint64_t seed) {
  std::vector<AnnotatedExample> annotated = annotate_pairs(pairs, grammar, accuracy, seed);
  Dataset dataset;
  dataset.accuracy = accuracy;
  std::set<std::string> seen;
  for (AnnotatedExample& ex : annotated) {
    std::string fingerprint;
    for (const std::string& w : ex.utterance) fingerprint += w + ' ';
    fingerprint += '\t' + ex.view.to_string() + '\t' + action_name(ex.action);
    if (seen.insert(fingerprint).second) dataset.examples.push_back(std::move(ex));
  }
  dataset.stats = compute_stats(dataset.examples);
  return dataset;
}

void save_dataset(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset file: " + path);
  out << "# langshape dataset v1 accuracy " << dataset.accuracy << '\n';
  for (const AnnotatedExample& ex : dataset.examples) {
    for (size_t i = 0; i < ex.utterance.size(); ++i) {
      if (i) out << ' ';
      out << ex.utterance[i];
    }
    out << '\t' << ex.view.to_string() << '\t' << action_name(ex.action) << '\n';
  }
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path);
  Dataset dataset;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream hs(line);
      std::string word;
      while (hs >> word)
        if (word == "accuracy") hs >> dataset.accuracy;
      continue;
    }
    size_t t1 = line.find('\t');
    size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos)
      throw ParseError("dataset line " + std::to_string(lineno) +
                       ": expected utterance<TAB>view<TAB>action");
    AnnotatedExample ex;
    ex.utterance = tokenize(line.substr(0, t1));
    ex.view = LocalView::from_string(line.substr(t1 + 1, t2 - t1 - 1));
    auto action = action_from_name(line.substr(t2 + 1));
    if (!action)
      throw ParseError("dataset line " + std::to_string(lineno) + ": unknown action '" +
                       line.substr(t2 + 1) + "'");
    ex.action = *action;
    dataset.examples.push_back(std::move(ex));
  }
  if (dataset.examples.empty()) throw ParseError("dataset file is empty: " + path);
  dataset.stats = compute_stats(dataset.examples);
  return dataset;
}

}  // namespace langshape
