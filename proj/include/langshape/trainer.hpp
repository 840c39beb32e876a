#pragma once

#include <string>
#include <vector>

#include "langshape/frogger.hpp"
#include "langshape/grammar.hpp"

namespace langshape {

/// One seq2seq training unit: what was said, what was seen, what was done.
struct AnnotatedExample {
  std::vector<std::string> utterance;
  LocalView view;
  Action action = Action::Up;

  bool operator==(const AnnotatedExample&) const = default;
};

struct DatasetStats {
  size_t size = 0;
  double top_sentence_share = 0.0;
  double mean_repetition_share = 0.0;
};

struct Dataset {
  std::vector<AnnotatedExample> examples;  // deduplicated
  double accuracy = 1.0;
  DatasetStats stats;
};

/// Trains `n_agents` short-horizon Q-learners, each from a random safe start,
/// on the one-row-forward task and harvests the (local view, action) pairs of
/// every greedy trajectory that completes the task.
std::vector<ViewActionPair> collect_demonstrations(const FroggerMap& map, int n_agents,
                                                   uint64_t seed);

void save_pairs(const std::vector<ViewActionPair>& pairs, const std::string& path);
std::vector<ViewActionPair> load_pairs(const std::string& path);

/// Describes every pair through the grammar at the given oracle accuracy.
/// Pre-dedup; pairs[i] and the result's element i share (view, action).
std::vector<AnnotatedExample> annotate_pairs(const std::vector<ViewActionPair>& pairs,
                                             const Grammar& grammar, double accuracy,
                                             uint64_t seed);

/// annotate_pairs + exact-duplicate removal + repetition statistics.
Dataset build_dataset(const std::vector<ViewActionPair>& pairs, const Grammar& grammar,
                      double accuracy, uint64_t seed);

DatasetStats compute_stats(const std::vector<AnnotatedExample>& examples);

void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace langshape
