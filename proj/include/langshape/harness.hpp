#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "langshape/advice.hpp"
#include "langshape/frogger.hpp"
#include "langshape/rl.hpp"
#include "langshape/shaping.hpp"

namespace langshape {

// ---------------------------------------------------------------------------
// Configuration: a flat `key = value` text file with '#' comments, plus
// command-line overrides of the same form.

class KvConfig {
 public:
  static KvConfig parse(const std::string& text);
  static KvConfig load_file(const std::string& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get(const std::string& key, const std::string& fallback) const;
  std::string require(const std::string& key) const;  // throws ConfigError
  double get_double(const std::string& key, double fallback) const;
  long get_long(const std::string& key, long fallback) const;
  uint64_t get_u64(const std::string& key, uint64_t fallback) const;
  std::vector<std::string> get_list(const std::string& key,
                                    const std::string& fallback) const;  // comma-separated

  /// Canonical serialization (sorted keys); the basis of the config hash.
  std::string canonical_text() const;

 private:
  std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------
// Experiments

struct ExperimentSettings {
  std::string map_path;
  Dynamics dynamics;
  std::string agent;  // qlearn | observation | language60 | language80 | language100
  long episodes = 2000;
  long eval_period = 100;
  int eval_episodes = 20;
  int replicates = 10;
  uint64_t master_seed = 7;
  int jobs = 1;

  double alpha = 0.1;
  double gamma = 0.95;
  double q_temperature = 1.0;
  int step_cap = 200;
  TemperatureSchedule tau;  // critique schedule; horizon filled from fraction
  double tau_horizon_frac = 0.6;

  std::string pairs_path;    // observation agent
  std::string dataset_path;  // language agents
  std::string model_path;    // language agents

  static ExperimentSettings from_config(const KvConfig& cfg);
  void validate() const;  // throws ConfigError
  std::string label() const;
  std::string canonical() const;  // stable one-line echo, basis of the config hash
};

struct LearningCurve {
  std::string agent;
  std::vector<long> episodes;                      // evaluation grid
  std::vector<std::vector<double>> per_replicate;  // [checkpoint][replicate]
  std::vector<double> mean;
  std::vector<double> stderr_;

  int replicate_count() const {
    return per_replicate.empty() ? 0 : static_cast<int>(per_replicate.front().size());
  }
  void finalize_stats();
  std::string to_csv() const;
  static LearningCurve from_csv(const std::string& text);
  static LearningCurve load_csv_file(const std::string& path);
};

struct ExperimentResult {
  LearningCurve curve;
  std::string provenance_json;
};

/// Trains `replicates` independent agents and evaluates the greedy policy
/// every eval period. `advisor` optionally shares a warm advice cache across
/// experiments that use the same model.
ExperimentResult run_experiment(const ExperimentSettings& settings,
                                AdviceIndex* advisor = nullptr);

/// Convenience: run + write <out_dir>/curve_<label>.csv, provenance json and,
/// for language agents, the advice cache audit file.
ExperimentResult run_experiment_to_dir(const ExperimentSettings& settings,
                                       const std::string& out_dir,
                                       AdviceIndex* advisor = nullptr);

// ---------------------------------------------------------------------------
// Comparison

struct SignTestResult {
  int wins = 0;
  int losses = 0;
  int ties = 0;
  double p_one_sided = 1.0;  // P(Bin(wins+losses, 1/2) >= wins)
};

/// Exact binomial tail P(X >= k), X ~ Bin(n, 1/2).
double binomial_tail_geq(int n, int k);

struct CurveSummary {
  std::string agent;
  double auc_mean = 0.0;
  std::vector<double> auc_per_replicate;
  std::optional<long> episodes_to_threshold;           // on the mean curve
  std::vector<std::optional<long>> ett_per_replicate;  // per replicate
};

struct ComparisonReport {
  double threshold = 0.0;  // 90% of the best final mean across curves
  std::vector<CurveSummary> curves;
  std::vector<std::vector<SignTestResult>> pairwise_auc;  // [a][b]: a beats b

  std::string to_text() const;
  const CurveSummary& summary_for(const std::string& agent) const;
  const SignTestResult& auc_test(const std::string& a, const std::string& b) const;
};

/// Curves must share the episode grid. AUC is trapezoidal; the threshold for
/// episodes-to-threshold is 90% of the best final cross-replicate mean.
ComparisonReport compare(const std::vector<LearningCurve>& curves);

// ---------------------------------------------------------------------------
// Pipeline

/// End-to-end recipe: collect -> datasets (0.6 / 0.8 / 1.0) -> models ->
/// experiments -> comparisons, with per-stage skipping keyed on content
/// hashes recorded in <out_dir>/manifest.json.
void run_pipeline(const KvConfig& cfg, const std::string& out_dir);

}  // namespace langshape
