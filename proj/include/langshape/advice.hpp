#pragma once

#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "langshape/rl.hpp"
#include "langshape/seq2seq.hpp"

namespace langshape {

struct AdviceScores {
  int utterance_id = 0;
  std::array<double, 5> scores{};  // log probs, one per action
};

/// Scans the distinct training utterances for the one whose best (view,
/// action) reconstruction log probability is globally largest, and serves
/// the Eq.-style Boltzmann over that utterance's per-action scores. Results
/// are cached per view; entries are pure functions of (model, utterances,
/// view), so concurrent population is idempotent.
class AdviceIndex {
 public:
  AdviceIndex(const Seq2SeqModel* model, std::vector<std::vector<std::string>> utterances);

  // Holds a mutex, so it lives behind a pointer when handed around.
  static std::unique_ptr<AdviceIndex> from_dataset(const Seq2SeqModel* model,
                                                   const Dataset& dataset);

  AdviceScores select_advice(const LocalView& view) const;
  ActionDistribution language_critique(const LocalView& view, long episode,
                                       const TemperatureSchedule& schedule) const;

  /// Same computation with the cache bypassed; used to audit transparency.
  AdviceScores compute_uncached(const LocalView& view) const;

  const std::vector<std::vector<std::string>>& utterances() const { return utterances_; }
  size_t cache_size() const;

  void save_cache(const std::string& path) const;
  /// Loads entries written by save_cache; ignores files whose model or
  /// utterance fingerprint does not match.
  void load_cache(const std::string& path);

 private:
  const Seq2SeqModel* model_;
  std::vector<std::vector<std::string>> utterances_;
  std::vector<EncodeResult> encoded_;  // per utterance, reused across views
  uint64_t utterance_hash_ = 0;
  mutable std::mutex mutex_;
  mutable std::unordered_map<uint32_t, AdviceScores> cache_;
};

}  // namespace langshape
