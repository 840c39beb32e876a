#include "langshape/advice.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "langshape/errors.hpp"

namespace langshape {

namespace {

uint64_t hash_utterances(const std::vector<std::vector<std::string>>& utterances) {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= 0x1f;
    h *= 0x100000001b3ULL;
  };
  for (const auto& u : utterances) {
    for (const std::string& w : u) mix(w);
    mix("\n");
  }
  return h;
}

}  // namespace

AdviceIndex::AdviceIndex(const Seq2SeqModel* model,
                         std::vector<std::vector<std::string>> utterances)
    : model_(model), utterances_(std::move(utterances)) {
  if (utterances_.empty()) throw ValidationError("advice index: no utterances");
  encoded_.reserve(utterances_.size());
  for (const auto& u : utterances_) encoded_.push_back(encode(*model_, u));
  utterance_hash_ = hash_utterances(utterances_);
}

std::unique_ptr<AdviceIndex> AdviceIndex::from_dataset(const Seq2SeqModel* model,
                                                       const Dataset& dataset) {
  // Distinct utterances only, in first-occurrence order; duplicates cannot
  // change any argmax.
  std::vector<std::vector<std::string>> utterances;
  std::set<std::vector<std::string>> seen;
  for (const AnnotatedExample& ex : dataset.examples)
    if (seen.insert(ex.utterance).second) utterances.push_back(ex.utterance);
  return std::make_unique<AdviceIndex>(model, std::move(utterances));
}

AdviceScores AdviceIndex::compute_uncached(const LocalView& view) const {
  // The 9 view tokens are shared by all five actions, so one decoder pass
  // per utterance yields the whole score row: the action enters only at the
  // final step, whose logits depend on the view prefix alone.
  std::vector<int> prefix_ids;
  prefix_ids.reserve(9);
  for (Cell c : view.cells) prefix_ids.push_back(Vocab::target_id(c));

  AdviceScores best;
  double best_peak = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < utterances_.size(); ++i) {
    const EncodeResult& enc = encoded_[i];
    DecoderState state = decoder_initial(*model_, enc);
    double prefix_logprob = 0.0;
    Eigen::VectorXd logits;
    for (size_t t = 0; t < 9; ++t) {
      int input_id = t == 0 ? 0 : prefix_ids[t - 1];
      logits = decoder_step(*model_, enc, state, input_id);
      double m = logits.maxCoeff();
      double log_z = m + std::log((logits.array() - m).exp().sum());
      prefix_logprob += logits(prefix_ids[t]) - log_z;
    }
    logits = decoder_step(*model_, enc, state, prefix_ids.back());
    double m = logits.maxCoeff();
    double log_z = m + std::log((logits.array() - m).exp().sum());

    std::array<double, 5> scores;
    double peak = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < kNumActions; ++a) {
      scores[a] = prefix_logprob + logits(Vocab::target_id(static_cast<Action>(a))) - log_z;
      peak = std::max(peak, scores[a]);
    }
    if (peak > best_peak) {  // ties resolve to the lowest utterance id
      best_peak = peak;
      best.utterance_id = static_cast<int>(i);
      best.scores = scores;
    }
  }
  return best;
}

AdviceScores AdviceIndex::select_advice(const LocalView& view) const {
  uint32_t key = view.key();
  {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
  }
  AdviceScores result = compute_uncached(view);
  std::lock_guard<std::mutex> lock(mutex_);
  cache_.emplace(key, result);  // idempotent: double-compute yields identical entries
  return result;
}

ActionDistribution AdviceIndex::language_critique(const LocalView& view, long episode,
                                                  const TemperatureSchedule& schedule) const {
  AdviceScores advice = select_advice(view);
  return boltzmann(advice.scores, schedule.at(episode));
}

size_t AdviceIndex::cache_size() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return cache_.size();
}

void AdviceIndex::save_cache(const std::string& path) const {
  std::vector<std::pair<uint32_t, AdviceScores>> entries;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    entries.assign(cache_.begin(), cache_.end());
  }
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write advice cache: " + path);
  char buf[512];
  std::snprintf(buf, sizeof(buf), "# langshape advice cache v1 model %016llx utterances %016llx\n",
                static_cast<unsigned long long>(model_->fingerprint()),
                static_cast<unsigned long long>(utterance_hash_));
  out << buf;
  for (const auto& [key, advice] : entries) {
    LocalView view;
    for (int i = 0; i < 9; ++i) view.cells[i] = static_cast<Cell>((key >> (3 * i)) & 7);
    std::snprintf(buf, sizeof(buf), "%s\t%d\t%.17g %.17g %.17g %.17g %.17g\n",
                  view.to_string().c_str(), advice.utterance_id, advice.scores[0],
                  advice.scores[1], advice.scores[2], advice.scores[3], advice.scores[4]);
    out << buf;
  }
}

void AdviceIndex::load_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return;  // absent cache is simply cold
  std::string header;
  if (!std::getline(in, header)) return;
  char expected[256];
  std::snprintf(expected, sizeof(expected),
                "# langshape advice cache v1 model %016llx utterances %016llx",
                static_cast<unsigned long long>(model_->fingerprint()),
                static_cast<unsigned long long>(utterance_hash_));
  if (header != expected) return;  // stale cache from another model/dataset

  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    size_t t1 = line.find('\t');
    size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw ParseError("advice cache: malformed line");
    LocalView view = LocalView::from_string(line.substr(0, t1));
    AdviceScores advice;
    advice.utterance_id = std::stoi(line.substr(t1 + 1, t2 - t1 - 1));
    std::istringstream ss(line.substr(t2 + 1));
    for (double& s : advice.scores)
      if (!(ss >> s)) throw ParseError("advice cache: expected five scores");
    std::lock_guard<std::mutex> lock(mutex_);
    cache_.emplace(view.key(), advice);
  }
}

}  // namespace langshape
