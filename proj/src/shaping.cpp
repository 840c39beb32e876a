#include "langshape/shaping.hpp"

#include "langshape/errors.hpp"

namespace langshape {

ActionDistribution combine(const ActionDistribution& prq, const ActionDistribution& prc) {
  ActionDistribution out;
  double sum = 0.0;
  for (int a = 0; a < 5; ++a) {
    out.probs[a] = prq.probs[a] * prc.probs[a];
    sum += out.probs[a];
  }
  if (!(sum > 0.0))
    throw ValidationError("combine: degenerate all-zero product of action distributions");
  for (double& p : out.probs) p /= sum;
  return out;
}

ObservationCritique ObservationCritique::from_pairs(const std::vector<ViewActionPair>& pairs,
                                                    const TemperatureSchedule& schedule) {
  schedule.validate();
  ObservationCritique oc;
  oc.schedule = schedule;
  for (const ViewActionPair& p : pairs) {
    auto [it, inserted] = oc.counts.try_emplace(p.view.key());
    if (inserted) it->second.fill(0.0);
    it->second[static_cast<int>(p.action)] += 1.0;
    ++oc.total;
  }
  return oc;
}

ActionDistribution ObservationCritique::critique(const LocalView& view, long episode) const {
  auto it = counts.find(view.key());
  if (it == counts.end()) return ActionDistribution::uniform();
  return boltzmann(it->second, schedule.at(episode));
}

ActionDistribution shaped_action_distribution(const GameState& state, const ShapedPolicy& policy,
                                              long episode) {
  ActionDistribution prq =
      boltzmann(policy.table->values(markov_key(state)), policy.q_temperature);
  if (!policy.critique) return prq;
  ActionDistribution prc = policy.critique(local_view(state), episode);
  return combine(prq, prc);
}

}  // namespace langshape
