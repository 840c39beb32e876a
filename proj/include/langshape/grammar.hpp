#pragma once

#include <map>
#include <string>
#include <vector>

#include "langshape/frogger.hpp"
#include "langshape/rng.hpp"

namespace langshape {

/// Lowercases, strips punctuation, splits on whitespace.
std::vector<std::string> tokenize(const std::string& text);

/// One conjunct of a rule condition. `negated` flips the atom.
struct ConditionAtom {
  enum class Kind {
    True,
    ClearAhead,
    CarAhead,
    WallAhead,
    WaterAhead,
    LogAhead,
    CarLeft,
    CarRight,
    CarBeside,
    AtLeftWall,
    AtRightWall,
    OnLog,
    GoalVisible,
    ActionUp,
    ActionDown,
    ActionLeft,
    ActionRight,
    ActionStay,
    ActionLateral,
  };
  Kind kind = Kind::True;
  bool negated = false;

  bool eval(const LocalView& view, Action action) const;
  static Kind kind_from_name(const std::string& name);  // throws ParseError
};

struct GrammarRule {
  std::string id;
  int priority = 0;
  std::vector<ConditionAtom> condition;  // conjunction
  std::vector<std::string> templates;    // surface text with {slot} holes
  std::map<std::string, std::vector<std::string>> slots;

  bool matches(const LocalView& view, Action action) const;
  bool is_catch_all() const;

  /// Number of distinct surface strings the rule can produce.
  long surface_count() const;

  /// Slot names referenced by one template, in order of appearance.
  std::vector<std::string> template_slots(const std::string& tmpl) const;
};

class Grammar {
 public:
  static Grammar parse(const std::string& text);      // throws ParseError
  static Grammar load_file(const std::string& path);  // adds IO errors

  /// Checks: a catch-all rule exists, priorities form a total order, every
  /// rule yields >= 20 distinct surfaces, every surface has >= 3 tokens.
  void validate() const;  // throws ConfigError / ValidationError

  /// Produces one tokenized utterance for a (view, action) pair. With
  /// probability `accuracy` the highest-priority matching rule speaks,
  /// otherwise a uniformly random rule does.
  std::vector<std::string> describe(const LocalView& view, Action action, double accuracy,
                                    Rng& rng) const;

  /// Sorted, de-duplicated closure of every word the grammar can emit.
  std::vector<std::string> vocabulary() const;

  const std::vector<GrammarRule>& rules() const { return rules_; }

 private:
  std::vector<GrammarRule> rules_;
};

}  // namespace langshape
