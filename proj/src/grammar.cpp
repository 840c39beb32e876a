#include "langshape/grammar.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "langshape/errors.hpp"

namespace langshape {

namespace {

// View geometry: cells are row-major, the agent sits at index 4.
constexpr int kAbove = 1;
constexpr int kLeft = 3;
constexpr int kCenter = 4;
constexpr int kRight = 5;

bool is_action_atom(ConditionAtom::Kind k) {
  using K = ConditionAtom::Kind;
  return k == K::ActionUp || k == K::ActionDown || k == K::ActionLeft || k == K::ActionRight ||
         k == K::ActionStay || k == K::ActionLateral;
}

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char raw : text) {
    unsigned char c = static_cast<unsigned char>(raw);
    if (std::isalnum(c) || raw == '\'' || raw == '<' || raw == '>' || raw == '/') {
      current += static_cast<char>(std::tolower(c));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

bool ConditionAtom::eval(const LocalView& view, Action action) const {
  using K = Kind;
  bool v = false;
  switch (kind) {
    case K::True: v = true; break;
    case K::ClearAhead: {
      Cell c = view.cells[kAbove];
      v = c == Cell::Grass || c == Cell::Goal || c == Cell::Log || c == Cell::Road;
      break;
    }
    case K::CarAhead: v = view.cells[kAbove] == Cell::Car; break;
    case K::WallAhead: v = view.cells[kAbove] == Cell::Wall; break;
    case K::WaterAhead: v = view.cells[kAbove] == Cell::Water; break;
    case K::LogAhead: v = view.cells[kAbove] == Cell::Log; break;
    case K::CarLeft: v = view.cells[kLeft] == Cell::Car; break;
    case K::CarRight: v = view.cells[kRight] == Cell::Car; break;
    case K::CarBeside:
      v = view.cells[kLeft] == Cell::Car || view.cells[kRight] == Cell::Car;
      break;
    case K::AtLeftWall: v = view.cells[kLeft] == Cell::Wall; break;
    case K::AtRightWall: v = view.cells[kRight] == Cell::Wall; break;
    case K::OnLog: v = view.cells[kCenter] == Cell::Log; break;
    case K::GoalVisible:
      v = std::any_of(view.cells.begin(), view.cells.end(),
                      [](Cell c) { return c == Cell::Goal; });
      break;
    case K::ActionUp: v = action == Action::Up; break;
    case K::ActionDown: v = action == Action::Down; break;
    case K::ActionLeft: v = action == Action::Left; break;
    case K::ActionRight: v = action == Action::Right; break;
    case K::ActionStay: v = action == Action::Stay; break;
    case K::ActionLateral: v = action == Action::Left || action == Action::Right; break;
  }
  return negated ? !v : v;
}

ConditionAtom::Kind ConditionAtom::kind_from_name(const std::string& name) {
  using K = Kind;
  static const std::map<std::string, K> kNames = {
      {"true", K::True},
      {"clear_ahead", K::ClearAhead},
      {"car_ahead", K::CarAhead},
      {"wall_ahead", K::WallAhead},
      {"water_ahead", K::WaterAhead},
      {"log_ahead", K::LogAhead},
      {"car_left", K::CarLeft},
      {"car_right", K::CarRight},
      {"car_beside", K::CarBeside},
      {"at_left_wall", K::AtLeftWall},
      {"at_right_wall", K::AtRightWall},
      {"on_log", K::OnLog},
      {"goal_visible", K::GoalVisible},
      {"action:up", K::ActionUp},
      {"action:down", K::ActionDown},
      {"action:left", K::ActionLeft},
      {"action:right", K::ActionRight},
      {"action:stay", K::ActionStay},
      {"action:lateral", K::ActionLateral},
  };
  auto it = kNames.find(name);
  if (it == kNames.end()) throw ParseError("unknown grammar predicate '" + name + "'");
  return it->second;
}

bool GrammarRule::matches(const LocalView& view, Action action) const {
  for (const ConditionAtom& atom : condition)
    if (!atom.eval(view, action)) return false;
  return true;
}

bool GrammarRule::is_catch_all() const {
  return condition.size() == 1 && condition[0].kind == ConditionAtom::Kind::True &&
         !condition[0].negated;
}

std::vector<std::string> GrammarRule::template_slots(const std::string& tmpl) const {
  std::vector<std::string> names;
  size_t pos = 0;
  while ((pos = tmpl.find('{', pos)) != std::string::npos) {
    size_t end = tmpl.find('}', pos);
    if (end == std::string::npos) break;
    names.push_back(tmpl.substr(pos + 1, end - pos - 1));
    pos = end + 1;
  }
  return names;
}

long GrammarRule::surface_count() const {
  long total = 0;
  for (const std::string& tmpl : templates) {
    long product = 1;
    for (const std::string& name : template_slots(tmpl)) {
      auto it = slots.find(name);
      product *= it == slots.end() ? 1 : static_cast<long>(it->second.size());
    }
    total += product;
  }
  return total;
}

Grammar Grammar::parse(const std::string& text) {
  Grammar grammar;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  GrammarRule* current = nullptr;

  auto fail = [&](const std::string& what) -> ParseError {
    return ParseError("grammar parse error line " + std::to_string(lineno) + ": " + what);
  };

  while (std::getline(in, line)) {
    ++lineno;
    size_t first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    line = line.substr(first);
    if (line[0] == '#') continue;

    std::istringstream ls(line);
    std::string keyword;
    ls >> keyword;
    if (keyword == "rule") {
      GrammarRule rule;
      std::string prio_word;
      if (!(ls >> rule.id >> prio_word >> rule.priority) || prio_word != "priority")
        throw fail("expected 'rule <id> priority <n>'");
      grammar.rules_.push_back(std::move(rule));
      current = &grammar.rules_.back();
    } else if (keyword == "when") {
      if (!current) throw fail("'when' outside a rule block");
      if (!current->condition.empty()) throw fail("duplicate 'when' in rule " + current->id);
      std::string atom_word;
      while (ls >> atom_word) {
        ConditionAtom atom;
        if (atom_word[0] == '!') {
          atom.negated = true;
          atom_word = atom_word.substr(1);
        }
        atom.kind = ConditionAtom::kind_from_name(atom_word);
        current->condition.push_back(atom);
      }
      if (current->condition.empty()) throw fail("'when' needs at least one predicate");
    } else if (keyword == "template") {
      if (!current) throw fail("'template' outside a rule block");
      size_t open = line.find('"');
      size_t close = line.rfind('"');
      if (open == std::string::npos || close <= open)
        throw fail("template text must be quoted");
      current->templates.push_back(line.substr(open + 1, close - open - 1));
    } else if (keyword == "slot") {
      if (!current) throw fail("'slot' outside a rule block");
      size_t colon = line.find(':');
      if (colon == std::string::npos) throw fail("expected 'slot <name>: a | b | c'");
      std::istringstream name_in(line.substr(4, colon - 4));
      std::string name;
      name_in >> name;
      if (name.empty()) throw fail("slot needs a name");
      std::vector<std::string> fills;
      std::string rest = line.substr(colon + 1);
      size_t start = 0;
      while (start <= rest.size()) {
        size_t bar = rest.find('|', start);
        std::string fill = rest.substr(start, bar == std::string::npos ? bar : bar - start);
        size_t b = fill.find_first_not_of(" \t");
        size_t e = fill.find_last_not_of(" \t");
        if (b != std::string::npos) fills.push_back(fill.substr(b, e - b + 1));
        if (bar == std::string::npos) break;
        start = bar + 1;
      }
      if (fills.empty()) throw fail("slot '" + name + "' has no fills");
      current->slots[name] = std::move(fills);
    } else {
      throw fail("unknown keyword '" + keyword + "'");
    }
  }
  if (grammar.rules_.empty()) throw ParseError("grammar parse error: no rules defined");
  return grammar;
}

Grammar Grammar::load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open grammar file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  Grammar g = parse(buf.str());
  g.validate();
  return g;
}

void Grammar::validate() const {
  bool catch_all = false;
  std::set<int> priorities;
  for (const GrammarRule& rule : rules_) {
    if (rule.condition.empty())
      throw ValidationError("grammar rule '" + rule.id + "' has no condition");
    if (rule.templates.empty())
      throw ValidationError("grammar rule '" + rule.id + "' has no templates");
    if (!priorities.insert(rule.priority).second)
      throw ValidationError("grammar priorities must be a total order; duplicate " +
                            std::to_string(rule.priority));
    if (rule.is_catch_all()) catch_all = true;
    if (rule.surface_count() < 20)
      throw ValidationError("grammar rule '" + rule.id + "' can only produce " +
                            std::to_string(rule.surface_count()) +
                            " surfaces; need at least 20");
    for (const std::string& tmpl : rule.templates) {
      for (const std::string& slot : rule.template_slots(tmpl)) {
        if (!rule.slots.count(slot))
          throw ValidationError("grammar rule '" + rule.id + "' references undefined slot '" +
                                slot + "'");
      }
      // Shortest possible realization must still have >= 3 tokens.
      std::string shortest = tmpl;
      for (const auto& [name, fills] : rule.slots) {
        std::string placeholder = "{" + name + "}";
        const std::string* short_fill = &fills[0];
        for (const std::string& f : fills)
          if (f.size() < short_fill->size()) short_fill = &f;
        size_t pos;
        while ((pos = shortest.find(placeholder)) != std::string::npos)
          shortest.replace(pos, placeholder.size(), *short_fill);
      }
      if (tokenize(shortest).size() < 3)
        throw ValidationError("grammar rule '" + rule.id + "' template '" + tmpl +
                              "' can yield utterances shorter than 3 tokens");
    }
  }
  if (!catch_all)
    throw ConfigError("grammar is missing the catch-all rule (condition 'true')");
}

std::vector<std::string> Grammar::describe(const LocalView& view, Action action, double accuracy,
                                           Rng& rng) const {
  if (accuracy < 0.0 || accuracy > 1.0)
    throw ValidationError("describe: accuracy must lie in [0,1]");

  const GrammarRule* chosen = nullptr;
  if (rng.bernoulli(accuracy)) {
    for (const GrammarRule& rule : rules_) {
      if (rule.matches(view, action) && (!chosen || rule.priority > chosen->priority))
        chosen = &rule;
    }
    if (!chosen)
      throw ConfigError("grammar has no matching rule and no catch-all fallback");
  } else {
    chosen = &rules_[rng.uniform_int(static_cast<int>(rules_.size()))];
  }

  const std::string& tmpl =
      chosen->templates[rng.uniform_int(static_cast<int>(chosen->templates.size()))];
  std::string surface = tmpl;
  for (const std::string& name : chosen->template_slots(tmpl)) {
    const std::vector<std::string>& fills = chosen->slots.at(name);
    const std::string& fill = fills[rng.uniform_int(static_cast<int>(fills.size()))];
    surface.replace(surface.find("{" + name + "}"), name.size() + 2, fill);
  }
  return tokenize(surface);
}

std::vector<std::string> Grammar::vocabulary() const {
  std::set<std::string> words;
  for (const GrammarRule& rule : rules_) {
    for (const std::string& tmpl : rule.templates) {
      // Template words outside slots.
      std::string stripped = tmpl;
      for (const std::string& name : rule.template_slots(tmpl)) {
        std::string placeholder = "{" + name + "}";
        size_t pos;
        while ((pos = stripped.find(placeholder)) != std::string::npos)
          stripped.replace(pos, placeholder.size(), " ");
      }
      for (const std::string& w : tokenize(stripped)) words.insert(w);
    }
    for (const auto& [_, fills] : rule.slots)
      for (const std::string& fill : fills)
        for (const std::string& w : tokenize(fill)) words.insert(w);
  }
  return {words.begin(), words.end()};
}

}  // namespace langshape
