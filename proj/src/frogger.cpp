#include "langshape/frogger.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "langshape/errors.hpp"

namespace langshape {

namespace {

constexpr const char* kActionNames[kNumActions] = {"up", "down", "left", "right", "stay"};
constexpr const char* kCellNames[kNumCellKinds] = {"wall", "grass", "road",  "car",
                                                   "water", "log",  "goal"};

int wrap(int c, int width) {
  c %= width;
  return c < 0 ? c + width : c;
}

char kind_char(RowKind k) {
  switch (k) {
    case RowKind::Goal: return 't';
    case RowKind::Grass: return 'g';
    case RowKind::Road: return 'r';
    case RowKind::Water: return 'w';
  }
  return '?';
}

char dir_char(RowDir d) {
  switch (d) {
    case RowDir::Left: return '<';
    case RowDir::Right: return '>';
    case RowDir::None: return '-';
  }
  return '?';
}

}  // namespace

const char* action_name(Action a) { return kActionNames[static_cast<int>(a)]; }

std::optional<Action> action_from_name(const std::string& name) {
  for (int i = 0; i < kNumActions; ++i)
    if (name == kActionNames[i]) return static_cast<Action>(i);
  return std::nullopt;
}

const char* cell_name(Cell c) { return kCellNames[static_cast<int>(c)]; }

std::optional<Cell> cell_from_name(const std::string& name) {
  for (int i = 0; i < kNumCellKinds; ++i)
    if (name == kCellNames[i]) return static_cast<Cell>(i);
  return std::nullopt;
}

bool FroggerMap::occupied(int row, int col, long tick) const {
  const RowSpec& r = rows[row];
  if (r.kind == RowKind::Grass || r.kind == RowKind::Goal) return false;
  long shift = tick % width;
  int src = col;
  switch (r.dir) {
    case RowDir::Right: src = wrap(col - static_cast<int>(shift), width); break;
    case RowDir::Left: src = wrap(col + static_cast<int>(shift), width); break;
    case RowDir::None: break;
  }
  return r.occupancy[src] != 0;
}

void FroggerMap::validate() const {
  if (width < 3 || height < 4)
    throw ValidationError("map validation: dimensions too small (need width >= 3, height >= 4)");
  if (static_cast<int>(rows.size()) != height)
    throw ValidationError("map validation: row count does not match height");
  int goal_rows = 0;
  for (int i = 0; i < height; ++i) {
    const RowSpec& r = rows[i];
    if (static_cast<int>(r.occupancy.size()) != width)
      throw ValidationError("map validation: occupancy width mismatch in row " +
                            std::to_string(i));
    bool still = r.kind == RowKind::Grass || r.kind == RowKind::Goal;
    if (still != (r.dir == RowDir::None))
      throw ValidationError("map validation: direction must be none exactly for grass/goal rows"
                            " (row " + std::to_string(i) + ")");
    if (still) {
      for (uint8_t o : r.occupancy)
        if (o) throw ValidationError("map validation: obstacle on grass/goal row " +
                                     std::to_string(i));
    }
    if (r.kind == RowKind::Goal) {
      ++goal_rows;
      if (i != 0) throw ValidationError("map validation: goal row must be row 0");
    }
  }
  if (goal_rows != 1) throw ValidationError("map validation: exactly one goal row required");
  if (rows[height - 1].kind != RowKind::Grass)
    throw ValidationError("map validation: bottom row must be grass (start row)");
  if (start_row != height - 1 || start_col < 0 || start_col >= width)
    throw ValidationError("map validation: start must sit in the bottom grass row");
  for (int i = 0; i + 1 < height; ++i) {
    if (rows[i].dir != RowDir::None && rows[i + 1].dir != RowDir::None &&
        rows[i].dir == rows[i + 1].dir)
      throw ValidationError("map validation: adjacent moving rows " + std::to_string(i) + "/" +
                            std::to_string(i + 1) + " must alternate direction");
  }
}

uint32_t LocalView::key() const {
  uint32_t k = 0;
  for (int i = 0; i < 9; ++i) k |= static_cast<uint32_t>(cells[i]) << (3 * i);
  return k;
}

std::string LocalView::to_string() const {
  std::string out;
  for (int i = 0; i < 9; ++i) {
    if (i) out += ' ';
    out += cell_name(cells[i]);
  }
  return out;
}

LocalView LocalView::from_string(const std::string& tokens) {
  std::istringstream in(tokens);
  LocalView v;
  std::string tok;
  for (int i = 0; i < 9; ++i) {
    if (!(in >> tok)) throw ParseError("local view needs 9 cell tokens, got " + std::to_string(i));
    auto c = cell_from_name(tok);
    if (!c) throw ParseError("unknown cell token '" + tok + "'");
    v.cells[i] = *c;
  }
  if (in >> tok) throw ParseError("local view has trailing token '" + tok + "'");
  return v;
}

FroggerMap load_map(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;

  auto fail = [&](const std::string& what) -> ParseError {
    return ParseError("parse error line " + std::to_string(lineno) + ": " + what);
  };

  if (!std::getline(in, line)) throw ParseError("parse error line 1: empty map file");
  ++lineno;
  std::istringstream header(line);
  std::string magic, version;
  int width = 0, height = 0;
  if (!(header >> magic >> version >> width >> height) || magic != "frogger" || version != "v1")
    throw fail("expected header 'frogger v1 <width> <height>'");
  if (width < 3 || height < 4) throw fail("dimensions too small");

  FroggerMap map;
  map.width = width;
  map.height = height;
  int agents = 0;
  for (int r = 0; r < height; ++r) {
    if (!std::getline(in, line)) {
      ++lineno;
      throw fail("missing row " + std::to_string(r));
    }
    ++lineno;
    if (static_cast<int>(line.size()) < 3 || line[2] != ' ')
      throw fail("expected '<kind><dir> <cells>'");
    RowSpec row;
    switch (line[0]) {
      case 't': row.kind = RowKind::Goal; break;
      case 'g': row.kind = RowKind::Grass; break;
      case 'r': row.kind = RowKind::Road; break;
      case 'w': row.kind = RowKind::Water; break;
      default: throw fail(std::string("illegal row kind '") + line[0] + "'");
    }
    switch (line[1]) {
      case '<': row.dir = RowDir::Left; break;
      case '>': row.dir = RowDir::Right; break;
      case '-': row.dir = RowDir::None; break;
      default: throw fail(std::string("illegal direction '") + line[1] + "'");
    }
    std::string cells = line.substr(3);
    if (static_cast<int>(cells.size()) != width)
      throw fail("expected " + std::to_string(width) + " cells, got " +
                 std::to_string(cells.size()));
    row.occupancy.assign(width, 0);
    for (int c = 0; c < width; ++c) {
      switch (cells[c]) {
        case '.': break;
        case '#': row.occupancy[c] = 1; break;
        case 'A':
          ++agents;
          map.start_col = c;
          map.start_row = r;
          break;
        default: throw fail(std::string("illegal cell character '") + cells[c] + "'");
      }
    }
    map.rows.push_back(std::move(row));
  }
  if (agents != 1)
    throw ParseError("parse error: map must contain exactly one 'A' start cell, found " +
                     std::to_string(agents));
  map.validate();
  return map;
}

FroggerMap load_map_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open map file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return load_map(buf.str());
}

std::string map_to_text(const FroggerMap& map) {
  std::ostringstream out;
  out << "frogger v1 " << map.width << ' ' << map.height << '\n';
  for (int r = 0; r < map.height; ++r) {
    const RowSpec& row = map.rows[r];
    out << kind_char(row.kind) << dir_char(row.dir) << ' ';
    for (int c = 0; c < map.width; ++c) {
      if (r == map.start_row && c == map.start_col)
        out << 'A';
      else
        out << (row.occupancy[c] ? '#' : '.');
    }
    out << '\n';
  }
  return out.str();
}

void save_map_file(const FroggerMap& map, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write map file: " + path);
  out << map_to_text(map);
}

FroggerMap generate_map(int width, int height, double density, uint64_t seed) {
  if (width < 3 || height < 4)
    throw ValidationError("generate_map: dimension error (need width >= 3, height >= 4)");
  if (density < 0.0 || density > 1.0)
    throw ValidationError("generate_map: density must lie in [0,1]");

  FroggerMap map;
  map.width = width;
  map.height = height;
  map.rng_density = density;
  map.start_col = width / 2;
  map.start_row = height - 1;

  // Row template: goal on top, water block, grass median, road block, grass
  // start. The median is dropped when there is no room for it.
  int mid = height - 2;
  std::vector<RowKind> kinds(height, RowKind::Grass);
  kinds[0] = RowKind::Goal;
  if (mid >= 3) {
    int moving = mid - 1;
    int roads = (moving + 1) / 2;
    int waters = moving - roads;
    for (int i = 1; i <= waters; ++i) kinds[i] = RowKind::Water;
    for (int i = waters + 2; i < height - 1; ++i) kinds[i] = RowKind::Road;
  } else {
    kinds[1] = RowKind::Water;
    if (mid == 2) kinds[2] = RowKind::Road;
  }

  Rng rng(seed);
  for (int r = 0; r < height; ++r) {
    RowSpec row;
    row.kind = kinds[r];
    row.occupancy.assign(width, 0);
    if (row.kind == RowKind::Road || row.kind == RowKind::Water) {
      row.dir = (r % 2 == 1) ? RowDir::Right : RowDir::Left;
      for (int c = 0; c < width; ++c) row.occupancy[c] = rng.bernoulli(density) ? 1 : 0;
    }
    map.rows.push_back(std::move(row));
  }
  map.validate();
  return map;
}

GameState initial_state(const FroggerMap& map) {
  return state_at(map, map.start_col, map.start_row, 0);
}

GameState state_at(const FroggerMap& map, int col, int row, long tick) {
  GameState s;
  s.map = &map;
  s.col = col;
  s.row = row;
  s.tick = tick;
  return s;
}

StepResult step(const GameState& state, Action action, const Dynamics& dynamics, Rng& rng) {
  if (state.terminal != Terminal::None)
    throw std::logic_error("step: state is already terminal");
  const FroggerMap& map = *state.map;

  Action executed = action;
  if (dynamics.stochastic && rng.bernoulli(dynamics.p_fail)) {
    // Substitute one of the other four actions, never the requested one.
    int r = rng.uniform_int(kNumActions - 1);
    int requested = static_cast<int>(action);
    executed = static_cast<Action>(r < requested ? r : r + 1);
  }

  GameState next = state;
  switch (executed) {
    case Action::Up: next.row -= 1; break;
    case Action::Down: next.row += 1; break;
    case Action::Left: next.col -= 1; break;
    case Action::Right: next.col += 1; break;
    case Action::Stay: break;
  }
  next.tick = state.tick + 1;

  if (next.col < 0 || next.col >= map.width || next.row < 0 || next.row >= map.height) {
    next.terminal = Terminal::Dead;
    return {next, -10.0};
  }

  const RowSpec& row = map.rows[next.row];
  // Obstacles have now rotated one cell. A log that was under the agent at
  // the previous tick carries it along, wrapping at the edges.
  if (row.kind == RowKind::Water && map.occupied(next.row, next.col, state.tick)) {
    next.col = wrap(next.col + (row.dir == RowDir::Right ? 1 : -1), map.width);
  }

  if (row.kind == RowKind::Road && map.occupied(next.row, next.col, next.tick)) {
    next.terminal = Terminal::Dead;
    return {next, -10.0};
  }
  if (row.kind == RowKind::Water && !map.occupied(next.row, next.col, next.tick)) {
    next.terminal = Terminal::Dead;
    return {next, -10.0};
  }
  if (row.kind == RowKind::Goal) {
    next.terminal = Terminal::Goal;
    return {next, 100.0};
  }
  return {next, -1.0};
}

LocalView local_view(const GameState& state) {
  if (state.terminal != Terminal::None)
    throw std::logic_error("local_view: state is terminal");
  const FroggerMap& map = *state.map;
  LocalView v;
  int i = 0;
  for (int dr = -1; dr <= 1; ++dr) {
    for (int dc = -1; dc <= 1; ++dc, ++i) {
      int r = state.row + dr;
      int c = state.col + dc;
      if (r < 0 || r >= map.height || c < 0 || c >= map.width) {
        v.cells[i] = Cell::Wall;
        continue;
      }
      switch (map.rows[r].kind) {
        case RowKind::Grass: v.cells[i] = Cell::Grass; break;
        case RowKind::Goal: v.cells[i] = Cell::Goal; break;
        case RowKind::Road:
          v.cells[i] = map.occupied(r, c, state.tick) ? Cell::Car : Cell::Road;
          break;
        case RowKind::Water:
          v.cells[i] = map.occupied(r, c, state.tick) ? Cell::Log : Cell::Water;
          break;
      }
    }
  }
  return v;
}

StateKey markov_key(const GameState& state) {
  return StateKey{state.col, state.row,
                  static_cast<int>(state.tick % state.map->width)};
}

}  // namespace langshape
