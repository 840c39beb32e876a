#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "langshape/rng.hpp"

namespace langshape {

enum class Action : int { Up = 0, Down = 1, Left = 2, Right = 3, Stay = 4 };
inline constexpr int kNumActions = 5;

const char* action_name(Action a);
std::optional<Action> action_from_name(const std::string& name);

enum class RowKind { Grass, Road, Water, Goal };
enum class RowDir { None, Left, Right };

struct RowSpec {
  RowKind kind = RowKind::Grass;
  RowDir dir = RowDir::None;
  std::vector<uint8_t> occupancy;  // tick-0 pattern, one flag per column
};

/// A full level. Row 0 is the goal row at the top, row height-1 the grass
/// start row at the bottom. Moving rows rotate their tick-0 occupancy
/// pattern one cell per step, toroidally.
struct FroggerMap {
  int width = 0;
  int height = 0;
  std::vector<RowSpec> rows;  // top first
  int start_col = 0;
  int start_row = 0;
  std::optional<double> rng_density;  // recorded by generate_map

  /// Closed-form occupancy at an arbitrary tick: the tick-0 pattern rotated
  /// by tick cells in the row's direction.
  bool occupied(int row, int col, long tick) const;

  void validate() const;  // throws ValidationError
};

enum class Terminal { None, Dead, Goal };

struct GameState {
  const FroggerMap* map = nullptr;
  int col = 0;
  int row = 0;
  long tick = 0;
  Terminal terminal = Terminal::None;
};

enum class Cell : int { Wall = 0, Grass, Road, Car, Water, Log, Goal };
inline constexpr int kNumCellKinds = 7;

const char* cell_name(Cell c);
std::optional<Cell> cell_from_name(const std::string& name);

/// The 3x3 agent-centred token window, row-major, top row first. Cells
/// outside the map read as Wall.
struct LocalView {
  std::array<Cell, 9> cells{};

  uint32_t key() const;  // 9 cells x 3 bits, packed
  std::string to_string() const;
  static LocalView from_string(const std::string& tokens);  // throws ParseError
  bool operator==(const LocalView&) const = default;
};

struct ViewActionPair {
  LocalView view;
  Action action = Action::Up;
};

/// (col, row, tick mod width). Equal keys imply identical future dynamics
/// under equal action scripts in deterministic mode.
struct StateKey {
  int col = 0;
  int row = 0;
  int phase = 0;

  int64_t packed() const {
    return (static_cast<int64_t>(phase) << 32) | (static_cast<int64_t>(row) << 16) | col;
  }
  bool operator==(const StateKey&) const = default;
};

struct Dynamics {
  bool stochastic = false;
  double p_fail = 0.2;
};

struct StepResult {
  GameState next;
  double reward = 0.0;
};

FroggerMap load_map(const std::string& text);       // throws ParseError / ValidationError
FroggerMap load_map_file(const std::string& path);  // adds IO errors
std::string map_to_text(const FroggerMap& map);
void save_map_file(const FroggerMap& map, const std::string& path);

FroggerMap generate_map(int width, int height, double density, uint64_t seed);

GameState initial_state(const FroggerMap& map);
GameState state_at(const FroggerMap& map, int col, int row, long tick = 0);

/// One simulation step. Order: resolve action (stochastic substitution),
/// move agent, off-map check, rotate obstacles, log carriage, collision /
/// drowning check, goal check. Rewards: +100 goal, -10 death, -1 otherwise.
StepResult step(const GameState& state, Action action, const Dynamics& dynamics, Rng& rng);

LocalView local_view(const GameState& state);
StateKey markov_key(const GameState& state);

}  // namespace langshape
