/**
 * \file gridworld.hpp
 * \brief Grid-world scenarios (Jungle, Battle, Deception).
 *
 * Every agent occupies one cell and several agents may share a cell. Walls
 * and foods are obstacles, landmarks are not. Moves are applied
 * simultaneously, then kills are resolved, then rewards are emitted.
 *
 * Neighbourhood everywhere means Chebyshev distance <= 1 (the 3x3 window,
 * co-located agents included).
 */
#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qmarl/common.hpp"

namespace qmarl::grid {

enum class Scenario { Jungle, Battle, Deception };

std::string_view to_string(Scenario s);
Scenario parse_scenario(std::string_view name);

/// Ordering is fixed: Up < Down < Left < Right < Idle.
enum class Action : std::uint8_t { Up = 0, Down = 1, Left = 2, Right = 3, Idle = 4 };

inline constexpr int kNumActions = 5;
inline constexpr std::array<Action, kNumActions> kAllActions{
    Action::Up, Action::Down, Action::Left, Action::Right, Action::Idle};

inline constexpr int index_of(Action a) { return static_cast<int>(a); }
inline constexpr Action action_at(int i) { return static_cast<Action>(i); }
std::string_view to_string(Action a);

struct Position {
    int x = 0;  ///< column
    int y = 0;  ///< row, 0 at the top

    auto operator<=>(const Position&) const = default;
};

Position moved(Position p, Action a);
int chebyshev(Position a, Position b);
double euclidean(Position a, Position b);

using AgentId = int;

inline constexpr int kHomeTeam = 0;
inline constexpr int kOtherTeam = 1;

struct AgentState {
    AgentId id = 0;
    int team = kHomeTeam;
    Position pos;
    bool alive = true;
    int adjacency_streak = 0;
};

struct Landmark {
    Position pos;
    bool target = false;
};

/// Entity counts and limits for one scenario.
///
/// `agents` is the home-team size (all agents in Jungle). `opponents` is the
/// second team: the Battle opponent team or the Deception adversaries.
struct ScenarioConfig {
    Scenario scenario = Scenario::Jungle;
    int width = 10;
    int height = 10;
    int agents = 4;
    int opponents = 0;
    int foods = 0;
    int landmarks = 0;
    int walls = 0;
    int episode_limit = 200;

    static ScenarioConfig defaults(Scenario s);
    void validate() const;
    int team_size(int team) const { return team == kHomeTeam ? agents : opponents; }
    int num_teams() const { return scenario == Scenario::Jungle ? 1 : 2; }
};

/// Observation channels, per 3x3 patch cell.
enum class Channel : int { Wall = 0, Food = 1, Landmark = 2, OwnTeam = 3, OtherTeam = 4 };
inline constexpr int kNumChannels = 5;
inline constexpr int kPatchCells = 9;

/// 3x3 patch around an agent. Patch coordinates (px, py) run 0..2 with the
/// observer at (1, 1); (1, 0) is the cell directly above.
struct Observation {
    std::array<double, kPatchCells * kNumChannels> values{};

    double at(int px, int py, Channel c) const {
        return values[static_cast<std::size_t>((py * 3 + px) * kNumChannels + static_cast<int>(c))];
    }
    double& at(int px, int py, Channel c) {
        return values[static_cast<std::size_t>((py * 3 + px) * kNumChannels + static_cast<int>(c))];
    }
};

/// How the target landmark appears in an observation.
enum class TargetView { Auto, Hidden };

struct StepOutcome {
    /// One entry per agent alive at the start of the step, ascending id.
    std::vector<std::pair<AgentId, double>> rewards;
    std::vector<AgentId> deaths;
    bool done = false;
    double joint_return_sample = 0.0;

    double reward_of(AgentId id) const;
};

using JointAction = std::vector<std::pair<AgentId, Action>>;

class GridWorld {
public:
    /// Empty world with the dimensions and limits of `cfg`; entities are
    /// added with the add_* calls.
    explicit GridWorld(const ScenarioConfig& cfg);

    void add_wall(Position p);
    void add_food(Position p);
    void add_landmark(Position p, bool target);
    AgentId add_agent(int team, Position p);
    void set_adjacency_streak(AgentId id, int streak);

    const ScenarioConfig& config() const { return cfg_; }
    Scenario scenario() const { return cfg_.scenario; }
    int width() const { return cfg_.width; }
    int height() const { return cfg_.height; }
    int time() const { return time_; }
    int episode_limit() const { return cfg_.episode_limit; }
    bool done() const { return done_; }

    const std::vector<AgentState>& agents() const { return agents_; }
    const AgentState& agent(AgentId id) const;
    const std::vector<Position>& walls() const { return walls_; }
    const std::vector<Position>& foods() const { return foods_; }
    const std::vector<Landmark>& landmarks() const { return landmarks_; }

    bool in_bounds(Position p) const;
    bool is_wall(Position p) const;
    bool is_food(Position p) const;
    bool is_landmark(Position p) const;
    bool is_target(Position p) const;
    /// Out-of-bounds, wall and food cells.
    bool is_obstacle(Position p) const;
    /// Alive agents of `team` on cell p.
    int agents_at(Position p, int team) const;

    std::vector<AgentId> alive_ids() const;
    int alive_count() const;
    int alive_count(int team) const;

    std::vector<Action> legal_actions(AgentId id) const;
    Observation observe(AgentId id, TargetView view = TargetView::Auto) const;

    /// Advances one step. Illegal actions are executed as Idle; alive agents
    /// missing from `joint` idle.
    StepOutcome step(const JointAction& joint);

    bool operator==(const GridWorld& other) const;

private:
    enum class Cell : std::uint8_t { Empty, Wall, Food, Landmark };

    std::size_t cell_index(Position p) const {
        return static_cast<std::size_t>(p.y) * static_cast<std::size_t>(cfg_.width) +
               static_cast<std::size_t>(p.x);
    }
    const AgentState& alive_agent(AgentId id) const;
    void place_entity(Position p, Cell kind);
    int neighbours(Position p, int team, AgentId exclude) const;

    ScenarioConfig cfg_;
    std::vector<Cell> cells_;
    std::vector<std::array<std::int32_t, 2>> occupancy_;
    std::vector<Position> walls_;
    std::vector<Position> foods_;
    std::vector<Landmark> landmarks_;
    std::vector<AgentState> agents_;
    int time_ = 0;
    bool done_ = false;
};

/// Random scenario: walls, foods, landmarks, then agents, each on distinct
/// free cells drawn uniformly. Deterministic in `seed`.
GridWorld new_scenario(const ScenarioConfig& cfg, std::uint64_t seed);

/// Free function forms of the world queries.
std::vector<Action> legal_actions(const GridWorld& world, AgentId id);
Observation observe(const GridWorld& world, AgentId id, TargetView view = TargetView::Auto);
StepOutcome step(GridWorld& world, const JointAction& joint);

/// Frame record schema version written in the frame-dump header line.
inline constexpr int kFrameSchemaVersion = 1;
std::string frame_header();
/// One line of the frame dump: the full visible state at the current time.
std::string frame_record(const GridWorld& world);

}  // namespace qmarl::grid
