#include "qmarl/gridworld.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>

#include <json.hpp>

namespace qmarl::grid {

namespace {

constexpr int kJungleKillStreak = 3;
constexpr int kBattleKillThreshold = 3;
constexpr double kTargetMarker = 2.0;

}  // namespace

std::string_view to_string(Scenario s) {
    switch (s) {
        case Scenario::Jungle: return "jungle";
        case Scenario::Battle: return "battle";
        case Scenario::Deception: return "deception";
    }
    return "?";
}

Scenario parse_scenario(std::string_view name) {
    if (name == "jungle") return Scenario::Jungle;
    if (name == "battle") return Scenario::Battle;
    if (name == "deception") return Scenario::Deception;
    throw ConfigError("unknown scenario '" + std::string(name) + "'");
}

std::string_view to_string(Action a) {
    switch (a) {
        case Action::Up: return "up";
        case Action::Down: return "down";
        case Action::Left: return "left";
        case Action::Right: return "right";
        case Action::Idle: return "idle";
    }
    return "?";
}

Position moved(Position p, Action a) {
    switch (a) {
        case Action::Up: return {p.x, p.y - 1};
        case Action::Down: return {p.x, p.y + 1};
        case Action::Left: return {p.x - 1, p.y};
        case Action::Right: return {p.x + 1, p.y};
        case Action::Idle: return p;
    }
    return p;
}

int chebyshev(Position a, Position b) {
    return std::max(std::abs(a.x - b.x), std::abs(a.y - b.y));
}

double euclidean(Position a, Position b) {
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    return std::sqrt(dx * dx + dy * dy);
}

double StepOutcome::reward_of(AgentId id) const {
    for (const auto& [agent, r] : rewards)
        if (agent == id) return r;
    throw UnknownAgent("no reward entry for agent " + std::to_string(id));
}

// ---------------------------------------------------------------------------
// ScenarioConfig

ScenarioConfig ScenarioConfig::defaults(Scenario s) {
    ScenarioConfig c;
    c.scenario = s;
    switch (s) {
        case Scenario::Jungle:
            c.width = c.height = 10;
            c.agents = 4;
            c.foods = 3;
            c.episode_limit = 200;
            break;
        case Scenario::Battle:
            c.width = c.height = 20;
            c.agents = c.opponents = 14;
            c.episode_limit = 300;
            break;
        case Scenario::Deception:
            c.width = c.height = 10;
            c.agents = 2;
            c.opponents = 1;
            c.landmarks = 3;
            c.episode_limit = 100;
            break;
    }
    return c;
}

void ScenarioConfig::validate() const {
    if (width < 5 || height < 5) throw ConfigError("grid must be at least 5x5");
    if (agents < 0 || opponents < 0 || foods < 0 || landmarks < 0 || walls < 0)
        throw ConfigError("entity counts must be non-negative");
    if (episode_limit < 1) throw ConfigError("episode_limit must be positive");
    if (agents < 1) throw ConfigError("at least one home agent is required");
    switch (scenario) {
        case Scenario::Jungle:
            if (opponents != 0) throw ConfigError("jungle has a single team");
            if (landmarks != 0) throw ConfigError("jungle has no landmarks");
            break;
        case Scenario::Battle:
            if (opponents < 1) throw ConfigError("battle needs an opposing team");
            if (foods != 0 || landmarks != 0) throw ConfigError("battle has no foods or landmarks");
            break;
        case Scenario::Deception:
            if (opponents < 1) throw ConfigError("deception needs at least one adversary");
            if (landmarks < 1) throw ConfigError("deception needs at least one landmark");
            if (foods != 0) throw ConfigError("deception has no foods");
            break;
    }
    const long long cells = static_cast<long long>(width) * height;
    const long long needed = static_cast<long long>(walls) + foods + landmarks + agents + opponents;
    if (needed > cells)
        throw ConfigError("cannot place " + std::to_string(needed) + " entities on " +
                          std::to_string(cells) + " cells");
}

// ---------------------------------------------------------------------------
// GridWorld

GridWorld::GridWorld(const ScenarioConfig& cfg)
    : cfg_(cfg),
      cells_(static_cast<std::size_t>(cfg.width) * static_cast<std::size_t>(cfg.height), Cell::Empty),
      occupancy_(cells_.size(), {0, 0}) {
    if (cfg.width < 1 || cfg.height < 1) throw ConfigError("grid dimensions must be positive");
}

void GridWorld::place_entity(Position p, Cell kind) {
    if (!in_bounds(p)) throw ConfigError("entity out of bounds");
    auto& c = cells_[cell_index(p)];
    if (c != Cell::Empty) throw ConfigError("cell already holds a wall, food or landmark");
    if (kind != Cell::Landmark && (occupancy_[cell_index(p)][0] + occupancy_[cell_index(p)][1]) > 0)
        throw ConfigError("obstacle placed on an agent");
    c = kind;
}

void GridWorld::add_wall(Position p) {
    place_entity(p, Cell::Wall);
    walls_.push_back(p);
}

void GridWorld::add_food(Position p) {
    place_entity(p, Cell::Food);
    foods_.push_back(p);
}

void GridWorld::add_landmark(Position p, bool target) {
    if (target && std::any_of(landmarks_.begin(), landmarks_.end(), [](const Landmark& l) { return l.target; }))
        throw ConfigError("only one landmark can be the target");
    place_entity(p, Cell::Landmark);
    landmarks_.push_back({p, target});
}

AgentId GridWorld::add_agent(int team, Position p) {
    if (team != kHomeTeam && team != kOtherTeam) throw ConfigError("team must be 0 or 1");
    if (is_obstacle(p)) throw ConfigError("agent placed on an obstacle");
    AgentState a;
    a.id = static_cast<AgentId>(agents_.size());
    a.team = team;
    a.pos = p;
    agents_.push_back(a);
    ++occupancy_[cell_index(p)][static_cast<std::size_t>(team)];
    return a.id;
}

void GridWorld::set_adjacency_streak(AgentId id, int streak) {
    if (streak < 0 || streak > kJungleKillStreak) throw DomainError("streak out of range");
    alive_agent(id);
    agents_[static_cast<std::size_t>(id)].adjacency_streak = streak;
}

const AgentState& GridWorld::agent(AgentId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= agents_.size())
        throw UnknownAgent("no agent with id " + std::to_string(id));
    return agents_[static_cast<std::size_t>(id)];
}

const AgentState& GridWorld::alive_agent(AgentId id) const {
    const auto& a = agent(id);
    if (!a.alive) throw UnknownAgent("agent " + std::to_string(id) + " is dead");
    return a;
}

bool GridWorld::in_bounds(Position p) const {
    return p.x >= 0 && p.y >= 0 && p.x < cfg_.width && p.y < cfg_.height;
}

bool GridWorld::is_wall(Position p) const { return in_bounds(p) && cells_[cell_index(p)] == Cell::Wall; }
bool GridWorld::is_food(Position p) const { return in_bounds(p) && cells_[cell_index(p)] == Cell::Food; }
bool GridWorld::is_landmark(Position p) const {
    return in_bounds(p) && cells_[cell_index(p)] == Cell::Landmark;
}

bool GridWorld::is_target(Position p) const {
    if (!is_landmark(p)) return false;
    return std::any_of(landmarks_.begin(), landmarks_.end(),
                       [&](const Landmark& l) { return l.target && l.pos == p; });
}

bool GridWorld::is_obstacle(Position p) const {
    if (!in_bounds(p)) return true;
    const auto c = cells_[cell_index(p)];
    return c == Cell::Wall || c == Cell::Food;
}

int GridWorld::agents_at(Position p, int team) const {
    if (!in_bounds(p)) return 0;
    return occupancy_[cell_index(p)][static_cast<std::size_t>(team)];
}

int GridWorld::neighbours(Position p, int team, AgentId exclude) const {
    int count = 0;
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) count += agents_at({p.x + dx, p.y + dy}, team);
    if (exclude >= 0 && agents_[static_cast<std::size_t>(exclude)].team == team) --count;
    return count;
}

std::vector<AgentId> GridWorld::alive_ids() const {
    std::vector<AgentId> ids;
    for (const auto& a : agents_)
        if (a.alive) ids.push_back(a.id);
    return ids;
}

int GridWorld::alive_count() const {
    return static_cast<int>(std::count_if(agents_.begin(), agents_.end(), [](const AgentState& a) { return a.alive; }));
}

int GridWorld::alive_count(int team) const {
    return static_cast<int>(std::count_if(agents_.begin(), agents_.end(),
                                          [team](const AgentState& a) { return a.alive && a.team == team; }));
}

std::vector<Action> GridWorld::legal_actions(AgentId id) const {
    const auto& a = alive_agent(id);
    std::vector<Action> out;
    for (Action act : kAllActions) {
        if (act == Action::Idle || !is_obstacle(moved(a.pos, act))) out.push_back(act);
    }
    return out;
}

Observation GridWorld::observe(AgentId id, TargetView view) const {
    const auto& a = alive_agent(id);
    const bool sees_target = view == TargetView::Auto && cfg_.scenario == Scenario::Deception && a.team == kHomeTeam;
    const int own = a.team;
    const int other = 1 - a.team;
    Observation obs;
    for (int py = 0; py < 3; ++py) {
        for (int px = 0; px < 3; ++px) {
            const Position p{a.pos.x + px - 1, a.pos.y + py - 1};
            if (!in_bounds(p) || is_wall(p)) {
                obs.at(px, py, Channel::Wall) = 1.0;
                continue;
            }
            if (is_food(p)) obs.at(px, py, Channel::Food) = 1.0;
            if (is_landmark(p)) obs.at(px, py, Channel::Landmark) = (sees_target && is_target(p)) ? kTargetMarker : 1.0;
            int own_count = agents_at(p, own);
            if (px == 1 && py == 1) --own_count;
            obs.at(px, py, Channel::OwnTeam) = own_count;
            obs.at(px, py, Channel::OtherTeam) = agents_at(p, other);
        }
    }
    return obs;
}

StepOutcome GridWorld::step(const JointAction& joint) {
    if (done_) throw EpisodeFinished("step called after the episode finished");

    std::vector<Action> chosen(agents_.size(), Action::Idle);
    std::vector<bool> seen(agents_.size(), false);
    for (const auto& [id, act] : joint) {
        alive_agent(id);
        const auto idx = static_cast<std::size_t>(id);
        if (seen[idx]) throw Error("duplicate action for agent " + std::to_string(id));
        seen[idx] = true;
        chosen[idx] = act;
    }

    std::vector<std::size_t> starters;
    for (const auto& a : agents_)
        if (a.alive) starters.push_back(static_cast<std::size_t>(a.id));

    // Simultaneous moves; illegal moves idle.
    for (std::size_t idx : starters) {
        auto& a = agents_[idx];
        const Position dest = moved(a.pos, chosen[idx]);
        if (dest == a.pos || is_obstacle(dest)) continue;
        --occupancy_[cell_index(a.pos)][static_cast<std::size_t>(a.team)];
        a.pos = dest;
        ++occupancy_[cell_index(a.pos)][static_cast<std::size_t>(a.team)];
    }

    // Kill resolution against the post-move occupancy.
    std::vector<std::size_t> killed;
    if (cfg_.scenario == Scenario::Jungle) {
        for (std::size_t idx : starters) {
            auto& a = agents_[idx];
            const int near = neighbours(a.pos, kHomeTeam, a.id) + neighbours(a.pos, kOtherTeam, a.id);
            a.adjacency_streak = near > 0 ? std::min(a.adjacency_streak + 1, kJungleKillStreak) : 0;
            if (a.adjacency_streak >= kJungleKillStreak) killed.push_back(idx);
        }
    } else if (cfg_.scenario == Scenario::Battle) {
        for (std::size_t idx : starters) {
            const auto& a = agents_[idx];
            if (neighbours(a.pos, 1 - a.team, -1) >= kBattleKillThreshold) killed.push_back(idx);
        }
    }
    StepOutcome out;
    for (std::size_t idx : killed) {
        auto& a = agents_[idx];
        a.alive = false;
        --occupancy_[cell_index(a.pos)][static_cast<std::size_t>(a.team)];
        out.deaths.push_back(a.id);
    }

    ++time_;
    bool done = time_ >= cfg_.episode_limit;
    if (cfg_.scenario == Scenario::Battle) done = done || alive_count(kHomeTeam) == 0 || alive_count(kOtherTeam) == 0;
    if (cfg_.scenario == Scenario::Jungle) done = done || alive_count() <= 1;
    done_ = done;
    out.done = done;

    // Deception settles on the final positions.
    bool home_on_target = false;
    bool adversary_on_target = false;
    if (cfg_.scenario == Scenario::Deception && done) {
        for (const auto& a : agents_) {
            if (!a.alive || !is_target(a.pos)) continue;
            (a.team == kHomeTeam ? home_on_target : adversary_on_target) = true;
        }
    }
    const int home_alive = alive_count(kHomeTeam);
    const int other_alive = alive_count(kOtherTeam);

    double total = 0.0;
    for (std::size_t idx : starters) {
        const auto& a = agents_[idx];
        double r = 0.0;
        switch (cfg_.scenario) {
            case Scenario::Jungle: {
                bool near_food = false;
                for (int dy = -1; dy <= 1 && !near_food; ++dy)
                    for (int dx = -1; dx <= 1 && !near_food; ++dx) near_food = is_food({a.pos.x + dx, a.pos.y + dy});
                r = near_food ? 1.0 : 0.0;
                break;
            }
            case Scenario::Battle:
                if (done && home_alive != other_alive) {
                    const int winner = home_alive > other_alive ? kHomeTeam : kOtherTeam;
                    r = a.team == winner ? 1.0 : -1.0;
                }
                break;
            case Scenario::Deception:
                if (done) {
                    if (a.team == kHomeTeam)
                        r = (!adversary_on_target && home_on_target) ? 1.0 : -1.0;
                    else
                        r = (a.alive && is_target(a.pos)) ? 1.0 : -1.0;
                }
                break;
        }
        out.rewards.emplace_back(a.id, r);
        total += r;
    }
    out.joint_return_sample = starters.empty() ? 0.0 : total / static_cast<double>(starters.size());
    return out;
}

bool GridWorld::operator==(const GridWorld& o) const {
    auto same_agent = [](const AgentState& a, const AgentState& b) {
        return a.id == b.id && a.team == b.team && a.pos == b.pos && a.alive == b.alive &&
               a.adjacency_streak == b.adjacency_streak;
    };
    auto same_landmark = [](const Landmark& a, const Landmark& b) { return a.pos == b.pos && a.target == b.target; };
    return cfg_.scenario == o.cfg_.scenario && cfg_.width == o.cfg_.width && cfg_.height == o.cfg_.height &&
           cfg_.episode_limit == o.cfg_.episode_limit && time_ == o.time_ && done_ == o.done_ &&
           walls_ == o.walls_ && foods_ == o.foods_ &&
           std::equal(landmarks_.begin(), landmarks_.end(), o.landmarks_.begin(), o.landmarks_.end(), same_landmark) &&
           std::equal(agents_.begin(), agents_.end(), o.agents_.begin(), o.agents_.end(), same_agent);
}

// ---------------------------------------------------------------------------

GridWorld new_scenario(const ScenarioConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    GridWorld world(cfg);
    Rng rng(seed);

    std::vector<Position> free;
    free.reserve(static_cast<std::size_t>(cfg.width) * static_cast<std::size_t>(cfg.height));
    for (int y = 0; y < cfg.height; ++y)
        for (int x = 0; x < cfg.width; ++x) free.push_back({x, y});

    // Partial Fisher-Yates: each draw takes a uniform cell from the unused tail.
    std::size_t used = 0;
    auto draw = [&]() {
        if (used >= free.size()) throw ConfigError("ran out of free cells during placement");
        const std::size_t pick = used + uniform_index(rng, free.size() - used);
        std::swap(free[used], free[pick]);
        return free[used++];
    };

    for (int i = 0; i < cfg.walls; ++i) world.add_wall(draw());
    for (int i = 0; i < cfg.foods; ++i) world.add_food(draw());
    if (cfg.landmarks > 0) {
        const auto target = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(cfg.landmarks)));
        for (int i = 0; i < cfg.landmarks; ++i) world.add_landmark(draw(), i == target);
    }
    for (int i = 0; i < cfg.agents; ++i) world.add_agent(kHomeTeam, draw());
    for (int i = 0; i < cfg.opponents; ++i) world.add_agent(kOtherTeam, draw());
    return world;
}

std::vector<Action> legal_actions(const GridWorld& world, AgentId id) { return world.legal_actions(id); }

Observation observe(const GridWorld& world, AgentId id, TargetView view) { return world.observe(id, view); }

StepOutcome step(GridWorld& world, const JointAction& joint) { return world.step(joint); }

std::string frame_header() {
    nlohmann::ordered_json h;
    h["schema"] = "qmarl.frame";
    h["version"] = kFrameSchemaVersion;
    h["fields"] = {"t", "width", "height", "scenario", "walls", "foods", "landmarks", "agents"};
    return h.dump();
}

std::string frame_record(const GridWorld& world) {
    using nlohmann::ordered_json;
    ordered_json rec;
    rec["t"] = world.time();
    rec["width"] = world.width();
    rec["height"] = world.height();
    rec["scenario"] = std::string(to_string(world.scenario()));
    auto cells = [](const std::vector<Position>& ps) {
        ordered_json arr = ordered_json::array();
        for (const auto& p : ps) arr.push_back({p.x, p.y});
        return arr;
    };
    rec["walls"] = cells(world.walls());
    rec["foods"] = cells(world.foods());
    ordered_json lms = ordered_json::array();
    for (const auto& l : world.landmarks()) {
        ordered_json o;
        o["x"] = l.pos.x;
        o["y"] = l.pos.y;
        o["target"] = l.target;
        lms.push_back(std::move(o));
    }
    rec["landmarks"] = std::move(lms);
    ordered_json ags = ordered_json::array();
    for (const auto& a : world.agents()) {
        ordered_json o;
        o["id"] = a.id;
        o["team"] = a.team;
        o["x"] = a.pos.x;
        o["y"] = a.pos.y;
        o["alive"] = a.alive;
        ags.push_back(std::move(o));
    }
    rec["agents"] = std::move(ags);
    return rec.dump();
}

}  // namespace qmarl::grid
