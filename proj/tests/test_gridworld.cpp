#include <doctest.h>

#include <algorithm>
#include <json.hpp>

#include "support.hpp"

using namespace qmarl;
using namespace qmarl::grid;
using testing::all;
using testing::empty_world;

namespace {

bool has(const std::vector<Action>& v, Action a) { return std::find(v.begin(), v.end(), a) != v.end(); }

}  // namespace

TEST_CASE("action ordering is fixed") {
    CHECK(index_of(Action::Up) == 0);
    CHECK(index_of(Action::Down) == 1);
    CHECK(index_of(Action::Left) == 2);
    CHECK(index_of(Action::Right) == 3);
    CHECK(index_of(Action::Idle) == 4);
    CHECK(moved({3, 3}, Action::Up) == Position{3, 2});
    CHECK(moved({3, 3}, Action::Down) == Position{3, 4});
    CHECK(moved({3, 3}, Action::Left) == Position{2, 3});
    CHECK(moved({3, 3}, Action::Right) == Position{4, 3});
}

TEST_CASE("new_scenario places the requested entities") {
    auto cfg = ScenarioConfig::defaults(Scenario::Jungle);
    cfg.width = cfg.height = 10;
    cfg.agents = 4;
    cfg.foods = 3;
    const auto w = new_scenario(cfg, 7);
    CHECK(w.alive_count() == 4);
    CHECK(w.foods().size() == 3);
    CHECK(w.time() == 0);
    for (const auto& a : w.agents()) CHECK_FALSE(w.is_obstacle(a.pos));
}

TEST_CASE("new_scenario is deterministic in the seed") {
    for (auto s : {Scenario::Jungle, Scenario::Battle, Scenario::Deception}) {
        const auto cfg = ScenarioConfig::defaults(s);
        CHECK(new_scenario(cfg, 11) == new_scenario(cfg, 11));
        CHECK_FALSE(new_scenario(cfg, 11) == new_scenario(cfg, 12));
    }
}

TEST_CASE("overfull scenarios are rejected") {
    auto cfg = ScenarioConfig::defaults(Scenario::Battle);
    cfg.width = cfg.height = 5;
    cfg.agents = 20;
    cfg.opponents = 20;
    CHECK_THROWS_AS(new_scenario(cfg, 1), ConfigError);
    cfg = ScenarioConfig::defaults(Scenario::Jungle);
    cfg.width = 4;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("deception has exactly one target landmark") {
    const auto w = new_scenario(ScenarioConfig::defaults(Scenario::Deception), 5);
    const auto n = std::count_if(w.landmarks().begin(), w.landmarks().end(), [](const Landmark& l) { return l.target; });
    CHECK(n == 1);
    CHECK(w.alive_count(kHomeTeam) == 2);
    CHECK(w.alive_count(kOtherTeam) == 1);
}

TEST_CASE("legal actions at the corner") {
    auto w = empty_world(Scenario::Jungle);
    const auto id = w.add_agent(kHomeTeam, {0, 0});
    const auto legal = w.legal_actions(id);
    CHECK(legal.size() == 3);
    CHECK(has(legal, Action::Down));
    CHECK(has(legal, Action::Right));
    CHECK(has(legal, Action::Idle));
}

TEST_CASE("legal actions exclude walls and foods but not agents or landmarks") {
    auto w = empty_world(Scenario::Jungle);
    w.add_wall({5, 4});
    w.add_food({4, 3});
    const auto id = w.add_agent(kHomeTeam, {4, 4});
    auto legal = w.legal_actions(id);
    CHECK(legal.size() == 3);
    CHECK_FALSE(has(legal, Action::Right));
    CHECK_FALSE(has(legal, Action::Up));

    auto crowd = empty_world(Scenario::Jungle);
    const auto c = crowd.add_agent(kHomeTeam, {4, 4});
    for (Position p : {Position{4, 3}, Position{4, 5}, Position{3, 4}, Position{5, 4}}) crowd.add_agent(kHomeTeam, p);
    CHECK(crowd.legal_actions(c).size() == 5);

    auto dec = empty_world(Scenario::Deception);
    dec.add_landmark({2, 1}, true);
    const auto d = dec.add_agent(kHomeTeam, {2, 2});
    CHECK(has(dec.legal_actions(d), Action::Up));
}

TEST_CASE("legal_actions and observe reject dead or absent agents") {
    auto w = empty_world(Scenario::Jungle);
    w.add_agent(kHomeTeam, {1, 1});
    CHECK_THROWS_AS(w.legal_actions(5), UnknownAgent);
    CHECK_THROWS_AS(w.observe(-1), UnknownAgent);
}

TEST_CASE("observation of a lone interior agent is empty") {
    auto w = empty_world(Scenario::Jungle);
    const auto id = w.add_agent(kHomeTeam, {5, 5});
    const auto obs = w.observe(id);
    for (double v : obs.values) CHECK(v == 0.0);
}

TEST_CASE("corner observation flags five out-of-bounds cells") {
    auto w = empty_world(Scenario::Jungle);
    const auto id = w.add_agent(kHomeTeam, {0, 0});
    const auto obs = w.observe(id);
    int walls = 0;
    for (int py = 0; py < 3; ++py)
        for (int px = 0; px < 3; ++px) walls += obs.at(px, py, Channel::Wall) > 0 ? 1 : 0;
    CHECK(walls == 5);
}

TEST_CASE("food above sets the food channel of the north cell") {
    auto w = empty_world(Scenario::Jungle);
    w.add_food({4, 3});
    const auto id = w.add_agent(kHomeTeam, {4, 4});
    const auto obs = w.observe(id);
    CHECK(obs.at(1, 0, Channel::Food) == 1.0);
    CHECK(obs.at(1, 2, Channel::Food) == 0.0);
}

TEST_CASE("team counts exclude the observer") {
    auto w = empty_world(Scenario::Battle);
    const auto id = w.add_agent(kHomeTeam, {4, 4});
    w.add_agent(kHomeTeam, {4, 4});
    w.add_agent(kOtherTeam, {5, 5});
    w.add_agent(kOtherTeam, {5, 5});
    const auto obs = w.observe(id);
    CHECK(obs.at(1, 1, Channel::OwnTeam) == 1.0);
    CHECK(obs.at(2, 2, Channel::OtherTeam) == 2.0);
    const auto other = w.observe(2);
    CHECK(other.at(1, 1, Channel::OwnTeam) == 1.0);
    CHECK(other.at(0, 0, Channel::OtherTeam) == 2.0);
}

TEST_CASE("only home observers see the target flag") {
    auto w = empty_world(Scenario::Deception);
    w.add_landmark({4, 3}, true);
    w.add_landmark({3, 4}, false);
    const auto home = w.add_agent(kHomeTeam, {4, 4});
    const auto adv = w.add_agent(kOtherTeam, {4, 4});
    CHECK(w.observe(home).at(1, 0, Channel::Landmark) > w.observe(home).at(0, 1, Channel::Landmark));
    CHECK(w.observe(adv).at(1, 0, Channel::Landmark) == w.observe(adv).at(0, 1, Channel::Landmark));
    CHECK(w.observe(home, TargetView::Hidden).values == w.observe(adv, TargetView::Hidden).values);
}

TEST_CASE("jungle agent beside food earns +1") {
    auto w = empty_world(Scenario::Jungle);
    w.add_food({4, 3});
    const auto a = w.add_agent(kHomeTeam, {4, 4});
    const auto b = w.add_agent(kHomeTeam, {8, 8});
    const auto out = w.step(all(w, Action::Idle));
    CHECK(out.reward_of(a) == 1.0);
    CHECK(out.reward_of(b) == 0.0);
    CHECK(out.joint_return_sample == 0.5);
}

TEST_CASE("jungle kill after the third consecutive adjacent step") {
    auto w = empty_world(Scenario::Jungle);
    const auto a = w.add_agent(kHomeTeam, {4, 4});
    const auto b = w.add_agent(kHomeTeam, {5, 5});
    w.add_agent(kHomeTeam, {0, 9});
    w.set_adjacency_streak(a, 2);
    const auto out = w.step(all(w, Action::Idle));
    CHECK(std::find(out.deaths.begin(), out.deaths.end(), a) != out.deaths.end());
    CHECK(std::find(out.deaths.begin(), out.deaths.end(), b) == out.deaths.end());
    CHECK(w.agent(b).adjacency_streak == 1);
}

TEST_CASE("jungle streak resets when isolated") {
    auto w = empty_world(Scenario::Jungle);
    const auto a = w.add_agent(kHomeTeam, {4, 4});
    w.add_agent(kHomeTeam, {5, 4});
    w.add_agent(kHomeTeam, {0, 9});
    w.set_adjacency_streak(a, 2);
    w.step({{a, Action::Left}, {1, Action::Right}});
    CHECK(w.agent(a).alive);
    CHECK(w.agent(a).adjacency_streak == 0);
}

TEST_CASE("battle agent with two adjacent opponents survives, three kill") {
    auto w = empty_world(Scenario::Battle);
    const auto a = w.add_agent(kHomeTeam, {4, 4});
    w.add_agent(kOtherTeam, {3, 3});
    w.add_agent(kOtherTeam, {5, 5});
    auto out = w.step(all(w, Action::Idle));
    CHECK(out.deaths.empty());

    auto w3 = empty_world(Scenario::Battle);
    const auto b = w3.add_agent(kHomeTeam, {4, 4});
    w3.add_agent(kOtherTeam, {3, 3});
    w3.add_agent(kOtherTeam, {5, 5});
    w3.add_agent(kOtherTeam, {4, 4});
    out = w3.step(all(w3, Action::Idle));
    REQUIRE(out.deaths.size() == 1);
    CHECK(out.deaths[0] == b);
    CHECK(out.done);  // home team extinct
    CHECK(out.reward_of(b) == -1.0);
    CHECK(out.reward_of(1) == 1.0);
    (void)a;
}

TEST_CASE("battle terminal rewards by survivor count") {
    auto w = empty_world(Scenario::Battle, 20, 20, 1);
    for (int i = 0; i < 5; ++i) w.add_agent(kHomeTeam, {i * 3, 0});
    for (int i = 0; i < 3; ++i) w.add_agent(kOtherTeam, {i * 3, 10});
    const auto out = w.step(all(w, Action::Idle));
    CHECK(out.done);
    for (const auto& [id, r] : out.rewards) CHECK(r == (w.agent(id).team == kHomeTeam ? 1.0 : -1.0));
}

TEST_CASE("battle tie at the limit pays zero") {
    auto w = empty_world(Scenario::Battle, 10, 10, 2);
    w.add_agent(kHomeTeam, {1, 1});
    w.add_agent(kOtherTeam, {8, 8});
    auto out = w.step(all(w, Action::Idle));
    CHECK_FALSE(out.done);
    for (const auto& [id, r] : out.rewards) CHECK(r == 0.0);
    out = w.step(all(w, Action::Idle));
    CHECK(out.done);
    for (const auto& [id, r] : out.rewards) CHECK(r == 0.0);
}

TEST_CASE("deception terminal rewards") {
    auto make = [](Position home, Position adv) {
        auto w = empty_world(Scenario::Deception, 10, 10, 1);
        w.add_landmark({2, 2}, true);
        w.add_landmark({7, 7}, false);
        w.add_agent(kHomeTeam, home);
        w.add_agent(kHomeTeam, {5, 0});
        w.add_agent(kOtherTeam, adv);
        return w;
    };
    auto w = make({2, 2}, {7, 7});
    auto out = w.step(all(w, Action::Idle));
    CHECK(out.reward_of(0) == 1.0);
    CHECK(out.reward_of(1) == 1.0);
    CHECK(out.reward_of(2) == -1.0);

    w = make({2, 2}, {2, 2});
    out = w.step(all(w, Action::Idle));
    CHECK(out.reward_of(0) == -1.0);
    CHECK(out.reward_of(2) == 1.0);

    w = make({0, 0}, {7, 7});
    out = w.step(all(w, Action::Idle));
    CHECK(out.reward_of(0) == -1.0);
    CHECK(out.reward_of(2) == -1.0);
}

TEST_CASE("illegal actions execute as Idle") {
    auto w = empty_world(Scenario::Jungle);
    const auto id = w.add_agent(kHomeTeam, {0, 0});
    w.add_agent(kHomeTeam, {9, 9});
    w.step({{id, Action::Up}});
    CHECK(w.agent(id).pos == Position{0, 0});
}

TEST_CASE("step after done raises EpisodeFinished") {
    auto w = empty_world(Scenario::Jungle, 10, 10, 1);
    w.add_agent(kHomeTeam, {0, 0});
    w.add_agent(kHomeTeam, {9, 9});
    w.step({});
    CHECK(w.done());
    CHECK_THROWS_AS(w.step({}), EpisodeFinished);
}

TEST_CASE("step rejects dead agents") {
    auto w = empty_world(Scenario::Jungle);
    w.add_agent(kHomeTeam, {0, 0});
    w.add_agent(kHomeTeam, {9, 9});
    CHECK_THROWS_AS(w.step({{7, Action::Idle}}), UnknownAgent);
}

TEST_CASE("jungle ends when at most one agent is alive") {
    auto w = empty_world(Scenario::Jungle);
    const auto a = w.add_agent(kHomeTeam, {4, 4});
    const auto b = w.add_agent(kHomeTeam, {4, 4});
    w.set_adjacency_streak(a, 2);
    w.set_adjacency_streak(b, 2);
    const auto out = w.step(all(w, Action::Idle));
    CHECK(out.deaths.size() == 2);
    CHECK(out.done);
}

TEST_CASE("frame records follow the header schema") {
    const auto w = new_scenario(ScenarioConfig::defaults(Scenario::Deception), 3);
    const auto header = nlohmann::json::parse(frame_header());
    CHECK(header["schema"] == "qmarl.frame");
    CHECK(header["version"] == kFrameSchemaVersion);
    const auto rec = nlohmann::ordered_json::parse(frame_record(w));
    std::vector<std::string> keys;
    for (const auto& [k, _] : rec.items()) keys.push_back(k);
    CHECK(keys == header["fields"].get<std::vector<std::string>>());
    CHECK(rec["landmarks"].size() == 3);
    CHECK(rec["agents"].size() == 3);
}
