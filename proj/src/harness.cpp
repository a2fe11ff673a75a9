#include "qmarl/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

namespace qmarl::harness {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

template <typename T>
void read_field(const json& block, const char* key, T& out, const std::string& where) {
    const auto it = block.find(key);
    if (it == block.end()) return;
    try {
        out = it->get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + " has the wrong type");
    }
}

void reject_unknown(const json& block, std::initializer_list<const char*> known, const std::string& where) {
    if (!block.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [key, _] : block.items()) {
        const bool ok = std::any_of(known.begin(), known.end(), [&](const char* k) { return key == k; });
        if (!ok) throw ConfigError("unknown key '" + where + "." + key + "'");
    }
}

}  // namespace

void RunConfig::validate() const {
    scenario.validate();
    trainer.validate();
    network.validate();
    if (run.batches < 0) throw ConfigError("run.batches must be non-negative");
    if (run.parallelism < 1) throw ConfigError("run.parallelism must be at least 1");
    if (run.checkpoint_every < 1) throw ConfigError("run.checkpoint_every must be at least 1");
    if (run.log_every < 1) throw ConfigError("run.log_every must be at least 1");
    if (run.output_dir.empty()) throw ConfigError("run.output_dir must not be empty");
    if (trainer.opponent == rl::TeamPolicy::Random && scenario.num_teams() < 2)
        throw ConfigError("trainer.opponent applies only to two-team scenarios");
}

RunConfig parse_config(const json& j) {
    if (!j.is_object()) throw ConfigError("config must be an object");
    reject_unknown(j, {"scenario", "trainer", "network", "run"}, "config");
    const auto sit = j.find("scenario");
    if (sit == j.end()) throw ConfigError("config.scenario is required");
    const json& s = *sit;
    reject_unknown(s, {"type", "width", "height", "agents", "opponents", "foods", "landmarks", "walls", "episode_limit"},
                   "scenario");
    std::string type;
    read_field(s, "type", type, "scenario");
    if (type.empty()) throw ConfigError("scenario.type is required");

    RunConfig cfg;
    cfg.scenario = grid::ScenarioConfig::defaults(grid::parse_scenario(type));
    auto& sc = cfg.scenario;
    read_field(s, "width", sc.width, "scenario");
    read_field(s, "height", sc.height, "scenario");
    read_field(s, "agents", sc.agents, "scenario");
    read_field(s, "opponents", sc.opponents, "scenario");
    read_field(s, "foods", sc.foods, "scenario");
    read_field(s, "landmarks", sc.landmarks, "scenario");
    read_field(s, "walls", sc.walls, "scenario");
    read_field(s, "episode_limit", sc.episode_limit, "scenario");

    if (const auto it = j.find("trainer"); it != j.end()) {
        const json& t = *it;
        reject_unknown(t, {"gamma", "lr_policy", "lr_critic", "depth", "batch_episodes", "algorithm",
                           "update_every_step", "opponent"},
                       "trainer");
        auto& tc = cfg.trainer;
        read_field(t, "gamma", tc.gamma, "trainer");
        read_field(t, "lr_policy", tc.lr_policy, "trainer");
        read_field(t, "lr_critic", tc.lr_critic, "trainer");
        read_field(t, "depth", tc.depth, "trainer");
        read_field(t, "batch_episodes", tc.batch_episodes, "trainer");
        read_field(t, "update_every_step", tc.update_every_step, "trainer");
        std::string name;
        read_field(t, "algorithm", name, "trainer");
        if (!name.empty()) tc.algorithm = rl::parse_algorithm(name);
        name.clear();
        read_field(t, "opponent", name, "trainer");
        if (!name.empty()) tc.opponent = rl::parse_team_policy(name);
    }
    if (const auto it = j.find("network"); it != j.end()) {
        const json& n = *it;
        reject_unknown(n, {"hidden", "rounds", "delta_d", "n_max"}, "network");
        read_field(n, "hidden", cfg.network.hidden, "network");
        read_field(n, "rounds", cfg.network.rounds, "network");
        read_field(n, "delta_d", cfg.network.delta_d, "network");
        read_field(n, "n_max", cfg.network.n_max, "network");
    }
    if (const auto it = j.find("run"); it != j.end()) {
        const json& r = *it;
        reject_unknown(r, {"seed", "batches", "output_dir", "parallelism", "checkpoint_every", "log_every",
                           "deterministic"},
                       "run");
        read_field(r, "seed", cfg.run.seed, "run");
        read_field(r, "batches", cfg.run.batches, "run");
        read_field(r, "output_dir", cfg.run.output_dir, "run");
        read_field(r, "parallelism", cfg.run.parallelism, "run");
        read_field(r, "checkpoint_every", cfg.run.checkpoint_every, "run");
        read_field(r, "log_every", cfg.run.log_every, "run");
        read_field(r, "deterministic", cfg.run.deterministic, "run");
    }
    cfg.validate();
    return cfg;
}

RunConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_config(j);
}

ordered_json config_to_json(const RunConfig& cfg) {
    ordered_json j;
    const auto& sc = cfg.scenario;
    j["scenario"] = {{"type", std::string(grid::to_string(sc.scenario))},
                     {"width", sc.width},
                     {"height", sc.height},
                     {"agents", sc.agents},
                     {"opponents", sc.opponents},
                     {"foods", sc.foods},
                     {"landmarks", sc.landmarks},
                     {"walls", sc.walls},
                     {"episode_limit", sc.episode_limit}};
    const auto& tc = cfg.trainer;
    j["trainer"] = {{"gamma", tc.gamma},
                    {"lr_policy", tc.lr_policy},
                    {"lr_critic", tc.lr_critic},
                    {"depth", tc.depth},
                    {"batch_episodes", tc.batch_episodes},
                    {"algorithm", std::string(rl::to_string(tc.algorithm))},
                    {"update_every_step", tc.update_every_step},
                    {"opponent", std::string(rl::to_string(tc.opponent))}};
    j["network"] = {{"hidden", cfg.network.hidden},
                    {"rounds", cfg.network.rounds},
                    {"delta_d", cfg.network.delta_d},
                    {"n_max", cfg.network.n_max}};
    j["run"] = {{"seed", cfg.run.seed},
                {"batches", cfg.run.batches},
                {"output_dir", cfg.run.output_dir},
                {"parallelism", cfg.run.parallelism},
                {"checkpoint_every", cfg.run.checkpoint_every},
                {"log_every", cfg.run.log_every},
                {"deterministic", cfg.run.deterministic}};
    return j;
}

fs::path resolve_output_dir(const RunConfig& cfg) {
    if (const char* env = std::getenv(kOutputDirEnv); env != nullptr && *env != '\0') return fs::path(env);
    return fs::path(cfg.run.output_dir);
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kColumns = "batch,team,mean_reward,win_rate,lr,seconds,mean_alive";

// Shortest representation that parses back to the same double.
std::string format_double(double x) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw IoError("bad metrics number '" + s + "'");
    }
    if (used != s.size()) throw IoError("bad metrics number '" + s + "'");
    return v;
}

int parse_int(const std::string& s) {
    std::size_t used = 0;
    int v = 0;
    try {
        v = std::stoi(s, &used);
    } catch (const std::exception&) {
        throw IoError("bad metrics integer '" + s + "'");
    }
    if (used != s.size()) throw IoError("bad metrics integer '" + s + "'");
    return v;
}

}  // namespace

std::string metrics_header() {
    return std::string("# mean_reward: per-agent mean of the episode reward sum, averaged over the batch\n") +
           kColumns + "\n";
}

std::string format_metrics_row(const MetricsRow& r) {
    return std::to_string(r.batch) + "," + std::to_string(r.team) + "," + format_double(r.mean_reward) + "," +
           format_double(r.win_rate) + "," + format_double(r.lr) + "," + format_double(r.seconds) + "," +
           format_double(r.mean_alive);
}

MetricsRow parse_metrics_row(const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 7) throw IoError("metrics row must have 7 columns: '" + line + "'");
    return {parse_int(cells[0]),    parse_int(cells[1]),    parse_double(cells[2]), parse_double(cells[3]),
            parse_double(cells[4]), parse_double(cells[5]), parse_double(cells[6])};
}

std::vector<MetricsRow> read_metrics(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open metrics " + path.string());
    std::vector<MetricsRow> rows;
    std::string line;
    bool header = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header) {
            if (line != kColumns) throw IoError("unexpected metrics columns: " + line);
            header = true;
            continue;
        }
        rows.push_back(parse_metrics_row(line));
    }
    return rows;
}

std::vector<MetricsRow> metrics_rows(const rl::BatchMetrics& m, bool zero_seconds) {
    std::vector<MetricsRow> rows;
    for (int t = 0; t < m.num_teams; ++t) {
        const auto& s = m.teams[static_cast<std::size_t>(t)];
        rows.push_back({m.batch, t, s.mean_reward, s.win_rate, s.learning_rate, zero_seconds ? 0.0 : m.seconds,
                        s.mean_alive});
    }
    return rows;
}

// ---------------------------------------------------------------------------

namespace {

ordered_json network_json(const nn::Network& n) {
    ordered_json layers = ordered_json::array();
    for (const auto& l : n.layers) {
        ordered_json o;
        o["in"] = l.in;
        o["out"] = l.out;
        o["w"] = l.w;
        o["b"] = l.b;
        layers.push_back(std::move(o));
    }
    return ordered_json{{"layers", std::move(layers)}};
}

void network_from_json(const json& j, nn::Network& into, const char* what) {
    const auto& layers = j.at("layers");
    if (layers.size() != into.layers.size())
        throw ShapeMismatch(std::string(what) + ": checkpoint has " + std::to_string(layers.size()) +
                            " layers, expected " + std::to_string(into.layers.size()));
    for (std::size_t i = 0; i < layers.size(); ++i) {
        auto& l = into.layers[i];
        const auto& o = layers[i];
        if (o.at("in").get<int>() != l.in || o.at("out").get<int>() != l.out)
            throw ShapeMismatch(std::string(what) + ": layer " + std::to_string(i) + " shape differs");
        auto w = o.at("w").get<std::vector<double>>();
        auto b = o.at("b").get<std::vector<double>>();
        if (w.size() != l.w.size() || b.size() != l.b.size())
            throw ShapeMismatch(std::string(what) + ": layer " + std::to_string(i) + " size differs");
        l.w = std::move(w);
        l.b = std::move(b);
    }
}

ordered_json adam_json(const nn::AdamState& a) {
    ordered_json o;
    o["step"] = a.step;
    o["beta1"] = a.beta1;
    o["beta2"] = a.beta2;
    o["epsilon"] = a.epsilon;
    o["learning_rate"] = a.learning_rate;
    o["m"] = network_json(a.m);
    o["v"] = network_json(a.v);
    return o;
}

void adam_from_json(const json& j, nn::AdamState& a, const char* what) {
    a.step = j.at("step").get<std::uint64_t>();
    a.beta1 = j.at("beta1").get<double>();
    a.beta2 = j.at("beta2").get<double>();
    a.epsilon = j.at("epsilon").get<double>();
    a.learning_rate = j.at("learning_rate").get<double>();
    network_from_json(j.at("m"), a.m, what);
    network_from_json(j.at("v"), a.v, what);
}

}  // namespace

ordered_json checkpoint_to_json(const rl::ModelSet& models) {
    ordered_json j;
    j["schema"] = "qmarl.checkpoint";
    j["version"] = kCheckpointVersion;
    j["algorithm"] = std::string(rl::to_string(models.algorithm));
    j["network"] = {{"hidden", models.network.hidden},
                    {"rounds", models.network.rounds},
                    {"delta_d", models.network.delta_d},
                    {"n_max", models.network.n_max}};
    ordered_json teams = ordered_json::array();
    for (const auto& t : models.teams) {
        ordered_json o;
        o["kind"] = std::string(rl::to_string(t.kind));
        o["policy"] = network_json(t.policy.net);
        o["critic"] = network_json(t.critic.net);
        o["mlp"] = network_json(t.mlp.net);
        o["policy_adam"] = adam_json(t.policy_adam);
        o["critic_adam"] = adam_json(t.critic_adam);
        o["mlp_adam"] = adam_json(t.mlp_adam);
        ordered_json sched;
        sched["best"] = std::isfinite(t.schedule.best) ? ordered_json(t.schedule.best) : ordered_json(nullptr);
        sched["stale"] = t.schedule.stale;
        sched["factor"] = t.schedule.factor;
        sched["patience"] = t.schedule.patience;
        sched["learning_rate"] = t.schedule.learning_rate;
        o["schedule"] = std::move(sched);
        teams.push_back(std::move(o));
    }
    j["teams"] = std::move(teams);
    return j;
}

rl::ModelSet checkpoint_from_json(const json& j) {
    try {
        if (j.at("schema").get<std::string>() != "qmarl.checkpoint") throw IoError("not a checkpoint file");
        if (j.at("version").get<int>() != kCheckpointVersion)
            throw IoError("unsupported checkpoint version " + std::to_string(j.at("version").get<int>()));
        rl::ModelSet ms;
        ms.algorithm = rl::parse_algorithm(j.at("algorithm").get<std::string>());
        const auto& n = j.at("network");
        ms.network.hidden = n.at("hidden").get<int>();
        ms.network.rounds = n.at("rounds").get<int>();
        ms.network.delta_d = n.at("delta_d").get<double>();
        ms.network.n_max = n.at("n_max").get<int>();
        ms.network.validate();
        for (const auto& o : j.at("teams")) {
            rl::TeamModel t;
            t.kind = rl::parse_team_policy(o.at("kind").get<std::string>());
            t.policy = nn::MpnnParams(nn::policy_config(ms.network.hidden, ms.network.rounds, ms.network.n_max));
            t.critic = nn::MpnnParams(nn::critic_config(ms.network.hidden, ms.network.rounds, ms.network.n_max));
            t.mlp = nn::MlpParams(graph::kVertexFeatureDim, ms.network.hidden, grid::kNumActions);
            network_from_json(o.at("policy"), t.policy.net, "policy");
            network_from_json(o.at("critic"), t.critic.net, "critic");
            network_from_json(o.at("mlp"), t.mlp.net, "mlp");
            t.policy_adam = nn::make_adam(t.policy.net, 0.01);
            t.critic_adam = nn::make_adam(t.critic.net, 0.01);
            t.mlp_adam = nn::make_adam(t.mlp.net, 0.01);
            adam_from_json(o.at("policy_adam"), t.policy_adam, "policy_adam");
            adam_from_json(o.at("critic_adam"), t.critic_adam, "critic_adam");
            adam_from_json(o.at("mlp_adam"), t.mlp_adam, "mlp_adam");
            const auto& s = o.at("schedule");
            t.schedule.best = s.at("best").is_null() ? -std::numeric_limits<double>::infinity()
                                                     : s.at("best").get<double>();
            t.schedule.stale = s.at("stale").get<int>();
            t.schedule.factor = s.at("factor").get<double>();
            t.schedule.patience = s.at("patience").get<int>();
            t.schedule.learning_rate = s.at("learning_rate").get<double>();
            ms.teams.push_back(std::move(t));
        }
        return ms;
    } catch (const json::exception& e) {
        throw IoError(std::string("malformed checkpoint: ") + e.what());
    }
}

void save_checkpoint(const fs::path& path, const rl::ModelSet& models) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const auto tmp = fs::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError("cannot write checkpoint " + path.string());
        out << checkpoint_to_json(models).dump() << '\n';
        if (!out) throw IoError("failed writing checkpoint " + path.string());
    }
    fs::rename(tmp, path);
}

rl::ModelSet load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw IoError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
    }
    return checkpoint_from_json(j);
}

void check_compatible(const rl::ModelSet& models, const grid::ScenarioConfig& scenario, const rl::NetworkConfig& net) {
    if (!(models.network == net))
        throw ShapeMismatch("checkpoint network (hidden " + std::to_string(models.network.hidden) + ", rounds " +
                            std::to_string(models.network.rounds) + ") does not match the config");
    if (static_cast<int>(models.teams.size()) != scenario.num_teams())
        throw ShapeMismatch("checkpoint has " + std::to_string(models.teams.size()) + " teams, scenario needs " +
                            std::to_string(scenario.num_teams()));
}

// ---------------------------------------------------------------------------

TrainResult run_train(const RunConfig& cfg_in, std::ostream& log) {
    RunConfig cfg = cfg_in;
    cfg.validate();
    if (cfg.run.deterministic) cfg.run.parallelism = 1;
    const auto dir = resolve_output_dir(cfg);
    fs::create_directories(dir);

    TrainResult result;
    result.metrics_path = dir / "metrics.csv";
    result.checkpoint_path = dir / "checkpoint.json";
    {
        std::ofstream cfg_out(dir / "config.json");
        cfg_out << config_to_json(cfg).dump(2) << '\n';
    }
    std::ofstream metrics(result.metrics_path, std::ios::binary);
    if (!metrics) throw IoError("cannot write " + result.metrics_path.string());
    metrics << metrics_header();

    rl::Trainer trainer(cfg.scenario, cfg.trainer, cfg.network, cfg.run.seed, cfg.run.parallelism);
    for (int b = 0; b < cfg.run.batches; ++b) {
        const auto m = trainer.train_batch();
        for (const auto& row : metrics_rows(m, cfg.run.deterministic)) metrics << format_metrics_row(row) << '\n';
        metrics.flush();
        if (!metrics) throw IoError("failed writing " + result.metrics_path.string());
        result.batches.push_back(m);
        if ((b + 1) % cfg.run.log_every == 0) {
            log << "batch " << m.batch;
            for (int t = 0; t < m.num_teams; ++t) {
                const auto& s = m.teams[static_cast<std::size_t>(t)];
                log << " | team " << t << " reward " << std::fixed << std::setprecision(4) << s.mean_reward;
                if (cfg.scenario.scenario != grid::Scenario::Jungle) log << " win " << s.win_rate;
                log << " alive " << std::setprecision(2) << s.mean_alive;
            }
            log << " | lr " << std::setprecision(6) << m.teams[0].learning_rate << " | " << std::setprecision(2)
                << m.seconds << "s" << std::defaultfloat << '\n';
        }
        if ((b + 1) % cfg.run.checkpoint_every == 0) save_checkpoint(result.checkpoint_path, trainer.models());
    }
    save_checkpoint(result.checkpoint_path, trainer.models());
    return result;
}

rl::EvalSummary run_eval(const rl::ModelSet& models_in, const RunConfig& cfg, const EvalOptions& opts) {
    check_compatible(models_in, cfg.scenario, cfg.network);
    auto scenario = cfg.scenario;
    if (opts.agents) {
        if (*opts.agents < 1) throw ConfigError("agent count override must be positive");
        const double factor = static_cast<double>(*opts.agents) / scenario.agents;
        if (scenario.scenario == grid::Scenario::Battle)
            scenario.opponents = std::max(1, static_cast<int>(std::lround(scenario.opponents * factor)));
        scenario.agents = *opts.agents;
    }
    scenario.validate();
    auto models = models_in;
    if (opts.opponent && models.teams.size() > 1) models.teams[1].kind = *opts.opponent;
    return rl::evaluate(models, scenario, cfg.trainer.depth, std::max(0, opts.episodes), opts.seed,
                        rl::EnsembleMode::Argmax);
}

// ---------------------------------------------------------------------------

std::vector<int> normalise_counts(const std::vector<int>& counts, std::ostream& log) {
    std::set<int> unique;
    for (int n : counts) {
        if (n < 1) throw ConfigError("agent counts must be at least 1");
        unique.insert(n);
    }
    if (unique.size() != counts.size()) log << "warning: duplicate agent counts removed\n";
    return {unique.begin(), unique.end()};
}

grid::ScenarioConfig bench_scenario(const grid::ScenarioConfig& base, int agents, const BenchOptions& opts) {
    if (base.scenario == grid::Scenario::Deception) throw ConfigError("bench supports jungle and battle only");
    auto sc = base;
    const int side = std::max(5, static_cast<int>(std::ceil(std::sqrt(agents * opts.cells_per_agent))));
    sc.width = side;
    sc.height = side;
    sc.walls = 0;
    if (sc.scenario == grid::Scenario::Jungle) {
        sc.agents = agents;
        sc.opponents = 0;
        sc.foods = std::max(1, static_cast<int>(std::lround(agents * opts.food_ratio)));
    } else {
        sc.agents = std::max(1, agents / 2);
        sc.opponents = std::max(1, agents - sc.agents);
        sc.foods = 0;
    }
    sc.validate();
    return sc;
}

std::size_t estimate_batch_bytes(const grid::ScenarioConfig& scenario, const RunConfig& cfg, int episodes) {
    const std::size_t agents = static_cast<std::size_t>(scenario.agents + scenario.opponents);
    const std::size_t steps = static_cast<std::size_t>(scenario.episode_limit);
    // A transition holds a small sub-graph: a few members of 47 features
    // plus edge features and bookkeeping.
    const std::size_t per_transition = 4 * (graph::kVertexFeatureDim + 2 * cfg.network.n_max) * sizeof(double) + 512;
    const std::size_t episode = agents * steps * per_transition;
    const std::size_t h = static_cast<std::size_t>(cfg.network.hidden);
    const std::size_t params_per_team = 3 * (h * h * (5 + 2 * static_cast<std::size_t>(cfg.network.rounds)) + 64 * h);
    const std::size_t grads = params_per_team * static_cast<std::size_t>(scenario.num_teams()) * sizeof(double);
    const std::size_t workers = static_cast<std::size_t>(std::min(cfg.run.parallelism, episodes));
    const std::size_t held_grads = workers > 1 ? static_cast<std::size_t>(episodes) : 2;
    const std::size_t world = static_cast<std::size_t>(scenario.width) * static_cast<std::size_t>(scenario.height) * 16;
    return workers * (episode + world) + held_grads * grads;
}

std::vector<BenchRow> run_bench(const RunConfig& cfg_in, const BenchOptions& opts, std::ostream& log) {
    RunConfig cfg = cfg_in;
    cfg.validate();
    if (opts.episodes < 1) throw ConfigError("bench episodes must be at least 1");
    const auto counts = normalise_counts(opts.counts, log);
    std::vector<BenchRow> rows;
    for (int n : counts) {
        const auto sc = bench_scenario(cfg.scenario, n, opts);
        const auto need = estimate_batch_bytes(sc, cfg, opts.episodes);
        if (need > opts.memory_bound_bytes)
            throw ResourceError("N=" + std::to_string(n) + " needs about " + std::to_string(need >> 20) +
                                " MiB, above the bound of " + std::to_string(opts.memory_bound_bytes >> 20) + " MiB");
        auto tc = cfg.trainer;
        tc.batch_episodes = opts.episodes;
        rl::Trainer trainer(sc, tc, cfg.network, cfg.run.seed, cfg.run.parallelism);
        trainer.train_batch();
        BenchRow row{n, sc.width, sc.height, sc.foods, opts.episodes, trainer.last_update_seconds()};
        log << "N=" << n << " grid " << sc.width << "x" << sc.height << " foods " << sc.foods << ": " << row.seconds
            << "s per " << opts.episodes << " episodes\n";
        rows.push_back(row);
    }
    return rows;
}

// ---------------------------------------------------------------------------

std::string render_ppm(const grid::GridWorld& world, int cell_pixels) {
    using Rgb = std::array<unsigned char, 3>;
    const int w = world.width() * cell_pixels;
    const int h = world.height() * cell_pixels;
    std::vector<Rgb> px(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), Rgb{235, 235, 235});
    auto fill = [&](grid::Position p, Rgb c, int inset) {
        for (int y = p.y * cell_pixels + inset; y < (p.y + 1) * cell_pixels - inset; ++y)
            for (int x = p.x * cell_pixels + inset; x < (p.x + 1) * cell_pixels - inset; ++x)
                px[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)] = c;
    };
    for (const auto& p : world.walls()) fill(p, {40, 40, 40}, 0);
    for (const auto& p : world.foods()) fill(p, {40, 170, 60}, 0);
    for (const auto& l : world.landmarks()) fill(l.pos, {230, 200, 30}, 0);
    const int inset = cell_pixels >= 4 ? 1 : 0;
    for (const auto& a : world.agents()) {
        if (!a.alive) continue;
        fill(a.pos, a.team == grid::kHomeTeam ? Rgb{210, 40, 40} : Rgb{40, 70, 210}, inset);
    }
    std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    out.reserve(out.size() + px.size() * 3);
    for (const auto& c : px) out.append(reinterpret_cast<const char*>(c.data()), 3);
    return out;
}

int run_render(const rl::ModelSet& models, const RunConfig& cfg, const RenderOptions& opts) {
    check_compatible(models, cfg.scenario, cfg.network);
    if (opts.cell_pixels < 1) throw ConfigError("cell_pixels must be positive");
    if (opts.output_dir.empty()) throw ConfigError("render needs an output directory");
    int frames = 0;
    for (int e = 0; e < opts.episodes; ++e) {
        char name[32];
        std::snprintf(name, sizeof name, "episode_%03d", e);
        const auto dir = opts.output_dir / name;
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
        std::ofstream jsonl(dir / "frames.jsonl", std::ios::binary);
        if (!jsonl) throw IoError("cannot write " + (dir / "frames.jsonl").string());
        jsonl << grid::frame_header() << '\n';

        const auto ep_seed = derive_seed(opts.seed, 0x5E4D, static_cast<std::uint64_t>(e));
        auto world = grid::new_scenario(cfg.scenario, ep_seed);
        rl::EpisodeOptions eo;
        eo.depth = cfg.trainer.depth;
        eo.features = models.network.features();
        eo.mode = rl::EnsembleMode::Argmax;
        eo.collect = false;
        eo.observer = [&](const grid::GridWorld& w) {
            jsonl << grid::frame_record(w) << '\n';
            char img[32];
            std::snprintf(img, sizeof img, "frame_%04d.ppm", w.time());
            std::ofstream out(dir / img, std::ios::binary);
            if (!out) throw IoError("cannot write " + (dir / img).string());
            out << render_ppm(w, opts.cell_pixels);
            ++frames;
        };
        Rng rng(derive_seed(ep_seed, 0xAC7));
        rl::run_episode(world, models, eo, rng);
        if (!jsonl) throw IoError("failed writing " + (dir / "frames.jsonl").string());
    }
    return frames;
}

std::vector<std::string> run_decompose(const RunConfig& cfg, std::uint64_t seed, int depth) {
    cfg.scenario.validate();
    if (depth < 1) throw ConfigError("depth must be at least 1");
    const auto world = grid::new_scenario(cfg.scenario, seed);
    const auto g = graph::build_graph(world, cfg.network.features());
    std::vector<std::string> lines;
    for (const auto& sg : graph::decompose(g, depth)) {
        ordered_json o;
        o["centre"] = sg.centre;
        o["depth"] = depth;
        o["members"] = sg.members;
        ordered_json edges = ordered_json::array();
        for (const auto& e : sg.edges)
            if (e.src < e.dst) edges.push_back({sg.members[e.src], sg.members[e.dst]});
        o["edges"] = std::move(edges);
        lines.push_back(o.dump());
    }
    return lines;
}

}  // namespace qmarl::harness
