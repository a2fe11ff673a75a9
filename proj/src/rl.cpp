#include "qmarl/rl.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

namespace qmarl::rl {

std::string_view to_string(Algorithm a) {
    switch (a) {
        case Algorithm::VanillaPG: return "vanilla-pg";
        case Algorithm::QmarlPG: return "qmarl-pg";
        case Algorithm::QmarlAC: return "qmarl-ac";
    }
    return "?";
}

Algorithm parse_algorithm(std::string_view name) {
    if (name == "vanilla-pg") return Algorithm::VanillaPG;
    if (name == "qmarl-pg") return Algorithm::QmarlPG;
    if (name == "qmarl-ac") return Algorithm::QmarlAC;
    throw ConfigError("unknown algorithm '" + std::string(name) + "'");
}

std::string_view to_string(TeamPolicy p) { return p == TeamPolicy::Learned ? "learned" : "random"; }

TeamPolicy parse_team_policy(std::string_view name) {
    if (name == "learned") return TeamPolicy::Learned;
    if (name == "random") return TeamPolicy::Random;
    throw ConfigError("unknown team policy '" + std::string(name) + "'");
}

void TrainerConfig::validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
    if (!(lr_policy > 0.0) || !(lr_critic > 0.0)) throw ConfigError("learning rates must be positive");
    if (depth < 1) throw ConfigError("depth must be at least 1");
    if (batch_episodes < 1) throw ConfigError("batch_episodes must be at least 1");
}

void NetworkConfig::validate() const {
    if (hidden < 1) throw ConfigError("hidden width must be positive");
    if (rounds < 0) throw ConfigError("rounds must be non-negative");
    if (!(delta_d > 0.0)) throw ConfigError("delta_d must be positive");
    if (n_max < 1) throw ConfigError("n_max must be positive");
}

// ---------------------------------------------------------------------------

ActionDistribution ensemble_distribution(std::span<const ActionDistribution> dists) {
    if (dists.empty()) throw EmptyEnsemble("no distributions to ensemble");
    ActionDistribution mean{};
    for (const auto& d : dists)
        for (std::size_t a = 0; a < mean.size(); ++a) mean[a] += d[a];
    double total = 0.0;
    for (double x : mean) total += x;
    for (double& x : mean) x /= total;
    return mean;
}

grid::Action sample_action(const ActionDistribution& p, Rng& rng) {
    const double u = unit_real(rng);
    double acc = 0.0;
    for (std::size_t a = 0; a < p.size(); ++a) {
        acc += p[a];
        if (u < acc) return grid::action_at(static_cast<int>(a));
    }
    // Rounding left u above the cumulative total: take the last positive entry.
    for (std::size_t a = p.size(); a-- > 0;)
        if (p[a] > 0.0) return grid::action_at(static_cast<int>(a));
    return grid::Action::Idle;
}

grid::Action argmax_action(const ActionDistribution& p) {
    std::size_t best = 0;
    for (std::size_t a = 1; a < p.size(); ++a)
        if (p[a] > p[best]) best = a;
    return grid::action_at(static_cast<int>(best));
}

grid::Action ensemble_action(std::span<const ActionDistribution> dists, EnsembleMode mode, Rng& rng) {
    const auto mean = ensemble_distribution(dists);
    return mode == EnsembleMode::Sample ? sample_action(mean, rng) : argmax_action(mean);
}

double baseline(const graph::SubGraph& sg, std::span<const grid::Action> joint, std::size_t member,
                const ActionDistribution& pi_member, const nn::MpnnParams& critic) {
    if (member >= sg.size()) throw MemberNotFound("baseline: member index out of range");
    std::vector<grid::Action> swept(joint.begin(), joint.end());
    double v = 0.0;
    for (int a = 0; a < grid::kNumActions; ++a) {
        swept[member] = grid::action_at(a);
        v += pi_member[static_cast<std::size_t>(a)] * nn::critic_forward(sg, swept, critic);
    }
    return v;
}

double baseline(const graph::SubGraph& sg, std::span<const grid::Action> joint, grid::AgentId agent,
                const nn::MpnnParams& policy, const nn::MpnnParams& critic) {
    const auto m = sg.member_index(agent);
    if (!m) throw MemberNotFound("agent " + std::to_string(agent) + " is not in the sub-graph");
    const auto dists = nn::policy_forward(sg, policy);
    return baseline(sg, joint, *m, dists[*m], critic);
}

double td_error(double reward, double v_next, double v, double gamma) { return reward + gamma * v_next - v; }

std::vector<double> returns_to_go(std::span<const double> rewards, double gamma) {
    std::vector<double> g(rewards.size());
    double acc = 0.0;
    for (std::size_t t = rewards.size(); t-- > 0;) {
        acc = rewards[t] + gamma * acc;
        g[t] = acc;
    }
    return g;
}

// ---------------------------------------------------------------------------

ModelSet make_models(int num_teams, Algorithm algorithm, const NetworkConfig& net, const TrainerConfig& cfg,
                     std::uint64_t seed) {
    net.validate();
    ModelSet ms;
    ms.algorithm = algorithm;
    ms.network = net;
    for (int t = 0; t < num_teams; ++t) {
        Rng rng(derive_seed(seed, 0x7EA3, static_cast<std::uint64_t>(t)));
        TeamModel m;
        m.kind = t == 0 ? TeamPolicy::Learned : cfg.opponent;
        m.policy = nn::make_mpnn(nn::policy_config(net.hidden, net.rounds, net.n_max), rng);
        m.critic = nn::make_mpnn(nn::critic_config(net.hidden, net.rounds, net.n_max), rng);
        m.mlp = nn::make_mlp(graph::kVertexFeatureDim, net.hidden, grid::kNumActions, rng);
        m.policy_adam = nn::make_adam(m.policy.net, cfg.lr_policy);
        m.critic_adam = nn::make_adam(m.critic.net, cfg.lr_critic);
        m.mlp_adam = nn::make_adam(m.mlp.net, cfg.lr_policy);
        m.schedule.learning_rate = cfg.lr_policy;
        ms.teams.push_back(std::move(m));
    }
    return ms;
}

void GradientSet::set_zero() {
    for (auto& t : teams) {
        t.policy.set_zero();
        t.critic.set_zero();
        t.mlp.set_zero();
    }
}

void GradientSet::add(const GradientSet& other) {
    if (other.teams.size() != teams.size()) throw ShapeError("gradient sets differ in team count");
    for (std::size_t i = 0; i < teams.size(); ++i) {
        nn::add_scaled(teams[i].policy, other.teams[i].policy, 1.0);
        nn::add_scaled(teams[i].critic, other.teams[i].critic, 1.0);
        nn::add_scaled(teams[i].mlp, other.teams[i].mlp, 1.0);
    }
}

GradientSet make_gradients(const ModelSet& models) {
    GradientSet g;
    for (const auto& t : models.teams)
        g.teams.push_back({nn::zeros_like(t.policy.net), nn::zeros_like(t.critic.net), nn::zeros_like(t.mlp.net)});
    return g;
}

// ---------------------------------------------------------------------------

Episode run_episode(grid::GridWorld& world, const ModelSet& models, const EpisodeOptions& opts, Rng& rng,
                    const StepHook& hook) {
    Episode ep;
    const auto& agents = world.agents();
    const std::size_t n_agents = agents.size();
    for (const auto& a : agents)
        if (a.alive) ++ep.stats.team_start[static_cast<std::size_t>(a.team)];

    const bool graph_policy = models.algorithm != Algorithm::VanillaPG;
    const bool deception = world.scenario() == grid::Scenario::Deception;
    std::vector<int> prev_index(n_agents, -1);
    std::vector<std::vector<ActionDistribution>> ensemble(n_agents);
    std::vector<grid::Action> chosen(n_agents, grid::Action::Idle);
    std::vector<double> reward_by_id(n_agents, 0.0);
    grid::StepOutcome last_outcome;

    while (!world.done()) {
        StepRecord rec;
        const auto alive = world.alive_ids();
        for (auto& e : ensemble) e.clear();

        std::vector<graph::SubGraph> subs;
        std::vector<graph::SubGraph> hidden_subs;
        std::vector<std::size_t> centre_vertex;  // sub-graph index for scored centres
        if (graph_policy) {
            const auto g = graph::build_graph(world, opts.features);
            subs = graph::decompose(g, opts.depth);
            if (deception && models.learns(grid::kOtherTeam)) {
                const auto gh = graph::build_graph(world, opts.features, grid::TargetView::Hidden);
                hidden_subs = graph::decompose(gh, opts.depth);
            }
            for (std::size_t v = 0; v < subs.size(); ++v) {
                const int team = g.vertices[v].team;
                if (!models.learns(team)) continue;
                auto& sg = (deception && team == grid::kOtherTeam) ? hidden_subs[v] : subs[v];
                const auto dists = nn::policy_forward(sg, models.teams[static_cast<std::size_t>(team)].policy);
                for (std::size_t m = 0; m < sg.size(); ++m)
                    if (sg.teams[m] == team) ensemble[static_cast<std::size_t>(sg.members[m])].push_back(dists[m]);
                centre_vertex.push_back(v);
                ep.stats.subgraphs += 1;
                ep.stats.subgraph_members += sg.size();
            }
        }

        // Actions in ascending id order so the rng stream is reproducible.
        grid::JointAction joint;
        joint.reserve(alive.size());
        for (grid::AgentId id : alive) {
            const auto idx = static_cast<std::size_t>(id);
            const int team = agents[idx].team;
            grid::Action act;
            if (!models.learns(team)) {
                act = grid::action_at(static_cast<int>(uniform_index(rng, grid::kNumActions)));
            } else if (graph_policy) {
                act = ensemble_action(ensemble[idx], opts.mode, rng);
            } else {
                const auto f = graph::vertex_features(world, id);
                const auto p = nn::mlp_forward(f, models.teams[static_cast<std::size_t>(team)].mlp);
                act = opts.mode == EnsembleMode::Sample ? sample_action(p, rng) : argmax_action(p);
                if (opts.collect) rec.samples.push_back({id, team, f, act});
            }
            chosen[idx] = act;
            const auto legal = world.legal_actions(id);
            const bool ok = std::find(legal.begin(), legal.end(), act) != legal.end();
            joint.emplace_back(id, ok ? act : grid::Action::Idle);
        }

        if (opts.collect && graph_policy) {
            rec.transitions.reserve(centre_vertex.size());
            for (std::size_t v : centre_vertex) {
                auto& sg = (deception && !hidden_subs.empty() && subs[v].teams[0] == grid::kOtherTeam)
                               ? hidden_subs[v]
                               : subs[v];
                AgentTransition tr;
                tr.agent = sg.centre;
                tr.team = sg.teams[0];
                tr.member_actions.reserve(sg.size());
                for (auto id : sg.members) tr.member_actions.push_back(chosen[static_cast<std::size_t>(id)]);
                tr.action = chosen[static_cast<std::size_t>(sg.centre)];
                tr.graph = std::move(sg);
                rec.transitions.push_back(std::move(tr));
            }
        }

        const auto outcome = world.step(joint);
        if (opts.observer) opts.observer(world);
        std::array<double, 2> team_sum{};
        std::array<int, 2> team_count{};
        for (const auto& [id, r] : outcome.rewards) {
            reward_by_id[static_cast<std::size_t>(id)] = r;
            const auto team = static_cast<std::size_t>(agents[static_cast<std::size_t>(id)].team);
            team_sum[team] += r;
            team_count[team] += 1;
            ep.stats.team_reward[team] += r;
        }
        for (std::size_t t = 0; t < 2; ++t)
            rec.team_joint_reward[t] = team_count[t] > 0 ? team_sum[t] / team_count[t] : 0.0;

        if (opts.collect) {
            for (std::size_t k = 0; k < rec.transitions.size(); ++k) {
                auto& tr = rec.transitions[k];
                const auto idx = static_cast<std::size_t>(tr.agent);
                tr.reward = reward_by_id[idx];
                tr.terminal = outcome.done || !agents[idx].alive;
                if (!ep.steps.empty() && prev_index[idx] >= 0)
                    ep.steps.back().transitions[static_cast<std::size_t>(prev_index[idx])].successor = static_cast<int>(k);
            }
            std::fill(prev_index.begin(), prev_index.end(), -1);
            for (std::size_t k = 0; k < rec.transitions.size(); ++k)
                if (!rec.transitions[k].terminal) prev_index[static_cast<std::size_t>(rec.transitions[k].agent)] = static_cast<int>(k);
        }
        ep.steps.push_back(std::move(rec));
        ep.stats.steps += 1;
        last_outcome = outcome;
        if (hook && ep.steps.size() >= 2) hook(ep, static_cast<int>(ep.steps.size()) - 2);
    }
    if (hook && !ep.steps.empty()) hook(ep, static_cast<int>(ep.steps.size()) - 1);

    for (int t = 0; t < 2; ++t) {
        ep.stats.team_alive_end[static_cast<std::size_t>(t)] = world.alive_count(t);
        const int start = ep.stats.team_start[static_cast<std::size_t>(t)];
        if (start > 0) ep.stats.team_reward[static_cast<std::size_t>(t)] /= start;
    }
    if (world.scenario() == grid::Scenario::Battle) {
        const int home = ep.stats.team_alive_end[0];
        const int other = ep.stats.team_alive_end[1];
        ep.stats.winner = home > other ? 0 : (other > home ? 1 : -1);
    } else if (world.scenario() == grid::Scenario::Deception) {
        double home_reward = -1.0;
        for (const auto& [id, r] : last_outcome.rewards)
            if (agents[static_cast<std::size_t>(id)].team == grid::kHomeTeam) home_reward = r;
        ep.stats.winner = home_reward > 0.0 ? 0 : 1;
    }
    return ep;
}

// ---------------------------------------------------------------------------

namespace {

constexpr double kNotRelevant = std::numeric_limits<double>::quiet_NaN();

std::vector<double> member_baselines(const AgentTransition& tr, const std::vector<ActionDistribution>& dists,
                                     const nn::MpnnParams& critic) {
    std::vector<double> v(tr.graph.size(), kNotRelevant);
    for (std::size_t m = 0; m < tr.graph.size(); ++m)
        if (tr.graph.teams[m] == tr.team) v[m] = baseline(tr.graph, tr.member_actions, m, dists[m], critic);
    return v;
}

/// v' for member `m` of transition `tr`: the successor sub-graph's baseline
/// for the same agent, or for the centre when the agent left it.
double successor_value(const Episode& ep, int t, const AgentTransition& tr, std::size_t m,
                       const std::vector<std::vector<double>>& values_next) {
    if (tr.terminal || tr.successor < 0) return 0.0;
    const auto& next = ep.steps[static_cast<std::size_t>(t) + 1].transitions[static_cast<std::size_t>(tr.successor)];
    const auto& vals = values_next[static_cast<std::size_t>(tr.successor)];
    const auto j = next.graph.member_index(tr.graph.members[m]);
    if (j && next.graph.teams[*j] == tr.team) return vals[*j];
    return vals[0];
}

}  // namespace

std::vector<std::vector<double>> step_baselines(const StepRecord& step, const ModelSet& models) {
    std::vector<std::vector<double>> out;
    out.reserve(step.transitions.size());
    for (const auto& tr : step.transitions) {
        const auto& team = models.teams[static_cast<std::size_t>(tr.team)];
        out.push_back(member_baselines(tr, nn::policy_forward(tr.graph, team.policy), team.critic));
    }
    return out;
}

namespace {

std::vector<std::vector<double>> ac_step_impl(const Episode& ep, int t,
                                              const std::vector<std::vector<double>>& values_next,
                                              const ModelSet& models, const TrainerConfig& cfg, GradientSet& grads) {
    const auto& step = ep.steps[static_cast<std::size_t>(t)];
    std::vector<std::vector<double>> values_t;
    values_t.reserve(step.transitions.size());
    std::vector<double> coef;
    for (const auto& tr : step.transitions) {
        const auto ti = static_cast<std::size_t>(tr.team);
        const auto& team = models.teams[ti];
        auto& g = grads.teams[ti];
        const auto trace = nn::policy_trace(tr.graph, team.policy);
        auto v = member_baselines(tr, trace.dists, team.critic);

        coef.assign(tr.graph.size(), 0.0);
        double delta_sum = 0.0;
        for (std::size_t m = 0; m < tr.graph.size(); ++m) {
            if (tr.graph.teams[m] != tr.team) continue;
            const double v_next = successor_value(ep, t, tr, m, values_next);
            const double delta = td_error(tr.reward, v_next, v[m], cfg.gamma);
            coef[m] = delta;
            delta_sum += delta;
        }
        nn::policy_log_prob_backward(trace, tr.member_actions, coef, g.policy);
        const auto ct = nn::critic_trace(tr.graph, tr.member_actions, team.critic);
        nn::critic_backward(ct, delta_sum, g.critic);
        values_t.push_back(std::move(v));
    }
    return values_t;
}

}  // namespace

void accumulate_ac_step(const Episode& ep, int t, const std::vector<std::vector<double>>& /*values_t*/,
                        const std::vector<std::vector<double>>& values_next, const ModelSet& models,
                        const TrainerConfig& cfg, GradientSet& grads) {
    ac_step_impl(ep, t, values_next, models, cfg, grads);
}

void accumulate_ac(const Episode& ep, const ModelSet& models, const TrainerConfig& cfg, GradientSet& grads) {
    std::vector<std::vector<double>> values_next;
    for (int t = static_cast<int>(ep.steps.size()) - 1; t >= 0; --t)
        values_next = ac_step_impl(ep, t, values_next, models, cfg, grads);
}

void accumulate_qmarl_pg(const Episode& ep, const ModelSet& models, const TrainerConfig& cfg, GradientSet& grads) {
    std::vector<double> g_next;
    std::vector<double> coef;
    for (int t = static_cast<int>(ep.steps.size()) - 1; t >= 0; --t) {
        const auto& step = ep.steps[static_cast<std::size_t>(t)];
        std::vector<double> g_t(step.transitions.size());
        for (std::size_t k = 0; k < step.transitions.size(); ++k) {
            const auto& tr = step.transitions[k];
            const double tail =
                (tr.terminal || tr.successor < 0) ? 0.0 : g_next[static_cast<std::size_t>(tr.successor)];
            g_t[k] = tr.reward + cfg.gamma * tail;
            if (g_t[k] == 0.0) continue;
            const auto ti = static_cast<std::size_t>(tr.team);
            const auto trace = nn::policy_trace(tr.graph, models.teams[ti].policy);
            coef.assign(tr.graph.size(), 0.0);
            for (std::size_t m = 0; m < tr.graph.size(); ++m)
                if (tr.graph.teams[m] == tr.team) coef[m] = g_t[k];
            nn::policy_log_prob_backward(trace, tr.member_actions, coef, grads.teams[ti].policy);
        }
        g_next = std::move(g_t);
    }
}

void accumulate_vanilla_pg(const Episode& ep, const ModelSet& models, const TrainerConfig& cfg, GradientSet& grads) {
    const std::size_t teams = models.teams.size();
    for (std::size_t team = 0; team < teams; ++team) {
        if (!models.learns(static_cast<int>(team))) continue;
        std::vector<double> joint(ep.steps.size());
        for (std::size_t t = 0; t < ep.steps.size(); ++t) joint[t] = ep.steps[t].team_joint_reward[team];
        const auto g = returns_to_go(joint, cfg.gamma);
        for (std::size_t t = 0; t < ep.steps.size(); ++t) {
            if (g[t] == 0.0) continue;
            for (const auto& s : ep.steps[t].samples) {
                if (static_cast<std::size_t>(s.team) != team) continue;
                const auto trace = nn::mlp_trace(s.features, models.teams[team].mlp);
                nn::mlp_log_prob_backward(trace, s.action, g[t], grads.teams[team].mlp);
            }
        }
    }
}

void accumulate_gradients(const Episode& ep, const ModelSet& models, const TrainerConfig& cfg, GradientSet& grads) {
    switch (models.algorithm) {
        case Algorithm::QmarlAC: accumulate_ac(ep, models, cfg, grads); break;
        case Algorithm::QmarlPG: accumulate_qmarl_pg(ep, models, cfg, grads); break;
        case Algorithm::VanillaPG: accumulate_vanilla_pg(ep, models, cfg, grads); break;
    }
}

void apply_gradients(ModelSet& models, const GradientSet& grads, double scale) {
    auto ascend = [scale](nn::Network& params, const nn::Network& g, nn::AdamState& st) {
        auto descent = nn::zeros_like(g);
        nn::add_scaled(descent, g, -scale);
        nn::adam_step(params, descent, st);
    };
    for (std::size_t i = 0; i < models.teams.size(); ++i) {
        if (!models.learns(static_cast<int>(i))) continue;
        auto& m = models.teams[i];
        const auto& g = grads.teams[i];
        switch (models.algorithm) {
            case Algorithm::QmarlAC:
                ascend(m.policy.net, g.policy, m.policy_adam);
                ascend(m.critic.net, g.critic, m.critic_adam);
                break;
            case Algorithm::QmarlPG: ascend(m.policy.net, g.policy, m.policy_adam); break;
            case Algorithm::VanillaPG: ascend(m.mlp.net, g.mlp, m.mlp_adam); break;
        }
    }
}

void ac_update(const Episode& ep, ModelSet& models, const TrainerConfig& cfg) {
    auto g = make_gradients(models);
    accumulate_ac(ep, models, cfg, g);
    apply_gradients(models, g, 1.0);
}

void pg_update_qmarl(const Episode& ep, ModelSet& models, const TrainerConfig& cfg) {
    auto g = make_gradients(models);
    accumulate_qmarl_pg(ep, models, cfg, g);
    apply_gradients(models, g, 1.0);
}

void pg_update_vanilla(const Episode& ep, ModelSet& models, const TrainerConfig& cfg) {
    auto g = make_gradients(models);
    accumulate_vanilla_pg(ep, models, cfg, g);
    apply_gradients(models, g, 1.0);
}

// ---------------------------------------------------------------------------

Trainer::Trainer(const grid::ScenarioConfig& scenario, const TrainerConfig& cfg, const NetworkConfig& net,
                 std::uint64_t seed, int parallelism)
    : Trainer(scenario, cfg, make_models(scenario.num_teams(), cfg.algorithm, net, cfg, seed), seed, parallelism) {}

Trainer::Trainer(const grid::ScenarioConfig& scenario, const TrainerConfig& cfg, ModelSet models,
                 std::uint64_t seed, int parallelism)
    : scenario_(scenario), cfg_(cfg), models_(std::move(models)), seed_(seed), parallelism_(std::max(1, parallelism)) {
    scenario_.validate();
    cfg_.validate();
    if (static_cast<int>(models_.teams.size()) != scenario_.num_teams())
        throw ShapeMismatch("model team count does not match the scenario");
}

EpisodeOptions Trainer::episode_options() const {
    EpisodeOptions o;
    o.depth = cfg_.depth;
    o.features = models_.network.features();
    o.mode = EnsembleMode::Sample;
    o.collect = true;
    return o;
}

namespace {

struct EpisodeResult {
    EpisodeStats stats;
    GradientSet grads;
    double play_seconds = 0.0;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

BatchMetrics Trainer::train_batch() {
    using clock = std::chrono::steady_clock;
    const auto batch_start = clock::now();
    const int episodes = cfg_.batch_episodes;
    const auto opts = episode_options();
    const bool stepwise = cfg_.update_every_step;

    auto play = [&](int e, const ModelSet& frozen, EpisodeResult& out) {
        const auto ep_seed = derive_seed(seed_, static_cast<std::uint64_t>(batch_), static_cast<std::uint64_t>(e));
        auto world = grid::new_scenario(scenario_, ep_seed);
        const auto t0 = clock::now();
        Rng rng(derive_seed(ep_seed, 0xAC7));
        const auto ep = run_episode(world, frozen, opts, rng);
        out.grads = make_gradients(frozen);
        accumulate_gradients(ep, frozen, cfg_, out.grads);
        out.stats = ep.stats;
        out.play_seconds = seconds_since(t0);
    };

    std::vector<EpisodeStats> stats(static_cast<std::size_t>(episodes));
    double update_seconds = 0.0;
    if (stepwise) {
        // Online updates: episodes run in order and parameters move inside them.
        for (int e = 0; e < episodes; ++e) {
            const auto ep_seed = derive_seed(seed_, static_cast<std::uint64_t>(batch_), static_cast<std::uint64_t>(e));
            auto world = grid::new_scenario(scenario_, ep_seed);
            const auto t0 = clock::now();
            Rng rng(derive_seed(ep_seed, 0xAC7));
            StepHook hook;
            if (models_.algorithm == Algorithm::QmarlAC) {
                hook = [&](Episode& ep, int t) {
                    std::vector<std::vector<double>> next;
                    if (static_cast<std::size_t>(t) + 1 < ep.steps.size())
                        next = step_baselines(ep.steps[static_cast<std::size_t>(t) + 1], models_);
                    auto g = make_gradients(models_);
                    ac_step_impl(ep, t, next, models_, cfg_, g);
                    apply_gradients(models_, g, 1.0);
                };
            }
            auto ep = run_episode(world, models_, opts, rng, hook);
            if (models_.algorithm != Algorithm::QmarlAC) {
                auto g = make_gradients(models_);
                accumulate_gradients(ep, models_, cfg_, g);
                apply_gradients(models_, g, 1.0);
            }
            stats[static_cast<std::size_t>(e)] = ep.stats;
            update_seconds += seconds_since(t0);
        }
    } else {
        auto total = make_gradients(models_);
        if (parallelism_ <= 1) {
            for (int e = 0; e < episodes; ++e) {
                EpisodeResult r;
                play(e, models_, r);
                const auto t0 = clock::now();
                total.add(r.grads);
                update_seconds += r.play_seconds + seconds_since(t0);
                stats[static_cast<std::size_t>(e)] = r.stats;
            }
        } else {
            std::vector<EpisodeResult> results(static_cast<std::size_t>(episodes));
            std::atomic<int> next{0};
            std::mutex error_mutex;
            std::exception_ptr error;
            auto worker = [&]() {
                for (int e = next++; e < episodes; e = next++) {
                    try {
                        play(e, models_, results[static_cast<std::size_t>(e)]);
                    } catch (...) {
                        std::lock_guard lock(error_mutex);
                        if (!error) error = std::current_exception();
                    }
                }
            };
            const auto t0 = clock::now();
            std::vector<std::thread> pool;
            for (int w = 0; w < std::min(parallelism_, episodes); ++w) pool.emplace_back(worker);
            for (auto& th : pool) th.join();
            if (error) std::rethrow_exception(error);
            for (int e = 0; e < episodes; ++e) {
                total.add(results[static_cast<std::size_t>(e)].grads);
                stats[static_cast<std::size_t>(e)] = results[static_cast<std::size_t>(e)].stats;
            }
            update_seconds += seconds_since(t0);
        }
        const auto t0 = clock::now();
        apply_gradients(models_, total, 1.0 / episodes);
        update_seconds += seconds_since(t0);
    }

    BatchMetrics bm;
    bm.batch = batch_;
    bm.num_teams = scenario_.num_teams();
    std::size_t members = 0;
    for (const auto& s : stats) {
        for (std::size_t t = 0; t < 2; ++t) {
            bm.teams[t].mean_reward += s.team_reward[t];
            bm.teams[t].mean_alive += s.team_alive_end[t];
        }
        if (s.winner == 0) bm.teams[0].win_rate += 1.0;
        if (s.winner == 1) bm.teams[1].win_rate += 1.0;
        bm.subgraphs += s.subgraphs;
        members += s.subgraph_members;
    }
    for (auto& t : bm.teams) {
        t.mean_reward /= episodes;
        t.mean_alive /= episodes;
        t.win_rate /= episodes;
    }
    bm.mean_subgraph_size = bm.subgraphs > 0 ? static_cast<double>(members) / static_cast<double>(bm.subgraphs) : 0.0;

    for (std::size_t t = 0; t < models_.teams.size(); ++t) {
        auto& m = models_.teams[t];
        if (m.kind == TeamPolicy::Learned) {
            const double lr = nn::plateau_update(m.schedule, bm.teams[t].mean_reward);
            m.policy_adam.learning_rate = lr;
            m.mlp_adam.learning_rate = lr;
            m.critic_adam.learning_rate = lr * (cfg_.lr_critic / cfg_.lr_policy);
        }
        bm.teams[t].learning_rate = m.schedule.learning_rate;
    }
    bm.seconds = seconds_since(batch_start);
    last_update_seconds_ = update_seconds;
    ++batch_;
    return bm;
}

EvalSummary evaluate(const ModelSet& models, const grid::ScenarioConfig& scenario, int depth, int episodes,
                     std::uint64_t seed, EnsembleMode mode) {
    scenario.validate();
    if (static_cast<int>(models.teams.size()) != scenario.num_teams())
        throw ShapeMismatch("model team count does not match the scenario");
    EvalSummary s;
    s.num_teams = scenario.num_teams();
    if (episodes <= 0) return s;
    EpisodeOptions opts;
    opts.depth = depth;
    opts.features = models.network.features();
    opts.mode = mode;
    opts.collect = false;
    for (int e = 0; e < episodes; ++e) {
        const auto ep_seed = derive_seed(seed, 0xE7A1, static_cast<std::uint64_t>(e));
        auto world = grid::new_scenario(scenario, ep_seed);
        Rng rng(derive_seed(ep_seed, 0xAC7));
        const auto ep = run_episode(world, models, opts, rng);
        for (std::size_t t = 0; t < 2; ++t) s.mean_reward[t] += ep.stats.team_reward[t];
        if (ep.stats.winner == 0) s.win_rate += 1.0;
        if (ep.stats.winner == -1) s.tie_rate += 1.0;
        s.mean_alive += ep.stats.team_alive_end[0];
    }
    s.episodes = episodes;
    for (double& r : s.mean_reward) r /= episodes;
    s.win_rate /= episodes;
    s.tie_rate /= episodes;
    s.mean_alive /= episodes;
    return s;
}

}  // namespace qmarl::rl
