/**
 * \file rl.hpp
 * \brief Sub-graph actor-critic training, policy-gradient comparators and
 *        cross-sub-graph action ensembling.
 *
 * Each team shares one policy and one critic. At every step the environment
 * graph is decomposed into one sub-graph per agent; the team network scores
 * every member of the sub-graphs centred on its own agents, and an agent acts
 * on the average of the distributions it received from all of them.
 *
 * Training accumulates gradients per episode against frozen parameters and
 * merges them in episode order before a single Adam step per batch, so a
 * batch gives bit-identical parameters regardless of the worker count.
 */
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "qmarl/graph.hpp"
#include "qmarl/gridworld.hpp"
#include "qmarl/nn.hpp"

namespace qmarl::rl {

using nn::ActionDistribution;

enum class Algorithm { VanillaPG, QmarlPG, QmarlAC };
enum class EnsembleMode { Sample, Argmax };
/// Who drives a team: its trained networks or uniform random actions.
enum class TeamPolicy { Learned, Random };

std::string_view to_string(Algorithm a);
Algorithm parse_algorithm(std::string_view name);
std::string_view to_string(TeamPolicy p);
TeamPolicy parse_team_policy(std::string_view name);

struct TrainerConfig {
    double gamma = 0.99;
    double lr_policy = 0.01;
    double lr_critic = 0.01;
    int depth = 3;
    int batch_episodes = 100;
    Algorithm algorithm = Algorithm::QmarlAC;
    /// Apply actor-critic updates after every environment step instead of
    /// once per batch.
    bool update_every_step = false;
    /// Policy of the second team (Battle opponents, Deception adversaries).
    TeamPolicy opponent = TeamPolicy::Learned;

    void validate() const;
};

struct NetworkConfig {
    int hidden = 64;
    int rounds = 2;
    double delta_d = 0.3;
    int n_max = 10;

    graph::FeatureConfig features() const { return {delta_d, n_max}; }
    void validate() const;
    bool operator==(const NetworkConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Elementary operations

/// Mean of the distributions, renormalised. Throws EmptyEnsemble.
ActionDistribution ensemble_distribution(std::span<const ActionDistribution> dists);
grid::Action sample_action(const ActionDistribution& p, Rng& rng);
/// Highest probability, lowest action index on ties.
grid::Action argmax_action(const ActionDistribution& p);
grid::Action ensemble_action(std::span<const ActionDistribution> dists, EnsembleMode mode, Rng& rng);

/// sum_a pi(a | member) * q(sg, joint with the member's slot set to a), given
/// the member's policy distribution.
double baseline(const graph::SubGraph& sg, std::span<const grid::Action> joint, std::size_t member,
                const ActionDistribution& pi_member, const nn::MpnnParams& critic);
/// Same, looking the agent up by id and running the policy. Throws
/// MemberNotFound.
double baseline(const graph::SubGraph& sg, std::span<const grid::Action> joint, grid::AgentId agent,
                const nn::MpnnParams& policy, const nn::MpnnParams& critic);

/// R + gamma * v_next - v; pass v_next = 0 for terminal successors.
double td_error(double reward, double v_next, double v, double gamma);

/// G_t = R_{t+1} + gamma * G_{t+1}, G_T = 0. rewards[t] is the reward that
/// followed the action at t.
std::vector<double> returns_to_go(std::span<const double> rewards, double gamma);

// ---------------------------------------------------------------------------
// Models

struct TeamModel {
    TeamPolicy kind = TeamPolicy::Learned;
    nn::MpnnParams policy;
    nn::MpnnParams critic;
    nn::MlpParams mlp;
    nn::AdamState policy_adam;
    nn::AdamState critic_adam;
    nn::AdamState mlp_adam;
    nn::PlateauSchedule schedule;
};

struct ModelSet {
    Algorithm algorithm = Algorithm::QmarlAC;
    NetworkConfig network;
    std::vector<TeamModel> teams;

    bool learns(int team) const {
        return team < static_cast<int>(teams.size()) && teams[static_cast<std::size_t>(team)].kind == TeamPolicy::Learned;
    }
};

/// Fresh models for `num_teams` teams; teams beyond the first use `opponent`.
ModelSet make_models(int num_teams, Algorithm algorithm, const NetworkConfig& net, const TrainerConfig& cfg,
                     std::uint64_t seed);

/// Per-team gradient accumulators shaped like a ModelSet.
struct TeamGrads {
    nn::Network policy;
    nn::Network critic;
    nn::Network mlp;
};

struct GradientSet {
    std::vector<TeamGrads> teams;
    void set_zero();
    void add(const GradientSet& other);
};

GradientSet make_gradients(const ModelSet& models);

// ---------------------------------------------------------------------------
// Episodes

/// One agent's step, seen through its own sub-graph.
struct AgentTransition {
    grid::AgentId agent = 0;
    int team = 0;
    graph::SubGraph graph;
    /// Chosen action of every sub-graph member (all teams), member order.
    std::vector<grid::Action> member_actions;
    /// The action this agent drew from its ensembled distribution.
    grid::Action action = grid::Action::Idle;
    double reward = 0.0;
    /// Index of this agent's transition in the next step, -1 if none.
    int successor = -1;
    bool terminal = false;
};

/// Vanilla comparator sample: the agent's own features and action.
struct VanillaSample {
    grid::AgentId agent = 0;
    int team = 0;
    graph::VertexFeature features;
    grid::Action action = grid::Action::Idle;
};

struct StepRecord {
    std::vector<AgentTransition> transitions;
    std::vector<VanillaSample> samples;
    /// Mean reward over each team's agents alive at step start.
    std::array<double, 2> team_joint_reward{};
};

struct EpisodeStats {
    /// Sum of the team's rewards divided by its initial size.
    std::array<double, 2> team_reward{};
    std::array<int, 2> team_start{};
    std::array<int, 2> team_alive_end{};
    /// Battle: more survivors; Deception: positive home reward. -1 otherwise.
    int winner = -1;
    int steps = 0;
    std::size_t subgraphs = 0;
    std::size_t subgraph_members = 0;
};

struct Episode {
    std::vector<StepRecord> steps;
    EpisodeStats stats;
};

struct EpisodeOptions {
    int depth = 3;
    graph::FeatureConfig features;
    EnsembleMode mode = EnsembleMode::Sample;
    bool collect = true;
    /// Sees the world after every step.
    std::function<void(const grid::GridWorld&)> observer;
};

/// Called after each step has been recorded; the argument is the index of
/// the newest complete step whose successor is known (or the last step).
using StepHook = std::function<void(Episode&, int)>;

/// Plays one episode on a freshly constructed world.
Episode run_episode(grid::GridWorld& world, const ModelSet& models, const EpisodeOptions& opts, Rng& rng,
                    const StepHook& hook = {});

// ---------------------------------------------------------------------------
// Gradient estimators. All accumulate ascent directions into `grads`.

/// Baseline value v for every same-team member of every transition in `step`.
std::vector<std::vector<double>> step_baselines(const StepRecord& step, const ModelSet& models);

/// Actor-critic gradients for step t of `ep`. `values_t`/`values_next` are
/// step_baselines of steps t and t+1 (the latter may be empty at the end).
void accumulate_ac_step(const Episode& ep, int t, const std::vector<std::vector<double>>& values_t,
                        const std::vector<std::vector<double>>& values_next, const ModelSet& models,
                        const TrainerConfig& cfg, GradientSet& grads);
void accumulate_ac(const Episode& ep, const ModelSet& models, const TrainerConfig& cfg, GradientSet& grads);
void accumulate_qmarl_pg(const Episode& ep, const ModelSet& models, const TrainerConfig& cfg, GradientSet& grads);
void accumulate_vanilla_pg(const Episode& ep, const ModelSet& models, const TrainerConfig& cfg, GradientSet& grads);
void accumulate_gradients(const Episode& ep, const ModelSet& models, const TrainerConfig& cfg, GradientSet& grads);

/// Adam ascent step on every learned team with gradients scaled by `scale`.
void apply_gradients(ModelSet& models, const GradientSet& grads, double scale);

/// One-episode update helpers: accumulate, then apply.
void ac_update(const Episode& ep, ModelSet& models, const TrainerConfig& cfg);
void pg_update_qmarl(const Episode& ep, ModelSet& models, const TrainerConfig& cfg);
void pg_update_vanilla(const Episode& ep, ModelSet& models, const TrainerConfig& cfg);

// ---------------------------------------------------------------------------
// Batches

struct TeamBatchStats {
    double mean_reward = 0.0;
    double win_rate = 0.0;
    double learning_rate = 0.0;
    double mean_alive = 0.0;
};

struct BatchMetrics {
    int batch = 0;
    int num_teams = 1;
    std::array<TeamBatchStats, 2> teams{};
    double seconds = 0.0;
    std::size_t subgraphs = 0;
    double mean_subgraph_size = 0.0;
};

struct EvalSummary {
    int episodes = 0;
    int num_teams = 1;
    std::array<double, 2> mean_reward{};
    /// Fraction of episodes won by the home team.
    double win_rate = 0.0;
    double tie_rate = 0.0;
    double mean_alive = 0.0;
};

class Trainer {
public:
    Trainer(const grid::ScenarioConfig& scenario, const TrainerConfig& cfg, const NetworkConfig& net,
            std::uint64_t seed, int parallelism = 1);
    Trainer(const grid::ScenarioConfig& scenario, const TrainerConfig& cfg, ModelSet models, std::uint64_t seed,
            int parallelism = 1);

    /// Plays one batch, applies the update and the plateau schedule.
    BatchMetrics train_batch();

    /// Seconds spent playing episodes and updating (world construction
    /// excluded) during the last train_batch().
    double last_update_seconds() const { return last_update_seconds_; }

    const ModelSet& models() const { return models_; }
    ModelSet& models() { return models_; }
    const TrainerConfig& config() const { return cfg_; }
    const grid::ScenarioConfig& scenario() const { return scenario_; }
    int batches_done() const { return batch_; }

private:
    EpisodeOptions episode_options() const;

    grid::ScenarioConfig scenario_;
    TrainerConfig cfg_;
    ModelSet models_;
    std::uint64_t seed_;
    int parallelism_;
    int batch_ = 0;
    double last_update_seconds_ = 0.0;
};

/// Frozen-policy evaluation in argmax ensemble mode.
EvalSummary evaluate(const ModelSet& models, const grid::ScenarioConfig& scenario, int depth, int episodes,
                     std::uint64_t seed, EnsembleMode mode = EnsembleMode::Argmax);

}  // namespace qmarl::rl
