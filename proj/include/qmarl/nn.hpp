/**
 * \file nn.hpp
 * \brief Reverse-mode tape, message-passing policy/critic networks, Adam.
 *
 * A Network is a flat list of affine layers plus a version counter. The
 * message-passing wiring (MpnnParams) and the vanilla perceptron (MlpParams)
 * name positions in that list. Grads and Adam moments are Networks of the
 * same shape, so optimizers and checkpoints treat every model alike.
 */
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "qmarl/common.hpp"
#include "qmarl/graph.hpp"
#include "qmarl/gridworld.hpp"

namespace qmarl::nn {

using ActionDistribution = std::array<double, grid::kNumActions>;

/// y = W x + b with W stored row-major (out x in).
struct Layer {
    int in = 0;
    int out = 0;
    std::vector<double> w;
    std::vector<double> b;

    Layer() = default;
    Layer(int in_dim, int out_dim)
        : in(in_dim), out(out_dim),
          w(static_cast<std::size_t>(in_dim) * static_cast<std::size_t>(out_dim), 0.0),
          b(static_cast<std::size_t>(out_dim), 0.0) {}

    double& weight(int row, int col) { return w[static_cast<std::size_t>(row) * static_cast<std::size_t>(in) + static_cast<std::size_t>(col)]; }
    double weight(int row, int col) const { return w[static_cast<std::size_t>(row) * static_cast<std::size_t>(in) + static_cast<std::size_t>(col)]; }
    bool same_shape(const Layer& o) const { return in == o.in && out == o.out; }
    bool operator==(const Layer& o) const = default;
};

struct Network {
    std::vector<Layer> layers;
    /// Bumped on every optimizer step; traces recorded against an older
    /// version are stale.
    std::uint64_t version = 0;

    std::size_t parameter_count() const;
    bool same_shape(const Network& o) const;
    bool finite() const;
    void set_zero();
    bool operator==(const Network& o) const { return layers == o.layers; }
};

Network zeros_like(const Network& n);
/// dst += scale * src; shapes must match.
void add_scaled(Network& dst, const Network& src, double scale);
/// Uniform in +-sqrt(6 / (fan_in + fan_out)), zero biases.
void xavier_init(Network& n, Rng& rng);

std::vector<double> h_lin(std::span<const double> x, const Layer& p);
std::vector<double> h_rel(std::span<const double> x, const Layer& p);

// ---------------------------------------------------------------------------
// Tape

class Tape {
public:
    using Ref = std::uint32_t;

    struct Seed {
        Ref node;
        std::span<const double> grad;
    };

    /// Clears the tape and binds it to the parameters read by affine().
    void reset(const Network& params);

    Ref input(std::span<const double> values);
    Ref affine(std::size_t layer, Ref x);
    Ref relu(Ref x);
    Ref mul(Ref a, Ref b);
    Ref add(Ref a, Ref b);
    /// Elementwise sum of `terms`; the zero vector of length `dim` if empty.
    Ref sum(std::span<const Ref> terms, std::size_t dim);
    Ref concat(std::span<const Ref> parts);

    std::span<const double> value(Ref r) const;
    std::size_t size(Ref r) const { return nodes_[r].size; }
    std::size_t node_count() const { return nodes_.size(); }

    /// Accumulates d(sum_k <seed_k, node_k>)/d(params) into `grads`.
    /// Throws StaleTrace if the bound parameters changed since reset().
    void backward(std::span<const Seed> seeds, Network& grads) const;

private:
    enum class Op : std::uint8_t { Input, Affine, Relu, Mul, Add, Sum, Concat };
    struct Node {
        Op op;
        bool needs_grad;
        std::uint32_t offset;
        std::uint32_t size;
        std::uint32_t a;
        std::uint32_t b;
    };

    Ref push(Op op, bool needs_grad, std::size_t size, std::uint32_t a, std::uint32_t b);
    double* data(Ref r) { return values_.data() + nodes_[r].offset; }

    const Network* params_ = nullptr;
    std::uint64_t version_ = 0;
    std::vector<Node> nodes_;
    std::vector<double> values_;
    std::vector<Ref> lists_;
    mutable std::vector<double> grads_;
};

// ---------------------------------------------------------------------------
// Message-passing networks

struct MpnnConfig {
    int vertex_in = graph::kVertexFeatureDim;
    int hidden = 64;
    int rounds = 2;
    int edge_dim = 10;
    int out_dim = grid::kNumActions;
    /// Sum-pool the vertices before the head (critic) instead of one head
    /// output per vertex (policy).
    bool pooled = false;

    bool operator==(const MpnnConfig&) const = default;
};

MpnnConfig policy_config(int hidden, int rounds, int edge_dim);
MpnnConfig critic_config(int hidden, int rounds, int edge_dim);

/// Vertex-update sub-layers of one message-passing round.
struct VertexUpdateParams {
    const Layer& v_lin;     ///< H -> edge_dim
    const Layer& z_rel;     ///< edge_dim -> edge_dim
    const Layer& post_rel;  ///< edge_dim -> H
    const Layer& post_lin;  ///< H -> H
};

struct MpnnParams {
    MpnnConfig cfg;
    Network net;

    MpnnParams() = default;
    explicit MpnnParams(const MpnnConfig& c);

    static constexpr std::size_t kPerRound = 5;
    std::size_t ebd() const { return 0; }
    std::size_t edge(int r) const { return 1 + kPerRound * static_cast<std::size_t>(r); }
    std::size_t v_lin(int r) const { return edge(r) + 1; }
    std::size_t z_rel(int r) const { return edge(r) + 2; }
    std::size_t post_rel(int r) const { return edge(r) + 3; }
    std::size_t post_lin(int r) const { return edge(r) + 4; }
    std::size_t head_rel() const { return 1 + kPerRound * static_cast<std::size_t>(cfg.rounds); }
    std::size_t head_lin() const { return head_rel() + 1; }

    const Layer& layer(std::size_t i) const { return net.layers[i]; }
    Layer& layer(std::size_t i) { return net.layers[i]; }
    VertexUpdateParams vertex_update_params(int r) const {
        return {layer(v_lin(r)), layer(z_rel(r)), layer(post_rel(r)), layer(post_lin(r))};
    }
};

MpnnParams make_mpnn(const MpnnConfig& cfg, Rng& rng);

/// s + h_lin(h_rel(sum_j h_lin(s; v_lin) * h_rel(z_ij; z_rel))).
std::vector<double> vertex_update(std::span<const double> s, const std::vector<std::vector<double>>& incoming,
                                  const VertexUpdateParams& p);
/// h_rel(concat(z, s_src, s_dst)).
std::vector<double> edge_update(std::span<const double> z, std::span<const double> s_src,
                                std::span<const double> s_dst, const Layer& p);

ActionDistribution softmax(std::span<const double> logits);

/// Records the trunk + head on `tape`. Returns one output node per member
/// (per-vertex networks) or a single node (pooled networks). `actions`, when
/// non-empty, is one-hot appended to every vertex input.
std::vector<Tape::Ref> mpnn_forward(Tape& tape, const MpnnParams& params, const graph::SubGraph& sg,
                                    std::span<const grid::Action> actions = {});

struct PolicyTrace {
    Tape tape;
    std::vector<Tape::Ref> logits;
    std::vector<ActionDistribution> dists;
};

struct CriticTrace {
    Tape tape;
    Tape::Ref output = 0;
    double value = 0.0;
};

PolicyTrace policy_trace(const graph::SubGraph& sg, const MpnnParams& theta);
std::vector<ActionDistribution> policy_forward(const graph::SubGraph& sg, const MpnnParams& theta);

CriticTrace critic_trace(const graph::SubGraph& sg, std::span<const grid::Action> joint, const MpnnParams& w);
double critic_forward(const graph::SubGraph& sg, std::span<const grid::Action> joint, const MpnnParams& w);

/// Accumulates sum_m coef[m] * grad ln pi(actions[m] | member m) into grads.
void policy_log_prob_backward(const PolicyTrace& trace, std::span<const grid::Action> actions,
                              std::span<const double> coef, Network& grads);

/// Accumulates coef * grad q into grads.
void critic_backward(const CriticTrace& trace, double coef, Network& grads);

// ---------------------------------------------------------------------------
// Non-graph perceptron used by the vanilla policy-gradient comparator.

struct MlpParams {
    Network net;  ///< layers: hidden (relu), out (linear)

    MlpParams() = default;
    MlpParams(int in, int hidden, int out);
};

MlpParams make_mlp(int in, int hidden, int out, Rng& rng);

struct MlpTrace {
    Tape tape;
    Tape::Ref logits = 0;
    ActionDistribution dist{};
};

MlpTrace mlp_trace(std::span<const double> x, const MlpParams& p);
ActionDistribution mlp_forward(std::span<const double> x, const MlpParams& p);
void mlp_log_prob_backward(const MlpTrace& trace, grid::Action action, double coef, Network& grads);

// ---------------------------------------------------------------------------
// Optimisation

struct AdamState {
    Network m;
    Network v;
    std::uint64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double learning_rate = 0.01;
};

AdamState make_adam(const Network& params, double learning_rate);

/// One Adam step descending `grads`.
void adam_step(Network& params, const Network& grads, AdamState& state);

/// Reduce-on-plateau: after `patience` consecutive batches without a new
/// best reward the rate is multiplied by `factor`.
struct PlateauSchedule {
    double best = -std::numeric_limits<double>::infinity();
    int stale = 0;
    double factor = 0.95;
    int patience = 10;
    double learning_rate = 0.01;
};

double plateau_update(PlateauSchedule& sched, double batch_mean_reward);

}  // namespace qmarl::nn
