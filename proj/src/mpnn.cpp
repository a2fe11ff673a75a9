#include <algorithm>
#include <cmath>

#include "qmarl/nn.hpp"

namespace qmarl::nn {

MpnnConfig policy_config(int hidden, int rounds, int edge_dim) {
    MpnnConfig c;
    c.vertex_in = graph::kVertexFeatureDim;
    c.hidden = hidden;
    c.rounds = rounds;
    c.edge_dim = edge_dim;
    c.out_dim = grid::kNumActions;
    c.pooled = false;
    return c;
}

MpnnConfig critic_config(int hidden, int rounds, int edge_dim) {
    MpnnConfig c;
    c.vertex_in = graph::kVertexFeatureDim + grid::kNumActions;
    c.hidden = hidden;
    c.rounds = rounds;
    c.edge_dim = edge_dim;
    c.out_dim = 1;
    c.pooled = true;
    return c;
}

MpnnParams::MpnnParams(const MpnnConfig& c) : cfg(c) {
    if (c.vertex_in < 1 || c.hidden < 1 || c.rounds < 0 || c.edge_dim < 1 || c.out_dim < 1)
        throw ShapeError("invalid message-passing network dimensions");
    const int h = c.hidden;
    const int e = c.edge_dim;
    net.layers.emplace_back(c.vertex_in, h);
    for (int r = 0; r < c.rounds; ++r) {
        net.layers.emplace_back(e + 2 * h, e);  // edge update
        net.layers.emplace_back(h, e);          // v_lin
        net.layers.emplace_back(e, e);          // z_rel
        net.layers.emplace_back(e, h);          // post_rel
        net.layers.emplace_back(h, h);          // post_lin
    }
    net.layers.emplace_back(h, h);
    net.layers.emplace_back(h, c.out_dim);
}

MpnnParams make_mpnn(const MpnnConfig& cfg, Rng& rng) {
    MpnnParams p(cfg);
    xavier_init(p.net, rng);
    return p;
}

std::vector<double> vertex_update(std::span<const double> s, const std::vector<std::vector<double>>& incoming,
                                  const VertexUpdateParams& p) {
    const auto gate = h_lin(s, p.v_lin);
    std::vector<double> agg(static_cast<std::size_t>(p.z_rel.out), 0.0);
    for (const auto& z : incoming) {
        const auto zr = h_rel(z, p.z_rel);
        if (zr.size() != gate.size()) throw ShapeError("vertex_update: gate and edge widths differ");
        for (std::size_t k = 0; k < agg.size(); ++k) agg[k] += gate[k] * zr[k];
    }
    const auto delta = h_lin(h_rel(agg, p.post_rel), p.post_lin);
    if (delta.size() != s.size()) throw ShapeError("vertex_update: residual width mismatch");
    std::vector<double> out(s.begin(), s.end());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += delta[k];
    return out;
}

std::vector<double> edge_update(std::span<const double> z, std::span<const double> s_src,
                                std::span<const double> s_dst, const Layer& p) {
    std::vector<double> x;
    x.reserve(z.size() + s_src.size() + s_dst.size());
    x.insert(x.end(), z.begin(), z.end());
    x.insert(x.end(), s_src.begin(), s_src.end());
    x.insert(x.end(), s_dst.begin(), s_dst.end());
    return h_rel(x, p);
}

ActionDistribution softmax(std::span<const double> logits) {
    if (logits.size() != grid::kNumActions) throw ShapeError("softmax: expected one logit per action");
    ActionDistribution p{};
    const double top = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (std::size_t a = 0; a < p.size(); ++a) {
        p[a] = std::exp(logits[a] - top);
        total += p[a];
    }
    for (double& x : p) x /= total;
    return p;
}

std::vector<Tape::Ref> mpnn_forward(Tape& tape, const MpnnParams& params, const graph::SubGraph& sg,
                                    std::span<const grid::Action> actions) {
    const auto& cfg = params.cfg;
    const std::size_t n = sg.size();
    if (n == 0) throw ShapeError("forward on an empty sub-graph");
    if (sg.edge_dim != static_cast<std::size_t>(cfg.edge_dim)) throw ShapeError("edge feature width does not match network");
    const bool with_actions = !actions.empty();
    if (with_actions && actions.size() != n) throw ShapeError("one action per member is required");
    const std::size_t in_dim = sg.vertex_dim + (with_actions ? grid::kNumActions : 0);
    if (in_dim != static_cast<std::size_t>(cfg.vertex_in)) throw ShapeError("vertex input width does not match network");

    tape.reset(params.net);

    std::vector<Tape::Ref> s(n);
    std::vector<double> x(in_dim);
    for (std::size_t m = 0; m < n; ++m) {
        const auto f = sg.vertex(m);
        std::copy(f.begin(), f.end(), x.begin());
        if (with_actions) {
            std::fill(x.begin() + static_cast<std::ptrdiff_t>(sg.vertex_dim), x.end(), 0.0);
            x[sg.vertex_dim + static_cast<std::size_t>(grid::index_of(actions[m]))] = 1.0;
        }
        s[m] = tape.affine(params.ebd(), tape.input(x));
    }

    const std::size_t ne = sg.edges.size();
    std::vector<Tape::Ref> z(ne);
    for (std::size_t e = 0; e < ne; ++e) z[e] = tape.input(sg.edge_feature(e));

    std::vector<std::vector<std::size_t>> outgoing(n);
    for (std::size_t e = 0; e < ne; ++e) outgoing[sg.edges[e].src].push_back(e);

    std::vector<Tape::Ref> msgs;
    for (int r = 0; r < cfg.rounds; ++r) {
        std::vector<Tape::Ref> next(n);
        for (std::size_t v = 0; v < n; ++v) {
            msgs.clear();
            if (!outgoing[v].empty()) {
                const auto gate = tape.affine(params.v_lin(r), s[v]);
                for (std::size_t e : outgoing[v])
                    msgs.push_back(tape.mul(gate, tape.relu(tape.affine(params.z_rel(r), z[e]))));
            }
            const auto agg = tape.sum(msgs, static_cast<std::size_t>(cfg.edge_dim));
            const auto delta = tape.affine(params.post_lin(r), tape.relu(tape.affine(params.post_rel(r), agg)));
            next[v] = tape.add(s[v], delta);
        }
        s.swap(next);
        // The heads read vertices only, so the last round's edge update is dead.
        if (r + 1 == cfg.rounds) break;
        for (std::size_t e = 0; e < ne; ++e) {
            const std::array<Tape::Ref, 3> parts{z[e], s[sg.edges[e].src], s[sg.edges[e].dst]};
            z[e] = tape.relu(tape.affine(params.edge(r), tape.concat(parts)));
        }
    }

    std::vector<Tape::Ref> out;
    if (cfg.pooled) {
        const auto pooled = tape.sum(s, static_cast<std::size_t>(cfg.hidden));
        out.push_back(tape.affine(params.head_lin(), tape.relu(tape.affine(params.head_rel(), pooled))));
    } else {
        out.reserve(n);
        for (std::size_t v = 0; v < n; ++v)
            out.push_back(tape.affine(params.head_lin(), tape.relu(tape.affine(params.head_rel(), s[v]))));
    }
    return out;
}

PolicyTrace policy_trace(const graph::SubGraph& sg, const MpnnParams& theta) {
    if (theta.cfg.pooled) throw ShapeError("policy network must have per-vertex outputs");
    PolicyTrace t;
    t.logits = mpnn_forward(t.tape, theta, sg);
    t.dists.reserve(t.logits.size());
    for (auto r : t.logits) t.dists.push_back(softmax(t.tape.value(r)));
    return t;
}

std::vector<ActionDistribution> policy_forward(const graph::SubGraph& sg, const MpnnParams& theta) {
    if (theta.cfg.pooled) throw ShapeError("policy network must have per-vertex outputs");
    thread_local Tape tape;
    const auto logits = mpnn_forward(tape, theta, sg);
    std::vector<ActionDistribution> out;
    out.reserve(logits.size());
    for (auto r : logits) out.push_back(softmax(tape.value(r)));
    return out;
}

CriticTrace critic_trace(const graph::SubGraph& sg, std::span<const grid::Action> joint, const MpnnParams& w) {
    if (!w.cfg.pooled || w.cfg.out_dim != 1) throw ShapeError("critic network must be pooled with a scalar output");
    if (joint.size() != sg.size()) throw ShapeError("critic: one action per member is required");
    CriticTrace t;
    t.output = mpnn_forward(t.tape, w, sg, joint).front();
    t.value = t.tape.value(t.output)[0];
    return t;
}

double critic_forward(const graph::SubGraph& sg, std::span<const grid::Action> joint, const MpnnParams& w) {
    if (!w.cfg.pooled || w.cfg.out_dim != 1) throw ShapeError("critic network must be pooled with a scalar output");
    if (joint.size() != sg.size()) throw ShapeError("critic: one action per member is required");
    thread_local Tape tape;
    const auto out = mpnn_forward(tape, w, sg, joint).front();
    return tape.value(out)[0];
}

void policy_log_prob_backward(const PolicyTrace& trace, std::span<const grid::Action> actions,
                              std::span<const double> coef, Network& grads) {
    const std::size_t n = trace.logits.size();
    if (actions.size() != n || coef.size() != n) throw ShapeError("one action and coefficient per member");
    std::vector<double> seed_data(n * grid::kNumActions, 0.0);
    std::vector<Tape::Seed> seeds;
    seeds.reserve(n);
    for (std::size_t m = 0; m < n; ++m) {
        if (coef[m] == 0.0) continue;
        double* g = seed_data.data() + m * grid::kNumActions;
        const auto& p = trace.dists[m];
        // d ln softmax(l)_a / d l = onehot(a) - p
        for (int a = 0; a < grid::kNumActions; ++a)
            g[a] = coef[m] * ((a == grid::index_of(actions[m]) ? 1.0 : 0.0) - p[static_cast<std::size_t>(a)]);
        seeds.push_back({trace.logits[m], {g, grid::kNumActions}});
    }
    if (!seeds.empty()) trace.tape.backward(seeds, grads);
}

void critic_backward(const CriticTrace& trace, double coef, Network& grads) {
    if (coef == 0.0) return;
    const std::array<double, 1> g{coef};
    const std::array<Tape::Seed, 1> seeds{Tape::Seed{trace.output, g}};
    trace.tape.backward(seeds, grads);
}

// ---------------------------------------------------------------------------

MlpParams::MlpParams(int in, int hidden, int out) {
    net.layers.emplace_back(in, hidden);
    net.layers.emplace_back(hidden, out);
}

MlpParams make_mlp(int in, int hidden, int out, Rng& rng) {
    MlpParams p(in, hidden, out);
    xavier_init(p.net, rng);
    return p;
}

MlpTrace mlp_trace(std::span<const double> x, const MlpParams& p) {
    MlpTrace t;
    t.tape.reset(p.net);
    t.logits = t.tape.affine(1, t.tape.relu(t.tape.affine(0, t.tape.input(x))));
    t.dist = softmax(t.tape.value(t.logits));
    return t;
}

ActionDistribution mlp_forward(std::span<const double> x, const MlpParams& p) {
    return softmax(h_lin(h_rel(x, p.net.layers[0]), p.net.layers[1]));
}

void mlp_log_prob_backward(const MlpTrace& trace, grid::Action action, double coef, Network& grads) {
    if (coef == 0.0) return;
    std::array<double, grid::kNumActions> g{};
    for (int a = 0; a < grid::kNumActions; ++a)
        g[static_cast<std::size_t>(a)] =
            coef * ((a == grid::index_of(action) ? 1.0 : 0.0) - trace.dist[static_cast<std::size_t>(a)]);
    const std::array<Tape::Seed, 1> seeds{Tape::Seed{trace.logits, g}};
    trace.tape.backward(seeds, grads);
}

// ---------------------------------------------------------------------------

AdamState make_adam(const Network& params, double learning_rate) {
    if (!(learning_rate > 0.0)) throw DomainError("learning rate must be positive");
    AdamState st;
    st.m = zeros_like(params);
    st.v = zeros_like(params);
    st.learning_rate = learning_rate;
    return st;
}

void adam_step(Network& params, const Network& grads, AdamState& st) {
    if (!params.same_shape(grads) || !params.same_shape(st.m) || !params.same_shape(st.v))
        throw ShapeError("adam_step: parameter, gradient and moment shapes differ");
    ++st.step;
    const double t = static_cast<double>(st.step);
    const double c1 = 1.0 - std::pow(st.beta1, t);
    const double c2 = 1.0 - std::pow(st.beta2, t);
    auto update = [&](std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                      std::vector<double>& v) {
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = st.beta1 * m[k] + (1.0 - st.beta1) * g[k];
            v[k] = st.beta2 * v[k] + (1.0 - st.beta2) * g[k] * g[k];
            const double mhat = m[k] / c1;
            const double vhat = v[k] / c2;
            p[k] -= st.learning_rate * mhat / (std::sqrt(vhat) + st.epsilon);
        }
    };
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        update(params.layers[i].w, grads.layers[i].w, st.m.layers[i].w, st.v.layers[i].w);
        update(params.layers[i].b, grads.layers[i].b, st.m.layers[i].b, st.v.layers[i].b);
    }
    ++params.version;
}

double plateau_update(PlateauSchedule& sched, double batch_mean_reward) {
    if (batch_mean_reward > sched.best) {
        sched.best = batch_mean_reward;
        sched.stale = 0;
    } else if (++sched.stale >= sched.patience) {
        sched.learning_rate *= sched.factor;
        sched.stale = 0;
    }
    return sched.learning_rate;
}

}  // namespace qmarl::nn
