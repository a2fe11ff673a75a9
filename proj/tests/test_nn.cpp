#include <doctest.h>

#include <cmath>

#include "support.hpp"

using namespace qmarl;
using namespace qmarl::nn;

namespace {

/// Tape-free forward built from the standalone layer functions.
std::vector<std::vector<double>> reference_forward(const MpnnParams& p, const graph::SubGraph& sg,
                                                   std::span<const grid::Action> actions) {
    const std::size_t n = sg.size();
    std::vector<std::vector<double>> s(n);
    for (std::size_t m = 0; m < n; ++m) {
        std::vector<double> x(sg.vertex(m).begin(), sg.vertex(m).end());
        if (!actions.empty()) {
            for (int a = 0; a < grid::kNumActions; ++a) x.push_back(a == grid::index_of(actions[m]) ? 1.0 : 0.0);
        }
        s[m] = h_lin(x, p.layer(p.ebd()));
    }
    std::vector<std::vector<double>> z(sg.edges.size());
    for (std::size_t e = 0; e < z.size(); ++e) z[e].assign(sg.edge_feature(e).begin(), sg.edge_feature(e).end());
    for (int r = 0; r < p.cfg.rounds; ++r) {
        std::vector<std::vector<double>> next(n);
        for (std::size_t v = 0; v < n; ++v) {
            std::vector<std::vector<double>> incoming;
            for (std::size_t e = 0; e < z.size(); ++e)
                if (sg.edges[e].src == v) incoming.push_back(z[e]);
            next[v] = vertex_update(s[v], incoming, p.vertex_update_params(r));
        }
        s = next;
        for (std::size_t e = 0; e < z.size(); ++e)
            z[e] = edge_update(z[e], s[sg.edges[e].src], s[sg.edges[e].dst], p.layer(p.edge(r)));
    }
    std::vector<std::vector<double>> out;
    if (p.cfg.pooled) {
        std::vector<double> pooled(static_cast<std::size_t>(p.cfg.hidden), 0.0);
        for (const auto& v : s)
            for (std::size_t k = 0; k < pooled.size(); ++k) pooled[k] += v[k];
        out.push_back(h_lin(h_rel(pooled, p.layer(p.head_rel())), p.layer(p.head_lin())));
    } else {
        for (const auto& v : s) out.push_back(h_lin(h_rel(v, p.layer(p.head_rel())), p.layer(p.head_lin())));
    }
    return out;
}

graph::SubGraph path3() {
    std::vector<graph::Vertex> vs;
    Rng rng(3);
    for (int i = 0; i < 3; ++i) {
        graph::Vertex v{i, 0, {i, 0}, graph::VertexFeature(graph::kVertexFeatureDim, 0.0)};
        v.features[0] = 1.0;
        for (std::size_t k = 2; k < v.features.size(); ++k) v.features[k] = unit_real(rng) < 0.2 ? 1.0 : 0.0;
        vs.push_back(v);
    }
    const auto g = graph::make_graph(vs, {{0, 1}, {1, 2}});
    return graph::extract_subgraph(g, 0, 3);
}

}  // namespace

TEST_CASE("h_lin identity and constant") {
    Layer id(3, 3);
    for (int i = 0; i < 3; ++i) id.weight(i, i) = 1.0;
    const std::vector<double> x{1.5, -2.0, 0.25};
    CHECK(h_lin(x, id) == x);
    Layer c(3, 2);
    c.b = {4.0, -1.0};
    CHECK(h_lin(x, c) == std::vector<double>{4.0, -1.0});
    CHECK_THROWS_AS(h_lin(std::vector<double>{1.0}, c), ShapeError);
}

TEST_CASE("h_lin random 3x2 matches hand multiplication") {
    Layer p(2, 3);
    p.w = {0.5, -1.0, 2.0, 0.25, -0.75, 1.5};
    p.b = {0.1, 0.2, 0.3};
    const auto y = h_lin(std::vector<double>{2.0, -4.0}, p);
    CHECK(y[0] == 0.5 * 2.0 + -1.0 * -4.0 + 0.1);
    CHECK(y[1] == 2.0 * 2.0 + 0.25 * -4.0 + 0.2);
    CHECK(y[2] == -0.75 * 2.0 + 1.5 * -4.0 + 0.3);
}

TEST_CASE("h_rel clamps negatives only") {
    Layer p(2, 2);
    p.w = {1.0, 0.0, 0.0, 1.0};
    CHECK(h_rel(std::vector<double>{-1.0, -2.0}, p) == std::vector<double>{0.0, 0.0});
    CHECK(h_rel(std::vector<double>{1.0, 2.0}, p) == h_lin(std::vector<double>{1.0, 2.0}, p));
    CHECK(h_rel(std::vector<double>{-1.0, 2.0}, p) == std::vector<double>{0.0, 2.0});
}

TEST_CASE("vertex_update by hand with H=2, edge_dim=2") {
    Layer v_lin(2, 2), z_rel(2, 2), post_rel(2, 2), post_lin(2, 2);
    v_lin.w = {1.0, 0.0, 0.0, 2.0};
    v_lin.b = {0.0, 1.0};
    z_rel.w = {1.0, -1.0, 0.5, 0.5};
    post_rel.w = {1.0, 1.0, -1.0, 0.0};
    post_rel.b = {0.0, 0.5};
    post_lin.w = {2.0, 0.0, 0.0, 3.0};
    post_lin.b = {0.1, 0.0};
    const VertexUpdateParams p{v_lin, z_rel, post_rel, post_lin};
    const std::vector<double> s{1.0, 2.0};
    const std::vector<double> z{3.0, 1.0};
    // gate = [1, 5]; zr = relu([2, 2]) = [2, 2]; m = [2, 10]
    // relu(post_rel m) = relu([12, -1.5]) = [12, 0]; post_lin = [24.1, 0]
    const auto out = vertex_update(s, {z}, p);
    CHECK(out == std::vector<double>{25.1, 2.0});
    // No edges: s + post_lin(relu(post_rel(0)))
    const auto lone = vertex_update(s, {}, p);
    CHECK(lone == std::vector<double>{1.0 + 0.1, 2.0 + 3.0 * 0.5});
    const std::vector<double> z2{-1.0, 4.0};
    CHECK(vertex_update(s, {z, z2}, p) == vertex_update(s, {z2, z}, p));
}

TEST_CASE("edge_update concatenates z, source, destination") {
    Layer p(6, 2);
    CHECK(edge_update(std::vector<double>{0, 0}, std::vector<double>{0, 0}, std::vector<double>{0, 0}, p) ==
          std::vector<double>{0, 0});
    Rng rng(5);
    for (double& w : p.w) w = 2.0 * unit_real(rng) - 1.0;
    const std::vector<double> z{0.3, 0.7}, a{1.0, -2.0}, b{0.5, 0.25};
    std::vector<double> cat{0.3, 0.7, 1.0, -2.0, 0.5, 0.25};
    CHECK(edge_update(z, a, b, p) == h_rel(cat, p));
    CHECK(edge_update(z, a, b, p) != edge_update(z, b, a, p));
}

TEST_CASE("singleton with zero heads is uniform") {
    auto p = MpnnParams(policy_config(8, 2, 10));
    Rng rng(1);
    xavier_init(p.net, rng);
    p.layer(p.head_lin()).w.assign(p.layer(p.head_lin()).w.size(), 0.0);
    const auto g = graph::make_graph({{0, 0, {0, 0}, graph::VertexFeature(graph::kVertexFeatureDim, 0.5)}}, {});
    const auto dists = policy_forward(graph::extract_subgraph(g, 0, 3), p);
    REQUIRE(dists.size() == 1);
    for (double x : dists[0]) CHECK(x == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("policy forward matches the tape-free reference on a 3-agent path") {
    Rng rng(42);
    const auto p = make_mpnn(policy_config(6, 2, 10), rng);
    const auto sg = path3();
    const auto dists = policy_forward(sg, p);
    const auto logits = reference_forward(p, sg, {});
    REQUIRE(dists.size() == 3);
    for (std::size_t m = 0; m < 3; ++m) {
        const auto expect = softmax(logits[m]);
        double total = 0.0;
        for (int a = 0; a < 5; ++a) {
            CHECK(std::abs(dists[m][static_cast<std::size_t>(a)] - expect[static_cast<std::size_t>(a)]) < 1e-14);
            total += dists[m][static_cast<std::size_t>(a)];
        }
        CHECK(std::abs(total - 1.0) < 1e-9);
    }
}

TEST_CASE("critic forward matches the reference and zero params give zero") {
    Rng rng(7);
    const auto w = make_mpnn(critic_config(6, 2, 10), rng);
    const auto sg = path3();
    const std::vector<grid::Action> joint{grid::Action::Up, grid::Action::Idle, grid::Action::Left};
    CHECK(std::abs(critic_forward(sg, joint, w) - reference_forward(w, sg, joint)[0][0]) < 1e-13);
    const MpnnParams zero(critic_config(6, 2, 10));
    CHECK(critic_forward(sg, joint, zero) == 0.0);
    CHECK_THROWS_AS(critic_forward(sg, std::vector<grid::Action>{grid::Action::Up}, w), ShapeError);
}

TEST_CASE("backward of one output component gives a unit bias gradient") {
    Network net;
    net.layers.emplace_back(3, 2);
    net.layers[0].w = {1, 2, 3, 4, 5, 6};
    Tape t;
    t.reset(net);
    const auto y = t.affine(0, t.input(std::vector<double>{1, 1, 1}));
    auto g = zeros_like(net);
    const std::array<double, 2> seed{0.0, 1.0};
    const std::array<Tape::Seed, 1> seeds{Tape::Seed{y, seed}};
    t.backward(seeds, g);
    CHECK(g.layers[0].b == std::vector<double>{0.0, 1.0});
    CHECK(g.layers[0].w == std::vector<double>{0, 0, 0, 1, 1, 1});
}

TEST_CASE("all-negative relu blocks upstream gradients") {
    Network net;
    net.layers.emplace_back(2, 2);
    net.layers.emplace_back(2, 1);
    net.layers[0].b = {-5.0, -5.0};
    net.layers[1].w = {1.0, 1.0};
    Tape t;
    t.reset(net);
    const auto y = t.affine(1, t.relu(t.affine(0, t.input(std::vector<double>{1.0, 1.0}))));
    auto g = zeros_like(net);
    const std::array<double, 1> seed{1.0};
    const std::array<Tape::Seed, 1> seeds{Tape::Seed{y, seed}};
    t.backward(seeds, g);
    for (double x : g.layers[0].w) CHECK(x == 0.0);
    for (double x : g.layers[0].b) CHECK(x == 0.0);
    CHECK(g.layers[1].b[0] == 1.0);
}

TEST_CASE("backward on a stale trace throws") {
    Rng rng(1);
    auto p = make_mpnn(policy_config(4, 1, 10), rng);
    const auto sg = path3();
    const auto trace = policy_trace(sg, p);
    auto g = zeros_like(p.net);
    auto st = make_adam(p.net, 0.01);
    adam_step(p.net, g, st);
    const std::vector<grid::Action> acts(3, grid::Action::Up);
    const std::vector<double> coef(3, 1.0);
    CHECK_THROWS_AS(policy_log_prob_backward(trace, acts, coef, g), StaleTrace);
}

TEST_CASE("policy and critic gradients match finite differences") {
    Rng rng(99);
    auto p = make_mpnn(policy_config(5, 2, 10), rng);
    auto w = make_mpnn(critic_config(5, 2, 10), rng);
    const auto sg = path3();
    const std::vector<grid::Action> acts{grid::Action::Down, grid::Action::Right, grid::Action::Idle};
    const std::vector<double> coef{0.7, -1.3, 0.4};

    auto gp = zeros_like(p.net);
    policy_log_prob_backward(policy_trace(sg, p), acts, coef, gp);
    auto objective = [&] {
        const auto d = policy_forward(sg, p);
        double s = 0.0;
        for (std::size_t m = 0; m < 3; ++m) s += coef[m] * std::log(d[m][static_cast<std::size_t>(grid::index_of(acts[m]))]);
        return s;
    };
    const auto rp = testing::finite_difference_check(p.net, gp, objective);
    CHECK(rp.checked > 0);
    CHECK(rp.max_rel_error < 1e-4);

    auto gw = zeros_like(w.net);
    critic_backward(critic_trace(sg, acts, w), 1.0, gw);
    const auto rw = testing::finite_difference_check(w.net, gw, [&] { return critic_forward(sg, acts, w); });
    CHECK(rw.checked > 0);
    CHECK(rw.max_rel_error < 1e-4);
}

TEST_CASE("gradient of the total probability vanishes") {
    // sum_a pi(a) * grad ln pi(a) = grad sum_a pi(a) = 0
    Rng rng(12);
    const auto p = make_mpnn(policy_config(6, 2, 10), rng);
    const auto sg = path3();
    const auto trace = policy_trace(sg, p);
    auto total = zeros_like(p.net);
    for (int a = 0; a < grid::kNumActions; ++a) {
        std::vector<grid::Action> acts(sg.size(), grid::action_at(a));
        std::vector<double> coef(sg.size());
        for (std::size_t m = 0; m < sg.size(); ++m) coef[m] = trace.dists[m][static_cast<std::size_t>(a)];
        policy_log_prob_backward(trace, acts, coef, total);
    }
    for (const auto& l : total.layers) {
        for (double x : l.w) CHECK(std::abs(x) < 1e-6);
        for (double x : l.b) CHECK(std::abs(x) < 1e-6);
    }
}

TEST_CASE("mlp gradients match finite differences") {
    Rng rng(4);
    auto p = make_mlp(6, 4, 5, rng);
    std::vector<double> x{0.5, -1.0, 0.25, 2.0, 0.0, 1.0};
    auto g = zeros_like(p.net);
    mlp_log_prob_backward(mlp_trace(x, p), grid::Action::Left, 1.7, g);
    const auto r = testing::finite_difference_check(
        p.net, g, [&] { return 1.7 * std::log(mlp_forward(x, p)[2]); });
    CHECK(r.max_rel_error < 1e-4);
    CHECK(mlp_trace(x, p).dist == mlp_forward(x, p));
}

TEST_CASE("adam with zero gradient leaves parameters unchanged") {
    Network net;
    net.layers.emplace_back(2, 1);
    net.layers[0].w = {0.3, -0.2};
    const auto before = net;
    auto st = make_adam(net, 0.01);
    adam_step(net, zeros_like(net), st);
    CHECK(net == before);
    CHECK(st.step == 1);
}

TEST_CASE("adam approaches lr * sign(g) under a constant gradient") {
    Network net;
    net.layers.emplace_back(1, 1);
    auto g = zeros_like(net);
    g.layers[0].w = {-3.0};
    auto st = make_adam(net, 0.01);
    double prev = 0.0;
    for (int i = 0; i < 200; ++i) {
        prev = net.layers[0].w[0];
        adam_step(net, g, st);
    }
    CHECK(net.layers[0].w[0] - prev == doctest::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("adam matches the scalar recursion for three steps") {
    Network net;
    net.layers.emplace_back(1, 1);
    net.layers[0].w = {0.5};
    auto st = make_adam(net, 0.01);
    const double grads[3] = {0.2, -0.1, 0.4};
    double theta = 0.5, m = 0.0, v = 0.0;
    for (int t = 1; t <= 3; ++t) {
        auto g = zeros_like(net);
        g.layers[0].w = {grads[t - 1]};
        adam_step(net, g, st);
        m = 0.9 * m + 0.1 * grads[t - 1];
        v = 0.999 * v + 0.001 * grads[t - 1] * grads[t - 1];
        const double mh = m / (1.0 - std::pow(0.9, t));
        const double vh = v / (1.0 - std::pow(0.999, t));
        theta -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    }
    CHECK(std::abs(net.layers[0].w[0] - theta) < 1e-15);
}

TEST_CASE("adam rejects shape mismatch") {
    Network a, b;
    a.layers.emplace_back(2, 2);
    b.layers.emplace_back(2, 3);
    auto st = make_adam(a, 0.01);
    CHECK_THROWS_AS(adam_step(a, b, st), ShapeError);
}

TEST_CASE("plateau schedule") {
    PlateauSchedule s;
    for (int i = 0; i < 30; ++i) CHECK(plateau_update(s, i) == 0.01);
    PlateauSchedule t;
    plateau_update(t, 1.0);
    double lr = 0.0;
    for (int i = 0; i < 10; ++i) lr = plateau_update(t, 0.5);
    CHECK(lr == doctest::Approx(0.0095).epsilon(1e-12));
    for (int i = 0; i < 15; ++i) lr = plateau_update(t, 1.0);
    CHECK(lr == doctest::Approx(0.009025).epsilon(1e-12));
}
