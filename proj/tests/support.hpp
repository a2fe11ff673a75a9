// Shared helpers for the unit, property and acceptance tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <queue>
#include <vector>

#include "qmarl/graph.hpp"
#include "qmarl/gridworld.hpp"
#include "qmarl/nn.hpp"

namespace testing {

using namespace qmarl;

inline grid::GridWorld empty_world(grid::Scenario s, int w = 10, int h = 10, int limit = 100) {
    auto cfg = grid::ScenarioConfig::defaults(s);
    cfg.width = w;
    cfg.height = h;
    cfg.episode_limit = limit;
    return grid::GridWorld(cfg);
}

inline grid::JointAction all(const grid::GridWorld& w, grid::Action a) {
    grid::JointAction j;
    for (auto id : w.alive_ids()) j.emplace_back(id, a);
    return j;
}

/// Random graph on n vertices with independent edges of probability p.
/// Positions are arbitrary (edge distances are drawn from the position
/// pairs), which is enough for decomposition and network tests.
inline graph::EnvGraph random_graph(Rng& rng, int n, double p, int teams = 1) {
    std::vector<graph::Vertex> vs;
    for (int i = 0; i < n; ++i) {
        graph::Vertex v;
        v.id = i;
        v.team = teams > 1 ? static_cast<int>(uniform_index(rng, 2)) : 0;
        v.pos = {static_cast<int>(uniform_index(rng, 4)), static_cast<int>(uniform_index(rng, 4))};
        v.features.assign(graph::kVertexFeatureDim, 0.0);
        v.features[static_cast<std::size_t>(v.team)] = 1.0;
        for (std::size_t k = 2; k < v.features.size(); ++k)
            v.features[k] = unit_real(rng) < 0.3 ? static_cast<double>(uniform_index(rng, 3)) : 0.0;
        vs.push_back(std::move(v));
    }
    std::vector<std::pair<std::size_t, std::size_t>> es;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (unit_real(rng) < p) es.emplace_back(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
    return graph::make_graph(std::move(vs), es);
}

/// Hop distances between all vertex pairs (Floyd-Warshall); -1 if unreachable.
inline std::vector<std::vector<int>> all_pairs_hops(const graph::EnvGraph& g) {
    const std::size_t n = g.vertices.size();
    const int inf = 1 << 20;
    std::vector<std::vector<int>> d(n, std::vector<int>(n, inf));
    for (std::size_t i = 0; i < n; ++i) d[i][i] = 0;
    for (const auto& e : g.edges) d[e.a][e.b] = d[e.b][e.a] = 1;
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
    for (auto& row : d)
        for (int& x : row)
            if (x >= inf) x = -1;
    return d;
}

inline std::vector<grid::Action> random_actions(Rng& rng, std::size_t n) {
    std::vector<grid::Action> a(n);
    for (auto& x : a) x = grid::action_at(static_cast<int>(uniform_index(rng, grid::kNumActions)));
    return a;
}

inline nn::MpnnConfig small_config(bool critic, int hidden, int rounds, int edge_dim = 10) {
    return critic ? nn::critic_config(hidden, rounds, edge_dim) : nn::policy_config(hidden, rounds, edge_dim);
}

/// Maximum relative error between analytic gradients and central finite
/// differences of `objective`, skipping coordinates flagged by `near_kink`.
struct GradCheck {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;
};

inline GradCheck finite_difference_check(nn::Network& params, const nn::Network& analytic,
                                         const std::function<double()>& objective, double step = 1e-5) {
    GradCheck out;
    for (std::size_t li = 0; li < params.layers.size(); ++li) {
        auto check = [&](std::vector<double>& p, const std::vector<double>& g) {
            for (std::size_t k = 0; k < p.size(); ++k) {
                const double orig = p[k];
                p[k] = orig + step;
                ++params.version;
                const double up = objective();
                p[k] = orig - step;
                ++params.version;
                const double down = objective();
                p[k] = orig;
                ++params.version;
                const double numeric = (up - down) / (2.0 * step);
                const double scale = std::max({std::abs(numeric), std::abs(g[k]), 1e-4});
                const double rel = std::abs(numeric - g[k]) / scale;
                // A kink inside the stencil makes the central difference
                // meaningless; a one-sided comparison exposes it.
                const double centre = objective();
                const double left = (centre - down) / step;
                const double right = (up - centre) / step;
                if (std::abs(left - right) > 1e-3 * std::max({std::abs(left), std::abs(right), 1e-6})) {
                    ++out.skipped;
                    continue;
                }
                out.max_rel_error = std::max(out.max_rel_error, rel);
                ++out.checked;
            }
        };
        check(params.layers[li].w, analytic.layers[li].w);
        check(params.layers[li].b, analytic.layers[li].b);
    }
    return out;
}

}  // namespace testing
