#include "qmarl/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace qmarl::graph {

EdgeFeature rbe(double d, double delta_d, int n_max) {
    if (!(delta_d > 0.0)) throw DomainError("rbe: delta_d must be positive");
    if (n_max < 1) throw DomainError("rbe: n_max must be at least 1");
    if (!(d >= 0.0)) throw DomainError("rbe: distance must be non-negative");
    EdgeFeature z(static_cast<std::size_t>(n_max));
    for (int n = 0; n < n_max; ++n) {
        const double diff = d - n * delta_d;
        z[static_cast<std::size_t>(n)] = std::exp(-(diff * diff) / delta_d);
    }
    return z;
}

VertexFeature vertex_features(const grid::GridWorld& world, grid::AgentId id, grid::TargetView view) {
    const auto obs = world.observe(id, view);
    const int team = world.agent(id).team;
    VertexFeature f;
    f.reserve(kVertexFeatureDim);
    f.push_back(team == grid::kHomeTeam ? 1.0 : 0.0);
    f.push_back(team == grid::kHomeTeam ? 0.0 : 1.0);
    f.insert(f.end(), obs.values.begin(), obs.values.end());
    return f;
}

std::optional<std::size_t> EnvGraph::index_of(grid::AgentId id) const {
    for (std::size_t i = 0; i < vertices.size(); ++i)
        if (vertices[i].id == id) return i;
    return std::nullopt;
}

namespace {

void finish_adjacency(EnvGraph& g) {
    const std::size_t n = g.vertices.size();
    g.adjacency.assign(n, {});
    g.adjacency_edge.assign(n, {});
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        const auto& edge = g.edges[e];
        g.adjacency[edge.a].push_back(edge.b);
        g.adjacency_edge[edge.a].push_back(e);
        g.adjacency[edge.b].push_back(edge.a);
        g.adjacency_edge[edge.b].push_back(e);
    }
    std::vector<std::size_t> order;
    for (std::size_t v = 0; v < n; ++v) {
        auto& nb = g.adjacency[v];
        auto& ne = g.adjacency_edge[v];
        order.resize(nb.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(),
                  [&](std::size_t x, std::size_t y) { return g.vertices[nb[x]].id < g.vertices[nb[y]].id; });
        std::vector<std::size_t> nb2(nb.size()), ne2(ne.size());
        for (std::size_t k = 0; k < order.size(); ++k) {
            nb2[k] = nb[order[k]];
            ne2[k] = ne[order[k]];
        }
        nb.swap(nb2);
        ne.swap(ne2);
    }
}

}  // namespace

EnvGraph build_graph(const grid::GridWorld& world, const FeatureConfig& fc, grid::TargetView view) {
    EnvGraph g;
    g.feature_config = fc;
    for (const auto& a : world.agents()) {
        if (!a.alive) continue;
        g.vertices.push_back({a.id, a.team, a.pos, vertex_features(world, a.id, view)});
    }
    if (g.vertices.empty()) throw EmptyWorld("no alive agents to build a graph from");

    // Cell buckets as singly linked lists over vertex indices.
    const auto w = static_cast<std::size_t>(world.width());
    const auto h = static_cast<std::size_t>(world.height());
    constexpr std::size_t kNone = static_cast<std::size_t>(-1);
    std::vector<std::size_t> head(w * h, kNone);
    std::vector<std::size_t> next(g.vertices.size(), kNone);
    for (std::size_t v = g.vertices.size(); v-- > 0;) {
        const auto& p = g.vertices[v].pos;
        const std::size_t c = static_cast<std::size_t>(p.y) * w + static_cast<std::size_t>(p.x);
        next[v] = head[c];
        head[c] = v;
    }
    for (std::size_t v = 0; v < g.vertices.size(); ++v) {
        const auto p = g.vertices[v].pos;
        for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
                const grid::Position q{p.x + dx, p.y + dy};
                if (!world.in_bounds(q)) continue;
                const std::size_t c = static_cast<std::size_t>(q.y) * w + static_cast<std::size_t>(q.x);
                for (std::size_t u = head[c]; u != kNone; u = next[u]) {
                    if (u <= v) continue;
                    const double d = grid::euclidean(p, g.vertices[u].pos);
                    g.edges.push_back({v, u, d, rbe(d, fc.delta_d, fc.n_max)});
                }
            }
        }
    }
    finish_adjacency(g);
    return g;
}

EnvGraph make_graph(std::vector<Vertex> vertices, const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                    const FeatureConfig& fc) {
    EnvGraph g;
    g.feature_config = fc;
    g.vertices = std::move(vertices);
    for (auto [a, b] : edges) {
        if (a == b || a >= g.vertices.size() || b >= g.vertices.size())
            throw DomainError("make_graph: invalid edge");
        if (a > b) std::swap(a, b);
        const double d = grid::euclidean(g.vertices[a].pos, g.vertices[b].pos);
        g.edges.push_back({a, b, d, rbe(d, fc.delta_d, fc.n_max)});
    }
    finish_adjacency(g);
    return g;
}

std::optional<std::size_t> SubGraph::member_index(grid::AgentId id) const {
    for (std::size_t i = 0; i < members.size(); ++i)
        if (members[i] == id) return i;
    return std::nullopt;
}

namespace {

/// Scratch buffers reused across centres so decomposing N vertices stays
/// linear in the total sub-graph size.
struct BfsScratch {
    std::vector<std::size_t> stamp;
    std::vector<std::size_t> local;
    std::size_t epoch = 0;

    explicit BfsScratch(std::size_t n) : stamp(n, 0), local(n, 0) {}
};

SubGraph extract(const EnvGraph& g, std::size_t centre, int depth, BfsScratch& s) {
    ++s.epoch;
    std::vector<std::size_t> order{centre};
    s.stamp[centre] = s.epoch;
    std::size_t layer_begin = 0;
    for (int d = 0; d < depth; ++d) {
        const std::size_t layer_end = order.size();
        for (std::size_t k = layer_begin; k < layer_end; ++k) {
            for (std::size_t v : g.adjacency[order[k]]) {
                if (s.stamp[v] == s.epoch) continue;
                s.stamp[v] = s.epoch;
                order.push_back(v);
            }
        }
        if (order.size() == layer_end) break;
        std::sort(order.begin() + static_cast<std::ptrdiff_t>(layer_end), order.end(),
                  [&](std::size_t x, std::size_t y) { return g.vertices[x].id < g.vertices[y].id; });
        layer_begin = layer_end;
    }

    SubGraph sg;
    sg.centre = g.vertices[centre].id;
    sg.depth = depth;
    sg.edge_dim = static_cast<std::size_t>(g.feature_config.n_max);
    sg.vertex_dim = g.vertices[centre].features.size();
    sg.members.reserve(order.size());
    sg.teams.reserve(order.size());
    sg.vertex_data.reserve(order.size() * sg.vertex_dim);
    for (std::size_t k = 0; k < order.size(); ++k) {
        const auto& v = g.vertices[order[k]];
        if (v.features.size() != sg.vertex_dim) throw ShapeError("inconsistent vertex feature length");
        s.local[order[k]] = k;
        sg.members.push_back(v.id);
        sg.teams.push_back(v.team);
        sg.vertex_data.insert(sg.vertex_data.end(), v.features.begin(), v.features.end());
    }
    for (std::size_t k = 0; k < order.size(); ++k) {
        const std::size_t u = order[k];
        const auto& nb = g.adjacency[u];
        for (std::size_t t = 0; t < nb.size(); ++t) {
            if (s.stamp[nb[t]] != s.epoch) continue;
            const auto& edge = g.edges[g.adjacency_edge[u][t]];
            sg.edges.push_back({k, s.local[nb[t]], edge.distance});
            sg.edge_data.insert(sg.edge_data.end(), edge.features.begin(), edge.features.end());
        }
    }
    return sg;
}

}  // namespace

SubGraph extract_subgraph(const EnvGraph& g, std::size_t centre, int depth) {
    if (depth < 1) throw DomainError("decompose: depth must be at least 1");
    if (centre >= g.vertices.size()) throw DomainError("extract_subgraph: centre out of range");
    BfsScratch scratch(g.vertices.size());
    return extract(g, centre, depth, scratch);
}

std::vector<SubGraph> decompose(const EnvGraph& g, int depth) {
    if (depth < 1) throw DomainError("decompose: depth must be at least 1");
    BfsScratch scratch(g.vertices.size());
    std::vector<SubGraph> out;
    out.reserve(g.vertices.size());
    for (std::size_t v = 0; v < g.vertices.size(); ++v) out.push_back(extract(g, v, depth, scratch));
    return out;
}

}  // namespace qmarl::graph
