#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "qmarl/gridworld.hpp"

namespace qmarl::graph {

/// Team one-hot (2) followed by the flattened 3x3x5 observation (45).
inline constexpr int kVertexFeatureDim = 2 + grid::kPatchCells * grid::kNumChannels;

using VertexFeature = std::vector<double>;
using EdgeFeature = std::vector<double>;

/// Radial basis expansion parameters. n_max * delta_d spans the distances
/// that matter inside a depth-3 neighbourhood.
struct FeatureConfig {
    double delta_d = 0.3;
    int n_max = 10;
};

/// Element n is exp(-(d - n*delta_d)^2 / delta_d), n = 0..n_max-1.
EdgeFeature rbe(double d, double delta_d, int n_max);

VertexFeature vertex_features(const grid::GridWorld& world, grid::AgentId id,
                              grid::TargetView view = grid::TargetView::Auto);

struct Vertex {
    grid::AgentId id = 0;
    int team = grid::kHomeTeam;
    grid::Position pos;
    VertexFeature features;
};

/// Undirected edge between vertex indices a < b.
struct Edge {
    std::size_t a = 0;
    std::size_t b = 0;
    double distance = 0.0;
    EdgeFeature features;
};

struct EnvGraph {
    std::vector<Vertex> vertices;
    std::vector<Edge> edges;
    /// Neighbour vertex indices per vertex, ascending agent id.
    std::vector<std::vector<std::size_t>> adjacency;
    /// Edge index parallel to `adjacency`.
    std::vector<std::vector<std::size_t>> adjacency_edge;
    FeatureConfig feature_config;

    std::optional<std::size_t> index_of(grid::AgentId id) const;
};

/// Vertices are all alive agents; an edge joins agents within Chebyshev
/// distance 1. Throws EmptyWorld when nobody is alive.
EnvGraph build_graph(const grid::GridWorld& world, const FeatureConfig& fc = {},
                     grid::TargetView view = grid::TargetView::Auto);

/// Graph from explicit vertices and undirected vertex-index pairs. Edge
/// distances come from the vertex positions.
EnvGraph make_graph(std::vector<Vertex> vertices, const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                    const FeatureConfig& fc = {});

struct DirectedEdge {
    std::size_t src = 0;  ///< local member index
    std::size_t dst = 0;
    double distance = 0.0;
};

/// Depth-limited neighbourhood of one agent. Members are in BFS order from
/// the centre (ties by ascending id); both orientations of every induced edge
/// are present.
struct SubGraph {
    grid::AgentId centre = 0;
    int depth = 1;
    std::vector<grid::AgentId> members;
    std::vector<int> teams;
    std::vector<double> vertex_data;  ///< members x vertex_dim, row-major
    std::size_t vertex_dim = kVertexFeatureDim;
    std::vector<DirectedEdge> edges;
    std::vector<double> edge_data;  ///< edges x edge_dim
    std::size_t edge_dim = 0;

    std::size_t size() const { return members.size(); }
    std::span<const double> vertex(std::size_t m) const {
        return {vertex_data.data() + m * vertex_dim, vertex_dim};
    }
    std::span<const double> edge_feature(std::size_t e) const {
        return {edge_data.data() + e * edge_dim, edge_dim};
    }
    std::optional<std::size_t> member_index(grid::AgentId id) const;
};

/// One sub-graph per vertex, in vertex order. depth must be >= 1.
std::vector<SubGraph> decompose(const EnvGraph& g, int depth);

/// Sub-graph of a single centre vertex.
SubGraph extract_subgraph(const EnvGraph& g, std::size_t centre, int depth);

}  // namespace qmarl::graph
