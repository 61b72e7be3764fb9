#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "gascn/kdtree.hpp"
#include "gascn/point_cloud.hpp"

namespace gascn::graph {

// Directed kNN edge structure in CSR layout, grouped by destination node.
// Every node receives edges from its k nearest neighbors plus one self-loop;
// within a segment the neighbor edges come first (ascending by distance,
// ties by index) and the self-loop last.
struct NeighborGraph {
    std::size_t n_nodes = 0;
    std::size_t k = 0;
    std::vector<std::uint32_t> offsets;  // size n_nodes+1, strictly increasing
    std::vector<std::uint32_t> src;      // per-edge source node
    std::vector<std::uint32_t> dst;      // per-edge destination node

    std::size_t edge_count() const { return src.size(); }

    std::size_t in_degree(std::size_t node) const {
        return offsets[node + 1] - offsets[node];
    }
};

// Builds the per-point neighborhood structure: node i is the destination
// of edges from its k nearest spatial neighbors (self excluded by index, so
// coincident duplicates still count as neighbors) plus itself.
inline NeighborGraph build_knn_graph(const geo::PointCloud& cloud, std::size_t k) {
    const std::size_t m = cloud.size();
    if (k >= m) {
        throw ShapeError("build_knn_graph: k=" + std::to_string(k) + " requires more than " +
                         std::to_string(m) + " points");
    }
    if (k == 0) throw ConfigError("build_knn_graph: k must be positive");

    geo::KdTree tree(cloud.points);
    NeighborGraph g;
    g.n_nodes = m;
    g.k = k;
    g.offsets.resize(m + 1);
    g.src.reserve(m * (k + 1));
    g.dst.reserve(m * (k + 1));

    std::vector<std::uint32_t> idx;
    std::vector<double> d2;
    for (std::size_t i = 0; i < m; ++i) {
        g.offsets[i] = static_cast<std::uint32_t>(g.src.size());
        tree.knn(cloud.points[i], k + 1, idx, d2);
        std::size_t taken = 0;
        for (std::size_t j = 0; j < idx.size() && taken < k; ++j) {
            if (idx[j] == i) continue;
            g.src.push_back(idx[j]);
            g.dst.push_back(static_cast<std::uint32_t>(i));
            ++taken;
        }
        g.src.push_back(static_cast<std::uint32_t>(i));  // self-loop
        g.dst.push_back(static_cast<std::uint32_t>(i));
    }
    g.offsets[m] = static_cast<std::uint32_t>(g.src.size());
    return g;
}

// Symmetric graph-convolution normalization with self-loops counted:
// weight(j -> i) = 1/sqrt(deg(i) * deg(j)), where deg is the incoming-edge
// count (CSR segment size).
inline std::vector<double> gcn_coefficients(const NeighborGraph& g) {
    std::vector<bool> has_self(g.n_nodes, false);
    for (std::size_t e = 0; e < g.edge_count(); ++e) {
        if (g.src[e] == g.dst[e]) has_self[g.dst[e]] = true;
    }
    for (std::size_t i = 0; i < g.n_nodes; ++i) {
        if (!has_self[i]) {
            throw ConfigError("gcn_coefficients: node " + std::to_string(i) +
                              " lacks a self-loop");
        }
    }
    std::vector<double> inv_sqrt_deg(g.n_nodes);
    for (std::size_t i = 0; i < g.n_nodes; ++i) {
        inv_sqrt_deg[i] = 1.0 / std::sqrt(double(g.in_degree(i)));
    }
    std::vector<double> w(g.edge_count());
    for (std::size_t e = 0; e < g.edge_count(); ++e) {
        w[e] = inv_sqrt_deg[g.dst[e]] * inv_sqrt_deg[g.src[e]];
    }
    return w;
}

}  // namespace gascn::graph
