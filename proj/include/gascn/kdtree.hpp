#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "gascn/point_cloud.hpp"

namespace gascn::geo {

// Exact 3D k-d tree. Candidates are ordered by (squared distance, index), so
// ties always resolve to the lowest point index and results match a
// brute-force lexicographic sort exactly.
class KdTree {
public:
    explicit KdTree(const std::vector<Vec3>& pts) : pts_(pts) {
        if (pts_.empty()) throw ShapeError("KdTree: empty point set");
        order_.resize(pts_.size());
        std::iota(order_.begin(), order_.end(), 0u);
        nodes_.reserve(pts_.size() * 2 / kLeafSize + 2);
        root_ = build(0, static_cast<std::uint32_t>(pts_.size()));
    }

    std::size_t size() const { return pts_.size(); }

    // k nearest by (d², index) ascending. k must not exceed the point count.
    // Query state is local, so concurrent queries on one tree are safe.
    void knn(const Vec3& q, std::size_t k, std::vector<std::uint32_t>& out_idx,
             std::vector<double>& out_d2) const {
        if (k == 0 || k > pts_.size()) {
            throw ShapeError("KdTree::knn: k out of range");
        }
        out_idx.assign(k, 0);
        out_d2.assign(k, std::numeric_limits<double>::infinity());
        Query state{q, out_idx, out_d2, 0, k};
        search(root_, state);
        out_idx.resize(state.found);
        out_d2.resize(state.found);
    }

    std::uint32_t nearest(const Vec3& q, double& d2) const {
        std::vector<std::uint32_t> idx;
        std::vector<double> dist;
        knn(q, 1, idx, dist);
        d2 = dist[0];
        return idx[0];
    }

    // Nearest and runner-up, for tie-margin tracking near correspondence flips.
    void nearest2(const Vec3& q, std::uint32_t idx[2], double d2[2]) const {
        std::vector<std::uint32_t> i;
        std::vector<double> d;
        knn(q, std::min<std::size_t>(2, pts_.size()), i, d);
        idx[0] = i[0];
        d2[0] = d[0];
        if (i.size() > 1) {
            idx[1] = i[1];
            d2[1] = d[1];
        } else {
            idx[1] = i[0];
            d2[1] = std::numeric_limits<double>::infinity();
        }
    }

private:
    static constexpr std::uint32_t kLeafSize = 8;
    static constexpr std::uint32_t kNone = 0xffffffffu;

    struct Node {
        double split = 0.0;
        std::uint32_t left = kNone, right = kNone;
        std::uint32_t begin = 0, end = 0;  // leaf range in order_
        std::uint8_t axis = 3;             // 3 marks a leaf
    };

    std::uint32_t build(std::uint32_t begin, std::uint32_t end) {
        Node node;
        if (end - begin <= kLeafSize) {
            node.axis = 3;
            node.begin = begin;
            node.end = end;
            nodes_.push_back(node);
            return static_cast<std::uint32_t>(nodes_.size() - 1);
        }
        // widest-spread axis
        Vec3 lo{std::numeric_limits<double>::max(), std::numeric_limits<double>::max(),
                std::numeric_limits<double>::max()};
        Vec3 hi{-std::numeric_limits<double>::max(), -std::numeric_limits<double>::max(),
                -std::numeric_limits<double>::max()};
        for (std::uint32_t i = begin; i < end; ++i) {
            const Vec3& p = pts_[order_[i]];
            lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
            hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
        }
        const Vec3 spread = hi - lo;
        std::uint8_t axis = 0;
        if (spread.y > spread[axis]) axis = 1;
        if (spread.z > spread[axis]) axis = 2;
        const std::uint32_t mid = begin + (end - begin) / 2;
        std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                         [&](std::uint32_t a, std::uint32_t b) {
                             return pts_[a][axis] < pts_[b][axis];
                         });
        node.axis = axis;
        node.split = pts_[order_[mid]][axis];
        const std::uint32_t self = static_cast<std::uint32_t>(nodes_.size());
        nodes_.push_back(node);
        const std::uint32_t left = build(begin, mid);
        const std::uint32_t right = build(mid, end);
        nodes_[self].left = left;
        nodes_[self].right = right;
        return self;
    }

    struct Query {
        const Vec3& q;
        std::vector<std::uint32_t>& idx;
        std::vector<double>& d2;
        std::size_t found;
        std::size_t k;
    };

    static bool better(double d2, std::uint32_t idx, double ref_d2, std::uint32_t ref_idx) {
        return d2 < ref_d2 || (d2 == ref_d2 && idx < ref_idx);
    }

    void consider(std::uint32_t idx, Query& s) const {
        const Vec3 d = pts_[idx] - s.q;
        const double d2 = d.norm2();
        if (s.found == s.k && !better(d2, idx, s.d2[s.k - 1], s.idx[s.k - 1])) return;
        std::size_t pos = s.found < s.k ? s.found : s.k - 1;
        if (s.found < s.k) ++s.found;
        while (pos > 0 && better(d2, idx, s.d2[pos - 1], s.idx[pos - 1])) {
            s.d2[pos] = s.d2[pos - 1];
            s.idx[pos] = s.idx[pos - 1];
            --pos;
        }
        s.d2[pos] = d2;
        s.idx[pos] = idx;
    }

    void search(std::uint32_t node_id, Query& s) const {
        const Node& node = nodes_[node_id];
        if (node.axis == 3) {
            for (std::uint32_t i = node.begin; i < node.end; ++i) consider(order_[i], s);
            return;
        }
        const double delta = s.q[node.axis] - node.split;
        const std::uint32_t near = delta < 0.0 ? node.left : node.right;
        const std::uint32_t far = delta < 0.0 ? node.right : node.left;
        search(near, s);
        // The far side can still hold equal-distance lower-index candidates,
        // so prune only when the plane is strictly farther than the worst.
        const double worst = s.found < s.k ? std::numeric_limits<double>::infinity()
                                           : s.d2[s.k - 1];
        if (delta * delta <= worst) search(far, s);
    }

    const std::vector<Vec3> pts_;
    std::vector<std::uint32_t> order_;
    std::vector<Node> nodes_;
    std::uint32_t root_ = 0;
};

// For each query point, indices of its k nearest cloud points by Euclidean
// distance, ascending, ties broken by lowest index. Exact.
inline std::vector<std::vector<std::uint32_t>> knn_search(const PointCloud& cloud,
                                                          const PointCloud& query,
                                                          std::size_t k) {
    if (k == 0 || k > cloud.size()) {
        throw ShapeError("knn_search: k=" + std::to_string(k) + " with " +
                         std::to_string(cloud.size()) + " cloud points");
    }
    KdTree tree(cloud.points);
    std::vector<std::vector<std::uint32_t>> out(query.size());
    std::vector<std::uint32_t> idx;
    std::vector<double> d2;
    for (std::size_t i = 0; i < query.size(); ++i) {
        tree.knn(query.points[i], k, idx, d2);
        out[i] = idx;
    }
    return out;
}

}  // namespace gascn::geo
