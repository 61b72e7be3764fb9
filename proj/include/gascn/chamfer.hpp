#pragma once

#include <cmath>
#include <vector>

#include "gascn/kdtree.hpp"
#include "gascn/point_cloud.hpp"
#include "gascn/tape.hpp"

namespace gascn::geo {

// Eq.-style Chamfer distance uses plain Euclidean norms; the squared variant
// exists for comparability with the PCN benchmark lineage.
enum class CdVariant { Unsquared, Squared };

struct ChamferResult {
    double value = 0.0;
    std::vector<Vec3> grad_a;
    std::vector<Vec3> grad_b;
};

namespace detail {

// One directional term: mean distance from each src point to its nearest dst
// point. Gradients flow to both the source point and its matched neighbor.
inline double chamfer_direction(const std::vector<Vec3>& src, const std::vector<Vec3>& dst,
                                const KdTree& dst_tree, CdVariant variant,
                                std::vector<Vec3>* grad_src, std::vector<Vec3>* grad_dst) {
    const double inv_n = 1.0 / double(src.size());
    const bool monitoring = ad::KinkMonitor::active() != nullptr;
    double acc = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) {
        double d2;
        std::uint32_t j;
        if (monitoring && dst.size() >= 2) {
            std::uint32_t idx2[2];
            double dd2[2];
            dst_tree.nearest2(src[i], idx2, dd2);
            j = idx2[0];
            d2 = dd2[0];
            ad::observe_kink_margin(std::sqrt(dd2[1]) - std::sqrt(dd2[0]));
        } else {
            j = dst_tree.nearest(src[i], d2);
        }
        const Vec3 diff = src[i] - dst[j];
        if (variant == CdVariant::Squared) {
            acc += d2;
            if (grad_src || grad_dst) {
                const Vec3 g = diff * (2.0 * inv_n);
                if (grad_src) (*grad_src)[i] += g;
                if (grad_dst) (*grad_dst)[j] += g * -1.0;
            }
        } else {
            const double d = std::sqrt(d2);
            acc += d;
            if (d > 0.0 && (grad_src || grad_dst)) {
                const Vec3 g = diff * (inv_n / d);
                if (grad_src) (*grad_src)[i] += g;
                if (grad_dst) (*grad_dst)[j] += g * -1.0;
            }
        }
    }
    return acc * inv_n;
}

}  // namespace detail

// Symmetric average closest-point distance between two point sets, with
// gradients w.r.t. every point of both sets. Exact nearest neighbors.
inline ChamferResult chamfer_with_grads(const PointCloud& a, const PointCloud& b,
                                        CdVariant variant = CdVariant::Unsquared) {
    if (a.empty() || b.empty()) throw ShapeError("chamfer_distance: empty point set");
    ChamferResult res;
    res.grad_a.assign(a.size(), Vec3{});
    res.grad_b.assign(b.size(), Vec3{});
    KdTree tree_a(a.points);
    KdTree tree_b(b.points);
    res.value = detail::chamfer_direction(a.points, b.points, tree_b, variant, &res.grad_a,
                                          &res.grad_b) +
                detail::chamfer_direction(b.points, a.points, tree_a, variant, &res.grad_b,
                                          &res.grad_a);
    return res;
}

inline double chamfer_distance(const PointCloud& a, const PointCloud& b,
                               CdVariant variant = CdVariant::Unsquared) {
    if (a.empty() || b.empty()) throw ShapeError("chamfer_distance: empty point set");
    KdTree tree_a(a.points);
    KdTree tree_b(b.points);
    return detail::chamfer_direction(a.points, b.points, tree_b, variant, nullptr, nullptr) +
           detail::chamfer_direction(b.points, a.points, tree_a, variant, nullptr, nullptr);
}

// Per-prediction-point distance to the nearest ground-truth point.
inline std::vector<double> nn_distance_field(const PointCloud& pred, const PointCloud& gt) {
    if (pred.empty() || gt.empty()) throw ShapeError("nn_distance_field: empty point set");
    KdTree tree(gt.points);
    std::vector<double> field(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        double d2;
        tree.nearest(pred.points[i], d2);
        field[i] = std::sqrt(d2);
    }
    return field;
}

}  // namespace gascn::geo
