#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <vector>

#include "gascn/kdtree.hpp"
#include "gascn/point_cloud.hpp"

namespace gascn::geo {

struct IcpResult {
    RigidTransform transform;  // maps source frame into target frame
    std::vector<double> mse_trace;
    double final_mse = 0.0;
    std::size_t iterations = 0;
};

namespace detail {

// Closed-form least-squares rigid alignment (Kabsch) of paired point sets.
inline RigidTransform kabsch(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
    const double inv_n = 1.0 / double(src.size());
    Vec3 src_mean, dst_mean;
    for (std::size_t i = 0; i < src.size(); ++i) {
        src_mean += src[i];
        dst_mean += dst[i];
    }
    src_mean = src_mean * inv_n;
    dst_mean = dst_mean * inv_n;

    Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) {
        const Vec3 p = src[i] - src_mean;
        const Vec3 q = dst[i] - dst_mean;
        h(0, 0) += p.x * q.x;
        h(0, 1) += p.x * q.y;
        h(0, 2) += p.x * q.z;
        h(1, 0) += p.y * q.x;
        h(1, 1) += p.y * q.y;
        h(1, 2) += p.y * q.z;
        h(2, 0) += p.z * q.x;
        h(2, 1) += p.z * q.y;
        h(2, 2) += p.z * q.z;
    }

    Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    if (!(sv(0) > 0.0) || sv(2) < 1e-12 * sv(0)) {
        throw DegenerateError("icp_register: rank-deficient correspondence covariance");
    }
    Eigen::Matrix3d u = svd.matrixU();
    Eigen::Matrix3d v = svd.matrixV();
    Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
    d(2, 2) = (v * u.transpose()).determinant() > 0.0 ? 1.0 : -1.0;
    const Eigen::Matrix3d r = v * d * u.transpose();

    RigidTransform out;
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) out.rotation[i][j] = r(i, j);
    }
    out.translation = dst_mean - out.rotate(src_mean);
    return out;
}

inline bool collinear(const std::vector<Vec3>& pts) {
    if (pts.size() < 3) return true;
    const Vec3 a = pts[0];
    for (std::size_t i = 1; i < pts.size(); ++i) {
        const Vec3 u = pts[i] - a;
        if (u.norm2() < 1e-24) continue;
        for (std::size_t j = i + 1; j < pts.size(); ++j) {
            const Vec3 v = pts[j] - a;
            if (u.cross(v).norm2() > 1e-24) return false;
        }
        break;
    }
    return true;
}

}  // namespace detail

// Point-to-point ICP: exact nearest-neighbor correspondences, closed-form
// SVD rigid update, iterated until the MSE improvement drops below tol or
// max_iters is reached. The recorded per-iteration MSE is non-increasing.
inline IcpResult icp_register(const PointCloud& source, const PointCloud& target,
                              std::size_t max_iters = 50, double tol = 1e-10) {
    source.validate("icp_register source");
    target.validate("icp_register target");
    if (source.size() < 3 || target.size() < 3 || detail::collinear(source.points) ||
        detail::collinear(target.points)) {
        throw DegenerateError("icp_register: need at least 3 non-collinear points per cloud");
    }

    KdTree tree(target.points);
    IcpResult res;
    std::vector<Vec3> current = source.points;
    std::vector<Vec3> matched(source.size());

    double prev_mse = std::numeric_limits<double>::infinity();
    for (std::size_t iter = 0; iter < max_iters; ++iter) {
        double mse = 0.0;
        for (std::size_t i = 0; i < current.size(); ++i) {
            double d2;
            const std::uint32_t j = tree.nearest(current[i], d2);
            matched[i] = target.points[j];
            mse += d2;
        }
        mse /= double(current.size());
        res.mse_trace.push_back(mse);
        res.iterations = iter + 1;
        if (mse == 0.0 || prev_mse - mse < tol) break;
        prev_mse = mse;

        const RigidTransform delta = detail::kabsch(current, matched);
        for (Vec3& p : current) p = delta.apply(p);
        res.transform = delta.compose(res.transform);
    }
    res.final_mse = res.mse_trace.back();
    return res;
}

}  // namespace gascn::geo
