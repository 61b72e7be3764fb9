#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "gascn/errors.hpp"

namespace gascn::geo {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3() = default;
    Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3& operator+=(const Vec3& o) {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }

    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm2() const { return dot(*this); }
    double norm() const { return std::sqrt(norm2()); }
    Vec3 normalized() const {
        const double n = norm();
        if (n == 0.0) throw NumericError("Vec3: cannot normalize zero vector");
        return *this / n;
    }
    double operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

// Ordered 3D point list with optional per-point unit normals and a scalar
// field (e.g. nearest-neighbor distance for export).
struct PointCloud {
    std::vector<Vec3> points;
    std::vector<Vec3> normals;        // empty or same size as points
    std::vector<double> scalar_field; // empty or same size as points

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
    bool has_normals() const { return !normals.empty(); }
    bool has_scalar_field() const { return !scalar_field.empty(); }

    void validate(const std::string& label) const {
        if (points.empty()) throw ShapeError(label + ": empty point cloud");
        for (const Vec3& p : points) {
            if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
                throw NumericError(label + ": non-finite coordinate");
            }
        }
        if (!normals.empty()) {
            if (normals.size() != points.size()) {
                throw ShapeError(label + ": normal count differs from point count");
            }
            for (const Vec3& n : normals) {
                if (std::abs(n.norm() - 1.0) > 1e-6) {
                    throw NumericError(label + ": non-unit normal");
                }
            }
        }
        if (!scalar_field.empty() && scalar_field.size() != points.size()) {
            throw ShapeError(label + ": scalar field size differs from point count");
        }
    }
};

struct RigidTransform {
    std::array<std::array<double, 3>, 3> rotation{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
    Vec3 translation;

    static RigidTransform identity() { return RigidTransform{}; }

    Vec3 apply(const Vec3& p) const {
        return {rotation[0][0] * p.x + rotation[0][1] * p.y + rotation[0][2] * p.z + translation.x,
                rotation[1][0] * p.x + rotation[1][1] * p.y + rotation[1][2] * p.z + translation.y,
                rotation[2][0] * p.x + rotation[2][1] * p.y + rotation[2][2] * p.z + translation.z};
    }

    Vec3 rotate(const Vec3& p) const {
        return {rotation[0][0] * p.x + rotation[0][1] * p.y + rotation[0][2] * p.z,
                rotation[1][0] * p.x + rotation[1][1] * p.y + rotation[1][2] * p.z,
                rotation[2][0] * p.x + rotation[2][1] * p.y + rotation[2][2] * p.z};
    }

    // this ∘ other: applies other first.
    RigidTransform compose(const RigidTransform& other) const {
        RigidTransform out;
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                double acc = 0.0;
                for (int k = 0; k < 3; ++k) acc += rotation[i][k] * other.rotation[k][j];
                out.rotation[i][j] = acc;
            }
        }
        out.translation = apply(other.translation);
        return out;
    }

    PointCloud apply(const PointCloud& cloud) const {
        PointCloud out = cloud;
        for (Vec3& p : out.points) p = apply(p);
        for (Vec3& n : out.normals) n = rotate(n);
        return out;
    }

    // max |RᵀR - I| entry, for orthogonality checks.
    double orthogonality_defect() const {
        double worst = 0.0;
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                double acc = 0.0;
                for (int k = 0; k < 3; ++k) acc += rotation[k][i] * rotation[k][j];
                worst = std::max(worst, std::abs(acc - (i == j ? 1.0 : 0.0)));
            }
        }
        return worst;
    }

    double determinant() const {
        const auto& r = rotation;
        return r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) -
               r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0]) +
               r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
    }
};

// Parameters to undo normalize_cloud: original = normalized / scale + centroid.
struct NormalizeParams {
    Vec3 centroid;
    double scale = 1.0;
};

struct NormalizedCloud {
    PointCloud cloud;
    NormalizeParams params;
};

// Centers the cloud on its centroid and scales so the farthest point sits at
// radius 0.5, the object frame every grid/σ hyperparameter assumes.
inline NormalizedCloud normalize_cloud(const PointCloud& cloud) {
    cloud.validate("normalize_cloud");
    Vec3 centroid;
    for (const Vec3& p : cloud.points) centroid += p;
    centroid = centroid / double(cloud.size());
    double max_r = 0.0;
    for (const Vec3& p : cloud.points) max_r = std::max(max_r, (p - centroid).norm());
    if (max_r <= 0.0) {
        throw DegenerateError("normalize_cloud: all points coincide");
    }
    const double scale = 0.5 / max_r;
    NormalizedCloud out;
    out.params = {centroid, scale};
    out.cloud = cloud;
    for (Vec3& p : out.cloud.points) p = (p - centroid) * scale;
    return out;
}

inline Vec3 denormalize_point(const Vec3& p, const NormalizeParams& params) {
    return p / params.scale + params.centroid;
}

inline PointCloud denormalize_cloud(const PointCloud& cloud, const NormalizeParams& params) {
    PointCloud out = cloud;
    for (Vec3& p : out.points) p = denormalize_point(p, params);
    return out;
}

}  // namespace gascn::geo
