#pragma once

#include <cmath>
#include <vector>

#include "gascn/point_cloud.hpp"

namespace gascn::geo {

// Vertices of a square grid_n x grid_n grid in the XY plane. Side length l,
// centered at the origin: X and Y each take grid_n evenly spaced values
// spanning [-l/2, l/2], Z = 0. grid_n == 1 degenerates to the single origin
// vertex.
inline std::vector<Vec3> meshgrid_square(std::size_t grid_n, double l) {
    if (grid_n < 1) throw ConfigError("meshgrid_square: grid_n must be >= 1");
    if (!(l > 0.0)) throw ConfigError("meshgrid_square: side length must be positive");
    std::vector<Vec3> out;
    out.reserve(grid_n * grid_n);
    auto coord = [&](std::size_t i) {
        if (grid_n == 1) return 0.0;
        return -l / 2.0 + l * double(i) / double(grid_n - 1);
    };
    for (std::size_t i = 0; i < grid_n; ++i) {
        for (std::size_t j = 0; j < grid_n; ++j) {
            out.push_back({coord(i), coord(j), 0.0});
        }
    }
    return out;
}

// Rotation taking the +Z axis onto the unit normal n, built from axis
// k = z × n and angle θ = arccos(n_z) via Rodrigues' formula. When the axis
// vanishes: identity for n ≈ +z, and a π rotation about the x-axis for
// n ≈ -z (the axis-angle pair is undefined there but R·z = -z must hold).
inline RigidTransform rotation_from_normal(const Vec3& n) {
    if (std::abs(n.norm() - 1.0) > 1e-6) {
        throw NumericError("rotation_from_normal: input normal is not unit length");
    }
    const Vec3 axis_raw{-n.y, n.x, 0.0};  // z × n
    const double s = axis_raw.norm();
    RigidTransform out;
    if (s < 1e-8) {
        if (n.z > 0.0) return out;  // identity
        out.rotation = {{{1, 0, 0}, {0, -1, 0}, {0, 0, -1}}};
        return out;
    }
    const Vec3 k = axis_raw / s;
    const double theta = std::acos(std::clamp(n.z, -1.0, 1.0));
    const double c = std::cos(theta), sn = std::sin(theta);
    const double omc = 1.0 - c;
    out.rotation = {{{c + k.x * k.x * omc, k.x * k.y * omc - k.z * sn, k.x * k.z * omc + k.y * sn},
                     {k.y * k.x * omc + k.z * sn, c + k.y * k.y * omc, k.y * k.z * omc - k.x * sn},
                     {k.z * k.x * omc - k.y * sn, k.z * k.y * omc + k.x * sn, c + k.z * k.z * omc}}};
    return out;
}

}  // namespace gascn::geo
