#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "gascn/io_ply.hpp"
#include "gascn/point_cloud.hpp"
#include "gascn/rng.hpp"

namespace gascn::data {

// ============================================================================
// Input clipping
// ============================================================================

// Random permutation; when the cloud exceeds max_points, a uniform random
// subset of exactly max_points survives. Normals and scalar fields follow.
inline geo::PointCloud clip_input(const geo::PointCloud& cloud, std::size_t max_points,
                                  Rng& rng) {
    if (max_points == 0) throw ConfigError("clip_input: max_points must be positive");
    std::vector<std::size_t> order(cloud.size());
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t keep = std::min(cloud.size(), max_points);
    geo::PointCloud out;
    out.points.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) {
        out.points.push_back(cloud.points[order[i]]);
        if (cloud.has_normals()) out.normals.push_back(cloud.normals[order[i]]);
        if (cloud.has_scalar_field()) out.scalar_field.push_back(cloud.scalar_field[order[i]]);
    }
    return out;
}

inline geo::PointCloud clip_input(const geo::PointCloud& cloud, std::size_t max_points,
                                  std::uint64_t seed) {
    Rng rng = make_rng(seed);
    return clip_input(cloud, max_points, rng);
}

// ============================================================================
// Primitive generators
// ============================================================================

namespace detail {

struct SurfacePart {
    double area = 0.0;
    // appends one sampled point + normal
    std::function<void(Rng&, geo::PointCloud&)> sample;
};

inline void sample_parts(const std::vector<SurfacePart>& parts, std::size_t n_points, Rng& rng,
                         geo::PointCloud& cloud) {
    double total = 0.0;
    for (const auto& p : parts) total += p.area;
    for (std::size_t i = 0; i < n_points; ++i) {
        double pick = uniform(rng, 0.0, total);
        for (const auto& p : parts) {
            if (pick < p.area || &p == &parts.back()) {
                p.sample(rng, cloud);
                break;
            }
            pick -= p.area;
        }
    }
}

inline SurfacePart disc(double radius, double z, double nz) {
    return {M_PI * radius * radius, [=](Rng& rng, geo::PointCloud& c) {
                const double rho = radius * std::sqrt(uniform(rng, 0.0, 1.0));
                const double th = uniform(rng, 0.0, 2.0 * M_PI);
                c.points.push_back({rho * std::cos(th), rho * std::sin(th), z});
                c.normals.push_back({0.0, 0.0, nz});
            }};
}

inline SurfacePart cylinder_side(double radius, double z0, double z1) {
    return {2.0 * M_PI * radius * (z1 - z0), [=](Rng& rng, geo::PointCloud& c) {
                const double th = uniform(rng, 0.0, 2.0 * M_PI);
                const double z = uniform(rng, z0, z1);
                c.points.push_back({radius * std::cos(th), radius * std::sin(th), z});
                c.normals.push_back({std::cos(th), std::sin(th), 0.0});
            }};
}

// Lateral surface of a frustum from (r0, z0) to (r1, z1); area density along
// the axis is proportional to the local radius.
inline SurfacePart frustum_side(double r0, double z0, double r1, double z1) {
    const double h = z1 - z0;
    const double slant = std::hypot(r1 - r0, h);
    return {M_PI * (r0 + r1) * slant, [=](Rng& rng, geo::PointCloud& c) {
                const double u = uniform(rng, 0.0, 1.0);
                double t;
                if (std::abs(r1 - r0) < 1e-12) {
                    t = u;
                } else {
                    t = (-r0 + std::sqrt(r0 * r0 + u * (r1 * r1 - r0 * r0))) / (r1 - r0);
                }
                const double r = r0 + (r1 - r0) * t;
                const double z = z0 + h * t;
                const double th = uniform(rng, 0.0, 2.0 * M_PI);
                const double slope = (r1 - r0) / h;
                const double inv = 1.0 / std::sqrt(1.0 + slope * slope);
                c.points.push_back({r * std::cos(th), r * std::sin(th), z});
                c.normals.push_back(
                    {std::cos(th) * inv, std::sin(th) * inv, -slope * inv});
            }};
}

// z-band of a sphere of the given radius centered at (0,0,zc); by Archimedes
// a uniform z in the band is uniform by area.
inline SurfacePart sphere_band(double radius, double zc, double zlo, double zhi) {
    return {2.0 * M_PI * radius * (zhi - zlo), [=](Rng& rng, geo::PointCloud& c) {
                const double z = uniform(rng, zlo, zhi);
                const double rho = std::sqrt(std::max(0.0, radius * radius - z * z));
                const double th = uniform(rng, 0.0, 2.0 * M_PI);
                const geo::Vec3 n{rho * std::cos(th) / radius, rho * std::sin(th) / radius,
                                  z / radius};
                c.points.push_back({n.x * radius, n.y * radius, zc + z});
                c.normals.push_back(n);
            }};
}

}  // namespace detail

// Surface-area-uniform samples on an analytic primitive, with exact surface
// normals, normalized into the object frame. The sphere is sampled in
// antipodal pairs so its sample centroid is exactly zero and normalization
// keeps every point at radius 0.5.
inline geo::PointCloud gen_primitive(const std::string& kind, double a, double b, double c,
                                     std::size_t n_points, std::uint64_t seed) {
    if (n_points < 4) throw ConfigError("gen_primitive: need at least 4 points");
    if (!(a > 0.0) || !(b > 0.0) || !(c > 0.0)) {
        throw ConfigError("gen_primitive: dimensions must be positive");
    }
    Rng rng = make_rng(seed);
    geo::PointCloud cloud;
    cloud.points.reserve(n_points);
    cloud.normals.reserve(n_points);

    if (kind == "sphere") {
        const double r = a;
        for (std::size_t i = 0; i < n_points / 2; ++i) {
            const double z = uniform(rng, -r, r);
            const double rho = std::sqrt(std::max(0.0, r * r - z * z));
            const double th = uniform(rng, 0.0, 2.0 * M_PI);
            const geo::Vec3 p{rho * std::cos(th), rho * std::sin(th), z};
            cloud.points.push_back(p);
            cloud.normals.push_back(p / r);
            cloud.points.push_back(p * -1.0);
            cloud.normals.push_back(p / -r);
        }
        if (n_points % 2 == 1) {
            const double z = uniform(rng, -r, r);
            const double rho = std::sqrt(std::max(0.0, r * r - z * z));
            const double th = uniform(rng, 0.0, 2.0 * M_PI);
            const geo::Vec3 p{rho * std::cos(th), rho * std::sin(th), z};
            cloud.points.push_back(p);
            cloud.normals.push_back(p / r);
        }
    } else if (kind == "box") {
        const double hx = a / 2, hy = b / 2, hz = c / 2;
        std::vector<detail::SurfacePart> parts;
        auto face = [&](int axis, double sign) {
            const double area = axis == 0 ? b * c : (axis == 1 ? a * c : a * b);
            return detail::SurfacePart{
                area, [=](Rng& r2, geo::PointCloud& cl) {
                    double u, v;
                    u = uniform(r2, -1.0, 1.0);
                    v = uniform(r2, -1.0, 1.0);
                    geo::Vec3 p, n;
                    if (axis == 0) {
                        p = {sign * hx, u * hy, v * hz};
                        n = {sign, 0, 0};
                    } else if (axis == 1) {
                        p = {u * hx, sign * hy, v * hz};
                        n = {0, sign, 0};
                    } else {
                        p = {u * hx, v * hy, sign * hz};
                        n = {0, 0, sign};
                    }
                    cl.points.push_back(p);
                    cl.normals.push_back(n);
                }};
        };
        for (int axis = 0; axis < 3; ++axis) {
            parts.push_back(face(axis, 1.0));
            parts.push_back(face(axis, -1.0));
        }
        detail::sample_parts(parts, n_points, rng, cloud);
    } else if (kind == "cylinder") {
        const double r = a, h = b;
        std::vector<detail::SurfacePart> parts = {
            detail::cylinder_side(r, -h / 2, h / 2),
            detail::disc(r, h / 2, 1.0),
            detail::disc(r, -h / 2, -1.0),
        };
        detail::sample_parts(parts, n_points, rng, cloud);
    } else if (kind == "capsule") {
        const double r = a, h = b;
        std::vector<detail::SurfacePart> parts = {
            detail::cylinder_side(r, -h / 2, h / 2),
            detail::sphere_band(r, h / 2, 0.0, r),
            detail::sphere_band(r, -h / 2, -r, 0.0),
        };
        detail::sample_parts(parts, n_points, rng, cloud);
    } else if (kind == "lamp") {
        // base slab, thin pole, conical shade
        const double base_r = a, height = b, shade_r = c;
        const double slab = 0.04 * height;
        const double pole_r = 0.10 * base_r;
        const double shade_z0 = 0.55 * height;
        std::vector<detail::SurfacePart> parts = {
            detail::disc(base_r, 0.0, -1.0),
            detail::disc(base_r, slab, 1.0),
            detail::cylinder_side(base_r, 0.0, slab),
            detail::cylinder_side(pole_r, slab, shade_z0),
            detail::frustum_side(shade_r, shade_z0, 0.55 * shade_r, height),
        };
        detail::sample_parts(parts, n_points, rng, cloud);
    } else {
        throw ConfigError("gen_primitive: unknown kind '" + kind + "'");
    }

    auto normalized = geo::normalize_cloud(cloud);
    normalized.cloud.normals = cloud.normals;  // unit normals survive similarity transforms
    return normalized.cloud;
}

// ============================================================================
// Partial views
// ============================================================================

// Orthographic z-buffer culling: project along view_dir onto a
// resolution-squared pixel grid and keep, per pixel, the points within
// depth_tol of the nearest depth. Output is a subset of the input.
inline geo::PointCloud simulate_partial_view(const geo::PointCloud& cloud,
                                             const geo::Vec3& view_dir, std::size_t resolution,
                                             double depth_tol = 0.02) {
    cloud.validate("simulate_partial_view");
    if (resolution == 0) throw ConfigError("simulate_partial_view: zero resolution");
    const geo::Vec3 w = view_dir.normalized();
    geo::Vec3 helper = std::abs(w.x) <= std::abs(w.y) && std::abs(w.x) <= std::abs(w.z)
                           ? geo::Vec3{1, 0, 0}
                           : (std::abs(w.y) <= std::abs(w.z) ? geo::Vec3{0, 1, 0}
                                                             : geo::Vec3{0, 0, 1});
    const geo::Vec3 u = w.cross(helper).normalized();
    const geo::Vec3 v = w.cross(u);

    const std::size_t n = cloud.size();
    std::vector<double> px(n), py(n), depth(n);
    double min_x = 1e300, max_x = -1e300, min_y = 1e300, max_y = -1e300;
    for (std::size_t i = 0; i < n; ++i) {
        px[i] = cloud.points[i].dot(u);
        py[i] = cloud.points[i].dot(v);
        depth[i] = cloud.points[i].dot(w);
        min_x = std::min(min_x, px[i]);
        max_x = std::max(max_x, px[i]);
        min_y = std::min(min_y, py[i]);
        max_y = std::max(max_y, py[i]);
    }
    const double extent = std::max({max_x - min_x, max_y - min_y, 1e-12});
    const double cell = extent / double(resolution);

    auto pixel_of = [&](std::size_t i) {
        auto clampi = [&](double t) {
            const long k = long(std::floor(t / cell));
            return std::size_t(std::clamp<long>(k, 0, long(resolution) - 1));
        };
        return clampi(px[i] - min_x) * resolution + clampi(py[i] - min_y);
    };

    std::vector<double> nearest(resolution * resolution,
                                std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < n; ++i) {
        nearest[pixel_of(i)] = std::min(nearest[pixel_of(i)], depth[i]);
    }
    geo::PointCloud out;
    for (std::size_t i = 0; i < n; ++i) {
        if (depth[i] <= nearest[pixel_of(i)] + depth_tol) {
            out.points.push_back(cloud.points[i]);
            if (cloud.has_normals()) out.normals.push_back(cloud.normals[i]);
            if (cloud.has_scalar_field()) out.scalar_field.push_back(cloud.scalar_field[i]);
        }
    }
    return out;
}

// ============================================================================
// Dataset construction
// ============================================================================

struct GenSpec {
    std::size_t n_shapes = 100;
    std::size_t views_per_shape = 8;
    std::size_t gt_points = 2304;
    // pixel footprint must exceed the point spacing or nothing occludes; 24
    // suits a few thousand points per cloud
    std::size_t resolution = 24;
    double depth_tol = 0.02;
    std::size_t min_partial_points = 32;
    std::vector<std::string> categories = {"sphere", "box", "cylinder", "capsule", "lamp"};

    void validate() const {
        if (n_shapes == 0 || views_per_shape == 0) {
            throw ConfigError("GenSpec: need shapes and views");
        }
        if (gt_points < 4) throw ConfigError("GenSpec: gt_points too small");
        if (categories.empty()) throw ConfigError("GenSpec: no categories");
    }
};

struct ManifestInstance {
    std::string id;
    std::string category;
    std::string split;  // train | val | test
    std::string gt_path;
    std::vector<std::string> partial_paths;
    std::string kind;
    std::array<double, 3> dims{1, 1, 1};
    std::vector<std::array<double, 3>> view_dirs;
};

struct DatasetManifest {
    std::uint64_t seed = 0;
    GenSpec spec;
    std::vector<ManifestInstance> instances;
};

namespace detail {

inline std::array<double, 3> dims_for(const std::string& kind, Rng& rng) {
    if (kind == "sphere") return {1.0, 1.0, 1.0};
    if (kind == "box") return {1.0, uniform(rng, 0.35, 1.0), uniform(rng, 0.35, 1.0)};
    if (kind == "cylinder") return {1.0, uniform(rng, 0.9, 4.0), 1.0};
    if (kind == "capsule") return {1.0, uniform(rng, 0.6, 3.0), 1.0};
    if (kind == "lamp") return {1.0, uniform(rng, 2.2, 3.6), uniform(rng, 0.8, 1.6)};
    throw ConfigError("dims_for: unknown kind '" + kind + "'");
}

inline std::string shape_id(std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04zu", index);
    return std::string(buf);
}

}  // namespace detail

// Generates n_shapes across the categories, eight partial observations per
// shape by default, writes PLYs plus a JSON manifest with a deterministic
// 80/10/10 split by shape.
inline DatasetManifest build_dataset(const GenSpec& spec, const std::string& out_dir,
                                     std::uint64_t seed) {
    spec.validate();
    namespace fs = std::filesystem;
    const fs::path out(out_dir);
    if (out.has_parent_path() && !fs::exists(out.parent_path())) {
        throw IoError("build_dataset: parent directory of '" + out_dir + "' does not exist");
    }
    std::error_code ec;
    fs::create_directories(out / "gt", ec);
    if (ec) throw IoError("build_dataset: cannot create " + out_dir + "/gt: " + ec.message());
    fs::create_directories(out / "partial", ec);
    if (ec) throw IoError("build_dataset: cannot create " + out_dir + "/partial");

    // split assignment by shuffled shape index
    std::vector<std::size_t> split_order(spec.n_shapes);
    std::iota(split_order.begin(), split_order.end(), std::size_t(0));
    {
        Rng split_rng = make_rng(seed, 0xD5u);
        std::shuffle(split_order.begin(), split_order.end(), split_rng);
    }
    const std::size_t n_train = spec.n_shapes * 8 / 10;
    const std::size_t n_val = spec.n_shapes / 10;
    std::vector<std::string> split_of(spec.n_shapes);
    for (std::size_t rank = 0; rank < spec.n_shapes; ++rank) {
        split_of[split_order[rank]] =
            rank < n_train ? "train" : (rank < n_train + n_val ? "val" : "test");
    }

    DatasetManifest manifest;
    manifest.seed = seed;
    manifest.spec = spec;

    for (std::size_t s = 0; s < spec.n_shapes; ++s) {
        ManifestInstance inst;
        inst.id = detail::shape_id(s);
        inst.kind = spec.categories[s % spec.categories.size()];
        inst.category = inst.kind;
        inst.split = split_of[s];

        Rng shape_rng = make_rng(seed, 0xA0000u + s);
        inst.dims = detail::dims_for(inst.kind, shape_rng);
        const geo::PointCloud gt =
            gen_primitive(inst.kind, inst.dims[0], inst.dims[1], inst.dims[2], spec.gt_points,
                          mix_seed(seed, 0xB0000u + s));

        inst.gt_path = "gt/shape_" + inst.id + ".ply";
        write_ply(gt, (fs::path(out_dir) / inst.gt_path).string());

        for (std::size_t view = 0; view < spec.views_per_shape; ++view) {
            geo::PointCloud partial;
            geo::Vec3 dir;
            bool ok = false;
            for (int attempt = 0; attempt < 200; ++attempt) {
                dir = geo::Vec3{normal(shape_rng), normal(shape_rng), normal(shape_rng)};
                if (dir.norm() < 1e-6) continue;
                dir = dir / dir.norm();
                partial = simulate_partial_view(gt, dir, spec.resolution, spec.depth_tol);
                if (partial.size() >= spec.min_partial_points) {
                    ok = true;
                    break;
                }
            }
            if (!ok) {
                throw DegenerateError("build_dataset: cannot find a viable view for shape " +
                                      inst.id);
            }
            const std::string rel =
                "partial/shape_" + inst.id + "_" + std::to_string(view) + ".ply";
            write_ply(partial, (fs::path(out_dir) / rel).string());
            inst.partial_paths.push_back(rel);
            inst.view_dirs.push_back({dir.x, dir.y, dir.z});
        }
        manifest.instances.push_back(std::move(inst));
    }

    // manifest.json
    nlohmann::json j;
    j["seed"] = seed;
    j["n_shapes"] = spec.n_shapes;
    j["views_per_shape"] = spec.views_per_shape;
    j["gt_points"] = spec.gt_points;
    j["resolution"] = spec.resolution;
    j["depth_tol"] = spec.depth_tol;
    j["min_partial_points"] = spec.min_partial_points;
    j["categories"] = spec.categories;
    j["instances"] = nlohmann::json::array();
    for (const auto& inst : manifest.instances) {
        nlohmann::json ji;
        ji["id"] = inst.id;
        ji["category"] = inst.category;
        ji["split"] = inst.split;
        ji["gt"] = inst.gt_path;
        ji["partials"] = inst.partial_paths;
        ji["generator"]["kind"] = inst.kind;
        ji["generator"]["dims"] = inst.dims;
        ji["generator"]["view_dirs"] = inst.view_dirs;
        j["instances"].push_back(ji);
    }
    std::ofstream f(fs::path(out_dir) / "manifest.json", std::ios::trunc);
    if (!f) throw IoError("build_dataset: cannot write manifest.json");
    f << j.dump(2) << "\n";
    return manifest;
}

inline DatasetManifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("load_manifest: cannot open " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("load_manifest: " + std::string(e.what()));
    }
    DatasetManifest m;
    try {
        m.seed = j.at("seed").get<std::uint64_t>();
        m.spec.n_shapes = j.at("n_shapes").get<std::size_t>();
        m.spec.views_per_shape = j.at("views_per_shape").get<std::size_t>();
        m.spec.gt_points = j.at("gt_points").get<std::size_t>();
        m.spec.resolution = j.at("resolution").get<std::size_t>();
        m.spec.depth_tol = j.at("depth_tol").get<double>();
        m.spec.min_partial_points = j.at("min_partial_points").get<std::size_t>();
        m.spec.categories = j.at("categories").get<std::vector<std::string>>();
        for (const auto& ji : j.at("instances")) {
            ManifestInstance inst;
            inst.id = ji.at("id").get<std::string>();
            inst.category = ji.at("category").get<std::string>();
            inst.split = ji.at("split").get<std::string>();
            inst.gt_path = ji.at("gt").get<std::string>();
            inst.partial_paths = ji.at("partials").get<std::vector<std::string>>();
            if (inst.partial_paths.empty()) {
                throw FormatError("load_manifest: instance " + inst.id + " has no partial views");
            }
            inst.kind = ji.at("generator").at("kind").get<std::string>();
            const auto dims = ji.at("generator").at("dims").get<std::vector<double>>();
            for (std::size_t d = 0; d < 3 && d < dims.size(); ++d) inst.dims[d] = dims[d];
            m.instances.push_back(std::move(inst));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("load_manifest: malformed manifest: " + std::string(e.what()));
    }
    return m;
}

// One training / evaluation unit: a single partial view with its ground truth.
struct TrainInstance {
    std::string id;
    std::string category;
    std::size_t view = 0;
    geo::PointCloud partial;
    geo::PointCloud gt;
};

inline std::vector<TrainInstance> load_split(const DatasetManifest& manifest,
                                             const std::string& manifest_dir,
                                             const std::string& split) {
    namespace fs = std::filesystem;
    std::vector<TrainInstance> out;
    for (const auto& inst : manifest.instances) {
        if (inst.split != split) continue;
        const geo::PointCloud gt = read_ply((fs::path(manifest_dir) / inst.gt_path).string());
        for (std::size_t v = 0; v < inst.partial_paths.size(); ++v) {
            TrainInstance ti;
            ti.id = inst.id;
            ti.category = inst.category;
            ti.view = v;
            ti.gt = gt;
            ti.partial = read_ply((fs::path(manifest_dir) / inst.partial_paths[v]).string());
            out.push_back(std::move(ti));
        }
    }
    if (out.empty()) {
        throw ConfigError("load_split: no instances in split '" + split + "'");
    }
    return out;
}

}  // namespace gascn::data
