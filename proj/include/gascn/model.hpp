#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "gascn/graph.hpp"
#include "gascn/ops.hpp"
#include "gascn/point_cloud.hpp"
#include "gascn/rng.hpp"
#include "gascn/rotation.hpp"

namespace gascn::model {

enum class Variant { Full, ModelA, ModelB };

inline std::string variant_name(Variant v) {
    switch (v) {
        case Variant::Full: return "full";
        case Variant::ModelA: return "model_a";
        case Variant::ModelB: return "model_b";
    }
    return "full";
}

inline Variant variant_from_name(const std::string& s) {
    if (s == "full") return Variant::Full;
    if (s == "model_a") return Variant::ModelA;
    if (s == "model_b") return Variant::ModelB;
    throw ConfigError("unknown variant '" + s + "' (expected full|model_a|model_b)");
}

// Network shape. model_a swaps the adaptive-grid decoder for a fixed grid
// (PCN-style decoder); model_b drops the graph-attention branch from the
// encoder (PCN-style encoder).
struct ModelConfig {
    std::size_t input_k = 20;
    std::size_t n_coarse = 64;
    std::size_t coarse_k = 5;
    std::size_t grid_n = 6;
    double grid_l = 0.1;
    std::size_t gat_dim = 64;
    std::size_t cart_dim = 64;
    std::size_t latent_dim = 256;
    std::size_t num_gat_layers = 1;
    Variant variant = Variant::Full;
    double leaky_slope = 0.2;

    std::vector<std::size_t> mlp_cart_hidden = {64};
    std::vector<std::size_t> mlp_final_hidden = {};
    std::vector<std::size_t> coarse_fc_hidden = {256, 512};
    std::size_t gcn_dim = 64;
    std::size_t map_coarse_dim = 64;
    std::size_t map_global_dim = 64;
    std::vector<std::size_t> normal_hidden = {128};
    std::vector<std::size_t> sigma_hidden = {128, 128};
    std::vector<std::size_t> refine_hidden = {128, 128};

    std::size_t n_fine() const { return n_coarse * grid_n * grid_n; }

    void validate() const {
        if (input_k == 0 || coarse_k == 0) throw ConfigError("ModelConfig: k values must be positive");
        if (n_coarse < coarse_k + 1) {
            throw ConfigError("ModelConfig: n_coarse must exceed coarse_k");
        }
        if (grid_n < 1) throw ConfigError("ModelConfig: grid_n must be >= 1");
        if (!(grid_l > 0.0)) throw ConfigError("ModelConfig: grid_l must be positive");
        if (num_gat_layers < 1) throw ConfigError("ModelConfig: num_gat_layers must be >= 1");
        if (gat_dim == 0 || cart_dim == 0 || latent_dim == 0 || gcn_dim == 0 ||
            map_coarse_dim == 0 || map_global_dim == 0) {
            throw ConfigError("ModelConfig: zero feature width");
        }
        if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) {
            throw ConfigError("ModelConfig: leaky_slope must lie in (0,1)");
        }
        if (normal_hidden.empty() || sigma_hidden.empty() || refine_hidden.empty() ||
            coarse_fc_hidden.size() != 2) {
            throw ConfigError("ModelConfig: decoder widths incomplete (coarse_fc takes exactly "
                              "two hidden widths)");
        }
    }

    // Full-scale configuration: 1024 coarse points densified
    // by 4x4 grids to 16384, inputs clipped at 3000.
    static ModelConfig full_scale_preset() {
        ModelConfig c;
        c.n_coarse = 1024;
        c.grid_n = 4;
        c.latent_dim = 1024;
        c.coarse_fc_hidden = {1024, 1024};
        c.mlp_final_hidden = {512};
        return c;
    }
};

// ============================================================================
// Parameters
// ============================================================================

struct ModelParams {
    std::map<std::string, ad::TensorPtr> tensors;

    const ad::TensorPtr& at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw ConfigError("ModelParams: missing tensor " + name);
        return it->second;
    }

    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& [name, t] : tensors) n += t->size();
        return n;
    }

    void zero_grads() {
        for (auto& [name, t] : tensors) t->zero_grad();
    }

    void validate_finite() const {
        for (const auto& [name, t] : tensors) t->validate_finite(name);
    }
};

inline std::map<std::string, std::vector<std::size_t>> param_shapes(const ModelConfig& cfg) {
    cfg.validate();
    std::map<std::string, std::vector<std::size_t>> shapes;
    auto mlp = [&](const std::string& prefix, std::size_t in,
                   const std::vector<std::size_t>& widths) {
        std::size_t d = in;
        for (std::size_t i = 0; i < widths.size(); ++i) {
            shapes[prefix + "." + std::to_string(i) + ".W"] = {d, widths[i]};
            shapes[prefix + "." + std::to_string(i) + ".b"] = {widths[i]};
            d = widths[i];
        }
        return d;
    };

    const bool gat_branch = cfg.variant != Variant::ModelB;
    const bool adaptive = cfg.variant != Variant::ModelA;

    if (gat_branch) {
        std::size_t in = 3;
        for (std::size_t l = 0; l < cfg.num_gat_layers; ++l) {
            shapes["gat" + std::to_string(l) + ".W"] = {in, cfg.gat_dim};
            shapes["gat" + std::to_string(l) + ".a"] = {2 * cfg.gat_dim, 1};
            in = cfg.gat_dim;
        }
    }
    {
        auto widths = cfg.mlp_cart_hidden;
        widths.push_back(cfg.cart_dim);
        mlp("mlp_cart", 3, widths);
    }
    const std::size_t fbar = gat_branch ? cfg.gat_dim + cfg.cart_dim : cfg.cart_dim;
    {
        auto widths = cfg.mlp_final_hidden;
        widths.push_back(cfg.latent_dim);
        mlp("mlp_final", 2 * fbar, widths);
    }
    {
        std::vector<std::size_t> widths = {cfg.coarse_fc_hidden[0], cfg.coarse_fc_hidden[1],
                                           3 * cfg.n_coarse};
        mlp("coarse_fc", cfg.latent_dim, widths);
    }
    if (adaptive) {
        shapes["gcn_local.W"] = {3, cfg.gcn_dim};
        shapes["gcn_local.b"] = {cfg.gcn_dim};
        mlp("map_coarse", 3, {cfg.map_coarse_dim});
        mlp("map_global", cfg.latent_dim, {cfg.map_global_dim});
        const std::size_t ctx = cfg.gcn_dim + cfg.map_coarse_dim + cfg.map_global_dim;
        const std::size_t imd = mlp("normal_mlp", ctx, cfg.normal_hidden);
        shapes["normal_out.W"] = {imd, 3};
        shapes["normal_out.b"] = {3};
        auto sw = cfg.sigma_hidden;
        sw.push_back(1);
        mlp("sigma_mlp", imd + ctx, sw);
    }
    {
        auto rw = cfg.refine_hidden;
        rw.push_back(3);
        mlp("refine_mlp", 6, rw);
    }
    return shapes;
}

// Fan-in-scaled uniform weights, zero biases, fully deterministic per seed.
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    ModelParams p;
    for (const auto& [name, shape] : param_shapes(cfg)) {
        auto t = ad::Tensor::zeros(shape, true);
        if (!name.ends_with(".b")) {
            const double bound = 1.0 / std::sqrt(double(shape[0]));
            for (double& v : t->data) v = uniform(rng, -bound, bound);
        }
        p.tensors[name] = t;
    }
    return p;
}

// ============================================================================
// Tensor <-> cloud glue
// ============================================================================

inline ad::TensorPtr tensor_from_cloud(const geo::PointCloud& cloud, bool requires_grad = false) {
    std::vector<double> data;
    data.reserve(cloud.size() * 3);
    for (const geo::Vec3& p : cloud.points) {
        data.push_back(p.x);
        data.push_back(p.y);
        data.push_back(p.z);
    }
    return ad::Tensor::from_data({cloud.size(), 3}, std::move(data), requires_grad);
}

inline geo::PointCloud cloud_from_tensor(const ad::TensorPtr& t) {
    if (t->rank() != 2 || t->shape[1] != 3) {
        throw ShapeError("cloud_from_tensor: m-by-3 tensor required");
    }
    geo::PointCloud cloud;
    cloud.points.reserve(t->shape[0]);
    for (std::size_t i = 0; i < t->shape[0]; ++i) {
        cloud.points.push_back({t->at(i, 0), t->at(i, 1), t->at(i, 2)});
    }
    return cloud;
}

// ============================================================================
// Layers
// ============================================================================

struct Mlp {
    std::vector<std::pair<ad::TensorPtr, ad::TensorPtr>> layers;  // (W, b)
};

inline Mlp mlp_of(const ModelParams& params, const std::string& prefix) {
    Mlp m;
    for (std::size_t i = 0;; ++i) {
        auto it = params.tensors.find(prefix + "." + std::to_string(i) + ".W");
        if (it == params.tensors.end()) break;
        m.layers.push_back({it->second, params.at(prefix + "." + std::to_string(i) + ".b")});
    }
    if (m.layers.empty()) throw ConfigError("mlp_of: no layers named " + prefix + ".*");
    return m;
}

inline ad::TensorPtr run_mlp(ad::Tape& tape, ad::TensorPtr x, const Mlp& mlp, double slope,
                             bool final_linear) {
    for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
        x = ad::add_rowvec(tape, ad::matmul(tape, x, mlp.layers[i].first), mlp.layers[i].second);
        if (!final_linear || i + 1 < mlp.layers.size()) x = ad::leaky_relu(tape, x, slope);
    }
    return x;
}

// One graph-attention layer: per-node linear embedding, pairwise attention
// scores over incoming edges, per-node softmax, attention-weighted
// aggregation of source embeddings, then the nonlinearity.
inline ad::TensorPtr gat_layer(ad::Tape& tape, const ad::TensorPtr& features,
                               const graph::NeighborGraph& g, const ad::TensorPtr& weight,
                               const ad::TensorPtr& attn, double slope) {
    if (features->rows() != g.n_nodes) {
        throw ShapeError("gat_layer: features and graph disagree on node count");
    }
    auto z = ad::matmul(tape, features, weight);
    auto z_dst = ad::gather_rows(tape, z, g.dst);
    auto z_src = ad::gather_rows(tape, z, g.src);
    auto pairwise = ad::concat_cols(tape, {z_dst, z_src});
    auto scores = ad::leaky_relu(tape, ad::matmul(tape, pairwise, attn), slope);
    auto alpha = ad::segment_softmax(tape, ad::reshape(tape, scores, {g.edge_count()}), g.dst,
                                     g.n_nodes);
    auto aggregated = ad::segment_weighted_sum(tape, alpha, z_src, g.dst, g.n_nodes);
    return ad::leaky_relu(tape, aggregated, slope);
}

// ============================================================================
// Encoder
// ============================================================================

// Graph-attention features fused with pointwise features and two pooled
// global vectors, pooled again into the final latent row [1 x latent_dim].
// model_b drops the graph branch entirely.
inline ad::TensorPtr encode(ad::Tape& tape, const ad::TensorPtr& coords,
                            const geo::PointCloud& cloud, const ModelParams& params,
                            const ModelConfig& cfg) {
    const std::size_t m = coords->rows();
    if (m < cfg.input_k + 1) {
        throw ShapeError("encode: need at least " + std::to_string(cfg.input_k + 1) +
                         " points, got " + std::to_string(m));
    }
    auto f_cart = run_mlp(tape, coords, mlp_of(params, "mlp_cart"), cfg.leaky_slope, false);
    auto g_cart = ad::column_max_pool(tape, f_cart);

    ad::TensorPtr f_bar, g_bar_row;
    if (cfg.variant != Variant::ModelB) {
        const auto g = graph::build_knn_graph(cloud, cfg.input_k);
        auto f = coords;
        for (std::size_t l = 0; l < cfg.num_gat_layers; ++l) {
            const std::string base = "gat" + std::to_string(l);
            f = gat_layer(tape, f, g, params.at(base + ".W"), params.at(base + ".a"),
                          cfg.leaky_slope);
        }
        auto g_graph = ad::column_max_pool(tape, f);
        f_bar = ad::concat_cols(tape, {f, f_cart});
        g_bar_row = ad::concat_cols(tape, {ad::as_row(tape, g_graph), ad::as_row(tape, g_cart)});
    } else {
        f_bar = f_cart;
        g_bar_row = ad::as_row(tape, g_cart);
    }
    auto f_final = ad::concat_cols(tape, {f_bar, ad::repeat_row(tape, g_bar_row, m)});
    auto h = run_mlp(tape, f_final, mlp_of(params, "mlp_final"), cfg.leaky_slope, false);
    return ad::as_row(tape, ad::column_max_pool(tape, h));
}

// ============================================================================
// Decoders
// ============================================================================

// Three fully connected layers, final layer linear, reshaped to n_coarse x 3.
inline ad::TensorPtr decode_coarse(ad::Tape& tape, const ad::TensorPtr& g_final,
                                   const ModelParams& params, const ModelConfig& cfg) {
    auto flat = run_mlp(tape, g_final, mlp_of(params, "coarse_fc"), cfg.leaky_slope, true);
    return ad::reshape(tape, flat, {cfg.n_coarse, 3});
}

struct NormalDecodeResult {
    ad::TensorPtr normals;  // [n x 3], unit rows
    ad::TensorPtr n_imd;
    ad::TensorPtr c_local;
    ad::TensorPtr c_map;
    ad::TensorPtr g_map;
};

// Normals from a graph convolution over the coarse cloud fused with mapped
// coarse coordinates and the mapped global vector; the internal embedding is
// returned for reuse by the sigma decoder.
inline NormalDecodeResult decode_normals(ad::Tape& tape, const ad::TensorPtr& coarse,
                                         const ad::TensorPtr& g_final, const ModelParams& params,
                                         const ModelConfig& cfg) {
    const std::size_t n = coarse->rows();
    if (n < cfg.coarse_k + 1) {
        throw ShapeError("decode_normals: coarse cloud smaller than coarse_k+1");
    }
    const geo::PointCloud coarse_cloud = cloud_from_tensor(coarse);
    const auto cg = graph::build_knn_graph(coarse_cloud, cfg.coarse_k);
    auto gcn_w = ad::Tensor::from_data({cg.edge_count()}, graph::gcn_coefficients(cg));

    auto zc = ad::add_rowvec(tape, ad::matmul(tape, coarse, params.at("gcn_local.W")),
                             params.at("gcn_local.b"));
    auto gathered = ad::gather_rows(tape, zc, cg.src);
    auto c_local = ad::leaky_relu(
        tape, ad::segment_weighted_sum(tape, gcn_w, gathered, cg.dst, n), cfg.leaky_slope);

    auto c_map = run_mlp(tape, coarse, mlp_of(params, "map_coarse"), cfg.leaky_slope, false);
    auto g_map_row = run_mlp(tape, g_final, mlp_of(params, "map_global"), cfg.leaky_slope, false);
    auto g_map = ad::repeat_row(tape, g_map_row, n);

    auto context = ad::concat_cols(tape, {c_local, c_map, g_map});
    auto n_imd = run_mlp(tape, context, mlp_of(params, "normal_mlp"), cfg.leaky_slope, false);
    auto raw = ad::add_rowvec(tape, ad::matmul(tape, n_imd, params.at("normal_out.W")),
                              params.at("normal_out.b"));
    return {ad::l2_normalize_rows(tape, raw), n_imd, c_local, c_map, g_map};
}

// Three pointwise layers producing log sigma per coarse point; sigma comes
// back through exponentiation, hence strictly positive.
inline ad::TensorPtr decode_sigma(ad::Tape& tape, const NormalDecodeResult& nd,
                                  const ModelParams& params, const ModelConfig& cfg) {
    auto context = ad::concat_cols(tape, {nd.n_imd, nd.c_local, nd.c_map, nd.g_map});
    auto log_sigma = run_mlp(tape, context, mlp_of(params, "sigma_mlp"), cfg.leaky_slope, true);
    return ad::exp_elementwise(tape, log_sigma);
}

// ============================================================================
// Densification
// ============================================================================

// Plants one sigma-scaled planar grid per coarse point, rotated so the grid
// normal lands on the decoded normal and translated onto the point. Output
// rows are coarse-point major. Differentiable w.r.t. coarse, normals, sigma.
//
// With unit n and grid vertex (gx, gy, 0), the rotated offset collapses to
//   r = (gx - f d nx, gy - f d ny, -d),  d = nx gx + ny gy,  f = 1/(1+nz),
// the Rodrigues rotation for axis z×n and angle arccos(nz). Near the poles
// the axis vanishes: identity for nz>0, a pi flip about x for nz<0.
inline ad::TensorPtr densify(ad::Tape& tape, const ad::TensorPtr& coarse,
                             const ad::TensorPtr& normals, const ad::TensorPtr& sigma,
                             const ModelConfig& cfg) {
    const std::size_t n = coarse->rows();
    if (normals->rank() != 2 || normals->shape[0] != n || normals->shape[1] != 3) {
        throw ShapeError("densify: normals must be n_coarse x 3");
    }
    if (sigma->size() != n) throw ShapeError("densify: sigma must have one entry per point");
    for (std::size_t i = 0; i < n; ++i) {
        const double* nr = normals->data.data() + i * 3;
        const double len = std::sqrt(nr[0] * nr[0] + nr[1] * nr[1] + nr[2] * nr[2]);
        if (std::abs(len - 1.0) > 1e-6) {
            throw NumericError("densify: non-unit normal at row " + std::to_string(i));
        }
        if (sigma->data[i] < 0.0) {
            throw NumericError("densify: negative sigma at row " + std::to_string(i));
        }
    }

    const std::vector<geo::Vec3> grid = geo::meshgrid_square(cfg.grid_n, cfg.grid_l);
    const std::size_t g2 = grid.size();
    auto out = ad::Tensor::zeros({n * g2, 3});

    for (std::size_t i = 0; i < n; ++i) {
        const double px = coarse->at(i, 0), py = coarse->at(i, 1), pz = coarse->at(i, 2);
        const double nx = normals->at(i, 0), ny = normals->at(i, 1), nz = normals->at(i, 2);
        const double s = sigma->data[i];
        const double axis_len = std::sqrt(nx * nx + ny * ny);
        const bool polar = axis_len < 1e-8;
        const double f = polar ? 0.0 : 1.0 / (1.0 + nz);
        double* rows = out->data.data() + i * g2 * 3;
        for (std::size_t v = 0; v < g2; ++v) {
            const double gx = grid[v].x, gy = grid[v].y;
            double rx, ry, rz;
            if (polar) {
                rx = gx;
                ry = nz > 0.0 ? gy : -gy;
                rz = 0.0;
            } else {
                const double d = nx * gx + ny * gy;
                rx = gx - f * d * nx;
                ry = gy - f * d * ny;
                rz = -d;
            }
            rows[v * 3 + 0] = px + s * rx;
            rows[v * 3 + 1] = py + s * ry;
            rows[v * 3 + 2] = pz + s * rz;
        }
    }

    if (ad::detail::track(tape, {&coarse, &normals, &sigma})) {
        out->set_requires_grad(true);
        tape.record(out, [coarse, normals, sigma, out, grid, n, g2] {
            for (std::size_t i = 0; i < n; ++i) {
                const double nx = normals->at(i, 0), ny = normals->at(i, 1),
                             nz = normals->at(i, 2);
                const double s = sigma->data[i];
                const double axis_len = std::sqrt(nx * nx + ny * ny);
                const bool polar = axis_len < 1e-8;
                const double f = polar ? 0.0 : 1.0 / (1.0 + nz);
                const double* g_rows = out->grad.data() + i * g2 * 3;
                for (std::size_t v = 0; v < g2; ++v) {
                    const double gx = grid[v].x, gy = grid[v].y;
                    const double g0 = g_rows[v * 3 + 0], g1 = g_rows[v * 3 + 1],
                                 g2v = g_rows[v * 3 + 2];
                    double rx, ry, rz;
                    if (polar) {
                        rx = gx;
                        ry = nz > 0.0 ? gy : -gy;
                        rz = 0.0;
                    } else {
                        const double d = nx * gx + ny * gy;
                        rx = gx - f * d * nx;
                        ry = gy - f * d * ny;
                        rz = -d;
                        if (normals->requires_grad) {
                            // J = dr/dn at unit n; the pole branch is locally constant
                            const double j00 = -f * (d + nx * gx), j01 = -f * nx * gy,
                                         j02 = f * f * d * nx;
                            const double j10 = -f * ny * gx, j11 = -f * (d + ny * gy),
                                         j12 = f * f * d * ny;
                            const double j20 = -gx, j21 = -gy;
                            normals->grad[i * 3 + 0] += s * (j00 * g0 + j10 * g1 + j20 * g2v);
                            normals->grad[i * 3 + 1] += s * (j01 * g0 + j11 * g1 + j21 * g2v);
                            normals->grad[i * 3 + 2] += s * (j02 * g0 + j12 * g1);
                        }
                    }
                    if (coarse->requires_grad) {
                        coarse->grad[i * 3 + 0] += g0;
                        coarse->grad[i * 3 + 1] += g1;
                        coarse->grad[i * 3 + 2] += g2v;
                    }
                    if (sigma->requires_grad) {
                        sigma->grad[i] += rx * g0 + ry * g1 + rz * g2v;
                    }
                }
            }
        });
    }
    return out;
}

// ============================================================================
// Refinement
// ============================================================================

// Each dense point concatenated with its parent coarse point (positional
// embedding), pushed through three pointwise layers into a residual offset.
inline ad::TensorPtr refine(ad::Tape& tape, const ad::TensorPtr& dense,
                            const ad::TensorPtr& coarse, const ModelParams& params,
                            const ModelConfig& cfg) {
    const std::size_t g2 = cfg.grid_n * cfg.grid_n;
    const std::size_t n_fine = dense->rows();
    if (n_fine != coarse->rows() * g2) {
        throw ShapeError("refine: dense count does not match coarse count times grid size");
    }
    std::vector<std::uint32_t> parent(n_fine);
    for (std::size_t e = 0; e < n_fine; ++e) parent[e] = static_cast<std::uint32_t>(e / g2);
    auto embedded = ad::concat_cols(tape, {dense, ad::gather_rows(tape, coarse, parent)});
    auto offset = run_mlp(tape, embedded, mlp_of(params, "refine_mlp"), cfg.leaky_slope, true);
    return ad::add(tape, dense, offset);
}

// ============================================================================
// Full forward pass
// ============================================================================

struct ForwardResult {
    ad::TensorPtr g_final;  // [1 x latent]
    ad::TensorPtr coarse;   // [n_coarse x 3]
    ad::TensorPtr normals;  // [n_coarse x 3]
    ad::TensorPtr sigma;    // [n_coarse x 1]
    ad::TensorPtr dense;    // [n_fine x 3]
    ad::TensorPtr fine;     // [n_fine x 3]
};

inline ForwardResult forward(ad::Tape& tape, const geo::PointCloud& input,
                             const ModelParams& params, const ModelConfig& cfg) {
    input.validate("forward input");
    auto coords = tensor_from_cloud(input);
    ForwardResult r;
    r.g_final = encode(tape, coords, input, params, cfg);
    r.coarse = decode_coarse(tape, r.g_final, params, cfg);
    if (cfg.variant == Variant::ModelA) {
        // fixed untilted, unscaled grid per coarse point
        std::vector<double> flat(cfg.n_coarse * 3, 0.0);
        for (std::size_t i = 0; i < cfg.n_coarse; ++i) flat[i * 3 + 2] = 1.0;
        r.normals = ad::Tensor::from_data({cfg.n_coarse, 3}, std::move(flat));
        r.sigma = ad::Tensor::from_data({cfg.n_coarse, 1},
                                        std::vector<double>(cfg.n_coarse, 1.0));
    } else {
        auto nd = decode_normals(tape, r.coarse, r.g_final, params, cfg);
        r.normals = nd.normals;
        r.sigma = decode_sigma(tape, nd, params, cfg);
    }
    r.dense = densify(tape, r.coarse, r.normals, r.sigma, cfg);
    r.fine = refine(tape, r.dense, r.coarse, params, cfg);
    return r;
}

struct CompletionOutput {
    geo::PointCloud coarse;  // normals attached
    std::vector<double> sigma;
    geo::PointCloud dense;
    geo::PointCloud fine;
};

inline CompletionOutput to_output(const ForwardResult& r) {
    CompletionOutput out;
    out.coarse = cloud_from_tensor(r.coarse);
    out.coarse.normals.reserve(r.normals->shape[0]);
    for (std::size_t i = 0; i < r.normals->shape[0]; ++i) {
        out.coarse.normals.push_back(
            {r.normals->at(i, 0), r.normals->at(i, 1), r.normals->at(i, 2)});
    }
    out.sigma = r.sigma->data;
    out.dense = cloud_from_tensor(r.dense);
    out.fine = cloud_from_tensor(r.fine);
    return out;
}

// ============================================================================
// Checkpoint I/O
// ============================================================================
// Layout: magic "GASC", u16 version, u32 tensor count, then per tensor:
// u16 name length + UTF-8 name, u8 rank, u64 dims, payload as little-endian
// 64-bit floats. All integers little-endian.

namespace detail {

inline constexpr char kCheckpointMagic[4] = {'G', 'A', 'S', 'C'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

inline void put_bytes(std::string& out, std::uint64_t v, int n_bytes) {
    for (int i = 0; i < n_bytes; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_bytes(const std::string& in, std::size_t& pos, int n_bytes) {
    if (pos + n_bytes > in.size()) throw FormatError("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < n_bytes; ++i) {
        v |= std::uint64_t(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    }
    pos += n_bytes;
    return v;
}

}  // namespace detail

inline void save_params(const ModelParams& params, const std::string& path) {
    std::string buf;
    buf.append(detail::kCheckpointMagic, 4);
    detail::put_bytes(buf, detail::kCheckpointVersion, 2);
    detail::put_bytes(buf, params.tensors.size(), 4);
    for (const auto& [name, t] : params.tensors) {
        detail::put_bytes(buf, name.size(), 2);
        buf.append(name);
        detail::put_bytes(buf, t->rank(), 1);
        for (std::size_t d : t->shape) detail::put_bytes(buf, d, 8);
        for (double v : t->data) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, 8);
            detail::put_bytes(buf, bits, 8);
        }
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("save_params: cannot open " + path);
    f.write(buf.data(), std::streamsize(buf.size()));
    if (!f) throw IoError("save_params: write failed for " + path);
}

inline ModelParams load_params(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("load_params: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    if (buf.size() < 4 || std::memcmp(buf.data(), detail::kCheckpointMagic, 4) != 0) {
        throw FormatError("checkpoint: bad magic bytes");
    }
    pos = 4;
    const auto version = detail::get_bytes(buf, pos, 2);
    if (version != detail::kCheckpointVersion) {
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    }
    const auto count = detail::get_bytes(buf, pos, 4);
    ModelParams params;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name_len = detail::get_bytes(buf, pos, 2);
        if (pos + name_len > buf.size()) throw FormatError("checkpoint: truncated file");
        std::string name = buf.substr(pos, name_len);
        pos += name_len;
        const auto rank = detail::get_bytes(buf, pos, 1);
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = detail::get_bytes(buf, pos, 8);
        std::vector<double> data(ad::numel(shape));
        for (double& v : data) {
            const std::uint64_t bits = detail::get_bytes(buf, pos, 8);
            std::memcpy(&v, &bits, 8);
        }
        params.tensors[name] = ad::Tensor::from_data(std::move(shape), std::move(data), true);
    }
    if (pos != buf.size()) throw FormatError("checkpoint: trailing bytes after tensor data");
    return params;
}

// Load and verify against the configuration-derived skeleton, naming the
// first offending tensor.
inline ModelParams load_params(const std::string& path, const ModelConfig& cfg) {
    ModelParams params = load_params(path);
    const auto expected = param_shapes(cfg);
    for (const auto& [name, shape] : expected) {
        auto it = params.tensors.find(name);
        if (it == params.tensors.end()) {
            throw ConfigError("checkpoint: tensor '" + name + "' missing for this config");
        }
        if (it->second->shape != shape) {
            throw ConfigError("checkpoint: tensor '" + name + "' has mismatched shape");
        }
    }
    for (const auto& [name, t] : params.tensors) {
        if (expected.find(name) == expected.end()) {
            throw ConfigError("checkpoint: unexpected tensor '" + name + "' for this config");
        }
    }
    return params;
}

}  // namespace gascn::model
