#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gascn/data.hpp"
#include "gascn/icp.hpp"
#include "gascn/training.hpp"

namespace gascn::pipeline {

using nlohmann::json;

// Everything a run needs beyond the dataset: network shape, optimization
// schedule, and preprocessing/execution knobs.
struct RunSettings {
    model::ModelConfig model;
    train::TrainConfig train;
    std::size_t max_input_points = 3000;
    std::size_t loss_gt_points = 0;
    std::size_t eval_every = 20;
    bool deterministic = false;
    std::size_t threads = 1;
};

// ============================================================================
// Config JSON
// ============================================================================

namespace detail {

inline void reject_unknown_keys(const json& j, const std::vector<std::string>& allowed,
                                const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const auto& k : allowed) ok = ok || it.key() == k;
        if (!ok) throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
    }
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(std::string("config: bad value for '") + key + "'");
        }
    }
}

}  // namespace detail

inline json model_config_to_json(const model::ModelConfig& c) {
    json j;
    j["input_k"] = c.input_k;
    j["n_coarse"] = c.n_coarse;
    j["coarse_k"] = c.coarse_k;
    j["grid_n"] = c.grid_n;
    j["grid_l"] = c.grid_l;
    j["gat_dim"] = c.gat_dim;
    j["cart_dim"] = c.cart_dim;
    j["latent_dim"] = c.latent_dim;
    j["num_gat_layers"] = c.num_gat_layers;
    j["variant"] = model::variant_name(c.variant);
    j["leaky_slope"] = c.leaky_slope;
    j["mlp_cart_hidden"] = c.mlp_cart_hidden;
    j["mlp_final_hidden"] = c.mlp_final_hidden;
    j["coarse_fc_hidden"] = c.coarse_fc_hidden;
    j["gcn_dim"] = c.gcn_dim;
    j["map_coarse_dim"] = c.map_coarse_dim;
    j["map_global_dim"] = c.map_global_dim;
    j["normal_hidden"] = c.normal_hidden;
    j["sigma_hidden"] = c.sigma_hidden;
    j["refine_hidden"] = c.refine_hidden;
    return j;
}

inline model::ModelConfig model_config_from_json(const json& j,
                                                 model::ModelConfig base = {}) {
    detail::reject_unknown_keys(
        j,
        {"input_k", "n_coarse", "coarse_k", "grid_n", "grid_l", "gat_dim", "cart_dim",
         "latent_dim", "num_gat_layers", "variant", "leaky_slope", "mlp_cart_hidden",
         "mlp_final_hidden", "coarse_fc_hidden", "gcn_dim", "map_coarse_dim",
         "map_global_dim", "normal_hidden", "sigma_hidden", "refine_hidden"},
        "model");
    detail::maybe(j, "input_k", base.input_k);
    detail::maybe(j, "n_coarse", base.n_coarse);
    detail::maybe(j, "coarse_k", base.coarse_k);
    detail::maybe(j, "grid_n", base.grid_n);
    detail::maybe(j, "grid_l", base.grid_l);
    detail::maybe(j, "gat_dim", base.gat_dim);
    detail::maybe(j, "cart_dim", base.cart_dim);
    detail::maybe(j, "latent_dim", base.latent_dim);
    detail::maybe(j, "num_gat_layers", base.num_gat_layers);
    if (j.contains("variant")) {
        base.variant = model::variant_from_name(j.at("variant").get<std::string>());
    }
    detail::maybe(j, "leaky_slope", base.leaky_slope);
    detail::maybe(j, "mlp_cart_hidden", base.mlp_cart_hidden);
    detail::maybe(j, "mlp_final_hidden", base.mlp_final_hidden);
    detail::maybe(j, "coarse_fc_hidden", base.coarse_fc_hidden);
    detail::maybe(j, "gcn_dim", base.gcn_dim);
    detail::maybe(j, "map_coarse_dim", base.map_coarse_dim);
    detail::maybe(j, "map_global_dim", base.map_global_dim);
    detail::maybe(j, "normal_hidden", base.normal_hidden);
    detail::maybe(j, "sigma_hidden", base.sigma_hidden);
    detail::maybe(j, "refine_hidden", base.refine_hidden);
    base.validate();
    return base;
}

inline json train_config_to_json(const train::TrainConfig& c) {
    json j;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["lr_initial"] = c.lr_initial;
    j["lr_decay"] = c.lr_decay;
    j["alpha_initial"] = c.alpha_initial;
    j["alpha_final"] = c.alpha_final;
    j["alpha_ramp_fraction"] = c.alpha_ramp_fraction;
    j["seed"] = c.seed;
    j["cd_variant"] = c.cd_variant == geo::CdVariant::Squared ? "squared" : "unsquared";
    return j;
}

inline train::TrainConfig train_config_from_json(const json& j, train::TrainConfig base = {}) {
    detail::reject_unknown_keys(j,
                                {"epochs", "batch_size", "lr_initial", "lr_decay",
                                 "alpha_initial", "alpha_final", "alpha_ramp_fraction", "seed",
                                 "cd_variant"},
                                "train");
    detail::maybe(j, "epochs", base.epochs);
    detail::maybe(j, "batch_size", base.batch_size);
    detail::maybe(j, "lr_initial", base.lr_initial);
    detail::maybe(j, "lr_decay", base.lr_decay);
    detail::maybe(j, "alpha_initial", base.alpha_initial);
    detail::maybe(j, "alpha_final", base.alpha_final);
    detail::maybe(j, "alpha_ramp_fraction", base.alpha_ramp_fraction);
    detail::maybe(j, "seed", base.seed);
    if (j.contains("cd_variant")) {
        const std::string v = j.at("cd_variant").get<std::string>();
        if (v == "squared") {
            base.cd_variant = geo::CdVariant::Squared;
        } else if (v == "unsquared") {
            base.cd_variant = geo::CdVariant::Unsquared;
        } else {
            throw ConfigError("config: cd_variant must be 'unsquared' or 'squared'");
        }
    }
    base.validate();
    return base;
}

inline json settings_to_json(const RunSettings& s) {
    json j;
    j["model"] = model_config_to_json(s.model);
    j["train"] = train_config_to_json(s.train);
    j["run"] = {{"max_input_points", s.max_input_points},
                {"loss_gt_points", s.loss_gt_points},
                {"eval_every", s.eval_every},
                {"deterministic", s.deterministic},
                {"threads", s.threads}};
    return j;
}

inline RunSettings settings_from_json(const json& j, RunSettings base = {}) {
    detail::reject_unknown_keys(j, {"model", "train", "run"}, "config root");
    if (j.contains("model")) base.model = model_config_from_json(j.at("model"), base.model);
    if (j.contains("train")) base.train = train_config_from_json(j.at("train"), base.train);
    if (j.contains("run")) {
        const json& r = j.at("run");
        detail::reject_unknown_keys(
            r, {"max_input_points", "loss_gt_points", "eval_every", "deterministic", "threads"},
            "run");
        detail::maybe(r, "max_input_points", base.max_input_points);
        detail::maybe(r, "loss_gt_points", base.loss_gt_points);
        detail::maybe(r, "eval_every", base.eval_every);
        detail::maybe(r, "deterministic", base.deterministic);
        detail::maybe(r, "threads", base.threads);
    }
    return base;
}

inline json load_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file " + path);
    try {
        json j;
        f >> j;
        return j;
    } catch (const json::exception& e) {
        throw ConfigError("config: " + path + " is not valid JSON: " + e.what());
    }
}

// ============================================================================
// Training run
// ============================================================================

struct TrainingArtifacts {
    std::string checkpoint_path;
    std::string sidecar_path;
    std::string metrics_path;
    std::string eval_path;
    train::EvalReport val_initial;
    train::EvalReport val_final;
    bool evaluated = false;
};

// Full training pipeline: load splits, train per schedule, evaluate the val
// split every eval interval (plus before the first and after the last
// epoch), write checkpoints, a metrics line per epoch, and a config sidecar.
inline TrainingArtifacts run_training(const RunSettings& settings,
                                      const std::string& manifest_path,
                                      const std::string& out_dir) {
    namespace fs = std::filesystem;
    settings.model.validate();
    settings.train.validate();
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("run_training: cannot create " + out_dir);

    const std::string manifest_dir = fs::path(manifest_path).parent_path().string();
    const auto manifest = data::load_manifest(manifest_path);
    const auto train_set = data::load_split(manifest, manifest_dir, "train");
    const auto val_set = data::load_split(manifest, manifest_dir, "val");

    auto params = model::init_params(settings.model, settings.train.seed);
    auto state = train::OptimizerState::for_params(params);

    TrainingArtifacts art;
    art.checkpoint_path = (fs::path(out_dir) / "ckpt_final.gasc").string();
    art.sidecar_path = (fs::path(out_dir) / "config.json").string();
    art.metrics_path = (fs::path(out_dir) / "metrics.ndjson").string();
    art.eval_path = (fs::path(out_dir) / "eval.ndjson").string();

    {
        std::ofstream side(art.sidecar_path, std::ios::trunc);
        if (!side) throw IoError("run_training: cannot write " + art.sidecar_path);
        side << settings_to_json(settings).dump(2) << "\n";
    }

    std::ofstream metrics(art.metrics_path, std::ios::trunc);
    std::ofstream evals(art.eval_path, std::ios::trunc);
    if (!metrics || !evals) throw IoError("run_training: cannot open log files");

    train::TrainOptions opts;
    opts.max_input_points = settings.max_input_points;
    opts.loss_gt_points = settings.loss_gt_points;
    opts.threads = settings.threads;
    opts.deterministic = settings.deterministic;

    auto eval_line = [&](std::size_t epoch, const train::EvalReport& r) {
        char buf[256];
        std::snprintf(buf, sizeof(buf),
                      "{\"epoch\":%zu,\"split\":\"val\",\"cd_unsquared\":%.17g,"
                      "\"cd_squared\":%.17g,\"count\":%zu}",
                      epoch, r.overall_unsquared, r.overall_squared, r.count);
        evals << buf << "\n";
        evals.flush();
    };

    art.val_initial = train::evaluate(params, settings.model, val_set,
                                      settings.max_input_points, settings.train.seed);
    art.evaluated = true;
    eval_line(0, art.val_initial);
    art.val_final = art.val_initial;

    for (std::size_t epoch = 0; epoch < settings.train.epochs; ++epoch) {
        train::EpochMetrics m;
        try {
            m = train::train_epoch(params, settings.model, train_set, settings.train, opts,
                                   epoch, state);
        } catch (const NumericError& e) {
            throw NumericError("epoch " + std::to_string(epoch) + ": " + e.what());
        }
        metrics << train::metrics_json_line(m) << "\n";
        metrics.flush();
        const bool at_interval =
            settings.eval_every > 0 && (epoch + 1) % settings.eval_every == 0;
        const bool last = epoch + 1 == settings.train.epochs;
        if (at_interval || last) {
            art.val_final = train::evaluate(params, settings.model, val_set,
                                            settings.max_input_points, settings.train.seed);
            eval_line(epoch + 1, art.val_final);
            model::save_params(params, (fs::path(out_dir) /
                                        ("ckpt_epoch_" + std::to_string(epoch + 1) + ".gasc"))
                                           .string());
        }
    }

    model::save_params(params, art.checkpoint_path);
    return art;
}

// ============================================================================
// Registration demo
// ============================================================================

struct RegistrationComparison {
    geo::IcpResult raw;
    geo::IcpResult completed;
};

// ICP over two raw partial observations of one object versus ICP over their
// completions (each completion mapped back into its input frame).
inline RegistrationComparison register_pair(const model::ModelParams& params,
                                            const model::ModelConfig& mcfg,
                                            const geo::PointCloud& view_a,
                                            const geo::PointCloud& view_b,
                                            std::size_t max_input_points, std::uint64_t seed,
                                            std::size_t max_iters = 60, double tol = 1e-12) {
    RegistrationComparison out;
    out.raw = geo::icp_register(view_a, view_b, max_iters, tol);
    const auto fine_a =
        train::complete_instance(params, mcfg, view_a, max_input_points, seed).fine;
    const auto fine_b =
        train::complete_instance(params, mcfg, view_b, max_input_points, seed + 1).fine;
    out.completed = geo::icp_register(fine_a, fine_b, max_iters, tol);
    return out;
}

}  // namespace gascn::pipeline
