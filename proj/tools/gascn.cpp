// Command-line front end wiring the pipeline end to end: dataset generation,
// training, completion, evaluation, and the two-view registration demo.

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "gascn/pipeline.hpp"

namespace fs = std::filesystem;
using namespace gascn;
using pipeline::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitDegenerate = 5;

int run_guarded(const std::function<int()>& fn) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ShapeError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return kExitIo;
    } catch (const NumericError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const DegenerateError& e) {
        std::cerr << "degeneracy: " << e.what() << "\n";
        return kExitDegenerate;
    }
}

std::size_t thread_cap_from_env() {
    if (const char* env = std::getenv("GASCN_THREADS")) {
        const long v = std::atol(env);
        if (v >= 1) return std::size_t(v);
    }
    return 0;  // no cap
}

std::size_t effective_threads(std::size_t requested) {
    const std::size_t cap = thread_cap_from_env();
    if (requested == 0) requested = 1;
    if (cap > 0) requested = std::min(requested, cap);
    return requested;
}

geo::PointCloud read_cloud_any(const std::string& path) {
    const std::string ext = fs::path(path).extension().string();
    if (ext == ".ply") return data::read_ply(path);
    if (ext == ".xyz") return data::read_xyz(path);
    throw ConfigError("unsupported input extension '" + ext + "' for " + path);
}

struct CommonFlags {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool deterministic = false;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "JSON config file; flags override it");
    auto* seed = cmd->add_option("--seed", flags.seed, "global random seed");
    seed->each([&flags](const std::string&) { flags.seed_set = true; });
    cmd->add_flag("--deterministic", flags.deterministic,
                  "sequential accumulation and zeroed wall times");
}

pipeline::RunSettings load_settings(const CommonFlags& flags) {
    pipeline::RunSettings settings;
    if (!flags.config_path.empty()) {
        settings = pipeline::settings_from_json(pipeline::load_json_file(flags.config_path));
    }
    if (flags.seed_set) settings.train.seed = flags.seed;
    if (flags.deterministic) settings.deterministic = true;
    return settings;
}

json transform_to_json(const geo::RigidTransform& t) {
    json j;
    j["rotation"] = {
        {t.rotation[0][0], t.rotation[0][1], t.rotation[0][2]},
        {t.rotation[1][0], t.rotation[1][1], t.rotation[1][2]},
        {t.rotation[2][0], t.rotation[2][1], t.rotation[2][2]},
    };
    j["translation"] = {t.translation.x, t.translation.y, t.translation.z};
    return j;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"GASCN shape completion pipeline"};
    app.require_subcommand(1);

    // ---------------------------------------------------------------- gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic shape dataset");
    CommonFlags gen_common;
    add_common(gen, gen_common);
    data::GenSpec gen_spec;
    std::string gen_out = "data";
    gen->add_option("--shapes", gen_spec.n_shapes, "number of shapes");
    gen->add_option("--views", gen_spec.views_per_shape, "partial views per shape");
    gen->add_option("--gt-points", gen_spec.gt_points, "ground-truth points per shape");
    gen->add_option("--resolution", gen_spec.resolution, "z-buffer resolution");
    gen->add_option("--min-partial", gen_spec.min_partial_points,
                    "minimum points per partial view");
    gen->add_option("--categories", gen_spec.categories, "primitive categories");
    gen->add_option("--out", gen_out, "output directory")->required();

    // ------------------------------------------------------------------- train
    auto* tr = app.add_subcommand("train", "train a completion model");
    CommonFlags tr_common;
    add_common(tr, tr_common);
    std::string tr_manifest, tr_out = "run";
    std::size_t tr_epochs = 0, tr_batch = 0, tr_gat_layers = 0, tr_eval_every = 0;
    std::size_t tr_max_input = 0, tr_loss_gt = 0, tr_threads = 0;
    double tr_lr = 0.0, tr_lr_decay = 0.0;
    std::string tr_variant;
    tr->add_option("--manifest", tr_manifest, "dataset manifest")->required();
    tr->add_option("--out", tr_out, "output directory");
    tr->add_option("--epochs", tr_epochs, "training epochs");
    tr->add_option("--batch-size", tr_batch, "instances per optimizer step");
    tr->add_option("--lr", tr_lr, "initial learning rate");
    tr->add_option("--lr-decay", tr_lr_decay, "per-epoch learning-rate factor");
    tr->add_option("--variant", tr_variant, "full | model_a | model_b");
    tr->add_option("--gat-layers", tr_gat_layers, "stacked graph-attention layers");
    tr->add_option("--eval-every", tr_eval_every, "validation interval in epochs");
    tr->add_option("--max-input-points", tr_max_input, "input clip threshold");
    tr->add_option("--loss-gt-points", tr_loss_gt,
                   "ground-truth subsample for the training loss (0 = full)");
    tr->add_option("--threads", tr_threads, "batch workers (capped by GASCN_THREADS)");

    // ---------------------------------------------------------------- complete
    auto* co = app.add_subcommand("complete", "complete partial clouds");
    CommonFlags co_common;
    add_common(co, co_common);
    std::string co_ckpt, co_out = ".";
    std::vector<std::string> co_inputs;
    std::size_t co_max_input = 0;
    co->add_option("--checkpoint", co_ckpt, "model checkpoint")->required();
    co->add_option("--out", co_out, "output directory");
    co->add_option("--max-input-points", co_max_input, "input clip threshold");
    co->add_option("inputs", co_inputs, "input .ply/.xyz files")->required();

    // -------------------------------------------------------------------- eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    CommonFlags ev_common;
    add_common(ev, ev_common);
    std::string ev_ckpt, ev_manifest, ev_split = "test", ev_out = "eval_out";
    bool ev_dump_fields = false;
    ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
    ev->add_option("--manifest", ev_manifest, "dataset manifest")->required();
    ev->add_option("--split", ev_split, "train | val | test");
    ev->add_option("--out", ev_out, "report directory");
    ev->add_flag("--dump-distance-fields", ev_dump_fields,
                 "write fine clouds with per-point NN distance as PLY quality");

    // ---------------------------------------------------------------- register
    auto* re = app.add_subcommand("register", "ICP on raw partials vs their completions");
    CommonFlags re_common;
    add_common(re, re_common);
    std::string re_ckpt, re_view1, re_view2, re_out;
    std::size_t re_max_iters = 60;
    double re_tol = 1e-12;
    re->add_option("--checkpoint", re_ckpt, "model checkpoint")->required();
    re->add_option("--view1", re_view1, "first partial view")->required();
    re->add_option("--view2", re_view2, "second partial view")->required();
    re->add_option("--max-iters", re_max_iters, "ICP iteration cap");
    re->add_option("--tol", re_tol, "ICP MSE improvement tolerance");
    re->add_option("--out", re_out, "write the comparison as JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    if (gen->parsed()) {
        return run_guarded([&] {
            auto settings = load_settings(gen_common);
            const std::uint64_t seed = gen_common.seed_set ? gen_common.seed
                                                           : settings.train.seed;
            auto manifest = data::build_dataset(gen_spec, gen_out, seed);
            std::size_t n_train = 0, n_val = 0, n_test = 0;
            for (const auto& inst : manifest.instances) {
                if (inst.split == "train") ++n_train;
                if (inst.split == "val") ++n_val;
                if (inst.split == "test") ++n_test;
            }
            std::cout << "manifest: " << (fs::path(gen_out) / "manifest.json").string() << "\n"
                      << "shapes: " << manifest.instances.size() << " (train " << n_train
                      << ", val " << n_val << ", test " << n_test << ")\n";
            return 0;
        });
    }

    if (tr->parsed()) {
        return run_guarded([&] {
            auto settings = load_settings(tr_common);
            if (tr->count("--epochs")) settings.train.epochs = tr_epochs;
            if (tr->count("--batch-size")) settings.train.batch_size = tr_batch;
            if (tr->count("--lr")) settings.train.lr_initial = tr_lr;
            if (tr->count("--lr-decay")) settings.train.lr_decay = tr_lr_decay;
            if (tr->count("--variant")) {
                settings.model.variant = model::variant_from_name(tr_variant);
            }
            if (tr->count("--gat-layers")) settings.model.num_gat_layers = tr_gat_layers;
            if (tr->count("--eval-every")) settings.eval_every = tr_eval_every;
            if (tr->count("--max-input-points")) settings.max_input_points = tr_max_input;
            if (tr->count("--loss-gt-points")) settings.loss_gt_points = tr_loss_gt;
            if (tr->count("--threads")) settings.threads = tr_threads;
            settings.threads = effective_threads(settings.threads);

            auto art = pipeline::run_training(settings, tr_manifest, tr_out);
            std::cout << "checkpoint: " << art.checkpoint_path << "\n"
                      << "metrics: " << art.metrics_path << "\n"
                      << "val fine CD (unsquared): initial " << art.val_initial.overall_unsquared
                      << ", final " << art.val_final.overall_unsquared << "\n";
            return 0;
        });
    }

    if (co->parsed()) {
        return run_guarded([&] {
            auto settings = load_settings(co_common);
            if (co->count("--max-input-points")) settings.max_input_points = co_max_input;
            auto params = model::load_params(co_ckpt, settings.model);
            std::error_code ec;
            fs::create_directories(co_out, ec);
            if (ec) throw IoError("complete: cannot create " + co_out);

            std::size_t failures = 0;
            for (const auto& input : co_inputs) {
                try {
                    const geo::PointCloud cloud = read_cloud_any(input);
                    const auto t0 = std::chrono::steady_clock::now();
                    auto out = train::complete_instance(params, settings.model, cloud,
                                                        settings.max_input_points,
                                                        settings.train.seed);
                    const double wall =
                        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                            .count();
                    const std::string stem = fs::path(input).stem().string();
                    geo::PointCloud coarse_plain = out.coarse;
                    coarse_plain.normals.clear();
                    data::write_ply(coarse_plain,
                                    (fs::path(co_out) / (stem + "_coarse.ply")).string());
                    data::write_ply(out.coarse,
                                    (fs::path(co_out) / (stem + "_coarse_normals.ply")).string());
                    data::write_ply(out.fine, (fs::path(co_out) / (stem + "_fine.ply")).string());
                    std::cout << input << ": coarse " << out.coarse.size() << ", fine "
                              << out.fine.size() << ", " << wall << " s\n";
                } catch (const std::exception& e) {
                    ++failures;
                    std::cerr << input << ": " << e.what() << "\n";
                }
            }
            if (failures == co_inputs.size()) {
                throw NumericError("complete: every input failed");
            }
            return 0;
        });
    }

    if (ev->parsed()) {
        return run_guarded([&] {
            auto settings = load_settings(ev_common);
            auto params = model::load_params(ev_ckpt, settings.model);
            const std::string manifest_dir = fs::path(ev_manifest).parent_path().string();
            auto manifest = data::load_manifest(ev_manifest);
            auto instances = data::load_split(manifest, manifest_dir, ev_split);
            std::error_code ec;
            fs::create_directories(ev_out, ec);
            if (ec) throw IoError("eval: cannot create " + ev_out);

            auto report = train::evaluate(params, settings.model, instances,
                                          settings.max_input_points, settings.train.seed);

            json j;
            j["split"] = ev_split;
            j["count"] = report.count;
            j["overall"] = {{"cd_unsquared_x1000", report.overall_unsquared * 1000.0},
                            {"cd_squared_x1000", report.overall_squared * 1000.0}};
            std::cout << "split " << ev_split << " (" << report.count << " instances), CD x1e3"
                      << "\n";
            for (const auto& [name, cat] : report.per_category) {
                j["categories"][name] = {{"cd_unsquared_x1000", cat.mean_unsquared * 1000.0},
                                         {"cd_squared_x1000", cat.mean_squared * 1000.0},
                                         {"count", cat.count}};
                std::cout << "  " << name << ": unsquared " << cat.mean_unsquared * 1000.0
                          << ", squared " << cat.mean_squared * 1000.0 << " (" << cat.count
                          << ")\n";
            }
            std::cout << "  overall: unsquared " << report.overall_unsquared * 1000.0
                      << ", squared " << report.overall_squared * 1000.0 << "\n";

            if (ev_dump_fields) {
                for (const auto& inst : instances) {
                    auto out = train::complete_instance(params, settings.model, inst.partial,
                                                        settings.max_input_points,
                                                        settings.train.seed);
                    geo::PointCloud fine = out.fine;
                    fine.scalar_field = geo::nn_distance_field(fine, inst.gt);
                    const std::string rel =
                        "fine_" + inst.id + "_" + std::to_string(inst.view) + ".ply";
                    data::write_ply(fine, (fs::path(ev_out) / rel).string());
                }
                j["distance_fields"] = true;
            }
            std::ofstream rf(fs::path(ev_out) / "report.json", std::ios::trunc);
            if (!rf) throw IoError("eval: cannot write report.json");
            rf << j.dump(2) << "\n";
            return 0;
        });
    }

    if (re->parsed()) {
        return run_guarded([&] {
            auto settings = load_settings(re_common);
            auto params = model::load_params(re_ckpt, settings.model);
            const geo::PointCloud a = read_cloud_any(re_view1);
            const geo::PointCloud b = read_cloud_any(re_view2);
            auto cmp = pipeline::register_pair(params, settings.model, a, b,
                                               settings.max_input_points, settings.train.seed,
                                               re_max_iters, re_tol);
            json j;
            j["raw"] = {{"mse", cmp.raw.final_mse},
                        {"iterations", cmp.raw.iterations},
                        {"transform", transform_to_json(cmp.raw.transform)}};
            j["completed"] = {{"mse", cmp.completed.final_mse},
                              {"iterations", cmp.completed.iterations},
                              {"transform", transform_to_json(cmp.completed.transform)}};
            std::cout << "raw partial ICP MSE: " << cmp.raw.final_mse << " ("
                      << cmp.raw.iterations << " iters)\n"
                      << "completed ICP MSE:   " << cmp.completed.final_mse << " ("
                      << cmp.completed.iterations << " iters)\n"
                      << j["completed"]["transform"].dump() << "\n";
            if (!re_out.empty()) {
                std::ofstream rf(re_out, std::ios::trunc);
                if (!rf) throw IoError("register: cannot write " + re_out);
                rf << j.dump(2) << "\n";
            }
            return 0;
        });
    }

    return kExitConfig;
}
