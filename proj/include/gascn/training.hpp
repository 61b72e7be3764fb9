#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "gascn/chamfer.hpp"
#include "gascn/data.hpp"
#include "gascn/model.hpp"
#include "gascn/rng.hpp"

namespace gascn::train {

struct TrainConfig {
    std::size_t epochs = 200;
    std::size_t batch_size = 32;
    double lr_initial = 1e-4;
    double lr_decay = 0.95;
    double alpha_initial = 0.01;
    double alpha_final = 1.0;
    double alpha_ramp_fraction = 0.5;
    std::uint64_t seed = 0;
    geo::CdVariant cd_variant = geo::CdVariant::Unsquared;

    void validate() const {
        if (!(alpha_initial > 0.0) || alpha_initial > alpha_final) {
            throw ConfigError("TrainConfig: need 0 < alpha_initial <= alpha_final");
        }
        if (!(alpha_ramp_fraction > 0.0) || alpha_ramp_fraction > 1.0) {
            throw ConfigError("TrainConfig: alpha_ramp_fraction must lie in (0,1]");
        }
        if (!(lr_initial > 0.0)) throw ConfigError("TrainConfig: lr_initial must be positive");
        if (!(lr_decay > 0.0) || lr_decay > 1.0) {
            throw ConfigError("TrainConfig: lr_decay must lie in (0,1]");
        }
        if (batch_size == 0) throw ConfigError("TrainConfig: batch_size must be positive");
    }
};

// Linear ramp from alpha_initial at epoch 0 up to alpha_final at
// alpha_ramp_fraction * epochs, constant afterwards.
inline double alpha_schedule(std::size_t epoch, const TrainConfig& cfg) {
    cfg.validate();
    if (epoch == 0) return cfg.alpha_initial;
    const double ramp_end = cfg.alpha_ramp_fraction * double(cfg.epochs);
    if (double(epoch) >= ramp_end) return cfg.alpha_final;
    return cfg.alpha_initial + (cfg.alpha_final - cfg.alpha_initial) * double(epoch) / ramp_end;
}

inline double learning_rate(std::size_t epoch, const TrainConfig& cfg) {
    return cfg.lr_initial * std::pow(cfg.lr_decay, double(epoch));
}

// ============================================================================
// Loss
// ============================================================================

// Chamfer distance between a tracked point tensor and a fixed reference
// cloud, as a tape op. The local Jacobian comes from the geometry kernel.
inline ad::TensorPtr chamfer_op(ad::Tape& tape, const ad::TensorPtr& pred,
                                const geo::PointCloud& reference, geo::CdVariant variant) {
    const geo::PointCloud pred_cloud = model::cloud_from_tensor(pred);
    if (!(tape.recording() && pred->requires_grad)) {
        return ad::Tensor::scalar(geo::chamfer_distance(pred_cloud, reference, variant));
    }
    auto res = geo::chamfer_with_grads(pred_cloud, reference, variant);
    auto out = ad::Tensor::scalar(res.value);
    out->set_requires_grad(true);
    const std::size_t n = pred_cloud.size();
    tape.record(out, [pred, out, grads = std::move(res.grad_a), n] {
        const double g = out->grad[0];
        for (std::size_t i = 0; i < n; ++i) {
            pred->grad[i * 3 + 0] += g * grads[i].x;
            pred->grad[i * 3 + 1] += g * grads[i].y;
            pred->grad[i * 3 + 2] += g * grads[i].z;
        }
    });
    return out;
}

struct LossResult {
    ad::TensorPtr loss;
    double coarse_cd = 0.0;
    double fine_cd = 0.0;
};

// Loss = CD(coarse, gt) + alpha * CD(fine, gt).
inline LossResult combined_loss(ad::Tape& tape, const ad::TensorPtr& coarse,
                                const ad::TensorPtr& fine, const geo::PointCloud& gt,
                                double alpha, geo::CdVariant variant) {
    if (alpha < 0.0) throw ConfigError("combined_loss: alpha must be non-negative");
    gt.validate("combined_loss ground truth");
    auto cd_coarse = chamfer_op(tape, coarse, gt, variant);
    auto cd_fine = chamfer_op(tape, fine, gt, variant);
    auto loss = ad::add(tape, cd_coarse, ad::scale(tape, cd_fine, alpha));
    return {loss, cd_coarse->data[0], cd_fine->data[0]};
}

// ============================================================================
// Adam
// ============================================================================

struct OptimizerState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t step_count = 0;
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments;

    static OptimizerState for_params(const model::ModelParams& params) {
        OptimizerState s;
        for (const auto& [name, t] : params.tensors) {
            s.moments[name] = {std::vector<double>(t->size(), 0.0),
                               std::vector<double>(t->size(), 0.0)};
        }
        return s;
    }
};

// Canonical Adam update with bias correction, reading each parameter's grad.
inline void adam_step(model::ModelParams& params, OptimizerState& state, double lr) {
    ++state.step_count;
    const double t = double(state.step_count);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);
    for (auto& [name, p] : params.tensors) {
        auto it = state.moments.find(name);
        if (it == state.moments.end()) {
            throw ConfigError("adam_step: no optimizer state for " + name);
        }
        auto& [m, v] = it->second;
        for (std::size_t i = 0; i < p->size(); ++i) {
            const double g = p->grad[i];
            if (!std::isfinite(g)) {
                throw NumericError("adam_step: non-finite gradient in " + name);
            }
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            p->data[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + state.eps);
        }
    }
}

// ============================================================================
// Instance preprocessing
// ============================================================================

struct PreparedInstance {
    geo::PointCloud input;     // clipped, normalized partial
    geo::PointCloud gt_local;  // ground truth mapped into the input frame
    geo::NormalizeParams frame;
};

// Permute+clip the partial, normalize it, and carry the ground truth into
// the same frame so the loss is computed where the grids live.
inline PreparedInstance prepare_instance(const data::TrainInstance& inst,
                                         std::size_t max_points, Rng& rng) {
    PreparedInstance out;
    const geo::PointCloud clipped = data::clip_input(inst.partial, max_points, rng);
    auto normalized = geo::normalize_cloud(clipped);
    out.input = std::move(normalized.cloud);
    out.frame = normalized.params;
    out.gt_local.points.reserve(inst.gt.size());
    for (const geo::Vec3& p : inst.gt.points) {
        out.gt_local.points.push_back((p - out.frame.centroid) * out.frame.scale);
    }
    return out;
}

// ============================================================================
// Epoch driver
// ============================================================================

struct EpochMetrics {
    std::size_t epoch = 0;
    double lr = 0.0;
    double alpha = 0.0;
    double mean_coarse_cd = 0.0;
    double mean_fine_cd = 0.0;
    double mean_loss = 0.0;
    double wall_seconds = 0.0;
    std::size_t optimizer_steps = 0;
};

struct TrainOptions {
    std::size_t max_input_points = 3000;
    // 0 keeps the full ground truth in the training loss; a positive value
    // subsamples it per presentation (evaluation always uses the full cloud)
    std::size_t loss_gt_points = 0;
    std::size_t threads = 1;
    bool deterministic = false;  // forces sequential accumulation, zeroes wall time
};

namespace detail {

struct InstanceResult {
    double coarse_cd = 0.0;
    double fine_cd = 0.0;
    double loss = 0.0;
};

inline InstanceResult run_instance(model::ModelParams& params, const model::ModelConfig& mcfg,
                                   const data::TrainInstance& inst, double alpha,
                                   geo::CdVariant variant, const TrainOptions& opts,
                                   Rng clip_rng) {
    try {
        PreparedInstance prep = prepare_instance(inst, opts.max_input_points, clip_rng);
        if (opts.loss_gt_points > 0 && opts.loss_gt_points < prep.gt_local.size()) {
            prep.gt_local = data::clip_input(prep.gt_local, opts.loss_gt_points, clip_rng);
        }
        ad::Tape tape;
        auto fwd = model::forward(tape, prep.input, params, mcfg);
        auto loss = combined_loss(tape, fwd.coarse, fwd.fine, prep.gt_local, alpha, variant);
        if (!std::isfinite(loss.loss->data[0])) {
            throw NumericError("non-finite loss");
        }
        tape.backward(loss.loss);
        return {loss.coarse_cd, loss.fine_cd, loss.loss->data[0]};
    } catch (const NumericError& e) {
        throw NumericError("instance " + inst.id + " view " + std::to_string(inst.view) + ": " +
                           e.what());
    }
}

}  // namespace detail

// One shuffled pass over the dataset with gradient accumulation over
// batch_size instances per Adam step. Batch workers accumulate into private
// parameter copies merged in worker order, so a fixed worker count replays
// bit-identically; deterministic mode forces one worker.
inline EpochMetrics train_epoch(model::ModelParams& params, const model::ModelConfig& mcfg,
                                const std::vector<data::TrainInstance>& dataset,
                                const TrainConfig& tcfg, const TrainOptions& opts,
                                std::size_t epoch, OptimizerState& state) {
    if (dataset.empty()) throw ConfigError("train_epoch: empty dataset");
    tcfg.validate();
    const auto t_start = std::chrono::steady_clock::now();
    const double lr = learning_rate(epoch, tcfg);
    const double alpha = alpha_schedule(epoch, tcfg);

    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t(0));
    {
        Rng shuffle_rng = make_rng(tcfg.seed, 0x5u * (epoch + 1));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
    }

    EpochMetrics metrics;
    metrics.epoch = epoch;
    metrics.lr = lr;
    metrics.alpha = alpha;

    const std::size_t workers =
        opts.deterministic ? 1 : std::max<std::size_t>(1, opts.threads);

    for (std::size_t start = 0; start < order.size(); start += tcfg.batch_size) {
        const std::size_t end = std::min(order.size(), start + tcfg.batch_size);
        const std::size_t batch_n = end - start;
        params.zero_grads();

        std::vector<detail::InstanceResult> results(batch_n);
        auto clip_rng_for = [&](std::size_t pos) {
            return make_rng(tcfg.seed, mix_seed(epoch + 1, order[start + pos]));
        };

        if (workers <= 1 || batch_n <= 1) {
            for (std::size_t b = 0; b < batch_n; ++b) {
                results[b] = detail::run_instance(params, mcfg, dataset[order[start + b]],
                                                  alpha, tcfg.cd_variant,
                                                  opts, clip_rng_for(b));
            }
        } else {
            const std::size_t n_workers = std::min(workers, batch_n);
            std::vector<model::ModelParams> copies(n_workers);
            for (auto& copy : copies) {
                for (const auto& [name, t] : params.tensors) {
                    copy.tensors[name] = ad::Tensor::from_data(t->shape, t->data, true);
                }
            }
            std::vector<std::thread> pool;
            pool.reserve(n_workers);
            for (std::size_t w = 0; w < n_workers; ++w) {
                pool.emplace_back([&, w] {
                    for (std::size_t b = w; b < batch_n; b += n_workers) {
                        results[b] = detail::run_instance(
                            copies[w], mcfg, dataset[order[start + b]], alpha,
                            tcfg.cd_variant, opts, clip_rng_for(b));
                    }
                });
            }
            for (auto& th : pool) th.join();
            for (std::size_t w = 0; w < n_workers; ++w) {
                for (auto& [name, t] : params.tensors) {
                    const auto& src = copies[w].tensors.at(name)->grad;
                    for (std::size_t i = 0; i < t->size(); ++i) t->grad[i] += src[i];
                }
            }
        }

        const double inv_batch = 1.0 / double(batch_n);
        for (auto& [name, t] : params.tensors) {
            for (double& g : t->grad) g *= inv_batch;
        }
        adam_step(params, state, lr);
        ++metrics.optimizer_steps;

        for (const auto& r : results) {
            metrics.mean_coarse_cd += r.coarse_cd;
            metrics.mean_fine_cd += r.fine_cd;
            metrics.mean_loss += r.loss;
        }
    }

    const double inv_n = 1.0 / double(order.size());
    metrics.mean_coarse_cd *= inv_n;
    metrics.mean_fine_cd *= inv_n;
    metrics.mean_loss *= inv_n;
    if (!opts.deterministic) {
        metrics.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    }
    return metrics;
}

// One JSON object per epoch, newline-delimited; %.17g keeps runs with equal
// numbers byte-identical.
inline std::string metrics_json_line(const EpochMetrics& m) {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "{\"epoch\":%zu,\"lr\":%.17g,\"alpha\":%.17g,\"mean_coarse_cd\":%.17g,"
                  "\"mean_fine_cd\":%.17g,\"mean_loss\":%.17g,\"wall_seconds\":%.17g}",
                  m.epoch, m.lr, m.alpha, m.mean_coarse_cd, m.mean_fine_cd, m.mean_loss,
                  m.wall_seconds);
    return std::string(buf);
}

// ============================================================================
// Evaluation
// ============================================================================

struct CategoryStats {
    double mean_unsquared = 0.0;
    double mean_squared = 0.0;
    std::size_t count = 0;
};

struct EvalReport {
    std::map<std::string, CategoryStats> per_category;
    double overall_unsquared = 0.0;
    double overall_squared = 0.0;
    std::size_t count = 0;
};

// Produces the fine completion mapped back into the instance's object frame.
using Completer = std::function<geo::PointCloud(const data::TrainInstance&)>;

inline EvalReport evaluate_with(const std::vector<data::TrainInstance>& instances,
                                const Completer& completer) {
    if (instances.empty()) throw ConfigError("evaluate: empty instance list");
    EvalReport report;
    for (const auto& inst : instances) {
        const geo::PointCloud fine = completer(inst);
        const double unsq = geo::chamfer_distance(fine, inst.gt, geo::CdVariant::Unsquared);
        const double sq = geo::chamfer_distance(fine, inst.gt, geo::CdVariant::Squared);
        auto& cat = report.per_category[inst.category];
        cat.mean_unsquared += unsq;
        cat.mean_squared += sq;
        cat.count += 1;
        report.overall_unsquared += unsq;
        report.overall_squared += sq;
        report.count += 1;
    }
    for (auto& [name, cat] : report.per_category) {
        cat.mean_unsquared /= double(cat.count);
        cat.mean_squared /= double(cat.count);
    }
    report.overall_unsquared /= double(report.count);
    report.overall_squared /= double(report.count);
    return report;
}

// Deterministic no-grad completion of one instance, output in object frame.
inline model::CompletionOutput complete_instance(const model::ModelParams& params,
                                                 const model::ModelConfig& mcfg,
                                                 const geo::PointCloud& partial,
                                                 std::size_t max_points, std::uint64_t seed) {
    Rng rng = make_rng(seed, 0x77u);
    const geo::PointCloud clipped = data::clip_input(partial, max_points, rng);
    auto normalized = geo::normalize_cloud(clipped);
    ad::Tape tape;
    tape.set_recording(false);
    auto fwd = model::forward(tape, normalized.cloud, params, mcfg);
    auto out = model::to_output(fwd);
    out.coarse.points = geo::denormalize_cloud(out.coarse, normalized.params).points;
    out.dense = geo::denormalize_cloud(out.dense, normalized.params);
    out.fine = geo::denormalize_cloud(out.fine, normalized.params);
    // sigma is a grid extent in the normalized frame; report it in the
    // object frame alongside the denormalized points
    for (double& s : out.sigma) s /= normalized.params.scale;
    return out;
}

inline EvalReport evaluate(const model::ModelParams& params, const model::ModelConfig& mcfg,
                           const std::vector<data::TrainInstance>& instances,
                           std::size_t max_points, std::uint64_t seed) {
    const model::ModelParams* p = &params;
    return evaluate_with(instances, [p, &mcfg, max_points, seed](const data::TrainInstance& inst) {
        return complete_instance(*p, mcfg, inst.partial, max_points, seed).fine;
    });
}

}  // namespace gascn::train
