#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "gascn/tape.hpp"
#include "gascn/tensor.hpp"

namespace gascn::ad {

namespace detail {

inline bool any_requires_grad(std::initializer_list<const TensorPtr*> inputs) {
    for (const TensorPtr* t : inputs) {
        if ((*t)->requires_grad) return true;
    }
    return false;
}

inline bool track(const Tape& tape, std::initializer_list<const TensorPtr*> inputs) {
    return tape.recording() && any_requires_grad(inputs);
}

}  // namespace detail

// out = a · b for a[m×k], b[k×n]. Backward: a.grad += g·bᵀ, b.grad += aᵀ·g.
inline TensorPtr matmul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    if (a->rank() != 2 || b->rank() != 2) {
        throw ShapeError("matmul: rank-2 operands required");
    }
    if (a->shape[1] != b->shape[0]) {
        throw ShapeError("matmul: inner dimensions disagree (" + std::to_string(a->shape[1]) +
                         " vs " + std::to_string(b->shape[0]) + ")");
    }
    const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
    auto out = Tensor::zeros({m, n});
    {
        const double* A = a->data.data();
        const double* B = b->data.data();
        double* O = out->data.data();
        for (std::size_t i = 0; i < m; ++i) {
            const double* arow = A + i * k;
            double* orow = O + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = arow[p];
                const double* brow = B + p * n;
                for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
    }
    if (detail::track(tape, {&a, &b})) {
        out->set_requires_grad(true);
        tape.record(out, [a, b, out, m, k, n] {
            const double* G = out->grad.data();
            if (a->requires_grad) {
                double* GA = a->grad.data();
                const double* B = b->data.data();
                for (std::size_t i = 0; i < m; ++i) {
                    const double* grow = G + i * n;
                    double* garow = GA + i * k;
                    for (std::size_t p = 0; p < k; ++p) {
                        const double* brow = B + p * n;
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        garow[p] += acc;
                    }
                }
            }
            if (b->requires_grad) {
                double* GB = b->grad.data();
                const double* A = a->data.data();
                for (std::size_t i = 0; i < m; ++i) {
                    const double* grow = G + i * n;
                    const double* arow = A + i * k;
                    for (std::size_t p = 0; p < k; ++p) {
                        const double av = arow[p];
                        double* gbrow = GB + p * n;
                        for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                    }
                }
            }
        });
    }
    return out;
}

// Elementwise sum of two same-shape tensors.
inline TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) throw ShapeError("add: operand shapes differ");
    auto out = Tensor::zeros(a->shape);
    for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] + b->data[i];
    if (detail::track(tape, {&a, &b})) {
        out->set_requires_grad(true);
        tape.record(out, [a, b, out] {
            if (a->requires_grad) {
                for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i];
            }
            if (b->requires_grad) {
                for (std::size_t i = 0; i < b->size(); ++i) b->grad[i] += out->grad[i];
            }
        });
    }
    return out;
}

// Adds a length-n row vector to every row of a[m×n] (the one broadcast the
// model needs, for biases).
inline TensorPtr add_rowvec(Tape& tape, const TensorPtr& a, const TensorPtr& v) {
    if (a->rank() != 2) throw ShapeError("add_rowvec: matrix operand required");
    const std::size_t m = a->shape[0], n = a->shape[1];
    if (!(v->rank() == 1 && v->shape[0] == n) &&
        !(v->rank() == 2 && v->shape[0] == 1 && v->shape[1] == n)) {
        throw ShapeError("add_rowvec: vector length does not match column count");
    }
    auto out = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out->data[i * n + j] = a->data[i * n + j] + v->data[j];
        }
    }
    if (detail::track(tape, {&a, &v})) {
        out->set_requires_grad(true);
        tape.record(out, [a, v, out, m, n] {
            if (a->requires_grad) {
                for (std::size_t i = 0; i < m * n; ++i) a->grad[i] += out->grad[i];
            }
            if (v->requires_grad) {
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < n; ++j) v->grad[j] += out->grad[i * n + j];
                }
            }
        });
    }
    return out;
}

// Elementwise product.
inline TensorPtr mul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) throw ShapeError("mul: operand shapes differ");
    auto out = Tensor::zeros(a->shape);
    for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] * b->data[i];
    if (detail::track(tape, {&a, &b})) {
        out->set_requires_grad(true);
        tape.record(out, [a, b, out] {
            if (a->requires_grad) {
                for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i] * b->data[i];
            }
            if (b->requires_grad) {
                for (std::size_t i = 0; i < b->size(); ++i) b->grad[i] += out->grad[i] * a->data[i];
            }
        });
    }
    return out;
}

// Multiplication by a compile-time constant scalar.
inline TensorPtr scale(Tape& tape, const TensorPtr& a, double factor) {
    auto out = Tensor::zeros(a->shape);
    for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] * factor;
    if (detail::track(tape, {&a})) {
        out->set_requires_grad(true);
        tape.record(out, [a, out, factor] {
            for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i] * factor;
        });
    }
    return out;
}

// Elementwise max(x, slope·x) with slope in (0,1).
inline TensorPtr leaky_relu(Tape& tape, const TensorPtr& x, double slope) {
    if (!(slope > 0.0 && slope < 1.0)) {
        throw ConfigError("leaky_relu: slope must lie in (0,1)");
    }
    auto out = Tensor::zeros(x->shape);
    double margin = std::numeric_limits<double>::infinity();
    const bool monitoring = KinkMonitor::active() != nullptr;
    for (std::size_t i = 0; i < x->size(); ++i) {
        const double v = x->data[i];
        out->data[i] = v >= 0.0 ? v : slope * v;
        if (monitoring) margin = std::min(margin, std::abs(v));
    }
    if (monitoring && x->size() > 0) observe_kink_margin(margin);
    if (detail::track(tape, {&x})) {
        out->set_requires_grad(true);
        tape.record(out, [x, out, slope] {
            for (std::size_t i = 0; i < x->size(); ++i) {
                x->grad[i] += out->grad[i] * (x->data[i] >= 0.0 ? 1.0 : slope);
            }
        });
    }
    return out;
}

// Elementwise exponential with an overflow guard at 50.
inline TensorPtr exp_elementwise(Tape& tape, const TensorPtr& x) {
    auto out = Tensor::zeros(x->shape);
    for (std::size_t i = 0; i < x->size(); ++i) {
        if (x->data[i] >= 50.0) {
            throw NumericError("exp_elementwise: entry " + std::to_string(i) +
                               " exceeds overflow guard (" + std::to_string(x->data[i]) + ")");
        }
        out->data[i] = std::exp(x->data[i]);
    }
    if (detail::track(tape, {&x})) {
        out->set_requires_grad(true);
        tape.record(out, [x, out] {
            for (std::size_t i = 0; i < x->size(); ++i) x->grad[i] += out->grad[i] * out->data[i];
        });
    }
    return out;
}

// Column-wise concatenation of rank-2 tensors sharing a row count. Backward
// slices the gradient back to the parts.
inline TensorPtr concat_cols(Tape& tape, const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts given");
    const std::size_t m = parts[0]->rows();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p->rank() != 2 || p->shape[0] != m) {
            throw ShapeError("concat_cols: parts disagree on row count");
        }
        total += p->shape[1];
    }
    auto out = Tensor::zeros({m, total});
    std::size_t col = 0;
    for (const auto& p : parts) {
        const std::size_t d = p->shape[1];
        for (std::size_t i = 0; i < m; ++i) {
            const double* src = p->data.data() + i * d;
            double* dst = out->data.data() + i * total + col;
            for (std::size_t j = 0; j < d; ++j) dst[j] = src[j];
        }
        col += d;
    }
    bool any = false;
    for (const auto& p : parts) any = any || p->requires_grad;
    if (tape.recording() && any) {
        out->set_requires_grad(true);
        tape.record(out, [parts, out, m, total] {
            std::size_t col = 0;
            for (const auto& p : parts) {
                const std::size_t d = p->shape[1];
                if (p->requires_grad) {
                    for (std::size_t i = 0; i < m; ++i) {
                        const double* g = out->grad.data() + i * total + col;
                        double* dst = p->grad.data() + i * d;
                        for (std::size_t j = 0; j < d; ++j) dst[j] += g[j];
                    }
                }
                col += d;
            }
        });
    }
    return out;
}

// Row gather: out[e] = x[idx[e]]. Backward scatter-adds rows.
inline TensorPtr gather_rows(Tape& tape, const TensorPtr& x,
                             const std::vector<std::uint32_t>& idx) {
    if (x->rank() != 2) throw ShapeError("gather_rows: matrix operand required");
    const std::size_t n = x->shape[0], d = x->shape[1];
    for (std::uint32_t i : idx) {
        if (i >= n) throw ShapeError("gather_rows: index out of range");
    }
    auto out = Tensor::zeros({idx.size(), d});
    for (std::size_t e = 0; e < idx.size(); ++e) {
        const double* src = x->data.data() + std::size_t(idx[e]) * d;
        double* dst = out->data.data() + e * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] = src[j];
    }
    if (detail::track(tape, {&x})) {
        out->set_requires_grad(true);
        tape.record(out, [x, out, idx, d] {
            for (std::size_t e = 0; e < idx.size(); ++e) {
                const double* g = out->grad.data() + e * d;
                double* dst = x->grad.data() + std::size_t(idx[e]) * d;
                for (std::size_t j = 0; j < d; ++j) dst[j] += g[j];
            }
        });
    }
    return out;
}

// Repeats a row vector (rank-1 [d] or rank-2 [1×d]) m times. Backward sums
// the gradient over rows.
inline TensorPtr repeat_row(Tape& tape, const TensorPtr& v, std::size_t m) {
    std::size_t d = 0;
    if (v->rank() == 1) {
        d = v->shape[0];
    } else if (v->rank() == 2 && v->shape[0] == 1) {
        d = v->shape[1];
    } else {
        throw ShapeError("repeat_row: row vector operand required");
    }
    auto out = Tensor::zeros({m, d});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < d; ++j) out->data[i * d + j] = v->data[j];
    }
    if (detail::track(tape, {&v})) {
        out->set_requires_grad(true);
        tape.record(out, [v, out, m, d] {
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < d; ++j) v->grad[j] += out->grad[i * d + j];
            }
        });
    }
    return out;
}

// Shape change with identical element count (data copied).
inline TensorPtr reshape(Tape& tape, const TensorPtr& x, std::vector<std::size_t> shape) {
    if (numel(shape) != x->size()) {
        throw ShapeError("reshape: element count changes from " + std::to_string(x->size()) +
                         " to " + std::to_string(numel(shape)));
    }
    auto out = Tensor::from_data(std::move(shape), x->data);
    if (detail::track(tape, {&x})) {
        out->set_requires_grad(true);
        tape.record(out, [x, out] {
            for (std::size_t i = 0; i < x->size(); ++i) x->grad[i] += out->grad[i];
        });
    }
    return out;
}

inline TensorPtr as_row(Tape& tape, const TensorPtr& v) {
    if (v->rank() != 1) throw ShapeError("as_row: rank-1 operand required");
    return reshape(tape, v, {1, v->shape[0]});
}

// Per-destination-node softmax over incoming-edge scores, stabilized by
// subtracting the per-segment maximum before exponentiation.
inline TensorPtr segment_softmax(Tape& tape, const TensorPtr& scores,
                                 const std::vector<std::uint32_t>& dest,
                                 std::size_t n_nodes) {
    if (scores->rank() != 1) throw ShapeError("segment_softmax: rank-1 scores required");
    const std::size_t e_count = scores->shape[0];
    if (dest.size() != e_count) {
        throw ShapeError("segment_softmax: scores/destination length mismatch");
    }
    std::vector<std::size_t> counts(n_nodes, 0);
    for (std::uint32_t d : dest) {
        if (d >= n_nodes) throw ShapeError("segment_softmax: destination index out of range");
        counts[d]++;
    }
    for (std::size_t i = 0; i < n_nodes; ++i) {
        if (counts[i] == 0) {
            throw ShapeError("segment_softmax: node " + std::to_string(i) +
                             " has no incoming edges");
        }
    }
    std::vector<double> seg_max(n_nodes, -std::numeric_limits<double>::infinity());
    for (std::size_t e = 0; e < e_count; ++e) {
        seg_max[dest[e]] = std::max(seg_max[dest[e]], scores->data[e]);
    }
    auto out = Tensor::zeros({e_count});
    std::vector<double> seg_sum(n_nodes, 0.0);
    for (std::size_t e = 0; e < e_count; ++e) {
        const double v = std::exp(scores->data[e] - seg_max[dest[e]]);
        out->data[e] = v;
        seg_sum[dest[e]] += v;
    }
    for (std::size_t e = 0; e < e_count; ++e) out->data[e] /= seg_sum[dest[e]];
    if (detail::track(tape, {&scores})) {
        out->set_requires_grad(true);
        tape.record(out, [scores, out, dest, n_nodes, e_count] {
            // d(alpha_e)/d(score_f) = alpha_e (delta_ef - alpha_f) within a segment.
            std::vector<double> seg_dot(n_nodes, 0.0);
            for (std::size_t e = 0; e < e_count; ++e) {
                seg_dot[dest[e]] += out->grad[e] * out->data[e];
            }
            for (std::size_t e = 0; e < e_count; ++e) {
                scores->grad[e] += out->data[e] * (out->grad[e] - seg_dot[dest[e]]);
            }
        });
    }
    return out;
}

// out[i] = sum over edges e with dest[e] == i of alpha[e] * z[e]. Backward
// scatters into both alpha and z.
inline TensorPtr segment_weighted_sum(Tape& tape, const TensorPtr& alpha, const TensorPtr& z,
                                      const std::vector<std::uint32_t>& dest,
                                      std::size_t n_nodes) {
    if (alpha->rank() != 1) throw ShapeError("segment_weighted_sum: rank-1 weights required");
    if (z->rank() != 2) throw ShapeError("segment_weighted_sum: rank-2 values required");
    const std::size_t e_count = alpha->shape[0];
    if (z->shape[0] != e_count || dest.size() != e_count) {
        throw ShapeError("segment_weighted_sum: edge count mismatch");
    }
    const std::size_t d = z->shape[1];
    for (std::uint32_t i : dest) {
        if (i >= n_nodes) throw ShapeError("segment_weighted_sum: index out of range");
    }
    auto out = Tensor::zeros({n_nodes, d});
    for (std::size_t e = 0; e < e_count; ++e) {
        const double a = alpha->data[e];
        const double* zr = z->data.data() + e * d;
        double* o = out->data.data() + std::size_t(dest[e]) * d;
        for (std::size_t j = 0; j < d; ++j) o[j] += a * zr[j];
    }
    if (detail::track(tape, {&alpha, &z})) {
        out->set_requires_grad(true);
        tape.record(out, [alpha, z, out, dest, d, e_count] {
            for (std::size_t e = 0; e < e_count; ++e) {
                const double* g = out->grad.data() + std::size_t(dest[e]) * d;
                if (alpha->requires_grad) {
                    const double* zr = z->data.data() + e * d;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < d; ++j) acc += g[j] * zr[j];
                    alpha->grad[e] += acc;
                }
                if (z->requires_grad) {
                    const double a = alpha->data[e];
                    double* zg = z->grad.data() + e * d;
                    for (std::size_t j = 0; j < d; ++j) zg[j] += a * g[j];
                }
            }
        });
    }
    return out;
}

// Per-column maximum of x[m×d] -> [d]. Backward routes the gradient to the
// argmax row only, ties broken by lowest row index.
inline TensorPtr column_max_pool(Tape& tape, const TensorPtr& x) {
    if (x->rank() != 2) throw ShapeError("column_max_pool: matrix operand required");
    const std::size_t m = x->shape[0], d = x->shape[1];
    if (m == 0) throw ShapeError("column_max_pool: empty input");
    auto out = Tensor::zeros({d});
    std::vector<std::uint32_t> argmax(d, 0);
    for (std::size_t j = 0; j < d; ++j) out->data[j] = x->data[j];
    for (std::size_t i = 1; i < m; ++i) {
        const double* row = x->data.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) {
            if (row[j] > out->data[j]) {
                out->data[j] = row[j];
                argmax[j] = static_cast<std::uint32_t>(i);
            }
        }
    }
    if (KinkMonitor::active() != nullptr && m >= 2) {
        // Rows that are duplicates of the argmax row (up to rounding) co-move
        // under perturbation, so a tie against them is not a kink; the margin
        // is measured against the best genuinely different row.
        auto rows_equal = [&](std::size_t a, std::size_t b) {
            for (std::size_t j = 0; j < d; ++j) {
                if (std::abs(x->data[a * d + j] - x->data[b * d + j]) > 1e-12) return false;
            }
            return true;
        };
        double margin = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < d; ++j) {
            double runner_up = -std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < m; ++i) {
                if (i == argmax[j]) continue;
                const double v = x->data[i * d + j];
                if (v <= runner_up) continue;
                if (out->data[j] - v < 1e-6 && rows_equal(i, argmax[j])) continue;
                runner_up = v;
            }
            if (runner_up > -std::numeric_limits<double>::infinity()) {
                margin = std::min(margin, out->data[j] - runner_up);
            }
        }
        observe_kink_margin(margin);
    }
    if (detail::track(tape, {&x})) {
        out->set_requires_grad(true);
        tape.record(out, [x, out, argmax, d] {
            for (std::size_t j = 0; j < d; ++j) {
                x->grad[std::size_t(argmax[j]) * d + j] += out->grad[j];
            }
        });
    }
    return out;
}

// Divides each row of x[m×3] by its Euclidean norm. Rows with norm below
// 1e-12 are an error naming the row.
inline TensorPtr l2_normalize_rows(Tape& tape, const TensorPtr& x) {
    if (x->rank() != 2 || x->shape[1] != 3) {
        throw ShapeError("l2_normalize_rows: m-by-3 operand required");
    }
    const std::size_t m = x->shape[0];
    auto out = Tensor::zeros({m, 3});
    std::vector<double> norms(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double* r = x->data.data() + i * 3;
        const double n = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
        if (n < 1e-12) {
            throw NumericError("l2_normalize_rows: near-zero row at index " + std::to_string(i));
        }
        norms[i] = n;
        double* o = out->data.data() + i * 3;
        for (int j = 0; j < 3; ++j) o[j] = r[j] / n;
    }
    if (detail::track(tape, {&x})) {
        out->set_requires_grad(true);
        tape.record(out, [x, out, norms, m] {
            for (std::size_t i = 0; i < m; ++i) {
                const double* y = out->data.data() + i * 3;
                const double* g = out->grad.data() + i * 3;
                double* xg = x->grad.data() + i * 3;
                const double dot = g[0] * y[0] + g[1] * y[1] + g[2] * y[2];
                for (int j = 0; j < 3; ++j) xg[j] += (g[j] - dot * y[j]) / norms[i];
            }
        });
    }
    return out;
}

// Sum of all entries -> scalar.
inline TensorPtr sum(Tape& tape, const TensorPtr& x) {
    auto out = Tensor::zeros({1});
    double acc = 0.0;
    for (double v : x->data) acc += v;
    out->data[0] = acc;
    if (detail::track(tape, {&x})) {
        out->set_requires_grad(true);
        tape.record(out, [x, out] {
            const double g = out->grad[0];
            for (std::size_t i = 0; i < x->size(); ++i) x->grad[i] += g;
        });
    }
    return out;
}

}  // namespace gascn::ad
