#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "gascn/ops.hpp"
#include "gascn/tape.hpp"
#include "gascn/tensor.hpp"

namespace gascn::ad {

// Evaluation points closer than this to an activation kink or pooling tie
// are unreliable for central differences and get flagged.
inline constexpr double kKinkRejectMargin = 1e-3;

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    double worst_ad = 0.0;
    double worst_fd = 0.0;
    double kink_margin = std::numeric_limits<double>::infinity();
    bool kink_near = false;
    bool passed = false;
    double step = 0.0;
    double tol = 0.0;

    std::string summary() const {
        char buf[192];
        std::snprintf(buf, sizeof(buf),
                      "max rel err %.3e at entry %zu (ad %.6e, fd %.6e)%s -> %s",
                      max_rel_err, worst_index, worst_ad, worst_fd,
                      kink_near ? " [near kink]" : "", passed ? "pass" : "FAIL");
        return std::string(buf);
    }
};

// Scalar-valued function of one tensor, evaluated on the supplied tape.
using TensorFn = std::function<TensorPtr(Tape&, const TensorPtr&)>;

inline double relative_error(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1.0});
    return std::abs(a - b) / denom;
}

// Central-difference estimate of d f / d x for every entry of x, holding
// everything else f captures fixed. Forward evaluations only, so the result
// is independent of the backward implementation it is used to check.
inline std::vector<double> fd_gradient(const std::function<double()>& eval, Tensor& x,
                                       double step) {
    std::vector<double> g(x.data.size());
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double saved = x.data[i];
        x.data[i] = saved + step;
        const double plus = eval();
        x.data[i] = saved - step;
        const double minus = eval();
        x.data[i] = saved;
        g[i] = (plus - minus) / (2.0 * step);
    }
    return g;
}

// Compares the tape gradient of f at x against central finite differences.
// A kink within kKinkRejectMargin of the nominal evaluation is flagged in
// the report rather than failing it.
inline GradCheckReport grad_check(const TensorFn& f, const TensorPtr& x, double step,
                                  double tol) {
    GradCheckReport report;
    report.step = step;
    report.tol = tol;

    auto probe = Tensor::from_data(x->shape, x->data, true);
    std::vector<double> ad_grad;
    {
        KinkMonitor::Scope scope;
        Tape tape;
        TensorPtr y = f(tape, probe);
        if (!y->is_scalar()) throw ShapeError("grad_check: function must return a scalar");
        tape.backward(y);
        ad_grad = probe->grad;
        report.kink_margin = scope.monitor.min_margin();
        report.kink_near = report.kink_margin < kKinkRejectMargin;
    }

    auto eval = [&]() {
        Tape tape;
        tape.set_recording(false);
        return f(tape, probe)->data[0];
    };
    const std::vector<double> fd = fd_gradient(eval, *probe, step);

    for (std::size_t i = 0; i < fd.size(); ++i) {
        const double rel = relative_error(ad_grad[i], fd[i]);
        if (rel > report.max_rel_err) {
            report.max_rel_err = rel;
            report.worst_index = i;
            report.worst_ad = ad_grad[i];
            report.worst_fd = fd[i];
        }
    }
    report.passed = report.max_rel_err <= tol;
    return report;
}

}  // namespace gascn::ad
