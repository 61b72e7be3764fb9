#pragma once

#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "gascn/tensor.hpp"

namespace gascn::ad {

// Tracks the distance to the nearest activation kink / pooling tie observed
// during a forward pass, so gradient checks can reject unstable evaluation
// points. Inactive unless a Scope is alive on the current thread.
class KinkMonitor {
public:
    static KinkMonitor*& active() {
        thread_local KinkMonitor* current = nullptr;
        return current;
    }

    void observe(double margin) {
        if (margin < min_margin_) min_margin_ = margin;
    }
    double min_margin() const { return min_margin_; }
    void reset() { min_margin_ = std::numeric_limits<double>::infinity(); }

    struct Scope;

private:
    double min_margin_ = std::numeric_limits<double>::infinity();
};

struct KinkMonitor::Scope {
    KinkMonitor monitor;
    KinkMonitor* previous;
    Scope() : previous(active()) { active() = &monitor; }
    ~Scope() { active() = previous; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;
};

inline void observe_kink_margin(double margin) {
    if (KinkMonitor* m = KinkMonitor::active()) m->observe(margin);
}

// Eager-mode tape. Ops append a backward closure as they execute; backward
// replays them in reverse order, visiting each exactly once. Gradients of op
// outputs are reset at the start of every backward call while leaf gradients
// (parameters, inputs) accumulate across calls.
class Tape {
public:
    bool recording() const { return recording_; }
    void set_recording(bool on) { recording_ = on; }

    void record(TensorPtr output, std::function<void()> backward_fn) {
        outputs_.push_back(std::move(output));
        nodes_.push_back(std::move(backward_fn));
    }

    std::size_t size() const { return nodes_.size(); }

    void backward(const TensorPtr& loss) {
        if (!loss || !loss->is_scalar()) {
            throw ShapeError("backward: loss must be a scalar tensor");
        }
        if (!loss->requires_grad) {
            throw ShapeError("backward: loss is not connected to any tracked tensor");
        }
        for (auto& t : outputs_) t->zero_grad();
        loss->grad[0] += 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

    void clear() {
        nodes_.clear();
        outputs_.clear();
    }

private:
    std::vector<std::function<void()>> nodes_;
    std::vector<TensorPtr> outputs_;
    bool recording_ = true;
};

// Temporarily disables recording, e.g. for evaluation passes.
class NoGradGuard {
public:
    explicit NoGradGuard(Tape& tape) : tape_(tape), previous_(tape.recording()) {
        tape_.set_recording(false);
    }
    ~NoGradGuard() { tape_.set_recording(previous_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    Tape& tape_;
    bool previous_;
};

}  // namespace gascn::ad
