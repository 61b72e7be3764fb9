#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "gascn/errors.hpp"

namespace gascn::ad {

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

inline std::size_t numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

// Dense row-major 64-bit float tensor. When requires_grad is set, grad is a
// same-shape accumulator that backward passes add into.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {}

    static TensorPtr zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
        auto t = std::make_shared<Tensor>(std::move(shape), std::vector<double>());
        t->data.assign(numel(t->shape), 0.0);
        t->set_requires_grad(requires_grad);
        return t;
    }

    static TensorPtr from_data(std::vector<std::size_t> shape, std::vector<double> values,
                               bool requires_grad = false) {
        if (numel(shape) != values.size()) {
            throw ShapeError("Tensor: data length " + std::to_string(values.size()) +
                             " does not match shape product " + std::to_string(numel(shape)));
        }
        auto t = std::make_shared<Tensor>(std::move(shape), std::move(values));
        t->set_requires_grad(requires_grad);
        return t;
    }

    static TensorPtr scalar(double v, bool requires_grad = false) {
        return from_data({1}, {v}, requires_grad);
    }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    bool is_scalar() const { return rank() == 1 && shape[0] == 1; }

    std::size_t rows() const {
        require_rank2();
        return shape[0];
    }
    std::size_t cols() const {
        require_rank2();
        return shape[1];
    }

    double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

    void set_requires_grad(bool on) {
        requires_grad = on;
        if (on) {
            grad.assign(data.size(), 0.0);
        } else {
            grad.clear();
        }
    }

    void zero_grad() {
        if (requires_grad) std::fill(grad.begin(), grad.end(), 0.0);
    }

    // NaN/Inf surfaces as an error at validation points, not inside hot loops.
    void validate_finite(const std::string& label) const {
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (!std::isfinite(data[i])) {
                throw NumericError(label + ": non-finite value at flat index " +
                                   std::to_string(i));
            }
        }
    }

private:
    void require_rank2() const {
        if (shape.size() != 2) {
            throw ShapeError("Tensor: rank-2 access on rank-" +
                             std::to_string(shape.size()) + " tensor");
        }
    }
};

}  // namespace gascn::ad
