#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "larc/common.hpp"
#include "larc/rng.hpp"

namespace larc {

// Dense row-major tensor participating in reverse-mode differentiation.
// TensorT is a shared handle: copies alias the same storage, which is what
// lets tape closures accumulate gradients into the tensors a caller holds.
// The training dtype is float; the same kernels instantiate at double for
// gradient audits.
template <class S>
class TensorT {
public:
    struct Store {
        Shape shape;
        std::vector<S> data;
        std::vector<S> grad; // allocated lazily, same length as data when present
        bool requires_grad = false;
    };

    TensorT() = default;

    static TensorT zeros(Shape shape, bool requires_grad = false) {
        TensorT t;
        t.s_ = std::make_shared<Store>();
        t.s_->shape = std::move(shape);
        t.s_->data.assign(shape_numel(t.s_->shape), S(0));
        t.s_->requires_grad = requires_grad;
        return t;
    }

    static TensorT full(Shape shape, S value, bool requires_grad = false) {
        TensorT t = zeros(std::move(shape), requires_grad);
        for (auto& v : t.s_->data) v = value;
        return t;
    }

    static TensorT from(Shape shape, std::vector<S> values, bool requires_grad = false) {
        if (shape_numel(shape) != values.size())
            throw ShapeError("from(): value count does not match shape " + shape_str(shape));
        TensorT t;
        t.s_ = std::make_shared<Store>();
        t.s_->shape = std::move(shape);
        t.s_->data = std::move(values);
        t.s_->requires_grad = requires_grad;
        return t;
    }

    static TensorT scalar(S value, bool requires_grad = false) {
        return from({1}, {value}, requires_grad);
    }

    static TensorT randn(Shape shape, RngStream& rng, double stddev, bool requires_grad = false) {
        TensorT t = zeros(std::move(shape), requires_grad);
        for (auto& v : t.s_->data) v = static_cast<S>(rng.normal(0.0, stddev));
        return t;
    }

    bool defined() const { return static_cast<bool>(s_); }
    const Shape& shape() const { return s_->shape; }
    int dim(std::size_t i) const { return s_->shape[i]; }
    std::size_t rank() const { return s_->shape.size(); }
    std::size_t size() const { return s_->data.size(); }

    S* data() { return s_->data.data(); }
    const S* data() const { return s_->data.data(); }
    std::vector<S>& values() { return s_->data; }
    const std::vector<S>& values() const { return s_->data; }

    bool requires_grad() const { return s_->requires_grad; }
    void set_requires_grad(bool b) { s_->requires_grad = b; }

    bool has_grad() const { return !s_->grad.empty(); }
    std::vector<S>& grad() {
        if (s_->grad.size() != s_->data.size()) s_->grad.assign(s_->data.size(), S(0));
        return s_->grad;
    }
    void zero_grad() {
        if (!s_->grad.empty()) s_->grad.assign(s_->data.size(), S(0));
    }

    S item() const {
        if (s_->data.size() != 1) throw ShapeError("item(): tensor is not scalar");
        return s_->data[0];
    }

    S at(int i) const { return s_->data[static_cast<std::size_t>(i)]; }
    S at(int i, int j) const {
        return s_->data[static_cast<std::size_t>(i) * s_->shape[1] + j];
    }
    S& at(int i) { return s_->data[static_cast<std::size_t>(i)]; }
    S& at(int i, int j) {
        return s_->data[static_cast<std::size_t>(i) * s_->shape[1] + j];
    }

    bool all_finite() const {
        for (S v : s_->data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    // identity comparison (same storage)
    bool same_storage(const TensorT& other) const { return s_ == other.s_; }

private:
    std::shared_ptr<Store> s_;
};

// Ordered record of executed ops. Each op pushes one closure that propagates
// the adjoint from its output to its inputs; replaying in reverse order
// accumulates every gradient exactly once per use.
template <class S>
class TapeT {
public:
    void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

    std::size_t size() const { return steps_.size(); }

    void backward(TensorT<S>& loss) {
        if (loss.size() != 1) throw ShapeError("backward(): loss must be scalar");
        loss.grad()[0] += S(1);
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    }

    void clear() { steps_.clear(); }

private:
    std::vector<std::function<void()>> steps_;
};

using Tensor = TensorT<float>;
using Tape = TapeT<float>;

} // namespace larc
