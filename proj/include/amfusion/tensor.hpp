#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "amfusion/errors.hpp"

namespace amfusion {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

struct TensorData {
    Shape shape;
    std::vector<float> v;      // row-major values
    bool requires_grad = false;
    std::vector<float> g;      // same length as v when requires_grad
};

// Dense float tensor with shared storage. Values are immutable by convention
// once an op has produced them; only grad buffers accumulate.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        Tensor t;
        t.d_ = std::make_shared<TensorData>();
        t.d_->shape = std::move(shape);
        t.d_->v.assign(shape_numel(t.d_->shape), 0.0f);
        if (requires_grad) t.set_requires_grad(true);
        return t;
    }

    static Tensor full(Shape shape, float value, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (auto& x : t.d_->v) x = value;
        return t;
    }

    static Tensor from_values(Shape shape, std::vector<float> values,
                              bool requires_grad = false) {
        if (shape_numel(shape) != values.size())
            throw ShapeError("value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
        Tensor t;
        t.d_ = std::make_shared<TensorData>();
        t.d_->shape = std::move(shape);
        t.d_->v = std::move(values);
        if (requires_grad) t.set_requires_grad(true);
        return t;
    }

    static Tensor scalar(float value, bool requires_grad = false) {
        return from_values({1}, {value}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d_->shape; }
    int dim(std::size_t i) const { return d_->shape[i]; }
    std::size_t rank() const { return d_->shape.size(); }
    std::size_t numel() const { return d_->v.size(); }

    const std::vector<float>& values() const { return d_->v; }
    std::vector<float>& mutable_values() { return d_->v; }
    float item() const {
        if (numel() != 1) throw ShapeError("item() on non-scalar tensor");
        return d_->v[0];
    }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool rg) {
        d_->requires_grad = rg;
        if (rg)
            d_->g.assign(d_->v.size(), 0.0f);
        else
            d_->g.clear();
    }
    const std::vector<float>& grad() const { return d_->g; }
    std::vector<float>& mutable_grad() { return d_->g; }
    void zero_grad() {
        if (d_->requires_grad) d_->g.assign(d_->v.size(), 0.0f);
    }

    std::shared_ptr<TensorData> data_ptr() const { return d_; }

    // BCHW accessor for image-shaped tensors
    float& at4(int b, int c, int y, int x) {
        const Shape& s = d_->shape;
        return d_->v[((static_cast<std::size_t>(b) * s[1] + c) * s[2] + y) * s[3] + x];
    }
    float at4(int b, int c, int y, int x) const {
        const Shape& s = d_->shape;
        return d_->v[((static_cast<std::size_t>(b) * s[1] + c) * s[2] + y) * s[3] + x];
    }

    bool same_shape(const Tensor& o) const { return d_->shape == o.d_->shape; }

    void check_finite(const char* what) const {
        for (float x : d_->v)
            if (!std::isfinite(x))
                throw NumericError(std::string("non-finite value in ") + what);
    }

private:
    std::shared_ptr<TensorData> d_;
};

// Reverse-mode tape: ops are recorded in forward (topological) order and
// replayed once each, in reverse, by backward().
class Tape {
public:
    void record(std::function<void()> backward_fn) {
        ops_.push_back(std::move(backward_fn));
    }
    std::size_t size() const { return ops_.size(); }
    void clear() { ops_.clear(); }

    void run_backward() {
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> ops_;
};

// True when the op should participate in grad tracking.
inline bool track(const Tape* tape, std::initializer_list<const Tensor*> inputs) {
    if (!tape) return false;
    for (const Tensor* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

inline void backward(const Tensor& loss, Tape& tape) {
    if (loss.numel() != 1)
        throw ShapeError("backward() requires a scalar loss");
    if (!loss.requires_grad())
        throw ShapeError("backward() on a tensor with no grad tracking");
    auto d = loss.data_ptr();
    d->g[0] = 1.0f;
    tape.run_backward();
}

} // namespace amfusion
