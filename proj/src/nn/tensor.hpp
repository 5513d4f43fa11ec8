#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "util/errors.hpp"

namespace dk::nn {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& s) {
    std::int64_t n = 1;
    for (const auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Dense N-d array storage. Written once by its producing op; the grad buffer
// is materialized lazily during backward.
template <typename T>
struct TensorData {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;         // empty until first accumulation
    bool requires_grad = false;  // leaf parameter
    bool on_tape = false;        // produced by a recorded op of the live tape

    std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }

    void ensure_grad() {
        if (grad.empty()) grad.assign(values.size(), T(0));
    }
};

// Shared-ownership handle. Cheap to copy; ops hold their operands alive
// through the tape closures.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, bool requires_grad = false)
        : d_(std::make_shared<TensorData<T>>()) {
        for (const auto dim : shape) {
            if (dim <= 0) throw ValidationError("tensor dimensions must be positive, got " + shape_str(shape));
        }
        d_->shape = std::move(shape);
        d_->values.assign(static_cast<std::size_t>(numel(d_->shape)), T(0));
        d_->requires_grad = requires_grad;
    }

    static Tensor from_values(Shape shape, std::vector<T> values, bool requires_grad = false) {
        Tensor t(std::move(shape), requires_grad);
        if (static_cast<std::int64_t>(values.size()) != t.size()) {
            throw ValidationError("value count does not match shape " + shape_str(t.shape()));
        }
        t.d_->values = std::move(values);
        return t;
    }

    static Tensor scalar(T v) { return from_values({1}, {v}); }

    static Tensor full(Shape shape, T v) {
        Tensor t(std::move(shape));
        for (auto& x : t.d_->values) x = v;
        return t;
    }

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d_->shape; }
    std::int64_t size() const { return d_->size(); }
    std::int64_t dim(std::size_t i) const { return d_->shape.at(i); }
    std::size_t rank() const { return d_->shape.size(); }

    const T* data() const { return d_->values.data(); }
    T* data() { return d_->values.data(); }
    const std::vector<T>& values() const { return d_->values; }
    std::vector<T>& values() { return d_->values; }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool v) { d_->requires_grad = v; }
    bool on_tape() const { return d_->on_tape; }
    bool tracked() const { return d_->requires_grad || d_->on_tape; }

    bool has_grad() const { return !d_->grad.empty(); }
    const std::vector<T>& grad() const { return d_->grad; }
    std::vector<T>& grad() { return d_->grad; }
    void zero_grad() { d_->grad.clear(); }

    T item() const {
        if (size() != 1) throw ValidationError("item() on non-scalar tensor " + shape_str(shape()));
        return d_->values[0];
    }

    std::shared_ptr<TensorData<T>> impl() const { return d_; }

private:
    std::shared_ptr<TensorData<T>> d_;
};

}  // namespace dk::nn
