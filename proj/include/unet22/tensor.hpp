#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <vector>

#include "unet22/common.hpp"

namespace unet22 {

// Dense tensor storage. Layout is contiguous row-major; the canonical image
// order is batch x channel x height x width. `grad` stays empty until the
// first accumulation. Rank 0 (scalar) through rank 4 are supported.
template <typename S>
struct TensorDataT {
    std::vector<int> shape;
    std::vector<S> data;
    std::vector<S> grad;
    bool requires_grad = false;
};

// Shared-handle tensor. Copies alias the same storage; clone() deep-copies.
template <typename S>
class TensorT {
  public:
    using Scalar = S;

    TensorT() = default;

    explicit TensorT(std::vector<int> shape, bool requires_grad = false) {
        if (shape.size() > 4)
            throw ShapeError("tensor rank " + std::to_string(shape.size()) + " exceeds 4");
        for (int e : shape)
            if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
        d_ = std::make_shared<TensorDataT<S>>();
        d_->shape = std::move(shape);
        d_->data.assign(static_cast<size_t>(shape_numel(d_->shape)), S(0));
        d_->requires_grad = requires_grad;
    }

    static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
        return TensorT(std::move(shape), requires_grad);
    }

    static TensorT full(std::vector<int> shape, S value, bool requires_grad = false) {
        TensorT t(std::move(shape), requires_grad);
        std::fill(t.vec().begin(), t.vec().end(), value);
        return t;
    }

    static TensorT from_data(std::vector<int> shape, std::vector<S> data,
                             bool requires_grad = false) {
        TensorT t(std::move(shape), requires_grad);
        if (static_cast<int64_t>(data.size()) != t.numel())
            throw ShapeError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(t.shape()));
        t.vec() = std::move(data);
        return t;
    }

    static TensorT randn(std::vector<int> shape, Rng& rng, S stddev = S(1),
                         bool requires_grad = false) {
        TensorT t(std::move(shape), requires_grad);
        for (auto& v : t.vec()) v = static_cast<S>(rng.normal()) * stddev;
        return t;
    }

    static TensorT uniform(std::vector<int> shape, Rng& rng, S lo, S hi,
                           bool requires_grad = false) {
        TensorT t(std::move(shape), requires_grad);
        for (auto& v : t.vec()) v = static_cast<S>(rng.uniform(lo, hi));
        return t;
    }

    static TensorT scalar(S value, bool requires_grad = false) {
        TensorT t(std::vector<int>{}, requires_grad);
        t.vec()[0] = value;
        return t;
    }

    bool defined() const { return static_cast<bool>(d_); }

    const std::vector<int>& shape() const { return d_->shape; }
    int rank() const { return static_cast<int>(d_->shape.size()); }
    int size(int axis) const { return d_->shape[static_cast<size_t>(axis)]; }
    int64_t numel() const { return static_cast<int64_t>(d_->data.size()); }

    S* data() { return d_->data.data(); }
    const S* data() const { return d_->data.data(); }
    std::vector<S>& vec() { return d_->data; }
    const std::vector<S>& vec() const { return d_->data; }

    S item() const {
        if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
        return d_->data[0];
    }

    S& operator()(int i) { return d_->data[static_cast<size_t>(offset({i}))]; }
    S& operator()(int i, int j) { return d_->data[static_cast<size_t>(offset({i, j}))]; }
    S& operator()(int i, int j, int k) { return d_->data[static_cast<size_t>(offset({i, j, k}))]; }
    S& operator()(int i, int j, int k, int l) {
        return d_->data[static_cast<size_t>(offset({i, j, k, l}))];
    }
    S operator()(int i) const { return d_->data[static_cast<size_t>(offset({i}))]; }
    S operator()(int i, int j) const { return d_->data[static_cast<size_t>(offset({i, j}))]; }
    S operator()(int i, int j, int k) const {
        return d_->data[static_cast<size_t>(offset({i, j, k}))];
    }
    S operator()(int i, int j, int k, int l) const {
        return d_->data[static_cast<size_t>(offset({i, j, k, l}))];
    }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool on) { d_->requires_grad = on; }

    bool has_grad() const { return !d_->grad.empty(); }

    // Gradient access is shallow-const: a const handle still reaches the
    // shared buffer, which is what backward closures capture. Allocates a
    // zero buffer on first use.
    std::vector<S>& grad_vec() const {
        if (d_->grad.empty()) d_->grad.assign(d_->data.size(), S(0));
        return d_->grad;
    }
    S* grad() const { return grad_vec().data(); }

    void clear_grad() const { d_->grad.clear(); }

    TensorT clone() const {
        TensorT t;
        t.d_ = std::make_shared<TensorDataT<S>>(*d_);
        return t;
    }

    void fill(S value) { std::fill(d_->data.begin(), d_->data.end(), value); }

    bool same_storage(const TensorT& other) const { return d_ == other.d_; }
    const void* id() const { return d_.get(); }

  private:
    int64_t offset(std::initializer_list<int> idx) const {
        if (static_cast<int>(idx.size()) != rank())
            throw ContractError("index rank mismatch on shape " + shape_str(shape()));
        int64_t off = 0;
        auto it = idx.begin();
        for (int a = 0; a < rank(); ++a, ++it) {
            if (*it < 0 || *it >= d_->shape[static_cast<size_t>(a)])
                throw ContractError("index out of range on shape " + shape_str(shape()));
            off = off * d_->shape[static_cast<size_t>(a)] + *it;
        }
        return off;
    }

    std::shared_ptr<TensorDataT<S>> d_;
};

using TensorF = TensorT<float>;
using TensorD = TensorT<double>;

// Integer label grid for segmentation masks, rank 2 [H,W] or rank 3 [N,H,W].
struct IntGrid {
    std::vector<int> shape;
    std::vector<int32_t> v;

    IntGrid() = default;
    explicit IntGrid(std::vector<int> s) : shape(std::move(s)) {
        v.assign(static_cast<size_t>(shape_numel(shape)), 0);
    }

    int rank() const { return static_cast<int>(shape.size()); }
    int64_t numel() const { return static_cast<int64_t>(v.size()); }

    int32_t& at(int y, int x) { return v[static_cast<size_t>(y) * shape[1] + x]; }
    int32_t at(int y, int x) const { return v[static_cast<size_t>(y) * shape[1] + x]; }
    int32_t& at(int n, int y, int x) {
        return v[(static_cast<size_t>(n) * shape[1] + y) * shape[2] + x];
    }
    int32_t at(int n, int y, int x) const {
        return v[(static_cast<size_t>(n) * shape[1] + y) * shape[2] + x];
    }

    bool operator==(const IntGrid& o) const { return shape == o.shape && v == o.v; }
};

template <typename S>
inline void check_finite(const char* op, const TensorT<S>& t) {
    if (!finite_checks_enabled()) return;
    for (const S& x : t.vec()) {
        if (!std::isfinite(static_cast<double>(x)))
            throw NumericError(std::string(op) + ": non-finite value in output of shape " +
                               shape_str(t.shape()));
    }
}

}  // namespace unet22
