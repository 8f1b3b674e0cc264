#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "regtext/error.hpp"

namespace regtext {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
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

// Dense row-major n-dimensional value. Gradients live alongside the data so
// parameters can persist across the per-step computation graphs that
// reference them; `leaf` marks tensors whose grads accumulate across
// backward passes (parameters and inputs), as opposed to op results whose
// grads are scratch space reset by each backward sweep.
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    bool leaf = true;

    Tensor() = default;
    Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        check(shape_numel(shape) == data.size(), "tensor: shape ", shape_str(shape),
              " does not match buffer length ", data.size());
    }

    std::size_t size() const { return data.size(); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }

    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
    }
};

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

template <typename T>
TensorPtr<T> make_tensor(Shape shape, std::vector<T> data) {
    return std::make_shared<Tensor<T>>(std::move(shape), std::move(data));
}

template <typename T>
TensorPtr<T> make_tensor(Shape shape, T fill = T(0)) {
    std::vector<T> data(shape_numel(shape), fill);
    return std::make_shared<Tensor<T>>(std::move(shape), std::move(data));
}

// L2 norm accumulated in double regardless of T.
template <typename T>
double l2_norm(const T* v, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(v[i]) * static_cast<double>(v[i]);
    return std::sqrt(acc);
}

// v / max(||v||, eps); the zero vector maps to itself. Operates on raw
// values, outside any computation graph: perturbations are constants.
template <typename T>
void l2_normalize_inplace(T* v, std::size_t n) {
    constexpr double eps = 1e-12;
    const double norm = l2_norm(v, n);
    if (norm <= eps) return;  // degenerate input stays zero
    const double inv = 1.0 / norm;
    for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<T>(static_cast<double>(v[i]) * inv);
}

// Per-example normalization over the flattened trailing dims of [b x ...].
template <typename T>
void l2_normalize_rows(Tensor<T>& t) {
    check(!t.shape.empty(), "l2_normalize: scalar input has no example axis");
    const std::size_t b = t.shape[0];
    const std::size_t stride = b ? t.size() / b : 0;
    for (std::size_t i = 0; i < b; ++i) l2_normalize_inplace(t.data.data() + i * stride, stride);
}

template <typename T>
TensorPtr<T> l2_normalized(const Tensor<T>& t) {
    auto out = make_tensor<T>(t.shape, std::vector<T>(t.data));
    l2_normalize_rows(*out);
    return out;
}

}  // namespace regtext
