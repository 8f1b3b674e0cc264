#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "regtext/error.hpp"
#include "regtext/rng.hpp"
#include "regtext/tensor.hpp"

namespace regtext {

// Reverse-mode tape over dense tensors. Ops execute eagerly and append a
// backward closure; the tape order is the topological order, so backward()
// is a single reverse sweep visiting each op exactly once.
//
// Gradient semantics: leaf tensors (parameters, inputs) accumulate grads
// across backward calls until explicitly zeroed; op-result grads are scratch
// buffers reset at the start of every backward sweep.
template <typename T>
class Graph {
public:
    explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool grad_enabled() const { return grad_enabled_; }

    // ---- tensor construction -------------------------------------------

    TensorPtr<T> leaf(Shape shape, std::vector<T> data, bool requires_grad) {
        auto t = make_tensor<T>(std::move(shape), std::move(data));
        t->requires_grad = requires_grad && grad_enabled_;
        t->leaf = true;
        if (t->requires_grad) t->ensure_grad();
        return t;
    }

    TensorPtr<T> constant(Shape shape, std::vector<T> data) {
        return leaf(std::move(shape), std::move(data), false);
    }

    TensorPtr<T> scalar_constant(T v) { return constant({1}, {v}); }

    // Attaches an externally owned tensor (a model parameter) to this graph.
    // Grad accumulates into the tensor's own buffer.
    TensorPtr<T> use(const TensorPtr<T>& t) {
        if (t->requires_grad) t->ensure_grad();
        return t;
    }

    // ---- elementwise ----------------------------------------------------

    TensorPtr<T> add(const TensorPtr<T>& a, const TensorPtr<T>& b) {
        return binary_op("add", a, b,
                         [](T x, T y) { return x + y; },
                         [](T, T, T) { return T(1); },
                         [](T, T, T) { return T(1); });
    }

    TensorPtr<T> sub(const TensorPtr<T>& a, const TensorPtr<T>& b) {
        return binary_op("sub", a, b,
                         [](T x, T y) { return x - y; },
                         [](T, T, T) { return T(1); },
                         [](T, T, T) { return T(-1); });
    }

    TensorPtr<T> mul(const TensorPtr<T>& a, const TensorPtr<T>& b) {
        return binary_op("mul", a, b,
                         [](T x, T y) { return x * y; },
                         [](T, T y, T) { return y; },
                         [](T x, T, T) { return x; });
    }

    TensorPtr<T> maximum(const TensorPtr<T>& a, const TensorPtr<T>& b) {
        // ties route the gradient to the first argument
        return binary_op("maximum", a, b,
                         [](T x, T y) { return x >= y ? x : y; },
                         [](T x, T y, T) { return x >= y ? T(1) : T(0); },
                         [](T x, T y, T) { return x >= y ? T(0) : T(1); });
    }

    TensorPtr<T> neg(const TensorPtr<T>& x) {
        return unary_op("neg", x, [](T v) { return -v; },
                        [](T, T) { return T(-1); });
    }

    TensorPtr<T> exp_(const TensorPtr<T>& x) {
        return unary_op("exp", x, [](T v) { return std::exp(v); },
                        [](T, T y) { return y; });
    }

    // log clamps its argument at a tiny positive floor so the op is total;
    // gradient is zero in the clamped region.
    TensorPtr<T> log_(const TensorPtr<T>& x) {
        return unary_op("log", x,
                        [](T v) {
                            const T floor = T(1e-30);
                            return std::log(v < floor ? floor : v);
                        },
                        [](T v, T) {
                            const T floor = T(1e-30);
                            return v < floor ? T(0) : T(1) / v;
                        });
    }

    TensorPtr<T> tanh_(const TensorPtr<T>& x) {
        return unary_op("tanh", x, [](T v) { return std::tanh(v); },
                        [](T, T y) { return T(1) - y * y; });
    }

    TensorPtr<T> sigmoid(const TensorPtr<T>& x) {
        return unary_op("sigmoid", x,
                        [](T v) {
                            if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
                            const T e = std::exp(v);
                            return e / (T(1) + e);
                        },
                        [](T, T y) { return y * (T(1) - y); });
    }

    TensorPtr<T> relu(const TensorPtr<T>& x) {
        return unary_op("relu", x, [](T v) { return v > T(0) ? v : T(0); },
                        [](T v, T) { return v > T(0) ? T(1) : T(0); });
    }

    TensorPtr<T> scale(const TensorPtr<T>& x, T c) {
        return unary_op("scale", x, [c](T v) { return c * v; },
                        [c](T, T) { return c; });
    }

    // Elementwise multiply by a constant buffer (dropout masks, padding
    // masks). The mask carries no gradient.
    TensorPtr<T> apply_mask(const TensorPtr<T>& x, const std::vector<T>& mask) {
        check(mask.size() == x->size(), "apply_mask: mask length ", mask.size(),
              " does not match tensor ", shape_str(x->shape));
        auto out = result(x->shape, x->requires_grad);
        for (std::size_t i = 0; i < mask.size(); ++i) out->data[i] = x->data[i] * mask[i];
        if (out->requires_grad) {
            record("apply_mask", [x, out, mask]() {
                if (!x->requires_grad) return;
                for (std::size_t i = 0; i < mask.size(); ++i) x->grad[i] += out->grad[i] * mask[i];
            });
        }
        return out;
    }

    // Adds a constant buffer elementwise (mask tricks for pooling).
    TensorPtr<T> add_constant(const TensorPtr<T>& x, const std::vector<T>& c) {
        check(c.size() == x->size(), "add_constant: buffer length ", c.size(),
              " does not match tensor ", shape_str(x->shape));
        auto out = result(x->shape, x->requires_grad);
        for (std::size_t i = 0; i < c.size(); ++i) out->data[i] = x->data[i] + c[i];
        if (out->requires_grad) {
            record("add_constant", [x, out]() {
                if (!x->requires_grad) return;
                for (std::size_t i = 0; i < out->grad.size(); ++i) x->grad[i] += out->grad[i];
            });
        }
        return out;
    }

    // ---- linear algebra --------------------------------------------------

    TensorPtr<T> matmul(const TensorPtr<T>& a, const TensorPtr<T>& b) {
        check(a->shape.size() == 2 && b->shape.size() == 2, "matmul: operands must be rank 2, got ",
              shape_str(a->shape), " and ", shape_str(b->shape));
        const std::size_t m = a->shape[0], k = a->shape[1];
        const std::size_t k2 = b->shape[0], n = b->shape[1];
        check(k == k2, "matmul: inner extents differ: ", shape_str(a->shape), " vs ", shape_str(b->shape));
        auto out = result({m, n}, a->requires_grad || b->requires_grad);
        gemm(a->data.data(), b->data.data(), out->data.data(), m, k, n);
        if (out->requires_grad) {
            record("matmul", [a, b, out, m, k, n]() {
                // dA = G * B^T ; dB = A^T * G
                const T* g = out->grad.data();
                if (a->requires_grad) {
                    T* ga = a->grad.data();
                    const T* bd = b->data.data();
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) {
                            const T gij = g[i * n + j];
                            if (gij == T(0)) continue;
                            const T* brow = bd + j;
                            for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gij * brow[p * n];
                        }
                }
                if (b->requires_grad) {
                    T* gb = b->grad.data();
                    const T* ad = a->data.data();
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                            const T aip = ad[i * k + p];
                            if (aip == T(0)) continue;
                            const T* grow = g + i * n;
                            T* gbrow = gb + p * n;
                            for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
                        }
                }
            });
        }
        return out;
    }

    TensorPtr<T> add_bias(const TensorPtr<T>& x, const TensorPtr<T>& bias) {
        check(x->shape.size() == 2, "add_bias: input must be rank 2, got ", shape_str(x->shape));
        check(bias->shape.size() == 1 && bias->shape[0] == x->shape[1],
              "add_bias: bias ", shape_str(bias->shape), " does not match columns of ", shape_str(x->shape));
        const std::size_t m = x->shape[0], n = x->shape[1];
        auto out = result(x->shape, x->requires_grad || bias->requires_grad);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out->data[i * n + j] = x->data[i * n + j] + bias->data[j];
        if (out->requires_grad) {
            record("add_bias", [x, bias, out, m, n]() {
                if (x->requires_grad)
                    for (std::size_t i = 0; i < m * n; ++i) x->grad[i] += out->grad[i];
                if (bias->requires_grad)
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) bias->grad[j] += out->grad[i * n + j];
            });
        }
        return out;
    }

    // ---- shape manipulation ----------------------------------------------

    TensorPtr<T> reshape(const TensorPtr<T>& x, Shape shape) {
        check(shape_numel(shape) == x->size(), "reshape: ", shape_str(x->shape), " to ",
              shape_str(shape), " changes element count");
        auto out = result(shape, x->requires_grad);
        out->data = x->data;
        if (out->requires_grad) {
            record("reshape", [x, out]() {
                if (!x->requires_grad) return;
                for (std::size_t i = 0; i < out->grad.size(); ++i) x->grad[i] += out->grad[i];
            });
        }
        return out;
    }

    TensorPtr<T> concat_cols(const TensorPtr<T>& a, const TensorPtr<T>& b) {
        check(a->shape.size() == 2 && b->shape.size() == 2 && a->shape[0] == b->shape[0],
              "concat_cols: need matching row counts, got ", shape_str(a->shape), " and ",
              shape_str(b->shape));
        const std::size_t m = a->shape[0], p = a->shape[1], q = b->shape[1];
        auto out = result({m, p + q}, a->requires_grad || b->requires_grad);
        for (std::size_t i = 0; i < m; ++i) {
            std::copy_n(a->data.data() + i * p, p, out->data.data() + i * (p + q));
            std::copy_n(b->data.data() + i * q, q, out->data.data() + i * (p + q) + p);
        }
        if (out->requires_grad) {
            record("concat_cols", [a, b, out, m, p, q]() {
                for (std::size_t i = 0; i < m; ++i) {
                    const T* g = out->grad.data() + i * (p + q);
                    if (a->requires_grad)
                        for (std::size_t j = 0; j < p; ++j) a->grad[i * p + j] += g[j];
                    if (b->requires_grad)
                        for (std::size_t j = 0; j < q; ++j) b->grad[i * q + j] += g[p + j];
                }
            });
        }
        return out;
    }

    TensorPtr<T> slice_cols(const TensorPtr<T>& x, std::size_t lo, std::size_t hi) {
        check(x->shape.size() == 2 && lo < hi && hi <= x->shape[1], "slice_cols: range [", lo, ",",
              hi, ") invalid for ", shape_str(x->shape));
        const std::size_t m = x->shape[0], n = x->shape[1], w = hi - lo;
        auto out = result({m, w}, x->requires_grad);
        for (std::size_t i = 0; i < m; ++i)
            std::copy_n(x->data.data() + i * n + lo, w, out->data.data() + i * w);
        if (out->requires_grad) {
            record("slice_cols", [x, out, m, n, lo, w]() {
                if (!x->requires_grad) return;
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < w; ++j) x->grad[i * n + lo + j] += out->grad[i * w + j];
            });
        }
        return out;
    }

    // [b,T,d] -> [b,d] at fixed timestep
    TensorPtr<T> slice_time(const TensorPtr<T>& x, std::size_t t) {
        check(x->shape.size() == 3 && t < x->shape[1], "slice_time: t=", t, " invalid for ",
              shape_str(x->shape));
        const std::size_t b = x->shape[0], time = x->shape[1], d = x->shape[2];
        auto out = result({b, d}, x->requires_grad);
        for (std::size_t i = 0; i < b; ++i)
            std::copy_n(x->data.data() + (i * time + t) * d, d, out->data.data() + i * d);
        if (out->requires_grad) {
            record("slice_time", [x, out, b, time, d, t]() {
                if (!x->requires_grad) return;
                for (std::size_t i = 0; i < b; ++i)
                    for (std::size_t j = 0; j < d; ++j)
                        x->grad[(i * time + t) * d + j] += out->grad[i * d + j];
            });
        }
        return out;
    }

    // stacks per-timestep feature matrices [b,f] into [b,T,f]
    TensorPtr<T> stack_time(const std::vector<TensorPtr<T>>& parts) {
        check(!parts.empty(), "stack_time: empty sequence");
        const std::size_t b = parts[0]->shape[0], f = parts[0]->shape[1], time = parts.size();
        bool needs = false;
        for (const auto& p : parts) {
            check(p->shape.size() == 2 && p->shape[0] == b && p->shape[1] == f,
                  "stack_time: inconsistent part shape ", shape_str(p->shape));
            needs = needs || p->requires_grad;
        }
        auto out = result({b, time, f}, needs);
        for (std::size_t t = 0; t < time; ++t)
            for (std::size_t i = 0; i < b; ++i)
                std::copy_n(parts[t]->data.data() + i * f, f, out->data.data() + (i * time + t) * f);
        if (out->requires_grad) {
            record("stack_time", [parts, out, b, time, f]() {
                for (std::size_t t = 0; t < time; ++t) {
                    if (!parts[t]->requires_grad) continue;
                    for (std::size_t i = 0; i < b; ++i)
                        for (std::size_t j = 0; j < f; ++j)
                            parts[t]->grad[i * f + j] += out->grad[(i * time + t) * f + j];
                }
            });
        }
        return out;
    }

    // Embedding rows for an id matrix: E[V,d], ids[b*T] -> [b,T,d].
    TensorPtr<T> lookup(const TensorPtr<T>& table, const std::vector<std::int32_t>& ids,
                        std::size_t b, std::size_t time) {
        check(table->shape.size() == 2, "lookup: table must be rank 2, got ", shape_str(table->shape));
        check(ids.size() == b * time, "lookup: id count ", ids.size(), " != ", b, "*", time);
        const std::size_t v = table->shape[0], d = table->shape[1];
        for (std::int32_t id : ids)
            check(id >= 0 && static_cast<std::size_t>(id) < v, "lookup: token index ", id,
                  " outside table of ", v, " rows");
        auto out = result({b, time, d}, table->requires_grad);
        for (std::size_t i = 0; i < ids.size(); ++i)
            std::copy_n(table->data.data() + static_cast<std::size_t>(ids[i]) * d, d,
                        out->data.data() + i * d);
        if (out->requires_grad) {
            record("lookup", [table, out, ids, d]() {
                if (!table->requires_grad) return;
                for (std::size_t i = 0; i < ids.size(); ++i) {
                    T* dst = table->grad.data() + static_cast<std::size_t>(ids[i]) * d;
                    const T* src = out->grad.data() + i * d;
                    for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                }
            });
        }
        return out;
    }

    // Unrolls time windows for 1-D convolution: [b,T,d] -> [b*W, width*d]
    // where window w of example i starts at timestep w*stride - pad and
    // out-of-range positions are implicit zeros. Emits every window whose
    // span intersects [0,T) - the window set over a document must not depend
    // on how far the batch happens to be padded.
    TensorPtr<T> im2col_time(const TensorPtr<T>& x, std::size_t width, std::size_t stride,
                             std::size_t pad) {
        check(x->shape.size() == 3, "im2col_time: want [b,T,d], got ", shape_str(x->shape));
        check(width >= 1 && stride >= 1, "im2col_time: width and stride must be positive");
        check(pad < width, "im2col_time: pad ", pad, " must be smaller than width ", width);
        const std::size_t b = x->shape[0], time = x->shape[1], d = x->shape[2];
        const std::size_t windows = (time + pad - 1) / stride + 1;  // starts below T
        auto out = result({b * windows, width * d}, x->requires_grad);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t w = 0; w < windows; ++w) {
                T* dst = out->data.data() + (i * windows + w) * width * d;
                const std::ptrdiff_t start =
                    static_cast<std::ptrdiff_t>(w * stride) - static_cast<std::ptrdiff_t>(pad);
                for (std::size_t o = 0; o < width; ++o) {
                    const std::ptrdiff_t t = start + static_cast<std::ptrdiff_t>(o);
                    if (t >= 0 && t < static_cast<std::ptrdiff_t>(time))
                        std::copy_n(x->data.data() + (i * time + static_cast<std::size_t>(t)) * d,
                                    d, dst + o * d);
                }
            }
        if (out->requires_grad) {
            record("im2col_time", [x, out, b, time, d, width, stride, pad, windows]() {
                if (!x->requires_grad) return;
                for (std::size_t i = 0; i < b; ++i)
                    for (std::size_t w = 0; w < windows; ++w) {
                        const T* g = out->grad.data() + (i * windows + w) * width * d;
                        const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(w * stride) -
                                                     static_cast<std::ptrdiff_t>(pad);
                        for (std::size_t o = 0; o < width; ++o) {
                            const std::ptrdiff_t t = start + static_cast<std::ptrdiff_t>(o);
                            if (t < 0 || t >= static_cast<std::ptrdiff_t>(time)) continue;
                            T* dst = x->grad.data() + (i * time + static_cast<std::size_t>(t)) * d;
                            for (std::size_t j = 0; j < d; ++j) dst[j] += g[o * d + j];
                        }
                    }
            });
        }
        return out;
    }

    // out[i,:] = m[i]*a[i,:] + (1-m[i])*b[i,:] with a constant per-row mask;
    // the masked LSTM recurrence freezes state across padding positions.
    TensorPtr<T> blend_rows(const TensorPtr<T>& a, const TensorPtr<T>& b, const std::vector<T>& m) {
        check(a->shape == b->shape && a->shape.size() == 2, "blend_rows: shapes ",
              shape_str(a->shape), " and ", shape_str(b->shape), " must match and be rank 2");
        check(m.size() == a->shape[0], "blend_rows: mask length ", m.size(), " != rows ", a->shape[0]);
        const std::size_t rows = a->shape[0], n = a->shape[1];
        auto out = result(a->shape, a->requires_grad || b->requires_grad);
        for (std::size_t i = 0; i < rows; ++i) {
            const T mi = m[i];
            for (std::size_t j = 0; j < n; ++j)
                out->data[i * n + j] = mi * a->data[i * n + j] + (T(1) - mi) * b->data[i * n + j];
        }
        if (out->requires_grad) {
            record("blend_rows", [a, b, out, m, rows, n]() {
                for (std::size_t i = 0; i < rows; ++i) {
                    const T mi = m[i];
                    for (std::size_t j = 0; j < n; ++j) {
                        const T g = out->grad[i * n + j];
                        if (a->requires_grad) a->grad[i * n + j] += mi * g;
                        if (b->requires_grad) b->grad[i * n + j] += (T(1) - mi) * g;
                    }
                }
            });
        }
        return out;
    }

    // out[i,:] = f[i] * x[i,:] with constant per-row factors (1/length).
    TensorPtr<T> scale_rows(const TensorPtr<T>& x, const std::vector<T>& f) {
        check(x->shape.size() == 2 && f.size() == x->shape[0], "scale_rows: factor length ",
              f.size(), " does not match ", shape_str(x->shape));
        const std::size_t rows = x->shape[0], n = x->shape[1];
        auto out = result(x->shape, x->requires_grad);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < n; ++j) out->data[i * n + j] = f[i] * x->data[i * n + j];
        if (out->requires_grad) {
            record("scale_rows", [x, out, f, rows, n]() {
                if (!x->requires_grad) return;
                for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < n; ++j) x->grad[i * n + j] += f[i] * out->grad[i * n + j];
            });
        }
        return out;
    }

    // ---- reductions -------------------------------------------------------

    TensorPtr<T> sum(const TensorPtr<T>& x, std::size_t axis) {
        auto [outer, n, inner] = axis_split(x, axis, "sum");
        auto out = result(reduced_shape(x->shape, axis), x->requires_grad);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t j = 0; j < inner; ++j) {
                double acc = 0.0;
                for (std::size_t i = 0; i < n; ++i)
                    acc += static_cast<double>(x->data[(o * n + i) * inner + j]);
                out->data[o * inner + j] = static_cast<T>(acc);
            }
        if (out->requires_grad) {
            record("sum", [x, out, outer, n, inner]() {
                if (!x->requires_grad) return;
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < inner; ++j)
                            x->grad[(o * n + i) * inner + j] += out->grad[o * inner + j];
            });
        }
        return out;
    }

    TensorPtr<T> mean(const TensorPtr<T>& x, std::size_t axis) {
        auto [outer, n, inner] = axis_split(x, axis, "mean");
        auto out = result(reduced_shape(x->shape, axis), x->requires_grad);
        const double invn = 1.0 / static_cast<double>(n);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t j = 0; j < inner; ++j) {
                double acc = 0.0;
                for (std::size_t i = 0; i < n; ++i)
                    acc += static_cast<double>(x->data[(o * n + i) * inner + j]);
                out->data[o * inner + j] = static_cast<T>(acc * invn);
            }
        if (out->requires_grad) {
            const T invt = static_cast<T>(invn);
            record("mean", [x, out, outer, n, inner, invt]() {
                if (!x->requires_grad) return;
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < inner; ++j)
                            x->grad[(o * n + i) * inner + j] += invt * out->grad[o * inner + j];
            });
        }
        return out;
    }

    struct MaxReduce {
        TensorPtr<T> value;
        std::vector<std::size_t> argmax;  // index along the reduced axis, per output element
    };

    // max along an axis; gradient routes only to the argmax position and
    // ties resolve to the lowest index.
    MaxReduce max(const TensorPtr<T>& x, std::size_t axis) {
        auto [outer, n, inner] = axis_split(x, axis, "max");
        auto out = result(reduced_shape(x->shape, axis), x->requires_grad);
        auto argmax = std::make_shared<std::vector<std::size_t>>(outer * inner, 0);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t j = 0; j < inner; ++j) {
                T best = x->data[(o * n + 0) * inner + j];
                std::size_t best_i = 0;
                for (std::size_t i = 1; i < n; ++i) {
                    const T v = x->data[(o * n + i) * inner + j];
                    if (v > best) {
                        best = v;
                        best_i = i;
                    }
                }
                out->data[o * inner + j] = best;
                (*argmax)[o * inner + j] = best_i;
            }
        if (out->requires_grad) {
            record("max", [x, out, argmax, outer, n, inner]() {
                if (!x->requires_grad) return;
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t j = 0; j < inner; ++j)
                        x->grad[(o * n + (*argmax)[o * inner + j]) * inner + j] +=
                            out->grad[o * inner + j];
            });
        }
        return {out, *argmax};
    }

    TensorPtr<T> sum_all(const TensorPtr<T>& x) {
        auto out = result({1}, x->requires_grad);
        double acc = 0.0;
        for (const T v : x->data) acc += static_cast<double>(v);
        out->data[0] = static_cast<T>(acc);
        if (out->requires_grad) {
            record("sum_all", [x, out]() {
                if (!x->requires_grad) return;
                const T g = out->grad[0];
                for (std::size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += g;
            });
        }
        return out;
    }

    // Length-masked mean over the time axis of [b,T,d]. Summands are
    // accumulated in ascending value order so the result is invariant under
    // any permutation of a document's tokens, exactly, in floating point.
    TensorPtr<T> masked_mean_time(const TensorPtr<T>& x, const std::vector<int>& lengths) {
        check(x->shape.size() == 3, "masked_mean_time: want [b,T,d], got ", shape_str(x->shape));
        const std::size_t b = x->shape[0], time = x->shape[1], d = x->shape[2];
        check(lengths.size() == b, "masked_mean_time: lengths size ", lengths.size(), " != batch ", b);
        for (std::size_t i = 0; i < b; ++i)
            check(lengths[i] >= 1 && static_cast<std::size_t>(lengths[i]) <= time,
                  "masked_mean_time: length ", lengths[i], " invalid for T=", time,
                  " (a zero-length document cannot be pooled)");
        auto out = result({b, d}, x->requires_grad);
        std::vector<T> vals;
        for (std::size_t i = 0; i < b; ++i) {
            const std::size_t len = static_cast<std::size_t>(lengths[i]);
            for (std::size_t j = 0; j < d; ++j) {
                vals.clear();
                for (std::size_t t = 0; t < len; ++t) vals.push_back(x->data[(i * time + t) * d + j]);
                std::sort(vals.begin(), vals.end());
                double acc = 0.0;
                for (const T v : vals) acc += static_cast<double>(v);
                out->data[i * d + j] = static_cast<T>(acc / static_cast<double>(len));
            }
        }
        if (out->requires_grad) {
            record("masked_mean_time", [x, out, lengths, b, time, d]() {
                if (!x->requires_grad) return;
                for (std::size_t i = 0; i < b; ++i) {
                    const std::size_t len = static_cast<std::size_t>(lengths[i]);
                    const T inv = T(1) / static_cast<T>(len);
                    for (std::size_t t = 0; t < len; ++t)
                        for (std::size_t j = 0; j < d; ++j)
                            x->grad[(i * time + t) * d + j] += inv * out->grad[i * d + j];
                }
            });
        }
        return out;
    }

    // ---- probability losses -----------------------------------------------

    // Row-wise stabilized softmax over [b,k].
    TensorPtr<T> softmax(const TensorPtr<T>& x) {
        check(x->shape.size() == 2, "softmax: want [b,k], got ", shape_str(x->shape));
        const std::size_t b = x->shape[0], k = x->shape[1];
        auto out = result(x->shape, x->requires_grad);
        for (std::size_t i = 0; i < b; ++i) {
            const T* row = x->data.data() + i * k;
            T m = row[0];
            for (std::size_t j = 1; j < k; ++j) m = std::max(m, row[j]);
            double z = 0.0;
            for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j] - m));
            const double invz = 1.0 / z;
            for (std::size_t j = 0; j < k; ++j)
                out->data[i * k + j] =
                    static_cast<T>(std::exp(static_cast<double>(row[j] - m)) * invz);
        }
        if (out->requires_grad) {
            record("softmax", [x, out, b, k]() {
                if (!x->requires_grad) return;
                for (std::size_t i = 0; i < b; ++i) {
                    const T* p = out->data.data() + i * k;
                    const T* g = out->grad.data() + i * k;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < k; ++j)
                        dot += static_cast<double>(g[j]) * static_cast<double>(p[j]);
                    for (std::size_t j = 0; j < k; ++j)
                        x->grad[i * k + j] += p[j] * (g[j] - static_cast<T>(dot));
                }
            });
        }
        return out;
    }

    // Mean over the batch of -log softmax(logits)[label]; fused for
    // numerical stability (log-sum-exp with max subtraction).
    TensorPtr<T> softmax_cross_entropy(const TensorPtr<T>& logits, const std::vector<int>& labels) {
        check(logits->shape.size() == 2, "softmax_cross_entropy: want [b,k], got ",
              shape_str(logits->shape));
        const std::size_t b = logits->shape[0], k = logits->shape[1];
        check(labels.size() == b, "softmax_cross_entropy: ", labels.size(), " labels for batch ", b);
        for (int y : labels)
            check(y >= 0 && static_cast<std::size_t>(y) < k, "softmax_cross_entropy: label ", y,
                  " outside [0,", k, ")");
        auto probs = std::make_shared<std::vector<T>>(b * k);
        double total = 0.0;
        for (std::size_t i = 0; i < b; ++i) {
            const T* row = logits->data.data() + i * k;
            T m = row[0];
            for (std::size_t j = 1; j < k; ++j) m = std::max(m, row[j]);
            double z = 0.0;
            for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j] - m));
            const double logz = std::log(z) + static_cast<double>(m);
            total += logz - static_cast<double>(row[labels[i]]);
            for (std::size_t j = 0; j < k; ++j)
                (*probs)[i * k + j] = static_cast<T>(std::exp(static_cast<double>(row[j]) - logz));
        }
        auto out = result({1}, logits->requires_grad);
        out->data[0] = static_cast<T>(total / static_cast<double>(b));
        if (out->requires_grad) {
            record("softmax_cross_entropy", [logits, out, probs, labels, b, k]() {
                if (!logits->requires_grad) return;
                const T g = out->grad[0] / static_cast<T>(b);
                for (std::size_t i = 0; i < b; ++i)
                    for (std::size_t j = 0; j < k; ++j) {
                        T p = (*probs)[i * k + j];
                        if (j == static_cast<std::size_t>(labels[i])) p -= T(1);
                        logits->grad[i * k + j] += g * p;
                    }
            });
        }
        return out;
    }

    // Mean over the batch of sum_j p log(p/q), with epsilon clamping inside
    // the logs. The first argument is treated as constant: gradient flows
    // through q only, matching how the consistency losses use it.
    TensorPtr<T> kld(const TensorPtr<T>& p, const TensorPtr<T>& q) {
        validate_distribution(p, "kld(p,.)");
        validate_distribution(q, "kld(.,q)");
        check(p->shape == q->shape, "kld: shapes differ: ", shape_str(p->shape), " vs ",
              shape_str(q->shape));
        const std::size_t b = p->shape[0], k = p->shape[1];
        auto out = result({1}, q->requires_grad);
        double total = 0.0;
        for (std::size_t i = 0; i < b * k; ++i) {
            const double pi = static_cast<double>(p->data[i]);
            if (pi <= 0.0) continue;
            const double pc = std::max(pi, kProbEps);
            const double qc = std::max(static_cast<double>(q->data[i]), kProbEps);
            total += pi * (std::log(pc) - std::log(qc));
        }
        out->data[0] = static_cast<T>(total / static_cast<double>(b));
        if (out->requires_grad) {
            record("kld", [p, q, out, b, k]() {
                if (!q->requires_grad) return;
                const T g = out->grad[0] / static_cast<T>(b);
                for (std::size_t i = 0; i < b * k; ++i) {
                    const double qi = static_cast<double>(q->data[i]);
                    if (qi < kProbEps) continue;  // clamped region: zero slope
                    q->grad[i] += g * static_cast<T>(-static_cast<double>(p->data[i]) / qi);
                }
            });
        }
        return out;
    }

    // Mean of squared elementwise differences; flows through both arguments.
    TensorPtr<T> mse(const TensorPtr<T>& p, const TensorPtr<T>& q) {
        validate_distribution(p, "mse(p,.)");
        validate_distribution(q, "mse(.,q)");
        check(p->shape == q->shape, "mse: shapes differ: ", shape_str(p->shape), " vs ",
              shape_str(q->shape));
        const std::size_t n = p->size();
        auto out = result({1}, p->requires_grad || q->requires_grad);
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = static_cast<double>(p->data[i]) - static_cast<double>(q->data[i]);
            total += d * d;
        }
        out->data[0] = static_cast<T>(total / static_cast<double>(n));
        if (out->requires_grad) {
            record("mse", [p, q, out, n]() {
                const T g = out->grad[0] * T(2) / static_cast<T>(n);
                for (std::size_t i = 0; i < n; ++i) {
                    const T d = p->data[i] - q->data[i];
                    if (p->requires_grad) p->grad[i] += g * d;
                    if (q->requires_grad) q->grad[i] -= g * d;
                }
            });
        }
        return out;
    }

    // Mean over the batch of -sum_j p log p (epsilon-clamped log).
    TensorPtr<T> entropy(const TensorPtr<T>& p) {
        validate_distribution(p, "entropy");
        const std::size_t b = p->shape[0], k = p->shape[1];
        auto out = result({1}, p->requires_grad);
        double total = 0.0;
        for (std::size_t i = 0; i < b * k; ++i) {
            const double pi = static_cast<double>(p->data[i]);
            total -= pi * std::log(std::max(pi, kProbEps));
        }
        out->data[0] = static_cast<T>(total / static_cast<double>(b));
        if (out->requires_grad) {
            record("entropy", [p, out, b, k]() {
                if (!p->requires_grad) return;
                const T g = out->grad[0] / static_cast<T>(b);
                for (std::size_t i = 0; i < b * k; ++i) {
                    const double pi = static_cast<double>(p->data[i]);
                    const double lp = std::log(std::max(pi, kProbEps));
                    const double slope = pi >= kProbEps ? -(lp + 1.0) : -lp;
                    p->grad[i] += g * static_cast<T>(slope);
                }
            });
        }
        return out;
    }

    // Detached copy: same values, no gradient history.
    TensorPtr<T> detach(const TensorPtr<T>& x) { return constant(x->shape, x->data); }

    // ---- dropout ------------------------------------------------------------

    // Inverted dropout. Masks are drawn through make_dropout_mask so the
    // clean/perturbed branches of a consistency loss can share one mask.
    TensorPtr<T> dropout(const TensorPtr<T>& x, double rate, Rng& rng, bool training) {
        if (!training || rate == 0.0) return x;
        return apply_mask(x, make_dropout_mask<T>(x->size(), rate, rng));
    }

    // ---- backward -------------------------------------------------------------

    void backward(const TensorPtr<T>& loss) {
        check(loss->size() == 1, "backward: loss must be scalar, got ", shape_str(loss->shape));
        check(loss->requires_grad, "backward: loss does not require grad");
        // op-result grads are per-sweep scratch; leaf grads accumulate
        for (auto& r : results_) r->zero_grad();
        loss->ensure_grad();
        loss->grad[0] += T(1);
        for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
    }

    std::size_t num_ops() const { return tape_.size(); }

private:
    static constexpr double kProbEps = 1e-8;

    bool grad_enabled_;
    std::vector<std::function<void()>> tape_;
    std::vector<TensorPtr<T>> results_;

    TensorPtr<T> result(Shape shape, bool requires_grad) {
        auto t = make_tensor<T>(std::move(shape));
        t->leaf = false;
        t->requires_grad = requires_grad && grad_enabled_;
        if (t->requires_grad) {
            t->ensure_grad();
            results_.push_back(t);
        }
        return t;
    }

    void record(const char*, std::function<void()> fn) { tape_.push_back(std::move(fn)); }

    static Shape reduced_shape(const Shape& s, std::size_t axis) {
        Shape out;
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis) out.push_back(s[i]);
        if (out.empty()) out.push_back(1);
        return out;
    }

    std::tuple<std::size_t, std::size_t, std::size_t> axis_split(const TensorPtr<T>& x,
                                                                 std::size_t axis,
                                                                 const char* op) {
        check(axis < x->shape.size(), op, ": axis ", axis, " invalid for ", shape_str(x->shape));
        check(x->shape[axis] > 0, op, ": empty extent along axis ", axis, " of ",
              shape_str(x->shape));
        std::size_t outer = 1, inner = 1;
        for (std::size_t i = 0; i < axis; ++i) outer *= x->shape[i];
        for (std::size_t i = axis + 1; i < x->shape.size(); ++i) inner *= x->shape[i];
        return {outer, x->shape[axis], inner};
    }

    void validate_distribution(const TensorPtr<T>& p, const char* op) {
        check(p->shape.size() == 2, op, ": want [b,k], got ", shape_str(p->shape));
        const std::size_t b = p->shape[0], k = p->shape[1];
        for (std::size_t i = 0; i < b; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < k; ++j) s += static_cast<double>(p->data[i * k + j]);
            check(std::abs(s - 1.0) <= 1e-6, op, ": row ", i, " sums to ", s,
                  ", not a probability vector");
        }
    }

    static void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
        for (std::size_t i = 0; i < m; ++i) {
            T* crow = c + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const T aip = a[i * k + p];
                if (aip == T(0)) continue;
                const T* brow = b + p * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
            }
        }
    }

    // Broadcast rules: exact shape match, or either side scalar.
    template <typename FwdFn, typename DaFn, typename DbFn>
    TensorPtr<T> binary_op(const char* name, const TensorPtr<T>& a, const TensorPtr<T>& b,
                           FwdFn fwd, DaFn da, DbFn db) {
        const bool a_scalar = a->size() == 1, b_scalar = b->size() == 1;
        check(a->shape == b->shape || a_scalar || b_scalar, name, ": shapes ",
              shape_str(a->shape), " and ", shape_str(b->shape),
              " are not broadcast-compatible (exact match or scalar only)");
        const Shape& out_shape = a_scalar && !b_scalar ? b->shape : a->shape;
        const std::size_t n = shape_numel(out_shape);
        auto out = result(out_shape, a->requires_grad || b->requires_grad);
        for (std::size_t i = 0; i < n; ++i)
            out->data[i] = fwd(a->data[a_scalar ? 0 : i], b->data[b_scalar ? 0 : i]);
        if (out->requires_grad) {
            record(name, [a, b, out, da, db, n, a_scalar, b_scalar]() {
                for (std::size_t i = 0; i < n; ++i) {
                    const T av = a->data[a_scalar ? 0 : i];
                    const T bv = b->data[b_scalar ? 0 : i];
                    const T g = out->grad[i];
                    if (a->requires_grad) a->grad[a_scalar ? 0 : i] += g * da(av, bv, out->data[i]);
                    if (b->requires_grad) b->grad[b_scalar ? 0 : i] += g * db(av, bv, out->data[i]);
                }
            });
        }
        return out;
    }

    template <typename FwdFn, typename DFn>
    TensorPtr<T> unary_op(const char* name, const TensorPtr<T>& x, FwdFn fwd, DFn dfn) {
        const std::size_t n = x->size();
        auto out = result(x->shape, x->requires_grad);
        for (std::size_t i = 0; i < n; ++i) out->data[i] = fwd(x->data[i]);
        if (out->requires_grad) {
            record(name, [x, out, dfn, n]() {
                if (!x->requires_grad) return;
                for (std::size_t i = 0; i < n; ++i)
                    x->grad[i] += out->grad[i] * dfn(x->data[i], out->data[i]);
            });
        }
        return out;
    }
};

// Inverted-dropout mask: each element is 0 with probability `rate`, else
// 1/(1-rate). rate must lie in [0,1).
template <typename T>
std::vector<T> make_dropout_mask(std::size_t n, double rate, Rng& rng) {
    check(rate >= 0.0 && rate < 1.0, "dropout: rate ", rate, " outside [0,1)");
    std::vector<T> mask(n);
    const T keep = static_cast<T>(1.0 / (1.0 - rate));
    for (std::size_t i = 0; i < n; ++i) mask[i] = rng.uniform() < rate ? T(0) : keep;
    return mask;
}

}  // namespace regtext
