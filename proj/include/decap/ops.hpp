#pragma once

#include <cmath>
#include <random>

#include "decap/tensor.hpp"

namespace decap {

// ---------------------------------------------------------------------------
// linear algebra

inline TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0])
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a->shape) +
                                    " and " + shape_str(b->shape));
    const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
    std::vector<Real> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const Real av = a->data[i * k + p];
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j)
                out[i * n + j] += av * b->data[p * n + j];
        }
    return Tensor::make_node({a, b}, {m, n}, std::move(out), [a, b, m, k, n](Tensor& o) {
        if (a->on_tape()) {
            a->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    Real s = 0.0;
                    for (std::size_t j = 0; j < n; ++j)
                        s += o.grad[i * n + j] * b->data[p * n + j];
                    a->grad[i * k + p] += s;
                }
        }
        if (b->on_tape()) {
            b->ensure_grad();
            for (std::size_t p = 0; p < k; ++p)
                for (std::size_t j = 0; j < n; ++j) {
                    Real s = 0.0;
                    for (std::size_t i = 0; i < m; ++i)
                        s += a->data[i * k + p] * o.grad[i * n + j];
                    b->grad[p * n + j] += s;
                }
        }
    });
}

inline TensorPtr transpose(const TensorPtr& a) {
    if (a->shape.size() != 2)
        throw std::invalid_argument("transpose: rank-2 tensor required, got " + shape_str(a->shape));
    const std::size_t m = a->shape[0], n = a->shape[1];
    std::vector<Real> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out[j * m + i] = a->data[i * n + j];
    return Tensor::make_node({a}, {n, m}, std::move(out), [a, m, n](Tensor& o) {
        if (!a->on_tape()) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                a->grad[i * n + j] += o.grad[j * m + i];
    });
}

inline TensorPtr matvec(const TensorPtr& a, const TensorPtr& x) {
    if (a->shape.size() != 2 || x->shape.size() != 1 || a->shape[1] != x->shape[0])
        throw std::invalid_argument("matvec: incompatible shapes " + shape_str(a->shape) +
                                    " and " + shape_str(x->shape));
    const std::size_t m = a->shape[0], n = a->shape[1];
    std::vector<Real> out(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        Real s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += a->data[i * n + j] * x->data[j];
        out[i] = s;
    }
    return Tensor::make_node({a, x}, {m}, std::move(out), [a, x, m, n](Tensor& o) {
        if (a->on_tape()) {
            a->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    a->grad[i * n + j] += o.grad[i] * x->data[j];
        }
        if (x->on_tape()) {
            x->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    x->grad[j] += a->data[i * n + j] * o.grad[i];
        }
    });
}

// ---------------------------------------------------------------------------
// elementwise

inline void check_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
    if (a->shape != b->shape)
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a->shape) + " vs " + shape_str(b->shape));
}

inline TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape(a, b, "add");
    std::vector<Real> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] + b->data[i];
    return Tensor::make_node({a, b}, a->shape, std::move(out), [a, b](Tensor& o) {
        if (a->on_tape()) {
            a->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i];
        }
        if (b->on_tape()) {
            b->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) b->grad[i] += o.grad[i];
        }
    });
}

inline TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape(a, b, "sub");
    std::vector<Real> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] - b->data[i];
    return Tensor::make_node({a, b}, a->shape, std::move(out), [a, b](Tensor& o) {
        if (a->on_tape()) {
            a->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i];
        }
        if (b->on_tape()) {
            b->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) b->grad[i] -= o.grad[i];
        }
    });
}

inline TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape(a, b, "mul");
    std::vector<Real> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] * b->data[i];
    return Tensor::make_node({a, b}, a->shape, std::move(out), [a, b](Tensor& o) {
        if (a->on_tape()) {
            a->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i] * b->data[i];
        }
        if (b->on_tape()) {
            b->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) b->grad[i] += o.grad[i] * a->data[i];
        }
    });
}

inline TensorPtr scale(const TensorPtr& a, Real c) {
    std::vector<Real> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] * c;
    return Tensor::make_node({a}, a->shape, std::move(out), [a, c](Tensor& o) {
        if (!a->on_tape()) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i] * c;
    });
}

inline TensorPtr add_const(const TensorPtr& a, Real c) {
    std::vector<Real> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] + c;
    return Tensor::make_node({a}, a->shape, std::move(out), [a](Tensor& o) {
        if (!a->on_tape()) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i];
    });
}

/// c - a, elementwise.
inline TensorPtr rsub_const(Real c, const TensorPtr& a) {
    std::vector<Real> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c - a->data[i];
    return Tensor::make_node({a}, a->shape, std::move(out), [a](Tensor& o) {
        if (!a->on_tape()) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) a->grad[i] -= o.grad[i];
    });
}

/// Scalar tensor times tensor.
inline TensorPtr smul(const TensorPtr& s, const TensorPtr& a) {
    if (s->size() != 1) throw std::invalid_argument("smul: first operand must be scalar");
    const Real sv = s->data[0];
    std::vector<Real> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sv * a->data[i];
    return Tensor::make_node({s, a}, a->shape, std::move(out), [s, a, sv](Tensor& o) {
        if (s->on_tape()) {
            s->ensure_grad();
            Real acc = 0.0;
            for (std::size_t i = 0; i < o.grad.size(); ++i) acc += o.grad[i] * a->data[i];
            s->grad[0] += acc;
        }
        if (a->on_tape()) {
            a->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i] * sv;
        }
    });
}

/// Broadcast add of a row vector to every row of a matrix.
inline TensorPtr add_rowvec(const TensorPtr& a, const TensorPtr& v) {
    if (a->shape.size() != 2 || v->shape.size() != 1 || a->shape[1] != v->shape[0])
        throw std::invalid_argument("add_rowvec: incompatible shapes " + shape_str(a->shape) +
                                    " and " + shape_str(v->shape));
    const std::size_t m = a->shape[0], n = a->shape[1];
    std::vector<Real> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out[i * n + j] = a->data[i * n + j] + v->data[j];
    return Tensor::make_node({a, v}, a->shape, std::move(out), [a, v, m, n](Tensor& o) {
        if (a->on_tape()) {
            a->ensure_grad();
            for (std::size_t i = 0; i < m * n; ++i) a->grad[i] += o.grad[i];
        }
        if (v->on_tape()) {
            v->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    v->grad[j] += o.grad[i * n + j];
        }
    });
}

/// Scale each row of a T x d matrix by the matching entry of a length-T vector.
inline TensorPtr row_scale(const TensorPtr& a, const TensorPtr& m) {
    if (a->shape.size() != 2 || m->shape.size() != 1 || a->shape[0] != m->shape[0])
        throw std::invalid_argument("row_scale: incompatible shapes " + shape_str(a->shape) +
                                    " and " + shape_str(m->shape));
    const std::size_t rows = a->shape[0], cols = a->shape[1];
    std::vector<Real> out(rows * cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j)
            out[i * cols + j] = a->data[i * cols + j] * m->data[i];
    return Tensor::make_node({a, m}, a->shape, std::move(out), [a, m, rows, cols](Tensor& o) {
        if (a->on_tape()) {
            a->ensure_grad();
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j)
                    a->grad[i * cols + j] += o.grad[i * cols + j] * m->data[i];
        }
        if (m->on_tape()) {
            m->ensure_grad();
            for (std::size_t i = 0; i < rows; ++i) {
                Real s = 0.0;
                for (std::size_t j = 0; j < cols; ++j)
                    s += o.grad[i * cols + j] * a->data[i * cols + j];
                m->grad[i] += s;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// unary nonlinearities

inline TensorPtr relu(const TensorPtr& a) {
    std::vector<Real> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] > 0.0 ? a->data[i] : 0.0;
    return Tensor::make_node({a}, a->shape, std::move(out), [a](Tensor& o) {
        if (!a->on_tape()) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i)
            if (a->data[i] > 0.0) a->grad[i] += o.grad[i];
    });
}

inline TensorPtr sigmoid(const TensorPtr& a) {
    std::vector<Real> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const Real x = a->data[i];
        out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                          : std::exp(x) / (1.0 + std::exp(x));
    }
    // capture the output values through the node itself
    return Tensor::make_node({a}, a->shape, std::move(out), [a](Tensor& o) {
        if (!a->on_tape()) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i)
            a->grad[i] += o.grad[i] * o.data[i] * (1.0 - o.data[i]);
    });
}

inline TensorPtr exp(const TensorPtr& a) {
    std::vector<Real> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a->data[i]);
    return Tensor::make_node({a}, a->shape, std::move(out), [a](Tensor& o) {
        if (!a->on_tape()) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i] * o.data[i];
    });
}

inline TensorPtr log(const TensorPtr& a) {
    std::vector<Real> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(a->data[i] > 0.0))
            throw std::domain_error("log: non-positive input " + std::to_string(a->data[i]));
        out[i] = std::log(a->data[i]);
    }
    return Tensor::make_node({a}, a->shape, std::move(out), [a](Tensor& o) {
        if (!a->on_tape()) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i] / a->data[i];
    });
}

/// Clamp with pass-through gradient strictly inside [lo, hi].
inline TensorPtr clamp(const TensorPtr& a, Real lo, Real hi) {
    std::vector<Real> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, a->data[i]));
    return Tensor::make_node({a}, a->shape, std::move(out), [a, lo, hi](Tensor& o) {
        if (!a->on_tape()) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i)
            if (a->data[i] > lo && a->data[i] < hi) a->grad[i] += o.grad[i];
    });
}

// ---------------------------------------------------------------------------
// reductions

inline TensorPtr sum(const TensorPtr& a) {
    Real s = 0.0;
    for (Real v : a->data) s += v;
    return Tensor::make_node({a}, {1}, {s}, [a](Tensor& o) {
        if (!a->on_tape()) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += o.grad[0];
    });
}

inline TensorPtr mean(const TensorPtr& a) {
    const Real n = static_cast<Real>(a->size());
    Real s = 0.0;
    for (Real v : a->data) s += v;
    return Tensor::make_node({a}, {1}, {s / n}, [a, n](Tensor& o) {
        if (!a->on_tape()) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += o.grad[0] / n;
    });
}

/// Extract one element as a scalar tensor.
inline TensorPtr element(const TensorPtr& a, std::size_t idx) {
    if (idx >= a->size()) throw std::out_of_range("element: index out of range");
    return Tensor::make_node({a}, {1}, {a->data[idx]}, [a, idx](Tensor& o) {
        if (!a->on_tape()) return;
        a->ensure_grad();
        a->grad[idx] += o.grad[0];
    });
}

// ---------------------------------------------------------------------------
// softmax / layer norm

/// Shift-stable softmax along the given axis.
inline TensorPtr softmax(const TensorPtr& a, std::size_t axis) {
    if (axis >= a->shape.size())
        throw std::invalid_argument("softmax: axis out of range for " + shape_str(a->shape));
    for (Real v : a->data)
        if (!std::isfinite(v)) throw std::domain_error("softmax: non-finite input");
    const std::size_t n = a->shape[axis];
    std::size_t inner = 1, outer = 1;
    for (std::size_t i = axis + 1; i < a->shape.size(); ++i) inner *= a->shape[i];
    for (std::size_t i = 0; i < axis; ++i) outer *= a->shape[i];
    std::vector<Real> out(a->size());
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            Real mx = a->data[base];
            for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, a->data[base + k * inner]);
            Real z = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                out[base + k * inner] = std::exp(a->data[base + k * inner] - mx);
                z += out[base + k * inner];
            }
            for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= z;
        }
    return Tensor::make_node({a}, a->shape, std::move(out), [a, n, inner, outer](Tensor& o) {
        if (!a->on_tape()) return;
        a->ensure_grad();
        for (std::size_t ou = 0; ou < outer; ++ou)
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = ou * n * inner + in;
                Real dot = 0.0;
                for (std::size_t k = 0; k < n; ++k)
                    dot += o.grad[base + k * inner] * o.data[base + k * inner];
                for (std::size_t k = 0; k < n; ++k)
                    a->grad[base + k * inner] +=
                        o.data[base + k * inner] * (o.grad[base + k * inner] - dot);
            }
    });
}

/// Per-row normalization over the last axis, then affine gain/bias.
inline TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias,
                            Real eps = 1e-6) {
    if (x->shape.empty()) throw std::invalid_argument("layer_norm: scalar input");
    const std::size_t d = x->shape.back();
    if (gain->shape != std::vector<std::size_t>{d} || bias->shape != std::vector<std::size_t>{d})
        throw std::invalid_argument("layer_norm: gain/bias must have shape [d]");
    const std::size_t rows = x->size() / d;
    std::vector<Real> out(x->size()), mu(rows), istd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* xr = x->data.data() + r * d;
        Real m = 0.0;
        for (std::size_t j = 0; j < d; ++j) m += xr[j];
        m /= static_cast<Real>(d);
        Real v = 0.0;
        for (std::size_t j = 0; j < d; ++j) v += (xr[j] - m) * (xr[j] - m);
        v /= static_cast<Real>(d);
        mu[r] = m;
        istd[r] = 1.0 / std::sqrt(v + eps);
        for (std::size_t j = 0; j < d; ++j)
            out[r * d + j] = gain->data[j] * (xr[j] - m) * istd[r] + bias->data[j];
    }
    return Tensor::make_node(
        {x, gain, bias}, x->shape, std::move(out),
        [x, gain, bias, d, rows, mu = std::move(mu), istd = std::move(istd)](Tensor& o) {
            for (std::size_t r = 0; r < rows; ++r) {
                const Real* xr = x->data.data() + r * d;
                const Real* go = o.grad.data() + r * d;
                // dy w.r.t. normalized value
                std::vector<Real> dxhat(d);
                for (std::size_t j = 0; j < d; ++j) dxhat[j] = go[j] * gain->data[j];
                Real sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const Real xh = (xr[j] - mu[r]) * istd[r];
                    sum_dxhat += dxhat[j];
                    sum_dxhat_xhat += dxhat[j] * xh;
                }
                if (x->on_tape()) {
                    x->ensure_grad();
                    for (std::size_t j = 0; j < d; ++j) {
                        const Real xh = (xr[j] - mu[r]) * istd[r];
                        x->grad[r * d + j] +=
                            istd[r] / static_cast<Real>(d) *
                            (static_cast<Real>(d) * dxhat[j] - sum_dxhat - xh * sum_dxhat_xhat);
                    }
                }
                if (gain->on_tape()) {
                    gain->ensure_grad();
                    for (std::size_t j = 0; j < d; ++j)
                        gain->grad[j] += go[j] * (xr[j] - mu[r]) * istd[r];
                }
                if (bias->on_tape()) {
                    bias->ensure_grad();
                    for (std::size_t j = 0; j < d; ++j) bias->grad[j] += go[j];
                }
            }
        });
}

// ---------------------------------------------------------------------------
// convolution

/// 1-D convolution over the time axis. x: [T x c_in], kernels: [k x c_in x c_out],
/// symmetric zero padding on both sides. Output length floor((T + 2p - k)/stride) + 1.
inline TensorPtr conv1d(const TensorPtr& x, const TensorPtr& w, const TensorPtr& bias,
                        std::size_t stride, std::size_t padding) {
    if (x->shape.size() != 2 || w->shape.size() != 3 || x->shape[1] != w->shape[1])
        throw std::invalid_argument("conv1d: incompatible shapes " + shape_str(x->shape) +
                                    " and " + shape_str(w->shape));
    if (stride < 1) throw std::invalid_argument("conv1d: stride must be >= 1");
    const std::size_t T = x->shape[0], cin = x->shape[1];
    const std::size_t k = w->shape[0], cout = w->shape[2];
    if (bias->shape != std::vector<std::size_t>{cout})
        throw std::invalid_argument("conv1d: bias must have shape [c_out]");
    if (k > T + 2 * padding)
        throw std::invalid_argument("conv1d: kernel size " + std::to_string(k) +
                                    " exceeds padded length " + std::to_string(T + 2 * padding) +
                                    " (empty output)");
    const std::size_t To = (T + 2 * padding - k) / stride + 1;
    std::vector<Real> out(To * cout);
    for (std::size_t t = 0; t < To; ++t)
        for (std::size_t co = 0; co < cout; ++co) {
            Real s = bias->data[co];
            for (std::size_t ki = 0; ki < k; ++ki) {
                const std::ptrdiff_t ti =
                    static_cast<std::ptrdiff_t>(t * stride + ki) - static_cast<std::ptrdiff_t>(padding);
                if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(T)) continue;
                for (std::size_t ci = 0; ci < cin; ++ci)
                    s += x->data[ti * cin + ci] * w->data[(ki * cin + ci) * cout + co];
            }
            out[t * cout + co] = s;
        }
    return Tensor::make_node(
        {x, w, bias}, {To, cout}, std::move(out),
        [x, w, bias, stride, padding, T, cin, k, cout, To](Tensor& o) {
            const bool gx = x->on_tape(), gw = w->on_tape(), gb = bias->on_tape();
            if (gx) x->ensure_grad();
            if (gw) w->ensure_grad();
            if (gb) bias->ensure_grad();
            for (std::size_t t = 0; t < To; ++t)
                for (std::size_t co = 0; co < cout; ++co) {
                    const Real g = o.grad[t * cout + co];
                    if (g == 0.0) continue;
                    if (gb) bias->grad[co] += g;
                    for (std::size_t ki = 0; ki < k; ++ki) {
                        const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(t * stride + ki) -
                                                  static_cast<std::ptrdiff_t>(padding);
                        if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(T)) continue;
                        for (std::size_t ci = 0; ci < cin; ++ci) {
                            if (gx) x->grad[ti * cin + ci] += g * w->data[(ki * cin + ci) * cout + co];
                            if (gw) w->grad[(ki * cin + ci) * cout + co] += g * x->data[ti * cin + ci];
                        }
                    }
                }
        });
}

// ---------------------------------------------------------------------------
// concat / slices / embedding

inline TensorPtr concat(const std::vector<TensorPtr>& parts, std::size_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat: empty part list");
    const std::size_t rank = parts[0]->shape.size();
    if (axis >= rank) throw std::invalid_argument("concat: axis out of range");
    for (const auto& p : parts)
        if (p->shape.size() != rank)
            throw std::invalid_argument("concat: rank mismatch");
    std::vector<std::size_t> shape = parts[0]->shape;
    shape[axis] = 0;
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < rank; ++i)
            if (i != axis && p->shape[i] != parts[0]->shape[i])
                throw std::invalid_argument("concat: off-axis extent mismatch");
        shape[axis] += p->shape[axis];
    }
    std::size_t inner = 1, outer = 1;
    for (std::size_t i = axis + 1; i < rank; ++i) inner *= shape[i];
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    const std::size_t n_axis = shape[axis];
    std::size_t tot = outer * n_axis * inner;
    std::vector<Real> out(tot);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t pa = p->shape[axis];
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t a = 0; a < pa; ++a)
                for (std::size_t in = 0; in < inner; ++in)
                    out[(o * n_axis + off + a) * inner + in] = p->data[(o * pa + a) * inner + in];
        off += pa;
    }
    return Tensor::make_node(
        parts, shape, std::move(out), [parts, axis, inner, outer, n_axis](Tensor& o) {
            std::size_t off = 0;
            for (const auto& p : parts) {
                const std::size_t pa = p->shape[axis];
                if (p->on_tape()) {
                    p->ensure_grad();
                    for (std::size_t ou = 0; ou < outer; ++ou)
                        for (std::size_t a = 0; a < pa; ++a)
                            for (std::size_t in = 0; in < inner; ++in)
                                p->grad[(ou * pa + a) * inner + in] +=
                                    o.grad[(ou * n_axis + off + a) * inner + in];
                }
                off += pa;
            }
        });
}

/// Columns [c0, c1) of a matrix.
inline TensorPtr slice_cols(const TensorPtr& a, std::size_t c0, std::size_t c1) {
    if (a->shape.size() != 2 || c0 >= c1 || c1 > a->shape[1])
        throw std::invalid_argument("slice_cols: bad column range");
    const std::size_t m = a->shape[0], n = a->shape[1], w = c1 - c0;
    std::vector<Real> out(m * w);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a->data[i * n + c0 + j];
    return Tensor::make_node({a}, {m, w}, std::move(out), [a, m, n, c0, w](Tensor& o) {
        if (!a->on_tape()) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) a->grad[i * n + c0 + j] += o.grad[i * w + j];
    });
}

/// View with a new shape; same element count.
inline TensorPtr reshape(const TensorPtr& a, std::vector<std::size_t> s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    if (n != a->size())
        throw std::invalid_argument("reshape: element count mismatch " + shape_str(a->shape) +
                                    " -> " + shape_str(s));
    return Tensor::make_node({a}, std::move(s), a->data, [a](Tensor& o) {
        if (!a->on_tape()) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i];
    });
}

/// Row lookup: indices into the rows of an [n x d] table.
inline TensorPtr embedding(const TensorPtr& table, const std::vector<int>& indices) {
    if (table->shape.size() != 2) throw std::invalid_argument("embedding: table must be rank 2");
    const std::size_t n = table->shape[0], d = table->shape[1];
    for (int ix : indices)
        if (ix < 0 || static_cast<std::size_t>(ix) >= n)
            throw std::out_of_range("embedding: index " + std::to_string(ix) +
                                    " outside table of " + std::to_string(n) + " rows");
    std::vector<Real> out(indices.size() * d);
    for (std::size_t i = 0; i < indices.size(); ++i)
        std::copy_n(table->data.data() + indices[i] * d, d, out.data() + i * d);
    return Tensor::make_node({table}, {indices.size(), d}, std::move(out),
                             [table, indices, d](Tensor& o) {
                                 if (!table->on_tape()) return;
                                 table->ensure_grad();
                                 for (std::size_t i = 0; i < indices.size(); ++i)
                                     for (std::size_t j = 0; j < d; ++j)
                                         table->grad[indices[i] * d + j] += o.grad[i * d + j];
                             });
}

// ---------------------------------------------------------------------------
// batch norm / dropout

struct BatchNormState {
    std::vector<Real> running_mean;
    std::vector<Real> running_var;
    Real momentum = 0.9;

    explicit BatchNormState(std::size_t channels = 0, Real mom = 0.9)
        : running_mean(channels, 0.0), running_var(channels, 1.0), momentum(mom) {}
};

/// Per-channel normalization of an [N x C] batch. Train mode uses batch
/// statistics and updates the running ones; with N == 1 it falls back to the
/// running statistics. Eval mode always uses running statistics.
inline TensorPtr batch_norm1d(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                              BatchNormState& state, bool train, Real eps = 1e-5) {
    if (x->shape.size() != 2) throw std::invalid_argument("batch_norm1d: input must be rank 2");
    const std::size_t N = x->shape[0], C = x->shape[1];
    if (gamma->shape != std::vector<std::size_t>{C} || beta->shape != std::vector<std::size_t>{C})
        throw std::invalid_argument("batch_norm1d: gamma/beta must have shape [C]");
    if (state.running_mean.size() != C)
        throw std::invalid_argument("batch_norm1d: state channel mismatch");
    const bool use_batch = train && N > 1;
    std::vector<Real> mu(C), var(C);
    if (use_batch) {
        for (std::size_t c = 0; c < C; ++c) {
            Real m = 0.0;
            for (std::size_t i = 0; i < N; ++i) m += x->data[i * C + c];
            m /= static_cast<Real>(N);
            Real v = 0.0;
            for (std::size_t i = 0; i < N; ++i) {
                const Real dr = x->data[i * C + c] - m;
                v += dr * dr;
            }
            v /= static_cast<Real>(N);
            mu[c] = m;
            var[c] = v;
            state.running_mean[c] = state.momentum * state.running_mean[c] + (1.0 - state.momentum) * m;
            state.running_var[c] = state.momentum * state.running_var[c] + (1.0 - state.momentum) * v;
        }
    } else {
        mu = state.running_mean;
        var = state.running_var;
    }
    std::vector<Real> istd(C);
    for (std::size_t c = 0; c < C; ++c) istd[c] = 1.0 / std::sqrt(var[c] + eps);
    std::vector<Real> out(N * C);
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t c = 0; c < C; ++c)
            out[i * C + c] = gamma->data[c] * (x->data[i * C + c] - mu[c]) * istd[c] + beta->data[c];
    return Tensor::make_node(
        {x, gamma, beta}, x->shape, std::move(out),
        [x, gamma, beta, N, C, use_batch, mu = std::move(mu), istd = std::move(istd)](Tensor& o) {
            for (std::size_t c = 0; c < C; ++c) {
                Real sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (std::size_t i = 0; i < N; ++i) {
                    const Real xh = (x->data[i * C + c] - mu[c]) * istd[c];
                    sum_dy += o.grad[i * C + c];
                    sum_dy_xhat += o.grad[i * C + c] * xh;
                }
                if (gamma->on_tape()) {
                    gamma->ensure_grad();
                    gamma->grad[c] += sum_dy_xhat;
                }
                if (beta->on_tape()) {
                    beta->ensure_grad();
                    beta->grad[c] += sum_dy;
                }
                if (x->on_tape()) {
                    x->ensure_grad();
                    for (std::size_t i = 0; i < N; ++i) {
                        const Real xh = (x->data[i * C + c] - mu[c]) * istd[c];
                        Real dx;
                        if (use_batch) {
                            dx = gamma->data[c] * istd[c] / static_cast<Real>(N) *
                                 (static_cast<Real>(N) * o.grad[i * C + c] - sum_dy - xh * sum_dy_xhat);
                        } else {
                            // frozen statistics: plain affine transform
                            dx = gamma->data[c] * istd[c] * o.grad[i * C + c];
                        }
                        x->grad[i * C + c] += dx;
                    }
                }
            }
        });
}

/// Inverted-scaling dropout. Eval mode (train == false) is the identity.
/// With shared_rows, one mask over the last axis is reused for every row,
/// matching recurrent dropout over a sequence.
inline TensorPtr dropout(const TensorPtr& x, Real rate, bool train, std::mt19937_64& rng,
                         bool shared_rows = false) {
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
    if (!train || rate == 0.0) return x;
    const Real keep = 1.0 - rate;
    std::uniform_real_distribution<Real> uni(0.0, 1.0);
    std::vector<Real> mask;
    if (shared_rows) {
        if (x->shape.size() != 2) throw std::invalid_argument("dropout: shared_rows needs rank 2");
        const std::size_t cols = x->shape[1];
        std::vector<Real> colmask(cols);
        for (auto& m : colmask) m = uni(rng) < keep ? 1.0 / keep : 0.0;
        mask.resize(x->size());
        const std::size_t rows = x->shape[0];
        for (std::size_t i = 0; i < rows; ++i)
            std::copy(colmask.begin(), colmask.end(), mask.begin() + i * cols);
    } else {
        mask.resize(x->size());
        for (auto& m : mask) m = uni(rng) < keep ? 1.0 / keep : 0.0;
    }
    std::vector<Real> out(x->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->data[i] * mask[i];
    return Tensor::make_node({x}, x->shape, std::move(out), [x, mask = std::move(mask)](Tensor& o) {
        if (!x->on_tape()) return;
        x->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) x->grad[i] += o.grad[i] * mask[i];
    });
}

// ---------------------------------------------------------------------------
// losses

/// Mean cross entropy of row-wise logits against integer targets.
inline TensorPtr cross_entropy_logits(const TensorPtr& logits, const std::vector<int>& targets) {
    if (logits->shape.size() != 2 || logits->shape[0] != targets.size())
        throw std::invalid_argument("cross_entropy_logits: need [t x v] logits and t targets");
    const std::size_t t = logits->shape[0], v = logits->shape[1];
    for (int ix : targets)
        if (ix < 0 || static_cast<std::size_t>(ix) >= v)
            throw std::out_of_range("cross_entropy_logits: target out of vocabulary");
    std::vector<Real> probs(t * v);
    Real loss = 0.0;
    for (std::size_t i = 0; i < t; ++i) {
        const Real* row = logits->data.data() + i * v;
        Real mx = row[0];
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        Real z = 0.0;
        for (std::size_t j = 0; j < v; ++j) {
            probs[i * v + j] = std::exp(row[j] - mx);
            z += probs[i * v + j];
        }
        for (std::size_t j = 0; j < v; ++j) probs[i * v + j] /= z;
        loss -= std::log(std::max(probs[i * v + targets[i]], 1e-300));
    }
    loss /= static_cast<Real>(t);
    return Tensor::make_node({logits}, {1}, {loss},
                             [logits, targets, t, v, probs = std::move(probs)](Tensor& o) {
                                 if (!logits->on_tape()) return;
                                 logits->ensure_grad();
                                 const Real g = o.grad[0] / static_cast<Real>(t);
                                 for (std::size_t i = 0; i < t; ++i)
                                     for (std::size_t j = 0; j < v; ++j) {
                                         Real p = probs[i * v + j];
                                         if (j == static_cast<std::size_t>(targets[i])) p -= 1.0;
                                         logits->grad[i * v + j] += g * p;
                                     }
                             });
}

/// Mean binary cross entropy from logits against constant targets.
inline TensorPtr bce_with_logits(const TensorPtr& logits, const std::vector<Real>& targets) {
    if (logits->size() != targets.size())
        throw std::invalid_argument("bce_with_logits: size mismatch");
    const std::size_t n = logits->size();
    Real loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Real x = logits->data[i], t = targets[i];
        loss += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
    }
    loss /= static_cast<Real>(n);
    return Tensor::make_node({logits}, {1}, {loss}, [logits, targets, n](Tensor& o) {
        if (!logits->on_tape()) return;
        logits->ensure_grad();
        const Real g = o.grad[0] / static_cast<Real>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const Real x = logits->data[i];
            const Real s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
            logits->grad[i] += g * (s - targets[i]);
        }
    });
}

/// Mean binary cross entropy of probabilities against constant targets.
/// Probabilities are clamped away from {0,1}; gradient passes through the
/// unclamped region only.
inline TensorPtr bce_prob(const TensorPtr& probs, const std::vector<Real>& targets,
                          Real eps = 1e-12) {
    if (probs->size() != targets.size()) throw std::invalid_argument("bce_prob: size mismatch");
    const std::size_t n = probs->size();
    Real loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Real p = std::min(1.0 - eps, std::max(eps, probs->data[i]));
        loss -= targets[i] * std::log(p) + (1.0 - targets[i]) * std::log(1.0 - p);
    }
    loss /= static_cast<Real>(n);
    return Tensor::make_node({probs}, {1}, {loss}, [probs, targets, n, eps](Tensor& o) {
        if (!probs->on_tape()) return;
        probs->ensure_grad();
        const Real g = o.grad[0] / static_cast<Real>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const Real raw = probs->data[i];
            if (raw <= eps || raw >= 1.0 - eps) continue;
            probs->grad[i] += g * ((1.0 - targets[i]) / (1.0 - raw) - targets[i] / raw);
        }
    });
}

/// Mean smooth-L1 of (pred - target): 0.5 z^2 for |z| < 1, |z| - 0.5 otherwise.
inline TensorPtr smooth_l1(const TensorPtr& pred, const std::vector<Real>& target) {
    if (pred->size() != target.size()) throw std::invalid_argument("smooth_l1: size mismatch");
    const std::size_t n = pred->size();
    Real loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Real z = pred->data[i] - target[i];
        loss += std::abs(z) < 1.0 ? 0.5 * z * z : std::abs(z) - 0.5;
    }
    loss /= static_cast<Real>(n);
    return Tensor::make_node({pred}, {1}, {loss}, [pred, target, n](Tensor& o) {
        if (!pred->on_tape()) return;
        pred->ensure_grad();
        const Real g = o.grad[0] / static_cast<Real>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const Real z = pred->data[i] - target[i];
            pred->grad[i] += g * (std::abs(z) < 1.0 ? z : (z > 0.0 ? 1.0 : -1.0));
        }
    });
}

} // namespace decap
