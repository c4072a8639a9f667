#pragma once

#include <optional>

#include "decap/ops.hpp"

namespace decap {

// Masked logits use a large negative constant instead of -inf so gradients
// stay finite; the resulting weights are < 1e-30.
inline constexpr Real kMaskedLogit = -1e9;

/// Train/eval context threaded through every stochastic layer.
struct Mode {
    bool train = false;
    Real dropout = 0.0;       // residual + attention dropout (shared rate)
    Real input_dropout = 0.0; // 1-D dropout on the visual input embedding
    std::mt19937_64* rng = nullptr;

    std::mt19937_64& gen() {
        if (!rng) throw std::logic_error("Mode: train-time rng not set");
        return *rng;
    }
};

inline Mode eval_mode() { return Mode{}; }

/// Per-head projections stacked row-wise: rows [j*d/H, (j+1)*d/H) of wq/wk/wv
/// are head j's (d/H) x d projection. wo is the d x d output projection.
struct MultiHeadParams {
    std::size_t heads = 1;
    TensorPtr wq, wk, wv; // each [d x d]
    TensorPtr wo;         // [d x d]
};

/// mask(tq) -> keep-vector over key positions; empty optional = attend to all.
using AttendMask = std::optional<std::vector<bool>>;

inline std::vector<bool> causal_mask(std::size_t t, std::size_t T) {
    if (t < 1 || t > T)
        throw std::out_of_range("causal_mask: position " + std::to_string(t) +
                                " outside [1, " + std::to_string(T) + "]");
    std::vector<bool> m(T, false);
    for (std::size_t i = 0; i < t; ++i) m[i] = true;
    return m;
}

namespace detail {

// Adds kMaskedLogit to masked entries of a [Tq x Tk] score matrix.
inline TensorPtr apply_score_mask(const TensorPtr& scores,
                                  const std::vector<std::vector<bool>>& keep) {
    const std::size_t tq = scores->shape[0], tk = scores->shape[1];
    std::vector<Real> add_mask(tq * tk, 0.0);
    for (std::size_t i = 0; i < tq; ++i) {
        bool any = false;
        for (std::size_t j = 0; j < tk; ++j) {
            if (keep[i][j])
                any = true;
            else
                add_mask[i * tk + j] = kMaskedLogit;
        }
        if (!any) throw std::invalid_argument("attention: all key positions masked");
    }
    auto m = Tensor::create({tq, tk}, std::move(add_mask));
    return add(scores, m);
}

} // namespace detail

/// Attention over row-major matrices: q [Tq x dh], k/v [Tk x dh].
/// Scale defaults to 1/sqrt(dh). keep_rows, when present, must have one
/// keep-vector per query row.
inline TensorPtr attention_rows(const TensorPtr& q, const TensorPtr& k, const TensorPtr& v,
                                const std::vector<std::vector<bool>>* keep_rows = nullptr,
                                Mode* mode = nullptr) {
    if (q->shape.size() != 2 || k->shape.size() != 2 || v->shape.size() != 2)
        throw std::invalid_argument("attention: rank-2 inputs required");
    if (k->shape[0] != v->shape[0] || k->shape[1] != q->shape[1])
        throw std::invalid_argument("attention: key/value shapes inconsistent with query");
    const Real scl = 1.0 / std::sqrt(static_cast<Real>(q->shape[1]));
    TensorPtr scores = scale(matmul(q, transpose(k)), scl);
    if (keep_rows) scores = detail::apply_score_mask(scores, *keep_rows);
    TensorPtr weights = softmax(scores, 1);
    if (mode && mode->train && mode->dropout > 0.0)
        weights = dropout(weights, mode->dropout, true, mode->gen());
    return matmul(weights, v);
}

/// Scaled dot-product attention with the column-major layout: K, V are
/// [d x T] with one key/value per column; returns the attended d-vector.
inline TensorPtr scaled_dot_attention(const TensorPtr& q, const TensorPtr& K, const TensorPtr& V,
                                      const AttendMask& attend = std::nullopt) {
    if (q->shape.size() != 1 || K->shape.size() != 2 || V->shape.size() != 2)
        throw std::invalid_argument("scaled_dot_attention: expected q[d], K[d x T], V[d x T]");
    if (K->shape[0] != q->shape[0] || K->shape[1] != V->shape[1] || V->shape[0] != q->shape[0])
        throw std::invalid_argument("scaled_dot_attention: shape mismatch q" + shape_str(q->shape) +
                                    " K" + shape_str(K->shape) + " V" + shape_str(V->shape));
    const std::size_t T = K->shape[1];
    if (attend) {
        if (attend->size() != T) throw std::invalid_argument("scaled_dot_attention: mask length");
        if (std::none_of(attend->begin(), attend->end(), [](bool b) { return b; }))
            throw std::invalid_argument("scaled_dot_attention: all positions masked");
    }
    const Real scl = 1.0 / std::sqrt(static_cast<Real>(q->shape[0]));
    TensorPtr logits = scale(matvec(transpose(K), q), scl); // [T]
    if (attend) {
        std::vector<Real> addv(T, 0.0);
        for (std::size_t i = 0; i < T; ++i)
            if (!(*attend)[i]) addv[i] = kMaskedLogit;
        logits = add(logits, Tensor::create({T}, std::move(addv)));
    }
    TensorPtr weights = softmax(logits, 0);
    return matvec(V, weights);
}

/// Multi-head attention over matrices: queries [Tq x d], keys/values [Tkv x d].
/// keep_rows optionally masks key positions per query row.
inline TensorPtr multi_head_rows(const TensorPtr& queries, const TensorPtr& keys,
                                 const TensorPtr& values, const MultiHeadParams& p,
                                 const std::vector<std::vector<bool>>* keep_rows = nullptr,
                                 Mode* mode = nullptr) {
    const std::size_t d = queries->shape[1];
    if (p.heads == 0 || d % p.heads != 0)
        throw std::invalid_argument("multi_head: model width " + std::to_string(d) +
                                    " not divisible by " + std::to_string(p.heads) + " heads");
    const std::size_t dh = d / p.heads;
    TensorPtr Q = matmul(queries, transpose(p.wq));
    TensorPtr K = matmul(keys, transpose(p.wk));
    TensorPtr V = matmul(values, transpose(p.wv));
    std::vector<TensorPtr> heads;
    heads.reserve(p.heads);
    for (std::size_t j = 0; j < p.heads; ++j) {
        auto qj = slice_cols(Q, j * dh, (j + 1) * dh);
        auto kj = slice_cols(K, j * dh, (j + 1) * dh);
        auto vj = slice_cols(V, j * dh, (j + 1) * dh);
        heads.push_back(attention_rows(qj, kj, vj, keep_rows, mode));
    }
    TensorPtr cat = p.heads == 1 ? heads[0] : concat(heads, 1);
    return matmul(cat, transpose(p.wo));
}

/// Single-query multi-head attention, K and V column-major ([d x T]).
inline TensorPtr multi_head(const TensorPtr& q, const TensorPtr& K, const TensorPtr& V,
                            const MultiHeadParams& p, const AttendMask& attend = std::nullopt) {
    if (q->shape.size() != 1) throw std::invalid_argument("multi_head: q must be a vector");
    auto q_row = reshape(q, {1, q->shape[0]});
    std::vector<std::vector<bool>> keep;
    const std::vector<std::vector<bool>>* kp = nullptr;
    if (attend) {
        keep.assign(1, *attend);
        kp = &keep;
    }
    TensorPtr out_row = multi_head_rows(q_row, transpose(K), transpose(V), p, kp, nullptr);
    return reshape(out_row, {out_row->shape[1]});
}

} // namespace decap
