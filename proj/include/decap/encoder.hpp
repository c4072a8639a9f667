#pragma once

#include "decap/attention.hpp"

namespace decap {

/// Sinusoidal positional encoding of a scalar position: even entries
/// sin(pos / 10000^(i/d)), odd entries cos(pos / 10000^((i-1)/d)).
inline std::vector<Real> pos_encode_values(Real pos, std::size_t d) {
    if (d % 2 != 0) throw std::invalid_argument("pos_encode: width must be even");
    std::vector<Real> out(d);
    for (std::size_t i = 0; i < d; i += 2) {
        const Real denom = std::pow(10000.0, static_cast<Real>(i) / static_cast<Real>(d));
        out[i] = std::sin(pos / denom);
        out[i + 1] = std::cos(pos / denom);
    }
    return out;
}

/// Positional encoding differentiable in the position itself (used by the
/// mask network, where the position is a predicted boundary).
inline TensorPtr pos_encode(const TensorPtr& pos, std::size_t d) {
    if (pos->size() != 1) throw std::invalid_argument("pos_encode: position must be scalar");
    if (d % 2 != 0) throw std::invalid_argument("pos_encode: width must be even");
    const Real p = pos->data[0];
    return Tensor::make_node({pos}, {d}, pos_encode_values(p, d), [pos, d, p](Tensor& o) {
        if (!pos->on_tape()) return;
        pos->ensure_grad();
        Real acc = 0.0;
        for (std::size_t i = 0; i < d; i += 2) {
            const Real denom = std::pow(10000.0, static_cast<Real>(i) / static_cast<Real>(d));
            acc += o.grad[i] * std::cos(p / denom) / denom;
            acc -= o.grad[i + 1] * std::sin(p / denom) / denom;
        }
        pos->grad[0] += acc;
    });
}

/// Constant [T x d] table of positional encodings for rows 0..T-1.
inline TensorPtr pos_encoding_matrix(std::size_t T, std::size_t d) {
    std::vector<Real> out;
    out.reserve(T * d);
    for (std::size_t t = 0; t < T; ++t) {
        auto row = pos_encode_values(static_cast<Real>(t), d);
        out.insert(out.end(), row.begin(), row.end());
    }
    return Tensor::create({T, d}, std::move(out));
}

/// X W^T + b for row-major X [n x in], W [out x in].
inline TensorPtr linear(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
    return add_rowvec(matmul(x, transpose(w)), b);
}

struct EncoderLayerParams {
    MultiHeadParams attn;
    TensorPtr ff_w1, ff_b1; // [d_ff x d], [d_ff]
    TensorPtr ff_w2, ff_b2; // [d x d_ff], [d]
    TensorPtr ln1_g, ln1_b;
    TensorPtr ln2_g, ln2_b;
};

/// Project frame features to model width, add positional encoding, apply the
/// sequence-shared input dropout.
inline TensorPtr embed_input(const TensorPtr& frames, const TensorPtr& w, const TensorPtr& b,
                             bool positional, Mode& mode) {
    TensorPtr h = linear(frames, w, b);
    if (positional) h = add(h, pos_encoding_matrix(h->shape[0], h->shape[1]));
    if (mode.train && mode.input_dropout > 0.0)
        h = dropout(h, mode.input_dropout, true, mode.gen(), /*shared_rows=*/true);
    return h;
}

/// One encoder block: self-attention and feed-forward, each wrapped in
/// residual + layer norm.
inline TensorPtr encoder_layer(const TensorPtr& f, const EncoderLayerParams& p, Mode& mode) {
    TensorPtr a = multi_head_rows(f, f, f, p.attn, nullptr, &mode);
    if (mode.train && mode.dropout > 0.0) a = dropout(a, mode.dropout, true, mode.gen());
    TensorPtr g = layer_norm(add(a, f), p.ln1_g, p.ln1_b);
    TensorPtr ff = linear(relu(linear(g, p.ff_w1, p.ff_b1)), p.ff_w2, p.ff_b2);
    if (mode.train && mode.dropout > 0.0) ff = dropout(ff, mode.dropout, true, mode.gen());
    return layer_norm(add(ff, g), p.ln2_g, p.ln2_b);
}

/// Run the L-layer encoder, returning every layer output F^1..F^L. When a
/// length-T mask is given it multiplies the input embedding and each layer
/// output, so each returned representation carries only in-mask information.
inline std::vector<TensorPtr> encode(const TensorPtr& f0,
                                     const std::vector<EncoderLayerParams>& layers, Mode& mode,
                                     const TensorPtr& mask = nullptr) {
    if (layers.empty()) throw std::invalid_argument("encode: at least one layer required");
    TensorPtr cur = mask ? row_scale(f0, mask) : f0;
    std::vector<TensorPtr> outs;
    outs.reserve(layers.size());
    for (const auto& layer : layers) {
        cur = encoder_layer(cur, layer, mode);
        if (mask) cur = row_scale(cur, mask);
        outs.push_back(cur);
    }
    return outs;
}

} // namespace decap
