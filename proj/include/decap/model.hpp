#pragma once

#include "decap/decoder.hpp"

namespace decap {

struct ModelConfig {
    std::size_t window = 64;   // T
    std::size_t d_in = 16;
    std::size_t d = 64;
    std::size_t d_ff = 128;
    std::size_t heads = 4;
    std::size_t layers = 2;
    std::vector<int> kernel_sizes{4, 8, 16, 32, 48};
    Real stride_factor = 8.0;
    bool positional_encoding = true;
    Real dropout = 0.2;
    Real input_dropout = 0.1;
    std::size_t max_caption_len = 20;
    MaskMode mask_mode = MaskMode::gated;
};

/// Full masked-transformer model: shared encoder, anchor proposal head,
/// mask MLP, caption decoder. Parameters are registered by name for the
/// optimizer and checkpointing; iteration order is fixed.
struct Model {
    ModelConfig cfg;
    Vocabulary vocab;

    TensorPtr embed_w, embed_b;
    std::vector<EncoderLayerParams> enc_layers;
    ProposalHeadParams prop;
    MaskMLPParams mask_mlp;
    CaptionDecoderParams dec;

    std::vector<std::pair<std::string, TensorPtr>> params;
    std::vector<std::pair<std::string, BatchNormState*>> bn_states;

    TensorPtr find_param(const std::string& name) const {
        for (const auto& [n, t] : params)
            if (n == name) return t;
        throw std::out_of_range("model: no parameter named " + name);
    }
    void zero_grads() {
        for (auto& [n, t] : params) t->zero_grad();
    }
};

namespace detail {

class ParamInit {
public:
    ParamInit(Model& m, std::uint64_t seed) : m_(m), rng_(seed) {}

    TensorPtr uniform(const std::string& name, std::vector<std::size_t> shape, Real fan_in) {
        const Real bound = std::sqrt(6.0 / std::max<Real>(fan_in, 1.0));
        std::uniform_real_distribution<Real> dist(-bound, bound);
        std::size_t n = 1;
        for (auto e : shape) n *= e;
        std::vector<Real> data(n);
        for (auto& v : data) v = dist(rng_);
        auto t = Tensor::create(std::move(shape), std::move(data), true);
        m_.params.emplace_back(name, t);
        return t;
    }
    TensorPtr constant(const std::string& name, std::vector<std::size_t> shape, Real v) {
        auto t = Tensor::full(std::move(shape), v, true);
        m_.params.emplace_back(name, t);
        return t;
    }

    MultiHeadParams mha(const std::string& prefix, std::size_t d, std::size_t heads) {
        MultiHeadParams p;
        p.heads = heads;
        p.wq = uniform(prefix + ".wq", {d, d}, static_cast<Real>(d));
        p.wk = uniform(prefix + ".wk", {d, d}, static_cast<Real>(d));
        p.wv = uniform(prefix + ".wv", {d, d}, static_cast<Real>(d));
        p.wo = uniform(prefix + ".wo", {d, d}, static_cast<Real>(d));
        return p;
    }

private:
    Model& m_;
    std::mt19937_64 rng_;
};

} // namespace detail

inline Model build_model(const ModelConfig& cfg, const Vocabulary& vocab, std::uint64_t seed) {
    if (cfg.d % cfg.heads != 0)
        throw std::invalid_argument("model: d must be divisible by head count");
    if (cfg.d % 2 != 0) throw std::invalid_argument("model: d must be even");
    Model m;
    m.cfg = cfg;
    m.vocab = vocab;
    detail::ParamInit init(m, seed);
    const std::size_t d = cfg.d, dff = cfg.d_ff, T = cfg.window;
    const std::size_t v = vocab.size();
    const std::size_t dh = d / 2;

    m.embed_w = init.uniform("embed.w", {d, cfg.d_in}, static_cast<Real>(cfg.d_in));
    m.embed_b = init.constant("embed.b", {d}, 0.0);

    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const std::string pre = "enc." + std::to_string(l);
        EncoderLayerParams lp;
        lp.attn = init.mha(pre + ".attn", d, cfg.heads);
        lp.ff_w1 = init.uniform(pre + ".ff_w1", {dff, d}, static_cast<Real>(d));
        lp.ff_b1 = init.constant(pre + ".ff_b1", {dff}, 0.0);
        lp.ff_w2 = init.uniform(pre + ".ff_w2", {d, dff}, static_cast<Real>(dff));
        lp.ff_b2 = init.constant(pre + ".ff_b2", {d}, 0.0);
        lp.ln1_g = init.constant(pre + ".ln1_g", {d}, 1.0);
        lp.ln1_b = init.constant(pre + ".ln1_b", {d}, 0.0);
        lp.ln2_g = init.constant(pre + ".ln2_g", {d}, 1.0);
        lp.ln2_b = init.constant(pre + ".ln2_b", {d}, 0.0);
        m.enc_layers.push_back(std::move(lp));
    }

    m.prop.kernel_sizes = cfg.kernel_sizes;
    m.prop.stride_factor = cfg.stride_factor;
    m.prop.conv1_w = init.uniform("prop.conv1_w", {3, d, dh}, static_cast<Real>(3 * d));
    m.prop.conv1_b = init.constant("prop.conv1_b", {dh}, 0.0);
    m.prop.conv2_w = init.uniform("prop.conv2_w", {3, dh, dh}, static_cast<Real>(3 * dh));
    m.prop.conv2_b = init.constant("prop.conv2_b", {dh}, 0.0);
    m.prop.bn1_g = init.constant("prop.bn1_g", {dh}, 1.0);
    m.prop.bn1_b = init.constant("prop.bn1_b", {dh}, 0.0);
    m.prop.bn2_g = init.constant("prop.bn2_g", {dh}, 1.0);
    m.prop.bn2_b = init.constant("prop.bn2_b", {dh}, 0.0);
    m.prop.bn1_state = BatchNormState(dh);
    m.prop.bn2_state = BatchNormState(dh);
    m.bn_states.emplace_back("prop.bn1", &m.prop.bn1_state);
    m.bn_states.emplace_back("prop.bn2", &m.prop.bn2_state);
    for (std::size_t ki = 0; ki < cfg.kernel_sizes.size(); ++ki) {
        const std::size_t k = static_cast<std::size_t>(cfg.kernel_sizes[ki]);
        const std::string pre = "prop.out" + std::to_string(cfg.kernel_sizes[ki]);
        m.prop.out_w.push_back(init.uniform(pre + "_w", {k, dh, 3}, static_cast<Real>(k * dh)));
        m.prop.out_b.push_back(init.constant(pre + "_b", {3}, 0.0));
    }

    m.mask_mlp.w1 = init.uniform("mask.w1", {d, 4 * d + T}, static_cast<Real>(4 * d + T));
    m.mask_mlp.b1 = init.constant("mask.b1", {d}, 0.0);
    m.mask_mlp.w2 = init.uniform("mask.w2", {T, d}, static_cast<Real>(d));
    m.mask_mlp.b2 = init.constant("mask.b2", {T}, 0.0);

    m.dec.word_emb = init.uniform("dec.word_emb", {v, d}, static_cast<Real>(d));
    m.dec.w_out = init.uniform("dec.w_out", {v, d}, static_cast<Real>(d));
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const std::string pre = "dec." + std::to_string(l);
        DecoderLayerParams lp;
        lp.self_attn = init.mha(pre + ".self", d, cfg.heads);
        lp.cross_attn = init.mha(pre + ".cross", d, cfg.heads);
        lp.ff_w1 = init.uniform(pre + ".ff_w1", {dff, d}, static_cast<Real>(d));
        lp.ff_b1 = init.constant(pre + ".ff_b1", {dff}, 0.0);
        lp.ff_w2 = init.uniform(pre + ".ff_w2", {d, dff}, static_cast<Real>(dff));
        lp.ff_b2 = init.constant(pre + ".ff_b2", {d}, 0.0);
        lp.ln1_g = init.constant(pre + ".ln1_g", {d}, 1.0);
        lp.ln1_b = init.constant(pre + ".ln1_b", {d}, 0.0);
        lp.ln2_g = init.constant(pre + ".ln2_g", {d}, 1.0);
        lp.ln2_b = init.constant(pre + ".ln2_b", {d}, 0.0);
        lp.ln3_g = init.constant(pre + ".ln3_g", {d}, 1.0);
        lp.ln3_b = init.constant(pre + ".ln3_b", {d}, 0.0);
        m.dec.layers.push_back(std::move(lp));
    }
    return m;
}

// ---------------------------------------------------------------------------
// shared forward pieces

struct VideoFeatures {
    TensorPtr frames; // [T x d_in]
    std::vector<std::pair<Real, Real>> segments;
    std::vector<std::vector<std::string>> captions;
    std::string name;
};

/// Embed frames and run the encoder; returns F^1..F^L.
inline std::vector<TensorPtr> encode_video(Model& m, const TensorPtr& frames, Mode& mode,
                                           const TensorPtr& mask = nullptr) {
    TensorPtr f0 = embed_input(frames, m.embed_w, m.embed_b, m.cfg.positional_encoding, mode);
    return encode(f0, m.enc_layers, mode, mask);
}

/// Re-run the encoder with a proposal mask gating the input embedding and
/// every layer output (not a post-hoc multiply of cached features).
inline std::vector<TensorPtr> masked_encoder_features(Model& m, const TensorPtr& frames,
                                                      const TensorPtr& mask, Mode& mode) {
    return encode_video(m, frames, mode, mask);
}

} // namespace decap
