#pragma once

#include <unordered_map>

#include "decap/mask.hpp"

namespace decap {

struct Vocabulary {
    enum : int { PAD = 0, BOS = 1, EOS = 2, UNK = 3 };

    std::vector<std::string> tokens{"<pad>", "<bos>", "<eos>", "<unk>"};
    std::unordered_map<std::string, int> index{
        {"<pad>", PAD}, {"<bos>", BOS}, {"<eos>", EOS}, {"<unk>", UNK}};

    std::size_t size() const { return tokens.size(); }

    int add(const std::string& tok) {
        auto it = index.find(tok);
        if (it != index.end()) return it->second;
        const int id = static_cast<int>(tokens.size());
        tokens.push_back(tok);
        index.emplace(tok, id);
        return id;
    }
    int lookup(const std::string& tok) const {
        auto it = index.find(tok);
        return it == index.end() ? UNK : it->second;
    }
    const std::string& word(int id) const { return tokens.at(static_cast<std::size_t>(id)); }

    std::vector<int> encode(const std::vector<std::string>& words) const {
        std::vector<int> ids{BOS};
        for (const auto& w : words) ids.push_back(lookup(w));
        ids.push_back(EOS);
        return ids;
    }
    std::vector<std::string> decode(const std::vector<int>& ids) const {
        std::vector<std::string> words;
        for (int id : ids)
            if (id != BOS && id != EOS && id != PAD) words.push_back(word(id));
        return words;
    }
};

struct DecoderLayerParams {
    MultiHeadParams self_attn;  // Omega
    MultiHeadParams cross_attn; // Phi
    TensorPtr ff_w1, ff_b1;
    TensorPtr ff_w2, ff_b2;
    TensorPtr ln1_g, ln1_b;
    TensorPtr ln2_g, ln2_b;
    TensorPtr ln3_g, ln3_b;
};

struct CaptionDecoderParams {
    TensorPtr word_emb; // [v x d]
    TensorPtr w_out;    // [v x d], untied from word_emb
    std::vector<DecoderLayerParams> layers;
};

/// Teacher forcing split: prefix = gt minus trailing EOS, targets = gt minus
/// leading BOS.
inline std::pair<std::vector<int>, std::vector<int>> teacher_forced_loss_inputs(
    const std::vector<int>& gt) {
    if (gt.size() < 2 || gt.front() != Vocabulary::BOS || gt.back() != Vocabulary::EOS)
        throw std::invalid_argument("teacher_forced_loss_inputs: sequence must be BOS ... EOS");
    for (std::size_t i = 0; i + 1 < gt.size(); ++i)
        if (gt[i] == Vocabulary::PAD)
            throw std::invalid_argument("teacher_forced_loss_inputs: PAD before EOS");
    std::vector<int> prefix(gt.begin(), gt.end() - 1);
    std::vector<int> targets(gt.begin() + 1, gt.end());
    return {prefix, targets};
}

/// Causal transformer decoder over a token prefix, cross-attending at layer l
/// to the masked encoder output of layer l (last one reused if the decoder is
/// deeper). Returns [t x v] logits.
inline TensorPtr decode_forward(const std::vector<int>& prefix,
                                const std::vector<TensorPtr>& fhat,
                                const CaptionDecoderParams& p, Mode& mode) {
    if (prefix.empty()) throw std::invalid_argument("decode_forward: empty prefix");
    if (fhat.empty()) throw std::invalid_argument("decode_forward: no encoder features");
    const std::size_t t = prefix.size();
    const std::size_t d = p.word_emb->shape[1];
    TensorPtr y = add(embedding(p.word_emb, prefix), pos_encoding_matrix(t, d));
    std::vector<std::vector<bool>> causal(t);
    for (std::size_t i = 0; i < t; ++i) causal[i] = causal_mask(i + 1, t);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        const auto& lp = p.layers[l];
        const TensorPtr& mem = fhat[std::min(l, fhat.size() - 1)];
        TensorPtr a = multi_head_rows(y, y, y, lp.self_attn, &causal, &mode);
        if (mode.train && mode.dropout > 0.0) a = dropout(a, mode.dropout, true, mode.gen());
        TensorPtr omega = layer_norm(add(a, y), lp.ln1_g, lp.ln1_b);
        TensorPtr c = multi_head_rows(omega, mem, mem, lp.cross_attn, nullptr, &mode);
        if (mode.train && mode.dropout > 0.0) c = dropout(c, mode.dropout, true, mode.gen());
        TensorPtr phi = layer_norm(add(c, omega), lp.ln2_g, lp.ln2_b);
        TensorPtr ff = linear(relu(linear(phi, lp.ff_w1, lp.ff_b1)), lp.ff_w2, lp.ff_b2);
        if (mode.train && mode.dropout > 0.0) ff = dropout(ff, mode.dropout, true, mode.gen());
        y = layer_norm(add(ff, phi), lp.ln3_g, lp.ln3_b);
    }
    return matmul(y, transpose(p.w_out));
}

} // namespace decap
