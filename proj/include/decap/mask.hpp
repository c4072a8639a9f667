#pragma once

#include "decap/proposal.hpp"

namespace decap {

enum class MaskMode { gated, discrete };

/// Binary boundary mask over integer positions 0..T-1: entry i is 1 iff
/// S <= i <= E. Real-valued boundaries straddling no integer give all zeros.
inline TensorPtr bin_mask(Real S, Real E, std::size_t T) {
    std::vector<Real> out(T, 0.0);
    for (std::size_t i = 0; i < T; ++i) {
        const Real pos = static_cast<Real>(i);
        if (pos >= S && pos <= E) out[i] = 1.0;
    }
    return Tensor::create({T}, std::move(out));
}

/// 2-layer MLP g: input [rho(S_p), rho(E_p), rho(S_a), rho(E_a), Bin(S_a,E_a)]
/// of width 4d + T, hidden width d with ReLU, output width T.
struct MaskMLPParams {
    TensorPtr w1, b1; // [d x (4d+T)], [d]
    TensorPtr w2, b2; // [T x d], [T]
};

/// Continuous proposal mask f_M: sigmoid(g(...)), differentiable in the
/// predicted boundaries and the MLP weights.
inline TensorPtr continuous_mask(const TensorPtr& sp, const TensorPtr& ep, const Anchor& a,
                                 const MaskMLPParams& p, std::size_t T, std::size_t d) {
    TensorPtr input = concat({pos_encode(sp, d), pos_encode(ep, d),
                              pos_encode(Tensor::scalar(a.start()), d),
                              pos_encode(Tensor::scalar(a.end()), d),
                              bin_mask(a.start(), a.end(), T)},
                             0);
    TensorPtr hidden = relu(add(matvec(p.w1, input), p.b1));
    return sigmoid(add(matvec(p.w2, hidden), p.b2));
}

/// Gated mask f_GM = P_e Bin(S_p, E_p) + (1 - P_e) f_M. The Bin term uses the
/// predicted boundaries and is constant w.r.t. them; P_e gradient flows
/// through the gate. Discrete mode returns the bare binary mask, cutting the
/// caption-to-proposal gradient path entirely.
inline TensorPtr gated_mask(const TensorPtr& pe, const TensorPtr& sp, const TensorPtr& ep,
                            const Anchor& a, const MaskMLPParams& p, std::size_t T, std::size_t d,
                            MaskMode mode = MaskMode::gated) {
    TensorPtr bin = bin_mask(sp->data[0], ep->data[0], T);
    if (mode == MaskMode::discrete) return bin;
    TensorPtr fm = continuous_mask(sp, ep, a, p, T, d);
    return add(smul(pe, bin), smul(rsub_const(1.0, pe), fm));
}

} // namespace decap
