#pragma once

#include "decap/encoder.hpp"

namespace decap {

struct Anchor {
    Real center = 0.0;
    Real length = 0.0;
    int kernel = 0;

    Real start() const { return center - length / 2.0; }
    Real end() const { return center + length / 2.0; }
};

/// Anchors for kernel size k sit at the centers of the conv windows produced
/// with stride ceil(k/s) and symmetric padding floor(k/2). Ordered by kernel
/// size, then center.
inline std::vector<Anchor> build_anchor_grid(std::size_t T, const std::vector<int>& kernel_sizes,
                                             Real s) {
    if (kernel_sizes.empty()) throw std::invalid_argument("build_anchor_grid: empty kernel list");
    if (s < 1.0) throw std::invalid_argument("build_anchor_grid: stride factor must be >= 1");
    std::vector<Anchor> anchors;
    for (int k : kernel_sizes) {
        if (k < 1) throw std::invalid_argument("build_anchor_grid: kernel size must be positive");
        const std::size_t stride =
            static_cast<std::size_t>(std::ceil(static_cast<Real>(k) / s));
        const std::size_t pad = static_cast<std::size_t>(k) / 2;
        const std::size_t padded = T + 2 * pad;
        if (static_cast<std::size_t>(k) > padded) continue;
        const std::size_t n = (padded - static_cast<std::size_t>(k)) / stride + 1;
        for (std::size_t j = 0; j < n; ++j) {
            const Real window_start = static_cast<Real>(j * stride) - static_cast<Real>(pad);
            anchors.push_back({window_start + (static_cast<Real>(k) - 1.0) / 2.0,
                               static_cast<Real>(k), k});
        }
    }
    return anchors;
}

/// Shared 3-layer temporal conv trunk with batch norm, plus one output conv
/// per kernel size emitting (score logit, theta_c, theta_l) channels.
struct ProposalHeadParams {
    TensorPtr conv1_w, conv1_b; // [3 x d x d/2]
    TensorPtr conv2_w, conv2_b; // [3 x d/2 x d/2]
    TensorPtr bn1_g, bn1_b;
    TensorPtr bn2_g, bn2_b;
    BatchNormState bn1_state, bn2_state;
    std::vector<int> kernel_sizes;
    Real stride_factor = 8.0;
    std::vector<TensorPtr> out_w, out_b; // per kernel size: [k x d/2 x 3], [3]
};

/// Differentiable per-anchor outputs. head_out[i] is the [n_i x 3] conv
/// output for kernel_sizes[i]; anchors line up with rows in grid order.
struct ProposalBatch {
    std::vector<Anchor> anchors;
    std::vector<TensorPtr> head_out;
    std::vector<std::pair<std::size_t, std::size_t>> where; // anchor -> (head, row)

    TensorPtr score_logit(std::size_t i) const {
        auto [h, r] = where[i];
        return element(head_out[h], r * 3 + 0);
    }
    TensorPtr theta_c(std::size_t i) const {
        auto [h, r] = where[i];
        return element(head_out[h], r * 3 + 1);
    }
    TensorPtr theta_l(std::size_t i) const {
        auto [h, r] = where[i];
        return element(head_out[h], r * 3 + 2);
    }
    Real score_value(std::size_t i) const {
        auto [h, r] = where[i];
        const Real x = head_out[h]->data[r * 3 + 0];
        return 1.0 / (1.0 + std::exp(-x));
    }
    Real theta_c_value(std::size_t i) const {
        auto [h, r] = where[i];
        return head_out[h]->data[r * 3 + 1];
    }
    Real theta_l_value(std::size_t i) const {
        auto [h, r] = where[i];
        return head_out[h]->data[r * 3 + 2];
    }
};

inline std::size_t conv_out_len(std::size_t T, std::size_t k, std::size_t stride,
                                std::size_t pad) {
    return (T + 2 * pad - k) / stride + 1;
}

/// Score every anchor from the last encoder layer output.
inline ProposalBatch score_anchors(const TensorPtr& fl, ProposalHeadParams& p, Mode& mode) {
    ProposalBatch batch;
    const std::size_t T = fl->shape[0];
    TensorPtr h = conv1d(fl, p.conv1_w, p.conv1_b, 1, 1);
    h = relu(batch_norm1d(h, p.bn1_g, p.bn1_b, p.bn1_state, mode.train));
    h = conv1d(h, p.conv2_w, p.conv2_b, 1, 1);
    h = relu(batch_norm1d(h, p.bn2_g, p.bn2_b, p.bn2_state, mode.train));
    for (std::size_t ki = 0; ki < p.kernel_sizes.size(); ++ki) {
        const int k = p.kernel_sizes[ki];
        const std::size_t stride =
            static_cast<std::size_t>(std::ceil(static_cast<Real>(k) / p.stride_factor));
        const std::size_t pad = static_cast<std::size_t>(k) / 2;
        TensorPtr out = conv1d(h, p.out_w[ki], p.out_b[ki], stride, pad);
        const std::size_t n = out->shape[0];
        for (std::size_t j = 0; j < n; ++j) {
            const Real window_start = static_cast<Real>(j * stride) - static_cast<Real>(pad);
            batch.anchors.push_back({window_start + (static_cast<Real>(k) - 1.0) / 2.0,
                                     static_cast<Real>(k), k});
            batch.where.emplace_back(batch.head_out.size(), j);
        }
        batch.head_out.push_back(out);
    }
    (void)T;
    return batch;
}

/// Differentiable proposal boundaries from anchor and offsets:
/// c_p = c_a + theta_c * l_a, l_p = l_a * exp(theta_l), clamped to [0, T].
struct Boundaries {
    TensorPtr start, end; // scalar tensors
};

inline Boundaries anchor_to_boundaries(const TensorPtr& theta_c, const TensorPtr& theta_l,
                                       const Anchor& a, Real T) {
    TensorPtr cp = add_const(scale(theta_c, a.length), a.center);
    TensorPtr half_lp = scale(decap::exp(theta_l), a.length / 2.0);
    TensorPtr sp = clamp(sub(cp, half_lp), 0.0, T);
    TensorPtr ep = clamp(add(cp, half_lp), 0.0, T);
    return {sp, ep};
}

/// Value-only variant for inference.
inline std::pair<Real, Real> anchor_to_boundaries_value(Real theta_c, Real theta_l,
                                                        const Anchor& a, Real T) {
    const Real cp = a.center + theta_c * a.length;
    const Real lp = a.length * std::exp(theta_l);
    return {std::min(T, std::max(0.0, cp - lp / 2.0)), std::min(T, std::max(0.0, cp + lp / 2.0))};
}

/// A scored segment ready for selection and evaluation.
struct EventProposal {
    Real start = 0.0;
    Real end = 0.0;
    Real score = 0.0;
    Anchor anchor;
};

} // namespace decap
