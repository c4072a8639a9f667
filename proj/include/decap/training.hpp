#pragma once

#include <iostream>
#include <map>

#include "decap/model.hpp"

namespace decap {

inline Real tiou(std::pair<Real, Real> a, std::pair<Real, Real> b) {
    if (a.second <= a.first || b.second <= b.first) return 0.0;
    const Real inter = std::max(0.0, std::min(a.second, b.second) - std::max(a.first, b.first));
    if (inter <= 0.0) return 0.0;
    const Real uni = (a.second - a.first) + (b.second - b.first) - inter;
    return inter / uni;
}

struct LossWeights {
    Real regression = 10.0; // lambda_1
    Real mask_bce = 1.0;    // lambda_2
    Real event_bce = 1.0;   // lambda_3
    Real caption_ce = 0.25; // lambda_4
};

enum class TrainObjective { end_to_end, proposal_only, caption_only };

struct TrainConfig {
    Real learning_rate = 0.05;
    Real momentum = 0.95;
    Real clip_norm = 1.0;
    Real plateau_factor = 0.5;
    Real plateau_min_delta = 1e-3;
    std::size_t plateau_patience = 3;
    std::size_t anchors_per_segment = 10; // U
    std::size_t max_steps = 2000;
    std::size_t eval_every = 200;
    LossWeights weights;
    MaskMode mask_mode = MaskMode::gated;
    TrainObjective objective = TrainObjective::end_to_end;
    Real adam_lr = 1e-4; // proposal-only / caption-only objectives use Adam
    std::uint64_t seed = 1;
};

enum class AnchorLabel { positive, negative, ignore };

struct LabeledAnchor {
    std::size_t anchor_idx = 0;
    AnchorLabel label = AnchorLabel::ignore;
    std::size_t gt_idx = 0;   // valid for positives
    Real target_theta_c = 0.0;
    Real target_theta_l = 0.0;
};

/// tIoU-based labeling: > 0.7 against any ground truth is positive (matched
/// to the max-tIoU one, with the offsets inverting the boundary equations),
/// < 0.3 against all is negative, anything else is ignored.
inline std::vector<LabeledAnchor> label_anchors(const std::vector<Anchor>& anchors,
                                                const std::vector<std::pair<Real, Real>>& gt,
                                                Real pos_thresh = 0.7, Real neg_thresh = 0.3) {
    std::vector<LabeledAnchor> out;
    out.reserve(anchors.size());
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        const auto& a = anchors[i];
        Real best = 0.0;
        std::size_t best_gt = 0;
        for (std::size_t g = 0; g < gt.size(); ++g) {
            const Real iou = tiou({a.start(), a.end()}, gt[g]);
            if (iou > best) {
                best = iou;
                best_gt = g;
            }
        }
        LabeledAnchor la;
        la.anchor_idx = i;
        if (best > pos_thresh) {
            la.label = AnchorLabel::positive;
            la.gt_idx = best_gt;
            const Real gc = (gt[best_gt].first + gt[best_gt].second) / 2.0;
            const Real gl = gt[best_gt].second - gt[best_gt].first;
            la.target_theta_c = (gc - a.center) / a.length;
            la.target_theta_l = std::log(gl / a.length);
        } else if (best < neg_thresh) {
            la.label = AnchorLabel::negative;
        } else {
            la.label = AnchorLabel::ignore;
        }
        out.push_back(la);
    }
    return out;
}

/// Draw U anchors for one ground-truth segment, splitting as evenly between
/// its positive pool and the negative pool as the pool sizes allow.
inline std::vector<LabeledAnchor> sample_minibatch(const std::vector<LabeledAnchor>& labeled,
                                                   std::size_t gt_idx, std::size_t U,
                                                   std::mt19937_64& rng) {
    std::vector<LabeledAnchor> pos, neg;
    for (const auto& la : labeled) {
        if (la.label == AnchorLabel::positive && la.gt_idx == gt_idx) pos.push_back(la);
        if (la.label == AnchorLabel::negative) neg.push_back(la);
    }
    if (pos.empty()) return {}; // caller skips the segment with a warning
    std::size_t n_pos = std::min(pos.size(), U / 2 + U % 2);
    std::size_t n_neg = std::min(neg.size(), U - n_pos);
    n_pos = std::min(pos.size(), U - n_neg);
    std::shuffle(pos.begin(), pos.end(), rng);
    std::shuffle(neg.begin(), neg.end(), rng);
    std::vector<LabeledAnchor> out(pos.begin(), pos.begin() + n_pos);
    out.insert(out.end(), neg.begin(), neg.begin() + n_neg);
    return out;
}

struct LossParts {
    TensorPtr total;
    Real regression = 0.0;
    Real mask_bce = 0.0;
    Real event_bce = 0.0;
    Real caption_ce = 0.0;
    Real caption_token_accuracy = 0.0; // teacher-forced argmax accuracy
};

/// Forward pass and four-part loss for one ground-truth segment's minibatch.
/// caption_objective_only reduces the total to lambda_4 * L_c (used by the
/// differentiability dichotomy check and the caption-only objective).
inline LossParts compute_loss(Model& m, const VideoFeatures& video,
                              const std::vector<LabeledAnchor>& batch,
                              const std::vector<Anchor>& anchors, const LossWeights& w,
                              Mode& mode, MaskMode mask_mode,
                              bool caption_objective_only = false,
                              Real scheduled_sampling = 0.0) {
    LossParts parts;
    const Real T = static_cast<Real>(m.cfg.window);
    auto features = encode_video(m, video.frames, mode);
    ProposalBatch props = score_anchors(features.back(), m.prop, mode);

    std::vector<TensorPtr> terms;
    auto weight_term = [&terms](Real lambda, const TensorPtr& t) {
        if (lambda != 0.0) terms.push_back(scale(t, lambda));
    };

    // event score BCE over the whole minibatch
    std::vector<TensorPtr> logits;
    std::vector<Real> labels;
    for (const auto& la : batch) {
        logits.push_back(props.score_logit(la.anchor_idx));
        labels.push_back(la.label == AnchorLabel::positive ? 1.0 : 0.0);
    }
    TensorPtr event_loss = bce_with_logits(concat(logits, 0), labels);
    parts.event_bce = event_loss->item();
    if (!caption_objective_only) weight_term(w.event_bce, event_loss);

    // positives: regression, mask, caption
    std::vector<TensorPtr> reg_losses, mask_losses, cap_losses;
    std::size_t cap_tokens = 0, cap_correct = 0, pos_seen = 0;
    for (const auto& la : batch) {
        if (la.label != AnchorLabel::positive) continue;
        const Anchor& a = anchors[la.anchor_idx];
        TensorPtr tc = props.theta_c(la.anchor_idx);
        TensorPtr tl = props.theta_l(la.anchor_idx);
        reg_losses.push_back(smooth_l1(concat({tc, tl}, 0), {la.target_theta_c, la.target_theta_l}));

        TensorPtr pe = sigmoid(props.score_logit(la.anchor_idx));
        Boundaries b = anchor_to_boundaries(tc, tl, a, T);
        TensorPtr fm = continuous_mask(b.start, b.end, a, m.mask_mlp, m.cfg.window, m.cfg.d);
        std::vector<Real> bin_target(m.cfg.window);
        {
            auto bin = bin_mask(b.start->data[0], b.end->data[0], m.cfg.window);
            bin_target = bin->data;
        }
        mask_losses.push_back(bce_prob(fm, bin_target));

        if (w.caption_ce != 0.0 && la.gt_idx < video.captions.size()) {
            TensorPtr gm = (mask_mode == MaskMode::discrete)
                               ? bin_mask(b.start->data[0], b.end->data[0], m.cfg.window)
                               : add(smul(pe, bin_mask(b.start->data[0], b.end->data[0],
                                                       m.cfg.window)),
                                     smul(rsub_const(1.0, pe), fm));
            auto fhat = masked_encoder_features(m, video.frames, gm, mode);
            std::vector<int> gt_tokens = m.vocab.encode(video.captions[la.gt_idx]);
            auto [prefix, targets] = teacher_forced_loss_inputs(gt_tokens);
            if (scheduled_sampling > 0.0) {
                // replace teacher tokens with the model's own previous-step
                // argmax from a preliminary pass, at the scheduled rate
                Mode probe = eval_mode();
                TensorPtr pre = decode_forward(prefix, fhat, m.dec, probe);
                const std::size_t v = pre->shape[1];
                std::uniform_real_distribution<Real> uni(0.0, 1.0);
                for (std::size_t i = 1; i < prefix.size(); ++i) {
                    if (uni(mode.gen()) >= scheduled_sampling) continue;
                    const Real* row = pre->data.data() + (i - 1) * v;
                    std::size_t am = 0;
                    for (std::size_t j = 1; j < v; ++j)
                        if (row[j] > row[am]) am = j;
                    prefix[i] = static_cast<int>(am);
                }
            }
            TensorPtr lg = decode_forward(prefix, fhat, m.dec, mode);
            cap_losses.push_back(cross_entropy_logits(lg, targets));
            const std::size_t v = lg->shape[1];
            for (std::size_t i = 0; i < targets.size(); ++i) {
                const Real* row = lg->data.data() + i * v;
                std::size_t am = 0;
                for (std::size_t j = 1; j < v; ++j)
                    if (row[j] > row[am]) am = j;
                ++cap_tokens;
                if (am == static_cast<std::size_t>(targets[i])) ++cap_correct;
            }
        }
        ++pos_seen;
    }

    auto average = [](const std::vector<TensorPtr>& v) -> TensorPtr {
        TensorPtr s = v[0];
        for (std::size_t i = 1; i < v.size(); ++i) s = add(s, v[i]);
        return scale(s, 1.0 / static_cast<Real>(v.size()));
    };

    if (!reg_losses.empty()) {
        TensorPtr reg = average(reg_losses);
        parts.regression = reg->item();
        if (!caption_objective_only) weight_term(w.regression, reg);
    }
    if (!mask_losses.empty()) {
        TensorPtr mk = average(mask_losses);
        parts.mask_bce = mk->item();
        if (!caption_objective_only) weight_term(w.mask_bce, mk);
    }
    if (!cap_losses.empty()) {
        TensorPtr cap = average(cap_losses);
        parts.caption_ce = cap->item();
        weight_term(w.caption_ce, cap);
        parts.caption_token_accuracy =
            cap_tokens ? static_cast<Real>(cap_correct) / static_cast<Real>(cap_tokens) : 0.0;
    }

    if (terms.empty()) throw std::logic_error("compute_loss: no loss terms");
    TensorPtr total = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
    parts.total = total;
    return parts;
}

// ---------------------------------------------------------------------------
// optimizers

/// Scale all gradients so their global l2 norm is at most max_norm.
/// Returns the pre-clip norm; throws on non-finite gradients.
inline Real clip_gradients(std::vector<std::pair<std::string, TensorPtr>>& params, Real max_norm) {
    Real sq = 0.0;
    for (auto& [name, t] : params) {
        t->ensure_grad();
        for (Real g : t->grad) {
            if (!std::isfinite(g))
                throw std::runtime_error("clip_gradients: non-finite gradient in " + name);
            sq += g * g;
        }
    }
    const Real norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const Real s = max_norm / norm;
        for (auto& [name, t] : params)
            for (Real& g : t->grad) g *= s;
    }
    return norm;
}

/// SGD with Nesterov momentum: v <- mu v + g; theta <- theta - lr (g + mu v).
struct NesterovOptimizer {
    Real lr;
    Real momentum;
    std::map<std::string, std::vector<Real>> velocity;

    NesterovOptimizer(Real lr_, Real mu) : lr(lr_), momentum(mu) {}

    void step(std::vector<std::pair<std::string, TensorPtr>>& params) {
        for (auto& [name, t] : params) {
            t->ensure_grad();
            auto& v = velocity[name];
            if (v.size() != t->grad.size()) v.assign(t->grad.size(), 0.0);
            for (std::size_t i = 0; i < t->data.size(); ++i) {
                const Real g = t->grad[i];
                if (!std::isfinite(g))
                    throw std::runtime_error("optimizer: non-finite gradient in " + name);
                v[i] = momentum * v[i] + g;
                t->data[i] -= lr * (g + momentum * v[i]);
            }
        }
    }
};

struct AdamOptimizer {
    Real lr;
    Real beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::size_t t = 0;
    std::map<std::string, std::pair<std::vector<Real>, std::vector<Real>>> state;

    explicit AdamOptimizer(Real lr_) : lr(lr_) {}

    void step(std::vector<std::pair<std::string, TensorPtr>>& params) {
        ++t;
        const Real bc1 = 1.0 - std::pow(beta1, static_cast<Real>(t));
        const Real bc2 = 1.0 - std::pow(beta2, static_cast<Real>(t));
        for (auto& [name, p] : params) {
            p->ensure_grad();
            auto& [mo, ve] = state[name];
            if (mo.size() != p->grad.size()) {
                mo.assign(p->grad.size(), 0.0);
                ve.assign(p->grad.size(), 0.0);
            }
            for (std::size_t i = 0; i < p->data.size(); ++i) {
                const Real g = p->grad[i];
                if (!std::isfinite(g))
                    throw std::runtime_error("optimizer: non-finite gradient in " + name);
                mo[i] = beta1 * mo[i] + (1.0 - beta1) * g;
                ve[i] = beta2 * ve[i] + (1.0 - beta2) * g * g;
                p->data[i] -= lr * (mo[i] / bc1) / (std::sqrt(ve[i] / bc2) + eps);
            }
        }
    }
};

/// Scheduled sampling ratio: 0.05 at epoch 0, +0.05 every 5 epochs, capped
/// at 0.25. Applied only under the caption-only objective.
inline Real scheduled_sampling_ratio(std::size_t epoch) {
    return std::min(0.05 * (1.0 + std::floor(static_cast<Real>(epoch) / 5.0)), 0.25);
}

} // namespace decap
