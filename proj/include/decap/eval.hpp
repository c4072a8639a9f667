#pragma once

#include <iomanip>

#include "decap/training.hpp"

namespace decap {

/// Threshold filter, score-order backfill to min_n, then greedy suppression
/// of proposals with tIoU >= overlap_cap against a kept higher-scoring one.
inline std::vector<EventProposal> select_proposals(std::vector<EventProposal> all, Real threshold,
                                                   Real overlap_cap, std::size_t min_n,
                                                   std::size_t max_n) {
    std::stable_sort(all.begin(), all.end(),
                     [](const EventProposal& a, const EventProposal& b) { return a.score > b.score; });
    std::vector<EventProposal> pool;
    for (const auto& p : all)
        if (p.score > threshold) pool.push_back(p);
    if (pool.size() < min_n)
        for (const auto& p : all) {
            if (pool.size() >= min_n) break;
            if (p.score <= threshold) pool.push_back(p);
        }
    std::vector<EventProposal> kept;
    for (const auto& p : pool) {
        bool suppressed = false;
        for (const auto& k : kept)
            if (tiou({p.start, p.end}, {k.start, k.end}) >= overlap_cap) {
                suppressed = true;
                break;
            }
        if (!suppressed) kept.push_back(p);
        if (kept.size() >= max_n) break;
    }
    return kept;
}

/// Greedy caption generation from BOS until EOS or the word limit.
inline std::vector<int> greedy_decode(Model& m, const std::vector<TensorPtr>& fhat,
                                      std::size_t max_len = 20) {
    Mode mode = eval_mode();
    std::vector<int> out{Vocabulary::BOS};
    for (std::size_t step = 0; step < max_len; ++step) {
        TensorPtr logits = decode_forward(out, fhat, m.dec, mode);
        const std::size_t v = logits->shape[1];
        const Real* row = logits->data.data() + (out.size() - 1) * v;
        std::size_t am = 0;
        for (std::size_t j = 1; j < v; ++j)
            if (row[j] > row[am]) am = j;
        if (am == Vocabulary::EOS) break;
        out.push_back(static_cast<int>(am));
    }
    out.push_back(Vocabulary::EOS);
    return out;
}

/// All regressed proposals for one video (eval mode, no selection).
inline std::vector<EventProposal> propose_events(Model& m, const VideoFeatures& video) {
    Mode mode = eval_mode();
    auto features = encode_video(m, video.frames, mode);
    ProposalBatch props = score_anchors(features.back(), m.prop, mode);
    std::vector<EventProposal> out;
    out.reserve(props.anchors.size());
    for (std::size_t i = 0; i < props.anchors.size(); ++i) {
        auto [s, e] = anchor_to_boundaries_value(props.theta_c_value(i), props.theta_l_value(i),
                                                 props.anchors[i], static_cast<Real>(m.cfg.window));
        if (e <= s) continue; // fully clamped out of the window
        out.push_back({s, e, props.score_value(i), props.anchors[i]});
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const EventProposal& a, const EventProposal& b) { return a.score > b.score; });
    return out;
}

/// Caption one segment: gated mask built from the proposal (or a binary mask
/// for ground-truth segments), masked encoder re-run, greedy decode.
inline std::vector<int> caption_segment(Model& m, const VideoFeatures& video,
                                        const EventProposal& prop, bool use_binary_mask = false) {
    Mode mode = eval_mode();
    TensorPtr mask;
    if (use_binary_mask || m.cfg.mask_mode == MaskMode::discrete) {
        mask = bin_mask(prop.start, prop.end, m.cfg.window);
    } else {
        TensorPtr pe = Tensor::scalar(prop.score);
        TensorPtr sp = Tensor::scalar(prop.start);
        TensorPtr ep = Tensor::scalar(prop.end);
        mask = gated_mask(pe, sp, ep, prop.anchor, m.mask_mlp, m.cfg.window, m.cfg.d);
    }
    auto fhat = masked_encoder_features(m, video.frames, mask, mode);
    return greedy_decode(m, fhat, m.cfg.max_caption_len);
}

// ---------------------------------------------------------------------------
// metrics

/// Modified n-gram precision BLEU with add-epsilon smoothing for zero-count
/// orders and the standard brevity penalty.
inline Real bleu_n(const std::vector<std::string>& candidate,
                   const std::vector<std::vector<std::string>>& references, std::size_t n,
                   Real smoothing_eps = 1e-9) {
    if (n < 1) throw std::invalid_argument("bleu_n: n must be >= 1");
    if (candidate.empty() || references.empty()) return 0.0;
    auto ngram_counts = [](const std::vector<std::string>& words, std::size_t order) {
        std::map<std::vector<std::string>, std::size_t> counts;
        if (words.size() >= order)
            for (std::size_t i = 0; i + order <= words.size(); ++i)
                counts[{words.begin() + i, words.begin() + i + order}]++;
        return counts;
    };
    Real log_p = 0.0;
    for (std::size_t order = 1; order <= n; ++order) {
        auto cand = ngram_counts(candidate, order);
        std::size_t total = 0, matched = 0;
        for (const auto& [gram, c] : cand) {
            total += c;
            std::size_t max_ref = 0;
            for (const auto& ref : references) {
                auto rc = ngram_counts(ref, order);
                auto it = rc.find(gram);
                if (it != rc.end()) max_ref = std::max(max_ref, it->second);
            }
            matched += std::min(c, max_ref);
        }
        Real p;
        if (total == 0)
            p = smoothing_eps;
        else if (matched == 0)
            p = smoothing_eps;
        else
            p = static_cast<Real>(matched) / static_cast<Real>(total);
        log_p += std::log(p);
    }
    log_p /= static_cast<Real>(n);
    // closest reference length for the brevity penalty
    const std::size_t c = candidate.size();
    std::size_t r = references[0].size();
    for (const auto& ref : references)
        if (std::llabs(static_cast<long long>(ref.size()) - static_cast<long long>(c)) <
            std::llabs(static_cast<long long>(r) - static_cast<long long>(c)))
            r = ref.size();
    const Real bp = c >= r ? 1.0 : std::exp(1.0 - static_cast<Real>(r) / static_cast<Real>(c));
    return bp * std::exp(log_p);
}

/// Fraction of ground-truth segments matched by the top-n proposals,
/// averaged over videos, then over tIoU thresholds.
inline Real average_recall(const std::vector<std::vector<EventProposal>>& proposals,
                           const std::vector<std::vector<std::pair<Real, Real>>>& gt,
                           std::size_t n_proposals, const std::vector<Real>& thresholds) {
    if (proposals.size() != gt.size())
        throw std::invalid_argument("average_recall: video count mismatch");
    if (thresholds.empty()) throw std::invalid_argument("average_recall: no thresholds");
    Real acc = 0.0;
    for (Real th : thresholds) {
        Real videos_recall = 0.0;
        std::size_t counted = 0;
        for (std::size_t v = 0; v < gt.size(); ++v) {
            if (gt[v].empty()) continue;
            std::size_t matched = 0;
            const std::size_t top = std::min(n_proposals, proposals[v].size());
            for (const auto& seg : gt[v]) {
                bool hit = false;
                for (std::size_t i = 0; i < top && !hit; ++i)
                    hit = tiou({proposals[v][i].start, proposals[v][i].end}, seg) >= th;
                if (hit) ++matched;
            }
            videos_recall += static_cast<Real>(matched) / static_cast<Real>(gt[v].size());
            ++counted;
        }
        acc += counted ? videos_recall / static_cast<Real>(counted) : 0.0;
    }
    return acc / static_cast<Real>(thresholds.size());
}

/// Recall against proposal budget at one threshold, for the recall curve.
inline std::vector<std::pair<std::size_t, Real>> recall_curve(
    const std::vector<std::vector<EventProposal>>& proposals,
    const std::vector<std::vector<std::pair<Real, Real>>>& gt, std::size_t max_n, Real threshold) {
    std::vector<std::pair<std::size_t, Real>> curve;
    for (std::size_t n = 1; n <= max_n; ++n)
        curve.emplace_back(n, average_recall(proposals, gt, n, {threshold}));
    return curve;
}

struct CaptionedProposal {
    EventProposal proposal;
    std::vector<std::string> caption;
};

using DenseCaptionResult = std::vector<CaptionedProposal>; // one video

/// tIoU-gated sentence score, averaged over all proposals globally, then
/// over thresholds. A proposal below the threshold against every ground
/// truth contributes 0; otherwise it is scored against the max-tIoU match.
inline Real dense_caption_score(
    const std::vector<DenseCaptionResult>& results,
    const std::vector<std::vector<std::pair<Real, Real>>>& gt_segments,
    const std::vector<std::vector<std::vector<std::string>>>& gt_captions,
    const std::function<Real(const std::vector<std::string>&, const std::vector<std::string>&)>&
        sentence_metric,
    const std::vector<Real>& thresholds = {0.3, 0.5, 0.7, 0.9}) {
    if (results.size() != gt_segments.size() || results.size() != gt_captions.size())
        throw std::invalid_argument("dense_caption_score: video count mismatch");
    Real acc = 0.0;
    for (Real th : thresholds) {
        Real sum = 0.0;
        std::size_t count = 0;
        for (std::size_t v = 0; v < results.size(); ++v) {
            for (const auto& cp : results[v]) {
                ++count;
                Real best_iou = 0.0;
                std::size_t best_g = 0;
                for (std::size_t g = 0; g < gt_segments[v].size(); ++g) {
                    const Real iou =
                        tiou({cp.proposal.start, cp.proposal.end}, gt_segments[v][g]);
                    if (iou > best_iou) {
                        best_iou = iou;
                        best_g = g;
                    }
                }
                if (best_iou >= th && best_g < gt_captions[v].size())
                    sum += sentence_metric(cp.caption, gt_captions[v][best_g]);
            }
        }
        acc += count ? sum / static_cast<Real>(count) : 0.0;
    }
    return acc / static_cast<Real>(thresholds.size());
}

} // namespace decap
