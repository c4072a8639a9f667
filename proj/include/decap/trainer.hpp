#pragma once

#include <iomanip>

#include "decap/checkpoint.hpp"
#include "decap/eval.hpp"

namespace decap {

struct TrainResult {
    std::size_t steps = 0;
    Real first_loss = 0.0;
    Real last_loss = 0.0;
    Real final_lr = 0.0;
};

namespace detail {

inline OptimizerState snapshot_optimizer(const NesterovOptimizer& opt) {
    OptimizerState s;
    s.kind = 1;
    s.lr = opt.lr;
    s.momentum = opt.momentum;
    for (const auto& [name, v] : opt.velocity) s.slots.emplace_back(name, v);
    return s;
}

inline OptimizerState snapshot_optimizer(const AdamOptimizer& opt) {
    OptimizerState s;
    s.kind = 2;
    s.lr = opt.lr;
    s.adam_t = opt.t;
    for (const auto& [name, mv] : opt.state) {
        s.slots.emplace_back(name + ".m", mv.first);
        s.slots.emplace_back(name + ".v", mv.second);
    }
    return s;
}

} // namespace detail

/// Per-step structured training log and checkpointing around the four-part
/// loss. One ground-truth segment's U-anchor minibatch per step, segments
/// visited round robin. Single-threaded and bitwise reproducible per seed.
inline TrainResult train(Model& m, const std::vector<VideoFeatures>& videos, const RunConfig& cfg,
                         std::ostream& log, const std::string& checkpoint_path = "",
                         const Checkpoint* resume = nullptr) {
    const TrainConfig& tc = cfg.train;
    auto anchors = build_anchor_grid(m.cfg.window, m.cfg.kernel_sizes, m.cfg.stride_factor);

    std::vector<std::vector<LabeledAnchor>> labels;
    std::vector<std::pair<std::size_t, std::size_t>> pairs; // (video, segment)
    for (std::size_t v = 0; v < videos.size(); ++v) {
        labels.push_back(label_anchors(anchors, videos[v].segments));
        for (std::size_t g = 0; g < videos[v].segments.size(); ++g) pairs.emplace_back(v, g);
    }
    if (pairs.empty()) throw std::runtime_error("train: dataset has no ground-truth segments");

    std::mt19937_64 rng(tc.seed);
    std::size_t start_step = 0;
    NesterovOptimizer sgd(tc.learning_rate, tc.momentum);
    AdamOptimizer adam(tc.adam_lr);
    const bool use_adam = tc.objective != TrainObjective::end_to_end;
    if (resume) {
        start_step = resume->step;
        std::istringstream rs(resume->rng_state);
        rs >> rng;
        const auto& os = resume->optimizer;
        if (os.kind == 1) {
            sgd.lr = os.lr;
            sgd.momentum = os.momentum;
            for (const auto& [name, v] : os.slots) sgd.velocity[name] = v;
        } else if (os.kind == 2) {
            adam.lr = os.lr;
            adam.t = os.adam_t;
            for (const auto& [name, v] : os.slots) {
                const bool is_m = name.size() > 2 && name.substr(name.size() - 2) == ".m";
                const std::string base = name.substr(0, name.size() - 2);
                if (is_m) adam.state[base].first = v;
                else adam.state[base].second = v;
            }
        }
    }

    TrainResult result;
    result.steps = start_step;
    Real best_eval = std::numeric_limits<Real>::infinity();
    std::size_t evals_since_improvement = 0;
    Real window_sum = 0.0;
    std::size_t window_count = 0;
    bool first_recorded = false;

    for (std::size_t step = start_step; step < tc.max_steps; ++step) {
        const auto [vi, gi] = pairs[step % pairs.size()];
        auto batch = sample_minibatch(labels[vi], gi, tc.anchors_per_segment, rng);
        if (batch.empty()) {
            log << "step=" << step << " skipped=1 video=" << videos[vi].name << " segment=" << gi
                << " reason=no_positive_anchors\n";
            continue;
        }
        Mode mode;
        mode.train = true;
        mode.dropout = m.cfg.dropout;
        mode.input_dropout = m.cfg.input_dropout;
        mode.rng = &rng;

        LossWeights w = tc.weights;
        bool caption_only = tc.objective == TrainObjective::caption_only;
        if (tc.objective == TrainObjective::proposal_only) w.caption_ce = 0.0;
        const std::size_t epoch = step / pairs.size();
        const Real ss = caption_only ? scheduled_sampling_ratio(epoch) : 0.0;

        m.zero_grads();
        LossParts parts;
        Real grad_norm = 0.0;
        try {
            parts = compute_loss(m, videos[vi], batch, anchors, w, mode, tc.mask_mode,
                                 caption_only, ss);
            parts.total->backward();
            grad_norm = clip_gradients(m.params, tc.clip_norm);
            if (use_adam) adam.step(m.params);
            else sgd.step(m.params);
        } catch (const std::runtime_error& e) {
            log << "step=" << step << " aborted=1 reason=\"" << e.what() << "\"\n";
            m.zero_grads();
            continue;
        }

        const Real total = parts.total->item();
        if (!first_recorded) {
            result.first_loss = total;
            first_recorded = true;
        }
        result.last_loss = total;
        result.steps = step + 1;

        const Real lr_now = use_adam ? adam.lr : sgd.lr;
        log << "step=" << step << " loss=" << total << " l_r=" << parts.regression
            << " l_m=" << parts.mask_bce << " l_e=" << parts.event_bce
            << " l_c=" << parts.caption_ce << " lr=" << lr_now << " grad_norm=" << grad_norm
            << "\n";

        // plateau detection on the running loss window
        window_sum += total;
        ++window_count;
        if (tc.eval_every > 0 && (step + 1) % tc.eval_every == 0 && window_count > 0) {
            const Real avg = window_sum / static_cast<Real>(window_count);
            window_sum = 0.0;
            window_count = 0;
            if (avg < best_eval - tc.plateau_min_delta) {
                best_eval = avg;
                evals_since_improvement = 0;
            } else if (++evals_since_improvement >= tc.plateau_patience) {
                if (use_adam) adam.lr *= tc.plateau_factor;
                else sgd.lr *= tc.plateau_factor;
                evals_since_improvement = 0;
                log << "step=" << step << " lr_decay=1 new_lr=" << (use_adam ? adam.lr : sgd.lr)
                    << "\n";
            }
        }
    }
    result.final_lr = use_adam ? adam.lr : sgd.lr;

    if (!checkpoint_path.empty()) {
        Checkpoint c = make_checkpoint(m, cfg);
        c.optimizer = use_adam ? detail::snapshot_optimizer(adam) : detail::snapshot_optimizer(sgd);
        std::ostringstream rs;
        rs << rng;
        c.rng_state = rs.str();
        c.step = tc.max_steps;
        save_checkpoint(c, checkpoint_path);
    }
    return result;
}

// ---------------------------------------------------------------------------
// evaluation driver

struct EvalOptions {
    Real score_threshold = 0.7;
    Real overlap_cap = 0.9;
    std::size_t min_proposals = 5;
    std::size_t max_proposals = 50;
    std::size_t ar_proposals = 10;
    std::vector<Real> ar_thresholds{0.5, 0.6, 0.7, 0.8, 0.9};
    std::vector<Real> dense_thresholds{0.3, 0.5, 0.7, 0.9};
    Real curve_threshold = 0.8;
    std::size_t curve_max_n = 20;
};

struct EvalReport {
    Real average_recall = 0.0;
    Real recall_at_curve_threshold = 0.0; // at ar_proposals
    Real dense_bleu4 = 0.0;
    std::vector<std::pair<std::size_t, Real>> curve;
    std::string report_text;
    std::string curve_csv;
    std::string results_text;
    std::vector<DenseCaptionResult> results;
};

inline EvalReport evaluate_model(Model& m, const std::vector<VideoFeatures>& videos,
                                 const EvalOptions& opt = {}) {
    EvalReport rep;
    std::vector<std::vector<EventProposal>> ranked;   // all proposals, score order
    std::vector<std::vector<std::pair<Real, Real>>> gt_segments;
    std::vector<std::vector<std::vector<std::string>>> gt_captions;
    for (const auto& v : videos) {
        auto props = propose_events(m, v);
        auto selected = select_proposals(props, opt.score_threshold, opt.overlap_cap,
                                         opt.min_proposals, opt.max_proposals);
        DenseCaptionResult res;
        for (const auto& p : selected) {
            auto ids = caption_segment(m, v, p);
            res.push_back({p, m.vocab.decode(ids)});
        }
        rep.results.push_back(std::move(res));
        ranked.push_back(std::move(props));
        gt_segments.push_back(v.segments);
        gt_captions.push_back(v.captions);
    }

    rep.average_recall = average_recall(ranked, gt_segments, opt.ar_proposals, opt.ar_thresholds);
    rep.recall_at_curve_threshold =
        average_recall(ranked, gt_segments, opt.ar_proposals, {opt.curve_threshold});
    rep.curve = recall_curve(ranked, gt_segments, opt.curve_max_n, opt.curve_threshold);
    auto bleu4 = [](const std::vector<std::string>& c, const std::vector<std::string>& r) {
        return bleu_n(c, {r}, 4);
    };
    rep.dense_bleu4 =
        dense_caption_score(rep.results, gt_segments, gt_captions, bleu4, opt.dense_thresholds);

    std::ostringstream os;
    os << std::fixed << std::setprecision(6);
    os << "videos " << videos.size() << "\n";
    os << "average_recall@" << opt.ar_proposals << " " << rep.average_recall << "\n";
    for (Real th : opt.ar_thresholds)
        os << "recall tiou=" << std::setprecision(2) << th << std::setprecision(6) << " n="
           << opt.ar_proposals << " " << average_recall(ranked, gt_segments, opt.ar_proposals, {th})
           << "\n";
    os << "dense_bleu4 " << rep.dense_bleu4 << "\n";
    for (Real th : opt.dense_thresholds)
        os << "dense_bleu4 tiou=" << std::setprecision(2) << th << std::setprecision(6) << " "
           << dense_caption_score(rep.results, gt_segments, gt_captions, bleu4, {th}) << "\n";
    rep.report_text = os.str();

    std::ostringstream csv;
    csv << "n_proposals,recall\n" << std::fixed << std::setprecision(6);
    for (const auto& [n, r] : rep.curve) csv << n << "," << r << "\n";
    rep.curve_csv = csv.str();

    std::ostringstream results;
    results << std::fixed << std::setprecision(4);
    for (std::size_t v = 0; v < videos.size(); ++v) {
        results << "video " << videos[v].name << "\n";
        for (const auto& cp : rep.results[v]) {
            results << "proposal " << cp.proposal.start << " " << cp.proposal.end << " "
                    << cp.proposal.score << " caption";
            for (const auto& w : cp.caption) results << " " << w;
            results << "\n";
        }
    }
    rep.results_text = results.str();
    return rep;
}

/// Teacher-forced next-token accuracy over ground-truth segments, using
/// binary masks built from the annotated boundaries ("GT proposals" mode).
inline Real teacher_forced_accuracy(Model& m, const std::vector<VideoFeatures>& videos) {
    Mode mode = eval_mode();
    std::size_t total = 0, correct = 0;
    for (const auto& v : videos) {
        for (std::size_t g = 0; g < v.segments.size(); ++g) {
            TensorPtr mask = bin_mask(v.segments[g].first, v.segments[g].second, m.cfg.window);
            auto fhat = masked_encoder_features(m, v.frames, mask, mode);
            auto gt = m.vocab.encode(v.captions[g]);
            auto [prefix, targets] = teacher_forced_loss_inputs(gt);
            TensorPtr logits = decode_forward(prefix, fhat, m.dec, mode);
            const std::size_t vsz = logits->shape[1];
            for (std::size_t i = 0; i < targets.size(); ++i) {
                const Real* row = logits->data.data() + i * vsz;
                std::size_t am = 0;
                for (std::size_t j = 1; j < vsz; ++j)
                    if (row[j] > row[am]) am = j;
                ++total;
                if (am == static_cast<std::size_t>(targets[i])) ++correct;
            }
        }
    }
    return total ? static_cast<Real>(correct) / static_cast<Real>(total) : 0.0;
}

} // namespace decap
