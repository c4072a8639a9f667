// Anchor labeling, minibatch sampling, loss composition, optimizers, and
// training-loop determinism.

#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "decap/trainer.hpp"

using namespace decap;
using Catch::Approx;

namespace {

Vocabulary make_vocab(const std::vector<std::string>& words) {
    Vocabulary v;
    for (const auto& w : words) v.add(w);
    return v;
}

Model tiny_model(std::uint64_t seed = 7) {
    ModelConfig cfg;
    cfg.window = 16;
    cfg.d_in = 4;
    cfg.d = 8;
    cfg.d_ff = 16;
    cfg.heads = 2;
    cfg.layers = 1;
    cfg.kernel_sizes = {4, 8};
    cfg.stride_factor = 4.0;
    cfg.dropout = 0.0;
    cfg.input_dropout = 0.0;
    Vocabulary vocab = make_vocab({"red", "blue"});
    return build_model(cfg, vocab, seed);
}

std::vector<LabeledAnchor> synthetic_pools(std::size_t n_pos, std::size_t n_neg) {
    std::vector<LabeledAnchor> out;
    for (std::size_t i = 0; i < n_pos; ++i) out.push_back({i, AnchorLabel::positive, 0, 0, 0});
    for (std::size_t i = 0; i < n_neg; ++i)
        out.push_back({n_pos + i, AnchorLabel::negative, 0, 0, 0});
    return out;
}

} // namespace

TEST_CASE("tiou hand cases") {
    REQUIRE(tiou({0, 10}, {0, 10}) == 1.0);
    REQUIRE(tiou({0, 10}, {20, 30}) == 0.0);
    REQUIRE(tiou({0, 10}, {10, 20}) == 0.0); // touching, zero overlap
    REQUIRE(tiou({0, 10}, {5, 15}) == Approx(5.0 / 15.0).margin(1e-12));
    REQUIRE(tiou({2, 4}, {0, 10}) == Approx(2.0 / 10.0).margin(1e-12));
    REQUIRE(tiou({5, 5}, {0, 10}) == 0.0); // degenerate segment
}

TEST_CASE("anchor labeling with inverted offset targets") {
    // anchor [4, 12) (center 8, length 8) vs gt [5, 13): tIoU 7/9 > 0.7.
    std::vector<Anchor> anchors{{8.0, 8.0, 8}};
    std::vector<std::pair<Real, Real>> gt{{5.0, 13.0}};
    auto labels = label_anchors(anchors, gt);
    REQUIRE(labels.size() == 1);
    REQUIRE(labels[0].label == AnchorLabel::positive);
    REQUIRE(labels[0].gt_idx == 0);
    // gt center 9, length 8: theta_c = (9 - 8)/8 = 1/8, theta_l = ln(8/8) = 0.
    REQUIRE(labels[0].target_theta_c == Approx(1.0 / 8.0).margin(1e-12));
    REQUIRE(labels[0].target_theta_l == Approx(0.0).margin(1e-12));
}

TEST_CASE("identical anchor gets zero offset targets") {
    std::vector<Anchor> anchors{{10.0, 6.0, 6}};
    auto labels = label_anchors(anchors, {{7.0, 13.0}});
    REQUIRE(labels[0].label == AnchorLabel::positive);
    REQUIRE(labels[0].target_theta_c == 0.0);
    REQUIRE(labels[0].target_theta_l == 0.0);
}

TEST_CASE("disjoint anchors are negative, intermediate overlap is ignored") {
    std::vector<Anchor> anchors{
        {30.0, 4.0, 4}, // [28, 32): disjoint from [4, 12)
        {4.0, 8.0, 8},  // [0, 8): tIoU 4/12 = 1/3, between thresholds
    };
    auto labels = label_anchors(anchors, {{4.0, 12.0}});
    REQUIRE(labels[0].label == AnchorLabel::negative);
    REQUIRE(labels[1].label == AnchorLabel::ignore);
}

TEST_CASE("offset targets invert the boundary equations") {
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<Real> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const Real gs = u(rng) * 50.0;
        const Real ge = gs + 2.0 + u(rng) * 20.0;
        Anchor a{(gs + ge) / 2.0 + u(rng) - 0.5, (ge - gs) * (0.8 + 0.4 * u(rng)), 8};
        auto labels = label_anchors({a}, {{gs, ge}}, -1.0, -2.0); // force positive
        auto [s, e] = anchor_to_boundaries_value(labels[0].target_theta_c,
                                                 labels[0].target_theta_l, a, 1e9);
        REQUIRE(std::abs(s - gs) <= 1e-9);
        REQUIRE(std::abs(e - ge) <= 1e-9);
    }
}

TEST_CASE("minibatch takes all positives when the pool is small") {
    auto labeled = synthetic_pools(5, 100);
    std::mt19937_64 rng(1);
    auto batch = sample_minibatch(labeled, 0, 10, rng);
    REQUIRE(batch.size() == 10);
    std::size_t pos = 0, neg = 0;
    for (const auto& la : batch) (la.label == AnchorLabel::positive ? pos : neg)++;
    REQUIRE(pos == 5);
    REQUIRE(neg == 5);
}

TEST_CASE("minibatch splits evenly when both pools are large") {
    auto labeled = synthetic_pools(20, 20);
    std::mt19937_64 rng(2);
    auto batch = sample_minibatch(labeled, 0, 10, rng);
    std::size_t pos = 0, neg = 0;
    for (const auto& la : batch) (la.label == AnchorLabel::positive ? pos : neg)++;
    REQUIRE(pos == 5);
    REQUIRE(neg == 5);
}

TEST_CASE("minibatch tops up with positives when negatives are scarce") {
    auto labeled = synthetic_pools(20, 2);
    std::mt19937_64 rng(3);
    auto batch = sample_minibatch(labeled, 0, 10, rng);
    std::size_t pos = 0, neg = 0;
    for (const auto& la : batch) (la.label == AnchorLabel::positive ? pos : neg)++;
    REQUIRE(pos == 8);
    REQUIRE(neg == 2);
}

TEST_CASE("minibatch is empty when the segment has no positive anchors") {
    auto labeled = synthetic_pools(0, 50);
    std::mt19937_64 rng(4);
    REQUIRE(sample_minibatch(labeled, 0, 10, rng).empty());
}

TEST_CASE("minibatch sampling is seed-deterministic") {
    auto labeled = synthetic_pools(30, 40);
    std::mt19937_64 r1(77), r2(77), r3(78);
    auto b1 = sample_minibatch(labeled, 0, 10, r1);
    auto b2 = sample_minibatch(labeled, 0, 10, r2);
    auto b3 = sample_minibatch(labeled, 0, 10, r3);
    REQUIRE(b1.size() == b2.size());
    bool same = true, same3 = b1.size() == b3.size();
    for (std::size_t i = 0; i < b1.size(); ++i) {
        same = same && b1[i].anchor_idx == b2[i].anchor_idx;
        if (same3) same3 = b1[i].anchor_idx == b3[i].anchor_idx;
    }
    REQUIRE(same);
    REQUIRE_FALSE(same3);
}

TEST_CASE("total loss is the weighted sum of its parts") {
    Model m = tiny_model(5);
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<Real> u(-1.0, 1.0);
    std::vector<Real> fr(m.cfg.window * m.cfg.d_in);
    for (auto& v : fr) v = u(rng);
    VideoFeatures video;
    video.frames = Tensor::create({m.cfg.window, m.cfg.d_in}, std::move(fr));
    video.segments = {{4.0, 12.0}};
    video.captions = {{"red", "blue"}};

    auto anchors = build_anchor_grid(m.cfg.window, m.cfg.kernel_sizes, m.cfg.stride_factor);
    auto labeled = label_anchors(anchors, video.segments);
    std::mt19937_64 srng(11);
    auto batch = sample_minibatch(labeled, 0, 6, srng);
    REQUIRE_FALSE(batch.empty());

    LossWeights w;
    w.regression = 10.0;
    w.mask_bce = 1.0;
    w.event_bce = 1.0;
    w.caption_ce = 0.25;
    Mode mode = eval_mode();
    auto parts = compute_loss(m, video, batch, anchors, w, mode, MaskMode::gated);
    const Real expect = 10.0 * parts.regression + 1.0 * parts.mask_bce +
                        1.0 * parts.event_bce + 0.25 * parts.caption_ce;
    REQUIRE(parts.total->item() == Approx(expect).margin(1e-9));

    auto cap_only = compute_loss(m, video, batch, anchors, w, mode, MaskMode::gated,
                                 /*caption_objective_only=*/true);
    REQUIRE(cap_only.total->item() == Approx(0.25 * cap_only.caption_ce).margin(1e-9));
}

TEST_CASE("gradient clipping rescales to the norm budget") {
    auto t = Tensor::create({2}, {0.0, 0.0}, true);
    t->ensure_grad();
    t->grad = {6.0, 8.0}; // norm 10
    std::vector<std::pair<std::string, TensorPtr>> params{{"t", t}};
    const Real pre = clip_gradients(params, 1.0);
    REQUIRE(pre == Approx(10.0).margin(1e-12));
    REQUIRE(t->grad[0] == Approx(0.6).margin(1e-12));
    REQUIRE(t->grad[1] == Approx(0.8).margin(1e-12));

    t->grad = {0.3, 0.4}; // norm 0.5, below the budget: unchanged
    REQUIRE(clip_gradients(params, 1.0) == Approx(0.5).margin(1e-12));
    REQUIRE(t->grad[0] == 0.3);

    t->grad = {std::numeric_limits<Real>::quiet_NaN(), 0.0};
    REQUIRE_THROWS_AS(clip_gradients(params, 1.0), std::runtime_error);
}

TEST_CASE("momentum sgd matches the hand-run recurrence on a parabola") {
    // f(x) = x^2, x0 = 1, lr = 0.1, mu = 0.95:
    // step 1: g=2, v=2, x = 1 - 0.1*(2 + 0.95*2) = 0.61
    // step 2: g=1.22, v=3.12, x = 0.61 - 0.1*(1.22 + 0.95*3.12) = 0.1916
    auto x = Tensor::create({1}, {1.0}, true);
    std::vector<std::pair<std::string, TensorPtr>> params{{"x", x}};
    NesterovOptimizer opt(0.1, 0.95);
    for (int i = 0; i < 2; ++i) {
        x->zero_grad();
        auto loss = mul(x, x);
        loss->backward();
        opt.step(params);
    }
    REQUIRE(x->data[0] == Approx(0.1916).margin(1e-12));
}

TEST_CASE("zero momentum reduces to vanilla gradient descent") {
    auto x = Tensor::create({1}, {3.0}, true);
    std::vector<std::pair<std::string, TensorPtr>> params{{"x", x}};
    NesterovOptimizer opt(0.25, 0.0);
    x->zero_grad();
    mul(x, x)->backward();
    opt.step(params);
    REQUIRE(x->data[0] == Approx(3.0 - 0.25 * 6.0).margin(1e-12));
}

TEST_CASE("adam first step moves by roughly lr in the gradient direction") {
    auto x = Tensor::create({1}, {2.0}, true);
    std::vector<std::pair<std::string, TensorPtr>> params{{"x", x}};
    AdamOptimizer opt(0.01);
    x->zero_grad();
    mul(x, x)->backward(); // g = 4
    opt.step(params);
    // bias-corrected m/sqrt(v) = g/|g| = 1 up to eps
    REQUIRE(x->data[0] == Approx(2.0 - 0.01).margin(1e-6));
    REQUIRE_THROWS_AS([&] {
        x->ensure_grad();
        x->grad[0] = std::numeric_limits<Real>::infinity();
        opt.step(params);
    }(), std::runtime_error);
}

TEST_CASE("scheduled sampling ratio schedule") {
    REQUIRE(scheduled_sampling_ratio(0) == Approx(0.05).margin(1e-12));
    REQUIRE(scheduled_sampling_ratio(4) == Approx(0.05).margin(1e-12));
    REQUIRE(scheduled_sampling_ratio(5) == Approx(0.10).margin(1e-12));
    REQUIRE(scheduled_sampling_ratio(12) == Approx(0.15).margin(1e-12));
    REQUIRE(scheduled_sampling_ratio(100) == Approx(0.25).margin(1e-12));
}

TEST_CASE("training is bitwise reproducible for a fixed seed") {
    RunConfig cfg;
    cfg.model.window = cfg.synth.window = 32;
    cfg.model.d_in = cfg.synth.d_in = 4;
    cfg.model.d = 8;
    cfg.model.d_ff = 16;
    cfg.model.heads = 2;
    cfg.model.layers = 1;
    cfg.model.kernel_sizes = {8, 16};
    cfg.model.dropout = 0.1;
    cfg.model.input_dropout = 0.1;
    cfg.train.max_steps = 8;
    cfg.train.eval_every = 4;
    cfg.train.seed = 42;
    cfg.synth.n_videos = 3;
    cfg.synth.event_len_min = 6;
    cfg.synth.event_len_max = 12;
    cfg.synth.seed = 42;

    auto videos = generate_dataset(cfg.synth);
    auto vocab = build_vocabulary(videos);

    auto run = [&] {
        Model m = build_model(cfg.model, vocab, cfg.train.seed);
        std::ostringstream log;
        auto r = train(m, videos, cfg, log);
        return std::make_pair(r.last_loss, log.str());
    };
    auto [l1, log1] = run();
    auto [l2, log2] = run();
    REQUIRE(l1 == l2);
    REQUIRE(log1 == log2);
}
