// Synthetic dataset generation, feature-file round trips, checkpoints, and
// configuration parsing.

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "decap/checkpoint.hpp"

using namespace decap;
using Catch::Approx;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

SyntheticSpec small_spec() {
    SyntheticSpec spec;
    spec.n_videos = 6;
    spec.window = 32;
    spec.d_in = 4;
    spec.events_min = 1;
    spec.events_max = 2;
    spec.n_patterns = 2;
    spec.event_len_min = 4;
    spec.event_len_max = 10;
    spec.sigma = 0.1;
    spec.seed = 5;
    return spec;
}

Model tiny_model() {
    ModelConfig cfg;
    cfg.window = 16;
    cfg.d_in = 4;
    cfg.d = 8;
    cfg.d_ff = 16;
    cfg.heads = 2;
    cfg.layers = 1;
    cfg.kernel_sizes = {4, 8};
    Vocabulary vocab;
    vocab.add("red");
    vocab.add("blue");
    return build_model(cfg, vocab, 7);
}

} // namespace

TEST_CASE("noiseless videos are the bare pattern motifs") {
    SyntheticSpec spec = small_spec();
    spec.sigma = 0.0;
    auto videos = generate_dataset(spec);
    REQUIRE(videos.size() == spec.n_videos);
    for (const auto& v : videos) {
        REQUIRE(v.frames->shape == std::vector<std::size_t>{spec.window, spec.d_in});
        REQUIRE_FALSE(v.segments.empty());
        REQUIRE(v.segments.size() == v.captions.size());
        auto in_event = [&](std::size_t t) {
            for (const auto& [s, e] : v.segments)
                if (static_cast<Real>(t) >= s && static_cast<Real>(t) < e) return true;
            return false;
        };
        for (std::size_t t = 0; t < spec.window; ++t) {
            Real norm = 0.0;
            for (std::size_t j = 0; j < spec.d_in; ++j) {
                const Real x = v.frames->data[t * spec.d_in + j];
                norm += x * x;
            }
            if (in_event(t)) REQUIRE(norm > 0.0);
            else REQUIRE(norm == 0.0);
        }
        // every frame of a segment carries the same motif
        for (const auto& [s, e] : v.segments) {
            const std::size_t t0 = static_cast<std::size_t>(s);
            for (std::size_t t = t0 + 1; t < static_cast<std::size_t>(e); ++t)
                for (std::size_t j = 0; j < spec.d_in; ++j)
                    REQUIRE(v.frames->data[t * spec.d_in + j] ==
                            v.frames->data[t0 * spec.d_in + j]);
        }
    }
}

TEST_CASE("dataset generation is seed deterministic") {
    auto a = generate_dataset(small_spec());
    auto b = generate_dataset(small_spec());
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].frames->data == b[i].frames->data);
        REQUIRE(a[i].segments == b[i].segments);
        REQUIRE(a[i].captions == b[i].captions);
    }
    SyntheticSpec other = small_spec();
    other.seed = 6;
    auto c = generate_dataset(other);
    REQUIRE(a[0].frames->data != c[0].frames->data);
}

TEST_CASE("generation rejects impossible specs") {
    SyntheticSpec spec = small_spec();
    spec.events_min = 3;
    spec.events_max = 2;
    REQUIRE_THROWS_AS(generate_dataset(spec), std::invalid_argument);
    spec = small_spec();
    spec.event_len_max = spec.window + 1;
    REQUIRE_THROWS_AS(generate_dataset(spec), std::invalid_argument);
    spec = small_spec();
    spec.events_max = 4;
    spec.event_len_min = spec.event_len_max = 10; // 40 > 32
    REQUIRE_THROWS_AS(generate_dataset(spec), std::runtime_error);
}

TEST_CASE("captions follow the template and the vocabulary covers them") {
    SyntheticSpec spec = small_spec();
    REQUIRE(caption_for_pattern(spec, 0) == std::vector<std::string>{"make", "alpha", "now"});
    REQUIRE(caption_for_pattern(spec, 1) == std::vector<std::string>{"make", "beta", "now"});

    auto videos = generate_dataset(spec);
    auto vocab = build_vocabulary(videos);
    std::set<std::string> distinct;
    for (const auto& v : videos)
        for (const auto& c : v.captions) {
            REQUIRE(c.size() == 3);
            REQUIRE(c[0] == "make");
            REQUIRE(c[2] == "now");
            for (const auto& w : c) distinct.insert(w);
        }
    // four sentinels plus every distinct caption token, nothing else
    REQUIRE(vocab.size() == 4 + distinct.size());
    for (const auto& w : distinct) REQUIRE(vocab.lookup(w) >= 4);
}

TEST_CASE("feature files round-trip exactly") {
    auto videos = generate_dataset(small_spec());
    const std::string path = temp_path("roundtrip.mevc");
    save_features(videos[0], path);
    auto loaded = load_features(path);
    REQUIRE(loaded.frames->shape == videos[0].frames->shape);
    REQUIRE(loaded.frames->data == videos[0].frames->data);
    REQUIRE(loaded.segments == videos[0].segments);
    REQUIRE(loaded.captions == videos[0].captions);
    std::remove(path.c_str());
}

TEST_CASE("dataset directories load back in order") {
    auto videos = generate_dataset(small_spec());
    const std::string dir = temp_path("dataset_dir_test");
    save_dataset(videos, dir);
    auto loaded = load_dataset(dir);
    REQUIRE(loaded.size() == videos.size());
    for (std::size_t i = 0; i < videos.size(); ++i) {
        REQUIRE(loaded[i].frames->data == videos[i].frames->data);
        REQUIRE(loaded[i].segments == videos[i].segments);
    }
    std::filesystem::remove_all(dir);
    REQUIRE_THROWS_AS(load_dataset(dir), std::runtime_error);
}

TEST_CASE("truncated feature files report the byte offset") {
    auto videos = generate_dataset(small_spec());
    const std::string path = temp_path("trunc.mevc");
    save_features(videos[0], path);
    std::filesystem::resize_file(path, 25);
    try {
        load_features(path);
        FAIL("expected a parse error");
    } catch (const std::runtime_error& e) {
        REQUIRE(std::string(e.what()).find("byte offset") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("feature files with a bad magic are rejected") {
    const std::string path = temp_path("badmagic.mevc");
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOPE" << std::string(64, '\0');
    }
    REQUIRE_THROWS_AS(load_features(path), std::runtime_error);
    std::remove(path.c_str());
}

TEST_CASE("segments past the window are rejected on load") {
    auto videos = generate_dataset(small_spec());
    VideoFeatures bad = videos[0];
    bad.segments = {{0.0, static_cast<Real>(small_spec().window) + 5.0}};
    bad.captions = {{"make", "alpha", "now"}};
    const std::string path = temp_path("badseg.mevc");
    save_features(bad, path);
    try {
        load_features(path);
        FAIL("expected a validation error");
    } catch (const std::runtime_error& e) {
        REQUIRE(std::string(e.what()).find("violates") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("checkpoints round-trip the full model state") {
    Model m = tiny_model();
    // make the batch-norm stats non-trivial
    m.prop.bn1_state.running_mean.assign(m.cfg.d / 2, 0.25);
    m.prop.bn1_state.running_var.assign(m.cfg.d / 2, 2.0);
    RunConfig cfg;
    cfg.model = m.cfg;
    Checkpoint c = make_checkpoint(m, cfg);
    c.optimizer.kind = 1;
    c.optimizer.lr = 0.05;
    c.optimizer.momentum = 0.95;
    c.optimizer.slots.emplace_back("embed.w", std::vector<Real>(m.embed_w->data.size(), 0.5));
    c.rng_state = "12345 678";
    c.step = 17;

    const std::string path = temp_path("ckpt_test.bin");
    save_checkpoint(c, path);
    Checkpoint l = load_checkpoint(path);
    REQUIRE(l.step == 17);
    REQUIRE(l.rng_state == "12345 678");
    REQUIRE(l.optimizer.kind == 1);
    REQUIRE(l.optimizer.lr == 0.05);
    REQUIRE(l.optimizer.slots.size() == 1);
    REQUIRE(l.optimizer.slots[0].second == c.optimizer.slots[0].second);
    REQUIRE(l.vocab.tokens == m.vocab.tokens);

    Model r = restore_model(l);
    REQUIRE(r.params.size() == m.params.size());
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        REQUIRE(r.params[i].first == m.params[i].first);
        REQUIRE(r.params[i].second->data == m.params[i].second->data);
    }
    REQUIRE(r.prop.bn1_state.running_mean == m.prop.bn1_state.running_mean);
    REQUIRE(r.prop.bn1_state.running_var == m.prop.bn1_state.running_var);
    std::remove(path.c_str());
}

TEST_CASE("checkpoints with an unknown version are rejected") {
    Model m = tiny_model();
    RunConfig cfg;
    cfg.model = m.cfg;
    const std::string path = temp_path("ckpt_ver.bin");
    save_checkpoint(make_checkpoint(m, cfg), path);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        const std::uint32_t bogus = 99;
        f.write(reinterpret_cast<const char*>(&bogus), 4);
    }
    try {
        load_checkpoint(path);
        FAIL("expected a version error");
    } catch (const std::runtime_error& e) {
        REQUIRE(std::string(e.what()).find("99") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("config parsing applies keys and rejects unknown ones") {
    std::istringstream is(
        "# comment\n"
        "\n"
        "d = 32\n"
        "kernel_sizes = 4,8,16\n"
        "mask_mode = discrete\n"
        "learning_rate = 0.01\n"
        "caption_template = do <pattern> twice\n");
    RunConfig cfg = parse_config(is);
    REQUIRE(cfg.model.d == 32);
    REQUIRE(cfg.model.kernel_sizes == std::vector<int>{4, 8, 16});
    REQUIRE(cfg.model.mask_mode == MaskMode::discrete);
    REQUIRE(cfg.train.mask_mode == MaskMode::discrete);
    REQUIRE(cfg.train.learning_rate == 0.01);
    REQUIRE(cfg.synth.caption_template == "do <pattern> twice");

    std::istringstream bad("no_such_key = 1\n");
    try {
        parse_config(bad);
        FAIL("expected an unknown-key error");
    } catch (const std::invalid_argument& e) {
        REQUIRE(std::string(e.what()).find("no_such_key") != std::string::npos);
    }

    std::istringstream noeq("just some words\n");
    REQUIRE_THROWS_AS(parse_config(noeq), std::invalid_argument);
    std::istringstream badmode("mask_mode = fuzzy\n");
    REQUIRE_THROWS_AS(parse_config(badmode), std::invalid_argument);
}

TEST_CASE("config serialization round-trips") {
    RunConfig cfg;
    cfg.model.d = 48;
    cfg.model.kernel_sizes = {3, 5, 7};
    cfg.model.mask_mode = cfg.train.mask_mode = MaskMode::discrete;
    cfg.train.learning_rate = 0.0125;
    cfg.train.objective = TrainObjective::caption_only;
    cfg.synth.sigma = 0.05;
    cfg.synth.caption_template = "show <pattern> here";

    std::istringstream is(config_to_text(cfg));
    RunConfig back = parse_config(is);
    REQUIRE(back.model.d == cfg.model.d);
    REQUIRE(back.model.kernel_sizes == cfg.model.kernel_sizes);
    REQUIRE(back.model.mask_mode == MaskMode::discrete);
    REQUIRE(back.train.learning_rate == cfg.train.learning_rate);
    REQUIRE(back.train.objective == TrainObjective::caption_only);
    REQUIRE(back.synth.sigma == cfg.synth.sigma);
    REQUIRE(back.synth.caption_template == cfg.synth.caption_template);
    REQUIRE(config_to_text(back) == config_to_text(cfg));
}
