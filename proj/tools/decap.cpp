// Dense event captioning command-line tool: synthetic data generation,
// training, evaluation, proposal/caption inference, and gradient checking.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "decap/gradcheck.hpp"
#include "decap/trainer.hpp"

namespace fs = std::filesystem;
using namespace decap;

namespace {

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << text;
}

RunConfig load_run_config(const std::string& config_path) {
    if (config_path.empty()) return RunConfig{};
    return parse_config_file(config_path);
}

std::vector<VideoFeatures> load_inputs(const std::string& data_dir, const std::string& video_file) {
    if (!video_file.empty()) return {load_features(video_file)};
    if (!data_dir.empty()) return load_dataset(data_dir);
    throw std::runtime_error("either --data or --video is required");
}

int cmd_generate(const std::string& out_dir, const std::string& config_path) {
    RunConfig cfg = load_run_config(config_path);
    auto videos = generate_dataset(cfg.synth);
    fs::create_directories(out_dir);
    save_dataset(videos, out_dir);
    write_file(fs::path(out_dir) / "config.txt", config_to_text(cfg));
    std::size_t events = 0;
    for (const auto& v : videos) events += v.segments.size();
    std::cout << "wrote " << videos.size() << " videos (" << events << " events) to " << out_dir
              << "\n";
    return 0;
}

int cmd_train(const std::string& data_dir, const std::string& out_path,
              const std::string& config_path, const std::string& resume_path,
              const std::string& log_path, std::size_t steps_override) {
    auto videos = load_dataset(data_dir);
    std::ofstream log_file;
    std::ostream* log = &std::cout;
    if (!log_path.empty()) {
        log_file.open(log_path, std::ios::binary);
        if (!log_file) throw std::runtime_error("cannot write " + log_path);
        log = &log_file;
    }

    if (!resume_path.empty()) {
        Checkpoint c = load_checkpoint(resume_path);
        Model m = restore_model(c);
        if (steps_override) c.config.train.max_steps = steps_override;
        auto r = train(m, videos, c.config, *log, out_path, &c);
        std::cout << "resumed at step " << c.step << ", trained to step " << r.steps
                  << ", loss " << r.last_loss << ", checkpoint " << out_path << "\n";
        return 0;
    }
    RunConfig cfg = load_run_config(config_path);
    if (steps_override) cfg.train.max_steps = steps_override;
    Vocabulary vocab = build_vocabulary(videos);
    Model m = build_model(cfg.model, vocab, cfg.train.seed);
    auto r = train(m, videos, cfg, *log, out_path);
    std::cout << "trained " << r.steps << " steps, loss " << r.first_loss << " -> " << r.last_loss
              << ", checkpoint " << out_path << "\n";
    return 0;
}

int cmd_eval(const std::string& data_dir, const std::string& ckpt_path,
             const std::string& out_dir) {
    auto videos = load_dataset(data_dir);
    Model m = restore_model(load_checkpoint(ckpt_path));
    EvalReport rep = evaluate_model(m, videos);
    fs::create_directories(out_dir);
    write_file(fs::path(out_dir) / "report.txt", rep.report_text);
    write_file(fs::path(out_dir) / "recall_curve.csv", rep.curve_csv);
    write_file(fs::path(out_dir) / "results.txt", rep.results_text);
    std::cout << rep.report_text;
    return 0;
}

int cmd_propose(const std::string& data_dir, const std::string& video_file,
                const std::string& ckpt_path, std::size_t top_n) {
    Model m = restore_model(load_checkpoint(ckpt_path));
    for (const auto& v : load_inputs(data_dir, video_file)) {
        auto props = propose_events(m, v);
        if (props.size() > top_n) props.resize(top_n);
        std::cout << "video " << v.name << "\n";
        std::cout << std::fixed << std::setprecision(4);
        for (const auto& p : props)
            std::cout << p.start << " " << p.end << " " << p.score << "\n";
    }
    return 0;
}

int cmd_caption(const std::string& data_dir, const std::string& video_file,
                const std::string& ckpt_path, bool gt_segments) {
    Model m = restore_model(load_checkpoint(ckpt_path));
    std::cout << std::fixed << std::setprecision(4);
    for (const auto& v : load_inputs(data_dir, video_file)) {
        std::cout << "video " << v.name << "\n";
        std::vector<EventProposal> segments;
        if (gt_segments) {
            for (const auto& [s, e] : v.segments) segments.push_back({s, e, 1.0, Anchor{}});
        } else {
            segments = select_proposals(propose_events(m, v), 0.7, 0.9, 5, 50);
        }
        for (const auto& p : segments) {
            auto words = m.vocab.decode(caption_segment(m, v, p, gt_segments));
            std::cout << p.start << " " << p.end;
            for (const auto& w : words) std::cout << " " << w;
            std::cout << "\n";
        }
    }
    return 0;
}

int cmd_gradcheck(std::size_t samples, Real tol, std::uint64_t seed) {
    RunConfig cfg;
    cfg.model.window = 16;
    cfg.model.d_in = 4;
    cfg.model.d = 16;
    cfg.model.d_ff = 32;
    cfg.model.heads = 2;
    cfg.model.layers = 1;
    cfg.model.kernel_sizes = {4, 8};
    cfg.model.dropout = 0.0;
    cfg.model.input_dropout = 0.0;
    cfg.synth.window = 16;
    cfg.synth.d_in = 4;
    cfg.synth.n_videos = 1;
    cfg.synth.events_min = cfg.synth.events_max = 1;
    cfg.synth.event_len_min = 4;
    cfg.synth.event_len_max = 8;
    cfg.synth.seed = seed;

    auto videos = generate_dataset(cfg.synth);
    Model m = build_model(cfg.model, build_vocabulary(videos), seed);
    auto anchors = build_anchor_grid(cfg.model.window, cfg.model.kernel_sizes,
                                     cfg.model.stride_factor);
    auto labeled = label_anchors(anchors, videos[0].segments);
    std::mt19937_64 rng(seed);
    auto batch = sample_minibatch(labeled, 0, 4, rng);
    if (batch.empty()) throw std::runtime_error("gradcheck: no positive anchors in sample video");

    auto loss_fn = [&]() {
        Mode mode = eval_mode();
        return compute_loss(m, videos[0], batch, anchors, LossWeights{}, mode,
                            cfg.model.mask_mode)
            .total;
    };
    auto res = check_gradients(m.params, loss_fn, samples, rng);
    std::cout << "checked " << res.checked << " entries, max rel err " << res.max_rel_err
              << " (param " << res.worst.param << "[" << res.worst.index << "] analytic "
              << res.worst.analytic << " numeric " << res.worst.numeric << ")\n";
    std::cout << (res.ok(tol) ? "PASS" : "FAIL") << " (tolerance " << tol << ")\n";
    return res.ok(tol) ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"dense event captioning: masked-transformer proposals and captions"};
    app.require_subcommand(1);

    std::string data_dir, video_file, config_path, out_path, resume_path, log_path;
    std::size_t top_n = 10, samples = 8;
    Real tol = 1e-4;
    std::uint64_t seed = 7;
    bool gt_segments = false;

    auto* gen = app.add_subcommand("generate", "write a synthetic feature dataset");
    gen->add_option("--out", out_path, "output directory")->required();
    gen->add_option("--config", config_path, "key=value config file");

    auto* tr = app.add_subcommand("train", "train a model on a dataset directory");
    tr->add_option("--data", data_dir, "dataset directory")->required();
    tr->add_option("--out", out_path, "checkpoint output path")->required();
    tr->add_option("--config", config_path, "key=value config file");
    tr->add_option("--resume", resume_path, "checkpoint to resume from");
    tr->add_option("--log", log_path, "training log path (default: stdout)");
    std::size_t steps_override = 0;
    tr->add_option("--steps", steps_override, "override total training steps");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint and write reports");
    ev->add_option("--data", data_dir, "dataset directory")->required();
    ev->add_option("--checkpoint", resume_path, "model checkpoint")->required();
    ev->add_option("--out", out_path, "report output directory")->required();

    auto* pr = app.add_subcommand("propose", "print ranked event proposals");
    pr->add_option("--data", data_dir, "dataset directory");
    pr->add_option("--video", video_file, "single feature file");
    pr->add_option("--checkpoint", resume_path, "model checkpoint")->required();
    pr->add_option("--top", top_n, "number of proposals to print");

    auto* cap = app.add_subcommand("caption", "caption proposals or annotated segments");
    cap->add_option("--data", data_dir, "dataset directory");
    cap->add_option("--video", video_file, "single feature file");
    cap->add_option("--checkpoint", resume_path, "model checkpoint")->required();
    cap->add_flag("--gt-segments", gt_segments, "caption the annotated segments");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check");
    gc->add_option("--samples", samples, "entries sampled per parameter");
    gc->add_option("--tol", tol, "max allowed relative error");
    gc->add_option("--seed", seed, "random seed");

    if (argc <= 1) {
        std::cout << app.help();
        return 1;
    }
    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_generate(out_path, config_path);
        if (tr->parsed())
            return cmd_train(data_dir, out_path, config_path, resume_path, log_path,
                             steps_override);
        if (ev->parsed()) return cmd_eval(data_dir, resume_path, out_path);
        if (pr->parsed()) return cmd_propose(data_dir, video_file, resume_path, top_n);
        if (cap->parsed()) return cmd_caption(data_dir, video_file, resume_path, gt_segments);
        if (gc->parsed()) return cmd_gradcheck(samples, tol, seed);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
