#pragma once

#include <fstream>

#include "decap/data.hpp"
#include "decap/training.hpp"

namespace decap {

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    SyntheticSpec synth;
};

namespace detail {

inline std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::string item;
    std::istringstream is(s);
    while (std::getline(is, item, ','))
        if (!item.empty()) out.push_back(std::stoi(item));
    return out;
}

} // namespace detail

/// Flat key=value configuration. Blank lines and lines starting with '#' are
/// skipped; unknown keys are errors.
inline void apply_config_line(RunConfig& cfg, const std::string& key, const std::string& value) {
    auto as_real = [&] { return std::stod(value); };
    auto as_size = [&] { return static_cast<std::size_t>(std::stoull(value)); };
    auto as_bool = [&] {
        if (value == "1" || value == "true") return true;
        if (value == "0" || value == "false") return false;
        throw std::invalid_argument("config: boolean key " + key + " got '" + value + "'");
    };
    // model
    if (key == "window") cfg.model.window = cfg.synth.window = as_size();
    else if (key == "d_in") cfg.model.d_in = cfg.synth.d_in = as_size();
    else if (key == "d") cfg.model.d = as_size();
    else if (key == "d_ff") cfg.model.d_ff = as_size();
    else if (key == "heads") cfg.model.heads = as_size();
    else if (key == "layers") cfg.model.layers = as_size();
    else if (key == "kernel_sizes") cfg.model.kernel_sizes = detail::parse_int_list(value);
    else if (key == "stride_factor") cfg.model.stride_factor = as_real();
    else if (key == "positional_encoding") cfg.model.positional_encoding = as_bool();
    else if (key == "dropout") cfg.model.dropout = as_real();
    else if (key == "input_dropout") cfg.model.input_dropout = as_real();
    else if (key == "max_caption_len") cfg.model.max_caption_len = as_size();
    else if (key == "mask_mode") {
        if (value == "gated") cfg.model.mask_mode = cfg.train.mask_mode = MaskMode::gated;
        else if (value == "discrete") cfg.model.mask_mode = cfg.train.mask_mode = MaskMode::discrete;
        else throw std::invalid_argument("config: mask_mode must be gated or discrete");
    }
    // training
    else if (key == "learning_rate") cfg.train.learning_rate = as_real();
    else if (key == "momentum") cfg.train.momentum = as_real();
    else if (key == "clip_norm") cfg.train.clip_norm = as_real();
    else if (key == "plateau_factor") cfg.train.plateau_factor = as_real();
    else if (key == "plateau_min_delta") cfg.train.plateau_min_delta = as_real();
    else if (key == "plateau_patience") cfg.train.plateau_patience = as_size();
    else if (key == "anchors_per_segment") cfg.train.anchors_per_segment = as_size();
    else if (key == "max_steps") cfg.train.max_steps = as_size();
    else if (key == "eval_every") cfg.train.eval_every = as_size();
    else if (key == "lambda_regression") cfg.train.weights.regression = as_real();
    else if (key == "lambda_mask") cfg.train.weights.mask_bce = as_real();
    else if (key == "lambda_event") cfg.train.weights.event_bce = as_real();
    else if (key == "lambda_caption") cfg.train.weights.caption_ce = as_real();
    else if (key == "objective") {
        if (value == "end_to_end") cfg.train.objective = TrainObjective::end_to_end;
        else if (value == "proposal_only") cfg.train.objective = TrainObjective::proposal_only;
        else if (value == "caption_only") cfg.train.objective = TrainObjective::caption_only;
        else throw std::invalid_argument("config: unknown objective '" + value + "'");
    }
    else if (key == "adam_lr") cfg.train.adam_lr = as_real();
    else if (key == "seed") cfg.train.seed = cfg.synth.seed = std::stoull(value);
    // synthetic data
    else if (key == "n_videos") cfg.synth.n_videos = as_size();
    else if (key == "events_min") cfg.synth.events_min = as_size();
    else if (key == "events_max") cfg.synth.events_max = as_size();
    else if (key == "n_patterns") cfg.synth.n_patterns = as_size();
    else if (key == "event_len_min") cfg.synth.event_len_min = as_size();
    else if (key == "event_len_max") cfg.synth.event_len_max = as_size();
    else if (key == "sigma") cfg.synth.sigma = as_real();
    else if (key == "allow_overlap") cfg.synth.allow_overlap = as_bool();
    else if (key == "caption_template") cfg.synth.caption_template = value;
    else throw std::invalid_argument("config: unknown key '" + key + "'");
}

inline RunConfig parse_config(std::istream& is) {
    RunConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                        " is not key=value: '" + line + "'");
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        apply_config_line(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

inline RunConfig parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    return parse_config(is);
}

/// Serialize every hyperparameter back to key=value text (used inside
/// checkpoints; parseable by parse_config).
inline std::string config_to_text(const RunConfig& cfg) {
    std::ostringstream os;
    os.precision(17);
    os << "window=" << cfg.model.window << "\n";
    os << "d_in=" << cfg.model.d_in << "\n";
    os << "d=" << cfg.model.d << "\n";
    os << "d_ff=" << cfg.model.d_ff << "\n";
    os << "heads=" << cfg.model.heads << "\n";
    os << "layers=" << cfg.model.layers << "\n";
    os << "kernel_sizes=";
    for (std::size_t i = 0; i < cfg.model.kernel_sizes.size(); ++i)
        os << (i ? "," : "") << cfg.model.kernel_sizes[i];
    os << "\n";
    os << "stride_factor=" << cfg.model.stride_factor << "\n";
    os << "positional_encoding=" << (cfg.model.positional_encoding ? 1 : 0) << "\n";
    os << "dropout=" << cfg.model.dropout << "\n";
    os << "input_dropout=" << cfg.model.input_dropout << "\n";
    os << "max_caption_len=" << cfg.model.max_caption_len << "\n";
    os << "mask_mode=" << (cfg.model.mask_mode == MaskMode::gated ? "gated" : "discrete") << "\n";
    os << "learning_rate=" << cfg.train.learning_rate << "\n";
    os << "momentum=" << cfg.train.momentum << "\n";
    os << "clip_norm=" << cfg.train.clip_norm << "\n";
    os << "plateau_factor=" << cfg.train.plateau_factor << "\n";
    os << "plateau_min_delta=" << cfg.train.plateau_min_delta << "\n";
    os << "plateau_patience=" << cfg.train.plateau_patience << "\n";
    os << "anchors_per_segment=" << cfg.train.anchors_per_segment << "\n";
    os << "max_steps=" << cfg.train.max_steps << "\n";
    os << "eval_every=" << cfg.train.eval_every << "\n";
    os << "lambda_regression=" << cfg.train.weights.regression << "\n";
    os << "lambda_mask=" << cfg.train.weights.mask_bce << "\n";
    os << "lambda_event=" << cfg.train.weights.event_bce << "\n";
    os << "lambda_caption=" << cfg.train.weights.caption_ce << "\n";
    os << "objective="
       << (cfg.train.objective == TrainObjective::end_to_end
               ? "end_to_end"
               : cfg.train.objective == TrainObjective::proposal_only ? "proposal_only"
                                                                      : "caption_only")
       << "\n";
    os << "adam_lr=" << cfg.train.adam_lr << "\n";
    os << "seed=" << cfg.train.seed << "\n";
    os << "n_videos=" << cfg.synth.n_videos << "\n";
    os << "events_min=" << cfg.synth.events_min << "\n";
    os << "events_max=" << cfg.synth.events_max << "\n";
    os << "n_patterns=" << cfg.synth.n_patterns << "\n";
    os << "event_len_min=" << cfg.synth.event_len_min << "\n";
    os << "event_len_max=" << cfg.synth.event_len_max << "\n";
    os << "sigma=" << cfg.synth.sigma << "\n";
    os << "allow_overlap=" << (cfg.synth.allow_overlap ? 1 : 0) << "\n";
    os << "caption_template=" << cfg.synth.caption_template << "\n";
    return os.str();
}

} // namespace decap
