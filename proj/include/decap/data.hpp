#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>

#include "decap/model.hpp"

namespace decap {

struct SyntheticSpec {
    std::size_t n_videos = 10;
    std::size_t window = 64; // T
    std::size_t d_in = 16;
    std::size_t events_min = 1;
    std::size_t events_max = 2;
    std::size_t n_patterns = 4; // P
    std::size_t event_len_min = 8;
    std::size_t event_len_max = 24;
    Real sigma = 0.1;
    bool allow_overlap = false;
    std::string caption_template = "make <pattern> now";
    std::uint64_t seed = 1;
};

namespace detail {

inline std::string pattern_word(std::size_t i) {
    static const char* base[] = {"alpha", "beta",  "gamma", "delta", "epsilon", "zeta",
                                 "eta",   "theta", "iota",  "kappa", "lambda",  "mu"};
    const std::size_t n = sizeof(base) / sizeof(base[0]);
    std::string w = base[i % n];
    if (i >= n) w += std::to_string(i / n);
    return w;
}

inline std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

} // namespace detail

/// Caption tokens for a pattern id: the template with <pattern> replaced by
/// the pattern's slot word.
inline std::vector<std::string> caption_for_pattern(const SyntheticSpec& spec, std::size_t pat) {
    std::vector<std::string> out;
    for (auto& tok : detail::split_ws(spec.caption_template))
        out.push_back(tok == "<pattern>" ? detail::pattern_word(pat) : tok);
    return out;
}

/// Deterministic synthetic videos: background frames are Gaussian noise, event
/// frames are a pattern motif plus noise, captions follow the grammar.
inline std::vector<VideoFeatures> generate_dataset(const SyntheticSpec& spec) {
    if (spec.events_min < 1 || spec.events_max < spec.events_min)
        throw std::invalid_argument("generate_dataset: bad event count range");
    if (spec.event_len_min < 1 || spec.event_len_max < spec.event_len_min ||
        spec.event_len_max > spec.window)
        throw std::invalid_argument("generate_dataset: bad event length range");
    if (!spec.allow_overlap && spec.events_max * spec.event_len_max > spec.window)
        throw std::runtime_error("generate_dataset: events cannot fit the window (" +
                                 std::to_string(spec.events_max) + " x " +
                                 std::to_string(spec.event_len_max) + " > " +
                                 std::to_string(spec.window) + ")");
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<Real> gauss(0.0, 1.0);
    std::vector<std::vector<Real>> patterns(spec.n_patterns, std::vector<Real>(spec.d_in));
    for (auto& p : patterns)
        for (auto& v : p) v = gauss(rng);

    std::vector<VideoFeatures> videos;
    for (std::size_t vi = 0; vi < spec.n_videos; ++vi) {
        VideoFeatures vf;
        vf.name = "video_" + std::to_string(vi);
        std::uniform_int_distribution<std::size_t> n_events_dist(spec.events_min, spec.events_max);
        const std::size_t n_events = n_events_dist(rng);
        // place events left to right with random gaps
        std::uniform_int_distribution<std::size_t> len_dist(spec.event_len_min, spec.event_len_max);
        std::vector<std::size_t> lengths(n_events);
        std::size_t total = 0;
        for (auto& l : lengths) {
            l = len_dist(rng);
            total += l;
        }
        if (!spec.allow_overlap && total > spec.window)
            throw std::runtime_error("generate_dataset: sampled events do not fit the window");
        std::size_t slack = spec.window - std::min(total, spec.window);
        std::size_t cursor = 0;
        std::vector<std::size_t> pattern_ids;
        std::uniform_int_distribution<std::size_t> pat_dist(0, spec.n_patterns - 1);
        for (std::size_t e = 0; e < n_events; ++e) {
            std::uniform_int_distribution<std::size_t> gap_dist(0, slack);
            const std::size_t gap = gap_dist(rng);
            slack -= gap;
            const std::size_t start = cursor + gap;
            const std::size_t end = start + lengths[e];
            cursor = end;
            const std::size_t pat = pat_dist(rng);
            pattern_ids.push_back(pat);
            vf.segments.emplace_back(static_cast<Real>(start), static_cast<Real>(end));
            vf.captions.push_back(caption_for_pattern(spec, pat));
        }
        std::vector<Real> frames(spec.window * spec.d_in);
        for (auto& v : frames) v = spec.sigma * gauss(rng);
        for (std::size_t e = 0; e < n_events; ++e) {
            const auto [s, en] = vf.segments[e];
            for (std::size_t t = static_cast<std::size_t>(s); t < static_cast<std::size_t>(en); ++t)
                for (std::size_t j = 0; j < spec.d_in; ++j)
                    frames[t * spec.d_in + j] += patterns[pattern_ids[e]][j];
        }
        // storage is 32-bit; quantize so files round-trip exactly
        for (auto& v : frames) v = static_cast<Real>(static_cast<float>(v));
        vf.frames = Tensor::create({spec.window, spec.d_in}, std::move(frames));
        videos.push_back(std::move(vf));
    }
    return videos;
}

/// Vocabulary over a dataset: the four sentinels plus all caption tokens in
/// sorted order.
inline Vocabulary build_vocabulary(const std::vector<VideoFeatures>& videos) {
    std::vector<std::string> toks;
    for (const auto& v : videos)
        for (const auto& c : v.captions) toks.insert(toks.end(), c.begin(), c.end());
    std::sort(toks.begin(), toks.end());
    toks.erase(std::unique(toks.begin(), toks.end()), toks.end());
    Vocabulary vocab;
    for (const auto& t : toks) vocab.add(t);
    return vocab;
}

// ---------------------------------------------------------------------------
// feature-file format: magic "MEVC", u32 version, u32 T, u32 d_in, row-major
// little-endian f32 frames, then a text annotation block.

inline constexpr std::uint32_t kFeatureFileVersion = 1;

inline void save_features(const VideoFeatures& vf, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_features: cannot open " + path);
    const std::uint32_t T = static_cast<std::uint32_t>(vf.frames->shape[0]);
    const std::uint32_t din = static_cast<std::uint32_t>(vf.frames->shape[1]);
    os.write("MEVC", 4);
    const std::uint32_t ver = kFeatureFileVersion;
    os.write(reinterpret_cast<const char*>(&ver), 4);
    os.write(reinterpret_cast<const char*>(&T), 4);
    os.write(reinterpret_cast<const char*>(&din), 4);
    for (Real v : vf.frames->data) {
        const float f = static_cast<float>(v);
        os.write(reinterpret_cast<const char*>(&f), 4);
    }
    std::ostringstream ann;
    ann << "events " << vf.segments.size() << "\n";
    ann.precision(17);
    for (std::size_t i = 0; i < vf.segments.size(); ++i) {
        ann << "segment " << vf.segments[i].first << " " << vf.segments[i].second << "\n";
        ann << "caption";
        for (const auto& tok : vf.captions[i]) ann << " " << tok;
        ann << "\n";
    }
    const std::string a = ann.str();
    os.write(a.data(), static_cast<std::streamsize>(a.size()));
    if (!os) throw std::runtime_error("save_features: write failed for " + path);
}

inline VideoFeatures load_features(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_features: cannot open " + path);
    auto fail = [&](const std::string& what) {
        const auto off = is.tellg();
        throw std::runtime_error("load_features: " + what + " in " + path + " at byte offset " +
                                 std::to_string(off < 0 ? -1 : static_cast<long long>(off)));
    };
    char magic[4];
    if (!is.read(magic, 4)) fail("truncated magic");
    if (std::memcmp(magic, "MEVC", 4) != 0) fail("magic mismatch");
    std::uint32_t ver = 0, T = 0, din = 0;
    if (!is.read(reinterpret_cast<char*>(&ver), 4)) fail("truncated version");
    if (ver != kFeatureFileVersion) fail("unsupported version " + std::to_string(ver));
    if (!is.read(reinterpret_cast<char*>(&T), 4)) fail("truncated window size");
    if (!is.read(reinterpret_cast<char*>(&din), 4)) fail("truncated feature width");
    if (T == 0 || din == 0) fail("zero dimension");
    std::vector<Real> frames(static_cast<std::size_t>(T) * din);
    for (auto& v : frames) {
        float f;
        if (!is.read(reinterpret_cast<char*>(&f), 4)) fail("truncated feature data");
        v = static_cast<Real>(f);
    }
    VideoFeatures vf;
    vf.frames = Tensor::create({T, din}, std::move(frames));
    vf.name = std::filesystem::path(path).stem().string();
    std::string line;
    if (!std::getline(is, line)) fail("missing annotation block");
    std::istringstream head(line);
    std::string kw;
    std::size_t n_events = 0;
    if (!(head >> kw >> n_events) || kw != "events") fail("malformed events header");
    for (std::size_t e = 0; e < n_events; ++e) {
        if (!std::getline(is, line)) fail("truncated segment line");
        std::istringstream seg(line);
        Real s, en;
        if (!(seg >> kw >> s >> en) || kw != "segment") fail("malformed segment line");
        if (!(s >= 0.0 && s < en && en <= static_cast<Real>(T)))
            fail("segment [" + std::to_string(s) + ", " + std::to_string(en) +
                 ") violates 0 <= start < end <= T");
        vf.segments.emplace_back(s, en);
        if (!std::getline(is, line)) fail("truncated caption line");
        std::istringstream cap(line);
        if (!(cap >> kw) || kw != "caption") fail("malformed caption line");
        std::vector<std::string> toks;
        std::string tok;
        while (cap >> tok) toks.push_back(tok);
        vf.captions.push_back(std::move(toks));
    }
    return vf;
}

inline void save_dataset(const std::vector<VideoFeatures>& videos, const std::string& dir) {
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < videos.size(); ++i) {
        std::ostringstream name;
        name << dir << "/video_" << std::setw(4) << std::setfill('0') << i << ".mevc";
        save_features(videos[i], name.str());
    }
}

inline std::vector<VideoFeatures> load_dataset(const std::string& dir) {
    std::vector<std::string> files;
    for (const auto& ent : std::filesystem::directory_iterator(dir))
        if (ent.path().extension() == ".mevc") files.push_back(ent.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("load_dataset: no .mevc files in " + dir);
    std::vector<VideoFeatures> out;
    for (const auto& f : files) out.push_back(load_features(f));
    return out;
}

} // namespace decap
