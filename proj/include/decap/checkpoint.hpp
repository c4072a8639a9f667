#pragma once

#include "decap/config.hpp"

namespace decap {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct OptimizerState {
    // 0 = none, 1 = nesterov, 2 = adam
    std::uint8_t kind = 0;
    Real lr = 0.0;
    Real momentum = 0.0;
    std::size_t adam_t = 0;
    std::vector<std::pair<std::string, std::vector<Real>>> slots; // velocity or m/v pairs
};

struct Checkpoint {
    RunConfig config;
    Vocabulary vocab;
    std::vector<std::pair<std::string, std::vector<Real>>> params;
    std::vector<std::pair<std::string, std::vector<std::size_t>>> shapes;
    std::vector<std::tuple<std::string, std::vector<Real>, std::vector<Real>>> bn_states;
    OptimizerState optimizer;
    std::string rng_state;
    std::uint64_t step = 0;
};

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}
inline void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), 8);
}
inline void write_str(std::ostream& os, const std::string& s) {
    write_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline void write_reals(std::ostream& os, const std::vector<Real>& v) {
    write_u64(os, v.size());
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(Real)));
}
inline std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4)) throw std::runtime_error("checkpoint: truncated");
    return v;
}
inline std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 8)) throw std::runtime_error("checkpoint: truncated");
    return v;
}
inline std::string read_str(std::istream& is) {
    std::string s(read_u64(is), '\0');
    if (!is.read(s.data(), static_cast<std::streamsize>(s.size())))
        throw std::runtime_error("checkpoint: truncated string");
    return s;
}
inline std::vector<Real> read_reals(std::istream& is) {
    std::vector<Real> v(read_u64(is));
    if (!is.read(reinterpret_cast<char*>(v.data()),
                 static_cast<std::streamsize>(v.size() * sizeof(Real))))
        throw std::runtime_error("checkpoint: truncated data");
    return v;
}

} // namespace detail

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
    using namespace detail;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path);
    os.write("DCKP", 4);
    write_u32(os, kCheckpointVersion);
    write_str(os, config_to_text(c.config));
    write_u64(os, c.vocab.tokens.size());
    for (const auto& t : c.vocab.tokens) write_str(os, t);
    write_u64(os, c.params.size());
    for (std::size_t i = 0; i < c.params.size(); ++i) {
        write_str(os, c.params[i].first);
        write_u64(os, c.shapes[i].second.size());
        for (auto d : c.shapes[i].second) write_u64(os, d);
        write_reals(os, c.params[i].second);
    }
    write_u64(os, c.bn_states.size());
    for (const auto& [name, mean, var] : c.bn_states) {
        write_str(os, name);
        write_reals(os, mean);
        write_reals(os, var);
    }
    os.put(static_cast<char>(c.optimizer.kind));
    os.write(reinterpret_cast<const char*>(&c.optimizer.lr), sizeof(Real));
    os.write(reinterpret_cast<const char*>(&c.optimizer.momentum), sizeof(Real));
    write_u64(os, c.optimizer.adam_t);
    write_u64(os, c.optimizer.slots.size());
    for (const auto& [name, data] : c.optimizer.slots) {
        write_str(os, name);
        write_reals(os, data);
    }
    write_str(os, c.rng_state);
    write_u64(os, c.step);
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    using namespace detail;
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "DCKP", 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    const std::uint32_t ver = read_u32(is);
    if (ver != kCheckpointVersion)
        throw std::runtime_error("checkpoint: version " + std::to_string(ver) +
                                 " not supported (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
    Checkpoint c;
    {
        std::istringstream cfg(read_str(is));
        c.config = parse_config(cfg);
    }
    const std::uint64_t n_tokens = read_u64(is);
    c.vocab = Vocabulary{};
    for (std::uint64_t i = 0; i < n_tokens; ++i) {
        std::string tok = read_str(is);
        if (i < c.vocab.tokens.size()) {
            if (tok != c.vocab.tokens[i])
                throw std::runtime_error("checkpoint: sentinel token mismatch");
        } else {
            c.vocab.add(tok);
        }
    }
    const std::uint64_t n_params = read_u64(is);
    for (std::uint64_t i = 0; i < n_params; ++i) {
        std::string name = read_str(is);
        std::vector<std::size_t> shape(read_u64(is));
        for (auto& d : shape) d = read_u64(is);
        c.params.emplace_back(name, read_reals(is));
        c.shapes.emplace_back(std::move(name), std::move(shape));
    }
    const std::uint64_t n_bn = read_u64(is);
    for (std::uint64_t i = 0; i < n_bn; ++i) {
        std::string name = read_str(is);
        auto mean = read_reals(is);
        auto var = read_reals(is);
        c.bn_states.emplace_back(std::move(name), std::move(mean), std::move(var));
    }
    int kind = is.get();
    if (kind < 0) throw std::runtime_error("checkpoint: truncated optimizer");
    c.optimizer.kind = static_cast<std::uint8_t>(kind);
    if (!is.read(reinterpret_cast<char*>(&c.optimizer.lr), sizeof(Real)) ||
        !is.read(reinterpret_cast<char*>(&c.optimizer.momentum), sizeof(Real)))
        throw std::runtime_error("checkpoint: truncated optimizer");
    c.optimizer.adam_t = read_u64(is);
    const std::uint64_t n_slots = read_u64(is);
    for (std::uint64_t i = 0; i < n_slots; ++i) {
        std::string name = read_str(is);
        c.optimizer.slots.emplace_back(std::move(name), read_reals(is));
    }
    c.rng_state = read_str(is);
    c.step = read_u64(is);
    return c;
}

/// Snapshot the live model into a checkpoint structure.
inline Checkpoint make_checkpoint(const Model& m, const RunConfig& cfg) {
    Checkpoint c;
    c.config = cfg;
    c.vocab = m.vocab;
    for (const auto& [name, t] : m.params) {
        c.params.emplace_back(name, t->data);
        c.shapes.emplace_back(name, t->shape);
    }
    for (const auto& [name, st] : m.bn_states)
        c.bn_states.emplace_back(name, st->running_mean, st->running_var);
    return c;
}

/// Rebuild a model from a checkpoint (weights, batch-norm stats, vocab).
inline Model restore_model(const Checkpoint& c) {
    Model m = build_model(c.config.model, c.vocab, /*seed=*/0);
    if (c.params.size() != m.params.size())
        throw std::runtime_error("checkpoint: parameter count mismatch");
    for (std::size_t i = 0; i < c.params.size(); ++i) {
        auto& [name, t] = m.params[i];
        if (name != c.params[i].first)
            throw std::runtime_error("checkpoint: parameter order mismatch at " + name);
        if (t->data.size() != c.params[i].second.size())
            throw std::runtime_error("checkpoint: size mismatch for " + name);
        t->data = c.params[i].second;
    }
    for (std::size_t i = 0; i < c.bn_states.size() && i < m.bn_states.size(); ++i) {
        m.bn_states[i].second->running_mean = std::get<1>(c.bn_states[i]);
        m.bn_states[i].second->running_var = std::get<2>(c.bn_states[i]);
    }
    return m;
}

} // namespace decap
