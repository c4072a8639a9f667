// Video encoder: input embedding, encoder blocks, permutation equivariance.

#include <catch2/catch_amalgamated.hpp>

#include "decap/encoder.hpp"

using namespace decap;

namespace {

std::vector<Real> randu(std::size_t n, std::mt19937_64& rng, Real lo = -1.0, Real hi = 1.0) {
    std::uniform_real_distribution<Real> d(lo, hi);
    std::vector<Real> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

EncoderLayerParams layer_params(std::size_t d, std::size_t d_ff, std::size_t heads,
                                std::mt19937_64& rng, bool zero_weights = false) {
    auto mk = [&](std::size_t r, std::size_t c) {
        return Tensor::create({r, c}, zero_weights ? std::vector<Real>(r * c, 0.0)
                                                   : randu(r * c, rng, -0.3, 0.3));
    };
    EncoderLayerParams p;
    p.attn.heads = heads;
    p.attn.wq = mk(d, d);
    p.attn.wk = mk(d, d);
    p.attn.wv = mk(d, d);
    p.attn.wo = mk(d, d);
    p.ff_w1 = mk(d_ff, d);
    p.ff_b1 = Tensor::create({d_ff}, std::vector<Real>(d_ff, 0.0));
    p.ff_w2 = mk(d, d_ff);
    p.ff_b2 = Tensor::create({d}, std::vector<Real>(d, 0.0));
    p.ln1_g = Tensor::create({d}, std::vector<Real>(d, 1.0));
    p.ln1_b = Tensor::create({d}, std::vector<Real>(d, 0.0));
    p.ln2_g = Tensor::create({d}, std::vector<Real>(d, 1.0));
    p.ln2_b = Tensor::create({d}, std::vector<Real>(d, 0.0));
    return p;
}

} // namespace

TEST_CASE("embed_input zero weights give zero output without positional encoding") {
    Mode ev;
    auto frames = Tensor::create({5, 3}, std::vector<Real>(15, 2.5));
    auto w = Tensor::create({4, 3}, std::vector<Real>(12, 0.0));
    auto b = Tensor::create({4}, std::vector<Real>(4, 0.0));
    auto h = embed_input(frames, w, b, /*positional=*/false, ev);
    REQUIRE(h->shape == std::vector<std::size_t>{5, 4});
    for (Real v : h->data) REQUIRE(v == 0.0);
}

TEST_CASE("positional encoding distinguishes identical frames at different rows") {
    Mode ev;
    std::mt19937_64 rng(1);
    auto frames = Tensor::create({4, 3}, std::vector<Real>(12, 1.0)); // all rows identical
    auto w = Tensor::create({6, 3}, randu(18, rng));
    auto b = Tensor::create({6}, randu(6, rng));
    auto h = embed_input(frames, w, b, /*positional=*/true, ev);
    bool differ = false;
    for (std::size_t c = 0; c < 6; ++c)
        if (h->data[c] != h->data[6 + c]) differ = true;
    REQUIRE(differ);

    auto plain = embed_input(frames, w, b, /*positional=*/false, ev);
    for (std::size_t c = 0; c < 6; ++c) REQUIRE(plain->data[c] == plain->data[6 + c]);
}

TEST_CASE("zero attention and feed-forward weights reduce a layer to normalized identity") {
    Mode ev;
    std::mt19937_64 rng(2);
    const std::size_t T = 6, d = 8;
    auto f = Tensor::create({T, d}, randu(T * d, rng, -2, 2));
    auto outs = encode(f, {layer_params(d, 16, 2, rng, /*zero_weights=*/true)}, ev);
    REQUIRE(outs.size() == 1);
    // expected: layer_norm of each row (both residual paths add zero)
    auto g1 = Tensor::create({d}, std::vector<Real>(d, 1.0));
    auto b1 = Tensor::create({d}, std::vector<Real>(d, 0.0));
    auto ln = layer_norm(f, g1, b1);
    for (std::size_t i = 0; i < ln->size(); ++i)
        REQUIRE(outs[0]->data[i] == Catch::Approx(ln->data[i]).margin(1e-6));
}

TEST_CASE("encoder returns one T x d tensor per layer") {
    Mode ev;
    std::mt19937_64 rng(3);
    const std::size_t T = 5, d = 8;
    auto f = Tensor::create({T, d}, randu(T * d, rng));
    std::vector<EncoderLayerParams> layers{layer_params(d, 16, 2, rng),
                                           layer_params(d, 16, 2, rng)};
    auto outs = encode(f, layers, ev);
    REQUIRE(outs.size() == 2);
    for (const auto& o : outs) REQUIRE(o->shape == std::vector<std::size_t>{T, d});
    REQUIRE_THROWS(encode(f, {}, ev));
}

TEST_CASE("permutation equivariance without positional encoding") {
    Mode ev;
    std::mt19937_64 rng(4);
    const std::size_t T = 7, d = 8, d_in = 3;
    std::vector<EncoderLayerParams> layers{layer_params(d, 16, 4, rng),
                                           layer_params(d, 16, 4, rng)};
    auto w = Tensor::create({d, d_in}, randu(d * d_in, rng));
    auto b = Tensor::create({d}, randu(d, rng));
    auto frames = randu(T * d_in, rng);

    std::vector<std::size_t> perm(T);
    for (std::size_t i = 0; i < T; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Real> permuted(T * d_in);
    for (std::size_t i = 0; i < T; ++i)
        for (std::size_t c = 0; c < d_in; ++c)
            permuted[i * d_in + c] = frames[perm[i] * d_in + c];

    auto base =
        encode(embed_input(Tensor::create({T, d_in}, frames), w, b, false, ev), layers, ev);
    auto shuf =
        encode(embed_input(Tensor::create({T, d_in}, permuted), w, b, false, ev), layers, ev);
    for (std::size_t l = 0; l < layers.size(); ++l)
        for (std::size_t i = 0; i < T; ++i)
            for (std::size_t c = 0; c < d; ++c)
                REQUIRE(std::abs(shuf[l]->data[i * d + c] - base[l]->data[perm[i] * d + c]) <=
                        1e-10);
}

TEST_CASE("one layer connects every output position to every input position") {
    std::mt19937_64 rng(5);
    const std::size_t T = 4, d = 8;
    auto f = Tensor::create({T, d}, randu(T * d, rng), /*requires_grad=*/true);
    Mode ev;
    auto outs = encode(f, {layer_params(d, 16, 2, rng)}, ev);
    element(outs[0], 0)->backward(); // scalar at output position 0
    for (std::size_t t = 0; t < T; ++t) {
        Real row = 0;
        for (std::size_t c = 0; c < d; ++c) row += std::abs(f->grad[t * d + c]);
        REQUIRE(row > 0.0);
    }
}

TEST_CASE("encoder forward is deterministic in eval mode") {
    Mode ev;
    std::mt19937_64 rng(6);
    const std::size_t T = 5, d = 8;
    auto f = Tensor::create({T, d}, randu(T * d, rng));
    std::vector<EncoderLayerParams> layers{layer_params(d, 16, 2, rng)};
    REQUIRE(encode(f, layers, ev)[0]->data == encode(f, layers, ev)[0]->data);
}

TEST_CASE("positional encoding values match the closed form") {
    REQUIRE_THROWS(pos_encode_values(1.0, 5));
    auto zero = pos_encode_values(0.0, 6);
    for (std::size_t i = 0; i < 6; ++i) REQUIRE(zero[i] == (i % 2 ? 1.0 : 0.0));

    auto v = pos_encode_values(1.0, 4);
    REQUIRE(v[0] == Catch::Approx(std::sin(1.0)).margin(1e-15));
    REQUIRE(v[1] == Catch::Approx(std::cos(1.0)).margin(1e-15));
    REQUIRE(v[2] == Catch::Approx(std::sin(0.01)).margin(1e-15));
    REQUIRE(v[3] == Catch::Approx(std::cos(0.01)).margin(1e-15));
    for (Real pos : {0.3, 7.9, 63.0})
        for (Real e : pos_encode_values(pos, 8)) {
            REQUIRE(e >= -1.0);
            REQUIRE(e <= 1.0);
        }
}
