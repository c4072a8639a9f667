// Binary, continuous, and gated proposal masks.

#include <catch2/catch_amalgamated.hpp>

#include "decap/gradcheck.hpp"
#include "decap/mask.hpp"

using namespace decap;
using Catch::Approx;

namespace {

TensorPtr leaf(std::vector<std::size_t> shape, std::vector<Real> data) {
    return Tensor::create(std::move(shape), std::move(data), /*requires_grad=*/true);
}

MaskMLPParams random_mlp(std::size_t T, std::size_t d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<Real> dist(-0.3, 0.3);
    auto fill = [&](std::vector<std::size_t> shape) {
        std::size_t n = 1;
        for (auto e : shape) n *= e;
        std::vector<Real> v(n);
        for (auto& x : v) x = dist(rng);
        return Tensor::create(std::move(shape), std::move(v), true);
    };
    MaskMLPParams p;
    p.w1 = fill({d, 4 * d + T});
    p.b1 = fill({d});
    p.w2 = fill({T, d});
    p.b2 = fill({T});
    return p;
}

} // namespace

TEST_CASE("binary mask covers the inclusive integer range") {
    auto m = bin_mask(2.0, 5.0, 8);
    REQUIRE(m->data == std::vector<Real>{0, 0, 1, 1, 1, 1, 0, 0});
}

TEST_CASE("binary mask over the full window is all ones") {
    auto m = bin_mask(0.0, 7.0, 8);
    REQUIRE(m->data == std::vector<Real>(8, 1.0));
}

TEST_CASE("binary mask straddling no integer is all zeros") {
    auto m = bin_mask(5.4, 5.6, 8);
    REQUIRE(m->data == std::vector<Real>(8, 0.0));
}

TEST_CASE("binary mask handles fractional boundaries") {
    auto m = bin_mask(1.5, 3.5, 6);
    REQUIRE(m->data == std::vector<Real>{0, 0, 1, 1, 0, 0});
}

TEST_CASE("continuous mask entries lie strictly inside (0,1)") {
    const std::size_t T = 12, d = 8;
    auto p = random_mlp(T, d, 41);
    Anchor a{6.0, 4.0, 4};
    auto sp = leaf({1}, {4.5});
    auto ep = leaf({1}, {8.5});
    auto fm = continuous_mask(sp, ep, a, p, T, d);
    REQUIRE(fm->shape == std::vector<std::size_t>{T});
    for (Real v : fm->data) {
        REQUIRE(v > 0.0);
        REQUIRE(v < 1.0);
    }
}

TEST_CASE("continuous mask with zero weights is uniformly 0.5") {
    const std::size_t T = 10, d = 8;
    MaskMLPParams p;
    p.w1 = Tensor::full({d, 4 * d + T}, 0.0, true);
    p.b1 = Tensor::full({d}, 0.0, true);
    p.w2 = Tensor::full({T, d}, 0.0, true);
    p.b2 = Tensor::full({T}, 0.0, true);
    Anchor a{5.0, 4.0, 4};
    auto fm = continuous_mask(Tensor::scalar(3.0), Tensor::scalar(7.0), a, p, T, d);
    for (Real v : fm->data) REQUIRE(v == Approx(0.5).margin(1e-12));
}

TEST_CASE("continuous mask gradient w.r.t. boundaries passes FD") {
    const std::size_t T = 12, d = 8;
    auto p = random_mlp(T, d, 43);
    Anchor a{6.0, 4.0, 4};
    auto sp = leaf({1}, {4.3});
    auto ep = leaf({1}, {8.7});
    std::vector<std::pair<std::string, TensorPtr>> params{
        {"sp", sp}, {"ep", ep}, {"w1", p.w1}, {"w2", p.w2}};
    std::mt19937_64 rng(7);
    auto res = check_gradients(params, [&] {
        return sum(continuous_mask(sp, ep, a, p, T, d));
    }, 24, rng);
    REQUIRE(res.checked > 0);
    REQUIRE(res.max_rel_err <= 1e-4);
}

TEST_CASE("gated mask at gate 1 equals the binary mask exactly") {
    const std::size_t T = 10, d = 8;
    auto p = random_mlp(T, d, 47);
    Anchor a{5.0, 4.0, 4};
    auto sp = leaf({1}, {2.0});
    auto ep = leaf({1}, {6.0});
    auto pe = Tensor::scalar(1.0, true);
    auto gm = gated_mask(pe, sp, ep, a, p, T, d, MaskMode::gated);
    auto bin = bin_mask(2.0, 6.0, T);
    for (std::size_t i = 0; i < T; ++i) REQUIRE(gm->data[i] == bin->data[i]);
}

TEST_CASE("gated mask at gate 0 equals the continuous mask exactly") {
    const std::size_t T = 10, d = 8;
    auto p = random_mlp(T, d, 53);
    Anchor a{5.0, 4.0, 4};
    auto sp = leaf({1}, {2.0});
    auto ep = leaf({1}, {6.0});
    auto pe = Tensor::scalar(0.0, true);
    auto gm = gated_mask(pe, sp, ep, a, p, T, d, MaskMode::gated);
    auto fm = continuous_mask(sp, ep, a, p, T, d);
    for (std::size_t i = 0; i < T; ++i) REQUIRE(gm->data[i] == fm->data[i]);
}

TEST_CASE("gated mask blends: 0.5 * 1 + 0.5 * fm") {
    const std::size_t T = 10, d = 8;
    auto p = random_mlp(T, d, 59);
    Anchor a{5.0, 4.0, 4};
    auto sp = leaf({1}, {2.0});
    auto ep = leaf({1}, {6.0});
    auto pe = Tensor::scalar(0.5, true);
    auto gm = gated_mask(pe, sp, ep, a, p, T, d, MaskMode::gated);
    auto fm = continuous_mask(sp, ep, a, p, T, d);
    auto bin = bin_mask(2.0, 6.0, T);
    for (std::size_t i = 0; i < T; ++i)
        REQUIRE(gm->data[i] == Approx(0.5 * bin->data[i] + 0.5 * fm->data[i]).margin(1e-12));
    // Inside the segment bin = 1: 0.5 * 1 + 0.5 * fm.
    REQUIRE(bin->data[4] == 1.0);
    REQUIRE(gm->data[4] == Approx(0.5 + 0.5 * fm->data[4]).margin(1e-12));
}

TEST_CASE("gated mask entries stay in [0,1] for any gate value") {
    const std::size_t T = 12, d = 8;
    auto p = random_mlp(T, d, 61);
    Anchor a{6.0, 4.0, 4};
    std::mt19937_64 rng(71);
    std::uniform_real_distribution<Real> u(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        auto sp = Tensor::scalar(u(rng) * T, true);
        auto ep = Tensor::scalar(std::min<Real>(T, sp->data[0] + u(rng) * 6.0), true);
        auto pe = Tensor::scalar(u(rng), true);
        auto gm = gated_mask(pe, sp, ep, a, p, T, d, MaskMode::gated);
        for (Real v : gm->data) {
            REQUIRE(v >= 0.0);
            REQUIRE(v <= 1.0);
        }
    }
}

TEST_CASE("discrete mode returns the bare binary mask with no gradient path") {
    const std::size_t T = 10, d = 8;
    auto p = random_mlp(T, d, 67);
    Anchor a{5.0, 4.0, 4};
    auto sp = leaf({1}, {2.0});
    auto ep = leaf({1}, {6.0});
    auto pe = Tensor::scalar(0.9, true);
    auto gm = gated_mask(pe, sp, ep, a, p, T, d, MaskMode::discrete);
    auto bin = bin_mask(2.0, 6.0, T);
    REQUIRE(gm->data == bin->data);
    sum(gm)->backward();
    for (Real g : pe->grad) REQUIRE(g == 0.0);
    for (Real g : sp->grad) REQUIRE(g == 0.0);
    for (Real g : p.w1->grad) REQUIRE(g == 0.0);
}

TEST_CASE("gate gradient flows through the gated mask") {
    const std::size_t T = 10, d = 8;
    auto p = random_mlp(T, d, 73);
    Anchor a{5.0, 4.0, 4};
    auto sp = leaf({1}, {2.2});
    auto ep = leaf({1}, {6.4});
    auto pe = Tensor::scalar(0.4, true);
    std::vector<std::pair<std::string, TensorPtr>> params{
        {"pe", pe}, {"sp", sp}, {"ep", ep}};
    std::mt19937_64 rng(9);
    auto res = check_gradients(params, [&] {
        return sum(gated_mask(pe, sp, ep, a, p, T, d, MaskMode::gated));
    }, 8, rng);
    REQUIRE(res.checked > 0);
    REQUIRE(res.max_rel_err <= 1e-4);
}
