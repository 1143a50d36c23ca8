#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "glyphforge/discriminator.hpp"
#include "glyphforge/generator.hpp"
#include "support.hpp"

using namespace glyphforge;
using testsupport::random_tensor;

namespace {

/// Trainable parameter count of the U-Net written out from the layer table:
/// 4x4 convs on the way down, 4x4 transposed convs fed by [up, skip] on the way up,
/// affine norms everywhere except encoder level 1, the bottleneck and decoder level 1.
Index closed_form_generator_params(const std::vector<Index>& c) {
    const int d = static_cast<int>(c.size());
    Index total = 0;
    Index in = 1;
    for (int l = 1; l <= d; ++l) {
        total += in * c[l - 1] * 16 + c[l - 1];
        if (l > 1 && l < d) total += 2 * c[l - 1];
        in = c[l - 1];
    }
    for (int l = d; l >= 1; --l) {
        const Index dec_in = l == d ? c[d - 1] : 2 * c[l - 1];
        const Index dec_out = l == 1 ? 1 : c[l - 2];
        total += dec_in * dec_out * 16 + dec_out;
        if (l > 1) total += 2 * dec_out;
    }
    return total;
}

GeneratorConfig small_generator(int depth, Index c0 = 1, Index cap = 4) {
    GeneratorConfig g;
    g.depth = depth;
    g.side = Index{1} << depth;
    g.base_channels = c0;
    g.channel_cap = cap;
    g.seed = 7;
    return g;
}

}  // namespace

TEST_CASE("encoder channels double up to the cap") {
    GeneratorConfig g;
    g.side = 64;
    g.depth = 6;
    CHECK(encoder_channels(g) == std::vector<Index>{64, 128, 256, 512, 512, 512});
}

TEST_CASE("generator parameter count matches the closed form") {
    const auto g = build_generator<float>(small_generator(3));
    CHECK(closed_form_generator_params({1, 2, 4}) == 421);
    CHECK(g.params.trainable_count() == 421);
    for (int depth : {4, 5, 6}) {
        const auto cfg = small_generator(depth, 2, 8);
        CHECK(build_generator<float>(cfg).params.trainable_count() ==
              closed_form_generator_params(encoder_channels(cfg)));
    }
}

TEST_CASE("generator init is a pure function of the seed") {
    const auto a = build_generator<float>(small_generator(4));
    const auto b = build_generator<float>(small_generator(4));
    auto cfg = small_generator(4);
    cfg.seed = 8;
    const auto c = build_generator<float>(cfg);
    bool differs = false;
    for (std::size_t i = 0; i < a.params.size(); ++i) {
        CHECK(a.params[i].name == b.params[i].name);
        CHECK(a.params[i].tensor.values() == b.params[i].tensor.values());
        differs = differs || a.params[i].tensor.values() != c.params[i].tensor.values();
    }
    CHECK(differs);
}

TEST_CASE("generator config validation") {
    auto g = small_generator(3);
    g.side = 12;
    CHECK_THROWS_AS(validate(g), ConfigError);
    g = small_generator(3);
    g.depth = 4;
    CHECK_THROWS_AS(validate(g), ConfigError);
    g = small_generator(3);
    g.dropout = 1.0;
    CHECK_THROWS_AS(validate(g), ConfigError);
}

TEST_CASE("encoder halves down to a 1x1 bottleneck") {
    const auto g = build_generator<float>(small_generator(3));
    Rng rng(1);
    const auto x = random_tensor<float>({2, 1, 8, 8}, rng, 1.0, false);
    const auto enc = encode(g, x, Mode::train);
    REQUIRE(enc.skips.size() == 2);
    CHECK(enc.skips[0].shape() == Shape{2, 1, 4, 4});
    CHECK(enc.skips[1].shape() == Shape{2, 2, 2, 2});
    CHECK(enc.bottleneck.shape() == Shape{2, 4, 1, 1});
    CHECK_THROWS_AS(encode(g, random_tensor<float>({1, 1, 16, 16}, rng), Mode::eval), DimensionError);
}

TEST_CASE("zero input with zero norms gives a zero bottleneck") {
    auto g = build_generator<float>(small_generator(4));
    for (auto& e : g.params) {
        if (e.name.ends_with(".gamma")) e.tensor.mutable_values().setZero();
    }
    const auto enc = encode(g, Tensor<float>::zeros({1, 1, 16, 16}), Mode::eval);
    CHECK(enc.bottleneck.values().cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("generator forward closes for depths 3 through 8") {
    for (int depth = 3; depth <= 8; ++depth) {
        const auto g = build_generator<float>(small_generator(depth, 1, 4));
        Rng rng(static_cast<std::uint64_t>(depth));
        const Index side = Index{1} << depth;
        const auto x = random_tensor<float>({2, 1, side, side}, rng, 1.0, false);
        const auto y = generate(g, x, Mode::train, rng).output;
        CHECK(y.shape() == Shape{2, 1, side, side});
        CHECK(y.values().cwiseAbs().maxCoeff() < 1.0f);
    }
}

TEST_CASE("maxpool downsampling variant has the same interface") {
    auto cfg = small_generator(4, 2, 8);
    cfg.downsampling = Downsampling::maxpool_after_conv;
    const auto g = build_generator<float>(cfg);
    CHECK(g.params.at("G.enc1.conv.weight").shape() == Shape{2, 1, 3, 3});
    Rng rng(3);
    const auto x = random_tensor<float>({2, 1, 16, 16}, rng, 1.0, false);
    const auto gen = generate(g, x, Mode::train, rng);
    CHECK(gen.output.shape() == Shape{2, 1, 16, 16});
    CHECK(gen.bottleneck.shape() == Shape{2, 8, 1, 1});
}

TEST_CASE("eval mode is deterministic, train mode draws dropout") {
    const auto g = build_generator<float>(small_generator(5, 4, 16));
    Rng data(2);
    const auto x = random_tensor<float>({2, 1, 32, 32}, data, 1.0, false);
    Rng r1(5), r2(6);
    CHECK(generate(g, x, Mode::eval, r1).output.values() == generate(g, x, Mode::eval, r2).output.values());
    CHECK(r1.counter() == 0);
    CHECK(generate(g, x, Mode::train, r1).output.values() != generate(g, x, Mode::train, r2).output.values());
}

TEST_CASE("removing the skip connections changes the output") {
    const auto g = build_generator<float>(small_generator(5, 4, 16));
    Rng data(3), unused;
    const auto x = random_tensor<float>({1, 1, 32, 32}, data, 1.0, false);
    auto enc = encode(g, x, Mode::eval);
    const auto full = decode(g, enc, Mode::eval, unused);
    for (auto& s : enc.skips) s = Tensor<float>::zeros(s.shape());
    const auto ablated = decode(g, enc, Mode::eval, unused);
    CHECK((full.values() - ablated.values()).cwiseAbs().maxCoeff() > 1e-4f);
}

TEST_CASE("training a conv weight follows end-to-end differences") {
    const auto g = build_generator<float>(small_generator(4, 2, 8));
    Generator<double> g64{g.config, cast_table<double>(g.params)};
    Rng data(4);
    const auto x = random_tensor<double>({2, 1, 16, 16}, data, 1.0, false);
    const Tensor<float> xf(x.shape(), x.values().cast<float>());
    auto w = g.params.at("G.enc2.conv.weight");
    Rng unused;
    backward(sum(generate(g, xf, Mode::eval, unused).output));
    auto w64 = g64.params.at("G.enc2.conv.weight");
    const auto value = [&] {
        NoGradGuard guard;
        return sum(generate(g64, x, Mode::eval, unused).output).item();
    };
    const Eigen::VectorXd analytic = w.grad().cast<double>();
    CHECK(testsupport::fd_check(value, w64, analytic, {0, 5, 17}, 1e-5, 1e-4) < 1e-3);
}

TEST_CASE("discriminator channels and patch grid") {
    DiscriminatorConfig d;
    d.side = 64;
    CHECK(discriminator_channels(d) == std::vector<Index>{64, 128, 256});
    CHECK(patch_grid_side(d) == 7);
    CHECK(receptive_field(d) == 46);
    const auto disc = build_discriminator<float>(DiscriminatorConfig{64, 3, 4, 16});
    const auto scores = discriminate(disc, Tensor<float>::zeros({2, 1, 64, 64}), Tensor<float>::zeros({2, 1, 64, 64}));
    CHECK(scores.shape() == Shape{2, 1, 7, 7});
}

TEST_CASE("discriminator validation") {
    DiscriminatorConfig d;
    d.side = 8;
    d.levels = 3;
    CHECK_THROWS_AS(validate(d), ConfigError);
    d.levels = 2;
    CHECK_NOTHROW(validate(d));
    d.base_channels = 0;
    CHECK_THROWS_AS(validate(d), ConfigError);
}

TEST_CASE("zeroed head scores every patch one half") {
    auto disc = build_discriminator<float>(testsupport::tiny_discriminator_config(1));
    disc.params.at("D.head.weight").mutable_values().setZero();
    disc.params.at("D.head.bias").mutable_values().setZero();
    Rng rng(1);
    const auto s = random_tensor<float>({2, 1, 8, 8}, rng, 1.0, false);
    const auto c = random_tensor<float>({2, 1, 8, 8}, rng, 1.0, false);
    CHECK(discriminate(disc, s, c).values() == Eigen::VectorXf::Constant(2, 0.5f));
}

TEST_CASE("discriminator init is seeded and inputs must agree") {
    const auto a = build_discriminator<float>(testsupport::tiny_discriminator_config(2));
    const auto b = build_discriminator<float>(testsupport::tiny_discriminator_config(2));
    for (std::size_t i = 0; i < a.params.size(); ++i) CHECK(a.params[i].tensor.values() == b.params[i].tensor.values());
    CHECK_THROWS_AS(discriminate(a, Tensor<float>::zeros({1, 1, 8, 8}), Tensor<float>::zeros({1, 1, 16, 16})),
                    DimensionError);
    CHECK_THROWS_AS(discriminate(a, Tensor<float>::zeros({1, 1, 16, 16}), Tensor<float>::zeros({1, 1, 16, 16})),
                    DimensionError);
}

TEST_CASE("interior patch sees exactly a receptive-field-wide window") {
    DiscriminatorConfig cfg{64, 3, 2, 8};
    cfg.init_stddev = 0.5;
    const auto disc = build_discriminator<double>(cfg);
    Rng rng(9);
    const auto source = random_tensor<double>({1, 1, 64, 64}, rng, 1.0, false);
    auto candidate = random_tensor<double>({1, 1, 64, 64}, rng);
    const auto scores = discriminate(disc, source, candidate, Mode::eval);
    const Index grid = patch_grid_side(cfg), centre = grid / 2;
    Eigen::VectorXd pick = Eigen::VectorXd::Zero(scores.size());
    pick[centre * grid + centre] = 1.0;
    backward(sum(scores * Tensor<double>(scores.shape(), pick)));
    const auto g = candidate.grad();
    Index lo = 64, hi = -1;
    for (Index y = 0; y < 64; ++y)
        for (Index x = 0; x < 64; ++x)
            if (g[y * 64 + x] != 0.0) {
                lo = std::min(lo, x);
                hi = std::max(hi, x);
            }
    CHECK(hi - lo + 1 == receptive_field(cfg));
}

TEST_CASE("scores are probabilities and depend on the source") {
    const auto disc = build_discriminator<float>(DiscriminatorConfig{32, 3, 4, 16});
    Rng rng(4);
    const auto s = random_tensor<float>({2, 1, 32, 32}, rng, 1.0, false);
    const auto c = random_tensor<float>({2, 1, 32, 32}, rng, 1.0, false);
    const auto base = discriminate(disc, s, c, Mode::eval);
    CHECK(base.values().minCoeff() > 0.0f);
    CHECK(base.values().maxCoeff() < 1.0f);
    // swap the two sources in the batch
    Eigen::VectorXf swapped(s.size());
    swapped << s.values().tail(1024), s.values().head(1024);
    const auto moved = discriminate(disc, Tensor<float>(s.shape(), swapped), c, Mode::eval);
    CHECK((base.values() - moved.values()).cwiseAbs().maxCoeff() > 1e-6f);
}
