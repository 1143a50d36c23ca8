#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "glyphforge/layers.hpp"
#include "support.hpp"

using namespace glyphforge;
using testsupport::random_tensor;

namespace {

BatchNormState<double> fresh_stats(Index c) {
    return {Tensor<double>::zeros({c}), Tensor<double>::full({c}, 1.0)};
}

}  // namespace

TEST_CASE("activation point values") {
    CHECK(activation(Tensor<double>::from({1}, {0}), Activation::sigmoid()).item() == 0.5);
    CHECK(activation(Tensor<double>::from({1}, {-1}), Activation::leaky_relu(0.2)).item() == doctest::Approx(-0.2));
    CHECK(activation(Tensor<double>::from({1}, {-1}), Activation::relu()).item() == 0.0);
    CHECK(activation(Tensor<double>::from({1}, {0.3}), Activation::tanh()).item() == doctest::Approx(std::tanh(0.3)));
}

TEST_CASE("tanh gradient agrees with central differences at 0.3") {
    auto x = Tensor<double>::from({1}, {0.3}, true);
    backward(sum(activation(x, Activation::tanh())));
    const double eps = 1e-5;
    const double numeric = (std::tanh(0.3 + eps) - std::tanh(0.3 - eps)) / (2 * eps);
    CHECK(testsupport::relative_error(x.grad()[0], numeric) < 1e-6);
}

TEST_CASE("leaky slope outside (0, 1) is rejected") {
    auto x = Tensor<double>::zeros({1});
    CHECK_THROWS_AS(activation(x, Activation::leaky_relu(0.0)), ParameterError);
    CHECK_THROWS_AS(activation(x, Activation::leaky_relu(1.0)), ParameterError);
}

TEST_CASE("batchnorm maps channel values {1, 3} to about {-1, +1}") {
    auto x = Tensor<double>::from({1, 1, 1, 2}, {1, 3});
    auto stats = fresh_stats(1);
    const auto y = batchnorm2d(x, Tensor<double>::full({1}, 1.0), Tensor<double>::zeros({1}), stats, Mode::train);
    const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
    CHECK(y.values()[0] == doctest::Approx(-expect).epsilon(1e-12));
    CHECK(y.values()[1] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("batchnorm with zero gamma outputs beta") {
    Rng rng(1);
    auto x = random_tensor<double>({2, 3, 2, 2}, rng);
    auto stats = fresh_stats(3);
    auto beta = Tensor<double>::from({3}, {0.5, -1, 2});
    const auto y = batchnorm2d(x, Tensor<double>::zeros({3}), beta, stats, Mode::train);
    for (Index i = 0; i < y.size(); ++i) CHECK(y.values()[i] == beta.values()[(i / 4) % 3]);
}

TEST_CASE("batchnorm train output has zero mean and std gamma per channel") {
    Rng rng(2);
    auto x = random_tensor<double>({4, 2, 3, 3}, rng, 50.0);
    auto stats = fresh_stats(2);
    auto gamma = Tensor<double>::from({2}, {2.0, 0.5});
    const auto y = batchnorm2d(x, gamma, Tensor<double>::zeros({2}), stats, Mode::train);
    for (Index c = 0; c < 2; ++c) {
        double s = 0, s2 = 0;
        for (Index n = 0; n < 4; ++n)
            for (Index p = 0; p < 9; ++p) {
                const double v = y.values()[(n * 2 + c) * 9 + p];
                s += v;
                s2 += v * v;
            }
        const double m = s / 36;
        CHECK(std::abs(m) < 1e-12);
        CHECK(std::abs(std::sqrt(s2 / 36 - m * m) - gamma.values()[c]) < 1e-6);
    }
}

TEST_CASE("batchnorm running statistics and eval mode") {
    auto x = Tensor<double>::from({2, 1, 1, 2}, {1, 2, 3, 6});
    auto stats = fresh_stats(1);
    const auto gamma = Tensor<double>::full({1}, 1.0);
    const auto beta = Tensor<double>::zeros({1});
    batchnorm2d(x, gamma, beta, stats, Mode::train);
    // batch mean 3, unbiased variance 14/3
    CHECK(stats.running_mean.item() == doctest::Approx(0.3));
    CHECK(stats.running_var.item() == doctest::Approx(0.9 + 0.1 * 14.0 / 3.0));

    BatchNormOptions frozen;
    frozen.update_running = false;
    const auto before = stats.running_mean.item();
    batchnorm2d(x, gamma, beta, stats, Mode::train, frozen);
    CHECK(stats.running_mean.item() == before);

    const auto y = batchnorm2d(x, gamma, beta, stats, Mode::eval);
    const double expect = (1.0 - stats.running_mean.item()) / std::sqrt(stats.running_var.item() + 1e-5);
    CHECK(y.values()[0] == doctest::Approx(expect));
}

TEST_CASE("batchnorm on a single value per channel is degenerate in train mode") {
    auto x = Tensor<double>::zeros({1, 2, 1, 1});
    auto stats = fresh_stats(2);
    const auto gamma = Tensor<double>::full({2}, 1.0);
    const auto beta = Tensor<double>::zeros({2});
    CHECK_THROWS_AS(batchnorm2d(x, gamma, beta, stats, Mode::train), DegenerateBatchError);
    CHECK_NOTHROW(batchnorm2d(x, gamma, beta, stats, Mode::eval));
}

TEST_CASE("concat puts the first tensor's channels first and slices invert it") {
    auto a = Tensor<double>::from({1, 1, 1, 2}, {1, 2}, true);
    auto b = Tensor<double>::from({1, 1, 1, 2}, {3, 4}, true);
    const auto c = concat_channels(a, b);
    CHECK(c.shape() == Shape{1, 2, 1, 2});
    CHECK(c.values() == Eigen::Vector4d(1, 2, 3, 4));
    CHECK(slice_channels(c, 1, 1).values() == b.values());
    backward(sum(c * c));
    CHECK(b.grad() == Eigen::Vector2d(6, 8));
    CHECK_THROWS_AS(concat_channels(a, Tensor<double>::zeros({1, 1, 2, 2})), DimensionError);
}

TEST_CASE("concat interleaves per sample") {
    auto a = Tensor<double>::from({2, 1, 1, 1}, {1, 2});
    auto b = Tensor<double>::from({2, 1, 1, 1}, {10, 20});
    CHECK(concat_channels(a, b).values() == Eigen::Vector4d(1, 10, 2, 20));
}

TEST_CASE("dropout identities and errors") {
    Rng rng(1);
    auto x = random_tensor<double>({1, 1, 4, 4}, rng);
    CHECK(dropout(x, 0.0, Mode::train, rng).values() == x.values());
    CHECK(dropout(x, 0.9, Mode::eval, rng).values() == x.values());
    CHECK_THROWS_AS(dropout(x, 1.0, Mode::train, rng), ParameterError);
}

TEST_CASE("dropout keeps about half and rescales survivors") {
    Rng rng(2024);
    auto x = Tensor<double>::full({1, 1, 1000, 1000}, 1.0);
    const auto y = dropout(x, 0.5, Mode::train, rng);
    Index kept = 0, other = 0;
    for (Index i = 0; i < y.size(); ++i) {
        const double v = y.values()[i];
        kept += v == 2.0;
        other += v != 0.0 && v != 2.0;
    }
    CHECK(other == 0);
    const double rate = static_cast<double>(kept) / static_cast<double>(y.size());
    CHECK(rate >= 0.498);
    CHECK(rate <= 0.502);
}

TEST_CASE("dropout mask is reproducible from the rng state") {
    Rng a(77), b(77);
    auto x = Tensor<double>::full({1, 1, 8, 8}, 1.0);
    CHECK(dropout(x, 0.5, Mode::train, a).values() == dropout(x, 0.5, Mode::train, b).values());
    CHECK(a == b);
}
