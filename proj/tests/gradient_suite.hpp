#pragma once

#include <string>
#include <vector>

#include "glyphforge/discriminator.hpp"
#include "glyphforge/generator.hpp"
#include "glyphforge/objectives.hpp"
#include "support.hpp"

namespace testsupport {

struct GradCheck {
    std::string name;
    double max_rel_err = 0;
    double tolerance = 0;
    bool ok() const { return max_rel_err < tolerance; }
};

inline constexpr double kOpTolerance = 1e-4;
inline constexpr double kLossTolerance = 1e-6;

namespace detail {

using T = Tensor<double>;

/// Values in [-scale, scale] whose magnitudes stay at least `gap` away from zero.
inline T away_from_zero(Shape shape, Rng& rng, double scale = 1.0, double gap = 0.05) {
    typename T::Vector v(shape_size(shape));
    for (Index i = 0; i < v.size(); ++i) {
        const double m = gap + (scale - gap) * rng.uniform();
        v[i] = rng.below(2) ? m : -m;
    }
    return T(std::move(shape), std::move(v), true);
}

/// Projects an output onto fixed random weights so every element contributes.
inline T project(const T& y, const T& weights) { return sum(y * weights); }

/// Gradient of f() w.r.t. each leaf vs central differences, worst over all leaves.
inline double check_leaves(const std::function<T()>& f, const std::vector<T>& leaves, Rng& rng,
                           std::size_t coords_per_leaf = 0) {
    for (auto leaf : leaves) leaf.zero_grad();
    backward(f());
    std::vector<Eigen::VectorXd> analytic;
    for (const auto& leaf : leaves) analytic.push_back(leaf.grad());
    const auto value = [&] {
        NoGradGuard guard;
        return f().item();
    };
    double worst = 0;
    for (std::size_t i = 0; i < leaves.size(); ++i) {
        const auto coords =
            coords_per_leaf ? sample_coords(leaves[i].size(), coords_per_leaf, rng) : std::vector<Index>{};
        worst = std::max(worst, fd_check(value, leaves[i], analytic[i], coords));
    }
    return worst;
}

inline std::vector<T> trainable_leaves(const ParameterTable<double>& table) {
    std::vector<T> out;
    for (const auto& e : table) {
        if (e.trainable) out.push_back(e.tensor);
    }
    return out;
}

}  // namespace detail

/// Finite-difference checks of every differentiable operation at 64-bit precision.
inline std::vector<GradCheck> gradient_suite(std::uint64_t seed) {
    using detail::T;
    using detail::check_leaves;
    using detail::project;
    Rng rng(derive_seed(seed, 0x6772616473ULL));
    std::vector<GradCheck> out;
    auto record = [&](const std::string& name, double err, double tol) { out.push_back({name, err, tol}); };

    {
        auto x = random_tensor<double>({2, 2, 5, 5}, rng);
        auto w = random_tensor<double>({3, 2, 3, 3}, rng);
        auto b = random_tensor<double>({3}, rng);
        const auto r = random_tensor<double>({2, 3, 3, 3}, rng, 1.0, false);
        record("conv2d", check_leaves([&] { return project(conv2d(x, w, b, 2, 1), r); }, {x, w, b}, rng),
               kOpTolerance);
    }
    {
        auto x = random_tensor<double>({2, 3, 3, 3}, rng);
        auto w = random_tensor<double>({3, 2, 4, 4}, rng);
        auto b = random_tensor<double>({2}, rng);
        const auto r = random_tensor<double>({2, 2, 6, 6}, rng, 1.0, false);
        record("conv2d_transpose",
               check_leaves([&] { return project(conv2d_transpose(x, w, b, 2, 1), r); }, {x, w, b}, rng),
               kOpTolerance);
    }
    {
        // Distinct values 0.1 apart so no perturbation can reorder a window.
        const Shape shape{2, 2, 4, 4};
        const auto order = permutation(static_cast<std::size_t>(shape_size(shape)), rng);
        typename T::Vector v(shape_size(shape));
        for (Index i = 0; i < v.size(); ++i) v[i] = 0.1 * static_cast<double>(order[static_cast<std::size_t>(i)]);
        T x(shape, v, true);
        const auto r = random_tensor<double>({2, 2, 2, 2}, rng, 1.0, false);
        record("maxpool2d", check_leaves([&] { return project(maxpool2d(x, 2, 2), r); }, {x}, rng), kOpTolerance);
    }
    for (const auto& [name, act] : {std::pair{"relu", Activation::relu()},
                                    std::pair{"leaky_relu", Activation::leaky_relu(0.2)},
                                    std::pair{"tanh", Activation::tanh()}, std::pair{"sigmoid", Activation::sigmoid()}}) {
        auto x = detail::away_from_zero({1, 2, 3, 3}, rng, 2.0);
        const auto r = random_tensor<double>({1, 2, 3, 3}, rng, 1.0, false);
        record(name, check_leaves([&] { return project(activation(x, act), r); }, {x}, rng), kOpTolerance);
    }
    {
        auto x = random_tensor<double>({2, 2, 2, 2}, rng);
        auto gamma = random_tensor<double>({2}, rng);
        auto beta = random_tensor<double>({2}, rng);
        BatchNormState<double> stats{T::zeros({2}), T::full({2}, 1.0)};
        const auto r = random_tensor<double>({2, 2, 2, 2}, rng, 1.0, false);
        BatchNormOptions opt;
        opt.update_running = false;
        record("batchnorm2d",
               check_leaves([&] { return project(batchnorm2d(x, gamma, beta, stats, Mode::train, opt), r); },
                            {x, gamma, beta}, rng),
               kOpTolerance);
    }
    {
        auto x = random_tensor<double>({1, 2, 4, 4}, rng);
        const auto r = random_tensor<double>({1, 2, 4, 4}, rng, 1.0, false);
        const Rng mask_state(rng.next_u64());
        record("dropout",
               check_leaves(
                   [&] {
                       Rng fixed = mask_state;
                       return project(dropout(x, 0.5, Mode::train, fixed), r);
                   },
                   {x}, rng),
               kOpTolerance);
    }

    {
        auto target = random_tensor<double>({2, 1, 4, 4}, rng);
        auto offset = detail::away_from_zero({2, 1, 4, 4}, rng, 1.0, 0.05);
        T generated(target.shape(), target.values() + offset.values(), true);
        record("l1_loss", check_leaves([&] { return l1_loss(target, generated); }, {target, generated}, rng),
               kLossTolerance);
    }
    for (const auto reduction : {BatchReduction::mean, BatchReduction::sum}) {
        auto fa = random_tensor<double>({2, 3, 2, 2}, rng);
        auto fb = random_tensor<double>({2, 3, 2, 2}, rng);
        record(reduction == BatchReduction::mean ? "constant_loss(mean)" : "constant_loss(sum)",
               check_leaves([&] { return constant_loss(fa, fb, reduction); }, {fa, fb}, rng), kLossTolerance);
    }
    {
        typename T::Vector p(12), y(12);
        for (Index i = 0; i < 12; ++i) {
            p[i] = 0.05 + 0.9 * rng.uniform();
            y[i] = static_cast<double>(rng.below(2));
        }
        T scores({2, 1, 2, 3}, p, true);
        const T labels({2, 1, 2, 3}, y);
        record("cheat_loss", check_leaves([&] { return cheat_loss(scores, labels); }, {scores}, rng), kLossTolerance);
    }
    {
        auto img = random_tensor<double>({1, 1, 4, 4}, rng);
        record("tv_loss", check_leaves([&] { return tv_loss(img); }, {img}, rng), kLossTolerance);
    }

    {
        const auto gen = build_generator<double>(tiny_generator_config(rng.next_u64()));
        const auto disc = build_discriminator<double>(tiny_discriminator_config(rng.next_u64()));
        auto source = random_tensor<double>({2, 1, 8, 8}, rng);
        const auto target = random_tensor<double>({2, 1, 8, 8}, rng, 1.0, false);
        const Rng dropout_state(rng.next_u64());
        const LossWeights unit{1.0, 1.0, 1.0, 1.0};
        auto graph = [&] {
            Rng fixed = dropout_state;
            const auto g = generate(gen, source, Mode::train, fixed, false);
            const auto real_code = encode(gen, target, Mode::train, false).bottleneck;
            const auto fake_code = encode(gen, g.output, Mode::train, false).bottleneck;
            const auto scores = discriminate(disc, source, g.output, Mode::train, false);
            GeneratorLossParts<double> parts{l1_loss(target, g.output), constant_loss(real_code, fake_code),
                                             cheat_loss(scores, 1.0), tv_loss(g.output)};
            return generator_objective(parts, unit).first;
        };
        auto leaves = detail::trainable_leaves(gen.params);
        leaves.push_back(source);
        record("generator graph", check_leaves(graph, leaves, rng, 4), kOpTolerance);
    }
    {
        const auto disc = build_discriminator<double>(tiny_discriminator_config(rng.next_u64()));
        const auto source = random_tensor<double>({2, 1, 8, 8}, rng, 1.0, false);
        const auto real = random_tensor<double>({2, 1, 8, 8}, rng, 1.0, false);
        auto fake = random_tensor<double>({2, 1, 8, 8}, rng);
        auto graph = [&] {
            const auto r = discriminate(disc, source, real, Mode::train, false);
            const auto f = discriminate(disc, source, fake, Mode::train, false);
            return discriminator_objective(r, f).first;
        };
        auto leaves = detail::trainable_leaves(disc.params);
        leaves.push_back(fake);
        record("discriminator graph", check_leaves(graph, leaves, rng, 6), kOpTolerance);
    }
    return out;
}

}  // namespace testsupport
