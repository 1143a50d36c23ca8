#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <string>
#include <vector>

#include "glyphforge/conv.hpp"
#include "glyphforge/generator.hpp"
#include "glyphforge/layers.hpp"
#include "glyphforge/parameters.hpp"

namespace glyphforge {

struct DiscriminatorConfig {
    Index side = 256;
    int levels = 3;
    Index base_channels = 64;
    Index channel_cap = 512;
    std::uint64_t seed = 1;
    bool batchnorm = true;
    double leaky_slope = 0.2;
    double init_stddev = 0.02;
    BatchNormOptions norm;
};

/// Conditional patch classifier: `levels` stride-2 4x4 conv blocks over the channel
/// concatenation (source, candidate), then a stride-1 4x4 single-channel sigmoid head.
template <typename Scalar>
struct Discriminator {
    DiscriminatorConfig config;
    ParameterTable<Scalar> params;
};

inline constexpr Index kPatchKernel = 4;

inline std::vector<Index> discriminator_channels(const DiscriminatorConfig& cfg) {
    std::vector<Index> channels;
    Index c = cfg.base_channels;
    for (int level = 1; level <= cfg.levels; ++level) {
        channels.push_back(std::min(c, cfg.channel_cap));
        c *= 2;
    }
    return channels;
}

/// Side length of the score grid.
inline Index patch_grid_side(const DiscriminatorConfig& cfg) {
    Index s = cfg.side;
    for (int level = 0; level < cfg.levels; ++level) s = (s + 2 - kPatchKernel) / 2 + 1;
    return s + 2 - kPatchKernel + 1;
}

/// Input extent seen by one score cell (ignoring the clipping of zero padding at borders).
inline Index receptive_field(const DiscriminatorConfig& cfg) {
    Index rf = kPatchKernel;  // head, stride 1
    for (int level = 0; level < cfg.levels; ++level) rf = (rf - 1) * 2 + kPatchKernel;
    return rf;
}

inline void validate(const DiscriminatorConfig& cfg) {
    if (cfg.levels < 1) throw ConfigError("discriminator: need at least one level");
    if (cfg.side < 1 || !std::has_single_bit(static_cast<std::uint64_t>(cfg.side))) {
        throw ConfigError("discriminator: side " + std::to_string(cfg.side) + " is not a power of two");
    }
    // The head needs a grid of at least 2x2 to fit its 4x4 padded window.
    if ((cfg.side >> cfg.levels) < 2) {
        throw ConfigError("discriminator: side " + std::to_string(cfg.side) + " too small for " +
                          std::to_string(cfg.levels) + " levels");
    }
    if (cfg.base_channels < 1 || cfg.channel_cap < cfg.base_channels) {
        throw ConfigError("discriminator: need 1 <= base_channels <= channel_cap");
    }
}

namespace detail {
inline std::string disc_name(int level) { return "D.level" + std::to_string(level); }
}  // namespace detail

template <typename Scalar>
Discriminator<Scalar> build_discriminator(const DiscriminatorConfig& cfg) {
    validate(cfg);
    Discriminator<Scalar> d{cfg, {}};
    Rng rng(cfg.seed);
    Index in = 2;
    const auto ch = discriminator_channels(cfg);
    for (int level = 1; level <= cfg.levels; ++level) {
        const Index out = ch[static_cast<std::size_t>(level - 1)];
        const auto name = detail::disc_name(level);
        detail::add_conv(d.params, name + ".conv", {out, in, kPatchKernel, kPatchKernel}, out, cfg.init_stddev, rng);
        if (cfg.batchnorm && level > 1) detail::add_norm(d.params, name + ".bn", out);
        in = out;
    }
    detail::add_conv(d.params, "D.head", {1, in, kPatchKernel, kPatchKernel}, 1, cfg.init_stddev, rng);
    return d;
}

/// Per-patch probability that `candidate` is the real rendering of `source`: [N, 1, hp, wp].
template <typename Scalar>
Tensor<Scalar> discriminate(const Discriminator<Scalar>& d, const Tensor<Scalar>& source,
                            const Tensor<Scalar>& candidate, Mode mode = Mode::train, bool track_running = true) {
    const auto& cfg = d.config;
    if (source.shape() != candidate.shape()) {
        throw DimensionError("discriminator: source " + shape_string(source.shape()) + " and candidate " +
                             shape_string(candidate.shape()) + " differ");
    }
    if (source.rank() != 4 || source.dim(1) != 1 || source.dim(2) != cfg.side || source.dim(3) != cfg.side) {
        throw DimensionError("discriminator: inputs must be [N, 1, " + std::to_string(cfg.side) + ", " +
                             std::to_string(cfg.side) + "], got " + shape_string(source.shape()));
    }
    const auto act = Activation::leaky_relu(cfg.leaky_slope);
    Tensor<Scalar> h = concat_channels(source, candidate);
    for (int level = 1; level <= cfg.levels; ++level) {
        const auto name = detail::disc_name(level);
        h = conv2d(h, d.params.at(name + ".conv.weight"), d.params.at(name + ".conv.bias"), 2, 1);
        if (cfg.batchnorm && level > 1) h = detail::apply_norm(d.params, name + ".bn", h, mode, cfg.norm, track_running);
        h = activation(h, act);
    }
    h = conv2d(h, d.params.at("D.head.weight"), d.params.at("D.head.bias"), 1, 1);
    return activation(h, Activation::sigmoid());
}

}  // namespace glyphforge
