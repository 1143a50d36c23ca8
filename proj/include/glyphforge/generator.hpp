#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <string>
#include <vector>

#include "glyphforge/conv.hpp"
#include "glyphforge/layers.hpp"
#include "glyphforge/parameters.hpp"

namespace glyphforge {

enum class Downsampling { strided_conv, maxpool_after_conv };

struct GeneratorConfig {
    Index side = 256;
    int depth = 8;  // side == 2^depth
    Index base_channels = 64;
    Index channel_cap = 512;
    std::uint64_t seed = 0;
    Downsampling downsampling = Downsampling::strided_conv;
    bool batchnorm = true;
    double dropout = 0.5;
    int dropout_levels = 3;
    double leaky_slope = 0.2;
    double init_stddev = 0.02;
    BatchNormOptions norm;
};

/// U-Net generator: `depth` encoder levels halving the side down to a 1x1 bottleneck,
/// mirrored by transposed-convolution decoder levels that concatenate the encoder
/// activation of matching resolution.
template <typename Scalar>
struct Generator {
    GeneratorConfig config;
    ParameterTable<Scalar> params;
};

/// Encoder activation that feeds the constant loss, plus the skip activations e_1..e_{d-1}.
template <typename Scalar>
struct Encoding {
    Tensor<Scalar> bottleneck;  // [N, f, 1, 1]
    std::vector<Tensor<Scalar>> skips;
};

template <typename Scalar>
struct Generation {
    Tensor<Scalar> output;  // [N, 1, S, S], tanh range
    Tensor<Scalar> bottleneck;
};

/// Channel count at encoder level 1..depth: base doubled per level, capped.
inline std::vector<Index> encoder_channels(const GeneratorConfig& cfg) {
    std::vector<Index> channels;
    Index c = cfg.base_channels;
    for (int level = 1; level <= cfg.depth; ++level) {
        channels.push_back(std::min(c, cfg.channel_cap));
        c *= 2;
    }
    return channels;
}

inline void validate(const GeneratorConfig& cfg) {
    if (cfg.side < 1 || !std::has_single_bit(static_cast<std::uint64_t>(cfg.side))) {
        throw ConfigError("generator: side " + std::to_string(cfg.side) + " is not a power of two");
    }
    if (Index{1} << cfg.depth != cfg.side) {
        throw ConfigError("generator: side " + std::to_string(cfg.side) + " != 2^depth with depth " +
                          std::to_string(cfg.depth));
    }
    if (cfg.depth < 3) throw ConfigError("generator: depth must be >= 3");
    if (cfg.base_channels < 1 || cfg.channel_cap < cfg.base_channels) {
        throw ConfigError("generator: need 1 <= base_channels <= channel_cap");
    }
    if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0)) throw ConfigError("generator: dropout must lie in [0, 1)");
    if (!(cfg.leaky_slope > 0.0 && cfg.leaky_slope < 1.0)) throw ConfigError("generator: leaky slope must lie in (0, 1)");
}

namespace detail {

template <typename Scalar>
void add_conv(ParameterTable<Scalar>& table, const std::string& prefix, Shape weight_shape, Index bias_size,
              double stddev, Rng& rng) {
    table.add(prefix + ".weight", normal_tensor<Scalar>(std::move(weight_shape), stddev, rng));
    table.add(prefix + ".bias", Tensor<Scalar>::zeros({bias_size}, true));
}

template <typename Scalar>
void add_norm(ParameterTable<Scalar>& table, const std::string& prefix, Index channels) {
    table.add(prefix + ".gamma", Tensor<Scalar>::full({channels}, Scalar(1), true));
    table.add(prefix + ".beta", Tensor<Scalar>::zeros({channels}, true));
    table.add(prefix + ".running_mean", Tensor<Scalar>::zeros({channels}), false);
    table.add(prefix + ".running_var", Tensor<Scalar>::full({channels}, Scalar(1)), false);
}

template <typename Scalar>
Tensor<Scalar> apply_norm(const ParameterTable<Scalar>& table, const std::string& prefix, const Tensor<Scalar>& x,
                          Mode mode, const BatchNormOptions& base, bool track_running) {
    BatchNormState<Scalar> stats{table.at(prefix + ".running_mean"), table.at(prefix + ".running_var")};
    BatchNormOptions options = base;
    options.update_running = track_running;
    return batchnorm2d(x, table.at(prefix + ".gamma"), table.at(prefix + ".beta"), stats, mode, options);
}

inline bool encoder_has_norm(const GeneratorConfig& cfg, int level) {
    return cfg.batchnorm && level > 1 && level < cfg.depth;
}

inline bool decoder_has_norm(const GeneratorConfig& cfg, int level) { return cfg.batchnorm && level > 1; }

inline std::string enc_name(int level) { return "G.enc" + std::to_string(level); }
inline std::string dec_name(int level) { return "G.dec" + std::to_string(level); }

}  // namespace detail

template <typename Scalar>
Generator<Scalar> build_generator(const GeneratorConfig& cfg) {
    validate(cfg);
    Generator<Scalar> g{cfg, {}};
    Rng rng(cfg.seed);
    const auto ch = encoder_channels(cfg);
    const Index kernel = cfg.downsampling == Downsampling::strided_conv ? 4 : 3;

    Index in = 1;
    for (int level = 1; level <= cfg.depth; ++level) {
        const Index out = ch[static_cast<std::size_t>(level - 1)];
        const auto name = detail::enc_name(level);
        detail::add_conv(g.params, name + ".conv", {out, in, kernel, kernel}, out, cfg.init_stddev, rng);
        if (detail::encoder_has_norm(cfg, level)) detail::add_norm(g.params, name + ".bn", out);
        in = out;
    }
    for (int level = cfg.depth; level >= 1; --level) {
        const Index level_ch = ch[static_cast<std::size_t>(level - 1)];
        const Index dec_in = level == cfg.depth ? level_ch : 2 * level_ch;
        const Index dec_out = level == 1 ? 1 : ch[static_cast<std::size_t>(level - 2)];
        const auto name = detail::dec_name(level);
        detail::add_conv(g.params, name + ".deconv", {dec_in, dec_out, 4, 4}, dec_out, cfg.init_stddev, rng);
        if (detail::decoder_has_norm(cfg, level)) detail::add_norm(g.params, name + ".bn", dec_out);
    }
    return g;
}

/// Runs the encoder. `track_running` controls whether train-mode batch norm folds batch
/// statistics into the running estimates.
template <typename Scalar>
Encoding<Scalar> encode(const Generator<Scalar>& g, const Tensor<Scalar>& x, Mode mode, bool track_running = true) {
    const auto& cfg = g.config;
    if (x.rank() != 4 || x.dim(1) != 1) throw DimensionError("generator: input must be [N, 1, S, S]");
    if (x.dim(2) != cfg.side || x.dim(3) != cfg.side) {
        throw DimensionError("generator: input side " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                             " != configured side " + std::to_string(cfg.side));
    }
    const auto act = Activation::leaky_relu(cfg.leaky_slope);
    Encoding<Scalar> enc;
    Tensor<Scalar> h = x;
    for (int level = 1; level <= cfg.depth; ++level) {
        const auto name = detail::enc_name(level);
        const auto& w = g.params.at(name + ".conv.weight");
        const auto& b = g.params.at(name + ".conv.bias");
        h = cfg.downsampling == Downsampling::strided_conv ? conv2d(h, w, b, 2, 1) : conv2d(h, w, b, 1, 1);
        if (detail::encoder_has_norm(cfg, level)) {
            h = detail::apply_norm(g.params, name + ".bn", h, mode, cfg.norm, track_running);
        }
        h = activation(h, act);
        if (cfg.downsampling == Downsampling::maxpool_after_conv) h = maxpool2d(h, 2, 2);
        if (level < cfg.depth) enc.skips.push_back(h);
    }
    enc.bottleneck = h;
    return enc;
}

/// Runs the decoder on an encoding. Dropout (train mode) hits the deepest
/// `dropout_levels` decoder levels that are not the output level.
template <typename Scalar>
Tensor<Scalar> decode(const Generator<Scalar>& g, const Encoding<Scalar>& enc, Mode mode, Rng& rng,
                      bool track_running = true) {
    const auto& cfg = g.config;
    if (enc.skips.size() != static_cast<std::size_t>(cfg.depth - 1)) {
        throw DimensionError("generator: expected " + std::to_string(cfg.depth - 1) + " skip activations");
    }
    Tensor<Scalar> h = enc.bottleneck;
    for (int level = cfg.depth; level >= 1; --level) {
        if (level < cfg.depth) h = concat_channels(h, enc.skips[static_cast<std::size_t>(level - 1)]);
        const auto name = detail::dec_name(level);
        h = conv2d_transpose(h, g.params.at(name + ".deconv.weight"), g.params.at(name + ".deconv.bias"), 2, 1);
        if (level == 1) return activation(h, Activation::tanh());
        if (detail::decoder_has_norm(cfg, level)) {
            h = detail::apply_norm(g.params, name + ".bn", h, mode, cfg.norm, track_running);
        }
        if (level > cfg.depth - cfg.dropout_levels) h = dropout(h, cfg.dropout, mode, rng);
        h = activation(h, Activation::relu());
    }
    return h;  // unreachable: level 1 returns
}

template <typename Scalar>
Generation<Scalar> generate(const Generator<Scalar>& g, const Tensor<Scalar>& x, Mode mode, Rng& rng,
                            bool track_running = true) {
    auto enc = encode(g, x, mode, track_running);
    auto y = decode(g, enc, mode, rng, track_running);
    return {std::move(y), std::move(enc.bottleneck)};
}

}  // namespace glyphforge
