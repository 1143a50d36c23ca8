#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <unistd.h>
#include <vector>

#include "glyphforge/glyphdata.hpp"
#include "glyphforge/io.hpp"
#include "glyphforge/rng.hpp"
#include "glyphforge/tensor.hpp"
#include "glyphforge/trainer.hpp"

namespace testsupport {

namespace fs = std::filesystem;
using namespace glyphforge;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "gf") {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

/// Stroke-based toy glyph: a few horizontal/vertical bars chosen by the codepoint.
/// `weight` thickens the strokes and `shift` offsets them, giving a target "style".
inline GlyphBitmap synthetic_glyph(std::uint32_t codepoint, int side, int weight = 1, int shift = 0) {
    GlyphBitmap bmp;
    bmp.width = bmp.height = side;
    bmp.codepoint = codepoint;
    bmp.pixels.assign(static_cast<std::size_t>(side * side), 255);
    Rng rng(codepoint);
    const int strokes = 2 + static_cast<int>(rng.below(3));
    const int margin = side / 8;
    for (int s = 0; s < strokes; ++s) {
        const bool horizontal = rng.below(2) == 0;
        const int at = margin + static_cast<int>(rng.below(static_cast<std::uint64_t>(side - 2 * margin)));
        const int from = margin + static_cast<int>(rng.below(static_cast<std::uint64_t>(side / 3)));
        const int to = side - margin - static_cast<int>(rng.below(static_cast<std::uint64_t>(side / 3)));
        for (int t = from; t < to; ++t) {
            for (int k = 0; k < weight; ++k) {
                int y = horizontal ? at + k + shift : t;
                int x = horizontal ? t + shift : at + k;
                y = std::clamp(y, 0, side - 1);
                x = std::clamp(x, 0, side - 1);
                bmp.pixels[static_cast<std::size_t>(y * side + x)] = 0;
            }
        }
    }
    return bmp;
}

inline GlyphPair synthetic_pair(std::uint32_t codepoint, int side) {
    return {codepoint, synthetic_glyph(codepoint, side, 1, 0), synthetic_glyph(codepoint, side, 3, 1)};
}

inline std::vector<GlyphPair> synthetic_pairs(std::uint32_t first, int count, int side) {
    std::vector<GlyphPair> pairs;
    for (int i = 0; i < count; ++i) pairs.push_back(synthetic_pair(first + static_cast<std::uint32_t>(i), side));
    return pairs;
}

/// Writes a pack of `count` synthetic pairs and returns it opened.
inline std::shared_ptr<const Pack> synthetic_pack(const fs::path& path, int count, int side,
                                                  std::uint32_t first = 0x4E00) {
    pack(synthetic_pairs(first, count, side), side, path);
    return std::make_shared<const Pack>(Pack::open(path));
}

/// Glyph directory tree of 100 codepoints (4E00..4E63) with seven seeded defects.
struct DefectTree {
    fs::path source, target;
    std::vector<Rejection> defects;  // ascending by codepoint
    std::size_t valid = 0;
};

inline DefectTree write_defect_tree(const fs::path& root, int side = 32) {
    DefectTree tree{root / "source", root / "target", {}, 0};
    fs::create_directories(tree.source);
    fs::create_directories(tree.target);
    auto name = [](std::uint32_t cp) { return codepoint_hex(cp) + ".pgm"; };
    const auto blank = [&] {
        GlyphBitmap b;
        b.width = b.height = side;
        b.pixels.assign(static_cast<std::size_t>(side * side), 255);
        return b;
    }();
    for (std::uint32_t i = 0; i < 100; ++i) {
        const std::uint32_t cp = 0x4E00 + i;
        const auto pair = synthetic_pair(cp, side);
        GlyphBitmap src = pair.source, tgt = pair.target;
        bool write_src = true, write_tgt = true;
        switch (i) {
            case 3: write_tgt = false, tree.defects.push_back({cp, RejectReason::missing_in_target}); break;
            case 17: write_src = false, tree.defects.push_back({cp, RejectReason::missing_in_source}); break;
            case 29: tgt = synthetic_glyph(cp, side / 2, 2), tree.defects.push_back({cp, RejectReason::size_mismatch}); break;
            case 44: tgt = blank, tree.defects.push_back({cp, RejectReason::blank_glyph}); break;
            case 58: src = blank, tree.defects.push_back({cp, RejectReason::blank_glyph}); break;
            case 71: {
                write_src = false;
                const std::string junk = "not a bitmap";
                write_file(tree.source / name(cp), {reinterpret_cast<const std::uint8_t*>(junk.data()), junk.size()});
                tree.defects.push_back({cp, RejectReason::malformed_file});
                break;
            }
            case 86: {
                write_tgt = false;
                auto bytes = encode_pgm(tgt.width, tgt.height, tgt.pixels);
                bytes.resize(bytes.size() - 10);
                write_file(tree.target / name(cp), bytes);
                tree.defects.push_back({cp, RejectReason::malformed_file});
                break;
            }
            default: ++tree.valid;
        }
        if (write_src) write_bitmap(src, tree.source / name(cp));
        if (write_tgt) write_bitmap(tgt, tree.target / name(cp));
    }
    return tree;
}

/// Small, fast configuration for end-to-end tests.
inline TrainConfig toy_config(int side = 32) {
    TrainConfig c;
    c.side = side;
    c.g_base_channels = 8;
    c.g_channel_cap = 32;
    c.d_base_channels = 8;
    c.d_channel_cap = 32;
    c.d_levels = 2;
    c.batch_size = 4;
    c.epochs = 1;
    c.checkpoint_interval = 0;
    c.sample_interval = 0;
    c.sample_count = 2;
    return c;
}

template <typename Scalar>
Tensor<Scalar> random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = true) {
    typename Tensor<Scalar>::Vector v(shape_size(shape));
    for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(scale * (2.0 * rng.uniform() - 1.0));
    return Tensor<Scalar>(std::move(shape), std::move(v), requires_grad);
}

/// |a - n| relative to the larger magnitude. Below `floor` the comparison turns absolute:
/// a central difference at eps=1e-5 carries ~1e-10 of rounding noise, which would
/// otherwise dominate coordinates whose true gradient is exactly zero.
inline double relative_error(double analytic, double numeric, double floor = 1e-5) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central-difference check of d(f)/d(leaf) on the given coordinates (all when empty).
/// `f` must rebuild its graph from the current leaf values. Returns the max relative error.
inline double fd_check(const std::function<double()>& f, Tensor<double> leaf, const Eigen::VectorXd& analytic,
                       std::vector<Index> coords = {}, double eps = 1e-5, double floor = 1e-5) {
    if (coords.empty()) {
        for (Index i = 0; i < leaf.size(); ++i) coords.push_back(i);
    }
    double worst = 0.0;
    for (Index i : coords) {
        double& x = leaf.mutable_values()[i];
        const double saved = x;
        x = saved + eps;
        const double up = f();
        x = saved - eps;
        const double down = f();
        x = saved;
        worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps), floor));
    }
    return worst;
}

/// Up to `count` distinct coordinates of a tensor of `size` elements.
inline std::vector<Index> sample_coords(Index size, std::size_t count, Rng& rng) {
    std::vector<Index> out;
    if (static_cast<std::size_t>(size) <= count) {
        for (Index i = 0; i < size; ++i) out.push_back(i);
        return out;
    }
    const auto order = permutation(static_cast<std::size_t>(size), rng);
    for (std::size_t i = 0; i < count; ++i) out.push_back(static_cast<Index>(order[i]));
    return out;
}

/// Tiny 64-bit generator/discriminator configs for graph-level gradient checks.
inline GeneratorConfig tiny_generator_config(std::uint64_t seed) {
    GeneratorConfig g;
    g.side = 8;
    g.depth = 3;
    g.base_channels = 2;
    g.channel_cap = 4;
    g.seed = seed;
    g.dropout_levels = 2;
    g.init_stddev = 0.5;
    return g;
}

inline DiscriminatorConfig tiny_discriminator_config(std::uint64_t seed) {
    DiscriminatorConfig d;
    d.side = 8;
    d.levels = 2;
    d.base_channels = 2;
    d.channel_cap = 4;
    d.seed = seed;
    d.init_stddev = 0.5;
    return d;
}

}  // namespace testsupport
