#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "glyphforge/tensor.hpp"

namespace glyphforge {

/// 8-bit glyph raster: 0 = ink, 255 = background, row-major.
struct GlyphBitmap {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;
    std::uint32_t codepoint = 0;
    std::string font_id;
};

/// Parses a binary PGM (P5, maxval 255). Errors name the byte offset.
GlyphBitmap parse_pgm(std::span<const std::uint8_t> bytes);
GlyphBitmap load_bitmap(const std::filesystem::path& path);

/// Canonical encoding "P5\n<w> <h>\n255\n" followed by the raster.
std::vector<std::uint8_t> encode_pgm(int width, int height, std::span<const std::uint8_t> pixels);
void write_bitmap(const GlyphBitmap& bitmap, const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, int width, int height, std::span<const std::uint8_t> pixels);

/// Intensity v -> 1 - 2 v / 255, so ink is +1 and background -1.
template <typename Scalar>
Scalar normalize_pixel(std::uint8_t v) {
    return Scalar(1) - Scalar(2) * static_cast<Scalar>(v) / Scalar(255);
}

/// Inverse of normalize_pixel, rounded and clamped to [0, 255].
inline std::uint8_t denormalize_pixel(double value) {
    const double v = std::round((1.0 - value) * 127.5);
    return static_cast<std::uint8_t>(v < 0.0 ? 0.0 : (v > 255.0 ? 255.0 : v));
}

/// [1, H, W] tensor of normalized intensities.
template <typename Scalar>
Tensor<Scalar> normalize(const GlyphBitmap& bitmap) {
    typename Tensor<Scalar>::Vector v(static_cast<Index>(bitmap.pixels.size()));
    for (Index i = 0; i < v.size(); ++i) v[i] = normalize_pixel<Scalar>(bitmap.pixels[static_cast<std::size_t>(i)]);
    return Tensor<Scalar>({1, bitmap.height, bitmap.width}, std::move(v));
}

std::string codepoint_hex(std::uint32_t codepoint);
std::optional<std::uint32_t> parse_codepoint_hex(const std::string& text);

enum class RejectReason { missing_in_source, missing_in_target, size_mismatch, blank_glyph, malformed_file };
const char* to_string(RejectReason reason);

struct Rejection {
    std::uint32_t codepoint;
    RejectReason reason;
    friend bool operator==(const Rejection&, const Rejection&) = default;
};

struct ScanOptions {
    std::optional<int> side;        // required side length, if any
    double min_ink_fraction = 0.005;  // fraction of pixels below 128
};

struct ScanResult {
    std::vector<std::uint32_t> valid;  // ascending
    std::vector<Rejection> rejected;   // ascending by codepoint
};

/// Fraction of pixels darker than mid-gray.
double ink_fraction(const GlyphBitmap& bitmap);

/// Pairs <hex>.pgm files across the two directories and validates each pair.
ScanResult scan_pairs(const std::filesystem::path& source_dir, const std::filesystem::path& target_dir,
                      const ScanOptions& options = {});

struct GlyphPair {
    std::uint32_t codepoint = 0;
    GlyphBitmap source;
    GlyphBitmap target;
};

std::vector<GlyphPair> load_pairs(const std::filesystem::path& source_dir, const std::filesystem::path& target_dir,
                                  std::span<const std::uint32_t> codepoints);

struct PackSummary {
    int side = 0;
    std::uint32_t count = 0;
    std::uint64_t bytes = 0;
    std::uint32_t crc = 0;
};

inline constexpr std::uint16_t kPackVersion = 1;

/// Serializes pairs in ascending codepoint order. Little-endian layout:
/// "GLYP" | u16 version | u16 side | u32 count | count x {u32 codepoint, u64 offset}
/// | count x (side^2 source bytes, side^2 target bytes) | u32 CRC32(payload).
/// Offsets are absolute file positions of each record.
PackSummary pack(std::vector<GlyphPair> pairs, int side, const std::filesystem::path& out);
std::vector<std::uint8_t> encode_pack(std::vector<GlyphPair> pairs, int side);

/// In-memory, read-only pack contents.
class Pack {
public:
    static Pack open(const std::filesystem::path& path);
    static Pack decode(std::span<const std::uint8_t> bytes);

    int side() const { return side_; }
    std::size_t size() const { return codepoints_.size(); }
    std::uint32_t codepoint(std::size_t i) const { return codepoints_.at(i); }
    const std::vector<std::uint32_t>& codepoints() const { return codepoints_; }
    std::span<const std::uint8_t> source_pixels(std::size_t i) const;
    std::span<const std::uint8_t> target_pixels(std::size_t i) const;
    std::optional<std::size_t> find(std::uint32_t codepoint) const;

private:
    int side_ = 0;
    std::vector<std::uint32_t> codepoints_;
    std::vector<std::uint8_t> payload_;  // records back to back
};

/// A subset of a shared pack, as sample indices in ascending order.
struct PackView {
    std::shared_ptr<const Pack> pack;
    std::vector<std::size_t> indices;

    static PackView all(std::shared_ptr<const Pack> pack);
    std::size_t size() const { return indices.size(); }
};

/// Deterministic disjoint split; the holdout receives round(fraction * n) samples.
std::pair<PackView, PackView> split(const PackView& view, double holdout_fraction, std::uint64_t seed);

struct PairedSample {
    Tensor<float> source;  // [1, S, S] in [-1, 1]
    Tensor<float> target;
    std::uint32_t codepoint = 0;
};

PairedSample sample_at(const PackView& view, std::size_t position);

struct Batch {
    Tensor<float> source;  // [B, 1, S, S]
    Tensor<float> target;
    std::vector<std::uint32_t> codepoints;
    std::size_t size() const { return codepoints.size(); }
};

/// Stacks samples along a new leading axis.
Batch make_batch(std::span<const PairedSample> samples);

/// One epoch over a view in a permutation fixed by the epoch seed. The final batch may be short.
class BatchIterator {
public:
    BatchIterator(PackView view, std::size_t batch_size, std::uint64_t epoch_seed);

    std::optional<Batch> next();
    /// Skips whole batches without materializing them (resume support).
    void skip(std::size_t batches);
    std::size_t batches_per_epoch() const;
    const std::vector<std::size_t>& order() const { return order_; }

private:
    PackView view_;
    std::size_t batch_size_;
    std::vector<std::size_t> order_;  // positions into view_.indices
    std::size_t cursor_ = 0;
};

}  // namespace glyphforge
