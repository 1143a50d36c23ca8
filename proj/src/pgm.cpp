#include <cctype>
#include <cstdio>
#include <fstream>
#include <iterator>

#include "glyphforge/error.hpp"
#include "glyphforge/glyphdata.hpp"
#include "glyphforge/io.hpp"

namespace glyphforge {

namespace {

class HeaderReader {
public:
    explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::size_t offset() const { return pos_; }

    void skip_whitespace_and_comments() {
        while (pos_ < bytes_.size()) {
            if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    long read_number(const char* field) {
        skip_whitespace_and_comments();
        const std::size_t start = pos_;
        long value = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            value = value * 10 + (bytes_[pos_] - '0');
            if (value > 1'000'000) fail(start, std::string("PGM ") + field + " is implausibly large");
            ++pos_;
        }
        if (pos_ == start) fail(start, std::string("expected PGM ") + field);
        return value;
    }

    /// Exactly one whitespace byte separates maxval from the raster.
    void read_raster_separator() {
        if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) fail(pos_, "expected whitespace before PGM raster");
        ++pos_;
    }

    [[noreturn]] static void fail(std::size_t at, const std::string& what) {
        throw FormatError(what + " at byte offset " + std::to_string(at));
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

GlyphBitmap parse_pgm(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P') HeaderReader::fail(0, "missing PGM magic");
    if (bytes[1] != '5') {
        HeaderReader::fail(1, std::string("unsupported PNM variant P") + static_cast<char>(bytes[1]) + ", need P5");
    }
    HeaderReader reader(bytes.subspan(2));
    const long width = reader.read_number("width");
    const long height = reader.read_number("height");
    const std::size_t maxval_at = reader.offset() + 2;
    const long maxval = reader.read_number("maxval");
    if (width < 1 || height < 1) HeaderReader::fail(2, "PGM extents must be positive");
    if (maxval != 255) HeaderReader::fail(maxval_at, "PGM maxval must be 255, got " + std::to_string(maxval));
    reader.read_raster_separator();
    const std::size_t raster = reader.offset() + 2;
    const auto expected = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    if (bytes.size() - raster < expected) {
        HeaderReader::fail(bytes.size(), "truncated PGM raster: need " + std::to_string(expected) + " bytes from offset " +
                                             std::to_string(raster));
    }
    GlyphBitmap bmp;
    bmp.width = static_cast<int>(width);
    bmp.height = static_cast<int>(height);
    bmp.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(raster),
                      bytes.begin() + static_cast<std::ptrdiff_t>(raster + expected));
    return bmp;
}

GlyphBitmap load_bitmap(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    try {
        return parse_pgm(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::vector<std::uint8_t> encode_pgm(int width, int height, std::span<const std::uint8_t> pixels) {
    if (width < 1 || height < 1 || pixels.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
        throw DimensionError("encode_pgm: raster size does not match " + std::to_string(width) + "x" +
                             std::to_string(height));
    }
    char header[64];
    const int len = std::snprintf(header, sizeof header, "P5\n%d %d\n255\n", width, height);
    std::vector<std::uint8_t> out(header, header + len);
    out.insert(out.end(), pixels.begin(), pixels.end());
    return out;
}

void write_pgm(const std::filesystem::path& path, int width, int height, std::span<const std::uint8_t> pixels) {
    write_file(path, encode_pgm(width, height, pixels));
}

void write_bitmap(const GlyphBitmap& bitmap, const std::filesystem::path& path) {
    write_pgm(path, bitmap.width, bitmap.height, bitmap.pixels);
}

}  // namespace glyphforge
