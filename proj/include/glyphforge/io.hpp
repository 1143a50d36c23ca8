#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "glyphforge/error.hpp"

namespace glyphforge {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

/// Writes through a temporary sibling and renames, so readers never see a partial file.
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);
void append_text(const std::filesystem::path& path, const std::string& text);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

class ByteWriter {
public:
    template <typename T>
        requires std::is_arithmetic_v<T>
    void put(T value) {
        const auto* raw = reinterpret_cast<const std::uint8_t*>(&value);
        bytes_.insert(bytes_.end(), raw, raw + sizeof(T));
    }

    void put_bytes(std::span<const std::uint8_t> data) { bytes_.insert(bytes_.end(), data.begin(), data.end()); }
    void put_string(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

    std::size_t size() const { return bytes_.size(); }
    std::vector<std::uint8_t>& bytes() { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

/// Bounds-checked little-endian cursor. Running past the end is a format error.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    template <typename T>
        requires std::is_arithmetic_v<T>
    T get() {
        require(sizeof(T));
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    std::span<const std::uint8_t> get_bytes(std::size_t n) {
        require(n);
        auto out = bytes_.subspan(pos_, n);
        pos_ += n;
        return out;
    }

    std::string get_string(std::size_t n) {
        const auto raw = get_bytes(n);
        return {raw.begin(), raw.end()};
    }

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void require(std::size_t n) const {
        if (bytes_.size() - pos_ < n) {
            throw FormatError("unexpected end of data at byte offset " + std::to_string(pos_));
        }
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace glyphforge
