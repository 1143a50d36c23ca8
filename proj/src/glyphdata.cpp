#include "glyphforge/glyphdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "glyphforge/error.hpp"
#include "glyphforge/io.hpp"
#include "glyphforge/rng.hpp"

namespace glyphforge {

std::string codepoint_hex(std::uint32_t codepoint) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04X", codepoint);
    return buf;
}

std::optional<std::uint32_t> parse_codepoint_hex(const std::string& text) {
    if (text.empty() || text.size() > 6) return std::nullopt;
    std::uint32_t value = 0;
    for (char ch : text) {
        int digit;
        if (ch >= '0' && ch <= '9') digit = ch - '0';
        else if (ch >= 'A' && ch <= 'F') digit = ch - 'A' + 10;
        else if (ch >= 'a' && ch <= 'f') digit = ch - 'a' + 10;
        else return std::nullopt;
        value = value * 16 + static_cast<std::uint32_t>(digit);
    }
    if (value > 0x10FFFF || (value >= 0xD800 && value <= 0xDFFF)) return std::nullopt;
    return value;
}

const char* to_string(RejectReason reason) {
    switch (reason) {
        case RejectReason::missing_in_source: return "missing_in_source";
        case RejectReason::missing_in_target: return "missing_in_target";
        case RejectReason::size_mismatch: return "size_mismatch";
        case RejectReason::blank_glyph: return "blank_glyph";
        case RejectReason::malformed_file: return "malformed_file";
    }
    return "unknown";
}

double ink_fraction(const GlyphBitmap& bitmap) {
    if (bitmap.pixels.empty()) return 0.0;
    const auto ink = std::count_if(bitmap.pixels.begin(), bitmap.pixels.end(), [](std::uint8_t v) { return v < 128; });
    return static_cast<double>(ink) / static_cast<double>(bitmap.pixels.size());
}

namespace {

std::map<std::uint32_t, std::filesystem::path> list_glyphs(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::directory_iterator it(dir, ec);
    if (ec) throw IoError("cannot read directory " + dir.string() + ": " + ec.message());
    std::map<std::uint32_t, std::filesystem::path> found;
    for (const auto& entry : it) {
        if (!entry.is_regular_file() || entry.path().extension() != ".pgm") continue;
        if (auto cp = parse_codepoint_hex(entry.path().stem().string())) found.emplace(*cp, entry.path());
    }
    return found;
}

std::optional<GlyphBitmap> try_load(const std::filesystem::path& path) {
    try {
        return load_bitmap(path);
    } catch (const FormatError&) {
        return std::nullopt;
    }
}

}  // namespace

ScanResult scan_pairs(const std::filesystem::path& source_dir, const std::filesystem::path& target_dir,
                      const ScanOptions& options) {
    const auto sources = list_glyphs(source_dir);
    const auto targets = list_glyphs(target_dir);
    std::set<std::uint32_t> all;
    for (const auto& [cp, _] : sources) all.insert(cp);
    for (const auto& [cp, _] : targets) all.insert(cp);

    ScanResult result;
    for (std::uint32_t cp : all) {
        const auto s = sources.find(cp);
        const auto t = targets.find(cp);
        if (s == sources.end()) {
            result.rejected.push_back({cp, RejectReason::missing_in_source});
            continue;
        }
        if (t == targets.end()) {
            result.rejected.push_back({cp, RejectReason::missing_in_target});
            continue;
        }
        const auto src = try_load(s->second);
        const auto tgt = try_load(t->second);
        if (!src || !tgt) {
            result.rejected.push_back({cp, RejectReason::malformed_file});
            continue;
        }
        const bool square = src->width == src->height && tgt->width == tgt->height;
        const bool same = src->width == tgt->width && src->height == tgt->height;
        const bool sized = !options.side || src->width == *options.side;
        if (!square || !same || !sized) {
            result.rejected.push_back({cp, RejectReason::size_mismatch});
            continue;
        }
        if (ink_fraction(*src) < options.min_ink_fraction || ink_fraction(*tgt) < options.min_ink_fraction) {
            result.rejected.push_back({cp, RejectReason::blank_glyph});
            continue;
        }
        result.valid.push_back(cp);
    }
    return result;
}

std::vector<GlyphPair> load_pairs(const std::filesystem::path& source_dir, const std::filesystem::path& target_dir,
                                  std::span<const std::uint32_t> codepoints) {
    std::vector<GlyphPair> pairs;
    for (std::uint32_t cp : codepoints) {
        const auto name = codepoint_hex(cp) + ".pgm";
        GlyphPair pair{cp, load_bitmap(source_dir / name), load_bitmap(target_dir / name)};
        pair.source.codepoint = pair.target.codepoint = cp;
        pair.source.font_id = source_dir.filename().string();
        pair.target.font_id = target_dir.filename().string();
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

// ---------------------------------------------------------------------------- pack

namespace {
constexpr char kPackMagic[4] = {'G', 'L', 'Y', 'P'};
constexpr std::size_t kPackHeader = 4 + 2 + 2 + 4;
constexpr std::size_t kIndexEntry = 4 + 8;
}  // namespace

std::vector<std::uint8_t> encode_pack(std::vector<GlyphPair> pairs, int side) {
    if (side < 1 || side > 0xFFFF) throw ParameterError("pack: side must fit in 16 bits");
    std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return a.codepoint < b.codepoint; });
    const auto plane = static_cast<std::size_t>(side) * static_cast<std::size_t>(side);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        if (i > 0 && pairs[i - 1].codepoint == p.codepoint) {
            throw ParameterError("pack: duplicate codepoint " + codepoint_hex(p.codepoint));
        }
        for (const GlyphBitmap* bmp : {&p.source, &p.target}) {
            if (bmp->width != side || bmp->height != side || bmp->pixels.size() != plane) {
                throw DimensionError("pack: glyph " + codepoint_hex(p.codepoint) + " is " + std::to_string(bmp->width) +
                                     "x" + std::to_string(bmp->height) + ", expected side " + std::to_string(side));
            }
        }
    }

    ByteWriter w;
    w.put_bytes({reinterpret_cast<const std::uint8_t*>(kPackMagic), 4});
    w.put<std::uint16_t>(kPackVersion);
    w.put<std::uint16_t>(static_cast<std::uint16_t>(side));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(pairs.size()));
    const std::size_t payload_start = kPackHeader + pairs.size() * kIndexEntry;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        w.put<std::uint32_t>(pairs[i].codepoint);
        w.put<std::uint64_t>(payload_start + i * 2 * plane);
    }
    for (const auto& p : pairs) {
        w.put_bytes(p.source.pixels);
        w.put_bytes(p.target.pixels);
    }
    const auto crc = crc32(std::span(w.bytes()).subspan(payload_start));
    w.put<std::uint32_t>(crc);
    return std::move(w.bytes());
}

PackSummary pack(std::vector<GlyphPair> pairs, int side, const std::filesystem::path& out) {
    const auto count = static_cast<std::uint32_t>(pairs.size());
    const auto bytes = encode_pack(std::move(pairs), side);
    write_file(out, bytes);
    std::uint32_t crc;
    std::memcpy(&crc, bytes.data() + bytes.size() - 4, 4);
    return {side, count, bytes.size(), crc};
}

Pack Pack::decode(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    if (r.get_string(4) != std::string(kPackMagic, 4)) throw FormatError("pack: bad magic at byte offset 0");
    const auto version = r.get<std::uint16_t>();
    if (version != kPackVersion) throw FormatError("pack: unsupported version " + std::to_string(version));
    Pack p;
    p.side_ = r.get<std::uint16_t>();
    const auto count = r.get<std::uint32_t>();
    if (p.side_ < 1) throw FormatError("pack: side must be positive");
    const auto plane = static_cast<std::size_t>(p.side_) * static_cast<std::size_t>(p.side_);
    const std::size_t record = 2 * plane;
    if (r.remaining() / kIndexEntry < count) throw FormatError("pack: index table truncated");
    const std::size_t payload_start = kPackHeader + count * kIndexEntry;
    const std::size_t expected_size = payload_start + count * record + 4;
    if (bytes.size() != expected_size) {
        throw ChecksumError("pack: file is " + std::to_string(bytes.size()) + " bytes, layout implies " +
                            std::to_string(expected_size));
    }
    std::vector<std::uint64_t> offsets;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto cp = r.get<std::uint32_t>();
        const auto off = r.get<std::uint64_t>();
        if (!p.codepoints_.empty() && cp <= p.codepoints_.back()) {
            throw FormatError("pack: codepoints not strictly ascending at index " + std::to_string(i));
        }
        if (!offsets.empty() && off <= offsets.back()) {
            throw FormatError("pack: offsets not strictly increasing at index " + std::to_string(i));
        }
        if (off < payload_start || off + record > payload_start + count * record) {
            throw FormatError("pack: record offset " + std::to_string(off) + " outside payload");
        }
        p.codepoints_.push_back(cp);
        offsets.push_back(off);
    }
    const auto payload = bytes.subspan(payload_start, count * record);
    std::uint32_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
    if (crc32(payload) != stored) throw ChecksumError("pack: payload CRC32 mismatch");
    p.payload_.reserve(payload.size());
    for (auto off : offsets) {
        const auto rec = bytes.subspan(static_cast<std::size_t>(off), record);
        p.payload_.insert(p.payload_.end(), rec.begin(), rec.end());
    }
    return p;
}

Pack Pack::open(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    try {
        return decode(bytes);
    } catch (const ChecksumError& e) {
        throw ChecksumError(path.string() + ": " + e.what());
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::span<const std::uint8_t> Pack::source_pixels(std::size_t i) const {
    const auto plane = static_cast<std::size_t>(side_) * static_cast<std::size_t>(side_);
    return std::span(payload_).subspan(i * 2 * plane, plane);
}

std::span<const std::uint8_t> Pack::target_pixels(std::size_t i) const {
    const auto plane = static_cast<std::size_t>(side_) * static_cast<std::size_t>(side_);
    return std::span(payload_).subspan(i * 2 * plane + plane, plane);
}

std::optional<std::size_t> Pack::find(std::uint32_t codepoint) const {
    const auto it = std::lower_bound(codepoints_.begin(), codepoints_.end(), codepoint);
    if (it == codepoints_.end() || *it != codepoint) return std::nullopt;
    return static_cast<std::size_t>(it - codepoints_.begin());
}

// ---------------------------------------------------------------------------- views and batches

PackView PackView::all(std::shared_ptr<const Pack> pack) {
    PackView v{std::move(pack), {}};
    v.indices.resize(v.pack->size());
    for (std::size_t i = 0; i < v.indices.size(); ++i) v.indices[i] = i;
    return v;
}

std::pair<PackView, PackView> split(const PackView& view, double holdout_fraction, std::uint64_t seed) {
    if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
        throw ParameterError("split: holdout fraction must lie in [0, 1), got " + std::to_string(holdout_fraction));
    }
    const auto n = view.size();
    const auto holdout_count = static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(n)));
    Rng rng(seed);
    const auto order = permutation(n, rng);
    PackView train{view.pack, {}}, holdout{view.pack, {}};
    for (std::size_t i = 0; i < n; ++i) {
        (i < holdout_count ? holdout : train).indices.push_back(view.indices[order[i]]);
    }
    std::sort(train.indices.begin(), train.indices.end());
    std::sort(holdout.indices.begin(), holdout.indices.end());
    return {std::move(train), std::move(holdout)};
}

PairedSample sample_at(const PackView& view, std::size_t position) {
    const Pack& p = *view.pack;
    const std::size_t i = view.indices.at(position);
    const Index side = p.side();
    auto to_tensor = [side](std::span<const std::uint8_t> px) {
        Tensor<float>::Vector v(static_cast<Index>(px.size()));
        for (Index k = 0; k < v.size(); ++k) v[k] = normalize_pixel<float>(px[static_cast<std::size_t>(k)]);
        return Tensor<float>({1, side, side}, std::move(v));
    };
    return {to_tensor(p.source_pixels(i)), to_tensor(p.target_pixels(i)), p.codepoint(i)};
}

Batch make_batch(std::span<const PairedSample> samples) {
    if (samples.empty()) throw ParameterError("make_batch: no samples");
    const Shape& each = samples.front().source.shape();
    const Index plane = samples.front().source.size();
    const auto n = static_cast<Index>(samples.size());
    Tensor<float>::Vector src(n * plane), tgt(n * plane);
    Batch batch;
    for (Index s = 0; s < n; ++s) {
        const auto& smp = samples[static_cast<std::size_t>(s)];
        if (smp.source.shape() != each || smp.target.shape() != each) {
            throw DimensionError("make_batch: samples disagree in shape");
        }
        src.segment(s * plane, plane) = smp.source.values();
        tgt.segment(s * plane, plane) = smp.target.values();
        batch.codepoints.push_back(smp.codepoint);
    }
    Shape shape{n};
    shape.insert(shape.end(), each.begin(), each.end());
    batch.source = Tensor<float>(shape, std::move(src));
    batch.target = Tensor<float>(shape, std::move(tgt));
    return batch;
}

BatchIterator::BatchIterator(PackView view, std::size_t batch_size, std::uint64_t epoch_seed)
    : view_(std::move(view)), batch_size_(batch_size) {
    if (batch_size_ < 1) throw ParameterError("batch size must be >= 1");
    Rng rng(epoch_seed);
    order_ = permutation(view_.size(), rng);
}

std::size_t BatchIterator::batches_per_epoch() const { return (view_.size() + batch_size_ - 1) / batch_size_; }

void BatchIterator::skip(std::size_t batches) { cursor_ = std::min(order_.size(), cursor_ + batches * batch_size_); }

std::optional<Batch> BatchIterator::next() {
    if (cursor_ >= order_.size()) return std::nullopt;
    const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
    std::vector<PairedSample> samples;
    for (std::size_t k = cursor_; k < end; ++k) samples.push_back(sample_at(view_, order_[k]));
    cursor_ = end;
    return make_batch(samples);
}

}  // namespace glyphforge
