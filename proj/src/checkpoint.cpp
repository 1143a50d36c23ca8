#include <cstring>

#include "glyphforge/io.hpp"
#include "glyphforge/trainer.hpp"

namespace glyphforge {

namespace {

constexpr char kCheckpointMagic[4] = {'G', 'C', 'K', 'P'};

struct TableEntry {
    std::string name;
    Shape shape;
    Eigen::VectorXf values;
};

void put_entry(ByteWriter& w, const std::string& name, const Shape& shape, const Eigen::VectorXf& values) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.put_string(name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(shape.size()));
    for (Index d : shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.put_bytes({reinterpret_cast<const std::uint8_t*>(values.data()), static_cast<std::size_t>(values.size()) * 4});
}

/// Appends one table: u32 count, then entries in generator-then-discriminator order.
template <typename Select>
void put_table(ByteWriter& w, const TrainState& st, Select&& select) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(st.generator.params.size() + st.discriminator.params.size()));
    for (std::size_t i = 0; i < st.generator.params.size(); ++i) {
        const auto& e = st.generator.params[i];
        put_entry(w, e.name, e.tensor.shape(), select(e.tensor, st.g_moments, i));
    }
    for (std::size_t i = 0; i < st.discriminator.params.size(); ++i) {
        const auto& e = st.discriminator.params[i];
        put_entry(w, e.name, e.tensor.shape(), select(e.tensor, st.d_moments, i));
    }
}

std::vector<TableEntry> get_table(ByteReader& r) {
    const auto count = r.get<std::uint32_t>();
    std::vector<TableEntry> table;
    for (std::uint32_t i = 0; i < count; ++i) {
        TableEntry e;
        e.name = r.get_string(r.get<std::uint16_t>());
        const auto rank = r.get<std::uint8_t>();
        for (std::uint8_t k = 0; k < rank; ++k) e.shape.push_back(r.get<std::uint32_t>());
        const auto n = static_cast<std::size_t>(shape_size(e.shape));
        const auto raw = r.get_bytes(n * 4);
        e.values.resize(static_cast<Index>(n));
        std::memcpy(e.values.data(), raw.data(), raw.size());
        table.push_back(std::move(e));
    }
    return table;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const TrainState& st) {
    ByteWriter w;
    w.put_bytes({reinterpret_cast<const std::uint8_t*>(kCheckpointMagic), 4});
    w.put<std::uint16_t>(kCheckpointVersion);
    w.put<std::uint64_t>(static_cast<std::uint64_t>(st.step));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(st.epoch));
    const auto fp = fingerprint(st.config);
    w.put_bytes(fp);
    w.put<std::uint8_t>(Rng::kAlgorithmId);
    w.put<std::uint64_t>(st.rng.seed());
    w.put<std::uint64_t>(st.rng.counter());
    put_table(w, st, [](const Tensor<float>& t, const AdamMoments<float>&, std::size_t) -> const Eigen::VectorXf& {
        return t.values();
    });
    put_table(w, st, [](const Tensor<float>&, const AdamMoments<float>& m, std::size_t i) -> const Eigen::VectorXf& {
        return m.first[i];
    });
    put_table(w, st, [](const Tensor<float>&, const AdamMoments<float>& m, std::size_t i) -> const Eigen::VectorXf& {
        return m.second[i];
    });
    w.put<std::uint32_t>(crc32(w.bytes()));
    return std::move(w.bytes());
}

TrainState decode_checkpoint(std::span<const std::uint8_t> bytes, const TrainConfig& config) {
    if (bytes.size() < 4) throw ChecksumError("checkpoint: file too short for a checksum");
    std::uint32_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
    const auto body = bytes.first(bytes.size() - 4);
    if (crc32(body) != stored) throw ChecksumError("checkpoint: CRC32 mismatch (corrupt or truncated file)");

    ByteReader r(body);
    if (r.get_string(4) != std::string(kCheckpointMagic, 4)) throw FormatError("checkpoint: bad magic at byte offset 0");
    const auto version = r.get<std::uint16_t>();
    if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));

    TrainState st = init_state(config);
    st.step = static_cast<std::int64_t>(r.get<std::uint64_t>());
    st.epoch = r.get<std::uint32_t>();
    Fingerprint stored_fp;
    const auto fp_bytes = r.get_bytes(stored_fp.size());
    std::copy(fp_bytes.begin(), fp_bytes.end(), stored_fp.begin());
    const auto diff = fingerprint_differences(stored_fp, fingerprint(config));
    if (!diff.empty()) {
        std::string fields;
        for (const auto& d : diff) fields += (fields.empty() ? "" : ", ") + d;
        throw IncompatibleError("checkpoint was written under a different configuration; differing fields: " + fields);
    }
    const auto algorithm = r.get<std::uint8_t>();
    if (algorithm != Rng::kAlgorithmId) throw FormatError("checkpoint: unknown RNG algorithm " + std::to_string(algorithm));
    const auto seed = r.get<std::uint64_t>();
    const auto counter = r.get<std::uint64_t>();
    st.rng = Rng(seed, counter);

    const auto params = get_table(r);
    const auto first = get_table(r);
    const auto second = get_table(r);
    if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes at offset " + std::to_string(r.offset()));

    const std::size_t ng = st.generator.params.size();
    const std::size_t total = ng + st.discriminator.params.size();
    for (const auto* table : {&params, &first, &second}) {
        if (table->size() != total) throw IncompatibleError("checkpoint: parameter count differs from configuration");
    }
    for (std::size_t i = 0; i < total; ++i) {
        const bool is_g = i < ng;
        auto& entry = is_g ? st.generator.params[i] : st.discriminator.params[i - ng];
        auto& moments = is_g ? st.g_moments : st.d_moments;
        const std::size_t local = is_g ? i : i - ng;
        for (const auto* table : {&params, &first, &second}) {
            const auto& e = (*table)[i];
            if (e.name != entry.name || e.shape != entry.tensor.shape()) {
                throw IncompatibleError("checkpoint: entry '" + e.name + "' " + shape_string(e.shape) +
                                        " does not match '" + entry.name + "' " + shape_string(entry.tensor.shape()));
            }
        }
        entry.tensor.mutable_values() = params[i].values;
        moments.first[local] = first[i].values;
        moments.second[local] = second[i].values;
    }
    return st;
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
    write_file(path, encode_checkpoint(state));
}

TrainState load_checkpoint(const std::filesystem::path& path, const TrainConfig& config) {
    const auto bytes = read_file(path);
    try {
        return decode_checkpoint(bytes, config);
    } catch (const ChecksumError& e) {
        throw ChecksumError(path.string() + ": " + e.what());
    } catch (const IncompatibleError& e) {
        throw IncompatibleError(path.string() + ": " + e.what());
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace glyphforge
