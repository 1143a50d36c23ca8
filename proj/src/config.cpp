#include <openssl/evp.h>

#include <bit>
#include <cmath>
#include <cstring>

#include "glyphforge/trainer.hpp"

namespace glyphforge {

using nlohmann::json;

namespace {

const char* to_string(Downsampling d) { return d == Downsampling::strided_conv ? "strided_conv" : "maxpool_after_conv"; }
const char* to_string(ConstantEncodes e) { return e == ConstantEncodes::target ? "target" : "source"; }
const char* to_string(BatchReduction r) { return r == BatchReduction::mean ? "mean" : "sum"; }

/// Rejects keys of `given` that do not appear in `schema`, recursing into objects.
void check_keys(const json& given, const json& schema, const std::string& where) {
    if (!given.is_object()) throw ConfigError("config" + where + " must be a JSON object");
    for (const auto& [key, value] : given.items()) {
        const auto it = schema.find(key);
        if (it == schema.end()) throw ConfigError("unknown config key '" + where + (where.empty() ? "" : ".") + key + "'");
        if (it->is_object()) check_keys(value, *it, where + (where.empty() ? "" : ".") + key);
    }
}

template <typename T>
T read(const json& j, const char* key) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

template <typename Enum>
Enum read_enum(const json& j, const char* key, std::initializer_list<std::pair<const char*, Enum>> options) {
    const auto text = read<std::string>(j, key);
    for (const auto& [name, value] : options) {
        if (text == name) return value;
    }
    throw ConfigError(std::string("config key '") + key + "' has unsupported value '" + text + "'");
}

}  // namespace

json config_to_json(const TrainConfig& c) {
    return json{
        {"side", c.side},
        {"generator",
         {{"base_channels", c.g_base_channels},
          {"channel_cap", c.g_channel_cap},
          {"downsampling", to_string(c.g_downsampling)},
          {"batchnorm", c.g_batchnorm},
          {"dropout", c.g_dropout},
          {"dropout_levels", c.g_dropout_levels}}},
        {"discriminator",
         {{"levels", c.d_levels},
          {"base_channels", c.d_base_channels},
          {"channel_cap", c.d_channel_cap},
          {"batchnorm", c.d_batchnorm}}},
        {"leaky_slope", c.leaky_slope},
        {"normalization", {{"momentum", c.norm_momentum}, {"epsilon", c.norm_epsilon}}},
        {"loss_weights",
         {{"l1", c.weights.l1}, {"constant", c.weights.constant}, {"cheat", c.weights.cheat}, {"tv", c.weights.tv}}},
        {"constant_loss", {{"encodes", to_string(c.constant_encodes)}, {"reduction", to_string(c.constant_reduction)}}},
        {"optimizer",
         {{"learning_rate", c.adam.learning_rate},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"epsilon", c.adam.epsilon},
          {"d_steps_per_batch", c.d_steps_per_batch}}},
        {"batch_size", c.batch_size},
        {"epochs", c.epochs},
        {"seed", c.seed},
        {"holdout_fraction", c.holdout_fraction},
        {"checkpoint_interval", c.checkpoint_interval},
        {"sample_interval", c.sample_interval},
        {"sample_count", c.sample_count},
        {"sample_separator", c.sample_separator},
        {"deterministic", c.deterministic},
    };
}

TrainConfig merge_config(TrainConfig base, const json& patch) {
    json full = config_to_json(base);
    check_keys(patch, full, "");
    full.merge_patch(patch);

    TrainConfig c;
    c.side = read<int>(full, "side");
    const auto& g = full["generator"];
    c.g_base_channels = read<Index>(g, "base_channels");
    c.g_channel_cap = read<Index>(g, "channel_cap");
    c.g_downsampling = read_enum<Downsampling>(
        g, "downsampling",
        {{"strided_conv", Downsampling::strided_conv}, {"maxpool_after_conv", Downsampling::maxpool_after_conv}});
    c.g_batchnorm = read<bool>(g, "batchnorm");
    c.g_dropout = read<double>(g, "dropout");
    c.g_dropout_levels = read<int>(g, "dropout_levels");
    const auto& d = full["discriminator"];
    c.d_levels = read<int>(d, "levels");
    c.d_base_channels = read<Index>(d, "base_channels");
    c.d_channel_cap = read<Index>(d, "channel_cap");
    c.d_batchnorm = read<bool>(d, "batchnorm");
    c.leaky_slope = read<double>(full, "leaky_slope");
    c.norm_momentum = read<double>(full["normalization"], "momentum");
    c.norm_epsilon = read<double>(full["normalization"], "epsilon");
    const auto& w = full["loss_weights"];
    c.weights = {read<double>(w, "l1"), read<double>(w, "constant"), read<double>(w, "cheat"), read<double>(w, "tv")};
    const auto& cl = full["constant_loss"];
    c.constant_encodes = read_enum<ConstantEncodes>(
        cl, "encodes", {{"target", ConstantEncodes::target}, {"source", ConstantEncodes::source}});
    c.constant_reduction =
        read_enum<BatchReduction>(cl, "reduction", {{"mean", BatchReduction::mean}, {"sum", BatchReduction::sum}});
    const auto& o = full["optimizer"];
    c.adam = {read<double>(o, "learning_rate"), read<double>(o, "beta1"), read<double>(o, "beta2"),
              read<double>(o, "epsilon")};
    c.d_steps_per_batch = read<int>(o, "d_steps_per_batch");
    c.batch_size = read<int>(full, "batch_size");
    c.epochs = read<int>(full, "epochs");
    c.seed = read<std::uint64_t>(full, "seed");
    c.holdout_fraction = read<double>(full, "holdout_fraction");
    c.checkpoint_interval = read<std::int64_t>(full, "checkpoint_interval");
    c.sample_interval = read<std::int64_t>(full, "sample_interval");
    c.sample_count = read<int>(full, "sample_count");
    c.sample_separator = read<int>(full, "sample_separator");
    c.deterministic = read<bool>(full, "deterministic");
    c.validate();
    return c;
}

TrainConfig config_from_json(const json& j) { return merge_config(TrainConfig{}, j); }

void TrainConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError(what);
    };
    require(side >= 8 && std::has_single_bit(static_cast<unsigned>(side)), "side must be a power of two >= 8");
    require(adam.learning_rate > 0.0 && std::isfinite(adam.learning_rate), "learning_rate must be > 0");
    require(adam.beta1 >= 0.0 && adam.beta1 < 1.0, "beta1 must lie in [0, 1)");
    require(adam.beta2 >= 0.0 && adam.beta2 < 1.0, "beta2 must lie in [0, 1)");
    require(adam.epsilon > 0.0, "optimizer epsilon must be > 0");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(epochs >= 1, "epochs must be >= 1");
    require(d_steps_per_batch >= 1, "d_steps_per_batch must be >= 1");
    require(holdout_fraction >= 0.0 && holdout_fraction < 1.0, "holdout_fraction must lie in [0, 1)");
    require(checkpoint_interval >= 0 && sample_interval >= 0, "intervals must be >= 0");
    require(sample_count >= 1 && sample_separator >= 0, "sample_count >= 1 and sample_separator >= 0 required");
    require(norm_momentum >= 0.0 && norm_momentum < 1.0 && norm_epsilon > 0.0, "invalid normalization settings");
    for (double wv : {weights.l1, weights.constant, weights.cheat, weights.tv}) {
        require(wv >= 0.0 && std::isfinite(wv), "loss weights must be finite and non-negative");
    }
    glyphforge::validate(generator_config());
    glyphforge::validate(discriminator_config());
}

GeneratorConfig TrainConfig::generator_config() const {
    GeneratorConfig g;
    g.side = side;
    g.depth = std::countr_zero(static_cast<unsigned>(side));
    g.base_channels = g_base_channels;
    g.channel_cap = g_channel_cap;
    g.seed = derive_seed(seed, 1);
    g.downsampling = g_downsampling;
    g.batchnorm = g_batchnorm;
    g.dropout = g_dropout;
    g.dropout_levels = g_dropout_levels;
    g.leaky_slope = leaky_slope;
    g.norm.momentum = norm_momentum;
    g.norm.epsilon = norm_epsilon;
    return g;
}

DiscriminatorConfig TrainConfig::discriminator_config() const {
    DiscriminatorConfig d;
    d.side = side;
    d.levels = d_levels;
    d.base_channels = d_base_channels;
    d.channel_cap = d_channel_cap;
    d.seed = derive_seed(seed, 2);
    d.batchnorm = d_batchnorm;
    d.leaky_slope = leaky_slope;
    d.norm.momentum = norm_momentum;
    d.norm.epsilon = norm_epsilon;
    return d;
}

// ---------------------------------------------------------------------------- fingerprint

namespace {

// Slot order is part of the checkpoint format. Epoch count, intervals and the
// deterministic flag are excluded so a run can be extended or resumed differently.
const std::array<const char*, 8> kFingerprintGroups = {
    "side", "generator", "discriminator", "loss", "optimizer", "batch_size", "seed", "normalization"};

json fingerprint_group(const json& full, std::size_t slot) {
    switch (slot) {
        case 3: return json{{"loss_weights", full["loss_weights"]}, {"constant_loss", full["constant_loss"]}};
        case 7:
            return json{{"leaky_slope", full["leaky_slope"]},
                        {"normalization", full["normalization"]},
                        {"holdout_fraction", full["holdout_fraction"]}};
        default: return full[kFingerprintGroups[slot]];
    }
}

std::array<std::uint8_t, 32> sha256(const std::string& text) {
    std::array<std::uint8_t, 32> digest{};
    unsigned int len = 0;
    if (EVP_Digest(text.data(), text.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1 || len != 32) {
        throw Error("SHA-256 computation failed");
    }
    return digest;
}

}  // namespace

Fingerprint fingerprint(const TrainConfig& c) {
    const json full = config_to_json(c);
    Fingerprint fp{};
    for (std::size_t slot = 0; slot < kFingerprintGroups.size(); ++slot) {
        const auto digest = sha256(fingerprint_group(full, slot).dump());
        std::memcpy(fp.data() + 4 * slot, digest.data(), 4);
    }
    return fp;
}

std::vector<std::string> fingerprint_differences(const Fingerprint& a, const Fingerprint& b) {
    std::vector<std::string> diff;
    for (std::size_t slot = 0; slot < kFingerprintGroups.size(); ++slot) {
        if (std::memcmp(a.data() + 4 * slot, b.data() + 4 * slot, 4) != 0) diff.emplace_back(kFingerprintGroups[slot]);
    }
    return diff;
}

}  // namespace glyphforge
