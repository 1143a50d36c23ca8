#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "glyphforge/adam.hpp"
#include "glyphforge/discriminator.hpp"
#include "glyphforge/generator.hpp"
#include "glyphforge/glyphdata.hpp"
#include "glyphforge/objectives.hpp"
#include "glyphforge/rng.hpp"

namespace glyphforge {

/// Which real image the constant loss encodes next to the generated one.
enum class ConstantEncodes { target, source };

struct TrainConfig {
    int side = 256;

    Index g_base_channels = 64;
    Index g_channel_cap = 512;
    Downsampling g_downsampling = Downsampling::strided_conv;
    bool g_batchnorm = true;
    double g_dropout = 0.5;
    int g_dropout_levels = 3;

    int d_levels = 3;
    Index d_base_channels = 64;
    Index d_channel_cap = 512;
    bool d_batchnorm = true;

    double leaky_slope = 0.2;
    double norm_momentum = 0.9;
    double norm_epsilon = 1e-5;

    LossWeights weights;
    ConstantEncodes constant_encodes = ConstantEncodes::target;
    BatchReduction constant_reduction = BatchReduction::mean;

    AdamOptions adam;
    int d_steps_per_batch = 1;

    int batch_size = 16;
    int epochs = 40;
    std::uint64_t seed = 0;
    double holdout_fraction = 0.0;

    std::int64_t checkpoint_interval = 1000;  // steps; 0 disables periodic checkpoints
    std::int64_t sample_interval = 1000;      // steps; 0 disables sample grids
    int sample_count = 8;
    int sample_separator = 2;

    bool deterministic = true;

    void validate() const;
    GeneratorConfig generator_config() const;
    DiscriminatorConfig discriminator_config() const;
};

/// Strict parse: unknown keys and ill-typed values raise ConfigError.
TrainConfig config_from_json(const nlohmann::json& j);
/// Applies the keys present in `j` on top of `base`.
TrainConfig merge_config(TrainConfig base, const nlohmann::json& j);
nlohmann::json config_to_json(const TrainConfig& c);

/// 32-byte configuration fingerprint: eight 4-byte slots, each the leading bytes of
/// SHA-256 over one canonicalized field group, so mismatches can be attributed.
using Fingerprint = std::array<std::uint8_t, 32>;
Fingerprint fingerprint(const TrainConfig& c);
/// Field groups whose slots differ between two fingerprints.
std::vector<std::string> fingerprint_differences(const Fingerprint& a, const Fingerprint& b);

struct TrainState {
    TrainConfig config;
    Generator<float> generator;
    Discriminator<float> discriminator;
    AdamMoments<float> g_moments;
    AdamMoments<float> d_moments;
    std::int64_t step = 0;   // completed train steps
    std::int64_t epoch = 0;  // epoch the next step belongs to
    Rng rng;                 // drives dropout
};

TrainState init_state(const TrainConfig& config);

/// One discriminator update against detached fakes of the current generator, using
/// Adam step count `t`. Leaves the generator and state.step untouched.
LossReport discriminator_step(TrainState& state, const Batch& batch, std::int64_t t);

/// One alternating update: phase (a) steps the discriminator against detached fakes,
/// phase (b) steps the generator on the composite objective.
LossReport train_step(TrainState& state, const Batch& batch);

std::uint64_t epoch_seed(std::uint64_t seed, std::int64_t epoch);
std::size_t steps_per_epoch(std::size_t samples, int batch_size);

struct TrainOutputs {
    std::filesystem::path dir;
    std::function<void(const LossReport&)> on_step;  // optional observer
};

struct TrainSummary {
    std::vector<LossReport> reports;
    std::vector<std::filesystem::path> checkpoints;
    std::vector<std::filesystem::path> grids;
};

/// Runs train_step until `config.epochs` epochs are complete, starting from state.step.
/// Writes a checkpoint before the first update of a fresh state, then every
/// checkpoint_interval steps and once more at the end if the last step was not saved;
/// appends one metrics.tsv line per step; writes sample
/// grids every sample_interval steps. On divergence a final checkpoint and
/// divergence.txt are written before the error propagates.
TrainSummary train(TrainState& state, const PackView& data, const TrainOutputs& outputs);

std::string format_log_line(const LossReport& r, std::int64_t epoch);
std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::int64_t step);

inline constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const TrainState& state);
TrainState decode_checkpoint(std::span<const std::uint8_t> bytes, const TrainConfig& config);
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path, const TrainConfig& config);

/// Grayscale raster of rows [source | generated | target] separated by gray bars.
struct Grid {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;
};

/// Eval-mode generation for each sample. A sample whose target is undefined gets a blank tile.
Grid render_samples(const Generator<float>& generator, std::span<const PairedSample> samples, int separator);
Grid emit_samples(const Generator<float>& generator, std::span<const PairedSample> samples,
                  const std::filesystem::path& path, int separator);

}  // namespace glyphforge
