#include "glyphforge/trainer.hpp"

#include <algorithm>
#include <cstdio>

#include "glyphforge/io.hpp"

namespace glyphforge {

TrainState init_state(const TrainConfig& config) {
    config.validate();
    TrainState st;
    st.config = config;
    st.generator = build_generator<float>(config.generator_config());
    st.discriminator = build_discriminator<float>(config.discriminator_config());
    st.g_moments = AdamMoments<float>::zeros_like(st.generator.params);
    st.d_moments = AdamMoments<float>::zeros_like(st.discriminator.params);
    st.rng = Rng(derive_seed(config.seed, 3));
    return st;
}

LossReport discriminator_step(TrainState& st, const Batch& batch, std::int64_t t) {
    auto& disc = st.discriminator;
    LossReport report;
    report.step = st.step + 1;
    report.batch_size = static_cast<Index>(batch.size());
    Tensor<float> fake;
    {
        NoGradGuard no_grad;
        fake = generate(st.generator, batch.source, Mode::train, st.rng, /*track_running=*/false).output;
    }
    disc.params.zero_grad();
    const auto real_scores = discriminate(disc, batch.source, batch.target, Mode::train);
    const auto fake_scores = discriminate(disc, batch.source, fake, Mode::train);
    try {
        auto [loss, parts] = discriminator_objective(real_scores, fake_scores);
        report.d_real = parts.d_real;
        report.d_fake = parts.d_fake;
        report.d_total = parts.d_total;
        backward(loss);
    } catch (const DivergenceError& e) {
        auto partial = e.report();
        partial.step = report.step;
        partial.batch_size = report.batch_size;
        throw DivergenceError(e.what(), partial);
    }
    adam_step(disc.params, st.d_moments, t, st.config.adam);
    disc.params.zero_grad();
    return report;
}

LossReport train_step(TrainState& st, const Batch& batch) {
    const TrainConfig& cfg = st.config;
    auto& gen = st.generator;
    auto& disc = st.discriminator;
    LossReport report;

    // (a) discriminator against fakes that carry no graph back into the generator.
    for (int k = 0; k < cfg.d_steps_per_batch; ++k) {
        report = discriminator_step(st, batch, st.step * cfg.d_steps_per_batch + k + 1);
    }

    // (b) generator on the composite objective; discriminator statistics stay frozen.
    gen.params.zero_grad();
    const auto out = generate(gen, batch.source, Mode::train, st.rng);
    const auto fake_scores = discriminate(disc, batch.source, out.output, Mode::train, /*track_running=*/false);
    const auto& real = cfg.constant_encodes == ConstantEncodes::target ? batch.target : batch.source;
    const auto real_code = encode(gen, real, Mode::train, /*track_running=*/false).bottleneck;
    const auto fake_code = encode(gen, out.output, Mode::train, /*track_running=*/false).bottleneck;
    GeneratorLossParts<float> parts{l1_loss(batch.target, out.output),
                                    constant_loss(real_code, fake_code, cfg.constant_reduction),
                                    cheat_loss(fake_scores, 1.0f), tv_loss(out.output)};
    try {
        auto [loss, g_report] = generator_objective(parts, cfg.weights);
        report.l1 = g_report.l1;
        report.constant = g_report.constant;
        report.cheat = g_report.cheat;
        report.tv = g_report.tv;
        report.g_total = g_report.g_total;
        backward(loss);
    } catch (const DivergenceError& e) {
        auto partial = e.report();
        partial.d_real = report.d_real;
        partial.d_fake = report.d_fake;
        partial.d_total = report.d_total;
        partial.step = report.step;
        partial.batch_size = report.batch_size;
        throw DivergenceError(e.what(), partial);
    }
    adam_step(gen.params, st.g_moments, st.step + 1, cfg.adam);
    gen.params.zero_grad();
    disc.params.zero_grad();
    ++st.step;
    return report;
}

std::uint64_t epoch_seed(std::uint64_t seed, std::int64_t epoch) {
    return derive_seed(derive_seed(seed, 4), static_cast<std::uint64_t>(epoch));
}

std::size_t steps_per_epoch(std::size_t samples, int batch_size) {
    return (samples + static_cast<std::size_t>(batch_size) - 1) / static_cast<std::size_t>(batch_size);
}

std::string format_log_line(const LossReport& r, std::int64_t epoch) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%lld\t%lld\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\n", static_cast<long long>(r.step),
                  static_cast<long long>(epoch), r.l1, r.constant, r.cheat, r.tv, r.g_total, r.d_total);
    return buf;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::int64_t step) {
    char name[64];
    std::snprintf(name, sizeof name, "checkpoint_%08lld.gckp", static_cast<long long>(step));
    return dir / name;
}

namespace {

std::filesystem::path grid_path(const std::filesystem::path& dir, std::int64_t step) {
    char name[64];
    std::snprintf(name, sizeof name, "samples_%08lld.pgm", static_cast<long long>(step));
    return dir / name;
}

}  // namespace

TrainSummary train(TrainState& st, const PackView& data, const TrainOutputs& outputs) {
    const TrainConfig& cfg = st.config;
    if (data.size() == 0) throw ParameterError("train: training view is empty");
    std::filesystem::create_directories(outputs.dir);
    const auto log_path = outputs.dir / "metrics.tsv";
    const auto spe = static_cast<std::int64_t>(steps_per_epoch(data.size(), cfg.batch_size));
    const std::int64_t total = spe * cfg.epochs;

    std::vector<PairedSample> preview;
    for (std::size_t i = 0; i < data.size() && preview.size() < static_cast<std::size_t>(cfg.sample_count); ++i) {
        preview.push_back(sample_at(data, i));
    }

    TrainSummary summary;
    auto checkpoint = [&](const std::filesystem::path& path) {
        save_checkpoint(st, path);
        summary.checkpoints.push_back(path);
    };
    if (st.step == 0) checkpoint(checkpoint_path(outputs.dir, 0));

    while (st.step < total) {
        st.epoch = st.step / spe;
        BatchIterator batches(data, static_cast<std::size_t>(cfg.batch_size), epoch_seed(cfg.seed, st.epoch));
        batches.skip(static_cast<std::size_t>(st.step % spe));
        while (auto batch = batches.next()) {
            const std::int64_t epoch = st.epoch;
            LossReport report;
            try {
                report = train_step(st, *batch);
            } catch (const DivergenceError& e) {
                char name[64];
                std::snprintf(name, sizeof name, "checkpoint_%08lld_diverged.gckp", static_cast<long long>(st.step));
                checkpoint(outputs.dir / name);
                write_text(outputs.dir / "divergence.txt",
                           std::string(e.what()) + "\n" + format_log_line(e.report(), epoch));
                throw;
            }
            st.epoch = st.step / spe;
            append_text(log_path, format_log_line(report, epoch));
            summary.reports.push_back(report);
            if (outputs.on_step) outputs.on_step(report);
            if (cfg.checkpoint_interval > 0 && st.step % cfg.checkpoint_interval == 0) {
                checkpoint(checkpoint_path(outputs.dir, st.step));
            }
            if (cfg.sample_interval > 0 && st.step % cfg.sample_interval == 0) {
                const auto path = grid_path(outputs.dir, st.step);
                emit_samples(st.generator, preview, path, cfg.sample_separator);
                summary.grids.push_back(path);
            }
        }
    }
    const auto last = checkpoint_path(outputs.dir, st.step);
    if (summary.checkpoints.empty() || summary.checkpoints.back() != last) checkpoint(last);
    return summary;
}

Grid render_samples(const Generator<float>& generator, std::span<const PairedSample> samples, int separator) {
    if (samples.empty()) throw ParameterError("render_samples: need at least one sample");
    if (separator < 0) throw ParameterError("render_samples: separator must be >= 0");
    const int side = static_cast<int>(generator.config.side);
    std::vector<PairedSample> sources;
    for (const auto& s : samples) sources.push_back({s.source, s.source, s.codepoint});
    const Batch batch = make_batch(sources);

    Tensor<float> generated;
    {
        NoGradGuard no_grad;
        Rng unused;
        generated = generate(generator, batch.source, Mode::eval, unused).output;
    }

    Grid grid;
    const auto rows = static_cast<int>(samples.size());
    grid.width = 3 * side + 2 * separator;
    grid.height = rows * side + (rows - 1) * separator;
    grid.pixels.assign(static_cast<std::size_t>(grid.width) * static_cast<std::size_t>(grid.height), 128);
    const auto plane = static_cast<Index>(side) * side;
    auto blit = [&](int row, int col, const float* values) {
        const int x0 = col * (side + separator);
        const int y0 = row * (side + separator);
        for (int y = 0; y < side; ++y) {
            for (int x = 0; x < side; ++x) {
                const std::uint8_t v = values ? denormalize_pixel(values[y * side + x]) : 255;
                grid.pixels[static_cast<std::size_t>(y0 + y) * static_cast<std::size_t>(grid.width) +
                            static_cast<std::size_t>(x0 + x)] = v;
            }
        }
    };
    for (int r = 0; r < rows; ++r) {
        const auto& s = samples[static_cast<std::size_t>(r)];
        blit(r, 0, s.source.data());
        blit(r, 1, generated.data() + r * plane);
        blit(r, 2, s.target.defined() ? s.target.data() : nullptr);
    }
    return grid;
}

Grid emit_samples(const Generator<float>& generator, std::span<const PairedSample> samples,
                  const std::filesystem::path& path, int separator) {
    Grid grid = render_samples(generator, samples, separator);
    write_pgm(path, grid.width, grid.height, grid.pixels);
    return grid;
}

}  // namespace glyphforge
