#include "glyphforge/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <memory>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "glyphforge/io.hpp"
#include "glyphforge/metrics.hpp"
#include "glyphforge/trainer.hpp"

namespace glyphforge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public Error {
public:
    using Error::Error;
};

bool deterministic_env() {
    const char* v = std::getenv("GLYPHFORGE_DETERMINISTIC");
    return v != nullptr && std::string(v) == "1";
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

json read_json(const fs::path& path) {
    const auto bytes = read_file(path);
    try {
        return json::parse(bytes.begin(), bytes.end());
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

/// A config file is either a bare TrainConfig document or a run manifest.
json config_document(const json& doc) {
    if (doc.is_object() && doc.contains("tool_version") && doc.contains("config")) return doc["config"];
    return doc;
}

/// Flags the user may set on top of the config file; unset flags leave the file's values.
struct Overrides {
    std::optional<int> epochs, batch_size;
    std::optional<std::uint64_t> seed;
    std::optional<double> learning_rate;
    std::optional<std::int64_t> checkpoint_interval, sample_interval;

    void attach(CLI::App* cmd) {
        cmd->add_option("--epochs", epochs, "Override epochs");
        cmd->add_option("--batch-size", batch_size, "Override batch size");
        cmd->add_option("--seed", seed, "Override seed");
        cmd->add_option("--learning-rate", learning_rate, "Override Adam learning rate");
        cmd->add_option("--checkpoint-interval", checkpoint_interval, "Override checkpoint interval (steps)");
        cmd->add_option("--sample-interval", sample_interval, "Override sample-grid interval (steps)");
    }

    json patch() const {
        json p = json::object();
        if (epochs) p["epochs"] = *epochs;
        if (batch_size) p["batch_size"] = *batch_size;
        if (seed) p["seed"] = *seed;
        if (learning_rate) p["optimizer"]["learning_rate"] = *learning_rate;
        if (checkpoint_interval) p["checkpoint_interval"] = *checkpoint_interval;
        if (sample_interval) p["sample_interval"] = *sample_interval;
        if (deterministic_env()) p["deterministic"] = true;
        return p;
    }
};

TrainConfig resolve_config(const std::string& config_path, const fs::path& near_checkpoint, const Overrides& overrides) {
    json doc;
    if (!config_path.empty()) {
        doc = config_document(read_json(config_path));
    } else {
        const auto manifest = near_checkpoint.parent_path() / "manifest.json";
        if (!fs::exists(manifest)) {
            throw UsageError("no --config given and no manifest.json next to " + near_checkpoint.string());
        }
        doc = config_document(read_json(manifest));
    }
    TrainConfig c = config_from_json(doc);
    return merge_config(c, overrides.patch());
}

void write_manifest(const fs::path& dir, const std::string& command, const TrainConfig& config, const json& inputs) {
    const json manifest{{"tool_version", kToolVersion},
                        {"command", command},
                        {"started_at", utc_timestamp()},
                        {"config", config_to_json(config)},
                        {"inputs", inputs},
                        {"output_dir", dir.string()}};
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::shared_ptr<const Pack> open_pack(const std::string& path) {
    if (path.empty()) throw UsageError("--pack is required");
    if (!fs::exists(path)) throw UsageError("pack file not found: " + path);
    return std::make_shared<const Pack>(Pack::open(path));
}

void run_training(TrainState& state, const std::shared_ptr<const Pack>& pack, const fs::path& out_dir,
                  std::ostream& out) {
    if (pack->side() != state.config.side) {
        throw IncompatibleError("pack side " + std::to_string(pack->side()) + " != configured side " +
                                std::to_string(state.config.side));
    }
    const auto [train_view, holdout] = split(PackView::all(pack), state.config.holdout_fraction, state.config.seed);
    const auto summary = train(state, train_view, {out_dir, {}});
    out << "trained " << summary.reports.size() << " steps on " << train_view.size() << " samples (" << holdout.size()
        << " held out); step " << state.step << "\n";
    if (!summary.reports.empty()) out << format_log_line(summary.reports.back(), state.epoch);
}

std::vector<std::uint32_t> parse_codepoint_list(const std::string& text) {
    std::vector<std::uint32_t> cps;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        if (item.size() > 2 && (item.starts_with("U+") || item.starts_with("u+"))) item = item.substr(2);
        const auto cp = parse_codepoint_hex(item);
        if (!cp) throw UsageError("not a hex codepoint: '" + item + "'");
        cps.push_back(*cp);
    }
    return cps;
}

int cmd_prepare(const std::string& source, const std::string& target, std::optional<int> side, double min_ink,
                const std::string& out_path, std::ostream& out, std::ostream& err) {
    ScanOptions options;
    options.side = side;
    options.min_ink_fraction = min_ink;
    const auto scan = scan_pairs(source, target, options);

    std::string report = "codepoint\treason\n";
    for (const auto& r : scan.rejected) report += codepoint_hex(r.codepoint) + "\t" + to_string(r.reason) + "\n";
    fs::path report_path = out_path;
    report_path += ".rejected.tsv";
    if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());
    write_text(report_path, report);

    out << "valid " << scan.valid.size() << " rejected " << scan.rejected.size() << "\n";
    if (scan.valid.empty()) {
        err << "error: no valid glyph pairs between " << source << " and " << target << "\n";
        return kExitUsage;
    }
    auto pairs = load_pairs(source, target, scan.valid);
    const int pack_side = side.value_or(pairs.front().source.width);
    const auto summary = pack(std::move(pairs), pack_side, out_path);
    out << "wrote " << out_path << " (" << summary.count << " pairs, side " << summary.side << ", " << summary.bytes
        << " bytes)\n";
    return kExitOk;
}

int cmd_sample(const std::string& checkpoint, const std::string& config_path, const std::string& pack_path,
               const std::string& glyph_dir, const std::string& target_dir, const std::string& codepoints,
               const std::string& out_path, std::ostream& out, std::ostream& err) {
    if (pack_path.empty() == glyph_dir.empty()) throw UsageError("give exactly one of --pack or --glyph-dir");
    const TrainConfig config = resolve_config(config_path, checkpoint, {});
    const TrainState state = load_checkpoint(checkpoint, config);

    std::vector<PairedSample> rows;
    std::vector<std::uint32_t> skipped;
    if (!pack_path.empty()) {
        const auto pack = open_pack(pack_path);
        const auto view = PackView::all(pack);
        const auto wanted = codepoints.empty() ? pack->codepoints() : parse_codepoint_list(codepoints);
        for (std::uint32_t cp : wanted) {
            const auto at = pack->find(cp);
            if (!at) {
                skipped.push_back(cp);
                continue;
            }
            rows.push_back(sample_at(view, *at));
        }
    } else {
        std::vector<std::uint32_t> wanted;
        if (codepoints.empty()) {
            std::error_code ec;
            for (const auto& entry : fs::directory_iterator(glyph_dir, ec)) {
                if (entry.path().extension() != ".pgm") continue;
                if (auto cp = parse_codepoint_hex(entry.path().stem().string())) wanted.push_back(*cp);
            }
            if (ec) throw IoError("cannot read directory " + glyph_dir + ": " + ec.message());
            std::sort(wanted.begin(), wanted.end());
        } else {
            wanted = parse_codepoint_list(codepoints);
        }
        for (std::uint32_t cp : wanted) {
            const auto name = codepoint_hex(cp) + ".pgm";
            const fs::path src = fs::path(glyph_dir) / name;
            if (!fs::exists(src)) {
                skipped.push_back(cp);
                continue;
            }
            const auto bmp = load_bitmap(src);
            if (bmp.width != config.side || bmp.height != config.side) {
                skipped.push_back(cp);
                continue;
            }
            PairedSample s{normalize<float>(bmp), {}, cp};
            if (!target_dir.empty() && fs::exists(fs::path(target_dir) / name)) {
                const auto tgt = load_bitmap(fs::path(target_dir) / name);
                if (tgt.width == bmp.width && tgt.height == bmp.height) s.target = normalize<float>(tgt);
            }
            rows.push_back(std::move(s));
        }
    }

    if (!skipped.empty()) {
        std::string report;
        for (std::uint32_t cp : skipped) report += codepoint_hex(cp) + "\n";
        fs::path skip_path = out_path;
        skip_path += ".skipped.txt";
        write_text(skip_path, report);
        err << "skipped " << skipped.size() << " codepoint(s) without a source glyph; see " << skip_path.string() << "\n";
    }
    if (rows.empty()) {
        err << "error: nothing to sample\n";
        return kExitData;
    }
    if (fs::path(out_path).has_parent_path()) fs::create_directories(fs::path(out_path).parent_path());
    const auto grid = emit_samples(state.generator, rows, out_path, state.config.sample_separator);
    out << "wrote " << out_path << " (" << rows.size() << " rows, " << grid.width << "x" << grid.height << ")\n";
    return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& config_path, const std::string& pack_path,
             bool whole_pack, const std::string& out_prefix, std::ostream& out) {
    const TrainConfig config = resolve_config(config_path, checkpoint, {});
    const TrainState state = load_checkpoint(checkpoint, config);
    const auto pack = open_pack(pack_path);
    PackView view = PackView::all(pack);
    if (!whole_pack && config.holdout_fraction > 0.0) view = split(view, config.holdout_fraction, config.seed).second;
    const auto report = evaluate(state.generator, view);
    if (fs::path(out_prefix).has_parent_path()) fs::create_directories(fs::path(out_prefix).parent_path());
    write_text(out_prefix + ".tsv", report_tsv(report));
    write_text(out_prefix + ".json", report_json(report).dump(2) + "\n");
    char line[160];
    std::snprintf(line, sizeof line, "evaluated %zu glyphs: l1 mean %.6f median %.6f worst %.6f\n", report.count,
                  report.l1.mean, report.l1.median, report.l1.worst);
    out << line;
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Paired glyph style transfer: prepare packs, train, resume, sample and evaluate", "glyphforge"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    std::string source, target, out_path, pack_path, config_path, out_dir, checkpoint, manifest_path, glyph_dir,
        target_dir, codepoints;
    std::optional<int> side;
    double min_ink = 0.005;
    bool whole_pack = false;
    Overrides overrides;

    auto* prepare = app.add_subcommand("prepare", "Pair, validate and pack glyph bitmaps");
    prepare->add_option("--source", source, "Directory of source-font <HEX>.pgm files")->required();
    prepare->add_option("--target", target, "Directory of target-style <HEX>.pgm files")->required();
    prepare->add_option("--side", side, "Required glyph side length");
    prepare->add_option("--min-ink", min_ink, "Minimum fraction of ink pixels");
    prepare->add_option("--out", out_path, "Output pack file")->required();

    auto* train_cmd = app.add_subcommand("train", "Train from scratch");
    train_cmd->add_option("--pack", pack_path, "Pack file");
    train_cmd->add_option("--config", config_path, "TrainConfig JSON");
    train_cmd->add_option("--manifest", manifest_path, "Re-run from a manifest.json");
    train_cmd->add_option("--out-dir", out_dir, "Run directory")->required();
    overrides.attach(train_cmd);

    auto* resume = app.add_subcommand("resume", "Continue training from a checkpoint");
    resume->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    resume->add_option("--pack", pack_path, "Pack file");
    resume->add_option("--config", config_path, "TrainConfig JSON (default: manifest next to the checkpoint)");
    resume->add_option("--out-dir", out_dir, "Run directory")->required();
    overrides.attach(resume);

    auto* sample = app.add_subcommand("sample", "Render [source | generated | target] grids");
    sample->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    sample->add_option("--config", config_path, "TrainConfig JSON (default: manifest next to the checkpoint)");
    sample->add_option("--pack", pack_path, "Pack file");
    sample->add_option("--glyph-dir", glyph_dir, "Directory of source <HEX>.pgm files");
    sample->add_option("--target-dir", target_dir, "Optional directory of target <HEX>.pgm files");
    sample->add_option("--codepoints", codepoints, "Comma-separated hex codepoints (default: all)");
    sample->add_option("--out", out_path, "Output grid .pgm")->required();

    auto* eval = app.add_subcommand("eval", "Score a checkpoint on held-out glyphs");
    eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    eval->add_option("--config", config_path, "TrainConfig JSON (default: manifest next to the checkpoint)");
    eval->add_option("--pack", pack_path, "Pack file")->required();
    eval->add_flag("--all", whole_pack, "Score the whole pack instead of the holdout split");
    eval->add_option("--out", out_path, "Output prefix for .tsv and .json")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForVersion&) {
        out << kToolVersion << "\n";
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n";
        for (const auto* sub : app.get_subcommands()) err << sub->help();
        return kExitUsage;
    }

    try {
        if (prepare->parsed()) return cmd_prepare(source, target, side, min_ink, out_path, out, err);

        if (train_cmd->parsed()) {
            json inputs;
            json doc;
            if (!manifest_path.empty()) {
                const json manifest = read_json(manifest_path);
                doc = config_document(manifest);
                if (pack_path.empty() && manifest.contains("inputs") && manifest["inputs"].contains("pack")) {
                    pack_path = manifest["inputs"]["pack"].get<std::string>();
                }
            } else if (!config_path.empty()) {
                doc = config_document(read_json(config_path));
            } else {
                throw UsageError("train needs --config or --manifest");
            }
            const auto pack = open_pack(pack_path);
            const TrainConfig config = merge_config(config_from_json(doc), overrides.patch());
            fs::create_directories(out_dir);
            write_manifest(out_dir, "train", config, {{"pack", pack_path}});
            TrainState state = init_state(config);
            run_training(state, pack, out_dir, out);
            return kExitOk;
        }

        if (resume->parsed()) {
            const TrainConfig config = resolve_config(config_path, checkpoint, overrides);
            if (pack_path.empty()) {
                const auto manifest = fs::path(checkpoint).parent_path() / "manifest.json";
                if (fs::exists(manifest)) {
                    const json m = read_json(manifest);
                    if (m.contains("inputs") && m["inputs"].contains("pack")) pack_path = m["inputs"]["pack"];
                }
            }
            const auto pack = open_pack(pack_path);
            TrainState state = load_checkpoint(checkpoint, config);
            fs::create_directories(out_dir);
            if (!fs::exists(fs::path(out_dir) / "manifest.json")) {
                write_manifest(out_dir, "resume", config, {{"pack", pack_path}, {"checkpoint", checkpoint}});
            }
            run_training(state, pack, out_dir, out);
            return kExitOk;
        }

        if (sample->parsed()) {
            return cmd_sample(checkpoint, config_path, pack_path, glyph_dir, target_dir, codepoints, out_path, out, err);
        }
        if (eval->parsed()) return cmd_eval(checkpoint, config_path, pack_path, whole_pack, out_path, out);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const IncompatibleError& e) {
        err << "incompatible: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ParameterError& e) {
        err << "parameter error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DivergenceError& e) {
        err << "training diverged: " << e.what() << "\n";
        return kExitData;
    } catch (const ChecksumError& e) {
        err << "checksum error: " << e.what() << "\n";
        return kExitData;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "I/O error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}

}  // namespace glyphforge
