// recongs: encode, decode, bench, synthesize and inspect anchor-motion streams.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "recon/codec.hpp"
#include "recon/errors.hpp"
#include "recon/ply.hpp"
#include "recon/session.hpp"
#include "recon/synth.hpp"

namespace fs = std::filesystem;
using namespace recon;

namespace {

enum Exit { kOk = 0, kIo = 1, kConfig = 2, kNumerical = 3 };

struct ConfigFlags {
    int levels = 3;
    std::string fraction = "1/24";
    int level_ratio = 3;
    int reconfig_period = 10;
    std::string quantization = "half16";
    int phase1_steps = 100;
    int phase2_steps = 100;
    double densify_threshold = 0.05;
    std::string mode = "additive";
    std::vector<std::uint32_t> anchor_counts;
    double learning_rate = FitConfig{}.learning_rate;
    double momentum = FitConfig{}.momentum;
    bool coarse_to_fine = false;
    std::string supervision = "absolute";

    StreamConfig stream() const {
        StreamConfig c;
        c.levels = levels;
        const auto slash = fraction.find('/');
        try {
            if (slash == std::string::npos) {
                c.finest_fraction_num = static_cast<std::uint32_t>(std::stoul(fraction));
                c.finest_fraction_den = 1;
            } else {
                c.finest_fraction_num = static_cast<std::uint32_t>(std::stoul(fraction.substr(0, slash)));
                c.finest_fraction_den = static_cast<std::uint32_t>(std::stoul(fraction.substr(slash + 1)));
            }
        } catch (const std::exception&) {
            throw ConfigError("--fraction must look like 1/24");
        }
        c.level_ratio = level_ratio;
        c.reconfig_period = reconfig_period;
        c.quantization = parse_quantization(quantization);
        c.phase1_steps = phase1_steps;
        c.phase2_steps = phase2_steps;
        c.densify_threshold = densify_threshold;
        c.composition_mode = parse_composition_mode(mode);
        c.anchor_counts = anchor_counts;
        validate_config(c);
        return c;
    }

    FitConfig fit() const {
        FitConfig f;
        f.learning_rate = learning_rate;
        f.momentum = momentum;
        f.coarse_to_fine = coarse_to_fine;
        return f;
    }
};

void add_config_flags(CLI::App* app, ConfigFlags& f) {
    app->add_option("--levels", f.levels, "Hierarchy levels L (1-4)")->capture_default_str();
    app->add_option("--fraction", f.fraction, "Finest-level anchor fraction, as num/den")->capture_default_str();
    app->add_option("--level-ratio", f.level_ratio, "Anchor ratio between adjacent levels")->capture_default_str();
    app->add_option("--reconfig-period", f.reconfig_period, "Rebuild the hierarchy every T frames")
        ->capture_default_str();
    app->add_option("--quantization", f.quantization, "full32 | half16 | fixed16")->capture_default_str();
    app->add_option("--phase1-steps", f.phase1_steps, "Deformation fitting iterations")->capture_default_str();
    app->add_option("--phase2-steps", f.phase2_steps, "Densification iterations (recorded only)")
        ->capture_default_str();
    app->add_option("--densify-threshold", f.densify_threshold, "Residual that triggers densification")
        ->capture_default_str();
    app->add_option("--mode", f.mode, "Composition mode: additive | pivot")->capture_default_str();
    app->add_option("--anchor-counts", f.anchor_counts, "Explicit anchor targets per level, coarsest first");
    app->add_option("--lr", f.learning_rate, "Fitting step size")->capture_default_str();
    app->add_option("--momentum", f.momentum, "Fitting momentum")->capture_default_str();
    app->add_flag("--coarse-to-fine", f.coarse_to_fine, "Unlock levels one at a time during fitting");
    app->add_option("--supervision", f.supervision, "Synthetic targets: absolute | flow")->capture_default_str();
}

struct SourceFlags {
    std::string synth;
    std::string preset;
    int frames = 0;
    std::uint64_t seed = 0;
};

void add_source_flags(CLI::App* app, SourceFlags& s, CLI::Option*& synth_opt, CLI::Option*& preset_opt) {
    synth_opt = app->add_option("--synth", s.synth, "Scene spec file (JSON)");
    preset_opt = app->add_option("--preset", s.preset, "Bundled scene: static, translation, two_body, drift");
    app->add_option("--frames", s.frames, "Override the scene frame count");
    app->add_option("--seed", s.seed, "Seed for gaussian attributes")->capture_default_str();
}

SceneSpec scene_from(const SourceFlags& s) {
    SceneSpec spec = s.synth.empty() ? preset_scene(s.preset) : load_scene_spec(s.synth);
    if (s.frames > 0) spec.frames = s.frames;
    return spec;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw IoError("failed writing '" + path + "'");
}

std::string read_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Correspondences identity_targets(std::span<const GaussianRecord> observed, std::size_t base_count) {
    if (observed.size() != base_count)
        throw ConfigError("target frame has " + std::to_string(observed.size()) + " gaussians, frame 0 has " +
                          std::to_string(base_count));
    Correspondences c;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        c.indices.push_back(static_cast<std::uint32_t>(i));
        c.targets.push_back(observed[i].position);
    }
    return c;
}

int cmd_encode(const SourceFlags& src, const std::vector<std::string>& plys, const ConfigFlags& flags,
               std::uint64_t budget, const std::string& output, const std::string& metrics_path,
               const std::string& frame0_out) {
    const StreamConfig config = flags.stream();
    std::vector<FrameMetrics> rows;
    std::unique_ptr<Encoder> enc;
    if (!plys.empty()) {
        if (plys.size() < 2) throw ConfigError("--ply needs frame 0 plus at least one target frame");
        auto frame0 = load_gaussian_ply(plys[0]);
        const std::size_t n0 = frame0.size();
        if (!frame0_out.empty()) write_file(frame0_out, read_file(plys[0]));
        enc = std::make_unique<Encoder>(std::move(frame0), config, flags.fit(), budget);
        for (std::size_t t = 1; t < plys.size(); ++t) rows.push_back(enc->encode(identity_targets(load_gaussian_ply(plys[t]), n0)));
    } else {
        const SceneFrames scene = generate_scene(scene_from(src));
        auto frame0 = initial_gaussians(scene, src.seed);
        if (!frame0_out.empty()) {
            // PLY storage is lossy (log scales, logit opacity), so encode from
            // the file as written; decode --frame0 then replays bit-exactly.
            save_gaussian_ply(frame0_out, frame0);
            frame0 = load_gaussian_ply(frame0_out);
        }
        enc = std::make_unique<Encoder>(std::move(frame0), config, flags.fit(), budget);
        const Supervision sup = parse_supervision(flags.supervision);
        for (std::size_t t = 1; t < scene.frame_count(); ++t)
            rows.push_back(enc->encode(sup == Supervision::flow ? scene.flow_correspondences(t, enc->state().gaussians)
                                                                : scene.correspondences(t)));
    }
    const Bytes stream = serialize_stream(enc->stream());
    write_file(output, stream);
    if (!metrics_path.empty()) write_text(metrics_path, metrics_table(rows));
    if (enc->byte_log().empty()) throw ConfigError("no frames to encode");
    const auto report = storage_report(enc->byte_log(), enc->header().byte_size());
    std::cout << "wrote " << output << " (" << stream.size() << " bytes, " << rows.size() << " frames)\n"
              << format_report(report) << "final checksum " << format_checksum(state_checksum(enc->state())) << "\n";
    return kOk;
}

int cmd_decode(const std::string& stream_path, const SourceFlags& src, const std::string& frame0_ply,
               const std::string& out_dir, int every, const std::string& metrics_path) {
    const StreamFile stream = parse_stream(read_file(stream_path));
    std::vector<GaussianRecord> frame0;
    if (!frame0_ply.empty())
        frame0 = load_gaussian_ply(frame0_ply);
    else
        frame0 = initial_gaussians(generate_scene(scene_from(src)), src.seed);
    std::vector<std::uint64_t> expected;
    if (!metrics_path.empty()) expected = read_checksums(read_text(metrics_path));
    if (!expected.empty() && expected.size() != stream.frames.size())
        throw FormatError("metrics table lists " + std::to_string(expected.size()) + " frames, stream has " +
                          std::to_string(stream.frames.size()));

    Decoder dec(stream.header, std::move(frame0));
    if (!out_dir.empty()) fs::create_directories(out_dir);
    auto export_frame = [&](std::size_t t) {
        if (out_dir.empty() || every <= 0 || t % static_cast<std::size_t>(every) != 0) return;
        char name[32];
        std::snprintf(name, sizeof name, "frame_%04zu.ply", t);
        save_gaussian_ply((fs::path(out_dir) / name).string(), dec.state().gaussians);
    };
    export_frame(0);
    for (std::size_t i = 0; i < stream.frames.size(); ++i) {
        try {
            dec.decode(stream.frames[i]);
        } catch (const FormatError& e) {
            throw FormatError("frame " + std::to_string(i + 1) + ": " + e.what());
        }
        const auto sum = state_checksum(dec.state());
        if (!expected.empty() && sum != expected[i])
            throw FormatError("frame " + std::to_string(i + 1) + ": checksum " + format_checksum(sum) +
                              " differs from logged " + format_checksum(expected[i]));
        export_frame(i + 1);
    }
    std::cout << "decoded " << stream.frames.size() << " frames, " << dec.state().gaussians.size()
              << " gaussians\nfinal checksum " << format_checksum(state_checksum(dec.state())) << "\n";
    return kOk;
}

int cmd_bench(const SourceFlags& src, const ConfigFlags& flags, const std::vector<std::uint64_t>& budgets,
              const std::vector<int>& level_sweep, const std::string& output) {
    const SceneFrames scene = generate_scene(scene_from(src));
    const Supervision sup = parse_supervision(flags.supervision);
    std::string table;
    bool failed = false;
    if (!budgets.empty()) {
        const auto rows = bench_budgets(scene, flags.stream(), flags.fit(), budgets, sup);
        table += bench_table(rows);
        for (const auto& r : rows) failed = failed || r.failed;
    }
    if (!level_sweep.empty()) {
        const auto rows = bench_levels(scene, flags.stream(), flags.fit(), level_sweep, sup);
        table += bench_table(rows);
        for (const auto& r : rows) failed = failed || r.failed;
    }
    if (budgets.empty() && level_sweep.empty()) table = bench_table(bench_budgets(scene, flags.stream(), flags.fit(), {0}, sup));
    std::cout << table;
    if (!output.empty()) write_text(output, table);
    return failed ? kNumerical : kOk;
}

int cmd_synth(const SourceFlags& src, const std::string& out_dir, int every, const std::string& spec_out) {
    const SceneSpec spec = scene_from(src);
    if (!spec_out.empty()) write_text(spec_out, scene_spec_to_json(spec) + "\n");
    if (out_dir.empty()) {
        if (spec_out.empty()) std::cout << scene_spec_to_json(spec) << "\n";
        return kOk;
    }
    const SceneFrames scene = generate_scene(spec);
    fs::create_directories(out_dir);
    const auto frame0 = initial_gaussians(scene, src.seed);
    int written = 0;
    for (std::size_t t = 0; t < scene.frame_count(); ++t) {
        if (every <= 0 || t % static_cast<std::size_t>(every) != 0) continue;
        auto g = frame0;
        for (std::size_t i = 0; i < g.size(); ++i) g[i].position = scene.targets[t][i];
        char name[32];
        std::snprintf(name, sizeof name, "frame_%04zu.ply", t);
        save_gaussian_ply((fs::path(out_dir) / name).string(), g);
        ++written;
    }
    std::cout << "wrote " << written << " frames of " << scene.point_count() << " points to " << out_dir << "\n";
    return kOk;
}

int cmd_inspect(const std::string& stream_path) {
    const Bytes data = read_file(stream_path);
    const StreamFile s = parse_stream(data);
    const auto& h = s.header;
    std::cout << "version " << h.version << "\nlevels " << int(h.levels) << "\nquantization "
              << to_string(h.quantization) << "\ncomposition " << to_string(h.composition_mode) << "\nlevel_ratio "
              << int(h.level_ratio) << "\nreconfig_period " << h.reconfig_period << "\nfinest_fraction "
              << h.finest_fraction_num << "/" << h.finest_fraction_den << "\ngaussian_count_initial "
              << h.gaussian_count_initial << "\nanchor_targets";
    if (h.anchor_targets.empty()) std::cout << " derived";
    for (auto t : h.anchor_targets) std::cout << " " << t;
    std::cout << "\nheader_bytes " << h.byte_size() << "\nframes " << s.frames.size() << "\n";
    std::cout << "frame\tbytes\tdeltas\tdensify\tanchors\treconfig\n";
    std::vector<FrameBytes> log;
    for (const auto& f : s.frames) {
        std::size_t consumed = 0;
        const FramePayload p = parse_frame(f, h, consumed);
        const FrameBytes b = frame_bytes(p, h.quantization);
        log.push_back(b);
        std::cout << p.frame_index << '\t' << f.size() << '\t' << b.deltas << '\t' << b.densify << '\t';
        const auto counts = p.anchor_counts();
        for (std::size_t l = 0; l < counts.size(); ++l) std::cout << (l ? "," : "") << counts[l];
        std::cout << '\t' << (p.reconfig ? 1 : 0) << '\n';
    }
    if (!log.empty()) std::cout << format_report(storage_report(log, h.byte_size()));
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hierarchical anchor-motion stream codec for dynamic gaussian sets"};
    app.require_subcommand(1);

    ConfigFlags enc_flags, bench_flags;
    SourceFlags enc_src, dec_src, bench_src, synth_src;
    CLI::Option *synth_opt = nullptr, *preset_opt = nullptr;

    auto* enc = app.add_subcommand("encode", "Fit and encode a session");
    add_source_flags(enc, enc_src, synth_opt, preset_opt);
    std::vector<std::string> plys;
    auto* ply_opt = enc->add_option("--ply", plys, "Frame PLY files, frame 0 first");
    synth_opt->excludes(ply_opt);
    preset_opt->excludes(ply_opt)->excludes(synth_opt);
    std::string enc_out, enc_metrics, enc_frame0;
    std::uint64_t budget = 0;
    enc->add_option("-o,--output", enc_out, "Stream file")->required();
    enc->add_option("--metrics", enc_metrics, "Per-frame metrics table (TSV)");
    enc->add_option("--frame0-out", enc_frame0, "Write frame 0 as PLY and encode from that file");
    enc->add_option("--budget", budget, "Bytes per frame; sets anchor counts");
    add_config_flags(enc, enc_flags);

    auto* dec = app.add_subcommand("decode", "Replay a stream from frame 0");
    std::string dec_stream, dec_frame0, dec_out, dec_metrics;
    int dec_every = 1;
    dec->add_option("stream", dec_stream, "Stream file")->required();
    add_source_flags(dec, dec_src, synth_opt, preset_opt);
    auto* f0_opt = dec->add_option("--frame0", dec_frame0, "Frame 0 PLY");
    synth_opt->excludes(f0_opt);
    preset_opt->excludes(f0_opt)->excludes(synth_opt);
    dec->add_option("--out-dir", dec_out, "Directory for exported frames");
    dec->add_option("--every", dec_every, "Export every k-th frame")->capture_default_str();
    dec->add_option("--metrics", dec_metrics, "Encoder metrics table to verify checksums against");

    auto* bench = app.add_subcommand("bench", "Rate-distortion and depth sweeps");
    add_source_flags(bench, bench_src, synth_opt, preset_opt);
    synth_opt->excludes(preset_opt);
    std::vector<std::uint64_t> budgets;
    std::vector<int> level_sweep;
    std::string bench_out;
    bench->add_option("--budgets", budgets, "Bytes/frame sweep");
    bench->add_option("--level-sweep", level_sweep, "Hierarchy depths to compare");
    bench->add_option("-o,--output", bench_out, "Write the table here too");
    add_config_flags(bench, bench_flags);

    auto* synth = app.add_subcommand("synth", "Generate and export a synthetic scene");
    add_source_flags(synth, synth_src, synth_opt, preset_opt);
    synth_opt->excludes(preset_opt);
    std::string synth_out, synth_spec_out;
    int synth_every = 1;
    synth->add_option("--out-dir", synth_out, "Directory for per-frame PLY files");
    synth->add_option("--every", synth_every, "Export every k-th frame")->capture_default_str();
    synth->add_option("--spec-out", synth_spec_out, "Write the scene spec as JSON");

    auto* inspect = app.add_subcommand("inspect", "Print stream header and frame sizes");
    std::string inspect_stream;
    inspect->add_option("stream", inspect_stream, "Stream file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfig;
    }

    auto need_source = [](const SourceFlags& s, bool alt) {
        if (s.synth.empty() && s.preset.empty() && !alt)
            throw ConfigError("exactly one input source is required (--synth, --preset or a PLY input)");
    };

    try {
        if (*enc) {
            need_source(enc_src, !plys.empty());
            return cmd_encode(enc_src, plys, enc_flags, budget, enc_out, enc_metrics, enc_frame0);
        }
        if (*dec) {
            need_source(dec_src, !dec_frame0.empty());
            return cmd_decode(dec_stream, dec_src, dec_frame0, dec_out, dec_every, dec_metrics);
        }
        if (*bench) {
            need_source(bench_src, false);
            return cmd_bench(bench_src, bench_flags, budgets, level_sweep, bench_out);
        }
        if (*synth) {
            need_source(synth_src, false);
            return cmd_synth(synth_src, synth_out, synth_every, synth_spec_out);
        }
        if (*inspect) return cmd_inspect(inspect_stream);
    } catch (const BudgetError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfig;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfig;
    } catch (const NumericalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kNumerical;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIo;
    }
    return kOk;
}
