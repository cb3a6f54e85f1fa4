#include "recon/session.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <sstream>

#include "recon/errors.hpp"
#include "recon/hierarchy.hpp"

namespace recon {

namespace {

std::vector<std::uint32_t> realized_counts(const AnchorHierarchy& h) {
    std::vector<std::uint32_t> out;
    for (const auto& level : h.levels) out.push_back(static_cast<std::uint32_t>(level.anchor_count()));
    return out;
}

// Planned targets bound the requested counts, but grid sampling can realize
// more anchors than targeted. Tighten the budget handed to the planner until
// the frame-0 hierarchy fits.
std::vector<std::uint32_t> targets_for_budget(std::span<const GaussianRecord> gaussians, StreamConfig config,
                                              std::uint64_t bytes_per_frame) {
    const std::size_t overhead = frame_overhead_bytes(config.levels, config.quantization);
    std::uint64_t budget = bytes_per_frame;
    std::vector<std::uint32_t> counts = plan_budget(gaussians.size(), budget, config);
    for (int attempt = 0; attempt < 32; ++attempt) {
        config.anchor_counts = counts;
        const auto h = build_hierarchy(gaussians, config);
        const std::size_t realized = frame_overhead_bytes(config.levels, Quantization::full32) +
                                     delta_block_bytes(realized_counts(h), config.quantization);
        if (realized <= bytes_per_frame) break;
        const std::uint64_t excess = realized - bytes_per_frame;
        const std::size_t minimum = planned_frame_bytes(1, config, overhead);
        if (budget <= minimum + excess) {
            counts = plan_budget(gaussians.size(), minimum, config);
            break;
        }
        budget -= excess;
        counts = plan_budget(gaussians.size(), budget, config);
    }
    return counts;
}

}  // namespace

bool is_reconfig_frame(std::int64_t frame, int period) { return frame >= 1 && period >= 1 && frame % period == 0; }

void advance_state(SceneState& state, const FrameDeformation& applied, CompositionMode mode, std::int64_t frame) {
    state.gaussians = apply_deformation(state.gaussians, state.hierarchy, applied, mode);
    if (!applied.added_gaussians.empty()) {
        const std::size_t first_new = state.gaussians.size();
        state.gaussians.insert(state.gaussians.end(), applied.added_gaussians.begin(), applied.added_gaussians.end());
        assign_appended(state.hierarchy, positions_of(state.gaussians), first_new);
    }
    if (!applied.pruned_indices.empty()) {
        remove_from_hierarchy(state.hierarchy, applied.pruned_indices, state.gaussians.size());
        std::vector<GaussianRecord> kept;
        kept.reserve(state.gaussians.size() - applied.pruned_indices.size());
        std::size_t p = 0;
        for (std::size_t i = 0; i < state.gaussians.size(); ++i) {
            if (p < applied.pruned_indices.size() && applied.pruned_indices[p] == i) {
                ++p;
                continue;
            }
            kept.push_back(state.gaussians[i]);
        }
        state.gaussians.swap(kept);
    }
    state.frame_index = frame;
}

Encoder::Encoder(std::vector<GaussianRecord> frame0, StreamConfig config, FitConfig fit, std::uint64_t bytes_per_frame)
    : config_(std::move(config)), fit_(fit) {
    validate_config(config_);
    if (frame0.empty()) throw ConfigError("encoder needs at least one gaussian in frame 0");
    fit_.steps_phase1 = config_.phase1_steps;
    fit_.densify_threshold = config_.densify_threshold;
    validate_fit_config(fit_);
    if (bytes_per_frame > 0) config_.anchor_counts = targets_for_budget(frame0, config_, bytes_per_frame);
    header_ = StreamHeader::from_config(config_, frame0.size());
    state_.gaussians = std::move(frame0);
    state_.hierarchy = build_hierarchy(state_.gaussians, config_, 0);
    state_.frame_index = 0;
    previous_ = FrameDeformation::zeros_like(state_.hierarchy);
}

FrameMetrics Encoder::encode(const Correspondences& corr) {
    const std::int64_t t = state_.frame_index + 1;
    const bool reconfig = is_reconfig_frame(t, config_.reconfig_period);
    const CompositionMode mode = config_.composition_mode;

    FrameDeformation init;
    if (reconfig) {
        Rehierarchization r = rehierarchize(state_, config_);
        for (std::size_t l = 0; l < r.hierarchy.levels.size(); ++l)
            init.per_level.push_back(
                inherit_deformation(r.neighbors[l], previous_.per_level[l], RotationInheritance::magnitude));
        state_.hierarchy = std::move(r.hierarchy);
    } else {
        init = FrameDeformation::zeros_like(state_.hierarchy);
    }

    FitResult fitted = fit_frame(state_.gaussians, state_.hierarchy, corr, fit_, init, mode);
    const FrameDeformation applied_estimate = dequantize(fitted.deltas, config_.quantization);
    Densification dens = densify_residuals(state_.gaussians, state_.hierarchy, corr, applied_estimate,
                                           config_.densify_threshold, mode);

    FramePayload payload{static_cast<std::uint64_t>(t), reconfig, std::move(fitted.deltas)};
    payload.deformation.added_gaussians = std::move(dens.added);
    payload.deformation.pruned_indices = std::move(dens.pruned);
    Bytes bytes = encode_frame(payload, config_.quantization);
    if (bytes.size() != payload_size(header_, payload.anchor_counts(), payload.deformation.added_gaussians.size(),
                                     payload.deformation.pruned_indices.size()))
        throw FormatError("frame " + std::to_string(t) + ": emitted length differs from the size formula");

    // Apply what the decoder will see, not what was fitted.
    const FrameDeformation decoded = decode_frame(bytes, header_, state_.hierarchy);
    advance_state(state_, decoded, mode, t);

    FrameMetrics m;
    m.frame = t;
    m.initial_loss = fitted.initial_loss;
    m.loss = fitted.final_loss;
    m.mean_error = mean_position_error(state_.gaussians, corr);
    m.bytes = bytes.size();
    m.anchors = payload.anchor_counts();
    m.reconfig = reconfig;
    m.added = decoded.added_gaussians.size();
    m.checksum = state_checksum(state_);

    byte_log_.push_back(frame_bytes(payload, config_.quantization));
    frames_.push_back(std::move(bytes));
    previous_.per_level = decoded.per_level;
    return m;
}

Decoder::Decoder(const StreamHeader& header, std::vector<GaussianRecord> frame0)
    : header_(header), config_(header.to_config()) {
    if (frame0.size() != header.gaussian_count_initial)
        throw FormatError("frame 0 has " + std::to_string(frame0.size()) + " gaussians but the stream expects " +
                          std::to_string(header.gaussian_count_initial));
    state_.gaussians = std::move(frame0);
    state_.hierarchy = build_hierarchy(state_.gaussians, config_, 0);
}

void Decoder::decode(std::span<const std::uint8_t> frame) {
    std::size_t consumed = 0;
    const FramePayload p = parse_frame(frame, header_, consumed);
    const std::int64_t t = state_.frame_index + 1;
    if (p.frame_index != static_cast<std::uint64_t>(t))
        throw FormatError("expected frame " + std::to_string(t) + " but the stream carries frame " +
                          std::to_string(p.frame_index));
    if (p.reconfig) state_.hierarchy = rehierarchize(state_, config_).hierarchy;
    FrameDeformation d;
    try {
        d = decode_frame(frame, header_, state_.hierarchy);
    } catch (const FormatError& e) {
        throw FormatError(std::string("decoder mirror broken: ") + e.what());
    }
    advance_state(state_, d, config_.composition_mode, t);
}

Supervision parse_supervision(const std::string& s) {
    if (s == "absolute") return Supervision::absolute;
    if (s == "flow") return Supervision::flow;
    throw ConfigError("unknown supervision '" + s + "' (expected absolute or flow)");
}

SessionResult run_session(const SceneFrames& scene, const StreamConfig& config, const FitConfig& fit,
                          std::uint64_t bytes_per_frame, std::uint64_t seed, Supervision supervision) {
    Encoder enc(initial_gaussians(scene, seed), config, fit, bytes_per_frame);
    SessionResult result;
    for (std::size_t t = 1; t < scene.frame_count(); ++t) {
        const Correspondences corr = supervision == Supervision::flow
                                         ? scene.flow_correspondences(t, enc.state().gaussians)
                                         : scene.correspondences(t);
        result.metrics.push_back(enc.encode(corr));
    }
    result.stream = enc.stream();
    result.final_state = enc.state();
    if (!enc.byte_log().empty()) result.storage = storage_report(enc.byte_log(), enc.header().byte_size());
    return result;
}

SceneState decode_stream(const StreamFile& stream, std::vector<GaussianRecord> frame0,
                         const std::vector<std::uint64_t>& expected_checksums) {
    Decoder dec(stream.header, std::move(frame0));
    for (std::size_t i = 0; i < stream.frames.size(); ++i) {
        try {
            dec.decode(stream.frames[i]);
        } catch (const FormatError& e) {
            throw FormatError("frame " + std::to_string(i + 1) + ": " + e.what());
        }
        if (i < expected_checksums.size() && state_checksum(dec.state()) != expected_checksums[i])
            throw FormatError("frame " + std::to_string(i + 1) + ": checksum " +
                              format_checksum(state_checksum(dec.state())) + " differs from logged " +
                              format_checksum(expected_checksums[i]));
    }
    return dec.state();
}

std::string format_checksum(std::uint64_t checksum) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, checksum);
    return buf;
}

std::string metrics_header() {
    return "frame\tinitial_loss\tloss\tmean_error\tbytes\tanchors\treconfig\tadded\tchecksum";
}

std::string metrics_row(const FrameMetrics& m) {
    std::ostringstream os;
    os.precision(9);
    os << m.frame << '\t' << m.initial_loss << '\t' << m.loss << '\t' << m.mean_error << '\t' << m.bytes << '\t';
    for (std::size_t l = 0; l < m.anchors.size(); ++l) os << (l ? "," : "") << m.anchors[l];
    os << '\t' << (m.reconfig ? 1 : 0) << '\t' << m.added << '\t' << format_checksum(m.checksum);
    return os.str();
}

std::string metrics_table(std::span<const FrameMetrics> rows) {
    std::string out = metrics_header() + "\n";
    for (const auto& r : rows) out += metrics_row(r) + "\n";
    return out;
}

std::vector<std::uint64_t> read_checksums(const std::string& table_text) {
    std::istringstream in(table_text);
    std::string line;
    if (!std::getline(in, line) || line.rfind("frame\t", 0) != 0) throw FormatError("metrics table has no header row");
    std::vector<std::uint64_t> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto tab = line.rfind('\t');
        if (tab == std::string::npos) throw FormatError("malformed metrics row '" + line + "'");
        out.push_back(std::stoull(line.substr(tab + 1), nullptr, 16));
    }
    return out;
}

namespace {

BenchRow bench_one(const SceneFrames& scene, const StreamConfig& config, const FitConfig& fit, std::uint64_t budget,
                   Supervision supervision) {
    BenchRow row;
    row.budget = budget;
    row.levels = config.levels;
    try {
        const SessionResult r = run_session(scene, config, fit, budget, 0, supervision);
        double err = 0.0;
        for (const auto& m : r.metrics) err += m.mean_error;
        row.mean_error = r.metrics.empty() ? 0.0 : err / static_cast<double>(r.metrics.size());
        row.mean_bytes_per_frame = r.storage.mean_bytes_per_frame;
        row.mean_delta_bytes = r.storage.mean_delta_bytes;
    } catch (const Error& e) {
        row.failed = true;
        row.message = e.what();
    }
    return row;
}

}  // namespace

std::vector<BenchRow> bench_budgets(const SceneFrames& scene, const StreamConfig& config, const FitConfig& fit,
                                    std::vector<std::uint64_t> budgets, Supervision supervision) {
    std::sort(budgets.begin(), budgets.end());
    std::vector<BenchRow> rows;
    for (auto b : budgets) {
        rows.push_back(bench_one(scene, config, fit, b, supervision));
        if (rows.back().failed) break;
    }
    return rows;
}

std::vector<BenchRow> bench_levels(const SceneFrames& scene, const StreamConfig& config, const FitConfig& fit,
                                   std::span<const int> levels, Supervision supervision) {
    std::vector<BenchRow> rows;
    for (int l : levels) {
        StreamConfig c = config;
        c.levels = l;
        c.anchor_counts.clear();
        rows.push_back(bench_one(scene, c, fit, 0, supervision));
        if (rows.back().failed) break;
    }
    return rows;
}

std::string bench_table(std::span<const BenchRow> rows) {
    std::ostringstream os;
    os.precision(9);
    os << "budget\tlevels\tbytes_per_frame\tdelta_bytes\tmean_error\tstatus\n";
    for (const auto& r : rows) {
        os << r.budget << '\t' << r.levels << '\t' << r.mean_bytes_per_frame << '\t' << r.mean_delta_bytes << '\t'
           << r.mean_error << '\t' << (r.failed ? "FAILED: " + r.message : std::string("ok")) << '\n';
    }
    return os.str();
}

}  // namespace recon
