#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "recon/codec.hpp"
#include "recon/fitting.hpp"
#include "recon/motion.hpp"
#include "recon/synth.hpp"
#include "recon/types.hpp"

namespace recon {

struct FrameMetrics {
    std::int64_t frame = 0;
    double initial_loss = 0.0;
    double loss = 0.0;        // fitted loss before quantization
    double mean_error = 0.0;  // mean distance to targets after the applied frame
    std::size_t bytes = 0;
    std::vector<std::uint32_t> anchors;
    bool reconfig = false;
    std::size_t added = 0;
    std::uint64_t checksum = 0;
};

/// Encoder half of the mirrored session.
///
/// Every frame runs inherit-or-zero init, fit, densify and encode, then
/// applies the frame exactly as the decoder will (quantize-then-apply).
class Encoder {
public:
    /// `fit` supplies optimizer settings; step count and densify threshold
    /// come from `config`. A nonzero `bytes_per_frame` sets the anchor
    /// targets through plan_budget.
    Encoder(std::vector<GaussianRecord> frame0, StreamConfig config, FitConfig fit = {},
            std::uint64_t bytes_per_frame = 0);

    /// Advances one frame towards the observed positions.
    FrameMetrics encode(const Correspondences& corr);

    const StreamHeader& header() const { return header_; }
    const StreamConfig& config() const { return config_; }
    const SceneState& state() const { return state_; }
    const std::vector<Bytes>& frames() const { return frames_; }
    const std::vector<FrameBytes>& byte_log() const { return byte_log_; }
    StreamFile stream() const { return {header_, frames_}; }

private:
    StreamConfig config_;
    FitConfig fit_;
    StreamHeader header_;
    SceneState state_;
    FrameDeformation previous_;
    std::vector<Bytes> frames_;
    std::vector<FrameBytes> byte_log_;
};

/// Decoder half: replays frames on its own copy of frame 0.
class Decoder {
public:
    Decoder(const StreamHeader& header, std::vector<GaussianRecord> frame0);

    /// Applies one encoded frame. Throws FormatError on a frame index or
    /// anchor count mismatch.
    void decode(std::span<const std::uint8_t> frame);

    const SceneState& state() const { return state_; }
    const StreamConfig& config() const { return config_; }

private:
    StreamHeader header_;
    StreamConfig config_;
    SceneState state_;
};

/// Steps shared by both ends once a frame's dequantized deformation is
/// known: apply, append added gaussians, prune, advance the frame index.
void advance_state(SceneState& state, const FrameDeformation& applied, CompositionMode mode, std::int64_t frame);

/// Reconfiguration schedule: frame t >= 1 rebuilds when t % period == 0.
bool is_reconfig_frame(std::int64_t frame, int period);

struct SessionResult {
    StreamFile stream;
    std::vector<FrameMetrics> metrics;
    SceneState final_state;
    StorageReport storage;
};

/// What the encoder is fitted against each frame.
enum class Supervision {
    /// Observed absolute positions; residuals left by one frame stay in the
    /// state and count against every later frame.
    absolute,
    /// Scene flow applied to the current state, so each frame's error
    /// measures only how well the anchors represent that frame's motion.
    flow,
};

Supervision parse_supervision(const std::string& s);

/// Encodes frames 1..frames-1 of a generated scene.
SessionResult run_session(const SceneFrames& scene, const StreamConfig& config, const FitConfig& fit = {},
                          std::uint64_t bytes_per_frame = 0, std::uint64_t seed = 0,
                          Supervision supervision = Supervision::absolute);

/// Replays a stream from frame 0; returns the final decoder state.
SceneState decode_stream(const StreamFile& stream, std::vector<GaussianRecord> frame0,
                         const std::vector<std::uint64_t>& expected_checksums = {});

// --- metrics table ---

std::string format_checksum(std::uint64_t checksum);
std::string metrics_header();
std::string metrics_row(const FrameMetrics& m);
std::string metrics_table(std::span<const FrameMetrics> rows);
/// Reads the checksum column of a metrics table.
std::vector<std::uint64_t> read_checksums(const std::string& table_text);

// --- bench ---

struct BenchRow {
    std::uint64_t budget = 0;  // 0 = unconstrained
    int levels = 0;
    double mean_bytes_per_frame = 0.0;
    double mean_delta_bytes = 0.0;
    double mean_error = 0.0;
    bool failed = false;
    std::string message;
};

/// One session per budget (sorted ascending). A failed session is flagged
/// and stops the sweep.
std::vector<BenchRow> bench_budgets(const SceneFrames& scene, const StreamConfig& config, const FitConfig& fit,
                                    std::vector<std::uint64_t> budgets,
                                    Supervision supervision = Supervision::absolute);
/// One session per hierarchy depth.
std::vector<BenchRow> bench_levels(const SceneFrames& scene, const StreamConfig& config, const FitConfig& fit,
                                   std::span<const int> levels, Supervision supervision = Supervision::absolute);
std::string bench_table(std::span<const BenchRow> rows);

}  // namespace recon
