#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "recon/types.hpp"

namespace recon {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::uint16_t kStreamVersion = 1;
inline constexpr std::size_t kGaussianRecordBytes = 23 * 4;

// --- IEEE 754 binary16 ---

/// Round-to-nearest-even conversion. Throws NumericalError when the value is
/// non-finite or overflows the half range.
std::uint16_t float_to_half(float value);
float half_to_float(std::uint16_t bits);

// --- stream header ---

/// Fixed session parameters. Serialized little-endian:
///   "RCGS" | version u16 | levels u8 | quantization u8 | composition u8 |
///   level_ratio u8 | reserved u16 | reconfig_period u32 | fraction num u32 |
///   fraction den u32 | gaussian_count_initial u64 | anchor target u32 x levels
/// An all-zero target list means targets derive from the finest fraction.
struct StreamHeader {
    std::uint16_t version = kStreamVersion;
    std::uint8_t levels = 3;
    Quantization quantization = Quantization::half16;
    CompositionMode composition_mode = CompositionMode::additive;
    std::uint8_t level_ratio = 3;
    std::uint32_t reconfig_period = 10;
    std::uint32_t finest_fraction_num = 1;
    std::uint32_t finest_fraction_den = 24;
    std::uint64_t gaussian_count_initial = 0;
    std::vector<std::uint32_t> anchor_targets;  // empty or one per level

    static StreamHeader from_config(const StreamConfig& config, std::uint64_t gaussian_count);
    StreamConfig to_config() const;
    std::size_t byte_size() const { return 32 + 4 * static_cast<std::size_t>(levels); }
};

Bytes encode_header(const StreamHeader& header);
/// Throws FormatError ("bad magic", version mismatch, truncation).
StreamHeader decode_header(std::span<const std::uint8_t> bytes);

// --- frame payloads ---

/// Bytes of one value at the given quantization (4 or 2).
std::size_t value_width(Quantization q);
/// Frame bytes that do not depend on anchor counts: frame index, realized
/// counts, added/pruned counts and the reconfiguration flag, plus the
/// per-block (min, max) ranges in fixed16.
std::size_t frame_overhead_bytes(int levels, Quantization q);
/// Translation + rotation block bytes (fixed16 ranges included).
std::size_t delta_block_bytes(std::span<const std::uint32_t> anchor_counts, Quantization q);
/// Exact payload length for the given counts.
std::size_t payload_size(const StreamHeader& header, std::span<const std::uint32_t> anchor_counts,
                         std::size_t added_count, std::size_t pruned_count);

/// A frame as carried on the wire.
struct FramePayload {
    std::uint64_t frame_index = 0;
    bool reconfig = false;
    FrameDeformation deformation;

    std::vector<std::uint32_t> anchor_counts() const;
};

/// Serializes anchors in canonical order without indices. Throws ConfigError
/// on a non-finite delta or inconsistent block sizes.
Bytes encode_frame(const FramePayload& frame, Quantization quantization);

/// Convenience overload that also checks the deltas against `hierarchy`.
Bytes encode_frame(const FrameDeformation& deltas, const AnchorHierarchy& hierarchy, Quantization quantization,
                   std::uint64_t frame_index = 0, bool reconfig = false);

/// Parses one frame from the front of `bytes`; `consumed` receives its length.
/// Structural only: counts are taken from the payload. Throws FormatError.
FramePayload parse_frame(std::span<const std::uint8_t> bytes, const StreamHeader& header, std::size_t& consumed);

/// Parses a frame and checks its realized anchor counts against the
/// decoder's (already advanced) hierarchy; a mismatch names the level.
FrameDeformation decode_frame(std::span<const std::uint8_t> bytes, const StreamHeader& header,
                              const AnchorHierarchy& hierarchy);

/// decode(encode(d)) for the delta blocks only, i.e. what both ends apply.
FrameDeformation dequantize(const FrameDeformation& deltas, Quantization quantization);

// --- whole streams ---

struct StreamFile {
    StreamHeader header;
    std::vector<Bytes> frames;
};

Bytes serialize_stream(const StreamFile& stream);
StreamFile parse_stream(std::span<const std::uint8_t> bytes);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);
Bytes read_file(const std::string& path);

// --- budgeting and accounting ---

/// Largest per-level anchor counts (coarsest first) whose frame payload fits
/// `bytes_per_frame`: the finest count n is maximal with
/// overhead + sum_l ceil(n / r^(L-l)) * 7 * w <= bytes_per_frame, capped at
/// ceil(n_gaussians * finest_fraction). Throws BudgetError carrying the
/// minimum feasible budget when even one anchor per level does not fit.
std::vector<std::uint32_t> plan_budget(std::uint64_t n_gaussians, std::uint64_t bytes_per_frame,
                                       const StreamConfig& config);
std::vector<std::uint32_t> plan_budget(std::uint64_t n_gaussians, std::uint64_t bytes_per_frame,
                                       const StreamConfig& config, std::size_t overhead_bytes);
/// Bytes of the counts produced by plan_budget for a given finest count.
std::size_t planned_frame_bytes(std::uint64_t finest, const StreamConfig& config, std::size_t overhead_bytes);

struct FrameBytes {
    std::uint64_t frame_index = 0;
    std::size_t header = 0;     // fixed frame fields
    std::size_t deltas = 0;     // translation/rotation blocks
    std::size_t densify = 0;    // added records + pruned indices
    std::size_t total() const { return header + deltas + densify; }
};

/// Splits an encoded frame into its byte categories.
FrameBytes frame_bytes(const FramePayload& frame, Quantization quantization);

struct StorageReport {
    std::size_t frames = 0;
    std::size_t stream_header_bytes = 0;
    std::size_t total_bytes = 0;  // frames only
    std::size_t delta_bytes = 0;
    std::size_t densify_bytes = 0;
    std::size_t frame_header_bytes = 0;
    double mean_bytes_per_frame = 0.0;
    std::size_t max_bytes_per_frame = 0;
    double mean_delta_bytes = 0.0;
    double mean_densify_bytes = 0.0;
    double mean_frame_header_bytes = 0.0;
};

/// Aggregates per-frame byte counts. Throws ConfigError on an empty log.
StorageReport storage_report(std::span<const FrameBytes> log, std::size_t stream_header_bytes = 0);
std::string format_report(const StorageReport& report);

}  // namespace recon
