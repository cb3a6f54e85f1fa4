#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace recon {

using Vec3f = Eigen::Vector3f;
using Vec4f = Eigen::Vector4f;  // quaternions are stored (w, x, y, z)
using Vec3d = Eigen::Vector3d;
using Vec4d = Eigen::Vector4d;

inline constexpr int kShCoefficients = 12;  // degree 1: 4 coefficients x 3 channels

/// One anisotropic Gaussian primitive.
///
/// `scale` holds the linear (not log) diagonal of S and `opacity` the
/// activated value in [0, 1]; file-level encodings are handled by io_ply.
struct GaussianRecord {
    Vec3f position = Vec3f::Zero();
    Vec3f scale = Vec3f::Ones();
    Vec4f orientation{1.0f, 0.0f, 0.0f, 0.0f};
    float opacity = 0.5f;
    std::array<float, kShCoefficients> sh{};
};

/// Covariance R S S^T R^T of a record, for validation and inspection only.
Eigen::Matrix3d covariance(const GaussianRecord& g);

/// One tier of the anchor structure. Level 1 is the coarsest.
struct LevelStructure {
    int level = 1;
    int grid_resolution = 1;
    std::int64_t target_anchors = 1;
    Vec3f bounds_min = Vec3f::Zero();
    Vec3f bounds_max = Vec3f::Zero();
    /// Gaussian indices of the anchors, sorted by (i, j, k) cell key.
    std::vector<std::uint32_t> anchor_indices;
    /// assignment[g] = ordinal into anchor_indices of g's cluster.
    std::vector<std::uint32_t> assignment;

    std::size_t anchor_count() const { return anchor_indices.size(); }
};

struct AnchorHierarchy {
    std::vector<LevelStructure> levels;
    std::int64_t built_at_frame = 0;
};

/// Per-level anchor transforms of one frame; ordinals follow the level's
/// canonical anchor order.
struct AnchorDeltaSet {
    std::vector<Vec3f> translations;
    std::vector<Vec4f> rotations;

    std::size_t size() const { return translations.size(); }
    static AnchorDeltaSet zeros(std::size_t n);
};

struct FrameDeformation {
    std::vector<AnchorDeltaSet> per_level;
    std::vector<GaussianRecord> added_gaussians;
    std::vector<std::uint64_t> pruned_indices;

    /// Zero deltas shaped after `h`.
    static FrameDeformation zeros_like(const AnchorHierarchy& h);
};

enum class Quantization : std::uint8_t { full32 = 0, half16 = 1, fixed16 = 2 };
enum class CompositionMode : std::uint8_t { additive = 0, pivot = 1 };

std::string to_string(Quantization q);
std::string to_string(CompositionMode m);
Quantization parse_quantization(const std::string& s);
CompositionMode parse_composition_mode(const std::string& s);

struct StreamConfig {
    int levels = 3;
    std::uint32_t finest_fraction_num = 1;
    std::uint32_t finest_fraction_den = 24;
    int level_ratio = 3;
    int reconfig_period = 10;
    Quantization quantization = Quantization::half16;
    int phase1_steps = 100;
    int phase2_steps = 100;
    double densify_threshold = 0.05;
    CompositionMode composition_mode = CompositionMode::additive;
    /// Explicit per-level anchor targets {N^(l)}, coarsest first. Empty means
    /// derive from finest_fraction and level_ratio.
    std::vector<std::uint32_t> anchor_counts;
};

/// Throws ConfigError when a field is out of range.
void validate_config(const StreamConfig& config);

struct SceneState {
    std::vector<GaussianRecord> gaussians;
    AnchorHierarchy hierarchy;
    std::int64_t frame_index = 0;
};

struct Violation {
    std::int64_t gaussian_index = -1;  // -1 for structural (hierarchy) issues
    std::string field;
    std::string message;
};

/// Checks every record and hierarchy invariant; never throws.
std::vector<Violation> validate_state(const SceneState& state);

/// Unit quaternion; returns false (and leaves q untouched) if the norm is
/// below 1e-12.
bool normalize_quaternion(Vec4f& q);

/// Bitwise equality of all record fields.
bool bit_equal(const GaussianRecord& a, const GaussianRecord& b);
bool bit_equal(const std::vector<GaussianRecord>& a, const std::vector<GaussianRecord>& b);

/// FNV-1a over the raw bytes of every gaussian field and the hierarchy.
std::uint64_t state_checksum(const SceneState& state);

}  // namespace recon
