#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "recon/fitting.hpp"
#include "recon/types.hpp"

namespace recon {

/// Per-frame rigid motion of a body relative to its parent:
/// x -> R(axis, t * degrees_per_frame) (x - pivot) + pivot + t * velocity.
struct Trajectory {
    Vec3d axis{0.0, 0.0, 1.0};
    double degrees_per_frame = 0.0;
    Vec3d pivot = Vec3d::Zero();
    Vec3d velocity = Vec3d::Zero();
};

enum class BodyShape { box, ring };

struct BodySpec {
    std::int64_t point_count = 100;
    BodyShape shape = BodyShape::box;
    Vec3d center = Vec3d::Zero();
    /// Box side lengths. For a ring only extent.z() (height) is used.
    Vec3d extent = Vec3d::Ones();
    /// Ring radii in the xy plane around `center`.
    double inner_radius = 0.0;
    double outer_radius = 0.0;
    Trajectory trajectory;
    std::optional<int> parent;
};

struct SceneSpec {
    std::vector<BodySpec> bodies;
    int frames = 2;
    std::uint64_t seed = 0;
    double noise_sigma = 0.0;
};

/// Throws ConfigError on a malformed spec, including cyclic parents.
void validate_scene_spec(const SceneSpec& spec);

/// x -> rotation * x + translation.
struct RigidTransform {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Vec3d translation = Vec3d::Zero();

    Vec3d apply(const Vec3d& x) const { return rotation * x + translation; }
    /// (this o inner)(x) = this(inner(x)).
    RigidTransform compose(const RigidTransform& inner) const;
};

struct SceneFrames {
    /// Body of every point (frame-0 order is the gaussian order).
    std::vector<int> body_of;
    /// Exact positions, [frame][point].
    std::vector<std::vector<Vec3d>> positions;
    /// Observed positions (with noise), [frame][point].
    std::vector<std::vector<Vec3f>> targets;
    /// World transform of each body from frame 0, [frame][body].
    std::vector<std::vector<RigidTransform>> transforms;

    std::size_t frame_count() const { return positions.size(); }
    std::size_t point_count() const { return body_of.size(); }
    /// Identity-map correspondences onto the observed frame-t positions.
    Correspondences correspondences(std::size_t frame) const;
    /// Scene-flow targets: `current` positions moved by the exact
    /// frame-1 -> frame displacement of each point.
    Correspondences flow_correspondences(std::size_t frame, std::span<const GaussianRecord> current) const;
    /// Largest distance between two frame-0 bounding box corners.
    double diameter() const;
};

/// Samples frame 0 (uniform in each body's shape, seeded) and moves it by the
/// exact composed rigid transforms. Noise, when requested, touches targets
/// only.
SceneFrames generate_scene(const SceneSpec& spec);

/// World transform of `body` at `frame`, parents applied after children.
RigidTransform body_transform(const SceneSpec& spec, int body, int frame);

/// p' = R(q)(p - pivot) + pivot + t. Throws ConfigError unless |q| = 1
/// within 1e-6.
std::vector<Vec3d> rigid_transform_points(std::span<const Vec3d> points, const Vec4d& q, const Vec3d& pivot,
                                          const Vec3d& translation);

/// Gaussians at the given positions with small isotropic scales, identity
/// orientation and seeded opacity and SH.
std::vector<GaussianRecord> gaussians_at(std::span<const Vec3f> positions, std::uint64_t seed, float scale = 0.01f);

/// Frame 0 of a generated scene as gaussians.
std::vector<GaussianRecord> initial_gaussians(const SceneFrames& frames, std::uint64_t seed);

/// JSON spec file. Keys: frames, seed, noise_sigma, bodies[]; each body has
/// point_count, shape ("box" | "ring"), center, extent, inner_radius,
/// outer_radius, axis, degrees_per_frame, pivot, velocity, parent.
SceneSpec parse_scene_spec(const std::string& json_text);
SceneSpec load_scene_spec(const std::string& path);
std::string scene_spec_to_json(const SceneSpec& spec);

/// Bundled scenes: "static", "translation", "two_body", "drift".
SceneSpec preset_scene(const std::string& name, int frames = 0);

}  // namespace recon
