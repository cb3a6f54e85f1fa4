#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "recon/hierarchy.hpp"
#include "recon/types.hpp"

namespace recon {

// --- quaternion helpers, (w, x, y, z) layout ---

Vec4d quat_multiply(const Vec4d& a, const Vec4d& b);
/// Rotation matrix of a unit quaternion.
Eigen::Matrix3d quat_to_matrix(const Vec4d& q);
/// Unit quaternion for a rotation of `angle` radians about `axis`.
Vec4d quat_from_axis_angle(const Vec3d& axis, double angle);
/// Flips the sign so the first component with |c| > 1e-12 is positive.
Vec4d canonical_sign(const Vec4d& q);

// --- dominant eigenpair of a symmetric 4x4 matrix ---

struct EigenPair {
    double value = 0.0;
    Vec4d vector = Vec4d::Zero();
    bool used_fallback = false;
};

/// Largest eigenvalue and its unit eigenvector, canonical sign.
///
/// Shifted power iteration (tolerance 1e-12 relative residual, cap 200
/// iterations). When it stalls, typically on a repeated dominant eigenvalue,
/// a cyclic Jacobi sweep takes over; Jacobi failure throws NumericalError.
EigenPair symmetric4_max_eigenvector(const Eigen::Matrix4d& m);

/// Cyclic Jacobi eigen-decomposition; eigenvalues on the returned diagonal,
/// eigenvectors in the columns of `vectors`.
void jacobi_eigen4(const Eigen::Matrix4d& m, Eigen::Vector4d& values, Eigen::Matrix4d& vectors);

/// Eigenvector average: v_max(sum q q^T) / |v_max|, canonical sign.
/// Zero inputs are skipped; all-zero input throws NumericalError. The outer
/// products are summed in a canonical order so the result is exactly
/// invariant to sign flips and permutations of the inputs.
Vec4d average_quaternions(std::span<const Vec4d> quats);
Vec4d average_quaternions(const Vec4d& q1, const Vec4d& q2, const Vec4d& q3);

// --- explicit motion composition ---

struct ComposedDeformation {
    std::vector<Vec3f> translation;
    std::vector<Vec4f> rotation;
};

/// Per-gaussian sum of the assigned anchor deltas over all levels, level 1
/// first. Throws ConfigError when deltas and hierarchy disagree in shape.
ComposedDeformation compose_deformation(const AnchorHierarchy& hierarchy, const FrameDeformation& deltas);

/// Throws ConfigError unless deltas has one finite block per level sized to
/// the level's anchor count.
void check_consistent(const AnchorHierarchy& hierarchy, const FrameDeformation& deltas);

/// Additive update: position += dmu, orientation = normalize(orientation + dq).
/// A zero dq leaves the orientation bits untouched. Scale, opacity and SH are
/// never modified.
std::vector<GaussianRecord> apply_composed(std::span<const GaussianRecord> gaussians,
                                           const ComposedDeformation& composed);

/// Applies one frame of anchor deltas in the given composition mode.
///
/// pivot: for l = 1..L the position is rotated by normalize((1,0,0,0) + dq_l)
/// about the level-l anchor's pre-frame position, then shifted by dmu_l; the
/// orientation becomes q_L * ... * q_1 * orientation. Levels with a zero dq
/// skip the rotation, so zero deltas are an exact identity.
std::vector<GaussianRecord> apply_deformation(std::span<const GaussianRecord> gaussians,
                                              const AnchorHierarchy& hierarchy, const FrameDeformation& deltas,
                                              CompositionMode mode);

// --- intra-level deformation inheritance ---

enum class RotationInheritance {
    /// Unit eigenvector average, exactly as the averaging formula states.
    unit,
    /// Same direction scaled to the RMS norm of the nonzero inputs
    /// (sqrt(lambda_max / k)) with the sign of the nearest nonzero input, so
    /// identical increments are inherited unchanged.
    magnitude,
};

/// New anchor deltas from the 3 nearest legacy anchors of the same level:
/// mean translation and eigenvector-averaged rotation (zero when all three
/// rotation increments are zero).
AnchorDeltaSet inherit_deformation(std::span<const NeighborTriple> neighbors, const AnchorDeltaSet& legacy,
                                   RotationInheritance policy = RotationInheritance::unit);

}  // namespace recon
