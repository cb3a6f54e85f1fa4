#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "recon/types.hpp"

namespace recon {

struct FitConfig {
    int steps_phase1 = 100;
    /// Step size applied to the Gauss-Newton-diagonal preconditioned gradient.
    double learning_rate = 0.25;
    double momentum = 0.9;
    int steps_phase2 = 100;
    double densify_threshold = 0.05;
    double prune_opacity = 0.0;  // kept for parity; pruning is a no-op
    /// Unlock levels one at a time (coarsest first) over the step budget.
    bool coarse_to_fine = false;
};

void validate_fit_config(const FitConfig& config);

/// Observed frame-t positions for a subset of gaussians.
struct Correspondences {
    std::vector<std::uint32_t> indices;
    std::vector<Vec3f> targets;

    std::size_t size() const { return indices.size(); }
};

/// Gradient shaped like FrameDeformation::per_level.
struct DeltaGradient {
    std::vector<std::vector<Vec3d>> translations;
    std::vector<std::vector<Vec4d>> rotations;
};

struct LossAndGradient {
    double loss = 0.0;
    DeltaGradient gradient;
};

/// Flat parameter vector: for each level, n*3 translation entries followed
/// by n*4 rotation entries.
struct ParameterLayout {
    std::vector<std::size_t> anchor_counts;
    std::vector<std::size_t> offsets;  // start of each level block
    std::size_t total = 0;

    static ParameterLayout of(const AnchorHierarchy& hierarchy);
    std::size_t translation(std::size_t level, std::size_t anchor, int c) const {
        return offsets[level] + anchor * 3 + static_cast<std::size_t>(c);
    }
    std::size_t rotation(std::size_t level, std::size_t anchor, int c) const {
        return offsets[level] + anchor_counts[level] * 3 + anchor * 4 + static_cast<std::size_t>(c);
    }
    std::vector<double> flatten(const FrameDeformation& deltas) const;
    FrameDeformation unflatten(std::span<const double> params) const;
};

/// Mean squared distance between deformed and target positions over the
/// correspondences, with exact analytic gradients for every delta entry.
///
/// Positional supervision stands in for photometric rendering. In additive
/// mode positions do not depend on the rotation increments, so their
/// gradient is zero; in pivot mode it flows through the normalization.
LossAndGradient loss_and_gradient(std::span<const GaussianRecord> gaussians, const AnchorHierarchy& hierarchy,
                                  const FrameDeformation& deltas, const Correspondences& corr,
                                  CompositionMode mode);

/// Same objective on a flat double-precision parameter vector. Writes the
/// gradient into `gradient` when it is non-empty.
double loss_flat(std::span<const GaussianRecord> gaussians, const AnchorHierarchy& hierarchy,
                 std::span<const double> params, const Correspondences& corr, CompositionMode mode,
                 std::span<double> gradient = {});

struct FitResult {
    FrameDeformation deltas;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::vector<double> loss_history;  // loss after every accepted iteration
    int restarts = 0;
};

/// Phase 1: fits all per-level deltas jointly by preconditioned momentum
/// gradient descent, starting from `init`.
///
/// Steps that would raise the loss are rejected and the momentum is reset,
/// so the loss never increases. A trial loss above 1e6 x the initial loss,
/// or a non-finite one, throws NumericalError. Gaussians are read only.
FitResult fit_frame(std::span<const GaussianRecord> gaussians, const AnchorHierarchy& hierarchy,
                    const Correspondences& corr, const FitConfig& config, const FrameDeformation& init,
                    CompositionMode mode);

struct Densification {
    std::vector<GaussianRecord> added;
    std::vector<std::uint64_t> pruned;
};

/// Phase 2 surrogate: every correspondence whose residual after applying
/// `deltas` exceeds the threshold spawns a copy of its (deformed) source
/// gaussian placed at the target. Pruning is always empty.
Densification densify_residuals(std::span<const GaussianRecord> gaussians, const AnchorHierarchy& hierarchy,
                                const Correspondences& corr, const FrameDeformation& deltas,
                                double densify_threshold, CompositionMode mode);

/// Mean Euclidean distance between gaussians[indices] and targets.
double mean_position_error(std::span<const GaussianRecord> gaussians, const Correspondences& corr);

}  // namespace recon
