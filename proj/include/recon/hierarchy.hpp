#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "recon/types.hpp"

namespace recon {

/// Smallest M with M^3 >= n_anchor * ratio^(level-1). Exact integer result,
/// no floating cube root. Throws ConfigError on n_anchor < 1 or level < 1.
int grid_resolution(std::int64_t n_anchor, int level, int ratio = 3);

/// Grid-based farthest point sampling.
///
/// Splits the bounding box of `positions` into M^3 equal cells
/// (M = grid_resolution(n_anchor, level, ratio)) and keeps, for every
/// non-empty cell, the point closest (Euclidean) to the cell center. Axes
/// with zero extent collapse to a single cell. Anchors come out sorted by
/// lexicographic cell key (i, j, k); equidistant candidates resolve to the
/// lower point index. The returned level has an empty assignment.
///
/// Binning: i = min(M-1, floor((p - min) / extent * M)) evaluated in double.
LevelStructure sample_anchors(std::span<const Vec3f> positions, std::int64_t n_anchor, int level,
                              int ratio = 3);

/// Nearest anchor (L1) for every position; ties go to the lower ordinal.
std::vector<std::uint32_t> assign_clusters(std::span<const Vec3f> positions, const LevelStructure& level);

/// Per-level anchor targets, coarsest first: either config.anchor_counts or
/// ceil(n * finest_fraction) for the finest level with each coarser level
/// ceil(finer / level_ratio), clamped to >= 1.
std::vector<std::int64_t> level_targets(std::size_t gaussian_count, const StreamConfig& config);

AnchorHierarchy build_hierarchy(std::span<const GaussianRecord> gaussians, const StreamConfig& config,
                                std::int64_t frame_index = 0);

using NeighborTriple = std::array<std::uint32_t, 3>;

struct Rehierarchization {
    AnchorHierarchy hierarchy;
    /// neighbors[level][new anchor ordinal] = 3 nearest legacy ordinals.
    std::vector<std::vector<NeighborTriple>> neighbors;
};

/// Rebuilds the hierarchy from the current positions and maps every new
/// anchor to its 3 nearest legacy anchors of the same level (Euclidean,
/// ties by ordinal, padded with the nearest when fewer than 3 exist).
Rehierarchization rehierarchize(const SceneState& state, const StreamConfig& config);

/// 3 nearest legacy anchors (Euclidean, ties by ordinal) for each query.
std::vector<NeighborTriple> nearest_legacy_anchors(std::span<const Vec3f> queries,
                                                   std::span<const Vec3f> legacy);

/// Extends every level's assignment to gaussians appended after `first_new`.
void assign_appended(AnchorHierarchy& hierarchy, std::span<const Vec3f> positions, std::size_t first_new);

/// Removes the gaussians listed in `pruned` (sorted, unique) from the
/// hierarchy's index space. Throws FormatError when an anchor is pruned.
void remove_from_hierarchy(AnchorHierarchy& hierarchy, std::span<const std::uint64_t> pruned,
                           std::size_t gaussian_count);

std::vector<Vec3f> positions_of(std::span<const GaussianRecord> gaussians);

}  // namespace recon
