#include "recon/hierarchy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <tuple>

#include "recon/errors.hpp"

namespace recon {

int grid_resolution(std::int64_t n_anchor, int level, int ratio) {
    if (n_anchor < 1) throw ConfigError("grid_resolution: anchor count must be >= 1");
    if (level < 1) throw ConfigError("grid_resolution: level must be >= 1");
    if (ratio < 1) throw ConfigError("grid_resolution: ratio must be >= 1");

    constexpr std::uint64_t kLimit = std::uint64_t{1} << 60;
    std::uint64_t target = static_cast<std::uint64_t>(n_anchor);
    for (int l = 1; l < level; ++l) {
        if (target > kLimit / static_cast<std::uint64_t>(ratio))
            throw ConfigError("grid_resolution: anchor target overflows");
        target *= static_cast<std::uint64_t>(ratio);
    }

    auto cube = [](std::uint64_t m) { return m * m * m; };
    auto m = static_cast<std::uint64_t>(std::llround(std::cbrt(static_cast<double>(target))));
    m = std::max<std::uint64_t>(m, 1);
    while (cube(m) < target) ++m;
    while (m > 1 && cube(m - 1) >= target) --m;
    return static_cast<int>(m);
}

std::vector<Vec3f> positions_of(std::span<const GaussianRecord> gaussians) {
    std::vector<Vec3f> out;
    out.reserve(gaussians.size());
    for (const auto& g : gaussians) out.push_back(g.position);
    return out;
}

LevelStructure sample_anchors(std::span<const Vec3f> positions, std::int64_t n_anchor, int level, int ratio) {
    if (positions.empty()) throw ConfigError("sample_anchors: no positions");
    const int m = grid_resolution(n_anchor, level, ratio);

    LevelStructure out;
    out.level = level;
    out.grid_resolution = m;
    out.bounds_min = positions.front();
    out.bounds_max = positions.front();
    for (const auto& p : positions) {
        if (!p.allFinite()) throw ConfigError("sample_anchors: non-finite position");
        out.bounds_min = out.bounds_min.cwiseMin(p);
        out.bounds_max = out.bounds_max.cwiseMax(p);
    }

    const Vec3d lo = out.bounds_min.cast<double>();
    const Vec3d extent = out.bounds_max.cast<double>() - lo;
    const auto cells = static_cast<std::uint64_t>(m);

    struct Candidate {
        std::uint64_t key;
        double dist2;
        std::uint32_t index;
    };
    std::vector<Candidate> candidates;
    candidates.reserve(positions.size());
    for (std::size_t n = 0; n < positions.size(); ++n) {
        const Vec3d p = positions[n].cast<double>();
        std::uint64_t key = 0;
        double d2 = 0.0;
        for (int axis = 0; axis < 3; ++axis) {
            std::uint64_t cell = 0;
            double center = lo[axis];
            if (extent[axis] > 0.0) {
                const double t = std::floor((p[axis] - lo[axis]) / extent[axis] * m);
                cell = std::min<std::uint64_t>(cells - 1, static_cast<std::uint64_t>(std::max(t, 0.0)));
                center = lo[axis] + (static_cast<double>(cell) + 0.5) * extent[axis] / m;
            }
            key = key * cells + cell;
            d2 += (p[axis] - center) * (p[axis] - center);
        }
        candidates.push_back({key, d2, static_cast<std::uint32_t>(n)});
    }
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        return std::tie(a.key, a.dist2, a.index) < std::tie(b.key, b.dist2, b.index);
    });
    for (std::size_t i = 0; i < candidates.size(); ++i)
        if (i == 0 || candidates[i].key != candidates[i - 1].key)
            out.anchor_indices.push_back(candidates[i].index);

    out.target_anchors = n_anchor;
    return out;
}

std::vector<std::uint32_t> assign_clusters(std::span<const Vec3f> positions, const LevelStructure& level) {
    const auto& anchors = level.anchor_indices;
    if (anchors.empty()) throw ConfigError("assign_clusters: level has no anchors");

    // Anchors sorted by x; the search walks outward and stops once |dx| alone
    // exceeds the best L1 distance, which keeps the result exact.
    struct Entry {
        double x, y, z;
        std::uint32_t ordinal;
    };
    std::vector<Entry> sorted;
    sorted.reserve(anchors.size());
    for (std::size_t a = 0; a < anchors.size(); ++a) {
        if (anchors[a] >= positions.size()) throw ConfigError("assign_clusters: anchor index out of range");
        const Vec3f& p = positions[anchors[a]];
        sorted.push_back({p.x(), p.y(), p.z(), static_cast<std::uint32_t>(a)});
    }
    std::sort(sorted.begin(), sorted.end(),
              [](const Entry& a, const Entry& b) { return std::tie(a.x, a.ordinal) < std::tie(b.x, b.ordinal); });

    std::vector<std::uint32_t> out(positions.size());
    for (std::size_t n = 0; n < positions.size(); ++n) {
        const double px = positions[n].x(), py = positions[n].y(), pz = positions[n].z();
        double best = std::numeric_limits<double>::infinity();
        std::uint32_t best_ordinal = std::numeric_limits<std::uint32_t>::max();
        auto consider = [&](const Entry& e) {
            const double d = std::abs(px - e.x) + std::abs(py - e.y) + std::abs(pz - e.z);
            if (d < best || (d == best && e.ordinal < best_ordinal)) {
                best = d;
                best_ordinal = e.ordinal;
            }
        };
        const auto start = std::lower_bound(sorted.begin(), sorted.end(), px,
                                            [](const Entry& e, double x) { return e.x < x; });
        for (auto it = start; it != sorted.end(); ++it) {
            if (std::abs(it->x - px) > best) break;
            consider(*it);
        }
        for (auto it = start; it != sorted.begin();) {
            --it;
            if (std::abs(it->x - px) > best) break;
            consider(*it);
        }
        out[n] = best_ordinal;
    }
    return out;
}

std::vector<std::int64_t> level_targets(std::size_t gaussian_count, const StreamConfig& config) {
    validate_config(config);
    const auto levels = static_cast<std::size_t>(config.levels);
    std::vector<std::int64_t> targets(levels, 1);
    if (!config.anchor_counts.empty()) {
        for (std::size_t l = 0; l < levels; ++l) targets[l] = config.anchor_counts[l];
        return targets;
    }
    const auto n = static_cast<std::uint64_t>(gaussian_count);
    const std::uint64_t num = config.finest_fraction_num, den = config.finest_fraction_den;
    auto finest = static_cast<std::int64_t>((n * num + den - 1) / den);
    targets[levels - 1] = std::max<std::int64_t>(finest, 1);
    for (std::size_t l = levels - 1; l > 0; --l) {
        const std::int64_t finer = targets[l];
        targets[l - 1] = std::max<std::int64_t>((finer + config.level_ratio - 1) / config.level_ratio, 1);
    }
    return targets;
}

AnchorHierarchy build_hierarchy(std::span<const GaussianRecord> gaussians, const StreamConfig& config,
                                std::int64_t frame_index) {
    if (gaussians.empty()) throw ConfigError("build_hierarchy: no gaussians");
    const auto targets = level_targets(gaussians.size(), config);
    const auto positions = positions_of(gaussians);

    AnchorHierarchy h;
    h.built_at_frame = frame_index;
    for (int l = 1; l <= config.levels; ++l) {
        // Grid resolution follows the coarsest target scaled by ratio^(l-1).
        LevelStructure level = sample_anchors(positions, targets[0], l, config.level_ratio);
        level.target_anchors = targets[static_cast<std::size_t>(l - 1)];
        level.assignment = assign_clusters(positions, level);
        h.levels.push_back(std::move(level));
    }
    return h;
}

std::vector<NeighborTriple> nearest_legacy_anchors(std::span<const Vec3f> queries, std::span<const Vec3f> legacy) {
    if (legacy.empty()) throw ConfigError("nearest_legacy_anchors: no legacy anchors");
    std::vector<NeighborTriple> out;
    out.reserve(queries.size());
    std::vector<std::pair<double, std::uint32_t>> dist(legacy.size());
    for (const auto& q : queries) {
        const Vec3d qd = q.cast<double>();
        for (std::size_t a = 0; a < legacy.size(); ++a)
            dist[a] = {(legacy[a].cast<double>() - qd).squaredNorm(), static_cast<std::uint32_t>(a)};
        const std::size_t k = std::min<std::size_t>(3, dist.size());
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
        NeighborTriple t{};
        for (std::size_t i = 0; i < 3; ++i) t[i] = dist[i < k ? i : 0].second;
        out.push_back(t);
    }
    return out;
}

Rehierarchization rehierarchize(const SceneState& state, const StreamConfig& config) {
    Rehierarchization out;
    out.hierarchy = build_hierarchy(state.gaussians, config, state.frame_index);
    if (state.hierarchy.levels.size() != out.hierarchy.levels.size())
        throw ConfigError("rehierarchize: legacy hierarchy has a different level count");

    const auto positions = positions_of(state.gaussians);
    for (std::size_t l = 0; l < out.hierarchy.levels.size(); ++l) {
        std::vector<Vec3f> fresh, legacy;
        for (auto idx : out.hierarchy.levels[l].anchor_indices) fresh.push_back(positions[idx]);
        for (auto idx : state.hierarchy.levels[l].anchor_indices) {
            if (idx >= positions.size()) throw ConfigError("rehierarchize: legacy anchor out of range");
            legacy.push_back(positions[idx]);
        }
        out.neighbors.push_back(nearest_legacy_anchors(fresh, legacy));
    }
    return out;
}

void assign_appended(AnchorHierarchy& hierarchy, std::span<const Vec3f> positions, std::size_t first_new) {
    if (first_new >= positions.size()) return;
    for (auto& level : hierarchy.levels) {
        // Score only the appended tail: lay out [anchor positions..., tail...]
        // and let anchors refer to the leading block by ordinal.
        std::vector<Vec3f> joined;
        joined.reserve(level.anchor_count() + positions.size() - first_new);
        for (auto idx : level.anchor_indices) joined.push_back(positions[idx]);
        joined.insert(joined.end(), positions.begin() + static_cast<std::ptrdiff_t>(first_new), positions.end());

        LevelStructure probe;
        probe.anchor_indices.resize(level.anchor_count());
        std::iota(probe.anchor_indices.begin(), probe.anchor_indices.end(), 0u);
        const auto all = assign_clusters(joined, probe);

        level.assignment.resize(first_new);
        level.assignment.insert(level.assignment.end(),
                                all.begin() + static_cast<std::ptrdiff_t>(level.anchor_count()), all.end());
    }
}

void remove_from_hierarchy(AnchorHierarchy& hierarchy, std::span<const std::uint64_t> pruned,
                           std::size_t gaussian_count) {
    if (pruned.empty()) return;
    std::vector<std::int64_t> remap(gaussian_count);
    std::size_t next = 0;
    std::size_t p = 0;
    for (std::size_t g = 0; g < gaussian_count; ++g) {
        if (p < pruned.size() && pruned[p] == g) {
            remap[g] = -1;
            ++p;
        } else {
            remap[g] = static_cast<std::int64_t>(next++);
        }
    }
    for (auto& level : hierarchy.levels) {
        for (auto& idx : level.anchor_indices) {
            if (remap[idx] < 0)
                throw FormatError("pruned gaussian " + std::to_string(idx) + " is an anchor of level " +
                                  std::to_string(level.level));
            idx = static_cast<std::uint32_t>(remap[idx]);
        }
        std::vector<std::uint32_t> kept;
        kept.reserve(next);
        for (std::size_t g = 0; g < gaussian_count; ++g)
            if (remap[g] >= 0) kept.push_back(level.assignment[g]);
        level.assignment = std::move(kept);
    }
}

}  // namespace recon
