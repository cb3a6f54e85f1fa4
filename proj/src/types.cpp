#include "recon/types.hpp"

#include <cmath>
#include <cstring>

#include <Eigen/Geometry>

#include "recon/errors.hpp"

namespace recon {

Eigen::Matrix3d covariance(const GaussianRecord& g) {
    const Eigen::Quaterniond q(g.orientation[0], g.orientation[1], g.orientation[2],
                               g.orientation[3]);
    const Eigen::Matrix3d r = q.normalized().toRotationMatrix();
    const Eigen::Matrix3d s = g.scale.cast<double>().asDiagonal();
    return r * s * s.transpose() * r.transpose();
}

AnchorDeltaSet AnchorDeltaSet::zeros(std::size_t n) {
    AnchorDeltaSet d;
    d.translations.assign(n, Vec3f::Zero());
    d.rotations.assign(n, Vec4f::Zero());
    return d;
}

FrameDeformation FrameDeformation::zeros_like(const AnchorHierarchy& h) {
    FrameDeformation f;
    for (const auto& level : h.levels) f.per_level.push_back(AnchorDeltaSet::zeros(level.anchor_count()));
    return f;
}

std::string to_string(Quantization q) {
    switch (q) {
        case Quantization::full32: return "full32";
        case Quantization::half16: return "half16";
        case Quantization::fixed16: return "fixed16";
    }
    return "unknown";
}

std::string to_string(CompositionMode m) {
    return m == CompositionMode::pivot ? "pivot" : "additive";
}

Quantization parse_quantization(const std::string& s) {
    if (s == "full32") return Quantization::full32;
    if (s == "half16") return Quantization::half16;
    if (s == "fixed16") return Quantization::fixed16;
    throw ConfigError("unknown quantization '" + s + "' (expected full32, half16 or fixed16)");
}

CompositionMode parse_composition_mode(const std::string& s) {
    if (s == "additive") return CompositionMode::additive;
    if (s == "pivot") return CompositionMode::pivot;
    throw ConfigError("unknown composition mode '" + s + "' (expected additive or pivot)");
}

void validate_config(const StreamConfig& c) {
    if (c.levels < 1 || c.levels > 4) throw ConfigError("levels must be in [1, 4]");
    if (c.finest_fraction_num < 1 || c.finest_fraction_den < 1 ||
        c.finest_fraction_num > c.finest_fraction_den)
        throw ConfigError("finest_fraction must lie in (0, 1]");
    if (c.level_ratio < 1) throw ConfigError("level_ratio must be >= 1");
    if (c.reconfig_period < 1) throw ConfigError("reconfig_period must be >= 1");
    if (c.phase1_steps < 0 || c.phase2_steps < 0) throw ConfigError("step counts must be >= 0");
    if (!(c.densify_threshold > 0.0)) throw ConfigError("densify_threshold must be positive");
    if (!c.anchor_counts.empty()) {
        if (c.anchor_counts.size() != static_cast<std::size_t>(c.levels))
            throw ConfigError("anchor_counts must list one target per level");
        for (auto n : c.anchor_counts)
            if (n < 1) throw ConfigError("anchor_counts entries must be >= 1");
    }
}

bool normalize_quaternion(Vec4f& q) {
    const double n = q.cast<double>().norm();
    if (!(n >= 1e-12) || !std::isfinite(n)) return false;
    q = (q.cast<double>() / n).cast<float>();
    return true;
}

namespace {

template <typename V>
bool all_finite(const V& v) {
    for (int i = 0; i < v.size(); ++i)
        if (!std::isfinite(v[i])) return false;
    return true;
}

}  // namespace

std::vector<Violation> validate_state(const SceneState& state) {
    std::vector<Violation> out;
    const auto n = static_cast<std::int64_t>(state.gaussians.size());
    for (std::int64_t i = 0; i < n; ++i) {
        const auto& g = state.gaussians[static_cast<std::size_t>(i)];
        if (!all_finite(g.position)) out.push_back({i, "position", "non-finite position"});
        if (!all_finite(g.scale)) {
            out.push_back({i, "scale", "non-finite scale"});
        } else if ((g.scale.array() <= 0.0f).any()) {
            out.push_back({i, "scale", "non-positive scale component"});
        }
        if (!all_finite(g.orientation)) {
            out.push_back({i, "orientation", "non-finite orientation"});
        } else if (std::abs(g.orientation.cast<double>().norm() - 1.0) > 1e-6) {
            out.push_back({i, "orientation", "orientation norm differs from 1 by more than 1e-6"});
        }
        if (!std::isfinite(g.opacity)) {
            out.push_back({i, "opacity", "non-finite opacity"});
        } else if (g.opacity < 0.0f || g.opacity > 1.0f) {
            out.push_back({i, "opacity", "opacity outside [0, 1]"});
        }
        for (float c : g.sh) {
            if (!std::isfinite(c)) {
                out.push_back({i, "sh", "non-finite SH coefficient"});
                break;
            }
        }
    }

    for (const auto& level : state.hierarchy.levels) {
        const std::string tag = "hierarchy.level" + std::to_string(level.level);
        if (level.anchor_indices.empty()) {
            out.push_back({-1, tag, "level has no anchors"});
            continue;
        }
        if (static_cast<std::int64_t>(level.assignment.size()) != n) {
            out.push_back({-1, tag, "assignment size differs from gaussian count"});
            continue;
        }
        std::vector<bool> seen(static_cast<std::size_t>(n), false);
        for (std::size_t a = 0; a < level.anchor_indices.size(); ++a) {
            const auto idx = level.anchor_indices[a];
            if (idx >= static_cast<std::uint64_t>(n)) {
                out.push_back({static_cast<std::int64_t>(idx), tag, "anchor index out of range"});
                continue;
            }
            if (seen[idx]) out.push_back({static_cast<std::int64_t>(idx), tag, "duplicate anchor"});
            seen[idx] = true;
            if (level.assignment[idx] != a)
                out.push_back({static_cast<std::int64_t>(idx), tag, "anchor not assigned to its own cluster"});
        }
        for (std::int64_t i = 0; i < n; ++i)
            if (level.assignment[static_cast<std::size_t>(i)] >= level.anchor_indices.size())
                out.push_back({i, tag, "assignment references a missing anchor"});
    }
    return out;
}

bool bit_equal(const GaussianRecord& a, const GaussianRecord& b) {
    auto same = [](const float* x, const float* y, std::size_t count) {
        return std::memcmp(x, y, count * sizeof(float)) == 0;
    };
    return same(a.position.data(), b.position.data(), 3) && same(a.scale.data(), b.scale.data(), 3) &&
           same(a.orientation.data(), b.orientation.data(), 4) && same(&a.opacity, &b.opacity, 1) &&
           same(a.sh.data(), b.sh.data(), a.sh.size());
}

bool bit_equal(const std::vector<GaussianRecord>& a, const std::vector<GaussianRecord>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!bit_equal(a[i], b[i])) return false;
    return true;
}

namespace {

struct Fnv1a {
    std::uint64_t h = 1469598103934665603ull;
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= c[i];
            h *= 1099511628211ull;
        }
    }
};

}  // namespace

std::uint64_t state_checksum(const SceneState& state) {
    Fnv1a f;
    const std::uint64_t n = state.gaussians.size();
    f.bytes(&n, sizeof n);
    for (const auto& g : state.gaussians) {
        f.bytes(g.position.data(), 3 * sizeof(float));
        f.bytes(g.scale.data(), 3 * sizeof(float));
        f.bytes(g.orientation.data(), 4 * sizeof(float));
        f.bytes(&g.opacity, sizeof(float));
        f.bytes(g.sh.data(), g.sh.size() * sizeof(float));
    }
    for (const auto& level : state.hierarchy.levels) {
        f.bytes(level.anchor_indices.data(), level.anchor_indices.size() * sizeof(std::uint32_t));
        f.bytes(level.assignment.data(), level.assignment.size() * sizeof(std::uint32_t));
    }
    return f.h;
}

}  // namespace recon
