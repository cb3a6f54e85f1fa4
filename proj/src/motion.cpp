#include "recon/motion.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "recon/errors.hpp"

namespace recon {

Vec4d quat_multiply(const Vec4d& a, const Vec4d& b) {
    return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
            a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
            a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
            a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

Eigen::Matrix3d quat_to_matrix(const Vec4d& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Eigen::Matrix3d r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

Vec4d quat_from_axis_angle(const Vec3d& axis, double angle) {
    const Vec3d u = axis.normalized();
    const double s = std::sin(0.5 * angle);
    return {std::cos(0.5 * angle), u.x() * s, u.y() * s, u.z() * s};
}

Vec4d canonical_sign(const Vec4d& q) {
    for (int i = 0; i < 4; ++i) {
        if (std::abs(q[i]) > 1e-12) return q[i] < 0 ? Vec4d(-q) : q;
    }
    return q;
}

void jacobi_eigen4(const Eigen::Matrix4d& m, Eigen::Vector4d& values, Eigen::Matrix4d& vectors) {
    Eigen::Matrix4d a = m;
    vectors.setIdentity();
    const double scale = std::max(m.norm(), 1e-300);
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < 4; ++p)
            for (int q = p + 1; q < 4; ++q) off += a(p, q) * a(p, q);
        if (std::sqrt(off) <= 1e-15 * scale) {
            values = a.diagonal();
            return;
        }
        for (int p = 0; p < 4; ++p) {
            for (int q = p + 1; q < 4; ++q) {
                if (a(p, q) == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < 4; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < 4; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (int k = 0; k < 4; ++k) {
                    const double vkp = vectors(k, p), vkq = vectors(k, q);
                    vectors(k, p) = c * vkp - s * vkq;
                    vectors(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    throw NumericalError("jacobi_eigen4: no convergence after 64 sweeps");
}

EigenPair symmetric4_max_eigenvector(const Eigen::Matrix4d& m) {
    if (!m.allFinite()) throw NumericalError("symmetric4_max_eigenvector: non-finite matrix");
    const double norm = m.norm();
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, norm))
        throw NumericalError("symmetric4_max_eigenvector: matrix is not symmetric");
    if (norm == 0.0) return {0.0, Vec4d(1, 0, 0, 0), false};

    // Gershgorin shift makes every eigenvalue non-negative, so the largest
    // one is also the largest in magnitude.
    double shift = 0.0;
    for (int i = 0; i < 4; ++i) {
        double radius = 0.0;
        for (int j = 0; j < 4; ++j)
            if (j != i) radius += std::abs(m(i, j));
        shift = std::max(shift, radius - m(i, i));
    }
    const Eigen::Matrix4d b = m + shift * Eigen::Matrix4d::Identity();

    Vec4d v(1.0, std::sqrt(2.0), std::sqrt(3.0), std::sqrt(5.0));
    v.normalize();
    for (int iter = 0; iter < 200; ++iter) {
        const Vec4d w = b * v;
        const double wn = w.norm();
        if (wn == 0.0) break;
        v = w / wn;
        const double lambda = v.dot(m * v);
        if ((m * v - lambda * v).norm() <= 1e-12 * norm) return {lambda, canonical_sign(v), false};
    }

    Eigen::Vector4d values;
    Eigen::Matrix4d vectors;
    jacobi_eigen4(m, values, vectors);
    int best = 0;
    for (int i = 1; i < 4; ++i)
        if (values[i] > values[best]) best = i;
    return {values[best], canonical_sign(vectors.col(best).normalized()), true};
}

namespace {

EigenPair average_pair(std::span<const Vec4d> quats, std::size_t& used) {
    std::vector<Vec4d> q;
    for (const auto& x : quats) {
        if (!x.allFinite()) throw NumericalError("average_quaternions: non-finite input");
        if (!x.isZero(0.0)) q.push_back(canonical_sign(x));
    }
    used = q.size();
    if (q.empty()) throw NumericalError("average_quaternions: all inputs are zero");
    std::sort(q.begin(), q.end(), [](const Vec4d& a, const Vec4d& b) {
        return std::lexicographical_compare(a.data(), a.data() + 4, b.data(), b.data() + 4);
    });
    Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
    for (const auto& x : q) m += x * x.transpose();
    return symmetric4_max_eigenvector(m);
}

}  // namespace

Vec4d average_quaternions(std::span<const Vec4d> quats) {
    std::size_t used = 0;
    return average_pair(quats, used).vector;
}

Vec4d average_quaternions(const Vec4d& q1, const Vec4d& q2, const Vec4d& q3) {
    const std::array<Vec4d, 3> q{q1, q2, q3};
    return average_quaternions(q);
}

void check_consistent(const AnchorHierarchy& hierarchy, const FrameDeformation& deltas) {
    if (deltas.per_level.size() != hierarchy.levels.size())
        throw ConfigError("deformation has " + std::to_string(deltas.per_level.size()) + " levels, hierarchy has " +
                          std::to_string(hierarchy.levels.size()));
    for (std::size_t l = 0; l < deltas.per_level.size(); ++l) {
        const auto& d = deltas.per_level[l];
        const auto n = hierarchy.levels[l].anchor_count();
        if (d.translations.size() != n || d.rotations.size() != n)
            throw ConfigError("level " + std::to_string(l + 1) + ": " + std::to_string(d.translations.size()) +
                              " translations / " + std::to_string(d.rotations.size()) + " rotations for " +
                              std::to_string(n) + " anchors");
        for (std::size_t a = 0; a < n; ++a)
            if (!d.translations[a].allFinite() || !d.rotations[a].allFinite())
                throw ConfigError("level " + std::to_string(l + 1) + ": non-finite delta at anchor " +
                                  std::to_string(a));
    }
}

ComposedDeformation compose_deformation(const AnchorHierarchy& hierarchy, const FrameDeformation& deltas) {
    check_consistent(hierarchy, deltas);
    const std::size_t n = hierarchy.levels.empty() ? 0 : hierarchy.levels.front().assignment.size();
    ComposedDeformation out;
    out.translation.assign(n, Vec3f::Zero());
    out.rotation.assign(n, Vec4f::Zero());
    for (std::size_t l = 0; l < hierarchy.levels.size(); ++l) {
        const auto& level = hierarchy.levels[l];
        if (level.assignment.size() != n) throw ConfigError("levels disagree on gaussian count");
        const auto& d = deltas.per_level[l];
        for (std::size_t g = 0; g < n; ++g) {
            const auto a = level.assignment[g];
            out.translation[g] += d.translations[a];
            out.rotation[g] += d.rotations[a];
        }
    }
    return out;
}

std::vector<GaussianRecord> apply_composed(std::span<const GaussianRecord> gaussians,
                                           const ComposedDeformation& composed) {
    if (composed.translation.size() != gaussians.size() || composed.rotation.size() != gaussians.size())
        throw ConfigError("composed deformation size differs from gaussian count");
    std::vector<GaussianRecord> out(gaussians.begin(), gaussians.end());
    for (std::size_t g = 0; g < out.size(); ++g) {
        out[g].position += composed.translation[g];
        const Vec4f& dq = composed.rotation[g];
        if (dq.isZero(0.0f)) continue;
        const Vec4d q = out[g].orientation.cast<double>() + dq.cast<double>();
        const double n = q.norm();
        if (!(n >= 1e-8))
            throw NumericalError("degenerate orientation update for gaussian " + std::to_string(g));
        out[g].orientation = (q / n).cast<float>();
    }
    return out;
}

std::vector<GaussianRecord> apply_deformation(std::span<const GaussianRecord> gaussians,
                                              const AnchorHierarchy& hierarchy, const FrameDeformation& deltas,
                                              CompositionMode mode) {
    if (mode == CompositionMode::additive) return apply_composed(gaussians, compose_deformation(hierarchy, deltas));

    check_consistent(hierarchy, deltas);
    for (const auto& level : hierarchy.levels)
        if (level.assignment.size() != gaussians.size())
            throw ConfigError("hierarchy assignment size differs from gaussian count");

    struct AnchorMotion {
        bool rotates = false;
        Vec4d q = Vec4d(1, 0, 0, 0);
        Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
        Vec3d pivot = Vec3d::Zero();
        Vec3d shift = Vec3d::Zero();
    };
    std::vector<std::vector<AnchorMotion>> motions(hierarchy.levels.size());
    for (std::size_t l = 0; l < hierarchy.levels.size(); ++l) {
        const auto& level = hierarchy.levels[l];
        const auto& d = deltas.per_level[l];
        for (std::size_t a = 0; a < level.anchor_count(); ++a) {
            AnchorMotion m;
            m.pivot = gaussians[level.anchor_indices[a]].position.cast<double>();
            m.shift = d.translations[a].cast<double>();
            if (!d.rotations[a].isZero(0.0f)) {
                const Vec4d q = Vec4d(1, 0, 0, 0) + d.rotations[a].cast<double>();
                const double n = q.norm();
                if (!(n >= 1e-8))
                    throw NumericalError("degenerate rotation increment at level " + std::to_string(l + 1) +
                                         " anchor " + std::to_string(a));
                m.rotates = true;
                m.q = q / n;
                m.r = quat_to_matrix(m.q);
            }
            motions[l].push_back(m);
        }
    }

    std::vector<GaussianRecord> out(gaussians.begin(), gaussians.end());
    for (std::size_t g = 0; g < out.size(); ++g) {
        Vec3d x = gaussians[g].position.cast<double>();
        Vec4d q = gaussians[g].orientation.cast<double>();
        bool rotated = false;
        for (std::size_t l = 0; l < hierarchy.levels.size(); ++l) {
            const auto& m = motions[l][hierarchy.levels[l].assignment[g]];
            if (m.rotates) {
                x = m.r * (x - m.pivot) + m.pivot;
                q = quat_multiply(m.q, q);
                rotated = true;
            }
            x += m.shift;
        }
        out[g].position = x.cast<float>();
        if (rotated) {
            const double n = q.norm();
            if (!(n >= 1e-8)) throw NumericalError("degenerate orientation for gaussian " + std::to_string(g));
            out[g].orientation = (q / n).cast<float>();
        }
    }
    return out;
}

AnchorDeltaSet inherit_deformation(std::span<const NeighborTriple> neighbors, const AnchorDeltaSet& legacy,
                                   RotationInheritance policy) {
    if (legacy.size() == 0) throw ConfigError("inherit_deformation: legacy level is empty");
    if (legacy.rotations.size() != legacy.translations.size())
        throw ConfigError("inherit_deformation: legacy translation/rotation counts differ");

    AnchorDeltaSet out;
    out.translations.reserve(neighbors.size());
    out.rotations.reserve(neighbors.size());
    for (const auto& triple : neighbors) {
        Vec3d sum = Vec3d::Zero();
        std::array<Vec4d, 3> q;
        for (std::size_t i = 0; i < 3; ++i) {
            if (triple[i] >= legacy.size()) throw ConfigError("inherit_deformation: neighbor ordinal out of range");
            sum += legacy.translations[triple[i]].cast<double>();
            q[i] = legacy.rotations[triple[i]].cast<double>();
        }
        out.translations.push_back((sum / 3.0).cast<float>());

        if (std::all_of(q.begin(), q.end(), [](const Vec4d& x) { return x.isZero(0.0); })) {
            out.rotations.push_back(Vec4f::Zero());
            continue;
        }
        std::size_t used = 0;
        const EigenPair pair = average_pair(q, used);
        Vec4d v = pair.vector;
        if (policy == RotationInheritance::magnitude) {
            const auto first = std::find_if(q.begin(), q.end(), [](const Vec4d& x) { return !x.isZero(0.0); });
            if (v.dot(*first) < 0.0) v = -v;
            v *= std::sqrt(std::max(pair.value, 0.0) / static_cast<double>(used));
        }
        out.rotations.push_back(v.cast<float>());
    }
    return out;
}

}  // namespace recon
