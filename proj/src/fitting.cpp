#include "recon/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include <Eigen/Geometry>

#include "recon/errors.hpp"
#include "recon/motion.hpp"

namespace recon {

void validate_fit_config(const FitConfig& c) {
    if (c.steps_phase1 < 0 || c.steps_phase2 < 0) throw ConfigError("fit steps must be >= 0");
    if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate))
        throw ConfigError("learning_rate must be positive");
    if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(c.densify_threshold > 0.0)) throw ConfigError("densify_threshold must be positive");
}

ParameterLayout ParameterLayout::of(const AnchorHierarchy& hierarchy) {
    ParameterLayout p;
    for (const auto& level : hierarchy.levels) {
        p.offsets.push_back(p.total);
        p.anchor_counts.push_back(level.anchor_count());
        p.total += level.anchor_count() * 7;
    }
    return p;
}

std::vector<double> ParameterLayout::flatten(const FrameDeformation& deltas) const {
    std::vector<double> out(total, 0.0);
    for (std::size_t l = 0; l < anchor_counts.size(); ++l) {
        for (std::size_t a = 0; a < anchor_counts[l]; ++a) {
            for (int c = 0; c < 3; ++c) out[translation(l, a, c)] = deltas.per_level[l].translations[a][c];
            for (int c = 0; c < 4; ++c) out[rotation(l, a, c)] = deltas.per_level[l].rotations[a][c];
        }
    }
    return out;
}

FrameDeformation ParameterLayout::unflatten(std::span<const double> params) const {
    FrameDeformation out;
    for (std::size_t l = 0; l < anchor_counts.size(); ++l) {
        AnchorDeltaSet d = AnchorDeltaSet::zeros(anchor_counts[l]);
        for (std::size_t a = 0; a < anchor_counts[l]; ++a) {
            for (int c = 0; c < 3; ++c) d.translations[a][c] = static_cast<float>(params[translation(l, a, c)]);
            for (int c = 0; c < 4; ++c) d.rotations[a][c] = static_cast<float>(params[rotation(l, a, c)]);
        }
        out.per_level.push_back(std::move(d));
    }
    return out;
}

namespace {

void check_correspondences(const Correspondences& corr, std::size_t gaussian_count) {
    if (corr.indices.empty()) throw ConfigError("correspondences are empty");
    if (corr.indices.size() != corr.targets.size())
        throw ConfigError("correspondence indices and targets differ in length");
    std::unordered_set<std::uint32_t> seen;
    for (std::size_t i = 0; i < corr.indices.size(); ++i) {
        if (corr.indices[i] >= gaussian_count)
            throw ConfigError("correspondence index " + std::to_string(corr.indices[i]) + " out of range");
        if (!seen.insert(corr.indices[i]).second)
            throw ConfigError("duplicate correspondence index " + std::to_string(corr.indices[i]));
        if (!corr.targets[i].allFinite()) throw ConfigError("non-finite correspondence target");
    }
}

/// Forward/backward evaluation of the positional objective.
class Objective {
public:
    Objective(std::span<const GaussianRecord> gaussians, const AnchorHierarchy& hierarchy,
              const Correspondences& corr, CompositionMode mode)
        : mode_(mode), layout_(ParameterLayout::of(hierarchy)), levels_(hierarchy.levels.size()) {
        check_correspondences(corr, gaussians.size());
        for (const auto& level : hierarchy.levels)
            if (level.assignment.size() != gaussians.size())
                throw ConfigError("hierarchy assignment size differs from gaussian count");
        const std::size_t n = corr.size();
        origin_.reserve(n);
        target_.reserve(n);
        ordinal_.reserve(n * levels_);
        pivot_.reserve(n * levels_);
        for (std::size_t c = 0; c < n; ++c) {
            const auto g = corr.indices[c];
            origin_.push_back(gaussians[g].position.cast<double>());
            target_.push_back(corr.targets[c].cast<double>());
            for (const auto& level : hierarchy.levels) {
                const auto a = level.assignment[g];
                ordinal_.push_back(a);
                pivot_.push_back(gaussians[level.anchor_indices[a]].position.cast<double>());
            }
        }
    }

    const ParameterLayout& layout() const { return layout_; }

    /// Returns the loss; adds the gradient into `grad` and the Gauss-Newton
    /// diagonal into `diag` when those spans are non-empty.
    double evaluate(std::span<const double> params, std::span<double> grad, std::span<double> diag) {
        if (params.size() != layout_.total) throw ConfigError("parameter vector has the wrong size");
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
        if (!diag.empty()) std::fill(diag.begin(), diag.end(), 0.0);
        prepare_rotations(params);

        const double inv_n = 1.0 / static_cast<double>(origin_.size());
        double loss = 0.0;
        std::vector<Vec3d> offsets(levels_);
        for (std::size_t c = 0; c < origin_.size(); ++c) {
            Vec3d x = origin_[c];
            for (std::size_t l = 0; l < levels_; ++l) {
                const auto a = ordinal_[c * levels_ + l];
                if (mode_ == CompositionMode::pivot) {
                    const Vec3d& p = pivot_[c * levels_ + l];
                    offsets[l] = x - p;
                    const Rotation& rot = rotation_[rotation_offset_[l] + a];
                    if (!rot.identity) x = rot.r * offsets[l] + p;
                }
                for (int k = 0; k < 3; ++k) x[k] += params[layout_.translation(l, a, k)];
            }
            const Vec3d residual = x - target_[c];
            loss += residual.squaredNorm();

            if (!grad.empty())
                backward(c, 2.0 * inv_n * residual, offsets, [&](std::size_t i, double v) { grad[i] += v; });
            if (!diag.empty()) {
                for (int k = 0; k < 3; ++k)
                    backward(c, Vec3d::Unit(k), offsets, [&](std::size_t i, double v) { diag[i] += 2.0 * inv_n * v * v; });
            }
        }
        return loss * inv_n;
    }

private:
    struct Rotation {
        bool identity = true;
        double norm = 1.0;
        Vec4d q = Vec4d(1, 0, 0, 0);
        Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
    };

    void prepare_rotations(std::span<const double> params) {
        if (mode_ != CompositionMode::pivot) return;
        rotation_.clear();
        rotation_offset_.clear();
        for (std::size_t l = 0; l < levels_; ++l) {
            rotation_offset_.push_back(rotation_.size());
            for (std::size_t a = 0; a < layout_.anchor_counts[l]; ++a) {
                Vec4d dq;
                for (int k = 0; k < 4; ++k) dq[k] = params[layout_.rotation(l, a, k)];
                Rotation rot;
                if (!dq.isZero(0.0)) {
                    const Vec4d raw = Vec4d(1, 0, 0, 0) + dq;
                    rot.norm = raw.norm();
                    if (!(rot.norm >= 1e-8))
                        throw NumericalError("degenerate rotation increment at level " + std::to_string(l + 1) +
                                             " anchor " + std::to_string(a));
                    rot.identity = false;
                    rot.q = raw / rot.norm;
                    rot.r = quat_to_matrix(rot.q);
                }
                rotation_.push_back(rot);
            }
        }
    }

    template <typename Sink>
    void backward(std::size_t c, Vec3d adjoint, const std::vector<Vec3d>& offsets, Sink&& sink) const {
        for (std::size_t l = levels_; l-- > 0;) {
            const auto a = ordinal_[c * levels_ + l];
            for (int k = 0; k < 3; ++k) sink(layout_.translation(l, a, k), adjoint[k]);
            if (mode_ != CompositionMode::pivot) continue;

            const Rotation& rot = rotation_[rotation_offset_[l] + a];
            const Vec3d& u = offsets[l];
            const double w = rot.q[0];
            const Vec3d v = rot.q.tail<3>();
            // d/dq of R(q) u with R(q) u = u + 2w (v x u) + 2 (v (v.u) - |v|^2 u).
            Vec4d dq;
            dq[0] = 2.0 * adjoint.dot(v.cross(u));
            dq.tail<3>() = 2.0 * w * u.cross(adjoint) +
                           2.0 * (v.dot(u) * adjoint + adjoint.dot(v) * u - 2.0 * adjoint.dot(u) * v);
            // Through the normalization of (1,0,0,0) + delta.
            const Vec4d draw = (dq - rot.q * rot.q.dot(dq)) / rot.norm;
            for (int k = 0; k < 4; ++k) sink(layout_.rotation(l, a, k), draw[k]);
            adjoint = rot.r.transpose() * adjoint;
        }
    }

    CompositionMode mode_;
    ParameterLayout layout_;
    std::size_t levels_;
    std::vector<Vec3d> origin_, target_, pivot_;
    std::vector<std::uint32_t> ordinal_;
    std::vector<Rotation> rotation_;
    std::vector<std::size_t> rotation_offset_;
};

}  // namespace

double loss_flat(std::span<const GaussianRecord> gaussians, const AnchorHierarchy& hierarchy,
                 std::span<const double> params, const Correspondences& corr, CompositionMode mode,
                 std::span<double> gradient) {
    Objective objective(gaussians, hierarchy, corr, mode);
    if (!gradient.empty() && gradient.size() != objective.layout().total)
        throw ConfigError("gradient buffer has the wrong size");
    return objective.evaluate(params, gradient, {});
}

LossAndGradient loss_and_gradient(std::span<const GaussianRecord> gaussians, const AnchorHierarchy& hierarchy,
                                  const FrameDeformation& deltas, const Correspondences& corr,
                                  CompositionMode mode) {
    check_consistent(hierarchy, deltas);
    Objective objective(gaussians, hierarchy, corr, mode);
    const auto& layout = objective.layout();
    const auto params = layout.flatten(deltas);
    std::vector<double> grad(layout.total);

    LossAndGradient out;
    out.loss = objective.evaluate(params, grad, {});
    for (std::size_t l = 0; l < layout.anchor_counts.size(); ++l) {
        std::vector<Vec3d> t(layout.anchor_counts[l]);
        std::vector<Vec4d> r(layout.anchor_counts[l]);
        for (std::size_t a = 0; a < layout.anchor_counts[l]; ++a) {
            for (int c = 0; c < 3; ++c) t[a][c] = grad[layout.translation(l, a, c)];
            for (int c = 0; c < 4; ++c) r[a][c] = grad[layout.rotation(l, a, c)];
        }
        out.gradient.translations.push_back(std::move(t));
        out.gradient.rotations.push_back(std::move(r));
    }
    return out;
}

FitResult fit_frame(std::span<const GaussianRecord> gaussians, const AnchorHierarchy& hierarchy,
                    const Correspondences& corr, const FitConfig& config, const FrameDeformation& init,
                    CompositionMode mode) {
    validate_fit_config(config);
    check_consistent(hierarchy, init);
    Objective objective(gaussians, hierarchy, corr, mode);
    const auto& layout = objective.layout();
    const std::size_t n = layout.total;

    std::vector<double> theta = layout.flatten(init);
    std::vector<double> grad(n), trial(n), trial_grad(n), velocity(n, 0.0), step(n), precond(n);

    FitResult result;
    result.deltas = init;
    double loss = objective.evaluate(theta, grad, {});
    result.initial_loss = loss;
    result.final_loss = loss;
    if (!std::isfinite(loss)) throw NumericalError("fit_frame: initial loss is not finite");
    if (loss == 0.0 || config.steps_phase1 == 0) return result;

    objective.evaluate(theta, {}, precond);
    const double peak = *std::max_element(precond.begin(), precond.end());
    const double floor = peak > 0.0 ? 1e-3 * peak : 1.0;
    for (auto& p : precond) p = std::max(p, floor);

    const std::size_t levels = layout.anchor_counts.size();
    auto active_levels = [&](int iteration) -> std::size_t {
        if (!config.coarse_to_fine) return levels;
        const auto stage = static_cast<std::size_t>(iteration) * levels / static_cast<std::size_t>(config.steps_phase1);
        return std::min(levels, stage + 1);
    };

    const double divergence_limit = 1e6 * result.initial_loss;
    for (int it = 0; it < config.steps_phase1; ++it) {
        const std::size_t active = active_levels(it);
        const std::size_t active_end = active < levels ? layout.offsets[active] : n;
        for (std::size_t i = 0; i < n; ++i)
            step[i] = i < active_end ? -config.learning_rate * grad[i] / precond[i] : 0.0;

        for (std::size_t i = 0; i < n; ++i) {
            velocity[i] = config.momentum * velocity[i] + step[i];
            trial[i] = theta[i] + velocity[i];
        }
        double trial_loss = objective.evaluate(trial, trial_grad, {});
        if (!std::isfinite(trial_loss) || trial_loss > divergence_limit)
            throw NumericalError("fit_frame diverged at iteration " + std::to_string(it) + ": loss " +
                                 std::to_string(trial_loss) + " vs initial " + std::to_string(result.initial_loss));

        if (trial_loss > loss) {
            // Reset momentum and backtrack along the plain preconditioned step.
            ++result.restarts;
            std::fill(velocity.begin(), velocity.end(), 0.0);
            bool accepted = false;
            double alpha = 1.0;
            for (int b = 0; b < 30 && !accepted; ++b, alpha *= 0.5) {
                for (std::size_t i = 0; i < n; ++i) trial[i] = theta[i] + alpha * step[i];
                trial_loss = objective.evaluate(trial, trial_grad, {});
                if (std::isfinite(trial_loss) && trial_loss <= loss) {
                    accepted = true;
                    for (std::size_t i = 0; i < n; ++i) velocity[i] = alpha * step[i];
                }
            }
            if (!accepted) break;
        }
        theta.swap(trial);
        grad.swap(trial_grad);
        loss = trial_loss;
        result.loss_history.push_back(loss);
    }

    FrameDeformation fitted = layout.unflatten(theta);
    std::vector<double> rounded = layout.flatten(fitted);
    const double rounded_loss = objective.evaluate(rounded, {}, {});
    if (rounded_loss <= result.initial_loss) {
        result.deltas = std::move(fitted);
        result.final_loss = rounded_loss;
    }
    return result;
}

Densification densify_residuals(std::span<const GaussianRecord> gaussians, const AnchorHierarchy& hierarchy,
                                const Correspondences& corr, const FrameDeformation& deltas,
                                double densify_threshold, CompositionMode mode) {
    check_correspondences(corr, gaussians.size());
    const auto deformed = apply_deformation(gaussians, hierarchy, deltas, mode);
    Densification out;
    for (std::size_t c = 0; c < corr.size(); ++c) {
        const auto& source = deformed[corr.indices[c]];
        const double residual = (source.position.cast<double>() - corr.targets[c].cast<double>()).norm();
        if (residual > densify_threshold) {
            GaussianRecord added = source;
            added.position = corr.targets[c];
            out.added.push_back(added);
        }
    }
    return out;
}

double mean_position_error(std::span<const GaussianRecord> gaussians, const Correspondences& corr) {
    check_correspondences(corr, gaussians.size());
    double sum = 0.0;
    for (std::size_t c = 0; c < corr.size(); ++c)
        sum += (gaussians[corr.indices[c]].position.cast<double>() - corr.targets[c].cast<double>()).norm();
    return sum / static_cast<double>(corr.size());
}

}  // namespace recon
