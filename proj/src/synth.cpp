#include "recon/synth.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "recon/errors.hpp"
#include "recon/motion.hpp"
#include "recon/rng.hpp"

namespace recon {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

bool finite3(const Vec3d& v) { return v.allFinite(); }

RigidTransform local_transform(const Trajectory& tr, int frame) {
    RigidTransform t;
    const double angle = tr.degrees_per_frame * kDegToRad * frame;
    if (angle != 0.0) t.rotation = quat_to_matrix(quat_from_axis_angle(tr.axis, angle));
    t.translation = tr.pivot - t.rotation * tr.pivot + tr.velocity * static_cast<double>(frame);
    return t;
}

Vec3d sample_point(const BodySpec& b, SplitMix64& rng) {
    if (b.shape == BodyShape::box) {
        Vec3d p;
        for (int c = 0; c < 3; ++c) p[c] = b.center[c] + (rng.uniform() - 0.5) * b.extent[c];
        return p;
    }
    // Uniform over the annulus area.
    const double r2lo = b.inner_radius * b.inner_radius, r2hi = b.outer_radius * b.outer_radius;
    const double r = std::sqrt(rng.uniform(r2lo, r2hi));
    const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double z = (rng.uniform() - 0.5) * b.extent.z();
    return b.center + Vec3d(r * std::cos(phi), r * std::sin(phi), z);
}

}  // namespace

RigidTransform RigidTransform::compose(const RigidTransform& inner) const {
    RigidTransform out;
    out.rotation = rotation * inner.rotation;
    out.translation = rotation * inner.translation + translation;
    return out;
}

void validate_scene_spec(const SceneSpec& spec) {
    if (spec.frames < 2) throw ConfigError("scene needs at least 2 frames");
    if (spec.bodies.empty()) throw ConfigError("scene has no bodies");
    if (!(spec.noise_sigma >= 0.0) || !std::isfinite(spec.noise_sigma))
        throw ConfigError("noise_sigma must be finite and >= 0");
    const int n = static_cast<int>(spec.bodies.size());
    for (int i = 0; i < n; ++i) {
        const auto& b = spec.bodies[static_cast<std::size_t>(i)];
        const std::string tag = "body " + std::to_string(i) + ": ";
        if (b.point_count < 1) throw ConfigError(tag + "point_count must be >= 1");
        if (!finite3(b.center) || !finite3(b.extent) || (b.extent.array() < 0.0).any())
            throw ConfigError(tag + "center/extent must be finite, extent >= 0");
        if (b.shape == BodyShape::ring &&
            !(b.inner_radius >= 0.0 && b.outer_radius >= b.inner_radius && std::isfinite(b.outer_radius)))
            throw ConfigError(tag + "ring needs 0 <= inner_radius <= outer_radius");
        const auto& tr = b.trajectory;
        if (!finite3(tr.pivot) || !finite3(tr.velocity) || !std::isfinite(tr.degrees_per_frame))
            throw ConfigError(tag + "trajectory must be finite");
        if (tr.degrees_per_frame != 0.0 && !(tr.axis.norm() > 0.0))
            throw ConfigError(tag + "rotation axis must be nonzero");
        if (b.parent && (*b.parent < 0 || *b.parent >= n))
            throw ConfigError(tag + "parent index out of range");
    }
    for (int i = 0; i < n; ++i) {
        int cur = i, hops = 0;
        while (spec.bodies[static_cast<std::size_t>(cur)].parent) {
            cur = *spec.bodies[static_cast<std::size_t>(cur)].parent;
            if (++hops > n) throw ConfigError("cyclic articulation involving body " + std::to_string(i));
        }
    }
}

RigidTransform body_transform(const SceneSpec& spec, int body, int frame) {
    RigidTransform world;
    int cur = body, hops = 0;
    while (true) {
        const auto& b = spec.bodies.at(static_cast<std::size_t>(cur));
        world = local_transform(b.trajectory, frame).compose(world);
        if (!b.parent) break;
        cur = *b.parent;
        if (++hops > static_cast<int>(spec.bodies.size()))
            throw ConfigError("cyclic articulation involving body " + std::to_string(body));
    }
    return world;
}

SceneFrames generate_scene(const SceneSpec& spec) {
    validate_scene_spec(spec);
    SceneFrames out;
    const auto frames = static_cast<std::size_t>(spec.frames);
    const auto nb = spec.bodies.size();

    SplitMix64 rng(mix_seed(spec.seed, 1));
    std::vector<Vec3d> base;
    for (std::size_t b = 0; b < nb; ++b)
        for (std::int64_t i = 0; i < spec.bodies[b].point_count; ++i) {
            base.push_back(sample_point(spec.bodies[b], rng));
            out.body_of.push_back(static_cast<int>(b));
        }

    out.positions.resize(frames);
    out.targets.resize(frames);
    out.transforms.resize(frames);
    for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t b = 0; b < nb; ++b)
            out.transforms[t].push_back(body_transform(spec, static_cast<int>(b), static_cast<int>(t)));
        SplitMix64 noise(mix_seed(spec.seed, 1000 + t));
        auto& pos = out.positions[t];
        auto& tgt = out.targets[t];
        pos.resize(base.size());
        tgt.resize(base.size());
        for (std::size_t i = 0; i < base.size(); ++i) {
            pos[i] = t == 0 ? base[i] : out.transforms[t][static_cast<std::size_t>(out.body_of[i])].apply(base[i]);
            Vec3d observed = pos[i];
            if (spec.noise_sigma > 0.0)
                for (int c = 0; c < 3; ++c) observed[c] += spec.noise_sigma * noise.normal();
            tgt[i] = observed.cast<float>();
        }
    }
    return out;
}

Correspondences SceneFrames::correspondences(std::size_t frame) const {
    Correspondences c;
    const auto& tgt = targets.at(frame);
    c.indices.resize(tgt.size());
    for (std::size_t i = 0; i < tgt.size(); ++i) c.indices[i] = static_cast<std::uint32_t>(i);
    c.targets = tgt;
    return c;
}

Correspondences SceneFrames::flow_correspondences(std::size_t frame, std::span<const GaussianRecord> current) const {
    if (frame == 0 || frame >= positions.size()) throw ConfigError("flow targets need 1 <= frame < frame count");
    if (current.size() < point_count()) throw ConfigError("flow targets need one current gaussian per scene point");
    Correspondences c;
    c.indices.resize(point_count());
    c.targets.resize(point_count());
    for (std::size_t i = 0; i < point_count(); ++i) {
        c.indices[i] = static_cast<std::uint32_t>(i);
        const Vec3d step = positions[frame][i] - positions[frame - 1][i];
        c.targets[i] = (current[i].position.cast<double>() + step).cast<float>();
    }
    return c;
}

double SceneFrames::diameter() const {
    if (positions.empty() || positions[0].empty()) return 0.0;
    Vec3d lo = positions[0][0], hi = positions[0][0];
    for (const auto& p : positions[0]) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    return (hi - lo).norm();
}

std::vector<Vec3d> rigid_transform_points(std::span<const Vec3d> points, const Vec4d& q, const Vec3d& pivot,
                                          const Vec3d& translation) {
    if (!q.allFinite() || std::abs(q.norm() - 1.0) > 1e-6)
        throw ConfigError("rigid_transform_points needs a unit quaternion");
    const Eigen::Matrix3d r = quat_to_matrix(q);
    std::vector<Vec3d> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(r * (p - pivot) + pivot + translation);
    return out;
}

std::vector<GaussianRecord> gaussians_at(std::span<const Vec3f> positions, std::uint64_t seed, float scale) {
    SplitMix64 rng(mix_seed(seed, 2));
    std::vector<GaussianRecord> out(positions.size());
    for (std::size_t i = 0; i < positions.size(); ++i) {
        auto& g = out[i];
        g.position = positions[i];
        g.scale = Vec3f::Constant(scale);
        g.opacity = static_cast<float>(rng.uniform(0.2, 0.95));
        for (auto& c : g.sh) c = static_cast<float>(rng.uniform(-0.5, 0.5));
    }
    return out;
}

std::vector<GaussianRecord> initial_gaussians(const SceneFrames& frames, std::uint64_t seed) {
    std::vector<Vec3f> p;
    p.reserve(frames.point_count());
    for (const auto& x : frames.positions.at(0)) p.push_back(x.cast<float>());
    return gaussians_at(p, seed);
}

namespace {

using nlohmann::json;

Vec3d vec3_from(const json& j, const char* key, const Vec3d& fallback) {
    if (!j.contains(key)) return fallback;
    const auto& a = j.at(key);
    if (!a.is_array() || a.size() != 3) throw ConfigError(std::string("'") + key + "' must be a 3-element array");
    return Vec3d(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
}

json vec3_to(const Vec3d& v) { return json::array({v.x(), v.y(), v.z()}); }

}  // namespace

SceneSpec parse_scene_spec(const std::string& json_text) {
    SceneSpec spec;
    try {
        const json j = json::parse(json_text);
        spec.frames = j.value("frames", 2);
        spec.seed = j.value("seed", std::uint64_t{0});
        spec.noise_sigma = j.value("noise_sigma", 0.0);
        if (!j.contains("bodies") || !j.at("bodies").is_array()) throw ConfigError("scene spec needs a 'bodies' array");
        for (const auto& jb : j.at("bodies")) {
            BodySpec b;
            b.point_count = jb.value("point_count", std::int64_t{100});
            const std::string shape = jb.value("shape", std::string("box"));
            if (shape == "box")
                b.shape = BodyShape::box;
            else if (shape == "ring")
                b.shape = BodyShape::ring;
            else
                throw ConfigError("unknown body shape '" + shape + "'");
            b.center = vec3_from(jb, "center", Vec3d::Zero());
            b.extent = vec3_from(jb, "extent", Vec3d::Ones());
            b.inner_radius = jb.value("inner_radius", 0.0);
            b.outer_radius = jb.value("outer_radius", 0.0);
            b.trajectory.axis = vec3_from(jb, "axis", Vec3d(0, 0, 1));
            b.trajectory.degrees_per_frame = jb.value("degrees_per_frame", 0.0);
            b.trajectory.pivot = vec3_from(jb, "pivot", Vec3d::Zero());
            b.trajectory.velocity = vec3_from(jb, "velocity", Vec3d::Zero());
            if (jb.contains("parent") && !jb.at("parent").is_null()) b.parent = jb.at("parent").get<int>();
            spec.bodies.push_back(b);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("scene spec: ") + e.what());
    }
    validate_scene_spec(spec);
    return spec;
}

SceneSpec load_scene_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open scene spec '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scene_spec(ss.str());
}

std::string scene_spec_to_json(const SceneSpec& spec) {
    json j;
    j["frames"] = spec.frames;
    j["seed"] = spec.seed;
    j["noise_sigma"] = spec.noise_sigma;
    j["bodies"] = json::array();
    for (const auto& b : spec.bodies) {
        json jb;
        jb["point_count"] = b.point_count;
        jb["shape"] = b.shape == BodyShape::box ? "box" : "ring";
        jb["center"] = vec3_to(b.center);
        jb["extent"] = vec3_to(b.extent);
        if (b.shape == BodyShape::ring) {
            jb["inner_radius"] = b.inner_radius;
            jb["outer_radius"] = b.outer_radius;
        }
        jb["axis"] = vec3_to(b.trajectory.axis);
        jb["degrees_per_frame"] = b.trajectory.degrees_per_frame;
        jb["pivot"] = vec3_to(b.trajectory.pivot);
        jb["velocity"] = vec3_to(b.trajectory.velocity);
        jb["parent"] = b.parent ? json(*b.parent) : json(nullptr);
        j["bodies"].push_back(jb);
    }
    return j.dump(2);
}

SceneSpec preset_scene(const std::string& name, int frames) {
    SceneSpec s;
    s.seed = 42;
    if (name == "static") {
        BodySpec b;
        b.point_count = 1000;
        s.bodies = {b};
        s.frames = 10;
    } else if (name == "translation") {
        BodySpec b;
        b.point_count = 1000;
        b.trajectory.velocity = Vec3d(0.1, 0.0, 0.0);
        s.bodies = {b};
        s.frames = 10;
    } else if (name == "two_body") {
        // Torso drifting along x with an arm swinging about a hinge at its end.
        BodySpec torso;
        torso.point_count = 1200;
        torso.extent = Vec3d(1.0, 0.4, 0.4);
        torso.trajectory.velocity = Vec3d(0.01, 0.005, 0.0);
        BodySpec arm;
        arm.point_count = 800;
        arm.center = Vec3d(1.0, 0.0, 0.0);
        arm.extent = Vec3d(1.0, 0.2, 0.2);
        arm.trajectory.axis = Vec3d(0.0, 0.0, 1.0);
        arm.trajectory.degrees_per_frame = 5.0;
        arm.trajectory.pivot = Vec3d(0.5, 0.0, 0.0);
        arm.parent = 0;
        s.bodies = {torso, arm};
        s.frames = 60;
    } else if (name == "drift") {
        // Concentric rings turning at radius-dependent rates: clusters built
        // on frame 0 shear apart as the rings slide past each other.
        const int rings = 10;
        for (int i = 0; i < rings; ++i) {
            BodySpec b;
            b.shape = BodyShape::ring;
            b.inner_radius = 0.5 + 0.2 * i;
            b.outer_radius = b.inner_radius + 0.2;
            b.extent = Vec3d(0.0, 0.0, 0.2);
            b.point_count = 150 + 30 * i;
            b.trajectory.degrees_per_frame = 4.0 - 0.35 * i;
            s.bodies.push_back(b);
        }
        s.frames = 61;
    } else {
        throw ConfigError("unknown preset scene '" + name + "'");
    }
    if (frames > 0) s.frames = frames;
    return s;
}

}  // namespace recon
