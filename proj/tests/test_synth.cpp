#include <doctest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "recon/errors.hpp"
#include "recon/motion.hpp"
#include "recon/synth.hpp"

using namespace recon;

namespace {

Eigen::Matrix3d rot_z(double deg) {
    const double a = deg * std::numbers::pi / 180.0;
    Eigen::Matrix3d r;
    r << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
    return r;
}

}  // namespace

TEST_CASE("static body repeats frame 0") {
    const auto f = generate_scene(preset_scene("static", 5));
    REQUIRE(f.frame_count() == 5);
    for (std::size_t t = 1; t < 5; ++t) CHECK(f.positions[t] == f.positions[0]);
}

TEST_CASE("pure translation is exact") {
    const auto f = generate_scene(preset_scene("translation", 10));
    for (std::size_t t = 0; t < 10; ++t)
        for (std::size_t i = 0; i < f.point_count(); ++i)
            CHECK(f.positions[t][i] == f.positions[0][i] + Vec3d(0.1 * double(t), 0, 0));
}

TEST_CASE("articulated arm matches a rotation-matrix oracle") {
    const auto spec = preset_scene("two_body", 12);
    const auto f = generate_scene(spec);
    const Vec3d hinge(0.5, 0, 0), v(0.01, 0.005, 0);
    for (std::size_t t = 0; t < 12; ++t) {
        const double td = double(t);
        const Eigen::Matrix3d r = rot_z(5.0 * td);
        for (std::size_t i = 0; i < f.point_count(); ++i) {
            const Vec3d p0 = f.positions[0][i];
            const Vec3d expect = f.body_of[i] == 0 ? Vec3d(p0 + td * v) : Vec3d(r * (p0 - hinge) + hinge + td * v);
            CHECK((f.positions[t][i] - expect).norm() < 1e-9);
        }
    }
}

TEST_CASE("samples stay inside their shapes") {
    const auto two = generate_scene(preset_scene("two_body", 2));
    for (std::size_t i = 0; i < two.point_count(); ++i) {
        const Vec3d p = two.positions[0][i];
        if (two.body_of[i] == 0) {
            CHECK(std::abs(p.x()) <= 0.5);
            CHECK(std::abs(p.y()) <= 0.2);
        } else {
            CHECK(std::abs(p.x() - 1.0) <= 0.5);
            CHECK(std::abs(p.y()) <= 0.1);
        }
    }
    const auto spec = preset_scene("drift", 2);
    const auto d = generate_scene(spec);
    for (std::size_t i = 0; i < d.point_count(); ++i) {
        const auto& b = spec.bodies[static_cast<std::size_t>(d.body_of[i])];
        const Vec3d p = d.positions[0][i];
        const double r = std::hypot(p.x(), p.y());
        CHECK(r >= b.inner_radius - 1e-12);
        CHECK(r <= b.outer_radius + 1e-12);
        CHECK(std::abs(p.z()) <= 0.1 + 1e-12);
    }
}

TEST_CASE("generation is reproducible and noise touches targets only") {
    auto spec = preset_scene("two_body", 3);
    const auto a = generate_scene(spec), b = generate_scene(spec);
    CHECK(a.positions == b.positions);
    CHECK(a.targets == b.targets);
    spec.noise_sigma = 0.01;
    const auto n = generate_scene(spec);
    CHECK(n.positions == a.positions);
    double rms = 0.0;
    for (std::size_t i = 0; i < n.point_count(); ++i)
        rms += (n.targets[2][i].cast<double>() - n.positions[2][i]).squaredNorm();
    rms = std::sqrt(rms / (3.0 * double(n.point_count())));
    CHECK(rms == doctest::Approx(0.01).epsilon(0.1));
    spec.seed = 43;
    CHECK(generate_scene(spec).positions != a.positions);
}

TEST_CASE("cyclic articulation is rejected") {
    SceneSpec s;
    s.bodies.resize(3);
    s.bodies[0].parent = 2;
    s.bodies[1].parent = 0;
    s.bodies[2].parent = 1;
    CHECK_THROWS_AS(generate_scene(s), ConfigError);
    s.bodies[0].parent = 0;
    CHECK_THROWS_AS(validate_scene_spec(s), ConfigError);
    s.bodies[0].parent = 7;
    CHECK_THROWS_AS(validate_scene_spec(s), ConfigError);
}

TEST_CASE("rigid_transform_points: identity, half turn, isometry") {
    const std::vector<Vec3d> pts{Vec3d(1, 0, 0), Vec3d(0.2, -3, 4)};
    CHECK(rigid_transform_points(pts, Vec4d(1, 0, 0, 0), Vec3d::Zero(), Vec3d::Zero()) == pts);
    const auto about = rigid_transform_points(pts, Vec4d(1, 0, 0, 0), Vec3d(5, 5, 5), Vec3d::Zero());
    for (std::size_t i = 0; i < pts.size(); ++i) CHECK((about[i] - pts[i]).norm() < 1e-12);

    const auto half = rigid_transform_points(std::vector<Vec3d>{Vec3d(1, 0, 0)}, Vec4d(0, 0, 0, 1), Vec3d::Zero(),
                                             Vec3d::Zero());
    CHECK((half[0] - Vec3d(-1, 0, 0)).norm() < 1e-12);

    SplitMix64 rng(9);
    std::vector<Vec3d> cloud;
    for (int i = 0; i < 60; ++i) cloud.emplace_back(rng.normal(), rng.normal(), rng.normal());
    const Vec4d q = oracle::random_unit_quaternion(rng);
    const Vec3d pivot(rng.normal(), rng.normal(), rng.normal()), t(rng.normal(), rng.normal(), rng.normal());
    const auto moved = rigid_transform_points(cloud, q, pivot, t);
    const Eigen::Matrix3d r = oracle::rotation_matrix(q);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        CHECK((moved[i] - (r * (cloud[i] - pivot) + pivot + t)).norm() < 1e-12);
        for (std::size_t j = i + 1; j < cloud.size(); ++j)
            CHECK(std::abs((moved[i] - moved[j]).norm() - (cloud[i] - cloud[j]).norm()) < 1e-9);
    }
    CHECK_THROWS_AS(rigid_transform_points(cloud, Vec4d(1.001, 0, 0, 0), pivot, t), ConfigError);
}

TEST_CASE("correspondences and scene flow") {
    const auto f = generate_scene(preset_scene("translation", 4));
    const auto c = f.correspondences(2);
    REQUIRE(c.size() == f.point_count());
    for (std::size_t i = 0; i < c.size(); ++i) {
        CHECK(c.indices[i] == i);
        CHECK(c.targets[i] == f.targets[2][i]);
    }
    auto g = initial_gaussians(f, 1);
    for (auto& x : g) x.position += Vec3f(0, 1, 0);
    const auto flow = f.flow_correspondences(3, g);
    for (std::size_t i = 0; i < flow.size(); ++i)
        CHECK((flow.targets[i] - (g[i].position + Vec3f(0.1f, 0, 0))).norm() < 1e-6f);
}

TEST_CASE("scene diameter") {
    SceneSpec s;
    BodySpec b;
    b.point_count = 5000;
    b.extent = Vec3d(2, 1, 2);
    s.bodies = {b};
    s.frames = 2;
    const auto f = generate_scene(s);
    CHECK(f.diameter() == doctest::Approx(3.0).epsilon(0.01));
}

TEST_CASE("JSON spec round trip") {
    const auto spec = preset_scene("two_body", 7);
    const auto text = scene_spec_to_json(spec);
    const auto back = parse_scene_spec(text);
    CHECK(back.frames == 7);
    CHECK(back.seed == spec.seed);
    REQUIRE(back.bodies.size() == 2);
    CHECK(back.bodies[1].parent == 0);
    CHECK(back.bodies[1].trajectory.degrees_per_frame == 5.0);
    CHECK(back.bodies[1].trajectory.pivot == Vec3d(0.5, 0, 0));
    CHECK(generate_scene(back).positions == generate_scene(spec).positions);
    CHECK(scene_spec_to_json(back) == text);

    CHECK_THROWS_AS(parse_scene_spec("{ not json"), ConfigError);
    CHECK_THROWS_AS(parse_scene_spec(R"({"frames": 3, "bodies": [{"shape": "cone"}]})"), ConfigError);
    CHECK_THROWS_AS(preset_scene("nope"), ConfigError);
}

TEST_CASE("gaussians_at is seeded and valid") {
    const auto pts = oracle::random_points(3, 50);
    const auto a = gaussians_at(pts, 5), b = gaussians_at(pts, 5), c = gaussians_at(pts, 6);
    CHECK(bit_equal(a, b));
    CHECK_FALSE(bit_equal(a, c));
    SceneState s;
    s.gaussians = a;
    CHECK(validate_state(s).empty());
    for (std::size_t i = 0; i < pts.size(); ++i) CHECK(a[i].position == pts[i]);
}
