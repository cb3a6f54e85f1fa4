#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "oracles.hpp"
#include "recon/errors.hpp"
#include "recon/hierarchy.hpp"
#include "recon/synth.hpp"

using namespace recon;

TEST_CASE("grid resolution is the exact integer cube root") {
    CHECK(grid_resolution(1000, 2) == 15);
    CHECK(grid_resolution(1, 1) == 1);
    CHECK(grid_resolution(8, 1) == 2);
    CHECK(grid_resolution(9, 1) == 3);
    CHECK(grid_resolution(27, 1) == 3);
    CHECK(grid_resolution(28, 1) == 4);
    for (std::int64_t n : {1, 2, 7, 64, 125, 1000, 4862, 14584, 99999})
        for (int l = 1; l <= 4; ++l) CHECK(grid_resolution(n, l) == oracle::grid_m(n, l));
    CHECK_THROWS_AS(grid_resolution(0, 1), ConfigError);
    CHECK_THROWS_AS(grid_resolution(5, 0), ConfigError);
}

TEST_CASE("sample_anchors matches a per-cell brute force scan") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto pts = oracle::random_points(seed, 700);
        for (std::int64_t n : {1, 5, 27, 60}) {
            const auto lvl = sample_anchors(pts, n, 1);
            CHECK(lvl.grid_resolution == oracle::grid_m(n, 1));
            CHECK(lvl.anchor_indices == oracle::brute_force_anchors(pts, lvl.grid_resolution));
            CHECK(lvl.anchor_count() <= static_cast<std::size_t>(std::pow(lvl.grid_resolution, 3)));
        }
    }
}

TEST_CASE("sample_anchors collapses degenerate axes") {
    auto pts = oracle::random_points(11, 300);
    for (auto& p : pts) p.z() = 0.25f;
    const auto lvl = sample_anchors(pts, 27, 1);
    const auto expect = oracle::brute_force_anchors(pts, lvl.grid_resolution);
    CHECK(lvl.anchor_indices == expect);
    CHECK(lvl.anchor_count() <= 9);
}

TEST_CASE("sample_anchors on a single point and on duplicates") {
    std::vector<Vec3f> one{Vec3f(1, 2, 3)};
    CHECK(sample_anchors(one, 10, 1).anchor_indices == std::vector<std::uint32_t>{0});
    std::vector<Vec3f> dup(5, Vec3f(0.5f, 0.5f, 0.5f));
    CHECK(sample_anchors(dup, 10, 1).anchor_indices == std::vector<std::uint32_t>{0});
}

TEST_CASE("anchor set is a deterministic function of the point set") {
    auto pts = oracle::random_points(5, 400);
    const auto lvl = sample_anchors(pts, 30, 1);
    std::set<std::array<float, 3>> a;
    for (auto i : lvl.anchor_indices) a.insert({pts[i].x(), pts[i].y(), pts[i].z()});

    std::vector<std::size_t> perm(pts.size());
    std::iota(perm.begin(), perm.end(), 0);
    SplitMix64 rng(77);
    for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    std::vector<Vec3f> shuffled;
    for (auto i : perm) shuffled.push_back(pts[i]);
    const auto lvl2 = sample_anchors(shuffled, 30, 1);
    std::set<std::array<float, 3>> b;
    for (auto i : lvl2.anchor_indices) b.insert({shuffled[i].x(), shuffled[i].y(), shuffled[i].z()});
    CHECK(a == b);
}

TEST_CASE("assign_clusters matches an exhaustive L1 scan") {
    for (std::uint64_t seed : {21u, 22u}) {
        const auto pts = oracle::random_points(seed, 900);
        for (std::int64_t n : {1, 9, 40}) {
            auto lvl = sample_anchors(pts, n, 2);
            CHECK(assign_clusters(pts, lvl) == oracle::exhaustive_l1(pts, lvl.anchor_indices));
        }
    }
}

TEST_CASE("assign_clusters breaks ties toward the lower ordinal") {
    // Points on an integer lattice give many exact L1 ties.
    std::vector<Vec3f> pts;
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j)
            for (int k = 0; k < 3; ++k) pts.emplace_back(float(i), float(j), float(k));
    LevelStructure lvl;
    lvl.anchor_indices = {0, 5, 30, 40, 77, 100};
    CHECK(assign_clusters(pts, lvl) == oracle::exhaustive_l1(pts, lvl.anchor_indices));
}

TEST_CASE("level targets follow the finest fraction and the ratio") {
    StreamConfig c;
    const auto t = level_targets(216, c);
    CHECK(t == std::vector<std::int64_t>{1, 3, 9});
    CHECK(level_targets(2000, c) == std::vector<std::int64_t>{10, 28, 84});
    CHECK(level_targets(350000, c) == std::vector<std::int64_t>{1621, 4862, 14584});
    c.anchor_counts = {2, 4, 8};
    CHECK(level_targets(216, c) == std::vector<std::int64_t>{2, 4, 8});
    StreamConfig tiny;
    CHECK(level_targets(1, tiny) == std::vector<std::int64_t>{1, 1, 1});
}

TEST_CASE("build_hierarchy produces consistent levels") {
    const auto pts = oracle::random_points(9, 2000);
    const auto g = gaussians_at(pts, 3);
    StreamConfig c;
    const auto h = build_hierarchy(g, c);
    REQUIRE(h.levels.size() == 3);
    const auto targets = level_targets(g.size(), c);
    for (std::size_t l = 0; l < 3; ++l) {
        const auto& lv = h.levels[l];
        CHECK(lv.level == static_cast<int>(l) + 1);
        CHECK(lv.target_anchors == targets[l]);
        CHECK(lv.grid_resolution == oracle::grid_m(targets[0], static_cast<int>(l) + 1));
        CHECK(lv.assignment.size() == g.size());
        for (std::size_t a = 0; a < lv.anchor_count(); ++a) CHECK(lv.assignment[lv.anchor_indices[a]] == a);
    }
    // Finer levels never have fewer anchors.
    CHECK(h.levels[0].anchor_count() <= h.levels[1].anchor_count());
    CHECK(h.levels[1].anchor_count() <= h.levels[2].anchor_count());
    SceneState s{g, h, 0};
    CHECK(validate_state(s).empty());
}

TEST_CASE("nearest_legacy_anchors matches exhaustive 3-NN") {
    const auto q = oracle::random_points(31, 200);
    const auto legacy = oracle::random_points(32, 50);
    const auto got = nearest_legacy_anchors(q, legacy);
    for (std::size_t i = 0; i < q.size(); ++i) CHECK(got[i] == oracle::exhaustive_knn3(q[i], legacy));

    const std::vector<Vec3f> two{Vec3f(0, 0, 0), Vec3f(1, 0, 0)};
    const std::vector<Vec3f> probe{Vec3f(0.9f, 0, 0)};
    CHECK(nearest_legacy_anchors(probe, two)[0] == NeighborTriple{1, 0, 1});
}

TEST_CASE("rehierarchize maps every new anchor to its 3 nearest legacy anchors") {
    auto pts = oracle::random_points(41, 1500);
    auto g = gaussians_at(pts, 1);
    StreamConfig c;
    SceneState s{g, build_hierarchy(g, c), 0};
    // Shear the cloud so the new grid picks different anchors.
    for (auto& x : s.gaussians) x.position.x() += 0.5f * x.position.y() * x.position.y();
    s.frame_index = 10;
    const auto r = rehierarchize(s, c);
    CHECK(r.hierarchy.built_at_frame == 10);
    const auto pos = positions_of(s.gaussians);
    for (std::size_t l = 0; l < 3; ++l) {
        std::vector<Vec3f> legacy;
        for (auto i : s.hierarchy.levels[l].anchor_indices) legacy.push_back(pos[i]);
        REQUIRE(r.neighbors[l].size() == r.hierarchy.levels[l].anchor_count());
        for (std::size_t a = 0; a < r.neighbors[l].size(); ++a)
            CHECK(r.neighbors[l][a] == oracle::exhaustive_knn3(pos[r.hierarchy.levels[l].anchor_indices[a]], legacy));
    }
}

TEST_CASE("assign_appended extends assignments like a fresh scan") {
    auto pts = oracle::random_points(51, 600);
    auto g = gaussians_at(pts, 2);
    StreamConfig c;
    auto h = build_hierarchy(g, c);
    const auto extra = oracle::random_points(52, 40, -1.5f, 1.5f);
    pts.insert(pts.end(), extra.begin(), extra.end());
    assign_appended(h, pts, 600);
    for (const auto& lv : h.levels) {
        REQUIRE(lv.assignment.size() == pts.size());
        const auto full = oracle::exhaustive_l1(pts, lv.anchor_indices);
        for (std::size_t i = 600; i < pts.size(); ++i) CHECK(lv.assignment[i] == full[i]);
    }
}

TEST_CASE("remove_from_hierarchy reindexes and refuses anchors") {
    auto pts = oracle::random_points(61, 200);
    auto g = gaussians_at(pts, 2);
    StreamConfig c;
    c.anchor_counts = {2, 4, 8};
    auto h = build_hierarchy(g, c);
    std::set<std::uint32_t> anchors;
    for (const auto& lv : h.levels) anchors.insert(lv.anchor_indices.begin(), lv.anchor_indices.end());
    std::vector<std::uint64_t> pruned;
    for (std::uint64_t i = 0; i < 200 && pruned.size() < 5; ++i)
        if (!anchors.count(static_cast<std::uint32_t>(i))) pruned.push_back(i);
    auto h2 = h;
    remove_from_hierarchy(h2, pruned, 200);
    for (std::size_t l = 0; l < h.levels.size(); ++l) {
        CHECK(h2.levels[l].assignment.size() == 195);
        for (std::size_t a = 0; a < h.levels[l].anchor_count(); ++a) {
            const auto before = h.levels[l].anchor_indices[a];
            const auto shift = std::count_if(pruned.begin(), pruned.end(), [&](auto p) { return p < before; });
            CHECK(h2.levels[l].anchor_indices[a] == before - shift);
        }
    }
    std::vector<std::uint64_t> bad{h.levels[0].anchor_indices[0]};
    CHECK_THROWS_AS(remove_from_hierarchy(h, bad, 200), FormatError);
}
