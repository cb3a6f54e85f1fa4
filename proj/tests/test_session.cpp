#include <doctest.h>

#include <cmath>

#include "recon/errors.hpp"
#include "recon/session.hpp"

using namespace recon;

namespace {

void check_mirror(const SessionResult& r, const SceneFrames& scene, std::uint64_t seed) {
    std::vector<std::uint64_t> sums;
    for (const auto& m : r.metrics) sums.push_back(m.checksum);
    const auto dec = decode_stream(r.stream, initial_gaussians(scene, seed), sums);
    CHECK(bit_equal(dec.gaussians, r.final_state.gaussians));
    CHECK(state_checksum(dec) == state_checksum(r.final_state));
}

}  // namespace

TEST_CASE("reconfiguration schedule") {
    CHECK_FALSE(is_reconfig_frame(0, 10));
    CHECK_FALSE(is_reconfig_frame(9, 10));
    CHECK(is_reconfig_frame(10, 10));
    CHECK(is_reconfig_frame(50, 10));
    CHECK(is_reconfig_frame(1, 1));
}

TEST_CASE("static scene: no error, constant bytes") {
    const auto scene = generate_scene(preset_scene("static", 10));
    const auto r = run_session(scene, StreamConfig{});
    REQUIRE(r.metrics.size() == 9);
    for (const auto& m : r.metrics) {
        CHECK(m.mean_error < 1e-6);
        CHECK(m.bytes == r.metrics[0].bytes);
        CHECK(m.added == 0);
    }
    CHECK(r.storage.mean_bytes_per_frame == double(r.storage.total_bytes) / 9.0);
}

TEST_CASE("50-frame session with T = 10 mirrors bit-exactly at full32") {
    const auto scene = generate_scene(preset_scene("two_body", 50));
    StreamConfig c;
    c.quantization = Quantization::full32;
    c.phase1_steps = 40;
    const auto r = run_session(scene, c, {}, 0, 3);
    int reconfigs = 0;
    for (const auto& m : r.metrics) reconfigs += m.reconfig;
    CHECK(reconfigs == 4);
    check_mirror(r, scene, 3);
}

TEST_CASE("60-frame sessions mirror at every quantization") {
    const auto scene = generate_scene(preset_scene("two_body", 60));
    for (auto q : {Quantization::full32, Quantization::half16, Quantization::fixed16}) {
        CAPTURE(to_string(q));
        StreamConfig c;
        c.quantization = q;
        c.phase1_steps = 30;
        const auto r = run_session(scene, c);
        int reconfigs = 0;
        for (const auto& m : r.metrics) {
            reconfigs += m.reconfig;
            if (m.reconfig) CHECK(m.frame % 10 == 0);
        }
        CHECK(reconfigs == 5);
        check_mirror(r, scene, 0);
    }
}

TEST_CASE("pivot mode and densification also mirror") {
    const auto scene = generate_scene(preset_scene("two_body", 25));
    StreamConfig c;
    c.composition_mode = CompositionMode::pivot;
    c.densify_threshold = 0.01;
    c.phase1_steps = 30;
    const auto r = run_session(scene, c);
    std::size_t added = 0;
    for (const auto& m : r.metrics) added += m.added;
    CHECK(added > 0);
    CHECK(r.final_state.gaussians.size() == scene.point_count() + added);
    check_mirror(r, scene, 0);
}

TEST_CASE("flow supervision keeps the two-body error small") {
    const auto scene = generate_scene(preset_scene("two_body", 15));
    StreamConfig c;
    c.composition_mode = CompositionMode::pivot;
    c.densify_threshold = 1e9;
    const auto r = run_session(scene, c, {}, 0, 0, Supervision::flow);
    for (const auto& m : r.metrics) CHECK(m.mean_error < 2e-2);
    check_mirror(r, scene, 0);
}

TEST_CASE("decoder refuses a different frame 0") {
    const auto scene = generate_scene(preset_scene("two_body", 12));
    StreamConfig c;
    c.phase1_steps = 10;
    const auto r = run_session(scene, c);

    auto fewer = initial_gaussians(scene, 0);
    fewer.pop_back();
    CHECK_THROWS_AS(decode_stream(r.stream, fewer), FormatError);

    // Same count, different geometry: the anchor counts or checksums diverge.
    const auto other = generate_scene([&] {
        auto s = preset_scene("two_body", 12);
        s.seed = 7;
        return s;
    }());
    std::vector<std::uint64_t> sums;
    for (const auto& m : r.metrics) sums.push_back(m.checksum);
    try {
        decode_stream(r.stream, initial_gaussians(other, 0), sums);
        FAIL("expected an error");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).rfind("frame ", 0) == 0);
    }
}

TEST_CASE("budgeted encoder stays inside its budget") {
    const auto scene = generate_scene(preset_scene("two_body", 6));
    StreamConfig c;
    c.densify_threshold = 1e9;
    const std::uint64_t budget = 600;
    const auto r = run_session(scene, c, {}, budget);
    for (const auto& m : r.metrics) CHECK(m.bytes <= budget);
    CHECK_THROWS_AS(run_session(scene, c, {}, 40), BudgetError);
}

TEST_CASE("sessions are deterministic") {
    const auto scene = generate_scene(preset_scene("two_body", 8));
    StreamConfig c;
    c.phase1_steps = 20;
    const auto a = run_session(scene, c), b = run_session(scene, c);
    CHECK(serialize_stream(a.stream) == serialize_stream(b.stream));
    CHECK(metrics_table(a.metrics) == metrics_table(b.metrics));
}

TEST_CASE("metrics table round trips checksums") {
    const auto scene = generate_scene(preset_scene("translation", 4));
    const auto r = run_session(scene, StreamConfig{});
    const auto text = metrics_table(r.metrics);
    CHECK(text.rfind(metrics_header(), 0) == 0);
    const auto sums = read_checksums(text);
    REQUIRE(sums.size() == r.metrics.size());
    for (std::size_t i = 0; i < sums.size(); ++i) CHECK(sums[i] == r.metrics[i].checksum);
    CHECK(format_checksum(0xabc) == "0000000000000abc");
}

TEST_CASE("bench tables") {
    const auto scene = generate_scene(preset_scene("two_body", 5));
    StreamConfig c;
    c.densify_threshold = 1e9;
    const auto rows = bench_budgets(scene, c, {}, {2000, 300});
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].budget == 300);
    CHECK(rows[1].budget == 2000);
    CHECK(rows[0].mean_bytes_per_frame <= rows[1].mean_bytes_per_frame);
    const auto one = bench_budgets(scene, c, {}, {1000});
    CHECK(one.size() == 1);
    const auto failed = bench_budgets(scene, c, {}, {10, 1000});
    REQUIRE(failed.size() == 1);
    CHECK(failed[0].failed);
    CHECK(bench_table(rows).find("budget") != std::string::npos);
}
