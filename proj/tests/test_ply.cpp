#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>

#include "oracles.hpp"
#include "recon/errors.hpp"
#include "recon/ply.hpp"

using namespace recon;

namespace {

// Hand-assembled file: header text plus raw little-endian floats.
Bytes make_ply(const std::vector<std::string>& props, const std::vector<std::vector<float>>& rows,
               const std::string& format = "binary_little_endian 1.0") {
    std::string h = "ply\nformat " + format + "\nelement vertex " + std::to_string(rows.size()) + "\n";
    for (const auto& p : props) h += "property float " + p + "\n";
    h += "end_header\n";
    Bytes out(h.begin(), h.end());
    for (const auto& r : rows)
        for (float v : r) {
            std::uint8_t b[4];
            std::memcpy(b, &v, 4);
            out.insert(out.end(), b, b + 4);
        }
    return out;
}

std::vector<std::string> standard_props() {
    std::vector<std::string> p{"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"};
    for (int i = 0; i < 9; ++i) p.push_back("f_rest_" + std::to_string(i));
    for (auto s : {"opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"}) p.push_back(s);
    return p;
}

std::string what_of(const Bytes& b) {
    try {
        read_gaussian_ply(b);
    } catch (const FormatError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("one vertex: log scales and logit opacity are decoded") {
    std::vector<float> row(23, 0.0f);
    row[0] = 1.0f;
    row[19] = 1.0f;  // rot_0
    const auto recs = read_gaussian_ply(make_ply(standard_props(), {row}));
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].scale == Vec3f(1, 1, 1));
    CHECK(recs[0].opacity == 0.5f);
    CHECK(recs[0].position == Vec3f(1, 0, 0));
    CHECK(recs[0].orientation == Vec4f(1, 0, 0, 0));
}

TEST_CASE("field mapping against a hand-built file") {
    std::vector<float> row(23);
    for (int i = 0; i < 23; ++i) row[i] = 0.01f * float(i + 1);
    row[15] = 2.0f;                                     // opacity logit
    row[16] = -1.0f, row[17] = 0.0f, row[18] = 0.5f;    // log scales
    row[19] = 0.0f, row[20] = 3.0f, row[21] = 0.0f, row[22] = 4.0f;
    const auto r = read_gaussian_ply(make_ply(standard_props(), {row}))[0];
    CHECK(r.position == Vec3f(0.01f, 0.02f, 0.03f));
    for (int i = 0; i < 12; ++i) CHECK(r.sh[i] == row[3 + i]);
    CHECK(r.opacity == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-6));
    CHECK(r.scale.x() == doctest::Approx(std::exp(-1.0)).epsilon(1e-6));
    CHECK(r.scale.z() == doctest::Approx(std::exp(0.5)).epsilon(1e-6));
    CHECK((r.orientation - Vec4f(0, 0.6f, 0, 0.8f)).norm() < 1e-6f);
}

TEST_CASE("extra scalar properties are skipped, order may vary") {
    auto props = standard_props();
    std::reverse(props.begin(), props.end());
    props.insert(props.begin() + 3, "nx");
    std::vector<float> row(24, 0.0f);
    // reversed: index 0 is rot_3 ... index of "x" is last.
    row[23] = 7.0f;   // x
    row[3] = 99.0f;   // nx
    row[0] = 1.0f;    // rot_3
    const auto r = read_gaussian_ply(make_ply(props, {row}))[0];
    CHECK(r.position.x() == 7.0f);
    CHECK(r.orientation == Vec4f(0, 0, 0, 1));
}

TEST_CASE("round trip of 1000 random records") {
    SplitMix64 rng(12);
    std::vector<GaussianRecord> recs(1000);
    for (auto& g : recs) {
        for (int c = 0; c < 3; ++c) g.position[c] = float(rng.normal() * 3);
        for (int c = 0; c < 3; ++c) g.scale[c] = float(std::exp(rng.uniform(-6, 1)));
        g.orientation = oracle::random_unit_quaternion(rng).cast<float>();
        g.opacity = float(rng.uniform(0.01, 0.99));
        for (auto& s : g.sh) s = float(rng.normal());
    }
    const auto bytes = write_gaussian_ply(recs);
    CHECK(write_gaussian_ply(recs) == bytes);
    const auto back = read_gaussian_ply(bytes);
    REQUIRE(back.size() == recs.size());
    auto close = [](float a, float b) { return std::abs(a - b) <= 1e-6f * std::max(1.0f, std::abs(b)); };
    for (std::size_t i = 0; i < recs.size(); ++i) {
        for (int c = 0; c < 3; ++c) CHECK(close(back[i].position[c], recs[i].position[c]));
        for (int c = 0; c < 3; ++c) CHECK(std::abs(back[i].scale[c] / recs[i].scale[c] - 1.0f) < 1e-6f);
        for (int c = 0; c < 4; ++c) CHECK(close(back[i].orientation[c], recs[i].orientation[c]));
        CHECK(close(back[i].opacity, recs[i].opacity));
        for (int c = 0; c < 12; ++c) CHECK(back[i].sh[c] == recs[i].sh[c]);
    }
}

TEST_CASE("empty file and byte length arithmetic") {
    const auto empty = write_gaussian_ply({});
    CHECK(read_gaussian_ply(empty).empty());
    const std::string text(empty.begin(), empty.end());
    CHECK(text.find("element vertex 0\n") != std::string::npos);
    CHECK(text.size() == text.find("end_header\n") + 11);

    std::vector<GaussianRecord> one(1);
    const auto b1 = write_gaussian_ply(one);
    const std::string h1(b1.begin(), b1.end());
    const std::size_t header = h1.find("end_header\n") + 11;
    CHECK(b1.size() == header + 23 * 4);
    CHECK(ply_property_names().size() == 23);
}

TEST_CASE("opacity 0 and 1 are clamped before the logit") {
    std::vector<GaussianRecord> g(2);
    g[0].opacity = 0.0f;
    g[1].opacity = 1.0f;
    const auto back = read_gaussian_ply(write_gaussian_ply(g));
    CHECK(back[0].opacity == doctest::Approx(1e-6).epsilon(1e-3));
    CHECK(back[1].opacity == doctest::Approx(1.0 - 1e-6).epsilon(1e-6));
    CHECK(std::isfinite(back[0].opacity));
}

TEST_CASE("malformed files are rejected with an offset") {
    const auto props = standard_props();
    std::vector<float> row(23, 0.0f);
    row[19] = 1.0f;
    CHECK(what_of(make_ply(props, {row}, "ascii 1.0")).find("byte offset") != std::string::npos);
    CHECK(!what_of(make_ply(props, {row}, "binary_big_endian 1.0")).empty());

    auto missing = props;
    missing.erase(missing.begin() + 16);  // scale_0
    CHECK(what_of(make_ply(missing, {std::vector<float>(22, 0.0f)})).find("scale_0") != std::string::npos);

    auto trunc = make_ply(props, {row, row});
    trunc.resize(trunc.size() - 5);
    CHECK(what_of(trunc).find("truncated") != std::string::npos);

    auto deg2 = props;
    deg2.push_back("f_rest_9");
    CHECK(!what_of(make_ply(deg2, {std::vector<float>(24, 0.0f)})).empty());

    CHECK(!what_of(Bytes{'o', 'b', 'j'}).empty());
}

TEST_CASE("file helpers") {
    const auto dir = std::filesystem::temp_directory_path() / "recon_test_ply";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "a.ply").string();
    std::vector<GaussianRecord> g(3);
    g[2].position = Vec3f(1, 2, 3);
    save_gaussian_ply(path, g);
    const auto back = load_gaussian_ply(path);
    REQUIRE(back.size() == 3);
    CHECK(back[2].position == Vec3f(1, 2, 3));
    CHECK_THROWS_AS(load_gaussian_ply((dir / "missing.ply").string()), IoError);
    std::filesystem::remove_all(dir);
}
