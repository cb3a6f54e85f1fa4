#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "recon/codec.hpp"
#include "recon/errors.hpp"
#include "recon/hierarchy.hpp"
#include "recon/motion.hpp"
#include "recon/ply.hpp"
#include "recon/session.hpp"
#include "recon/synth.hpp"

namespace py = pybind11;
using namespace recon;

namespace {

using PointsF = Eigen::Matrix<float, Eigen::Dynamic, 3, Eigen::RowMajor>;
using QuatsD = Eigen::Matrix<double, Eigen::Dynamic, 4, Eigen::RowMajor>;

std::vector<Vec3f> to_points(const Eigen::Ref<const PointsF>& m) {
    std::vector<Vec3f> out(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) out[static_cast<std::size_t>(i)] = m.row(i).transpose();
    return out;
}

PointsF from_records(std::span<const GaussianRecord> g) {
    PointsF m(static_cast<Eigen::Index>(g.size()), 3);
    for (std::size_t i = 0; i < g.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = g[i].position.transpose();
    return m;
}

py::bytes to_bytes(const Bytes& b) { return {reinterpret_cast<const char*>(b.data()), b.size()}; }

Bytes from_bytes(const py::bytes& b) {
    const std::string s = b;
    return {s.begin(), s.end()};
}

py::dict metrics_dict(const FrameMetrics& m) {
    py::dict d;
    d["frame"] = m.frame;
    d["initial_loss"] = m.initial_loss;
    d["loss"] = m.loss;
    d["mean_error"] = m.mean_error;
    d["bytes"] = m.bytes;
    d["anchors"] = m.anchors;
    d["reconfig"] = m.reconfig;
    d["added"] = m.added;
    d["checksum"] = format_checksum(m.checksum);
    return d;
}

SceneSpec scene_of(const std::string& preset, int frames, const std::string& spec_json) {
    return spec_json.empty() ? preset_scene(preset, frames) : parse_scene_spec(spec_json);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Hierarchical anchor motion codec for dynamic Gaussian sets";

    auto base = py::register_exception<Error>(m, "ReconError", PyExc_RuntimeError);
    auto config_error = py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<BudgetError>(m, "BudgetError", config_error.ptr());
    py::register_exception<FormatError>(m, "FormatError", base.ptr());
    py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);

    py::class_<StreamConfig>(m, "StreamConfig")
        .def(py::init<>())
        .def_readwrite("levels", &StreamConfig::levels)
        .def_readwrite("finest_fraction_num", &StreamConfig::finest_fraction_num)
        .def_readwrite("finest_fraction_den", &StreamConfig::finest_fraction_den)
        .def_readwrite("level_ratio", &StreamConfig::level_ratio)
        .def_readwrite("reconfig_period", &StreamConfig::reconfig_period)
        .def_readwrite("phase1_steps", &StreamConfig::phase1_steps)
        .def_readwrite("phase2_steps", &StreamConfig::phase2_steps)
        .def_readwrite("densify_threshold", &StreamConfig::densify_threshold)
        .def_readwrite("anchor_counts", &StreamConfig::anchor_counts)
        .def_property(
            "quantization", [](const StreamConfig& c) { return to_string(c.quantization); },
            [](StreamConfig& c, const std::string& s) { c.quantization = parse_quantization(s); })
        .def_property(
            "composition_mode", [](const StreamConfig& c) { return to_string(c.composition_mode); },
            [](StreamConfig& c, const std::string& s) { c.composition_mode = parse_composition_mode(s); })
        .def("validate", [](const StreamConfig& c) { validate_config(c); });

    m.def("grid_resolution", &grid_resolution, py::arg("n_anchor"), py::arg("level"), py::arg("ratio") = 3);
    m.def(
        "sample_anchors",
        [](const Eigen::Ref<const PointsF>& pts, std::int64_t n_anchor, int level, int ratio) {
            return sample_anchors(to_points(pts), n_anchor, level, ratio).anchor_indices;
        },
        py::arg("positions"), py::arg("n_anchor"), py::arg("level") = 1, py::arg("ratio") = 3,
        "Anchor point indices, sorted by grid cell.");
    m.def(
        "assign_clusters",
        [](const Eigen::Ref<const PointsF>& pts, std::vector<std::uint32_t> anchors) {
            LevelStructure lvl;
            lvl.anchor_indices = std::move(anchors);
            return assign_clusters(to_points(pts), lvl);
        },
        py::arg("positions"), py::arg("anchor_indices"));
    m.def("level_targets", &level_targets, py::arg("gaussian_count"), py::arg("config") = StreamConfig{});

    m.def(
        "average_quaternions",
        [](const Eigen::Ref<const QuatsD>& q) {
            std::vector<Vec4d> v;
            for (Eigen::Index i = 0; i < q.rows(); ++i) v.push_back(q.row(i).transpose());
            return Vec4d(average_quaternions(v));
        },
        py::arg("quaternions"), "Dominant eigenvector of sum q q^T, canonical sign; rows are (w, x, y, z).");
    m.def(
        "max_eigenpair",
        [](const Eigen::Matrix4d& a) {
            const auto e = symmetric4_max_eigenvector(a);
            return py::make_tuple(e.value, Vec4d(e.vector));
        },
        py::arg("matrix"));

    m.def("float_to_half", &float_to_half);
    m.def("half_to_float", &half_to_float);
    m.def(
        "plan_budget",
        [](std::uint64_t n, std::uint64_t budget, const StreamConfig& c) { return plan_budget(n, budget, c); },
        py::arg("n_gaussians"), py::arg("bytes_per_frame"), py::arg("config") = StreamConfig{});
    m.def("delta_block_bytes", [](std::vector<std::uint32_t> counts, const std::string& q) {
        return delta_block_bytes(counts, parse_quantization(q));
    });

    m.def(
        "generate_positions",
        [](const std::string& preset, int frames, const std::string& spec_json) {
            const auto scene = generate_scene(scene_of(preset, frames, spec_json));
            std::vector<Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>> out;
            for (const auto& f : scene.positions) {
                Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> a(static_cast<Eigen::Index>(f.size()), 3);
                for (std::size_t i = 0; i < f.size(); ++i) a.row(static_cast<Eigen::Index>(i)) = f[i].transpose();
                out.push_back(std::move(a));
            }
            return out;
        },
        py::arg("preset") = "two_body", py::arg("frames") = 0, py::arg("spec_json") = "",
        "Exact per-frame positions of a synthetic scene.");
    m.def("preset_spec_json", [](const std::string& preset, int frames) {
        return scene_spec_to_json(preset_scene(preset, frames));
    }, py::arg("preset"), py::arg("frames") = 0);

    m.def(
        "run_session",
        [](const StreamConfig& config, const std::string& preset, int frames, const std::string& spec_json,
           std::uint64_t budget, std::uint64_t seed, const std::string& supervision) {
            const auto scene = generate_scene(scene_of(preset, frames, spec_json));
            SessionResult r;
            {
                py::gil_scoped_release release;
                r = run_session(scene, config, {}, budget, seed, parse_supervision(supervision));
            }
            py::dict d;
            py::list rows;
            for (const auto& fm : r.metrics) rows.append(metrics_dict(fm));
            d["metrics"] = rows;
            d["stream"] = to_bytes(serialize_stream(r.stream));
            d["positions"] = from_records(r.final_state.gaussians);
            d["checksum"] = format_checksum(state_checksum(r.final_state));
            d["mean_bytes_per_frame"] = r.storage.mean_bytes_per_frame;
            d["report"] = format_report(r.storage);
            return d;
        },
        py::arg("config") = StreamConfig{}, py::arg("preset") = "two_body", py::arg("frames") = 0,
        py::arg("spec_json") = "", py::arg("budget") = 0, py::arg("seed") = 0, py::arg("supervision") = "absolute",
        "Encode a synthetic scene; returns metrics, the stream bytes and the final encoder state.");
    m.def(
        "decode_stream",
        [](const py::bytes& stream, const std::string& preset, int frames, const std::string& spec_json,
           std::uint64_t seed) {
            const auto file = parse_stream(from_bytes(stream));
            const auto scene = generate_scene(scene_of(preset, frames, spec_json));
            const auto state = decode_stream(file, initial_gaussians(scene, seed));
            return py::make_tuple(from_records(state.gaussians), format_checksum(state_checksum(state)));
        },
        py::arg("stream"), py::arg("preset") = "two_body", py::arg("frames") = 0, py::arg("spec_json") = "",
        py::arg("seed") = 0, "Replay a stream; returns (positions, checksum).");
    m.def("inspect_header", [](const py::bytes& stream) {
        const auto h = decode_header(from_bytes(stream));
        py::dict d;
        d["version"] = h.version;
        d["levels"] = h.levels;
        d["quantization"] = to_string(h.quantization);
        d["composition_mode"] = to_string(h.composition_mode);
        d["reconfig_period"] = h.reconfig_period;
        d["gaussian_count"] = h.gaussian_count_initial;
        return d;
    });

    m.def(
        "read_ply_positions",
        [](const std::string& path) { return from_records(load_gaussian_ply(path)); }, py::arg("path"));
    m.def(
        "write_ply_points",
        [](const std::string& path, const Eigen::Ref<const PointsF>& pts, std::uint64_t seed) {
            save_gaussian_ply(path, gaussians_at(to_points(pts), seed));
        },
        py::arg("path"), py::arg("positions"), py::arg("seed") = 0,
        "Write positions as gaussians with small isotropic scales.");
}
