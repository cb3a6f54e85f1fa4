#include "recon/ply.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <map>
#include <sstream>

#include "recon/errors.hpp"

namespace recon {

const std::vector<std::string>& ply_property_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> n = {"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"};
        for (int i = 0; i < 9; ++i) n.push_back("f_rest_" + std::to_string(i));
        n.push_back("opacity");
        for (int i = 0; i < 3; ++i) n.push_back("scale_" + std::to_string(i));
        for (int i = 0; i < 4; ++i) n.push_back("rot_" + std::to_string(i));
        return n;
    }();
    return names;
}

namespace {

// SH layout: sh[0..2] are the DC terms (one per channel), sh[3..11] the
// degree-1 rest, channel-major as in f_rest_0..8.
constexpr int kProps = 23;

int type_size(const std::string& t) {
    if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
    if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
    if (t == "int" || t == "uint" || t == "float" || t == "int32" || t == "uint32" || t == "float32") return 4;
    if (t == "double" || t == "float64") return 8;
    return 0;
}

float sigmoid(float x) { return static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(x)))); }

float logit(float p) {
    const double c = std::clamp(static_cast<double>(p), 1e-6, 1.0 - 1e-6);
    return static_cast<float>(std::log(c / (1.0 - c)));
}

}  // namespace

std::vector<GaussianRecord> read_gaussian_ply(std::span<const std::uint8_t> bytes) {
    const std::string end_marker = "end_header\n";
    const std::string_view text(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    if (text.substr(0, 4) != "ply\n") throw FormatError("not a PLY file (byte offset 0)");
    const auto end = text.find(end_marker);
    if (end == std::string_view::npos) throw FormatError("PLY header has no end_header");
    const std::size_t body_start = end + end_marker.size();

    std::istringstream header{std::string(text.substr(0, end))};
    std::string line;
    std::size_t vertex_count = 0;
    bool have_vertex = false, have_format = false;
    std::size_t stride = 0;
    std::map<std::string, std::size_t> offsets;  // float properties only
    std::size_t line_offset = 0;
    while (std::getline(header, line)) {
        const std::size_t at = line_offset;
        line_offset += line.size() + 1;
        std::istringstream ls(line);
        std::string kw;
        ls >> kw;
        if (kw.empty() || kw == "ply" || kw == "comment" || kw == "obj_info") continue;
        if (kw == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt != "binary_little_endian")
                throw FormatError("unsupported PLY format '" + fmt + "' at byte offset " + std::to_string(at) +
                                  "; only binary_little_endian is accepted");
            have_format = true;
        } else if (kw == "element") {
            std::string name;
            long long count = -1;
            ls >> name >> count;
            if (name != "vertex" || have_vertex)
                throw FormatError("unexpected PLY element '" + name + "' at byte offset " + std::to_string(at));
            if (count < 0) throw FormatError("bad vertex count at byte offset " + std::to_string(at));
            vertex_count = static_cast<std::size_t>(count);
            have_vertex = true;
        } else if (kw == "property") {
            if (!have_vertex) throw FormatError("property before element at byte offset " + std::to_string(at));
            std::string type, name;
            ls >> type;
            if (type == "list") throw FormatError("list properties are not supported (byte offset " + std::to_string(at) + ")");
            ls >> name;
            const int size = type_size(type);
            if (size == 0) throw FormatError("unknown property type '" + type + "' at byte offset " + std::to_string(at));
            if (name.rfind("f_rest_", 0) == 0) {
                const int k = std::atoi(name.c_str() + 7);
                if (k >= 9)
                    throw FormatError("property '" + name + "' implies SH degree above 1 (byte offset " +
                                      std::to_string(at) + ")");
            }
            const auto& names = ply_property_names();
            if (std::find(names.begin(), names.end(), name) != names.end()) {
                if (type != "float" && type != "float32")
                    throw FormatError("property '" + name + "' must be float (byte offset " + std::to_string(at) + ")");
                if (offsets.count(name))
                    throw FormatError("duplicate property '" + name + "' at byte offset " + std::to_string(at));
                offsets[name] = stride;
            }
            stride += static_cast<std::size_t>(size);
        } else {
            throw FormatError("unknown PLY header keyword '" + kw + "' at byte offset " + std::to_string(at));
        }
    }
    if (!have_format) throw FormatError("PLY header has no format line");
    if (!have_vertex) throw FormatError("PLY header has no vertex element");
    std::array<std::size_t, kProps> slot{};
    for (int i = 0; i < kProps; ++i) {
        const auto& name = ply_property_names()[static_cast<std::size_t>(i)];
        auto it = offsets.find(name);
        if (it == offsets.end()) throw FormatError("missing PLY property '" + name + "'");
        slot[static_cast<std::size_t>(i)] = it->second;
    }

    const std::size_t available = bytes.size() - body_start;
    if (vertex_count > available / stride) {
        const std::size_t full = available / stride;
        throw FormatError("truncated PLY body: vertex " + std::to_string(full) + " ends past byte offset " +
                          std::to_string(bytes.size()));
    }
    if (available != vertex_count * stride)
        throw FormatError("PLY body has " + std::to_string(available - vertex_count * stride) +
                          " trailing bytes at byte offset " + std::to_string(body_start + vertex_count * stride));

    std::vector<GaussianRecord> out(vertex_count);
    std::array<float, kProps> v{};
    for (std::size_t n = 0; n < vertex_count; ++n) {
        const std::uint8_t* row = bytes.data() + body_start + n * stride;
        for (int i = 0; i < kProps; ++i) {
            std::uint32_t bits = 0;
            std::memcpy(&bits, row + slot[static_cast<std::size_t>(i)], 4);
            if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
            v[static_cast<std::size_t>(i)] = std::bit_cast<float>(bits);
        }
        auto& g = out[n];
        g.position = Vec3f(v[0], v[1], v[2]);
        for (int i = 0; i < kShCoefficients; ++i) g.sh[static_cast<std::size_t>(i)] = v[static_cast<std::size_t>(3 + i)];
        g.opacity = sigmoid(v[15]);
        for (int i = 0; i < 3; ++i) g.scale[i] = std::exp(v[static_cast<std::size_t>(16 + i)]);
        g.orientation = Vec4f(v[19], v[20], v[21], v[22]);
        if (!normalize_quaternion(g.orientation))
            throw FormatError("vertex " + std::to_string(n) + " at byte offset " +
                              std::to_string(body_start + n * stride) + " has a zero quaternion");
    }
    return out;
}

Bytes write_gaussian_ply(std::span<const GaussianRecord> records) {
    std::ostringstream h;
    h << "ply\nformat binary_little_endian 1.0\nelement vertex " << records.size() << "\n";
    for (const auto& name : ply_property_names()) h << "property float " << name << "\n";
    h << "end_header\n";
    const std::string head = h.str();
    Bytes out(head.begin(), head.end());
    out.reserve(out.size() + records.size() * kProps * 4);
    auto put = [&out](float f) {
        const auto bits = std::bit_cast<std::uint32_t>(f);
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    };
    for (const auto& g : records) {
        for (int i = 0; i < 3; ++i) put(g.position[i]);
        for (float c : g.sh) put(c);
        put(logit(g.opacity));
        for (int i = 0; i < 3; ++i) put(std::log(g.scale[i]));
        for (int i = 0; i < 4; ++i) put(g.orientation[i]);
    }
    return out;
}

std::vector<GaussianRecord> load_gaussian_ply(const std::string& path) {
    const Bytes data = read_file(path);
    try {
        return read_gaussian_ply(data);
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
}

void save_gaussian_ply(const std::string& path, std::span<const GaussianRecord> records) {
    write_file(path, write_gaussian_ply(records));
}

}  // namespace recon
