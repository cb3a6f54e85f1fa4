#include "recon/codec.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "recon/errors.hpp"
#include "recon/motion.hpp"

namespace recon {

std::uint16_t float_to_half(float value) {
    if (!std::isfinite(value)) throw NumericalError("cannot encode non-finite value as half");
    constexpr std::uint32_t kF16Max = (127u + 16u) << 23;
    constexpr std::uint32_t kDenormMagic = ((127u - 15u) + (23u - 10u) + 1u) << 23;

    std::uint32_t f = std::bit_cast<std::uint32_t>(value);
    const std::uint32_t sign = f & 0x80000000u;
    f ^= sign;
    std::uint32_t out;
    if (f >= kF16Max) {
        out = 0x7c00u;
    } else if (f < (113u << 23)) {
        const float shifted = std::bit_cast<float>(f) + std::bit_cast<float>(kDenormMagic);
        out = std::bit_cast<std::uint32_t>(shifted) - kDenormMagic;
    } else {
        const std::uint32_t mant_odd = (f >> 13) & 1u;
        f += (static_cast<std::uint32_t>(15 - 127) << 23) + 0xfffu;
        f += mant_odd;
        out = f >> 13;
    }
    if ((out & 0x7fffu) >= 0x7c00u)
        throw NumericalError("value " + std::to_string(value) + " overflows the half16 range");
    return static_cast<std::uint16_t>(out | (sign >> 16));
}

float half_to_float(std::uint16_t bits) {
    const std::uint32_t sign = (bits & 0x8000u) << 16;
    const std::uint32_t exponent = (bits >> 10) & 0x1fu;
    const std::uint32_t mantissa = bits & 0x3ffu;
    if (exponent == 0) {
        const float magnitude = std::ldexp(static_cast<float>(mantissa), -24);
        return sign ? -magnitude : magnitude;
    }
    if (exponent == 31)
        return std::bit_cast<float>(sign | 0x7f800000u | (mantissa << 13));
    return std::bit_cast<float>(sign | ((exponent + 112u) << 23) | (mantissa << 13));
}

namespace {

class Writer {
public:
    explicit Writer(Bytes& out) : out_(out) {}
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v) { put(v, 2); }
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void raw(const char* s, std::size_t n) { out_.insert(out_.end(), s, s + n); }

private:
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    Bytes& out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
    std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    float f32() { return std::bit_cast<float>(u32()); }
    void need(std::size_t n) const {
        if (in_.size() - pos_ < n)
            throw FormatError("truncated payload at byte offset " + std::to_string(pos_) + ": need " +
                              std::to_string(n) + " bytes, " + std::to_string(in_.size() - pos_) + " left");
    }
    std::size_t position() const { return pos_; }
    std::span<const std::uint8_t> take(std::size_t n) {
        need(n);
        auto s = in_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

private:
    std::uint64_t get(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

constexpr char kMagic[4] = {'R', 'C', 'G', 'S'};

void write_record(Writer& w, const GaussianRecord& g) {
    for (int i = 0; i < 3; ++i) w.f32(g.position[i]);
    for (int i = 0; i < 3; ++i) w.f32(g.scale[i]);
    for (int i = 0; i < 4; ++i) w.f32(g.orientation[i]);
    w.f32(g.opacity);
    for (float c : g.sh) w.f32(c);
}

GaussianRecord read_record(Reader& r) {
    GaussianRecord g;
    for (int i = 0; i < 3; ++i) g.position[i] = r.f32();
    for (int i = 0; i < 3; ++i) g.scale[i] = r.f32();
    for (int i = 0; i < 4; ++i) g.orientation[i] = r.f32();
    g.opacity = r.f32();
    for (float& c : g.sh) c = r.f32();
    return g;
}

// Values of one block, anchor-major: n anchors x `dims` components.
template <int Dims, typename V>
void write_block(Writer& w, const std::vector<V>& values, Quantization q) {
    switch (q) {
        case Quantization::full32:
            for (const auto& v : values)
                for (int c = 0; c < Dims; ++c) w.f32(v[c]);
            break;
        case Quantization::half16:
            for (const auto& v : values)
                for (int c = 0; c < Dims; ++c) w.u16(float_to_half(v[c]));
            break;
        case Quantization::fixed16: {
            std::array<float, Dims> lo, hi;
            lo.fill(std::numeric_limits<float>::infinity());
            hi.fill(-std::numeric_limits<float>::infinity());
            for (const auto& v : values)
                for (int c = 0; c < Dims; ++c) {
                    lo[c] = std::min(lo[c], v[c]);
                    hi[c] = std::max(hi[c], v[c]);
                }
            for (int c = 0; c < Dims; ++c) {
                w.f32(lo[c]);
                w.f32(hi[c]);
            }
            for (const auto& v : values) {
                for (int c = 0; c < Dims; ++c) {
                    const double range = static_cast<double>(hi[c]) - lo[c];
                    std::uint16_t code = 0;
                    if (range > 0.0) {
                        const double t = std::round((static_cast<double>(v[c]) - lo[c]) / range * 65535.0);
                        code = static_cast<std::uint16_t>(std::clamp(t, 0.0, 65535.0));
                    }
                    w.u16(code);
                }
            }
            break;
        }
    }
}

template <int Dims, typename V>
std::vector<V> read_block(Reader& r, std::size_t n, Quantization q) {
    std::vector<V> out(n, V::Zero());
    switch (q) {
        case Quantization::full32:
            for (auto& v : out)
                for (int c = 0; c < Dims; ++c) v[c] = r.f32();
            break;
        case Quantization::half16:
            for (auto& v : out)
                for (int c = 0; c < Dims; ++c) v[c] = half_to_float(r.u16());
            break;
        case Quantization::fixed16: {
            std::array<float, Dims> lo, hi;
            for (int c = 0; c < Dims; ++c) {
                lo[c] = r.f32();
                hi[c] = r.f32();
            }
            for (auto& v : out) {
                for (int c = 0; c < Dims; ++c) {
                    const std::uint16_t code = r.u16();
                    const double range = static_cast<double>(hi[c]) - lo[c];
                    v[c] = range > 0.0 ? static_cast<float>(lo[c] + code / 65535.0 * range) : lo[c];
                }
            }
            break;
        }
    }
    return out;
}

void check_block_finite(const FrameDeformation& d) {
    for (std::size_t l = 0; l < d.per_level.size(); ++l) {
        const auto& set = d.per_level[l];
        if (set.translations.size() != set.rotations.size())
            throw ConfigError("level " + std::to_string(l + 1) + ": translation/rotation counts differ");
        for (std::size_t a = 0; a < set.size(); ++a)
            if (!set.translations[a].allFinite() || !set.rotations[a].allFinite())
                throw ConfigError("level " + std::to_string(l + 1) + ": non-finite delta at anchor " +
                                  std::to_string(a));
    }
}

}  // namespace

StreamHeader StreamHeader::from_config(const StreamConfig& config, std::uint64_t gaussian_count) {
    validate_config(config);
    if (config.level_ratio > 255) throw ConfigError("level_ratio must fit in one byte");
    StreamHeader h;
    h.levels = static_cast<std::uint8_t>(config.levels);
    h.quantization = config.quantization;
    h.composition_mode = config.composition_mode;
    h.level_ratio = static_cast<std::uint8_t>(config.level_ratio);
    h.reconfig_period = static_cast<std::uint32_t>(config.reconfig_period);
    h.finest_fraction_num = config.finest_fraction_num;
    h.finest_fraction_den = config.finest_fraction_den;
    h.gaussian_count_initial = gaussian_count;
    h.anchor_targets = config.anchor_counts;
    return h;
}

StreamConfig StreamHeader::to_config() const {
    StreamConfig c;
    c.levels = levels;
    c.quantization = quantization;
    c.composition_mode = composition_mode;
    c.level_ratio = level_ratio;
    c.reconfig_period = static_cast<int>(reconfig_period);
    c.finest_fraction_num = finest_fraction_num;
    c.finest_fraction_den = finest_fraction_den;
    c.anchor_counts = anchor_targets;
    validate_config(c);
    return c;
}

Bytes encode_header(const StreamHeader& h) {
    if (!h.anchor_targets.empty() && h.anchor_targets.size() != h.levels)
        throw ConfigError("header anchor target list must have one entry per level");
    Bytes out;
    Writer w(out);
    w.raw(kMagic, 4);
    w.u16(h.version);
    w.u8(h.levels);
    w.u8(static_cast<std::uint8_t>(h.quantization));
    w.u8(static_cast<std::uint8_t>(h.composition_mode));
    w.u8(h.level_ratio);
    w.u16(0);
    w.u32(h.reconfig_period);
    w.u32(h.finest_fraction_num);
    w.u32(h.finest_fraction_den);
    w.u64(h.gaussian_count_initial);
    for (std::uint8_t l = 0; l < h.levels; ++l) w.u32(h.anchor_targets.empty() ? 0 : h.anchor_targets[l]);
    return out;
}

StreamHeader decode_header(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    const auto magic = r.take(4);
    if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("bad magic");
    StreamHeader h;
    h.version = r.u16();
    if (h.version != kStreamVersion)
        throw FormatError("unsupported stream version " + std::to_string(h.version));
    h.levels = r.u8();
    const auto q = r.u8();
    const auto mode = r.u8();
    h.level_ratio = r.u8();
    r.u16();
    if (q > 2) throw FormatError("unknown quantization code " + std::to_string(q));
    if (mode > 1) throw FormatError("unknown composition mode code " + std::to_string(mode));
    if (h.levels < 1 || h.levels > 4) throw FormatError("level count " + std::to_string(h.levels) + " out of range");
    h.quantization = static_cast<Quantization>(q);
    h.composition_mode = static_cast<CompositionMode>(mode);
    h.reconfig_period = r.u32();
    h.finest_fraction_num = r.u32();
    h.finest_fraction_den = r.u32();
    h.gaussian_count_initial = r.u64();
    std::vector<std::uint32_t> targets(h.levels);
    for (auto& t : targets) t = r.u32();
    if (std::any_of(targets.begin(), targets.end(), [](std::uint32_t t) { return t != 0; })) {
        if (std::any_of(targets.begin(), targets.end(), [](std::uint32_t t) { return t == 0; }))
            throw FormatError("anchor target list mixes zero and non-zero entries");
        h.anchor_targets = std::move(targets);
    }
    return h;
}

std::size_t value_width(Quantization q) { return q == Quantization::full32 ? 4 : 2; }

std::size_t frame_overhead_bytes(int levels, Quantization q) {
    const auto l = static_cast<std::size_t>(levels);
    std::size_t bytes = 8 + 4 * l + 4 + 4 + 1;
    if (q == Quantization::fixed16) bytes += l * 7 * 2 * 4;
    return bytes;
}

std::size_t delta_block_bytes(std::span<const std::uint32_t> anchor_counts, Quantization q) {
    std::size_t bytes = 0;
    for (auto n : anchor_counts) {
        bytes += static_cast<std::size_t>(n) * 7 * value_width(q);
        if (q == Quantization::fixed16) bytes += 7 * 2 * 4;
    }
    return bytes;
}

std::size_t payload_size(const StreamHeader& header, std::span<const std::uint32_t> anchor_counts,
                         std::size_t added_count, std::size_t pruned_count) {
    if (anchor_counts.size() != header.levels) throw ConfigError("anchor count list does not match header levels");
    return frame_overhead_bytes(header.levels, Quantization::full32) + delta_block_bytes(anchor_counts, header.quantization) +
           added_count * kGaussianRecordBytes + pruned_count * 8;
}

std::vector<std::uint32_t> FramePayload::anchor_counts() const {
    std::vector<std::uint32_t> out;
    for (const auto& level : deformation.per_level) out.push_back(static_cast<std::uint32_t>(level.size()));
    return out;
}

Bytes encode_frame(const FramePayload& frame, Quantization quantization) {
    const auto& d = frame.deformation;
    check_block_finite(d);
    for (std::size_t i = 1; i < d.pruned_indices.size(); ++i)
        if (d.pruned_indices[i] <= d.pruned_indices[i - 1])
            throw ConfigError("pruned indices must be strictly increasing");

    Bytes out;
    Writer w(out);
    w.u64(frame.frame_index);
    for (const auto& level : d.per_level) w.u32(static_cast<std::uint32_t>(level.size()));
    for (const auto& level : d.per_level) {
        write_block<3>(w, level.translations, quantization);
        write_block<4>(w, level.rotations, quantization);
    }
    w.u32(static_cast<std::uint32_t>(d.added_gaussians.size()));
    for (const auto& g : d.added_gaussians) write_record(w, g);
    w.u32(static_cast<std::uint32_t>(d.pruned_indices.size()));
    for (auto idx : d.pruned_indices) w.u64(idx);
    w.u8(frame.reconfig ? 1 : 0);
    return out;
}

Bytes encode_frame(const FrameDeformation& deltas, const AnchorHierarchy& hierarchy, Quantization quantization,
                   std::uint64_t frame_index, bool reconfig) {
    check_consistent(hierarchy, deltas);
    return encode_frame(FramePayload{frame_index, reconfig, deltas}, quantization);
}

FramePayload parse_frame(std::span<const std::uint8_t> bytes, const StreamHeader& header, std::size_t& consumed) {
    Reader r(bytes);
    FramePayload f;
    f.frame_index = r.u64();
    std::vector<std::uint32_t> counts(header.levels);
    for (auto& c : counts) {
        c = r.u32();
        if (c == 0) throw FormatError("frame " + std::to_string(f.frame_index) + ": level with zero anchors");
    }
    // Reject counts that cannot fit before allocating for them.
    r.need(delta_block_bytes(counts, header.quantization));
    for (std::size_t l = 0; l < counts.size(); ++l) {
        AnchorDeltaSet set;
        set.translations = read_block<3, Vec3f>(r, counts[l], header.quantization);
        set.rotations = read_block<4, Vec4f>(r, counts[l], header.quantization);
        f.deformation.per_level.push_back(std::move(set));
    }
    const std::uint32_t added = r.u32();
    r.need(static_cast<std::size_t>(added) * kGaussianRecordBytes);
    for (std::uint32_t i = 0; i < added; ++i) f.deformation.added_gaussians.push_back(read_record(r));
    const std::uint32_t pruned = r.u32();
    r.need(static_cast<std::size_t>(pruned) * 8);
    for (std::uint32_t i = 0; i < pruned; ++i) {
        f.deformation.pruned_indices.push_back(r.u64());
        if (i > 0 && f.deformation.pruned_indices[i] <= f.deformation.pruned_indices[i - 1])
            throw FormatError("frame " + std::to_string(f.frame_index) + ": pruned indices not increasing");
    }
    const std::uint8_t flag = r.u8();
    if (flag > 1) throw FormatError("frame " + std::to_string(f.frame_index) + ": bad reconfiguration flag");
    f.reconfig = flag == 1;
    consumed = r.position();
    return f;
}

FrameDeformation decode_frame(std::span<const std::uint8_t> bytes, const StreamHeader& header,
                              const AnchorHierarchy& hierarchy) {
    std::size_t consumed = 0;
    FramePayload f = parse_frame(bytes, header, consumed);
    if (consumed != bytes.size())
        throw FormatError("frame " + std::to_string(f.frame_index) + ": " + std::to_string(bytes.size() - consumed) +
                          " trailing bytes");
    if (hierarchy.levels.size() != f.deformation.per_level.size())
        throw FormatError("frame " + std::to_string(f.frame_index) + ": level count differs from decoder hierarchy");
    for (std::size_t l = 0; l < hierarchy.levels.size(); ++l) {
        if (f.deformation.per_level[l].size() != hierarchy.levels[l].anchor_count())
            throw FormatError("frame " + std::to_string(f.frame_index) + ": level " + std::to_string(l + 1) +
                              " carries " + std::to_string(f.deformation.per_level[l].size()) +
                              " anchors but the decoder hierarchy has " +
                              std::to_string(hierarchy.levels[l].anchor_count()));
    }
    return std::move(f.deformation);
}

FrameDeformation dequantize(const FrameDeformation& deltas, Quantization quantization) {
    check_block_finite(deltas);
    FrameDeformation out;
    for (const auto& level : deltas.per_level) {
        Bytes buf;
        Writer w(buf);
        write_block<3>(w, level.translations, quantization);
        write_block<4>(w, level.rotations, quantization);
        Reader r(buf);
        AnchorDeltaSet set;
        set.translations = read_block<3, Vec3f>(r, level.size(), quantization);
        set.rotations = read_block<4, Vec4f>(r, level.size(), quantization);
        out.per_level.push_back(std::move(set));
    }
    out.added_gaussians = deltas.added_gaussians;
    out.pruned_indices = deltas.pruned_indices;
    return out;
}

Bytes serialize_stream(const StreamFile& stream) {
    Bytes out = encode_header(stream.header);
    for (const auto& f : stream.frames) out.insert(out.end(), f.begin(), f.end());
    return out;
}

StreamFile parse_stream(std::span<const std::uint8_t> bytes) {
    StreamFile s;
    s.header = decode_header(bytes);
    std::size_t pos = s.header.byte_size();
    if (pos > bytes.size()) throw FormatError("truncated stream header");
    while (pos < bytes.size()) {
        std::size_t consumed = 0;
        try {
            parse_frame(bytes.subspan(pos), s.header, consumed);
        } catch (const FormatError& e) {
            throw FormatError("frame #" + std::to_string(s.frames.size() + 1) + " at stream offset " +
                              std::to_string(pos) + ": " + e.what());
        }
        s.frames.emplace_back(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                              bytes.begin() + static_cast<std::ptrdiff_t>(pos + consumed));
        pos += consumed;
    }
    return s;
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing '" + path + "'");
}

Bytes read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return data;
}

namespace {

std::vector<std::uint32_t> counts_for_finest(std::uint64_t finest, const StreamConfig& config) {
    const auto levels = static_cast<std::size_t>(config.levels);
    std::vector<std::uint32_t> counts(levels);
    std::uint64_t divisor = 1;
    for (std::size_t k = 0; k < levels; ++k) {
        const std::uint64_t c = std::max<std::uint64_t>((finest + divisor - 1) / divisor, 1);
        counts[levels - 1 - k] = static_cast<std::uint32_t>(c);
        if (divisor <= (std::uint64_t{1} << 40)) divisor *= static_cast<std::uint64_t>(config.level_ratio);
    }
    return counts;
}

}  // namespace

std::size_t planned_frame_bytes(std::uint64_t finest, const StreamConfig& config, std::size_t overhead_bytes) {
    const auto counts = counts_for_finest(finest, config);
    std::size_t anchors = 0;
    for (auto c : counts) anchors += c;
    return overhead_bytes + anchors * 7 * value_width(config.quantization);
}

std::vector<std::uint32_t> plan_budget(std::uint64_t n_gaussians, std::uint64_t bytes_per_frame,
                                       const StreamConfig& config, std::size_t overhead_bytes) {
    validate_config(config);
    if (n_gaussians == 0) throw ConfigError("plan_budget: no gaussians");
    const std::size_t minimum = planned_frame_bytes(1, config, overhead_bytes);
    if (bytes_per_frame < minimum)
        throw BudgetError("budget of " + std::to_string(bytes_per_frame) +
                              " bytes/frame is infeasible; minimum feasible budget is " + std::to_string(minimum) +
                              " bytes/frame",
                          minimum);

    const std::uint64_t cap = std::max<std::uint64_t>(
        (n_gaussians * config.finest_fraction_num + config.finest_fraction_den - 1) / config.finest_fraction_den, 1);
    std::uint64_t lo = 1, hi = std::min<std::uint64_t>(cap, std::numeric_limits<std::uint32_t>::max());
    while (lo < hi) {
        const std::uint64_t mid = lo + (hi - lo + 1) / 2;
        if (planned_frame_bytes(mid, config, overhead_bytes) <= bytes_per_frame)
            lo = mid;
        else
            hi = mid - 1;
    }
    return counts_for_finest(lo, config);
}

std::vector<std::uint32_t> plan_budget(std::uint64_t n_gaussians, std::uint64_t bytes_per_frame,
                                       const StreamConfig& config) {
    // Fixed16 range headers scale with levels, not anchors, so they count as overhead.
    return plan_budget(n_gaussians, bytes_per_frame, config,
                       frame_overhead_bytes(config.levels, config.quantization));
}

FrameBytes frame_bytes(const FramePayload& frame, Quantization quantization) {
    FrameBytes b;
    b.frame_index = frame.frame_index;
    const auto counts = frame.anchor_counts();
    b.header = frame_overhead_bytes(static_cast<int>(counts.size()), Quantization::full32);
    b.deltas = delta_block_bytes(counts, quantization);
    b.densify = frame.deformation.added_gaussians.size() * kGaussianRecordBytes +
                frame.deformation.pruned_indices.size() * 8;
    return b;
}

StorageReport storage_report(std::span<const FrameBytes> log, std::size_t stream_header_bytes) {
    if (log.empty()) throw ConfigError("storage_report: no frames");
    StorageReport r;
    r.frames = log.size();
    r.stream_header_bytes = stream_header_bytes;
    for (const auto& f : log) {
        r.total_bytes += f.total();
        r.delta_bytes += f.deltas;
        r.densify_bytes += f.densify;
        r.frame_header_bytes += f.header;
        r.max_bytes_per_frame = std::max(r.max_bytes_per_frame, f.total());
    }
    const auto n = static_cast<double>(r.frames);
    r.mean_bytes_per_frame = static_cast<double>(r.total_bytes) / n;
    r.mean_delta_bytes = static_cast<double>(r.delta_bytes) / n;
    r.mean_densify_bytes = static_cast<double>(r.densify_bytes) / n;
    r.mean_frame_header_bytes = static_cast<double>(r.frame_header_bytes) / n;
    return r;
}

std::string format_report(const StorageReport& r) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(1);
    os << "frames                 " << r.frames << "\n"
       << "stream header bytes    " << r.stream_header_bytes << "\n"
       << "total frame bytes      " << r.total_bytes << "\n"
       << "mean bytes/frame       " << r.mean_bytes_per_frame << "\n"
       << "max bytes/frame        " << r.max_bytes_per_frame << "\n"
       << "  deltas     (mean)    " << r.mean_delta_bytes << "\n"
       << "  densify    (mean)    " << r.mean_densify_bytes << "\n"
       << "  frame hdr  (mean)    " << r.mean_frame_header_bytes << "\n";
    return os.str();
}

}  // namespace recon
