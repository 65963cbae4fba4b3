#pragma once

// Bit-exact ".adpq" container for quantized tensors.
//
//   magic "ADPQPACK", version u32 = 1
//   config: alpha f64, group_size u32, bits_c u8, bits_o u8, clip f64
//   tensor count u32
//   per tensor: name length u16, UTF-8 name, rows u32, cols u32, groups row-major
//   per group:  k u16, scale_c f16, zero_c f16, scale_o f16, zero_o f16,
//               (m - k) non-outlier codes of bits_c bits,
//               k x (log2(g)-bit index, bits_o-bit code),
//               zero padding to a byte boundary
//
// Integers and floats are little-endian; codes are packed MSB-first.

#include <cstddef>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bytes.hpp"
#include "config.hpp"
#include "error.hpp"
#include "quantizer.hpp"

namespace adpq {

inline constexpr std::string_view kPackMagic = "ADPQPACK";
inline constexpr std::uint32_t kPackVersion = 1;

struct PackedModel {
    std::uint32_t version = kPackVersion;
    QuantConfig config;
    std::vector<QuantizedTensor> tensors;

    friend bool operator==(const PackedModel&, const PackedModel&) = default;
};

/// Average stored bits per weight as charged by the group-quantization
/// formula: codes, outlier indices and one 16-bit scale/zero pair per group.
inline double average_bits_theoretical(const QuantConfig& c) {
    const double g = c.group_size;
    const double params = 2.0 * 16.0 / g;
    return (c.bits_c + params) * (1.0 - c.alpha) + (c.bits_o + c.index_bits() + params) * c.alpha;
}

namespace detail {

inline std::size_t group_code_bits(const QuantConfig& c, std::size_t len, std::size_t k) {
    return (len - k) * static_cast<std::size_t>(c.bits_c) +
           k * static_cast<std::size_t>(c.index_bits() + c.bits_o);
}

inline constexpr std::size_t kGroupHeaderBytes = 2 + 4 * 2;

inline std::string group_label(const std::string& name, std::size_t row, std::size_t group) {
    return "tensor '" + name + "' row " + std::to_string(row) + " group " + std::to_string(group);
}

inline void encode_tensor(ByteWriter& w, const QuantizedTensor& qt) {
    const auto& c = qt.config;
    w.u16(static_cast<std::uint16_t>(qt.name.size()));
    w.raw(qt.name);
    w.u32(static_cast<std::uint32_t>(qt.rows));
    w.u32(static_cast<std::uint32_t>(qt.cols));
    for (const auto& g : qt.groups) {
        w.u16(static_cast<std::uint16_t>(g.outliers.size()));
        w.u16(g.params.scale_c.bits);
        w.u16(g.params.zero_c.bits);
        w.u16(g.params.scale_o.bits);
        w.u16(g.params.zero_o.bits);
        BitWriter bits(w.buffer());
        for (auto code : g.codes) bits.put(code, c.bits_c);
        for (const auto& e : g.outliers) {
            bits.put(e.index, c.index_bits());
            bits.put(e.code, c.bits_o);
        }
        bits.flush();
    }
}

inline QuantizedTensor decode_tensor(ByteReader& r, const QuantConfig& c) {
    QuantizedTensor qt;
    qt.config = c;
    const std::uint16_t name_len = r.u16();
    qt.name = std::string(r.str(name_len));
    qt.rows = r.u32();
    qt.cols = r.u32();
    if (qt.rows == 0 || qt.cols == 0) fail(ErrorCode::HeaderParse, "tensor '" + qt.name + "' has an empty dimension");
    const std::size_t per_row = qt.groups_per_row();
    // each group needs at least its 10 header bytes; reject absurd shapes before allocating
    if (qt.rows * per_row > r.remaining() / kGroupHeaderBytes) {
        fail(ErrorCode::Truncated, "tensor '" + qt.name + "' declares more groups than the stream holds");
    }
    qt.groups.resize(qt.rows * per_row);
    for (std::size_t gi = 0; gi < qt.groups.size(); ++gi) {
        auto& g = qt.groups[gi];
        const std::size_t row = gi / per_row, j = gi % per_row;
        const std::size_t len = qt.group_length(j);
        const std::size_t k = r.u16();
        g.params.scale_c = Half::from_bits(r.u16());
        g.params.zero_c = Half::from_bits(r.u16());
        g.params.scale_o = Half::from_bits(r.u16());
        g.params.zero_o = Half::from_bits(r.u16());
        if (k > len) {
            fail(ErrorCode::IndexOutOfGroup, group_label(qt.name, row, j) + ": " + std::to_string(k) +
                                                 " outliers in a group of " + std::to_string(len));
        }
        const std::size_t nbits = group_code_bits(c, len, k);
        BitReader bits(r.take((nbits + 7) / 8));
        g.codes.resize(len - k);
        for (auto& code : g.codes) code = static_cast<std::uint8_t>(bits.get(c.bits_c));
        g.outliers.resize(k);
        for (std::size_t i = 0; i < k; ++i) {
            auto& e = g.outliers[i];
            const std::uint32_t index = bits.get(c.index_bits());
            e.code = static_cast<std::uint8_t>(bits.get(c.bits_o));
            if (index >= len) {
                fail(ErrorCode::IndexOutOfGroup, group_label(qt.name, row, j) + ": outlier index " +
                                                     std::to_string(index) + " >= group length " + std::to_string(len));
            }
            if (i > 0 && index <= g.outliers[i - 1].index) {
                fail(ErrorCode::NonMonotonicOutlierIndices, group_label(qt.name, row, j) + ": outlier index " +
                                                                std::to_string(index) + " follows " +
                                                                std::to_string(g.outliers[i - 1].index));
            }
            e.index = static_cast<std::uint16_t>(index);
        }
        if (!bits.align()) fail(ErrorCode::HeaderParse, group_label(qt.name, row, j) + ": nonzero padding bits");
        const auto& p = g.params;
        for (Half h : {p.scale_c, p.zero_c, p.scale_o, p.zero_o}) {
            if (!h.is_finite()) fail(ErrorCode::HeaderParse, group_label(qt.name, row, j) + ": non-finite scale or zero-point");
        }
        if (p.scale_c.is_negative() || p.scale_o.is_negative()) {
            fail(ErrorCode::HeaderParse, group_label(qt.name, row, j) + ": negative scale");
        }
        if (k == 0 && (p.scale_o.bits != 0 || p.zero_o.bits != 0)) {
            fail(ErrorCode::HeaderParse, group_label(qt.name, row, j) + ": empty group with nonzero outlier params");
        }
    }
    return qt;
}

} // namespace detail

inline std::vector<std::uint8_t> encode(const PackedModel& model) {
    try {
        validate(model.config);
    } catch (const Error& e) {
        fail(ErrorCode::InvariantViolation, e.what());
    }
    std::set<std::string> names;
    for (const auto& qt : model.tensors) {
        if (!(qt.config == model.config)) {
            fail(ErrorCode::InvariantViolation, "tensor '" + qt.name + "' was quantized with a different config");
        }
        if (qt.name.size() > 0xffff) fail(ErrorCode::InvariantViolation, "tensor name longer than 65535 bytes");
        if (qt.rows > 0xffffffffu || qt.cols > 0xffffffffu) {
            fail(ErrorCode::InvariantViolation, "tensor '" + qt.name + "' shape exceeds u32");
        }
        if (!names.insert(qt.name).second) fail(ErrorCode::InvariantViolation, "duplicate tensor name '" + qt.name + "'");
        validate(qt, ErrorCode::InvariantViolation);
    }
    ByteWriter w;
    w.raw(kPackMagic);
    w.u32(kPackVersion);
    w.f64(model.config.alpha);
    w.u32(model.config.group_size);
    w.u8(static_cast<std::uint8_t>(model.config.bits_c));
    w.u8(static_cast<std::uint8_t>(model.config.bits_o));
    w.f64(model.config.clip_fraction);
    w.u32(static_cast<std::uint32_t>(model.tensors.size()));
    for (const auto& qt : model.tensors) detail::encode_tensor(w, qt);
    return w.take();
}

inline std::vector<std::uint8_t> encode(const QuantizedTensor& qt) {
    return encode(PackedModel{kPackVersion, qt.config, {qt}});
}

inline PackedModel decode(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, ErrorCode::Truncated);
    if (bytes.size() < kPackMagic.size() || r.str(kPackMagic.size()) != kPackMagic) {
        fail(ErrorCode::BadMagic, "not an ADPQPACK container");
    }
    PackedModel model;
    model.version = r.u32();
    if (model.version != kPackVersion) fail(ErrorCode::BadVersion, "packed container version " + std::to_string(model.version));
    model.config.alpha = r.f64();
    model.config.group_size = r.u32();
    model.config.bits_c = r.u8();
    model.config.bits_o = r.u8();
    model.config.clip_fraction = r.f64();
    try {
        validate(model.config);
    } catch (const Error& e) {
        fail(ErrorCode::HeaderParse, std::string("config block: ") + e.what());
    }
    const std::uint32_t count = r.u32();
    std::set<std::string> names;
    for (std::uint32_t i = 0; i < count; ++i) {
        auto qt = detail::decode_tensor(r, model.config);
        if (!names.insert(qt.name).second) fail(ErrorCode::HeaderParse, "duplicate tensor name '" + qt.name + "'");
        model.tensors.push_back(std::move(qt));
    }
    if (r.remaining() != 0) {
        fail(ErrorCode::HeaderParse, std::to_string(r.remaining()) + " trailing bytes after the last tensor");
    }
    return model;
}

/// Storage accounting. b_avg_actual counts group streams only (headers,
/// codes, indices, padding); container framing is itemized in header_bits.
struct BitsReport {
    double b_avg_theoretical = 0.0;
    double b_avg_actual = 0.0;
    std::uint64_t overhead_bits = 0; ///< header + count fields + outlier params + padding

    std::uint64_t weights = 0;
    std::uint64_t groups = 0;
    std::uint64_t payload_bytes = 0;      ///< bytes of all group streams
    std::uint64_t formula_bits = 0;       ///< codes + indices + one scale/zero pair per group
    std::uint64_t header_bits = 0;        ///< magic, version, config, names, shapes
    std::uint64_t count_field_bits = 0;   ///< 16 per group
    std::uint64_t outlier_param_bits = 0; ///< the second scale/zero pair, 32 per group
    std::uint64_t padding_bits = 0;
};

namespace detail {

inline void accumulate_bits(BitsReport& rep, const QuantizedTensor& qt) {
    const std::size_t per_row = qt.groups_per_row();
    rep.header_bits += 8ull * (2 + qt.name.size() + 4 + 4);
    rep.weights += static_cast<std::uint64_t>(qt.rows) * qt.cols;
    for (std::size_t gi = 0; gi < qt.groups.size(); ++gi) {
        const std::size_t code_bits =
            group_code_bits(qt.config, qt.group_length(gi % per_row), qt.groups[gi].outliers.size());
        const std::size_t stream_bytes = kGroupHeaderBytes + (code_bits + 7) / 8;
        rep.groups += 1;
        rep.payload_bytes += stream_bytes;
        rep.formula_bits += code_bits + 32;
        rep.count_field_bits += 16;
        rep.outlier_param_bits += 32;
        rep.padding_bits += (8 - code_bits % 8) % 8;
    }
}

inline void finish_bits(BitsReport& rep, const QuantConfig& config) {
    rep.b_avg_theoretical = average_bits_theoretical(config);
    rep.b_avg_actual = rep.weights ? 8.0 * static_cast<double>(rep.payload_bytes) / static_cast<double>(rep.weights) : 0.0;
    rep.overhead_bits = rep.header_bits + rep.count_field_bits + rep.outlier_param_bits + rep.padding_bits;
}

} // namespace detail

inline BitsReport bits_report(const PackedModel& model) {
    BitsReport rep;
    rep.header_bits = 8ull * (kPackMagic.size() + 4 + 8 + 4 + 1 + 1 + 8 + 4);
    for (const auto& qt : model.tensors) detail::accumulate_bits(rep, qt);
    detail::finish_bits(rep, model.config);
    return rep;
}

/// Accounting for one tensor's share of a container (no file framing).
inline BitsReport bits_report(const QuantizedTensor& qt) {
    BitsReport rep;
    detail::accumulate_bits(rep, qt);
    detail::finish_bits(rep, qt.config);
    return rep;
}

} // namespace adpq
