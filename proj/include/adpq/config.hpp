#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <string>

#include "error.hpp"

namespace adpq {

/// Knobs shared by every tensor quantized in one run.
struct QuantConfig {
    double alpha = 0.0;            ///< fraction of weights kept as outliers, [0, 0.5]
    std::uint32_t group_size = 128;///< power of two in [2, 1024]
    int bits_c = 4;                ///< non-outlier code width, [2, 8]
    int bits_o = 4;                ///< outlier code width, [2, 8]
    double clip_fraction = 1.0;    ///< non-outlier range shrink, (0, 1]

    /// log2(group_size): width of an in-group outlier index.
    int index_bits() const noexcept { return std::countr_zero(group_size); }

    friend bool operator==(const QuantConfig&, const QuantConfig&) = default;
};

inline void validate_bits(int bits, const char* what) {
    if (bits < 2 || bits > 8) {
        fail(ErrorCode::BitsOutOfRange, std::string(what) + " = " + std::to_string(bits) + " not in [2, 8]");
    }
}

inline void validate(const QuantConfig& c) {
    if (!(c.alpha >= 0.0 && c.alpha <= 0.5)) {
        fail(ErrorCode::AlphaOutOfRange, "alpha = " + std::to_string(c.alpha) + " not in [0, 0.5]");
    }
    if (c.group_size < 2 || c.group_size > 1024 || !std::has_single_bit(c.group_size)) {
        fail(ErrorCode::GroupSizeInvalid,
             "group size " + std::to_string(c.group_size) + " must be a power of two in [2, 1024]");
    }
    validate_bits(c.bits_c, "bits");
    validate_bits(c.bits_o, "outlier bits");
    if (!(c.clip_fraction > 0.0 && c.clip_fraction <= 1.0)) {
        fail(ErrorCode::ClipOutOfRange, "clip fraction " + std::to_string(c.clip_fraction) + " not in (0, 1]");
    }
}

} // namespace adpq
