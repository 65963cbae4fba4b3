#pragma once

#include <bit>
#include <cstdint>
#include <limits>

namespace adpq {

/// IEEE-754 binary16 value held as its bit pattern. Conversion from wider
/// types rounds to nearest, ties to even; magnitudes >= 65520 become inf.
struct Half {
    std::uint16_t bits = 0;

    static constexpr Half from_bits(std::uint16_t b) noexcept { return Half{b}; }

    static constexpr Half from_double(double d) noexcept {
        const auto x = std::bit_cast<std::uint64_t>(d);
        const auto sign = static_cast<std::uint16_t>((x >> 48) & 0x8000u);
        const std::uint64_t abs = x & 0x7fffffffffffffffull;
        const int biased = static_cast<int>(abs >> 52);
        const std::uint64_t frac = abs & ((std::uint64_t{1} << 52) - 1);

        if (biased == 0x7ff) {
            return Half{static_cast<std::uint16_t>(sign | (frac ? 0x7e00u : 0x7c00u))};
        }
        if (std::bit_cast<double>(abs) >= 65520.0) {
            return Half{static_cast<std::uint16_t>(sign | 0x7c00u)};
        }
        const int e = biased - 1023;
        if (e >= -14) {
            std::uint64_t h = (static_cast<std::uint64_t>(e + 15) << 10) | (frac >> 42);
            const std::uint64_t rem = frac & ((std::uint64_t{1} << 42) - 1);
            const std::uint64_t halfway = std::uint64_t{1} << 41;
            if (rem > halfway || (rem == halfway && (h & 1u))) ++h;
            return Half{static_cast<std::uint16_t>(sign | h)};
        }
        if (biased == 0 || e < -25) {
            return Half{sign};
        }
        // binary16 subnormal: value = q * 2^-24
        const std::uint64_t mant = frac | (std::uint64_t{1} << 52);
        const int shift = 28 - e;
        std::uint64_t q = mant >> shift;
        const std::uint64_t rem = mant & ((std::uint64_t{1} << shift) - 1);
        const std::uint64_t halfway = std::uint64_t{1} << (shift - 1);
        if (rem > halfway || (rem == halfway && (q & 1u))) ++q;
        return Half{static_cast<std::uint16_t>(sign | q)};
    }

    static constexpr Half from_float(float f) noexcept { return from_double(static_cast<double>(f)); }

    constexpr float to_float() const noexcept {
        const std::uint32_t sign = static_cast<std::uint32_t>(bits & 0x8000u) << 16;
        const std::uint32_t exp = (bits >> 10) & 0x1fu;
        const std::uint32_t mant = bits & 0x3ffu;
        if (exp == 0) {
            // subnormals and zero are exact in binary32
            const float mag = static_cast<float>(mant) * 0x1p-24f;
            return sign ? -mag : mag;
        }
        if (exp == 0x1f) {
            return std::bit_cast<float>(sign | 0x7f800000u | (mant << 13));
        }
        return std::bit_cast<float>(sign | ((exp + 112u) << 23) | (mant << 13));
    }

    constexpr bool is_finite() const noexcept { return ((bits >> 10) & 0x1fu) != 0x1fu; }
    constexpr bool is_negative() const noexcept { return (bits & 0x8000u) != 0; }

    friend constexpr bool operator==(Half, Half) = default;
};

/// Round to the nearest binary16 value and widen back to binary32.
constexpr float round_to_half(double d) noexcept { return Half::from_double(d).to_float(); }

} // namespace adpq
