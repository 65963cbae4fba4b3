#pragma once

// Outlier selection by adaptive soft-thresholding plus mixed-precision
// group minmax quantization. RTN is the special case alpha = 0, clip = 1.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "config.hpp"
#include "error.hpp"
#include "half.hpp"
#include "tensor.hpp"

namespace adpq {

/// sign(w) * max(|w| - lambda'/|w|, 0). Zero maps to zero.
inline double soft_threshold(double w, double lambda_prime) {
    if (!std::isfinite(w) || !std::isfinite(lambda_prime)) {
        fail(ErrorCode::NonFiniteInput, "soft_threshold needs finite arguments");
    }
    if (lambda_prime < 0.0) fail(ErrorCode::InvariantViolation, "lambda' must be nonnegative");
    if (w == 0.0) return 0.0;
    const double mag = std::abs(w);
    const double shrunk = mag - lambda_prime / mag;
    return shrunk > 0.0 ? std::copysign(shrunk, w) : 0.0;
}

/// Number of outliers for a tensor of n weights: round(alpha * n), ties up.
inline std::size_t outlier_budget(std::size_t n, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 0.5)) {
        fail(ErrorCode::AlphaOutOfRange, "alpha = " + std::to_string(alpha) + " not in [0, 0.5]");
    }
    const double k = std::floor(alpha * static_cast<double>(n) + 0.5);
    return std::min(n, static_cast<std::size_t>(std::max(k, 0.0)));
}

struct LambdaSelection {
    double lambda_prime = 0.0;
    std::size_t k = 0;
};

struct OutlierPartition {
    double lambda_prime = 0.0;
    std::vector<std::uint8_t> outlier_flags; ///< 1 = outlier, row-major like the tensor
    std::size_t outlier_count = 0;
};

namespace detail {

inline void check_weights(std::span<const float> w) {
    if (w.empty()) fail(ErrorCode::EmptyInput, "no weights to select from");
    if (w.size() > std::numeric_limits<std::uint32_t>::max()) {
        fail(ErrorCode::InvariantViolation, "tensor too large for 32-bit flat indices");
    }
    for (float v : w) {
        if (!std::isfinite(v)) fail(ErrorCode::NonFiniteInput, "weights contain NaN or Inf");
    }
}

/// The (k+1)-th largest magnitude, 0 <= k < n. Radix select: finite
/// magnitudes order like their bit patterns, so one histogram pass over
/// the top 16 bits isolates the bucket holding the answer.
inline float kth_magnitude(std::span<const float> w, std::size_t k) {
    auto key = [](float v) { return std::bit_cast<std::uint32_t>(v) & 0x7fffffffu; };
    std::vector<std::size_t> hist(std::size_t{1} << 16, 0);
    for (float v : w) ++hist[key(v) >> 15];
    std::size_t above = 0, bucket = hist.size();
    while (bucket-- > 0) {
        if (above + hist[bucket] > k) break;
        above += hist[bucket];
    }
    std::vector<float> mags;
    mags.reserve(hist[bucket]);
    for (float v : w) {
        if ((key(v) >> 15) == bucket) mags.push_back(std::abs(v));
    }
    const auto nth = mags.begin() + static_cast<std::ptrdiff_t>(k - above);
    std::nth_element(mags.begin(), nth, mags.end(), std::greater<float>());
    return *nth;
}

inline double max_square(std::span<const float> w) {
    float m = 0.0f;
    for (float v : w) m = std::max(m, std::abs(v));
    return static_cast<double>(m) * static_cast<double>(m);
}

} // namespace detail

/// Threshold lambda' at which exactly round(alpha*n) weights are selected.
///
/// Lowering lambda' from a large value only ever adds weights to the
/// selected set (|w| > sqrt(lambda')), so the stopping point of that sweep
/// is an order statistic: lambda' = m_(k+1)^2 with m_(j) the j-th largest
/// magnitude. Weights tied with m_(k+1) are admitted lowest flat index
/// first. k == n gives 0; k == 0 gives max(w^2).
inline LambdaSelection find_lambda(std::span<const float> weights, double alpha) {
    detail::check_weights(weights);
    const std::size_t k = outlier_budget(weights.size(), alpha);
    if (k == weights.size()) return {0.0, k};
    if (k == 0) return {detail::max_square(weights), 0};
    const double m = detail::kth_magnitude(weights, k);
    return {m * m, k};
}

/// Per-tensor outlier selection: one lambda' for the whole tensor.
inline OutlierPartition select_outliers(const WeightTensor& tensor, const QuantConfig& config) {
    const std::span<const float> w(tensor.data);
    detail::check_weights(w);
    OutlierPartition part;
    part.outlier_flags.assign(w.size(), 0);
    part.outlier_count = outlier_budget(w.size(), config.alpha);
    const std::size_t k = part.outlier_count;
    if (k == 0) {
        part.lambda_prime = detail::max_square(w);
        return part;
    }
    if (k == w.size()) {
        std::fill(part.outlier_flags.begin(), part.outlier_flags.end(), std::uint8_t{1});
        return part;
    }
    const float m = detail::kth_magnitude(w, k);
    part.lambda_prime = static_cast<double>(m) * m;
    std::size_t above = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (std::abs(w[i]) > m) {
            part.outlier_flags[i] = 1;
            ++above;
        }
    }
    // fewer than k strictly above m: admit ties at m by flat index
    for (std::size_t i = 0; above < k; ++i) {
        if (std::abs(w[i]) == m) {
            part.outlier_flags[i] = 1;
            ++above;
        }
    }
    return part;
}

struct ClipRange {
    double lo = 0.0;
    double hi = 0.0;
};

/// Symmetric shrink of [min, max] about its midpoint by clip_fraction.
inline ClipRange clip_range(std::span<const float> values, double clip_fraction) {
    if (values.empty()) fail(ErrorCode::EmptyInput, "clip_range of an empty sequence");
    if (!(clip_fraction > 0.0 && clip_fraction <= 1.0)) {
        fail(ErrorCode::ClipOutOfRange, "clip fraction " + std::to_string(clip_fraction) + " not in (0, 1]");
    }
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    const double lo = *mn, hi = *mx;
    if (clip_fraction == 1.0 || lo == hi) return {lo, hi};
    const double mid = (hi + lo) / 2.0;
    const double half = clip_fraction * (hi - lo) / 2.0;
    return {mid - half, mid + half};
}

struct GroupCode {
    std::vector<std::uint8_t> codes;
    Half scale;
    Half zero;
};

namespace detail {

struct ScaleZero {
    Half scale;
    Half zero;
};

// Minmax-quantizes values into out[0, values.size()).
inline ScaleZero quantize_into(std::span<const float> values, int bits, double clip_fraction, std::uint8_t* out) {
    const ClipRange r = clip_range(values, clip_fraction);
    const int levels = (1 << bits) - 1;
    ScaleZero sz{Half::from_double(r.hi == r.lo ? 0.0 : (r.hi - r.lo) / levels), Half::from_double(r.lo)};
    if (!sz.scale.is_finite() || !sz.zero.is_finite()) {
        fail(ErrorCode::InvariantViolation, "group range [" + std::to_string(r.lo) + ", " + std::to_string(r.hi) +
                                                "] overflows binary16 scale/zero storage");
    }
    const double scale = sz.scale.to_float();
    const double zero = sz.zero.to_float();
    if (scale == 0.0) {
        std::fill(out, out + values.size(), std::uint8_t{0});
        return sz;
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double v = std::clamp(static_cast<double>(values[i]), r.lo, r.hi);
        const double q = std::round((v - zero) / scale); // half away from zero
        out[i] = static_cast<std::uint8_t>(std::clamp(q, 0.0, static_cast<double>(levels)));
    }
    return sz;
}

inline float dequantize_one(std::uint8_t code, float scale, float zero) noexcept {
    const float scaled = static_cast<float>(code) * scale;
    return scaled + zero;
}

} // namespace detail

/// Affine minmax quantization of one group to `bits`-bit codes. Scale and
/// zero-point are rounded to binary16 before the codes are computed.
inline GroupCode minmax_quantize_group(std::span<const float> values, int bits, double clip_fraction) {
    if (values.empty()) fail(ErrorCode::EmptyInput, "cannot quantize an empty group");
    validate_bits(bits, "bits");
    GroupCode g;
    g.codes.resize(values.size());
    const auto sz = detail::quantize_into(values, bits, clip_fraction, g.codes.data());
    g.scale = sz.scale;
    g.zero = sz.zero;
    return g;
}

inline std::vector<float> dequantize_group(std::span<const std::uint8_t> codes, Half scale, Half zero) {
    std::vector<float> out(codes.size());
    const float s = scale.to_float(), z = zero.to_float();
    for (std::size_t i = 0; i < codes.size(); ++i) out[i] = detail::dequantize_one(codes[i], s, z);
    return out;
}

struct OutlierEntry {
    std::uint16_t index = 0; ///< position within the group
    std::uint8_t code = 0;

    friend bool operator==(const OutlierEntry&, const OutlierEntry&) = default;
};

struct GroupParams {
    Half scale_c;
    Half zero_c;
    Half scale_o;
    Half zero_o;

    friend bool operator==(const GroupParams&, const GroupParams&) = default;
};

struct QuantizedGroup {
    GroupParams params;
    std::vector<std::uint8_t> codes;     ///< non-outlier codes, in position order
    std::vector<OutlierEntry> outliers;  ///< strictly increasing index

    std::size_t length() const noexcept { return codes.size() + outliers.size(); }

    friend bool operator==(const QuantizedGroup&, const QuantizedGroup&) = default;
};

/// Coded form of one tensor. Groups are stored row-major: row r, group j
/// lives at groups[r * groups_per_row() + j]. A row's last group is short
/// when cols is not a multiple of the group size.
struct QuantizedTensor {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    QuantConfig config;
    std::vector<QuantizedGroup> groups;

    std::size_t groups_per_row() const noexcept { return (cols + config.group_size - 1) / config.group_size; }

    std::size_t group_length(std::size_t j) const noexcept {
        return std::min<std::size_t>(config.group_size, cols - j * config.group_size);
    }

    std::size_t outlier_count() const noexcept {
        std::size_t k = 0;
        for (const auto& g : groups) k += g.outliers.size();
        return k;
    }

    friend bool operator==(const QuantizedTensor&, const QuantizedTensor&) = default;
};

/// Structural check of a quantized tensor; throws `code` on the first problem.
inline void validate(const QuantizedTensor& qt, ErrorCode code = ErrorCode::CorruptQuantizedTensor) {
    validate(qt.config);
    if (qt.rows == 0 || qt.cols == 0) fail(code, "tensor '" + qt.name + "' has an empty dimension");
    const std::size_t per_row = qt.groups_per_row();
    if (qt.groups.size() != qt.rows * per_row) {
        fail(code, "tensor '" + qt.name + "' has " + std::to_string(qt.groups.size()) + " groups, shape needs " +
                       std::to_string(qt.rows * per_row));
    }
    const unsigned max_c = (1u << qt.config.bits_c) - 1, max_o = (1u << qt.config.bits_o) - 1;
    for (std::size_t gi = 0; gi < qt.groups.size(); ++gi) {
        const auto& g = qt.groups[gi];
        const std::string where =
            "tensor '" + qt.name + "' row " + std::to_string(gi / per_row) + " group " + std::to_string(gi % per_row);
        const std::size_t len = qt.group_length(gi % per_row);
        if (g.length() != len) fail(code, where + ": holds " + std::to_string(g.length()) + " of " + std::to_string(len) + " values");
        const auto& p = g.params;
        for (Half h : {p.scale_c, p.zero_c, p.scale_o, p.zero_o}) {
            if (!h.is_finite()) fail(code, where + ": non-finite scale or zero-point");
        }
        if (p.scale_c.is_negative() || p.scale_o.is_negative()) fail(code, where + ": negative scale");
        if (g.outliers.empty() && (p.scale_o.bits != 0 || p.zero_o.bits != 0)) {
            fail(code, where + ": empty outlier set must store zero outlier params");
        }
        for (auto c : g.codes) {
            if (c > max_c) fail(code, where + ": code exceeds bit width");
        }
        for (std::size_t i = 0; i < g.outliers.size(); ++i) {
            const auto& e = g.outliers[i];
            if (e.index >= len) fail(code, where + ": outlier index " + std::to_string(e.index) + " out of group");
            if (i > 0 && e.index <= g.outliers[i - 1].index) fail(code, where + ": outlier indices not increasing");
            if (e.code > max_o) fail(code, where + ": outlier code exceeds bit width");
        }
    }
}

/// Quantizes with a precomputed partition. Original (unshrunken) values
/// are coded; non-outliers use bits_c and the clip fraction, outliers use
/// bits_o and are never clipped.
inline QuantizedTensor quantize_with_partition(const WeightTensor& tensor, const QuantConfig& config,
                                               const OutlierPartition& part) {
    validate(config);
    validate(tensor, ErrorCode::NonFiniteInput);
    if (part.outlier_flags.size() != tensor.size()) {
        fail(ErrorCode::ShapeMismatch, "partition does not match tensor '" + tensor.name + "'");
    }
    QuantizedTensor qt;
    qt.name = tensor.name;
    qt.rows = tensor.rows;
    qt.cols = tensor.cols;
    qt.config = config;
    const std::size_t g = config.group_size;
    const std::size_t per_row = qt.groups_per_row();
    qt.groups.resize(tensor.rows * per_row);

    std::vector<float> inliers, outliers;
    std::vector<std::uint8_t> outlier_codes;
    inliers.reserve(g);
    outliers.reserve(g);
    outlier_codes.reserve(g);
    for (std::size_t r = 0; r < tensor.rows; ++r) {
        for (std::size_t j = 0; j < per_row; ++j) {
            auto& grp = qt.groups[r * per_row + j];
            const std::size_t start = r * tensor.cols + j * g;
            const std::size_t len = qt.group_length(j);
            inliers.clear();
            outliers.clear();
            for (std::size_t i = 0; i < len; ++i) {
                const float v = tensor.data[start + i];
                if (part.outlier_flags[start + i]) {
                    outliers.push_back(v);
                    grp.outliers.push_back(OutlierEntry{static_cast<std::uint16_t>(i), 0});
                } else {
                    inliers.push_back(v);
                }
            }
            if (!inliers.empty()) {
                grp.codes.resize(inliers.size());
                const auto sz = detail::quantize_into(inliers, config.bits_c, config.clip_fraction, grp.codes.data());
                grp.params.scale_c = sz.scale;
                grp.params.zero_c = sz.zero;
            }
            if (!outliers.empty()) {
                outlier_codes.resize(outliers.size());
                const auto sz = detail::quantize_into(outliers, config.bits_o, 1.0, outlier_codes.data());
                grp.params.scale_o = sz.scale;
                grp.params.zero_o = sz.zero;
                for (std::size_t i = 0; i < outliers.size(); ++i) grp.outliers[i].code = outlier_codes[i];
            }
        }
    }
    return qt;
}

inline QuantizedTensor quantize_tensor(const WeightTensor& tensor, const QuantConfig& config) {
    validate(config);
    validate(tensor, ErrorCode::NonFiniteInput);
    return quantize_with_partition(tensor, config, select_outliers(tensor, config));
}

/// Round-to-nearest group quantization with no outlier handling. The
/// outlier width is recorded as `bits` so the packed form matches
/// quantize_tensor with alpha = 0 and bits_o = bits_c.
inline QuantizedTensor rtn_quantize(const WeightTensor& tensor, std::uint32_t group_size, int bits) {
    return quantize_tensor(tensor, QuantConfig{0.0, group_size, bits, bits, 1.0});
}

inline WeightTensor dequantize_tensor(const QuantizedTensor& qt) {
    validate(qt, ErrorCode::CorruptQuantizedTensor);
    WeightTensor out;
    out.name = qt.name;
    out.rows = qt.rows;
    out.cols = qt.cols;
    out.data.resize(qt.rows * qt.cols);
    const std::size_t per_row = qt.groups_per_row();
    for (std::size_t r = 0; r < qt.rows; ++r) {
        for (std::size_t j = 0; j < per_row; ++j) {
            const auto& grp = qt.groups[r * per_row + j];
            float* dst = out.data.data() + r * qt.cols + j * qt.config.group_size;
            const float sc = grp.params.scale_c.to_float(), zc = grp.params.zero_c.to_float();
            const float so = grp.params.scale_o.to_float(), zo = grp.params.zero_o.to_float();
            std::size_t next_code = 0, next_outlier = 0;
            for (std::size_t i = 0; i < grp.length(); ++i) {
                if (next_outlier < grp.outliers.size() && grp.outliers[next_outlier].index == i) {
                    dst[i] = detail::dequantize_one(grp.outliers[next_outlier++].code, so, zo);
                } else {
                    dst[i] = detail::dequantize_one(grp.codes[next_code++], sc, zc);
                }
            }
        }
    }
    return out;
}

} // namespace adpq
