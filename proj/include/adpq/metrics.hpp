#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "packed_codec.hpp"
#include "quantizer.hpp"
#include "tensor.hpp"

namespace adpq {

inline constexpr std::size_t kDefaultBins = 2048;
inline constexpr double kHistogramEpsilon = 1e-10;

/// Equal-width histogram on [lo, hi] with epsilon-smoothed, normalized mass.
struct Histogram {
    double lo = 0.0;
    double hi = 1.0;
    std::vector<double> mass;

    std::size_t bins() const noexcept { return mass.size(); }
};

struct Support {
    double lo;
    double hi;
};

inline Support shared_support(std::span<const float> a, std::span<const float> b) {
    if (a.empty() || b.empty()) fail(ErrorCode::EmptyInput, "histogram of an empty sample set");
    double lo = a.front(), hi = a.front();
    for (auto s : {a, b}) {
        for (float v : s) {
            if (!std::isfinite(v)) fail(ErrorCode::NonFiniteInput, "histogram sample is not finite");
            lo = std::min<double>(lo, v);
            hi = std::max<double>(hi, v);
        }
    }
    // a single repeated value still needs a nonempty interval
    if (hi == lo) hi = lo + 1.0;
    return {lo, hi};
}

inline Histogram make_histogram(std::span<const float> samples, Support support, std::size_t bins) {
    if (samples.empty()) fail(ErrorCode::EmptyInput, "histogram of an empty sample set");
    if (bins < 2) fail(ErrorCode::InvariantViolation, "histogram needs at least 2 bins");
    Histogram h{support.lo, support.hi, std::vector<double>(bins, 0.0)};
    const double width = (support.hi - support.lo) / static_cast<double>(bins);
    for (float v : samples) {
        const double pos = (static_cast<double>(v) - support.lo) / width;
        const auto idx = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(bins - 1)));
        h.mass[idx] += 1.0;
    }
    const double n = static_cast<double>(samples.size());
    double total = 0.0;
    for (auto& m : h.mass) {
        m = m / n + kHistogramEpsilon;
        total += m;
    }
    for (auto& m : h.mass) m /= total;
    return h;
}

/// Sum p ln(p/q) in nats. Both histograms must share support and bins.
inline double kl_divergence(const Histogram& p, const Histogram& q) {
    if (p.bins() != q.bins()) fail(ErrorCode::ShapeMismatch, "histograms have different bin counts");
    double kl = 0.0;
    for (std::size_t i = 0; i < p.bins(); ++i) kl += p.mass[i] * std::log(p.mass[i] / q.mass[i]);
    return std::max(kl, 0.0);
}

/// Histogram estimate of KL(P || Q) on the shared support of both sample sets.
inline double kl_hist(std::span<const float> p_samples, std::span<const float> q_samples,
                      std::size_t bins = kDefaultBins) {
    const Support s = shared_support(p_samples, q_samples);
    return kl_divergence(make_histogram(p_samples, s, bins), make_histogram(q_samples, s, bins));
}

/// pi * KL(f_X || f) + (1 - pi) * KL(f_Y || f), f = pi f_X + (1 - pi) f_Y.
/// Bounded by ln 2.
inline double jsd_mixture(std::span<const float> nonoutlier_samples, std::span<const float> outlier_samples, double pi,
                          std::size_t bins = kDefaultBins) {
    if (!(pi > 0.0 && pi < 1.0)) fail(ErrorCode::PiOutOfRange, "mixture weight " + std::to_string(pi) + " not in (0, 1)");
    const Support s = shared_support(nonoutlier_samples, outlier_samples);
    const Histogram fx = make_histogram(nonoutlier_samples, s, bins);
    const Histogram fy = make_histogram(outlier_samples, s, bins);
    Histogram mix{s.lo, s.hi, std::vector<double>(bins)};
    for (std::size_t i = 0; i < bins; ++i) mix.mass[i] = pi * fx.mass[i] + (1.0 - pi) * fy.mass[i];
    const double jsd = pi * kl_divergence(fx, mix) + (1.0 - pi) * kl_divergence(fy, mix);
    return std::max(jsd, 0.0);
}

inline double mse(const WeightTensor& original, const WeightTensor& reconstructed) {
    require_same_shape(original, reconstructed);
    double acc = 0.0;
    for (std::size_t i = 0; i < original.size(); ++i) {
        const double d = static_cast<double>(original.data[i]) - reconstructed.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(original.size());
}

inline double max_abs_err(const WeightTensor& original, const WeightTensor& reconstructed) {
    require_same_shape(original, reconstructed);
    double m = 0.0;
    for (std::size_t i = 0; i < original.size(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(original.data[i]) - reconstructed.data[i]));
    }
    return m;
}

/// Relative l1 penalty sum |w_hat / w| over nonzero originals.
inline double penalty_sum(const WeightTensor& original, const WeightTensor& reconstructed) {
    require_same_shape(original, reconstructed);
    double acc = 0.0;
    for (std::size_t i = 0; i < original.size(); ++i) {
        if (original.data[i] == 0.0f) continue;
        acc += std::abs(static_cast<double>(reconstructed.data[i]) / original.data[i]);
    }
    return acc;
}

struct QuantReport {
    double mse = 0.0;
    double max_abs_err = 0.0;
    double penalty_sum = 0.0;
    double kl = 0.0;
    double jsd = 0.0;
    double b_avg_theoretical = 0.0;
    double b_avg_actual = 0.0;
    std::size_t outlier_count = 0;
    double lambda_prime = 0.0;
};

inline nlohmann::json to_json(const QuantReport& r) {
    return {{"mse", r.mse},
            {"max_abs_err", r.max_abs_err},
            {"penalty_sum", r.penalty_sum},
            {"kl", r.kl},
            {"jsd", r.jsd},
            {"b_avg_theoretical", r.b_avg_theoretical},
            {"b_avg_actual", r.b_avg_actual},
            {"outlier_count", r.outlier_count},
            {"lambda_prime", r.lambda_prime}};
}

/// Splits the original weights into (non-outlier, outlier) populations.
inline std::pair<std::vector<float>, std::vector<float>> split_populations(const WeightTensor& original,
                                                                           const OutlierPartition& part) {
    std::pair<std::vector<float>, std::vector<float>> out;
    for (std::size_t i = 0; i < original.size(); ++i) {
        (part.outlier_flags[i] ? out.second : out.first).push_back(original.data[i]);
    }
    return out;
}

/// Quality report for one tensor. The partition is recomputed from the
/// original weights and must agree with the outlier slots stored in qt;
/// b_avg_actual is this tensor's share of `packed` (its group streams).
inline QuantReport build_report(const WeightTensor& original, const QuantizedTensor& qt, const PackedModel& packed,
                                std::size_t bins = kDefaultBins) {
    validate(original, ErrorCode::NonFiniteInput);
    if (original.rows != qt.rows || original.cols != qt.cols) {
        fail(ErrorCode::ShapeMismatch, "tensor '" + original.name + "' shape differs from its quantized form");
    }
    if (!(qt.config == packed.config)) {
        fail(ErrorCode::InvariantViolation, "quantized tensor and container disagree on config");
    }
    const WeightTensor recon = dequantize_tensor(qt);
    const OutlierPartition part = select_outliers(original, qt.config);

    const std::size_t per_row = qt.groups_per_row();
    std::size_t stored = 0;
    for (std::size_t gi = 0; gi < qt.groups.size(); ++gi) {
        const std::size_t base = (gi / per_row) * qt.cols + (gi % per_row) * qt.config.group_size;
        for (const auto& e : qt.groups[gi].outliers) {
            if (!part.outlier_flags[base + e.index]) {
                fail(ErrorCode::InvariantViolation, "tensor '" + qt.name + "' stores an outlier at flat index " +
                                                        std::to_string(base + e.index) + " the selection rejects");
            }
            ++stored;
        }
    }
    if (stored != part.outlier_count) {
        fail(ErrorCode::InvariantViolation, "tensor '" + qt.name + "' stores " + std::to_string(stored) +
                                                " outliers, selection expects " + std::to_string(part.outlier_count));
    }

    QuantReport rep;
    rep.mse = mse(original, recon);
    rep.max_abs_err = max_abs_err(original, recon);
    rep.penalty_sum = penalty_sum(original, recon);
    rep.kl = kl_hist(original.data, recon.data, bins);
    if (part.outlier_count > 0 && part.outlier_count < original.size()) {
        const auto [inliers, outliers] = split_populations(original, part);
        rep.jsd = jsd_mixture(inliers, outliers, 1.0 - qt.config.alpha, bins);
    }
    const BitsReport bits = bits_report(qt);
    rep.b_avg_theoretical = average_bits_theoretical(packed.config);
    rep.b_avg_actual = bits.b_avg_actual;
    rep.outlier_count = part.outlier_count;
    rep.lambda_prime = part.lambda_prime;
    return rep;
}

} // namespace adpq
