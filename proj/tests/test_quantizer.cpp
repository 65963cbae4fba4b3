#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "adpq/metrics.hpp"
#include "adpq/quantizer.hpp"
#include "test_support.hpp"

using namespace adpq;
using namespace adpq::testing;

namespace {

template <class F>
ErrorCode error_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorCode::InvariantViolation;
}

// Largest candidate threshold (0 or some w_i^2) at which exactly k weights
// satisfy |w| > sqrt(lambda'). Only meaningful without magnitude ties.
double enumerate_lambda(const std::vector<float>& w, std::size_t k) {
    std::vector<double> candidates{0.0};
    for (float v : w) candidates.push_back(double(v) * v);
    double best = -1.0;
    for (double lam : candidates) {
        std::size_t count = 0;
        for (float v : w) count += std::abs(double(v)) > std::sqrt(lam);
        if (count == k) best = std::max(best, lam);
    }
    return best;
}

} // namespace

TEST(SoftThreshold, Examples) {
    EXPECT_DOUBLE_EQ(soft_threshold(2.0, 1.0), 1.5);
    EXPECT_DOUBLE_EQ(soft_threshold(-2.0, 1.0), -1.5);
    EXPECT_EQ(soft_threshold(0.5, 1.0), 0.0);
    EXPECT_EQ(soft_threshold(0.0, 1.0), 0.0);
    for (double w : {-3.25, -1e-3, 7.0, 1e6}) EXPECT_EQ(soft_threshold(w, 0.0), w);
    EXPECT_EQ(error_of([] { soft_threshold(NAN, 1.0); }), ErrorCode::NonFiniteInput);
    EXPECT_EQ(error_of([] { soft_threshold(1.0, INFINITY); }), ErrorCode::NonFiniteInput);
}

TEST(SoftThreshold, ShrinksAndPreservesSign) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> nd(0.0, 2.0);
    std::uniform_real_distribution<double> lam(0.01, 4.0);
    for (int i = 0; i < 100000; ++i) {
        const double w = nd(rng), l = lam(rng);
        const double s = soft_threshold(w, l);
        EXPECT_LT(std::abs(s), std::abs(w));
        EXPECT_TRUE(s == 0.0 || std::signbit(s) == std::signbit(w));
        // nonzero exactly above sqrt(lambda'), away from the rounding boundary
        if (std::abs(std::abs(w) - std::sqrt(l)) > 1e-9) {
            EXPECT_EQ(s != 0.0, std::abs(w) > std::sqrt(l));
        }
    }
}

TEST(FindLambda, FourElementExample) {
    const std::vector<float> w{1, -2, 3, -4};
    const auto sel = find_lambda(w, 0.25);
    EXPECT_EQ(sel.k, 1u);
    EXPECT_EQ(sel.lambda_prime, enumerate_lambda(w, 1));
    EXPECT_EQ(sel.lambda_prime, 9.0);
    const auto part = select_outliers(WeightTensor{"w", 1, 4, w}, QuantConfig{0.25, 4, 2, 2, 1.0});
    EXPECT_EQ(part.outlier_flags, (std::vector<std::uint8_t>{0, 0, 0, 1}));
}

TEST(FindLambda, MatchesEnumerationOnSmallInstances) {
    std::mt19937_64 rng(2);
    std::normal_distribution<float> nd;
    for (int iter = 0; iter < 300; ++iter) {
        std::vector<float> w(1 + rng() % 40);
        for (auto& v : w) v = nd(rng);
        const double alpha = std::uniform_real_distribution<double>(0, 0.5)(rng);
        const auto sel = find_lambda(w, alpha);
        EXPECT_EQ(sel.k, oracle_budget(w.size(), alpha));
        EXPECT_EQ(sel.lambda_prime, enumerate_lambda(w, sel.k));
    }
}

TEST(FindLambda, EdgeCases) {
    const std::vector<float> w{0.5f, -3.0f, 2.0f};
    const auto none = find_lambda(w, 0.0);
    EXPECT_EQ(none.k, 0u);
    EXPECT_EQ(none.lambda_prime, 9.0);
    const auto one = find_lambda(std::vector<float>{5.0f}, 0.5); // round(0.5) = 1 = n
    EXPECT_EQ(one.k, 1u);
    EXPECT_EQ(one.lambda_prime, 0.0);
    EXPECT_EQ(error_of([] { find_lambda(std::vector<float>{}, 0.1); }), ErrorCode::EmptyInput);
    EXPECT_EQ(error_of([&] { find_lambda(w, 0.6); }), ErrorCode::AlphaOutOfRange);
    EXPECT_EQ(error_of([&] { find_lambda(w, -0.1); }), ErrorCode::AlphaOutOfRange);
    EXPECT_EQ(error_of([] { find_lambda(std::vector<float>{1.0f, NAN}, 0.1); }), ErrorCode::NonFiniteInput);
}

TEST(FindLambda, BudgetRoundsHalfUp) {
    EXPECT_EQ(outlier_budget(10, 0.05), 1u);  // 0.5 -> 1
    EXPECT_EQ(outlier_budget(10, 0.04), 0u);
    EXPECT_EQ(outlier_budget(100, 0.08), 8u);
    EXPECT_EQ(outlier_budget(3, 0.5), 2u);    // 1.5 -> 2
}

TEST(SelectOutliers, TopKBySort) {
    std::mt19937_64 rng(3);
    const auto t = random_tensor(rng, 100, 100);
    const auto part = select_outliers(t, QuantConfig{0.08, 128, 4, 4, 1.0});
    EXPECT_EQ(part.outlier_count, 800u);
    EXPECT_EQ(part.outlier_flags, sort_oracle_flags(t.data, 800));
    // no ties in continuous data: the threshold predicate reproduces the set
    for (std::size_t i = 0; i < t.size(); ++i) {
        EXPECT_EQ(part.outlier_flags[i] != 0, std::abs(double(t.data[i])) > std::sqrt(part.lambda_prime));
        EXPECT_EQ(part.outlier_flags[i] != 0, soft_threshold(t.data[i], part.lambda_prime) != 0.0);
    }
}

TEST(SelectOutliers, TiesGoToLowerIndex) {
    const WeightTensor t{"c", 10, 10, std::vector<float>(100, 0.25f)};
    const auto part = select_outliers(t, QuantConfig{0.1, 16, 4, 4, 1.0});
    ASSERT_EQ(part.outlier_count, 10u);
    for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(part.outlier_flags[i], i < 10 ? 1 : 0);
    EXPECT_DOUBLE_EQ(part.lambda_prime, 0.0625);
}

TEST(SelectOutliers, MixedSignTies) {
    const WeightTensor t{"m", 1, 6, {-2, 1, 2, -1, 2, 0}};
    const auto part = select_outliers(t, QuantConfig{0.34, 2, 4, 4, 1.0}); // k = round(2.04) = 2
    EXPECT_EQ(part.outlier_flags, (std::vector<std::uint8_t>{1, 0, 1, 0, 0, 0}));
    EXPECT_EQ(part.lambda_prime, 4.0);
}

TEST(SelectOutliers, PlantedPositionsAreFound) {
    std::mt19937_64 rng(4);
    auto t = random_tensor(rng, 100, 100);
    std::vector<std::size_t> planted;
    while (planted.size() < 10) {
        const std::size_t p = rng() % t.size();
        if (std::find(planted.begin(), planted.end(), p) == planted.end()) planted.push_back(p);
    }
    for (std::size_t i = 0; i < planted.size(); ++i) t.data[planted[i]] = (i % 2 ? -1.0f : 1.0f) * 100.0f;
    const auto part = select_outliers(t, QuantConfig{0.001, 128, 4, 4, 1.0});
    ASSERT_EQ(part.outlier_count, 10u);
    for (auto p : planted) EXPECT_EQ(part.outlier_flags[p], 1);
}

TEST(SelectOutliers, AlphaZeroSelectsNothing) {
    std::mt19937_64 rng(5);
    const auto t = random_tensor(rng, 7, 13);
    const auto part = select_outliers(t, QuantConfig{});
    EXPECT_EQ(part.outlier_count, 0u);
    EXPECT_EQ(std::accumulate(part.outlier_flags.begin(), part.outlier_flags.end(), 0), 0);
    float m = 0;
    for (float v : t.data) m = std::max(m, std::abs(v));
    EXPECT_EQ(part.lambda_prime, double(m) * m);
}

TEST(SelectOutliers, SetsAreNestedAsAlphaGrows) {
    std::mt19937_64 rng(6);
    WeightTensor t = random_tensor(rng, 20, 50);
    for (std::size_t i = 0; i < t.size(); i += 3) t.data[i] = std::round(t.data[i] * 4) / 4; // induce ties
    std::vector<std::uint8_t> prev(t.size(), 0);
    double prev_lambda = INFINITY;
    for (double alpha : {0.0, 0.001, 0.01, 0.05, 0.1, 0.2, 0.35, 0.5}) {
        const auto part = select_outliers(t, QuantConfig{alpha, 64, 4, 4, 1.0});
        for (std::size_t i = 0; i < t.size(); ++i) EXPECT_LE(prev[i], part.outlier_flags[i]);
        EXPECT_LE(part.lambda_prime, prev_lambda);
        prev = part.outlier_flags;
        prev_lambda = part.lambda_prime;
    }
}

TEST(ClipRange, Examples) {
    const std::vector<float> v{0, 10};
    auto r = clip_range(v, 1.0);
    EXPECT_EQ(r.lo, 0.0);
    EXPECT_EQ(r.hi, 10.0);
    r = clip_range(v, 0.9);
    EXPECT_DOUBLE_EQ(r.lo, 0.5);
    EXPECT_DOUBLE_EQ(r.hi, 9.5);
    r = clip_range(std::vector<float>{3, 3, 3}, 0.5);
    EXPECT_EQ(r.lo, 3.0);
    EXPECT_EQ(r.hi, 3.0);
    const std::vector<float> odd{-1.7f, 0.3f, 2.9f};
    r = clip_range(odd, 1.0);
    EXPECT_EQ(r.lo, double(-1.7f));
    EXPECT_EQ(r.hi, double(2.9f));
    EXPECT_EQ(error_of([] { clip_range(std::vector<float>{}, 1.0); }), ErrorCode::EmptyInput);
    EXPECT_EQ(error_of([&] { clip_range(v, 0.0); }), ErrorCode::ClipOutOfRange);
}

TEST(MinmaxGroup, ExactLattice) {
    const auto g = minmax_quantize_group(std::vector<float>{0, 1, 2, 3}, 2, 1.0);
    EXPECT_EQ(g.codes, (std::vector<std::uint8_t>{0, 1, 2, 3}));
    EXPECT_EQ(g.scale.to_float(), 1.0f);
    EXPECT_EQ(g.zero.to_float(), 0.0f);
    EXPECT_EQ(dequantize_group(g.codes, g.scale, g.zero), (std::vector<float>{0, 1, 2, 3}));
}

TEST(MinmaxGroup, DegenerateRange) {
    for (int bits = 2; bits <= 8; ++bits) {
        const auto g = minmax_quantize_group(std::vector<float>{5, 5, 5}, bits, 1.0);
        EXPECT_EQ(g.codes, (std::vector<std::uint8_t>{0, 0, 0}));
        EXPECT_EQ(g.scale.bits, 0);
        EXPECT_EQ(g.zero.to_float(), 5.0f);
        EXPECT_EQ(dequantize_group(g.codes, g.scale, g.zero), (std::vector<float>{5, 5, 5}));
    }
    EXPECT_EQ(dequantize_group(std::vector<std::uint8_t>{0, 0}, Half{}, Half::from_double(5)),
              (std::vector<float>{5, 5}));
}

TEST(MinmaxGroup, Errors) {
    EXPECT_EQ(error_of([] { minmax_quantize_group(std::vector<float>{}, 4, 1.0); }), ErrorCode::EmptyInput);
    EXPECT_EQ(error_of([] { minmax_quantize_group(std::vector<float>{1}, 1, 1.0); }), ErrorCode::BitsOutOfRange);
    EXPECT_EQ(error_of([] { minmax_quantize_group(std::vector<float>{1}, 9, 1.0); }), ErrorCode::BitsOutOfRange);
    EXPECT_EQ(error_of([] { minmax_quantize_group(std::vector<float>{-1e5f, 1e5f}, 4, 1.0); }),
              ErrorCode::InvariantViolation);
}

TEST(MinmaxGroup, RoundTripWithinHalfStep) {
    std::mt19937_64 rng(8);
    for (int iter = 0; iter < 2000; ++iter) {
        const int bits = 2 + static_cast<int>(rng() % 7);
        const double sigma = std::ldexp(1.0, static_cast<int>(rng() % 12) - 8);
        const auto t = random_tensor(rng, 1, 1 + rng() % 256, sigma);
        const auto g = minmax_quantize_group(t.data, bits, 1.0);
        const auto back = dequantize_group(g.codes, g.scale, g.zero);
        const auto r = clip_range(t.data, 1.0);
        const double bound = error_bound(g.scale.to_float(), r.lo, r.hi, bits);
        for (std::size_t i = 0; i < back.size(); ++i) {
            ASSERT_LE(std::abs(double(t.data[i]) - back[i]), bound);
            ASSERT_LT(g.codes[i], 1 << bits);
        }
    }
}

TEST(MinmaxGroup, ClippingSaturatesCodes) {
    const std::vector<float> v{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    const auto g = minmax_quantize_group(v, 3, 0.5);
    // range [2.5, 7.5]: values outside land on the end codes
    EXPECT_EQ(g.codes.front(), 0);
    EXPECT_EQ(g.codes.back(), 7);
    EXPECT_EQ(g.zero.to_float(), 2.5f);
}

TEST(QuantizeTensor, WorkedExample) {
    const WeightTensor t{"x", 1, 4, {1, 2, 3, 100}};
    const QuantConfig c{0.25, 4, 2, 2, 1.0};
    const auto qt = quantize_tensor(t, c);
    ASSERT_EQ(qt.groups.size(), 1u);
    const auto& g = qt.groups[0];
    ASSERT_EQ(g.outliers.size(), 1u);
    EXPECT_EQ(g.outliers[0].index, 3);
    EXPECT_EQ(g.outliers[0].code, 0);
    EXPECT_EQ(g.params.scale_o.bits, 0);
    EXPECT_EQ(g.params.zero_o.to_float(), 100.0f);
    // non-outliers [1,2,3] over [1,3]: scale = half(2/3) = 0.66650390625
    EXPECT_EQ(g.params.scale_c.bits, 0x3955);
    EXPECT_EQ(g.params.zero_c.to_float(), 1.0f);
    EXPECT_EQ(g.codes, (std::vector<std::uint8_t>{0, 2, 3}));
    const auto back = dequantize_tensor(qt);
    EXPECT_EQ(back.data[0], 1.0f);
    EXPECT_FLOAT_EQ(back.data[1], 1.0f + 2 * 0.66650390625f);
    EXPECT_FLOAT_EQ(back.data[2], 1.0f + 3 * 0.66650390625f);
    EXPECT_EQ(back.data[3], 100.0f);
    const auto ref = reference_pipeline(t, c);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(float_bits(back.data[i]), float_bits(ref.recon[i]));
}

TEST(QuantizeTensor, MatchesReferencePipeline) {
    std::mt19937_64 rng(9);
    for (int iter = 0; iter < 200; ++iter) {
        const QuantConfig c{std::uniform_real_distribution<double>(0, 0.5)(rng), 1u << (1 + rng() % 8),
                            2 + static_cast<int>(rng() % 7), 2 + static_cast<int>(rng() % 7),
                            iter % 3 == 0 ? 1.0 : std::uniform_real_distribution<double>(0.8, 1.0)(rng)};
        const auto t = iter % 2 ? random_t_tensor(rng, 1 + rng() % 20, 1 + rng() % 300, 3.0)
                                : random_tensor(rng, 1 + rng() % 20, 1 + rng() % 300, 0.02);
        const auto back = dequantize_tensor(quantize_tensor(t, c));
        const auto ref = reference_pipeline(t, c);
        for (std::size_t i = 0; i < t.size(); ++i) {
            ASSERT_EQ(float_bits(back.data[i]), float_bits(ref.recon[i])) << "iter " << iter << " index " << i;
        }
    }
}

TEST(QuantizeTensor, AlphaZeroEqualsRtn) {
    std::mt19937_64 rng(10);
    const auto t = random_tensor(rng, 16, 200);
    const auto a = quantize_tensor(t, QuantConfig{0.0, 64, 3, 3, 1.0});
    const auto b = rtn_quantize(t, 64, 3);
    EXPECT_EQ(a, b);
    EXPECT_EQ(dequantize_tensor(a), dequantize_tensor(b));
}

TEST(QuantizeTensor, RtnExactOnLattice) {
    WeightTensor t{"l", 1, 16, std::vector<float>(16)};
    std::iota(t.data.begin(), t.data.end(), 0.0f);
    EXPECT_EQ(dequantize_tensor(rtn_quantize(t, 16, 4)), t);
}

TEST(QuantizeTensor, ConstantTensorIsExact) {
    const WeightTensor t{"k", 3, 10, std::vector<float>(30, -0.75f)};
    for (double alpha : {0.0, 0.1, 0.5}) {
        EXPECT_EQ(dequantize_tensor(quantize_tensor(t, QuantConfig{alpha, 4, 3, 5, 0.9})), t);
    }
}

TEST(QuantizeTensor, ShortFinalGroup) {
    std::mt19937_64 rng(11);
    const auto t = random_tensor(rng, 3, 37);
    const auto qt = quantize_tensor(t, QuantConfig{0.1, 16, 4, 4, 1.0});
    EXPECT_EQ(qt.groups_per_row(), 3u);
    EXPECT_EQ(qt.groups.size(), 9u);
    EXPECT_EQ(qt.groups[2].length(), 5u);
    EXPECT_EQ(qt.groups[3].length(), 16u);
    EXPECT_EQ(qt.outlier_count(), outlier_budget(t.size(), 0.1));
}

TEST(QuantizeTensor, OutlierSlotsMatchPartition) {
    std::mt19937_64 rng(12);
    const auto t = random_t_tensor(rng, 8, 300, 3.0);
    const QuantConfig c{0.07, 32, 3, 4, 0.95};
    const auto part = select_outliers(t, c);
    const auto qt = quantize_tensor(t, c);
    std::vector<std::uint8_t> stored(t.size(), 0);
    for (std::size_t gi = 0; gi < qt.groups.size(); ++gi) {
        const std::size_t base = (gi / qt.groups_per_row()) * t.cols + (gi % qt.groups_per_row()) * 32;
        for (const auto& e : qt.groups[gi].outliers) stored[base + e.index] = 1;
    }
    EXPECT_EQ(stored, part.outlier_flags);
    EXPECT_EQ(qt, quantize_with_partition(t, c, part));
}

TEST(QuantizeTensor, ShapeIsPreserved) {
    std::mt19937_64 rng(13);
    for (int i = 0; i < 30; ++i) {
        const auto t = random_tensor(rng, 1 + rng() % 9, 1 + rng() % 130);
        const auto back = dequantize_tensor(quantize_tensor(t, QuantConfig{0.05, 8, 4, 4, 1.0}));
        EXPECT_EQ(back.rows, t.rows);
        EXPECT_EQ(back.cols, t.cols);
        EXPECT_EQ(back.name, t.name);
        EXPECT_EQ(back.data.size(), t.data.size());
    }
}

TEST(QuantizeTensor, BeatsRtnOnGaussian) {
    double ours = 0, rtn = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(100 + seed);
        const auto t = random_tensor(rng, 256, 256);
        const double a = mse(t, dequantize_tensor(quantize_tensor(t, QuantConfig{0.05, 128, 4, 4, 1.0})));
        const double b = mse(t, dequantize_tensor(rtn_quantize(t, 128, 4)));
        EXPECT_LT(a, b) << "seed " << seed;
        ours += a;
        rtn += b;
    }
    EXPECT_LT(ours, rtn);
}

TEST(QuantizeTensor, Deterministic) {
    std::mt19937_64 rng(14);
    const auto t = random_t_tensor(rng, 64, 64, 3.0);
    const QuantConfig c{0.08, 128, 3, 4, 0.9};
    EXPECT_EQ(quantize_tensor(t, c), quantize_tensor(t, c));
}

TEST(QuantizeTensor, ConfigValidation) {
    const WeightTensor t{"x", 1, 4, {1, 2, 3, 4}};
    EXPECT_EQ(error_of([&] { quantize_tensor(t, QuantConfig{0.6, 4, 4, 4, 1.0}); }), ErrorCode::AlphaOutOfRange);
    EXPECT_EQ(error_of([&] { quantize_tensor(t, QuantConfig{0.1, 6, 4, 4, 1.0}); }), ErrorCode::GroupSizeInvalid);
    EXPECT_EQ(error_of([&] { quantize_tensor(t, QuantConfig{0.1, 2048, 4, 4, 1.0}); }), ErrorCode::GroupSizeInvalid);
    EXPECT_EQ(error_of([&] { quantize_tensor(t, QuantConfig{0.1, 4, 16, 4, 1.0}); }), ErrorCode::BitsOutOfRange);
    EXPECT_EQ(error_of([&] { quantize_tensor(t, QuantConfig{0.1, 4, 4, 1, 1.0}); }), ErrorCode::BitsOutOfRange);
    EXPECT_EQ(error_of([&] { quantize_tensor(t, QuantConfig{0.1, 4, 4, 4, 1.5}); }), ErrorCode::ClipOutOfRange);
    EXPECT_EQ(error_of([] { quantize_tensor(WeightTensor{"n", 1, 2, {1, NAN}}, QuantConfig{}); }),
              ErrorCode::NonFiniteInput);
}

TEST(DequantizeTensor, RejectsCorruptStructure) {
    std::mt19937_64 rng(15);
    const auto qt = quantize_tensor(random_tensor(rng, 2, 20), QuantConfig{0.1, 8, 4, 4, 1.0});
    auto bad = qt;
    bad.groups.pop_back();
    EXPECT_EQ(error_of([&] { dequantize_tensor(bad); }), ErrorCode::CorruptQuantizedTensor);
    bad = qt;
    bad.groups[0].codes.push_back(0);
    EXPECT_EQ(error_of([&] { dequantize_tensor(bad); }), ErrorCode::CorruptQuantizedTensor);
    bad = qt;
    bad.groups[0].codes[0] = 16;
    EXPECT_EQ(error_of([&] { dequantize_tensor(bad); }), ErrorCode::CorruptQuantizedTensor);
    bad = qt;
    for (auto& g : bad.groups) {
        if (g.outliers.empty()) {
            g.params.zero_o = Half::from_double(1.0);
            break;
        }
    }
    EXPECT_EQ(error_of([&] { dequantize_tensor(bad); }), ErrorCode::CorruptQuantizedTensor);
}
