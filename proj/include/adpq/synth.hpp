#pragma once

// Deterministic synthetic weight generators.
//
// Random stream: xoshiro256** (Blackman & Vigna) seeded by expanding the
// 64-bit seed through splitmix64. Derived variates:
//   uniform    (x >> 11) * 2^-53, in [0, 1)
//   normal     Box-Muller, cosine branch only: sqrt(-2 ln(1 - u1)) cos(2 pi u2)
//   gamma(a)   Marsaglia-Tsang squeeze for a >= 1
//   t(df)      z / sqrt(2 gamma(df/2) / df)
//   bounded    rejection on the top of the 64-bit range
// Sequence for a tensor: one base variate per element in row-major order,
// then for "planted" a partial Fisher-Yates draw of positions, each
// followed by one sign bit (top bit of the next output).

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "tensor.hpp"

namespace adpq {

class Xoshiro256 {
public:
    explicit Xoshiro256(std::uint64_t seed) noexcept {
        for (auto& s : state_) s = splitmix64(seed);
    }

    std::uint64_t next() noexcept {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1p-53; }

    /// Uniform integer in [0, bound).
    std::uint64_t below(std::uint64_t bound) noexcept {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x;
        do {
            x = next();
        } while (x >= limit);
        return x % bound;
    }

    double normal() noexcept {
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double gamma(double shape) noexcept {
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            const double x = normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            const double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    double student_t(double df) noexcept {
        const double z = normal();
        const double chi2 = 2.0 * gamma(df / 2.0);
        return z / std::sqrt(chi2 / df);
    }

private:
    static std::uint64_t splitmix64(std::uint64_t& x) noexcept {
        std::uint64_t z = (x += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    static std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

    std::array<std::uint64_t, 4> state_{};
};

enum class SynthKind { gaussian, student_t, planted };

NLOHMANN_JSON_SERIALIZE_ENUM(SynthKind, {{SynthKind::gaussian, "gaussian"},
                                         {SynthKind::student_t, "student_t"},
                                         {SynthKind::planted, "planted"}})

struct SynthSpec {
    SynthKind kind = SynthKind::gaussian;
    std::size_t rows = 1;
    std::size_t cols = 1;
    double sigma = 1.0;
    double df = 3.0;
    double planted_fraction = 0.001;
    double planted_magnitude = 50.0;
    std::uint64_t seed = 0;
    std::string name = "weight";
};

inline void validate(const SynthSpec& s) {
    if (s.rows == 0 || s.cols == 0) fail(ErrorCode::BadSpec, "rows and cols must be >= 1");
    if (s.rows * s.cols > (std::size_t{1} << 32) - 1) fail(ErrorCode::BadSpec, "tensor too large");
    if (!(s.sigma > 0.0) || !std::isfinite(s.sigma)) fail(ErrorCode::BadSpec, "sigma must be a positive finite real");
    if (!(s.df > 2.0) || !std::isfinite(s.df)) fail(ErrorCode::BadSpec, "df must be a finite real > 2");
    if (!(s.planted_fraction >= 0.0 && s.planted_fraction <= 1.0)) {
        fail(ErrorCode::BadSpec, "planted_fraction must be in [0, 1]");
    }
    if (!(s.planted_magnitude > 0.0) || !std::isfinite(s.planted_magnitude)) {
        fail(ErrorCode::BadSpec, "planted_magnitude must be a positive finite real");
    }
}

/// Number of planted positions: round(fraction * n), ties up.
inline std::size_t planted_count(const SynthSpec& s) {
    return static_cast<std::size_t>(std::floor(s.planted_fraction * static_cast<double>(s.rows * s.cols) + 0.5));
}

namespace detail {

struct Generated {
    WeightTensor tensor;
    std::vector<std::size_t> planted;
};

inline Generated generate_with_positions(const SynthSpec& spec) {
    validate(spec);
    Generated out;
    auto& t = out.tensor;
    t.name = spec.name;
    t.rows = spec.rows;
    t.cols = spec.cols;
    const std::size_t n = spec.rows * spec.cols;
    t.data.resize(n);
    Xoshiro256 rng(spec.seed);
    for (auto& v : t.data) {
        const double x = spec.kind == SynthKind::student_t ? rng.student_t(spec.df) : rng.normal();
        v = static_cast<float>(spec.sigma * x);
    }
    if (spec.kind == SynthKind::planted) {
        const std::size_t count = planted_count(spec);
        std::vector<std::size_t> perm(n);
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        const float mag = static_cast<float>(spec.planted_magnitude);
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
            std::swap(perm[i], perm[j]);
            const bool negative = (rng.next() >> 63) != 0;
            t.data[perm[i]] = negative ? -mag : mag;
            out.planted.push_back(perm[i]);
        }
    }
    for (float v : t.data) {
        if (!std::isfinite(v)) fail(ErrorCode::BadSpec, "spec produces non-finite weights");
    }
    return out;
}

} // namespace detail

inline WeightTensor generate(const SynthSpec& spec) { return detail::generate_with_positions(spec).tensor; }

/// Flat indices overwritten by the planted generator, in draw order.
inline std::vector<std::size_t> planted_positions(const SynthSpec& s) {
    if (s.kind != SynthKind::planted) return {};
    return detail::generate_with_positions(s).planted;
}

inline nlohmann::json to_json(const SynthSpec& s) {
    return {{"kind", s.kind},
            {"rows", s.rows},
            {"cols", s.cols},
            {"sigma", s.sigma},
            {"df", s.df},
            {"planted_fraction", s.planted_fraction},
            {"planted_magnitude", s.planted_magnitude},
            {"seed", s.seed},
            {"name", s.name}};
}

/// Reads a spec object. "kind", "rows", "cols" are required; the rest
/// default to the SynthSpec member initializers.
inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
    if (!j.is_object()) fail(ErrorCode::BadSpec, "spec must be a JSON object");
    SynthSpec s;
    try {
        for (const char* key : {"kind", "rows", "cols"}) {
            if (!j.contains(key)) fail(ErrorCode::BadSpec, std::string("missing field '") + key + "'");
        }
        if (!j["kind"].is_string()) fail(ErrorCode::BadSpec, "'kind' must be a string");
        const auto kind = j["kind"].get<std::string>();
        if (kind != "gaussian" && kind != "student_t" && kind != "planted") {
            fail(ErrorCode::BadSpec, "unknown kind '" + kind + "'");
        }
        s.kind = j["kind"].get<SynthKind>();
        for (const char* key : {"rows", "cols", "seed"}) {
            if (j.contains(key) && !j[key].is_number_unsigned()) {
                fail(ErrorCode::BadSpec, std::string("'") + key + "' must be a nonnegative integer");
            }
        }
        s.rows = j["rows"].get<std::size_t>();
        s.cols = j["cols"].get<std::size_t>();
        if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
        for (auto [key, dst] : {std::pair{"sigma", &s.sigma}, std::pair{"df", &s.df},
                                std::pair{"planted_fraction", &s.planted_fraction},
                                std::pair{"planted_magnitude", &s.planted_magnitude}}) {
            if (!j.contains(key)) continue;
            if (!j[key].is_number()) fail(ErrorCode::BadSpec, std::string("'") + key + "' must be a number");
            *dst = j[key].get<double>();
        }
        if (j.contains("name")) {
            if (!j["name"].is_string()) fail(ErrorCode::BadSpec, "'name' must be a string");
            s.name = j["name"].get<std::string>();
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::BadSpec, e.what());
    }
    validate(s);
    return s;
}

} // namespace adpq
