#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace adpq {

/// One layer's weight matrix: rows x cols binary32 values, row-major.
struct WeightTensor {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;

    std::size_t size() const noexcept { return data.size(); }
    std::span<const float> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    friend bool operator==(const WeightTensor&, const WeightTensor&) = default;
};

/// Throws InvariantViolation (or NonFiniteValue) unless the tensor is a
/// non-empty, correctly sized matrix of finite values.
inline void validate(const WeightTensor& t, ErrorCode non_finite = ErrorCode::NonFiniteValue) {
    if (t.rows == 0 || t.cols == 0) {
        fail(ErrorCode::InvariantViolation, "tensor '" + t.name + "' has an empty dimension");
    }
    if (t.data.size() != t.rows * t.cols) {
        fail(ErrorCode::InvariantViolation, "tensor '" + t.name + "' holds " + std::to_string(t.data.size()) +
                                                " values, shape needs " + std::to_string(t.rows * t.cols));
    }
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        if (!std::isfinite(t.data[i])) {
            fail(non_finite, "tensor '" + t.name + "' element " + std::to_string(i) + " is not finite");
        }
    }
}

inline void require_same_shape(const WeightTensor& a, const WeightTensor& b) {
    if (a.rows != b.rows || a.cols != b.cols || a.data.size() != b.data.size()) {
        fail(ErrorCode::ShapeMismatch, "'" + a.name + "' is " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                                           ", '" + b.name + "' is " + std::to_string(b.rows) + "x" +
                                           std::to_string(b.cols));
    }
}

} // namespace adpq
