#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "pckid/incomplete_matrix.hpp"
#include "pckid/rng.hpp"

namespace pckid {

namespace detail {
inline void require_fully_observed(const IncompleteMatrix& data, const char* op) {
    data.require_consistent();
    if (!data.fully_observed()) {
        throw std::invalid_argument(std::string(op) + ": input must be fully observed");
    }
}
}  // namespace detail

/// Each cell goes missing independently with probability `rate`. Cells are
/// visited in row-major order, so the result is a pure function of the seed.
inline IncompleteMatrix apply_mcar(const IncompleteMatrix& data, double rate, std::uint64_t seed) {
    detail::require_fully_observed(data, "apply_mcar");
    if (!(rate >= 0.0 && rate <= 1.0)) {
        throw std::invalid_argument("apply_mcar: rate must lie in [0, 1]");
    }
    IncompleteMatrix out = data;
    auto eng = rng::make_engine(seed);
    for (Index i = 0; i < out.rows(); ++i) {
        for (Index j = 0; j < out.cols(); ++j) {
            if (rng::uniform01(eng) < rate) {
                out.mask(i, j) = false;
                out.values(i, j) = missing_placeholder();
            }
        }
    }
    return out;
}

/// Removes one quadrant (side/2 x side/2 block) from a fraction p_m of the
/// images, rounded to the nearest row count. Rows are unraveled side x side
/// images, row-major. The quadrant is drawn uniformly per selected image, so
/// five patterns occur: four quadrants plus fully observed.
inline IncompleteMatrix apply_mar_quadrant(const IncompleteMatrix& images, double p_m, Index side,
                                           std::uint64_t seed) {
    detail::require_fully_observed(images, "apply_mar_quadrant");
    if (!(p_m >= 0.0 && p_m <= 1.0)) {
        throw std::invalid_argument("apply_mar_quadrant: p_m must lie in [0, 1]");
    }
    if (side < 2 || side % 2 != 0) {
        throw std::invalid_argument("apply_mar_quadrant: side must be even and at least 2");
    }
    if (images.cols() != side * side) {
        throw std::invalid_argument("apply_mar_quadrant: column count is not side*side");
    }
    IncompleteMatrix out = images;
    auto eng = rng::make_engine(seed);
    const auto n_rows = static_cast<std::size_t>(out.rows());
    const auto n_selected = static_cast<std::size_t>(std::llround(p_m * static_cast<double>(n_rows)));
    const auto selected = rng::sample_without_replacement(eng, n_rows, n_selected);
    const Index half = side / 2;
    for (const std::size_t row : selected) {
        const auto quadrant = rng::uniform_index(eng, 4);
        const Index r0 = static_cast<Index>(quadrant / 2) * half;
        const Index c0 = static_cast<Index>(quadrant % 2) * half;
        for (Index r = r0; r < r0 + half; ++r) {
            for (Index c = c0; c < c0 + half; ++c) {
                const Index flat = r * side + c;
                out.mask(static_cast<Index>(row), flat) = false;
                out.values(static_cast<Index>(row), flat) = missing_placeholder();
            }
        }
    }
    return out;
}

namespace detail {
/// Linear-interpolation empirical quantile of a sorted sample.
inline double interpolated_quantile(const std::vector<double>& sorted, double q) {
    const auto n = sorted.size();
    if (n == 1) return sorted[0];
    const double pos = q * static_cast<double>(n - 1);
    const auto lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= n) return sorted[n - 1];
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}
}  // namespace detail

/// Censors values strictly above each dimension's empirical quantile, the way
/// a saturating sensor drops readings past its range. Missingness depends on
/// the removed values themselves (NMAR).
inline IncompleteMatrix apply_nmar_censor(const IncompleteMatrix& data, double quantile) {
    detail::require_fully_observed(data, "apply_nmar_censor");
    if (!(quantile > 0.0 && quantile < 1.0)) {
        throw std::invalid_argument("apply_nmar_censor: quantile must lie in (0, 1)");
    }
    IncompleteMatrix out = data;
    std::vector<double> column(static_cast<std::size_t>(data.rows()));
    for (Index j = 0; j < data.cols(); ++j) {
        for (Index i = 0; i < data.rows(); ++i) column[static_cast<std::size_t>(i)] = data.values(i, j);
        std::sort(column.begin(), column.end());
        const double threshold = detail::interpolated_quantile(column, quantile);
        for (Index i = 0; i < data.rows(); ++i) {
            if (data.values(i, j) > threshold) {
                out.mask(i, j) = false;
                out.values(i, j) = missing_placeholder();
            }
        }
    }
    return out;
}

}  // namespace pckid
