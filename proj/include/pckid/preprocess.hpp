#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "pckid/errors.hpp"
#include "pckid/incomplete_matrix.hpp"

namespace pckid {

enum class ImputationStrategy { Zero, Mean, Median, MostFrequent };

inline const char* to_string(ImputationStrategy s) {
    switch (s) {
        case ImputationStrategy::Zero: return "zero";
        case ImputationStrategy::Mean: return "mean";
        case ImputationStrategy::Median: return "median";
        case ImputationStrategy::MostFrequent: return "most_frequent";
    }
    return "?";
}

namespace detail {

inline std::vector<double> observed_column(const IncompleteMatrix& data, Index j) {
    std::vector<double> vals;
    vals.reserve(static_cast<std::size_t>(data.rows()));
    for (Index i = 0; i < data.rows(); ++i) {
        if (data.mask(i, j)) vals.push_back(data.values(i, j));
    }
    return vals;
}

inline double column_statistic(const std::vector<double>& observed, ImputationStrategy strategy,
                               Index j) {
    if (strategy == ImputationStrategy::Zero) return 0.0;
    if (observed.empty()) {
        throw std::invalid_argument("impute: dimension " + std::to_string(j) +
                                    " has no observed values; the statistic is undefined");
    }
    switch (strategy) {
        case ImputationStrategy::Mean: {
            double sum = 0.0;
            for (double v : observed) sum += v;
            return sum / static_cast<double>(observed.size());
        }
        case ImputationStrategy::Median: {
            std::vector<double> sorted = observed;
            std::sort(sorted.begin(), sorted.end());
            const auto n = sorted.size();
            return n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
        }
        case ImputationStrategy::MostFrequent: {
            // ties broken toward the smallest value (map iterates ascending)
            std::map<double, std::size_t> counts;
            for (double v : observed) ++counts[v];
            double best = observed.front();
            std::size_t best_count = 0;
            for (const auto& [value, count] : counts) {
                if (count > best_count) {
                    best = value;
                    best_count = count;
                }
            }
            return best;
        }
        default: return 0.0;
    }
}

}  // namespace detail

struct StandardizeResult {
    IncompleteMatrix data;
    Eigen::VectorXd mean;  ///< per-dimension observed mean
    Eigen::VectorXd std;   ///< per-dimension observed population std; 0 marks an unscaled dimension
};

/// Centers and scales each dimension on its observed entries (population std).
/// Zero-variance dimensions are centered but left unscaled; a fully missing
/// dimension is an error because its statistics do not exist.
inline StandardizeResult standardize_observed(const IncompleteMatrix& data) {
    data.require_consistent();
    StandardizeResult out;
    out.data = data;
    out.mean.resize(data.cols());
    out.std.resize(data.cols());
    for (Index j = 0; j < data.cols(); ++j) {
        const auto observed = detail::observed_column(data, j);
        if (observed.empty()) {
            throw std::invalid_argument(
                "standardize_observed: dimension " + std::to_string(j) +
                " has no observed values; drop it first (see remove_zero_variance)");
        }
        double sum = 0.0;
        for (double v : observed) sum += v;
        const double mean = sum / static_cast<double>(observed.size());
        double ss = 0.0;
        for (double v : observed) ss += (v - mean) * (v - mean);
        const double std_dev = std::sqrt(ss / static_cast<double>(observed.size()));
        out.mean(j) = mean;
        out.std(j) = std_dev;
        for (Index i = 0; i < data.rows(); ++i) {
            if (!data.mask(i, j)) continue;
            const double centered = data.values(i, j) - mean;
            out.data.values(i, j) = std_dev > 0.0 ? centered / std_dev : centered;
        }
    }
    return out;
}

struct ZeroVarianceResult {
    IncompleteMatrix data;
    std::vector<Index> kept;  ///< original indices of the surviving dimensions
};

/// Drops dimensions whose observed values are constant or entirely missing.
inline ZeroVarianceResult remove_zero_variance(const IncompleteMatrix& data) {
    data.require_consistent();
    ZeroVarianceResult out;
    for (Index j = 0; j < data.cols(); ++j) {
        bool has_observed = false;
        bool varies = false;
        double first = 0.0;
        for (Index i = 0; i < data.rows(); ++i) {
            if (!data.mask(i, j)) continue;
            if (!has_observed) {
                has_observed = true;
                first = data.values(i, j);
            } else if (data.values(i, j) != first) {
                varies = true;
                break;
            }
        }
        if (has_observed && varies) out.kept.push_back(j);
    }
    if (out.kept.empty()) {
        throw std::invalid_argument("remove_zero_variance: every dimension is constant or missing");
    }
    out.data.values.resize(data.rows(), static_cast<Index>(out.kept.size()));
    out.data.mask.resize(data.rows(), static_cast<Index>(out.kept.size()));
    for (Index c = 0; c < static_cast<Index>(out.kept.size()); ++c) {
        out.data.values.col(c) = data.values.col(out.kept[static_cast<std::size_t>(c)]);
        out.data.mask.col(c) = data.mask.col(out.kept[static_cast<std::size_t>(c)]);
    }
    return out;
}

/// Fills missing cells with a per-dimension statistic of the observed entries.
/// Observed cells are copied verbatim.
inline Eigen::MatrixXd impute(const IncompleteMatrix& data, ImputationStrategy strategy) {
    data.require_consistent();
    Eigen::MatrixXd out = data.values;
    for (Index j = 0; j < data.cols(); ++j) {
        bool any_missing = false;
        for (Index i = 0; i < data.rows(); ++i) {
            if (!data.mask(i, j)) {
                any_missing = true;
                break;
            }
        }
        if (!any_missing) continue;
        const double fill = detail::column_statistic(detail::observed_column(data, j), strategy, j);
        for (Index i = 0; i < data.rows(); ++i) {
            if (!data.mask(i, j)) out(i, j) = fill;
        }
    }
    return out;
}

}  // namespace pckid
