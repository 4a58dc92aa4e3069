#pragma once

#include <Eigen/Dense>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pckid {

using Eigen::Index;
using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;
using BoolVector = Eigen::Array<bool, Eigen::Dynamic, 1>;

/// Placeholder stored in unobserved cells. Consumers read the mask, never this
/// value; a quiet NaN makes an accidental read loudly wrong.
inline double missing_placeholder() { return std::numeric_limits<double>::quiet_NaN(); }

/// N x d data matrix with a parallel observed-mask. Immutable by convention:
/// every operation in this library returns a new matrix.
struct IncompleteMatrix {
    Eigen::MatrixXd values;  ///< unobserved cells hold an arbitrary placeholder
    BoolMatrix mask;         ///< true = observed

    Index rows() const { return values.rows(); }
    Index cols() const { return values.cols(); }

    bool fully_observed() const { return mask.all(); }
    Index observed_count() const { return mask.count(); }

    void require_consistent() const {
        if (values.rows() != mask.rows() || values.cols() != mask.cols()) {
            throw std::invalid_argument("IncompleteMatrix: values and mask shapes differ");
        }
    }

    /// Wraps a complete matrix (mask all observed).
    static IncompleteMatrix complete(Eigen::MatrixXd v) {
        IncompleteMatrix m;
        m.mask = BoolMatrix::Constant(v.rows(), v.cols(), true);
        m.values = std::move(v);
        return m;
    }

    /// Pairs values with a mask and scrubs unobserved cells to the placeholder.
    static IncompleteMatrix with_mask(Eigen::MatrixXd v, BoolMatrix mask) {
        IncompleteMatrix m;
        m.values = std::move(v);
        m.mask = std::move(mask);
        m.require_consistent();
        m.values = m.mask.select(m.values.array(), missing_placeholder());
        return m;
    }
};

/// Row subset, preserving the order of `indices`.
inline IncompleteMatrix take_rows(const IncompleteMatrix& data, const std::vector<Index>& indices) {
    data.require_consistent();
    IncompleteMatrix out;
    out.values.resize(static_cast<Index>(indices.size()), data.cols());
    out.mask.resize(static_cast<Index>(indices.size()), data.cols());
    for (Index i = 0; i < static_cast<Index>(indices.size()); ++i) {
        const Index r = indices[static_cast<std::size_t>(i)];
        if (r < 0 || r >= data.rows()) throw std::invalid_argument("take_rows: index out of range");
        out.values.row(i) = data.values.row(r);
        out.mask.row(i) = data.mask.row(r);
    }
    return out;
}

/// Rows sharing one observed/missing signature.
struct PatternGroup {
    BoolVector pattern;              ///< d-length, true = observed
    std::vector<Index> row_indices;  ///< rows carrying this pattern
};

/// Exact partition of rows by identical mask rows. Group order is
/// lexicographic on the pattern (dimension 0 most significant, false < true).
inline std::vector<PatternGroup> group_by_pattern(const IncompleteMatrix& data) {
    data.require_consistent();
    std::map<std::string, std::vector<Index>> buckets;
    std::string key(static_cast<std::size_t>(data.cols()), '0');
    for (Index i = 0; i < data.rows(); ++i) {
        for (Index j = 0; j < data.cols(); ++j) {
            key[static_cast<std::size_t>(j)] = data.mask(i, j) ? '1' : '0';
        }
        buckets[key].push_back(i);
    }
    std::vector<PatternGroup> groups;
    groups.reserve(buckets.size());
    for (auto& [pattern_key, rows] : buckets) {
        PatternGroup g;
        g.pattern.resize(data.cols());
        for (Index j = 0; j < data.cols(); ++j) {
            g.pattern(j) = pattern_key[static_cast<std::size_t>(j)] == '1';
        }
        g.row_indices = std::move(rows);
        groups.push_back(std::move(g));
    }
    return groups;
}

}  // namespace pckid
