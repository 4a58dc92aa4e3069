#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "pckid/incomplete_matrix.hpp"

namespace pckid {

namespace detail {

/// O(n^3) Hungarian algorithm (potentials + augmenting paths) for square cost
/// matrices; returns row -> column and leaves tie-breaking to the caller.
inline std::vector<int> hungarian_any(const Eigen::MatrixXd& cost) {
    const int n = static_cast<int>(cost.rows());
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
    std::vector<double> v(static_cast<std::size_t>(n) + 1, 0.0);
    std::vector<int> match(static_cast<std::size_t>(n) + 1, 0);  // column -> row (1-based)
    std::vector<int> way(static_cast<std::size_t>(n) + 1, 0);
    for (int i = 1; i <= n; ++i) {
        match[0] = i;
        int j0 = 0;
        std::vector<double> min_v(static_cast<std::size_t>(n) + 1, inf);
        std::vector<bool> used(static_cast<std::size_t>(n) + 1, false);
        do {
            used[static_cast<std::size_t>(j0)] = true;
            const int i0 = match[static_cast<std::size_t>(j0)];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                                   v[static_cast<std::size_t>(j)];
                if (cur < min_v[static_cast<std::size_t>(j)]) {
                    min_v[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (min_v[static_cast<std::size_t>(j)] < delta) {
                    delta = min_v[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(match[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    min_v[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (match[static_cast<std::size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<std::size_t>(j0)];
            match[static_cast<std::size_t>(j0)] = match[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> assignment(static_cast<std::size_t>(n), -1);
    for (int j = 1; j <= n; ++j) {
        assignment[static_cast<std::size_t>(match[static_cast<std::size_t>(j)]) - 1] = j - 1;
    }
    return assignment;
}

inline double assignment_cost(const Eigen::MatrixXd& cost, const std::vector<int>& assignment) {
    double total = 0.0;
    for (std::size_t i = 0; i < assignment.size(); ++i) {
        total += cost(static_cast<Index>(i), assignment[i]);
    }
    return total;
}

}  // namespace detail

/// Minimum-cost perfect matching of a square matrix, returned as (row, column)
/// pairs ordered by row. Among all optimal matchings, the lexicographically
/// smallest column sequence is returned: the earliest row takes the smallest
/// column that still allows an optimal completion.
inline std::vector<std::pair<int, int>> hungarian(const Eigen::MatrixXd& cost) {
    if (cost.rows() != cost.cols()) throw std::invalid_argument("hungarian: cost matrix must be square");
    if (cost.size() == 0) throw std::invalid_argument("hungarian: cost matrix is empty");
    if (!cost.allFinite()) throw std::invalid_argument("hungarian: cost entries must be finite");
    const int n = static_cast<int>(cost.rows());
    const double optimum = detail::assignment_cost(cost, detail::hungarian_any(cost));
    const double tol = 1e-9 * std::max(1.0, cost.cwiseAbs().maxCoeff() * n);

    std::vector<int> chosen(static_cast<std::size_t>(n), -1);
    std::vector<bool> column_used(static_cast<std::size_t>(n), false);
    double fixed_cost = 0.0;
    for (int i = 0; i < n; ++i) {
        const int remaining = n - i - 1;
        int fallback = -1;
        double fallback_total = std::numeric_limits<double>::infinity();
        for (int j = 0; j < n; ++j) {
            if (column_used[static_cast<std::size_t>(j)]) continue;
            double completion = 0.0;
            if (remaining > 0) {
                Eigen::MatrixXd sub(remaining, remaining);
                int rr = 0;
                for (int r = i + 1; r < n; ++r, ++rr) {
                    int cc = 0;
                    for (int c = 0; c < n; ++c) {
                        if (column_used[static_cast<std::size_t>(c)] || c == j) continue;
                        sub(rr, cc++) = cost(r, c);
                    }
                }
                completion = detail::assignment_cost(sub, detail::hungarian_any(sub));
            }
            const double total = fixed_cost + cost(i, j) + completion;
            if (total <= optimum + tol) {
                chosen[static_cast<std::size_t>(i)] = j;
                break;
            }
            if (total < fallback_total) {
                fallback_total = total;
                fallback = j;
            }
        }
        if (chosen[static_cast<std::size_t>(i)] < 0) chosen[static_cast<std::size_t>(i)] = fallback;
        column_used[static_cast<std::size_t>(chosen[static_cast<std::size_t>(i)])] = true;
        fixed_cost += cost(i, chosen[static_cast<std::size_t>(i)]);
    }
    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) pairs.emplace_back(i, chosen[static_cast<std::size_t>(i)]);
    return pairs;
}

/// Supervised clustering accuracy: fraction of points matched under the best
/// one-to-one mapping between predicted cluster ids and true class ids. The
/// contingency matrix is padded with zero rows/columns when the two label
/// alphabets have different sizes.
inline double clustering_accuracy(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
    if (y_true.size() != y_pred.size()) {
        throw std::invalid_argument("clustering_accuracy: label vectors differ in length");
    }
    if (y_true.empty()) throw std::invalid_argument("clustering_accuracy: empty label vectors");
    int max_label = 0;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        if (y_true[i] < 0 || y_pred[i] < 0) {
            throw std::invalid_argument("clustering_accuracy: labels must be nonnegative");
        }
        max_label = std::max({max_label, y_true[i], y_pred[i]});
    }
    const int k = max_label + 1;
    Eigen::MatrixXd contingency = Eigen::MatrixXd::Zero(k, k);
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        contingency(y_true[i], y_pred[i]) += 1.0;
    }
    const auto matching = hungarian(-contingency);
    double matched = 0.0;
    for (const auto& [row, col] : matching) matched += contingency(row, col);
    return matched / static_cast<double>(y_true.size());
}

}  // namespace pckid
