#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "pckid/errors.hpp"
#include "pckid/kernel.hpp"
#include "pckid/rng.hpp"

namespace pckid {

/// Rule-of-thumb RBF width: 20% of the median pairwise Euclidean distance
/// (even count takes the mean of the middle two).
inline double median_heuristic_sigma(const Eigen::MatrixXd& points) {
    const Index n = points.rows();
    if (n < 2) throw std::invalid_argument("median_heuristic_sigma: need at least 2 points");
    std::vector<double> distances;
    distances.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(n - 1) / 2);
    for (Index i = 0; i < n; ++i) {
        for (Index j = i + 1; j < n; ++j) {
            distances.push_back((points.row(i) - points.row(j)).norm());
        }
    }
    std::sort(distances.begin(), distances.end());
    const auto m = distances.size();
    const double median =
        m % 2 == 1 ? distances[m / 2] : 0.5 * (distances[m / 2 - 1] + distances[m / 2]);
    const double sigma = 0.2 * median;
    if (!(sigma > 0.0)) {
        throw NumericError("median_heuristic_sigma: all points identical, kernel width is 0");
    }
    return sigma;
}

/// kappa(x, y) = exp(-|x - y|^2 / (2 sigma^2)).
inline KernelMatrix rbf_kernel(const Eigen::MatrixXd& points, double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("rbf_kernel: sigma must be positive");
    const Index n = points.rows();
    KernelMatrix out;
    out.values.resize(n, n);
    const double scale = -0.5 / (sigma * sigma);
    for (Index i = 0; i < n; ++i) {
        out.values(i, i) = 1.0;
        for (Index j = i + 1; j < n; ++j) {
            const double v = std::exp(scale * (points.row(i) - points.row(j)).squaredNorm());
            out.values(i, j) = v;
            out.values(j, i) = v;
        }
    }
    return out;
}

/// Kernel PCA coordinates: rows of E_k Lambda_k^(1/2).
struct Embedding {
    Eigen::MatrixXd coords;      ///< N x k
    Eigen::VectorXd eigenvalues; ///< the k retained eigenvalues, descending, clamped at 0
};

/// Top-k spectral coordinates of a symmetric kernel. Eigenvalues are taken in
/// descending order, negatives are clamped to 0 before the square root, and
/// each column's sign is fixed so its largest-magnitude entry is positive.
/// The kernel is used as-is; `center` applies the double-centering H K H first.
inline Embedding kernel_pca(const KernelMatrix& kernel, Index k, bool center = false) {
    const Index n = kernel.size();
    if (k < 1 || k > n) throw std::invalid_argument("kernel_pca: k must lie in [1, N]");
    if (kernel.values.cols() != n) throw std::invalid_argument("kernel_pca: kernel is not square");
    const double scale = std::max(1.0, kernel.values.cwiseAbs().maxCoeff());
    if ((kernel.values - kernel.values.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale) {
        throw std::invalid_argument("kernel_pca: kernel is not symmetric");
    }
    Eigen::MatrixXd sym = 0.5 * (kernel.values + kernel.values.transpose());
    if (center) {
        const Eigen::VectorXd row_mean = sym.rowwise().mean();
        const double total_mean = row_mean.mean();
        sym.colwise() -= row_mean;
        sym.rowwise() -= row_mean.transpose();
        sym.array() += total_mean;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
    if (solver.info() != Eigen::Success) {
        throw NumericError("kernel_pca: eigendecomposition failed");
    }
    Embedding out;
    out.coords.resize(n, k);
    out.eigenvalues.resize(k);
    for (Index c = 0; c < k; ++c) {
        const Index source = n - 1 - c;  // solver returns ascending order
        const double eigenvalue = std::max(solver.eigenvalues()(source), 0.0);
        Eigen::VectorXd column = solver.eigenvectors().col(source);
        Index peak = 0;
        column.cwiseAbs().maxCoeff(&peak);
        if (column(peak) < 0.0) column = -column;
        out.coords.col(c) = std::sqrt(eigenvalue) * column;
        out.eigenvalues(c) = eigenvalue;
    }
    return out;
}

struct KMeansResult {
    std::vector<int> labels;
    Eigen::MatrixXd centers;        ///< k x d
    double cost = 0.0;              ///< sum of squared distances to assigned centers
    std::vector<double> cost_trace; ///< per-iteration costs of the winning restart
};

namespace detail {

struct LloydOutcome {
    std::vector<int> labels;
    Eigen::MatrixXd centers;
    double cost = 0.0;
    std::vector<double> cost_trace;
};

inline LloydOutcome lloyd_once(const Eigen::MatrixXd& points, int k, rng::Engine& eng,
                               int max_iterations) {
    const Index n = points.rows();
    const auto initial =
        rng::sample_without_replacement(eng, static_cast<std::size_t>(n), static_cast<std::size_t>(k));
    Eigen::MatrixXd centers(k, points.cols());
    for (int c = 0; c < k; ++c) centers.row(c) = points.row(static_cast<Index>(initial[static_cast<std::size_t>(c)]));

    std::vector<int> labels(static_cast<std::size_t>(n), -1);
    LloydOutcome out;
    for (int iter = 0; iter < max_iterations; ++iter) {
        bool changed = false;
        double cost = 0.0;
        for (Index i = 0; i < n; ++i) {
            int best = 0;
            double best_dist = (points.row(i) - centers.row(0)).squaredNorm();
            for (int c = 1; c < k; ++c) {
                const double dist = (points.row(i) - centers.row(c)).squaredNorm();
                if (dist < best_dist) {
                    best_dist = dist;
                    best = c;
                }
            }
            cost += best_dist;
            if (labels[static_cast<std::size_t>(i)] != best) {
                labels[static_cast<std::size_t>(i)] = best;
                changed = true;
            }
        }
        out.cost_trace.push_back(cost);
        if (!changed) break;

        centers.setZero();
        Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
        for (Index i = 0; i < n; ++i) {
            centers.row(labels[static_cast<std::size_t>(i)]) += points.row(i);
            counts(labels[static_cast<std::size_t>(i)]) += 1.0;
        }
        std::vector<bool> reseeded(static_cast<std::size_t>(n), false);
        for (int c = 0; c < k; ++c) {
            if (counts(c) > 0.0) {
                centers.row(c) /= counts(c);
                continue;
            }
            // empty cluster: re-seed to the point farthest from its assigned
            // center (first such point on ties, skipping points already taken)
            Index farthest = -1;
            double farthest_dist = -1.0;
            for (Index i = 0; i < n; ++i) {
                if (reseeded[static_cast<std::size_t>(i)]) continue;
                const int a = labels[static_cast<std::size_t>(i)];
                const double dist = counts(a) > 0.0
                                        ? (points.row(i) - centers.row(a)).squaredNorm()
                                        : 0.0;
                if (dist > farthest_dist) {
                    farthest_dist = dist;
                    farthest = i;
                }
            }
            centers.row(c) = points.row(farthest);
            reseeded[static_cast<std::size_t>(farthest)] = true;
        }
    }

    // make labels, centers and cost mutually consistent
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
    Eigen::MatrixXd final_centers = Eigen::MatrixXd::Zero(k, points.cols());
    for (Index i = 0; i < n; ++i) {
        final_centers.row(labels[static_cast<std::size_t>(i)]) += points.row(i);
        counts(labels[static_cast<std::size_t>(i)]) += 1.0;
    }
    for (int c = 0; c < k; ++c) {
        if (counts(c) > 0.0) {
            final_centers.row(c) /= counts(c);
        } else {
            final_centers.row(c) = centers.row(c);
        }
    }
    double cost = 0.0;
    for (Index i = 0; i < n; ++i) {
        cost += (points.row(i) - final_centers.row(labels[static_cast<std::size_t>(i)])).squaredNorm();
    }
    out.labels = std::move(labels);
    out.centers = std::move(final_centers);
    out.cost = cost;
    return out;
}

}  // namespace detail

/// Lloyd's algorithm with uniform distinct-row initialization per restart.
/// Returns the lowest-cost restart; the lowest restart index wins exact ties.
inline KMeansResult kmeans(const Eigen::MatrixXd& points, int k, int restarts, std::uint64_t seed,
                           int max_iterations = 300) {
    const Index n = points.rows();
    if (k < 1 || k > n) throw std::invalid_argument("kmeans: k must lie in [1, N]");
    if (restarts < 1) throw std::invalid_argument("kmeans: restarts must be at least 1");
    KMeansResult best;
    best.cost = std::numeric_limits<double>::infinity();
    for (int r = 0; r < restarts; ++r) {
        auto eng = rng::make_engine(rng::derive_seed(seed, {static_cast<std::uint64_t>(r)}));
        auto outcome = detail::lloyd_once(points, k, eng, max_iterations);
        if (outcome.cost < best.cost) {
            best.labels = std::move(outcome.labels);
            best.centers = std::move(outcome.centers);
            best.cost = outcome.cost;
            best.cost_trace = std::move(outcome.cost_trace);
        }
    }
    return best;
}

/// Two-stage spectral clustering: kernel PCA to a k-dimensional empirical
/// kernel space, then k-means with restarts.
inline std::vector<int> spectral_cluster(const KernelMatrix& kernel, int k, int restarts,
                                         std::uint64_t seed) {
    const Embedding embedding = kernel_pca(kernel, k);
    return kmeans(embedding.coords, k, restarts, seed).labels;
}

}  // namespace pckid
