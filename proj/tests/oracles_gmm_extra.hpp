#pragma once

// Mixture sampling helpers for recovery tests.

#include <Eigen/Dense>
#include <vector>

#include <pckid/rng.hpp>

#include "oracles.hpp"

namespace oracles {

/// Draws N points from a full-covariance Gaussian mixture.
inline MatrixXd sample_gmm(const RefGmm& truth, Index n, std::uint64_t seed,
                           std::vector<int>* component = nullptr) {
    const Index d = truth.means.cols();
    auto eng = pckid::rng::make_engine(seed);
    std::vector<Eigen::LLT<MatrixXd>> chol;
    for (const auto& cov : truth.covariances) chol.emplace_back(cov);
    MatrixXd x(n, d);
    for (Index i = 0; i < n; ++i) {
        const double u = pckid::rng::uniform01(eng);
        Index k = 0;
        double acc = 0.0;
        for (Index c = 0; c < truth.weights.size(); ++c) {
            acc += truth.weights(c);
            if (u < acc) {
                k = c;
                break;
            }
            k = c;
        }
        VectorXd z(d);
        for (Index j = 0; j < d; ++j) z(j) = pckid::rng::normal(eng);
        x.row(i) = (truth.means.row(k).transpose() +
                    MatrixXd(chol[static_cast<std::size_t>(k)].matrixL()) * z)
                       .transpose();
        if (component) component->push_back(static_cast<int>(k));
    }
    return x;
}

}  // namespace oracles
