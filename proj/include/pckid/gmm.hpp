#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pckid/errors.hpp"
#include "pckid/incomplete_matrix.hpp"
#include "pckid/rng.hpp"

namespace pckid {

enum class CovarianceKind { Full, Diagonal };

inline const char* to_string(CovarianceKind k) {
    return k == CovarianceKind::Full ? "full" : "diagonal";
}

/// Mixture parameters. `covariances` is populated on the full path,
/// `variances` (one row of per-dimension variances per component) on the
/// diagonal path.
struct GmmParams {
    CovarianceKind kind = CovarianceKind::Full;
    Eigen::VectorXd weights;                   ///< K, nonnegative, sums to 1
    Eigen::MatrixXd means;                     ///< K x d
    std::vector<Eigen::MatrixXd> covariances;  ///< full path: K matrices, d x d
    Eigen::MatrixXd variances;                 ///< diagonal path: K x d

    Index component_count() const { return weights.size(); }
    Index dim() const { return means.cols(); }
};

/// Posterior component probabilities, one row per data point on the simplex.
struct Responsibilities {
    Eigen::MatrixXd gamma;  ///< N x K
};

struct EmConfig {
    int max_iterations = 10;
    double variance_floor = 1e-6;
    CovarianceKind covariance_kind = CovarianceKind::Full;
    /// Relative log-likelihood change that stops the loop early; 0 disables
    /// early stopping (the ensemble protocol runs a fixed iteration count).
    double convergence_tol = 0.0;
};

namespace detail {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kDegenerateResponsibility = 1e-8;

struct PatternWork {
    std::vector<Index> observed;
    std::vector<Index> missing;
    std::vector<Index> rows;
};

inline std::vector<PatternWork> make_pattern_work(const std::vector<PatternGroup>& groups) {
    std::vector<PatternWork> work;
    work.reserve(groups.size());
    for (const auto& g : groups) {
        PatternWork w;
        for (Index j = 0; j < g.pattern.size(); ++j) {
            (g.pattern(j) ? w.observed : w.missing).push_back(j);
        }
        w.rows = g.row_indices;
        work.push_back(std::move(w));
    }
    return work;
}

inline std::string pattern_string(const PatternWork& w, Index d) {
    std::string s(static_cast<std::size_t>(d), '0');
    for (Index j : w.observed) s[static_cast<std::size_t>(j)] = '1';
    return s;
}

inline Eigen::VectorXd gather_vector(const Eigen::VectorXd& v, const std::vector<Index>& idx) {
    Eigen::VectorXd out(static_cast<Index>(idx.size()));
    for (Index c = 0; c < out.size(); ++c) out(c) = v(idx[static_cast<std::size_t>(c)]);
    return out;
}

inline Eigen::MatrixXd gather_block(const Eigen::MatrixXd& m, const std::vector<Index>& rows,
                                    const std::vector<Index>& cols) {
    Eigen::MatrixXd out(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
    for (Index r = 0; r < out.rows(); ++r) {
        for (Index c = 0; c < out.cols(); ++c) {
            out(r, c) = m(rows[static_cast<std::size_t>(r)], cols[static_cast<std::size_t>(c)]);
        }
    }
    return out;
}

inline double log_weight(double w) {
    return w > 0.0 ? std::log(w) : -std::numeric_limits<double>::infinity();
}

/// Cholesky of an observed-marginal covariance; failure names the component
/// and pattern so ensemble callers can diagnose which model collapsed.
inline Eigen::LLT<Eigen::MatrixXd> observed_cholesky(const Eigen::MatrixXd& cov_obs, Index component,
                                                     const PatternWork& w, Index d) {
    Eigen::LLT<Eigen::MatrixXd> llt(cov_obs);
    if (llt.info() != Eigen::Success) {
        throw NumericError("observed covariance of component " + std::to_string(component) +
                           " is singular for pattern " + pattern_string(w, d));
    }
    return llt;
}

/// Diagonal-covariance densities for all rows and components at once. With
/// x0 = mask-zeroed values, the observed-marginal quadratic form expands to
///   sum_o (x - mu)^2 / s  =  x0^2 (1/s)  -  2 x0 (mu/s)  +  mask (mu^2/s),
/// so the whole E-step collapses into three N x d by d x K products.
/// Completions pick the data value where observed, the component mean where
/// missing.
inline void weighted_log_densities_diagonal(const IncompleteMatrix& data, const GmmParams& params,
                                            Eigen::MatrixXd& weighted_logdens,
                                            std::vector<Eigen::MatrixXd>* completions) {
    const Index N = data.rows();
    const Index d = data.cols();
    const Index K = params.component_count();
    if ((params.variances.array() <= 0.0).any()) {
        throw NumericError("diagonal parameters contain non-positive variances");
    }
    const Eigen::MatrixXd mask_d = data.mask.cast<double>();
    const Eigen::MatrixXd x_zeroed = data.mask.select(data.values, 0.0);
    const Eigen::VectorXd observed_per_row = mask_d.rowwise().sum();

    // d x K coefficient blocks, one column per component
    Eigen::MatrixXd inv_var(d, K), mean_inv_var(d, K), mask_coeff(d, K);
    Eigen::VectorXd log_w(K);
    for (Index k = 0; k < K; ++k) {
        const auto var = params.variances.row(k).transpose().array();
        const auto mean = params.means.row(k).transpose().array();
        inv_var.col(k) = var.inverse();
        mean_inv_var.col(k) = mean / var;
        // mu^2/s and log s share the mask product
        mask_coeff.col(k) = mean.square() / var + var.log();
        log_w(k) = log_weight(params.weights(k));
    }

    weighted_logdens.noalias() = x_zeroed.cwiseProduct(x_zeroed) * inv_var;
    weighted_logdens.noalias() -= 2.0 * (x_zeroed * mean_inv_var);
    weighted_logdens.noalias() += mask_d * mask_coeff;
    weighted_logdens = (-0.5 * (weighted_logdens.colwise() +
                                (observed_per_row * kLog2Pi))).rowwise() + log_w.transpose();

    if (completions) {
        for (Index k = 0; k < K; ++k) {
            (*completions)[static_cast<std::size_t>(k)] =
                data.mask.select(data.values, params.means.row(k).replicate(N, 1));
        }
    }
}

/// Fills `weighted_logdens(i, k) = log pi_k + log N(x_i^o | mu^o, Sigma^o)` and,
/// when `completions` is non-null, the conditional-mean completions of every
/// row under every component. A row with no observed coordinates contributes a
/// marginal density of 1 and completes to the component mean.
inline void weighted_log_densities(const IncompleteMatrix& data, const GmmParams& params,
                                   const std::vector<PatternWork>& work,
                                   Eigen::MatrixXd& weighted_logdens,
                                   std::vector<Eigen::MatrixXd>* completions) {
    const Index K = params.component_count();
    const Index d = data.cols();
    weighted_logdens.resize(data.rows(), K);
    if (completions) {
        completions->resize(static_cast<std::size_t>(K));
        for (auto& c : *completions) c.resize(data.rows(), d);
    }
    if (params.kind == CovarianceKind::Diagonal) {
        weighted_log_densities_diagonal(data, params, weighted_logdens, completions);
        return;
    }
    Eigen::VectorXd log_w(K);
    for (Index k = 0; k < K; ++k) log_w(k) = log_weight(params.weights(k));

    for (const auto& w : work) {
        const Index n_obs = static_cast<Index>(w.observed.size());
        const Index n_rows = static_cast<Index>(w.rows.size());
        Eigen::MatrixXd x_obs(n_rows, n_obs);
        for (Index r = 0; r < n_rows; ++r) {
            for (Index c = 0; c < n_obs; ++c) {
                x_obs(r, c) = data.values(w.rows[static_cast<std::size_t>(r)],
                                          w.observed[static_cast<std::size_t>(c)]);
            }
        }
        for (Index k = 0; k < K; ++k) {
            const Eigen::VectorXd mean_k = params.means.row(k);
            if (n_obs == 0) {
                for (Index r = 0; r < n_rows; ++r) {
                    weighted_logdens(w.rows[static_cast<std::size_t>(r)], k) = log_w(k);
                    if (completions) (*completions)[static_cast<std::size_t>(k)].row(
                        w.rows[static_cast<std::size_t>(r)]) = mean_k.transpose();
                }
                continue;
            }
            const Eigen::VectorXd mu_obs = gather_vector(mean_k, w.observed);
            Eigen::MatrixXd diff = x_obs;
            diff.rowwise() -= mu_obs.transpose();

            Eigen::VectorXd quad(n_rows);
            Eigen::MatrixXd cond;  // n_mis x n_rows conditional means of the missing block
            double log_det = 0.0;
            {
                const Eigen::MatrixXd cov_obs =
                    gather_block(params.covariances[static_cast<std::size_t>(k)], w.observed, w.observed);
                const auto llt = observed_cholesky(cov_obs, k, w, d);
                const Eigen::MatrixXd l = llt.matrixL();
                log_det = 2.0 * l.diagonal().array().log().sum();
                const Eigen::MatrixXd half = l.triangularView<Eigen::Lower>().solve(diff.transpose());
                quad = half.colwise().squaredNorm();
                if (completions && !w.missing.empty()) {
                    const Eigen::MatrixXd cross = gather_block(
                        params.covariances[static_cast<std::size_t>(k)], w.missing, w.observed);
                    cond = cross * llt.solve(diff.transpose());
                    cond.colwise() += gather_vector(mean_k, w.missing);
                }
            }
            for (Index r = 0; r < n_rows; ++r) {
                const Index i = w.rows[static_cast<std::size_t>(r)];
                weighted_logdens(i, k) =
                    log_w(k) - 0.5 * (quad(r) + log_det + static_cast<double>(n_obs) * kLog2Pi);
                if (completions) {
                    auto& comp = (*completions)[static_cast<std::size_t>(k)];
                    for (Index c = 0; c < n_obs; ++c) {
                        comp(i, w.observed[static_cast<std::size_t>(c)]) = x_obs(r, c);
                    }
                    for (Index c = 0; c < static_cast<Index>(w.missing.size()); ++c) {
                        comp(i, w.missing[static_cast<std::size_t>(c)]) = cond(c, r);
                    }
                }
            }
        }
    }
}

inline std::vector<PatternWork> make_pattern_work(const IncompleteMatrix& data) {
    return make_pattern_work(group_by_pattern(data));
}

/// Normalizes rows of weighted log-densities into responsibilities and returns
/// the observed-data log-likelihood. Max-subtraction keeps ~500-dim densities
/// out of the underflow range.
inline double normalize_responsibilities(const Eigen::MatrixXd& weighted_logdens,
                                         Eigen::MatrixXd& gamma) {
    gamma.resize(weighted_logdens.rows(), weighted_logdens.cols());
    double log_likelihood = 0.0;
    for (Index i = 0; i < weighted_logdens.rows(); ++i) {
        const double row_max = weighted_logdens.row(i).maxCoeff();
        const Eigen::ArrayXd shifted = (weighted_logdens.row(i).array() - row_max).exp();
        const double total = shifted.sum();
        gamma.row(i) = (shifted / total).matrix();
        log_likelihood += row_max + std::log(total);
    }
    return log_likelihood;
}

/// Shifts the diagonal so the smallest eigenvalue reaches `floor`. A no-op for
/// matrices already comfortably positive definite, which keeps the EM
/// likelihood ascent untouched whenever the floor is inactive.
inline void floor_full_covariance(Eigen::MatrixXd& cov, double floor) {
    cov = 0.5 * (cov + cov.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov, Eigen::EigenvaluesOnly);
    const double min_eig = es.eigenvalues().minCoeff();
    if (min_eig < floor) cov.diagonal().array() += floor - min_eig;
}

}  // namespace detail

/// Per-component moments of the marginal over a pattern's observed
/// coordinates: means restricted to the pattern and the matching principal
/// submatrix (full path) or variance sub-vector (diagonal path).
struct ObservedMoments {
    std::vector<Eigen::VectorXd> means;
    std::vector<Eigen::MatrixXd> covariances;  ///< full path
    std::vector<Eigen::VectorXd> variances;    ///< diagonal path
};

inline ObservedMoments observed_moments(const GmmParams& params, const BoolVector& pattern) {
    if (pattern.size() != params.dim()) {
        throw std::invalid_argument("observed_moments: pattern length does not match dimension");
    }
    std::vector<Index> observed;
    for (Index j = 0; j < pattern.size(); ++j) {
        if (pattern(j)) observed.push_back(j);
    }
    ObservedMoments out;
    for (Index k = 0; k < params.component_count(); ++k) {
        const Eigen::VectorXd mean_k = params.means.row(k);
        out.means.push_back(detail::gather_vector(mean_k, observed));
        if (params.kind == CovarianceKind::Full) {
            out.covariances.push_back(
                detail::gather_block(params.covariances[static_cast<std::size_t>(k)], observed, observed));
        } else {
            const Eigen::VectorXd var_k = params.variances.row(k);
            out.variances.push_back(detail::gather_vector(var_k, observed));
        }
    }
    return out;
}

struct EStepResult {
    Responsibilities resp;
    /// completions[k] is N x d: each row agrees with the data on observed
    /// coordinates and carries the conditional mean on missing ones.
    std::vector<Eigen::MatrixXd> completions;
    double log_likelihood = 0.0;
};

namespace detail {

inline EStepResult e_step_grouped(const IncompleteMatrix& data, const GmmParams& params,
                                  const std::vector<PatternWork>& work) {
    EStepResult out;
    Eigen::MatrixXd weighted_logdens;
    weighted_log_densities(data, params, work, weighted_logdens, &out.completions);
    out.log_likelihood = normalize_responsibilities(weighted_logdens, out.resp.gamma);
    return out;
}

inline Responsibilities posterior_grouped(const GmmParams& params, const IncompleteMatrix& data,
                                          const std::vector<PatternWork>& work) {
    Eigen::MatrixXd weighted_logdens;
    weighted_log_densities(data, params, work, weighted_logdens, nullptr);
    Responsibilities resp;
    normalize_responsibilities(weighted_logdens, resp.gamma);
    return resp;
}

}  // namespace detail

inline EStepResult e_step(const IncompleteMatrix& data, const GmmParams& params) {
    data.require_consistent();
    if (data.cols() != params.dim()) {
        throw std::invalid_argument("e_step: data dimension does not match parameters");
    }
    return detail::e_step_grouped(data, params, detail::make_pattern_work(data));
}

/// Posterior responsibilities only (no completions, no likelihood bookkeeping).
/// Rows with no observed coordinates receive the prior weights.
inline Responsibilities posterior(const GmmParams& params, const IncompleteMatrix& data) {
    data.require_consistent();
    if (data.cols() != params.dim()) {
        throw std::invalid_argument("posterior: data dimension does not match parameters");
    }
    return detail::posterior_grouped(params, data, detail::make_pattern_work(data));
}

namespace detail {

inline GmmParams m_step_grouped(const IncompleteMatrix& data, const Responsibilities& resp,
                                const std::vector<Eigen::MatrixXd>& completions,
                                const GmmParams& previous, double variance_floor,
                                const std::vector<PatternWork>& work) {
    const Index N = data.rows();
    const Index d = data.cols();
    const Index K = previous.component_count();
    if (resp.gamma.rows() != N || resp.gamma.cols() != K ||
        static_cast<Index>(completions.size()) != K) {
        throw std::invalid_argument("m_step: inputs do not match a preceding e_step");
    }

    GmmParams next;
    next.kind = previous.kind;
    next.weights.resize(K);
    next.means.resize(K, d);
    if (previous.kind == CovarianceKind::Full) {
        next.covariances.assign(static_cast<std::size_t>(K), Eigen::MatrixXd());
    } else {
        next.variances.resize(K, d);
    }

    for (Index k = 0; k < K; ++k) {
        const Eigen::VectorXd gamma_k = resp.gamma.col(k);
        const double mass = gamma_k.sum();
        if (mass < detail::kDegenerateResponsibility) {
            throw DegenerateComponentError("component " + std::to_string(k) +
                                           " has vanishing responsibility mass " +
                                           std::to_string(mass));
        }
        next.weights(k) = mass / static_cast<double>(N);
        const auto& comp = completions[static_cast<std::size_t>(k)];
        const Eigen::VectorXd mean_new = comp.transpose() * gamma_k / mass;
        next.means.row(k) = mean_new.transpose();

        Eigen::MatrixXd centered = comp;
        centered.rowwise() -= mean_new.transpose();

        if (previous.kind == CovarianceKind::Full) {
            Eigen::MatrixXd scatter =
                (centered.array().colwise() * gamma_k.array()).matrix().transpose() * centered;
            const auto& cov_prev = previous.covariances[static_cast<std::size_t>(k)];
            for (const auto& w : work) {
                if (w.missing.empty()) continue;
                double group_mass = 0.0;
                for (Index i : w.rows) group_mass += gamma_k(i);
                if (w.observed.empty()) {
                    scatter += group_mass * cov_prev;
                    continue;
                }
                const Eigen::MatrixXd cov_obs = detail::gather_block(cov_prev, w.observed, w.observed);
                const auto llt = detail::observed_cholesky(cov_obs, k, w, d);
                const Eigen::MatrixXd cross = detail::gather_block(cov_prev, w.missing, w.observed);
                const Eigen::MatrixXd schur =
                    detail::gather_block(cov_prev, w.missing, w.missing) -
                    cross * llt.solve(cross.transpose());
                for (Index r = 0; r < schur.rows(); ++r) {
                    for (Index c = 0; c < schur.cols(); ++c) {
                        scatter(w.missing[static_cast<std::size_t>(r)],
                                w.missing[static_cast<std::size_t>(c)]) += group_mass * schur(r, c);
                    }
                }
            }
            Eigen::MatrixXd cov_new = scatter / mass;
            detail::floor_full_covariance(cov_new, variance_floor);
            next.covariances[static_cast<std::size_t>(k)] = std::move(cov_new);
        } else {
            Eigen::VectorXd second_moment =
                (centered.array().square().colwise() * gamma_k.array()).colwise().sum();
            const Eigen::VectorXd var_prev = previous.variances.row(k);
            for (const auto& w : work) {
                if (w.missing.empty()) continue;
                double group_mass = 0.0;
                for (Index i : w.rows) group_mass += gamma_k(i);
                for (Index j : w.missing) second_moment(j) += group_mass * var_prev(j);
            }
            next.variances.row(k) =
                (second_moment / mass).cwiseMax(variance_floor).transpose();
        }
    }
    return next;
}

}  // namespace detail

/// One M-step. Weights come from responsibility mass, means from the
/// completion-weighted averages, covariances from the completed scatter plus
/// the conditional-covariance correction of the previous parameters.
inline GmmParams m_step(const IncompleteMatrix& data, const Responsibilities& resp,
                        const std::vector<Eigen::MatrixXd>& completions, const GmmParams& previous,
                        double variance_floor = 1e-6) {
    data.require_consistent();
    return detail::m_step_grouped(data, resp, completions, previous, variance_floor,
                                  detail::make_pattern_work(data));
}

/// Ensemble-style initialization: mean-impute a working copy, draw K distinct
/// rows as centers, run one k-means iteration (a single assignment pass
/// followed by a single centroid update), then take per-cluster empirical
/// moments and proportions. The imputed copy is discarded; training always
/// sees the incomplete data.
inline GmmParams init_params(const IncompleteMatrix& data, int component_count, std::uint64_t seed,
                             CovarianceKind kind = CovarianceKind::Full,
                             double variance_floor = 1e-6) {
    data.require_consistent();
    const Index N = data.rows();
    const Index d = data.cols();
    if (component_count < 1 || component_count > N) {
        throw std::invalid_argument("init_params: component count must lie in [1, N]");
    }
    if (!(variance_floor > 0.0)) {
        throw std::invalid_argument("init_params: variance floor must be positive");
    }
    const Index K = component_count;

    Eigen::MatrixXd work(N, d);
    for (Index j = 0; j < d; ++j) {
        double sum = 0.0;
        Index count = 0;
        for (Index i = 0; i < N; ++i) {
            if (data.mask(i, j)) {
                sum += data.values(i, j);
                ++count;
            }
        }
        const double fill = count > 0 ? sum / static_cast<double>(count) : 0.0;
        for (Index i = 0; i < N; ++i) {
            work(i, j) = data.mask(i, j) ? data.values(i, j) : fill;
        }
    }

    auto eng = rng::make_engine(seed);
    const auto center_rows =
        rng::sample_without_replacement(eng, static_cast<std::size_t>(N), static_cast<std::size_t>(K));
    Eigen::MatrixXd centers(K, d);
    for (Index k = 0; k < K; ++k) centers.row(k) = work.row(static_cast<Index>(center_rows[static_cast<std::size_t>(k)]));

    std::vector<Index> assignment(static_cast<std::size_t>(N));
    for (Index i = 0; i < N; ++i) {
        Index best = 0;
        double best_dist = (work.row(i) - centers.row(0)).squaredNorm();
        for (Index k = 1; k < K; ++k) {
            const double dist = (work.row(i) - centers.row(k)).squaredNorm();
            if (dist < best_dist) {
                best_dist = dist;
                best = k;
            }
        }
        assignment[static_cast<std::size_t>(i)] = best;
    }

    Eigen::VectorXd counts = Eigen::VectorXd::Zero(K);
    Eigen::MatrixXd means = Eigen::MatrixXd::Zero(K, d);
    for (Index i = 0; i < N; ++i) {
        counts(assignment[static_cast<std::size_t>(i)]) += 1.0;
        means.row(assignment[static_cast<std::size_t>(i)]) += work.row(i);
    }
    for (Index k = 0; k < K; ++k) {
        if (counts(k) > 0.0) {
            means.row(k) /= counts(k);
        } else {
            means.row(k) = centers.row(k);  // empty cluster keeps its drawn center
        }
    }

    GmmParams params;
    params.kind = kind;
    params.weights = counts / static_cast<double>(N);
    params.means = means;
    if (kind == CovarianceKind::Full) {
        params.covariances.assign(static_cast<std::size_t>(K), Eigen::MatrixXd());
    } else {
        params.variances.resize(K, d);
    }
    for (Index k = 0; k < K; ++k) {
        if (counts(k) <= 1.0) {
            if (kind == CovarianceKind::Full) {
                params.covariances[static_cast<std::size_t>(k)] =
                    variance_floor * Eigen::MatrixXd::Identity(d, d);
            } else {
                params.variances.row(k).setConstant(variance_floor);
            }
            continue;
        }
        Eigen::MatrixXd scatter = kind == CovarianceKind::Full ? Eigen::MatrixXd::Zero(d, d)
                                                               : Eigen::MatrixXd();
        Eigen::VectorXd diag_scatter = Eigen::VectorXd::Zero(d);
        for (Index i = 0; i < N; ++i) {
            if (assignment[static_cast<std::size_t>(i)] != k) continue;
            const Eigen::VectorXd diff = (work.row(i) - means.row(k)).transpose();
            if (kind == CovarianceKind::Full) {
                scatter.noalias() += diff * diff.transpose();
            } else {
                diag_scatter += diff.cwiseProduct(diff);
            }
        }
        if (kind == CovarianceKind::Full) {
            Eigen::MatrixXd cov = scatter / counts(k);
            detail::floor_full_covariance(cov, variance_floor);
            params.covariances[static_cast<std::size_t>(k)] = std::move(cov);
        } else {
            params.variances.row(k) =
                (diag_scatter / counts(k)).cwiseMax(variance_floor).transpose();
        }
    }
    return params;
}

struct FitResult {
    GmmParams params;
    Responsibilities resp;  ///< evaluated under the final parameters
    /// Observed-data log-likelihood per E-step, with a final entry under the
    /// returned parameters.
    std::vector<double> log_likelihood_trace;
};

inline FitResult fit(const IncompleteMatrix& data, int component_count, const EmConfig& config,
                     std::uint64_t seed) {
    if (config.max_iterations < 1) {
        throw std::invalid_argument("fit: max_iterations must be at least 1");
    }
    if (config.convergence_tol < 0.0) {
        throw std::invalid_argument("fit: convergence_tol must be nonnegative");
    }
    FitResult out;
    out.params = init_params(data, component_count, seed, config.covariance_kind,
                             config.variance_floor);
    const auto work = detail::make_pattern_work(data);  // patterns are fixed for the whole loop
    double previous_ll = 0.0;
    for (int iter = 0; iter < config.max_iterations; ++iter) {
        EStepResult es;
        try {
            es = detail::e_step_grouped(data, out.params, work);
        } catch (const NumericError& err) {
            throw NumericError("EM iteration " + std::to_string(iter) + ": " + err.what());
        }
        out.log_likelihood_trace.push_back(es.log_likelihood);
        if (iter > 0 && config.convergence_tol > 0.0) {
            const double change = std::abs(es.log_likelihood - previous_ll) /
                                  std::max(std::abs(previous_ll), 1e-300);
            if (change < config.convergence_tol) {
                out.resp = std::move(es.resp);  // current params produced these
                return out;
            }
        }
        previous_ll = es.log_likelihood;
        try {
            out.params = detail::m_step_grouped(data, es.resp, es.completions, out.params,
                                                config.variance_floor, work);
        } catch (const DegenerateComponentError& err) {
            throw DegenerateComponentError("EM iteration " + std::to_string(iter) + ": " + err.what());
        } catch (const NumericError& err) {
            throw NumericError("EM iteration " + std::to_string(iter) + ": " + err.what());
        }
    }
    // final responsibilities and likelihood under the returned parameters
    Eigen::MatrixXd weighted_logdens;
    detail::weighted_log_densities(data, out.params, work, weighted_logdens, nullptr);
    out.log_likelihood_trace.push_back(
        detail::normalize_responsibilities(weighted_logdens, out.resp.gamma));
    return out;
}

// -- serialization ------------------------------------------------------------

/// JSON schema: kind, weights, means, covariances (matrices on the full path,
/// variance rows on the diagonal path), plus reproducibility metadata.
inline nlohmann::json params_to_json(const GmmParams& params, std::uint64_t seed = 0,
                                     int iterations = 0) {
    nlohmann::json j;
    j["kind"] = to_string(params.kind);
    j["weights"] = std::vector<double>(params.weights.data(), params.weights.data() + params.weights.size());
    nlohmann::json means = nlohmann::json::array();
    for (Index k = 0; k < params.means.rows(); ++k) {
        means.push_back(std::vector<double>(params.means.row(k).begin(), params.means.row(k).end()));
    }
    j["means"] = std::move(means);
    nlohmann::json covs = nlohmann::json::array();
    if (params.kind == CovarianceKind::Full) {
        for (const auto& cov : params.covariances) {
            nlohmann::json rows = nlohmann::json::array();
            for (Index r = 0; r < cov.rows(); ++r) {
                rows.push_back(std::vector<double>(cov.row(r).begin(), cov.row(r).end()));
            }
            covs.push_back(std::move(rows));
        }
    } else {
        for (Index k = 0; k < params.variances.rows(); ++k) {
            covs.push_back(std::vector<double>(params.variances.row(k).begin(),
                                               params.variances.row(k).end()));
        }
    }
    j["covariances"] = std::move(covs);
    j["seed"] = seed;
    j["iterations"] = iterations;
    return j;
}

inline GmmParams params_from_json(const nlohmann::json& j) {
    GmmParams params;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "full") {
        params.kind = CovarianceKind::Full;
    } else if (kind == "diagonal") {
        params.kind = CovarianceKind::Diagonal;
    } else {
        throw ParseError("params_from_json: unknown covariance kind '" + kind + "'");
    }
    const auto weights = j.at("weights").get<std::vector<double>>();
    const auto means = j.at("means").get<std::vector<std::vector<double>>>();
    const Index K = static_cast<Index>(weights.size());
    if (K == 0 || means.size() != weights.size()) {
        throw ParseError("params_from_json: inconsistent weights/means");
    }
    const Index d = static_cast<Index>(means.front().size());
    params.weights = Eigen::Map<const Eigen::VectorXd>(weights.data(), K);
    params.means.resize(K, d);
    for (Index k = 0; k < K; ++k) {
        if (static_cast<Index>(means[static_cast<std::size_t>(k)].size()) != d) {
            throw ParseError("params_from_json: ragged means");
        }
        params.means.row(k) =
            Eigen::Map<const Eigen::VectorXd>(means[static_cast<std::size_t>(k)].data(), d).transpose();
    }
    if (params.kind == CovarianceKind::Full) {
        const auto covs = j.at("covariances").get<std::vector<std::vector<std::vector<double>>>>();
        if (static_cast<Index>(covs.size()) != K) throw ParseError("params_from_json: covariance count");
        for (const auto& rows : covs) {
            Eigen::MatrixXd cov(d, d);
            if (static_cast<Index>(rows.size()) != d) throw ParseError("params_from_json: covariance shape");
            for (Index r = 0; r < d; ++r) {
                if (static_cast<Index>(rows[static_cast<std::size_t>(r)].size()) != d) {
                    throw ParseError("params_from_json: covariance shape");
                }
                cov.row(r) = Eigen::Map<const Eigen::VectorXd>(
                    rows[static_cast<std::size_t>(r)].data(), d).transpose();
            }
            params.covariances.push_back(std::move(cov));
        }
    } else {
        const auto vars = j.at("covariances").get<std::vector<std::vector<double>>>();
        if (static_cast<Index>(vars.size()) != K) throw ParseError("params_from_json: variance count");
        params.variances.resize(K, d);
        for (Index k = 0; k < K; ++k) {
            if (static_cast<Index>(vars[static_cast<std::size_t>(k)].size()) != d) {
                throw ParseError("params_from_json: variance shape");
            }
            params.variances.row(k) = Eigen::Map<const Eigen::VectorXd>(
                vars[static_cast<std::size_t>(k)].data(), d).transpose();
        }
    }
    return params;
}

}  // namespace pckid
