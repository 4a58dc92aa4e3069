#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "pckid/errors.hpp"
#include "pckid/gmm.hpp"
#include "pckid/incomplete_matrix.hpp"
#include "pckid/rng.hpp"

namespace pckid {

/// Ensemble layout: models are fitted for every initialization q in [1, Q] and
/// every mixture order g in [2, G], each on a fresh subsample, and evaluated on
/// the full dataset.
struct EnsembleConfig {
    int initializations = 30;  ///< Q
    int max_order = 30;        ///< G; orders run 2..G
    double subsample_fraction = 0.5;
    int em_iterations = 10;
    CovarianceKind covariance_kind = CovarianceKind::Diagonal;
    double variance_floor = 1e-6;
    std::uint64_t base_seed = 0;
    int threads = 1;  ///< <=0 selects hardware concurrency

    void require_valid() const {
        if (initializations < 1) throw std::invalid_argument("EnsembleConfig: Q must be at least 1");
        if (max_order < 2) throw std::invalid_argument("EnsembleConfig: G must be at least 2");
        if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0)) {
            throw std::invalid_argument("EnsembleConfig: subsample fraction must lie in (0, 1]");
        }
        if (em_iterations < 1) throw std::invalid_argument("EnsembleConfig: em_iterations must be at least 1");
    }
};

/// N x N symmetric positive semidefinite similarity matrix.
struct KernelMatrix {
    Eigen::MatrixXd values;
    Index size() const { return values.rows(); }
};

struct EnsembleStats {
    int members_total = 0;
    int members_skipped = 0;
};

/// Average of posterior Gram matrices: (1/M) sum_m Gamma_m Gamma_m^T. Each
/// Gamma_m must have N rows; column counts (model orders) may differ.
inline KernelMatrix combine_posteriors(const std::vector<Eigen::MatrixXd>& posteriors) {
    if (posteriors.empty()) {
        throw std::invalid_argument("combine_posteriors: empty posterior list");
    }
    const Index n = posteriors.front().rows();
    KernelMatrix out;
    out.values = Eigen::MatrixXd::Zero(n, n);
    for (const auto& gamma : posteriors) {
        if (gamma.rows() != n) {
            throw std::invalid_argument("combine_posteriors: posterior row counts differ");
        }
        out.values.selfadjointView<Eigen::Lower>().rankUpdate(gamma);
    }
    out.values /= static_cast<double>(posteriors.size());
    out.values.triangularView<Eigen::StrictlyUpper>() =
        out.values.triangularView<Eigen::StrictlyLower>().transpose();
    return out;
}

namespace detail {

/// Fits one ensemble member on its subsample and evaluates the posterior on
/// the full data. Degenerate fits are re-initialized with perturbed seeds up
/// to 3 times; nullopt means the member is skipped.
inline std::optional<Eigen::MatrixXd> ensemble_member(const IncompleteMatrix& data,
                                                      const std::vector<PatternWork>& data_work,
                                                      const EnsembleConfig& cfg, int q, int g) {
    const Index n = data.rows();
    auto sub_eng = rng::make_engine(rng::derive_seed(
        cfg.base_seed, {static_cast<std::uint64_t>(q), static_cast<std::uint64_t>(g), 0}));
    auto n_sub = static_cast<std::size_t>(
        std::llround(cfg.subsample_fraction * static_cast<double>(n)));
    n_sub = std::min<std::size_t>(std::max<std::size_t>(n_sub, 1), static_cast<std::size_t>(n));
    const auto picks = rng::sample_without_replacement(sub_eng, static_cast<std::size_t>(n), n_sub);
    std::vector<Index> rows(picks.begin(), picks.end());
    const IncompleteMatrix subsample = take_rows(data, rows);

    EmConfig em;
    em.max_iterations = cfg.em_iterations;
    em.variance_floor = cfg.variance_floor;
    em.covariance_kind = cfg.covariance_kind;
    em.convergence_tol = 0.0;  // fixed-iteration weak learners

    for (std::uint64_t attempt = 1; attempt <= 4; ++attempt) {
        try {
            const auto fitted = fit(subsample, g, em,
                                    rng::derive_seed(cfg.base_seed,
                                                     {static_cast<std::uint64_t>(q),
                                                      static_cast<std::uint64_t>(g), attempt}));
            return posterior_grouped(fitted.params, data, data_work).gamma;
        } catch (const NumericError&) {
            continue;  // includes degenerate components; retry with a new init
        }
    }
    return std::nullopt;
}

}  // namespace detail

/// Builds the ensemble kernel: posteriors of GMMs fitted across
/// initializations and model orders are combined into an averaged Gram matrix
/// with entries in [0, 1]. Members are independent and may run on several
/// threads; the reduction always walks members in (q, g) order, so the result
/// is identical for any thread count.
inline KernelMatrix build_kernel(const IncompleteMatrix& data, const EnsembleConfig& cfg,
                                 EnsembleStats* stats = nullptr) {
    data.require_consistent();
    cfg.require_valid();
    if (data.rows() < 2) throw std::invalid_argument("build_kernel: need at least 2 rows");

    std::vector<std::pair<int, int>> members;
    for (int q = 1; q <= cfg.initializations; ++q) {
        for (int g = 2; g <= cfg.max_order; ++g) members.emplace_back(q, g);
    }
    std::vector<std::optional<Eigen::MatrixXd>> gammas(members.size());
    const auto data_work = detail::make_pattern_work(data);  // shared across members

    int thread_count = cfg.threads;
    if (thread_count <= 0) {
        thread_count = static_cast<int>(std::thread::hardware_concurrency());
        if (thread_count < 1) thread_count = 1;
    }
    thread_count = std::min<int>(thread_count, static_cast<int>(members.size()));

    std::exception_ptr failure;
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    auto worker = [&]() {
        while (!failed.load(std::memory_order_relaxed)) {
            const std::size_t idx = next.fetch_add(1);
            if (idx >= members.size()) break;
            try {
                gammas[idx] = detail::ensemble_member(data, data_work, cfg, members[idx].first,
                                                      members[idx].second);
            } catch (...) {
                if (!failed.exchange(true)) failure = std::current_exception();
                break;
            }
        }
    };
    if (thread_count <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(thread_count));
        for (int t = 0; t < thread_count; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    std::vector<Eigen::MatrixXd> kept;
    kept.reserve(gammas.size());
    for (auto& gamma : gammas) {
        if (gamma) kept.push_back(std::move(*gamma));
    }
    if (stats) {
        stats->members_total = static_cast<int>(members.size());
        stats->members_skipped = static_cast<int>(members.size() - kept.size());
    }
    if (kept.empty()) {
        throw NumericError("build_kernel: every ensemble member failed to fit");
    }
    return combine_posteriors(kept);
}

// -- kernel I/O ---------------------------------------------------------------

inline void save_kernel_csv(const KernelMatrix& kernel, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open file for writing: " + path);
    for (Index i = 0; i < kernel.values.rows(); ++i) {
        for (Index j = 0; j < kernel.values.cols(); ++j) {
            if (j) out << ',';
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.17g", kernel.values(i, j));
            out << buf;
        }
        out << '\n';
    }
}

/// Little-endian binary layout: uint64 N, then N*N float64 row-major.
inline void save_kernel_binary(const KernelMatrix& kernel, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open file for writing: " + path);
    const std::uint64_t n = static_cast<std::uint64_t>(kernel.values.rows());
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    for (Index i = 0; i < kernel.values.rows(); ++i) {
        for (Index j = 0; j < kernel.values.cols(); ++j) {
            const double v = kernel.values(i, j);
            out.write(reinterpret_cast<const char*>(&v), sizeof(v));
        }
    }
}

inline KernelMatrix load_kernel_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open kernel file: " + path);
    std::uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof(n));
    if (!in) throw FormatError("kernel file truncated: " + path);
    KernelMatrix kernel;
    kernel.values.resize(static_cast<Index>(n), static_cast<Index>(n));
    for (Index i = 0; i < kernel.values.rows(); ++i) {
        for (Index j = 0; j < kernel.values.cols(); ++j) {
            double v = 0.0;
            in.read(reinterpret_cast<char*>(&v), sizeof(v));
            if (!in) throw FormatError("kernel file truncated: " + path);
            kernel.values(i, j) = v;
        }
    }
    return kernel;
}

}  // namespace pckid
