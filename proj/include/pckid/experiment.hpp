#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pckid/csv.hpp"
#include "pckid/errors.hpp"
#include "pckid/evaluation.hpp"
#include "pckid/idx.hpp"
#include "pckid/kernel.hpp"
#include "pckid/missingness.hpp"
#include "pckid/preprocess.hpp"
#include "pckid/spectral.hpp"
#include "pckid/version.hpp"

namespace pckid {

// -- experiment description ---------------------------------------------------

struct MethodSpec {
    enum class Kind { Pckid, RbfImpute, KmeansImpute };
    Kind kind = Kind::Pckid;
    ImputationStrategy imputer = ImputationStrategy::Mean;  // baselines only

    std::string name() const {
        switch (kind) {
            case Kind::Pckid: return "pckid";
            case Kind::RbfImpute: return std::string("rbf+") + to_string(imputer);
            case Kind::KmeansImpute: return std::string("kmeans+") + to_string(imputer);
        }
        return "?";
    }

    bool kernel_based() const { return kind != Kind::KmeansImpute; }

    static MethodSpec parse(const std::string& text) {
        MethodSpec spec;
        if (text == "pckid") {
            spec.kind = Kind::Pckid;
            return spec;
        }
        const auto plus = text.find('+');
        const std::string head = text.substr(0, plus);
        const std::string tail = plus == std::string::npos ? "" : text.substr(plus + 1);
        if (head == "rbf") {
            spec.kind = Kind::RbfImpute;
        } else if (head == "kmeans") {
            spec.kind = Kind::KmeansImpute;
        } else {
            throw std::invalid_argument(
                "unknown method '" + text +
                "' (expected pckid, rbf+<imputer> or kmeans+<imputer> with imputer in "
                "{zero, mean, median, most_frequent})");
        }
        if (tail == "zero") {
            spec.imputer = ImputationStrategy::Zero;
        } else if (tail == "mean") {
            spec.imputer = ImputationStrategy::Mean;
        } else if (tail == "median") {
            spec.imputer = ImputationStrategy::Median;
        } else if (tail == "most_frequent") {
            spec.imputer = ImputationStrategy::MostFrequent;
        } else {
            throw std::invalid_argument("unknown imputer '" + tail + "' in method '" + text +
                                        "' (expected zero, mean, median or most_frequent)");
        }
        return spec;
    }
};

struct DatasetSpec {
    enum class Format { Idx, Csv };
    Format format = Format::Idx;
    std::string images;        ///< IDX images path
    std::string labels;        ///< IDX labels path, or label CSV for Format::Csv
    std::string path;          ///< data CSV path (Format::Csv)
    std::string missing_token; ///< CSV missing token
    bool has_header = false;
    std::vector<int> classes;
    Index per_class = 0;
    bool standardize = false;  ///< per-dimension standardization on observed data
};

struct MissingnessSpec {
    enum class Mechanism { None, Mcar, MarQuadrant, NmarCensor };
    Mechanism mechanism = Mechanism::None;
    std::vector<double> levels{0.0};
    Index side = 0;  ///< image side for MarQuadrant

    static const char* name(Mechanism m) {
        switch (m) {
            case Mechanism::None: return "none";
            case Mechanism::Mcar: return "mcar";
            case Mechanism::MarQuadrant: return "mar_quadrant";
            case Mechanism::NmarCensor: return "nmar_censor";
        }
        return "?";
    }
};

struct ExperimentConfig {
    DatasetSpec dataset;
    MissingnessSpec missingness;
    std::vector<MethodSpec> methods;
    int runs = 10;
    int clusters = 2;
    int restarts = 100;
    EnsembleConfig ensemble;
    std::uint64_t base_seed = 0;
    int threads = 1;
    bool include_timing = true;
    nlohmann::json echo;  ///< the raw config document, replayed into reports
};

// -- config parsing -----------------------------------------------------------

namespace detail {

template <typename T>
T require_field(const nlohmann::json& j, const std::string& key, const char* where) {
    if (!j.contains(key)) {
        throw ParseError(std::string("config: missing '") + key + "' in " + where);
    }
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("config: bad '") + key + "' in " + where + ": " + e.what());
    }
}

template <typename T>
T optional_field(const nlohmann::json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    return j.at(key).get<T>();
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
    ExperimentConfig cfg;
    cfg.echo = j;

    const auto& ds = j.at("dataset");
    const auto format = detail::require_field<std::string>(ds, "format", "dataset");
    if (format == "idx") {
        cfg.dataset.format = DatasetSpec::Format::Idx;
        cfg.dataset.images = detail::require_field<std::string>(ds, "images", "dataset");
        cfg.dataset.labels = detail::require_field<std::string>(ds, "labels", "dataset");
    } else if (format == "csv") {
        cfg.dataset.format = DatasetSpec::Format::Csv;
        cfg.dataset.path = detail::require_field<std::string>(ds, "path", "dataset");
        cfg.dataset.labels = detail::require_field<std::string>(ds, "labels", "dataset");
        cfg.dataset.missing_token = detail::optional_field<std::string>(ds, "missing_token", "");
        cfg.dataset.has_header = detail::optional_field<bool>(ds, "header", false);
    } else {
        throw ParseError("config: dataset format must be 'idx' or 'csv', got '" + format + "'");
    }
    cfg.dataset.classes = detail::require_field<std::vector<int>>(ds, "classes", "dataset");
    cfg.dataset.per_class = detail::require_field<Index>(ds, "per_class", "dataset");
    cfg.dataset.standardize = detail::optional_field<bool>(ds, "standardize", false);

    const auto& ms = j.at("missingness");
    const auto mech = detail::require_field<std::string>(ms, "mechanism", "missingness");
    if (mech == "none") {
        cfg.missingness.mechanism = MissingnessSpec::Mechanism::None;
    } else if (mech == "mcar") {
        cfg.missingness.mechanism = MissingnessSpec::Mechanism::Mcar;
    } else if (mech == "mar_quadrant") {
        cfg.missingness.mechanism = MissingnessSpec::Mechanism::MarQuadrant;
        cfg.missingness.side = detail::require_field<Index>(ms, "side", "missingness");
    } else if (mech == "nmar_censor") {
        cfg.missingness.mechanism = MissingnessSpec::Mechanism::NmarCensor;
    } else {
        throw ParseError("config: unknown missingness mechanism '" + mech + "'");
    }
    cfg.missingness.levels = detail::optional_field<std::vector<double>>(ms, "levels", {0.0});
    for (const double level : cfg.missingness.levels) {
        if (!(level >= 0.0 && level <= 1.0)) {
            throw ParseError("config: missingness levels must lie in [0, 1]");
        }
    }

    const auto method_names = detail::require_field<std::vector<std::string>>(j, "methods", "config");
    if (method_names.empty()) throw ParseError("config: methods list is empty");
    for (const auto& name : method_names) cfg.methods.push_back(MethodSpec::parse(name));

    cfg.runs = detail::optional_field<int>(j, "runs", 10);
    if (cfg.runs < 1) throw ParseError("config: runs must be at least 1");
    cfg.clusters = detail::optional_field<int>(j, "clusters", 2);
    cfg.restarts = detail::optional_field<int>(j, "restarts", 100);
    cfg.base_seed = detail::optional_field<std::uint64_t>(j, "base_seed", 0);
    cfg.threads = detail::optional_field<int>(j, "threads", 1);
    cfg.include_timing = detail::optional_field<bool>(j, "include_timing", true);

    if (j.contains("ensemble")) {
        const auto& en = j.at("ensemble");
        cfg.ensemble.initializations = detail::optional_field<int>(en, "initializations", 30);
        cfg.ensemble.max_order = detail::optional_field<int>(en, "max_order", 30);
        cfg.ensemble.subsample_fraction = detail::optional_field<double>(en, "subsample_fraction", 0.5);
        cfg.ensemble.em_iterations = detail::optional_field<int>(en, "em_iterations", 10);
        const auto cov = detail::optional_field<std::string>(en, "covariance", "diagonal");
        if (cov == "full") {
            cfg.ensemble.covariance_kind = CovarianceKind::Full;
        } else if (cov == "diagonal") {
            cfg.ensemble.covariance_kind = CovarianceKind::Diagonal;
        } else {
            throw ParseError("config: ensemble covariance must be 'full' or 'diagonal'");
        }
        cfg.ensemble.variance_floor = detail::optional_field<double>(en, "variance_floor", 1e-6);
    }
    cfg.ensemble.threads = cfg.threads;
    cfg.ensemble.require_valid();
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("config file " + path + " is not valid JSON: " + e.what());
    }
    return parse_experiment_config(j);
}

// -- report -------------------------------------------------------------------

struct CellResult {
    std::string method;
    double level = 0.0;
    std::vector<double> run_accs;
    double mean_acc = 0.0;
    double std_acc = 0.0;  ///< population standard deviation over runs
    double seconds = 0.0;  ///< total wall time over runs (volatile)
};

struct RunRecord {
    double level = 0.0;
    int run = 0;
    std::uint64_t seed = 0;
    std::string data_hash;  ///< fairness hash of the post-missingness input
    Index kept_dimensions = 0;
    int ensemble_skipped = 0;
};

struct ExperimentReport {
    nlohmann::json config_echo;
    std::vector<CellResult> cells;
    std::vector<RunRecord> runs;
    bool include_timing = true;
};

inline nlohmann::json report_to_json(const ExperimentReport& report) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["library_version"] = version_string();
    j["config"] = report.config_echo;
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& cell : report.cells) {
        nlohmann::json c;
        c["method"] = cell.method;
        c["level"] = cell.level;
        c["run_accs"] = cell.run_accs;
        c["mean_acc"] = cell.mean_acc;
        c["std_acc"] = cell.std_acc;
        if (report.include_timing) c["seconds"] = cell.seconds;
        cells.push_back(std::move(c));
    }
    j["results"] = std::move(cells);
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& run : report.runs) {
        nlohmann::json r;
        r["level"] = run.level;
        r["run"] = run.run;
        r["seed"] = run.seed;
        r["data_hash"] = run.data_hash;
        r["kept_dimensions"] = run.kept_dimensions;
        r["ensemble_skipped"] = run.ensemble_skipped;
        runs.push_back(std::move(r));
    }
    j["runs"] = std::move(runs);
    if (report.include_timing) {
        const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        char buf[32];
        std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
        j["generated_at"] = buf;
    }
    return j;
}

inline void write_report_json(const ExperimentReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open file for writing: " + path);
    out << report_to_json(report).dump(2) << '\n';
}

/// Plot-ready summary: one row per (method, level).
inline void write_report_csv(const ExperimentReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open file for writing: " + path);
    out << "method,level,mean_acc,std_acc\n";
    for (const auto& cell : report.cells) {
        out << cell.method << ',' << detail::format_double(cell.level) << ','
            << detail::format_double(cell.mean_acc) << ',' << detail::format_double(cell.std_acc)
            << '\n';
    }
}

// -- pipeline internals ---------------------------------------------------------

namespace detail {

/// FNV-1a over shape, mask and observed values only, so the digest ignores
/// placeholder contents. Used to verify all methods saw identical inputs.
inline std::string data_digest(const IncompleteMatrix& data) {
    std::uint64_t h = 1469598103934665603ULL;
    auto absorb = [&h](const unsigned char* bytes, std::size_t len) {
        for (std::size_t b = 0; b < len; ++b) {
            h ^= bytes[b];
            h *= 1099511628211ULL;
        }
    };
    const std::uint64_t shape[2] = {static_cast<std::uint64_t>(data.rows()),
                                    static_cast<std::uint64_t>(data.cols())};
    absorb(reinterpret_cast<const unsigned char*>(shape), sizeof(shape));
    for (Index i = 0; i < data.rows(); ++i) {
        for (Index j = 0; j < data.cols(); ++j) {
            const unsigned char observed = data.mask(i, j) ? 1 : 0;
            absorb(&observed, 1);
            if (observed) {
                const double v = data.values(i, j);
                absorb(reinterpret_cast<const unsigned char*>(&v), sizeof(v));
            }
        }
    }
    char buf[19];
    std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(h));
    return buf;
}

struct LabeledPool {
    IncompleteMatrix data;
    std::vector<int> labels;
    std::vector<std::vector<Index>> class_rows;  // aligned with config classes
};

inline LabeledPool load_pool(const DatasetSpec& ds) {
    LabeledPool pool;
    if (ds.format == DatasetSpec::Format::Idx) {
        pool.data.values = load_idx_images(ds.images);
        pool.data.mask = BoolMatrix::Constant(pool.data.values.rows(), pool.data.values.cols(), true);
        pool.labels = load_idx_labels(ds.labels);
    } else {
        pool.data = load_csv(ds.path, ds.missing_token, ds.has_header);
        pool.labels = load_label_csv(ds.labels);
    }
    if (static_cast<Index>(pool.labels.size()) != pool.data.rows()) {
        throw ParseError("dataset rows and labels differ in count");
    }
    for (const int cls : ds.classes) {
        std::vector<Index> rows;
        for (Index i = 0; i < pool.data.rows(); ++i) {
            if (pool.labels[static_cast<std::size_t>(i)] == cls) rows.push_back(i);
        }
        if (rows.empty()) {
            throw std::invalid_argument("dataset has no rows of class " + std::to_string(cls));
        }
        if (static_cast<Index>(rows.size()) < ds.per_class) {
            throw std::invalid_argument("class " + std::to_string(cls) + " has only " +
                                        std::to_string(rows.size()) + " rows, need " +
                                        std::to_string(ds.per_class));
        }
        pool.class_rows.push_back(std::move(rows));
    }
    return pool;
}

struct RunData {
    IncompleteMatrix data;       ///< post-missingness, post zero-variance removal
    std::vector<int> labels;
    Index kept_dimensions = 0;
};

inline IncompleteMatrix inject(const IncompleteMatrix& data, const MissingnessSpec& ms,
                               double level, std::uint64_t seed) {
    if (level == 0.0 || ms.mechanism == MissingnessSpec::Mechanism::None) return data;
    switch (ms.mechanism) {
        case MissingnessSpec::Mechanism::Mcar:
            return apply_mcar(data, level, seed);
        case MissingnessSpec::Mechanism::MarQuadrant:
            return apply_mar_quadrant(data, level, ms.side, seed);
        case MissingnessSpec::Mechanism::NmarCensor:
            return apply_nmar_censor(data, 1.0 - level);
        default:
            return data;
    }
}

/// Drops dimensions with no observed entries (standardization needs at least
/// one value per dimension; the later zero-variance pass would drop them too).
inline IncompleteMatrix drop_unobserved_dims(const IncompleteMatrix& data) {
    std::vector<Index> keep;
    for (Index j = 0; j < data.cols(); ++j) {
        bool any = false;
        for (Index i = 0; i < data.rows(); ++i) {
            if (data.mask(i, j)) {
                any = true;
                break;
            }
        }
        if (any) keep.push_back(j);
    }
    if (static_cast<Index>(keep.size()) == data.cols()) return data;
    IncompleteMatrix out;
    out.values.resize(data.rows(), static_cast<Index>(keep.size()));
    out.mask.resize(data.rows(), static_cast<Index>(keep.size()));
    for (Index c = 0; c < static_cast<Index>(keep.size()); ++c) {
        out.values.col(c) = data.values.col(keep[static_cast<std::size_t>(c)]);
        out.mask.col(c) = data.mask.col(keep[static_cast<std::size_t>(c)]);
    }
    return out;
}

/// Draws the run's balanced subset, injects missingness and prunes dimensions.
/// Pipeline order: subsample, missingness, optional standardization,
/// zero-variance removal.
inline RunData assemble_run_data(const LabeledPool& pool, const ExperimentConfig& cfg, double level,
                                 std::uint64_t run_seed) {
    auto eng = rng::make_engine(rng::derive_seed(run_seed, {0x5u}));
    std::vector<Index> rows;
    std::vector<int> labels;
    for (std::size_t c = 0; c < pool.class_rows.size(); ++c) {
        const auto& candidates = pool.class_rows[c];
        const auto picks = rng::sample_without_replacement(
            eng, candidates.size(), static_cast<std::size_t>(cfg.dataset.per_class));
        for (const auto p : picks) {
            rows.push_back(candidates[p]);
            labels.push_back(cfg.dataset.classes[c]);
        }
    }
    IncompleteMatrix subset = take_rows(pool.data, rows);
    subset = inject(subset, cfg.missingness, level, rng::derive_seed(run_seed, {0x11u}));
    if (cfg.dataset.standardize) {
        subset = drop_unobserved_dims(subset);
        subset = standardize_observed(subset).data;
    }
    auto pruned = remove_zero_variance(subset);
    RunData out;
    out.data = std::move(pruned.data);
    out.labels = std::move(labels);
    out.kept_dimensions = static_cast<Index>(pruned.kept.size());
    return out;
}

inline std::vector<int> execute_method(const MethodSpec& method, const IncompleteMatrix& data,
                                       const ExperimentConfig& cfg, std::uint64_t run_seed,
                                       std::size_t method_index, int* ensemble_skipped) {
    const std::uint64_t cluster_seed =
        rng::derive_seed(run_seed, {0x2u, static_cast<std::uint64_t>(method_index)});
    switch (method.kind) {
        case MethodSpec::Kind::Pckid: {
            EnsembleConfig ens = cfg.ensemble;
            ens.base_seed = rng::derive_seed(run_seed, {0x1u});
            EnsembleStats stats;
            const KernelMatrix kernel = build_kernel(data, ens, &stats);
            if (ensemble_skipped) *ensemble_skipped += stats.members_skipped;
            return spectral_cluster(kernel, cfg.clusters, cfg.restarts, cluster_seed);
        }
        case MethodSpec::Kind::RbfImpute: {
            const Eigen::MatrixXd imputed = impute(data, method.imputer);
            const KernelMatrix kernel = rbf_kernel(imputed, median_heuristic_sigma(imputed));
            return spectral_cluster(kernel, cfg.clusters, cfg.restarts, cluster_seed);
        }
        case MethodSpec::Kind::KmeansImpute: {
            const Eigen::MatrixXd imputed = impute(data, method.imputer);
            return kmeans(imputed, cfg.clusters, cfg.restarts, cluster_seed).labels;
        }
    }
    throw std::logic_error("execute_method: unreachable");
}

}  // namespace detail

// -- experiment drivers ---------------------------------------------------------

/// Runs the full method x missingness-level matrix. Every method inside one
/// run consumes bit-identical inputs (digest-checked), and all randomness is
/// derived from (base_seed, level index, run index), so a config determines
/// every number in the report.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
    const auto pool = detail::load_pool(cfg.dataset);
    ExperimentReport report;
    report.config_echo = cfg.echo.is_null() ? nlohmann::json::object() : cfg.echo;
    report.include_timing = cfg.include_timing;

    std::vector<CellResult> cells(cfg.missingness.levels.size() * cfg.methods.size());
    for (std::size_t li = 0; li < cfg.missingness.levels.size(); ++li) {
        for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
            auto& cell = cells[li * cfg.methods.size() + mi];
            cell.method = cfg.methods[mi].name();
            cell.level = cfg.missingness.levels[li];
        }
    }

    for (std::size_t li = 0; li < cfg.missingness.levels.size(); ++li) {
        const double level = cfg.missingness.levels[li];
        for (int run = 0; run < cfg.runs; ++run) {
            const std::uint64_t run_seed = rng::derive_seed(
                cfg.base_seed, {static_cast<std::uint64_t>(li), static_cast<std::uint64_t>(run)});
            const auto run_data = detail::assemble_run_data(pool, cfg, level, run_seed);
            const std::string digest = detail::data_digest(run_data.data);

            RunRecord record;
            record.level = level;
            record.run = run;
            record.seed = run_seed;
            record.data_hash = digest;
            record.kept_dimensions = run_data.kept_dimensions;

            for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
                const auto start = std::chrono::steady_clock::now();
                const auto predicted = detail::execute_method(
                    cfg.methods[mi], run_data.data, cfg, run_seed, mi, &record.ensemble_skipped);
                const auto stop = std::chrono::steady_clock::now();
                if (detail::data_digest(run_data.data) != digest) {
                    throw std::logic_error("fairness violation: method '" + cfg.methods[mi].name() +
                                           "' mutated the run input");
                }
                auto& cell = cells[li * cfg.methods.size() + mi];
                cell.run_accs.push_back(clustering_accuracy(run_data.labels, predicted));
                cell.seconds += std::chrono::duration<double>(stop - start).count();
            }
            report.runs.push_back(std::move(record));
        }
    }

    for (auto& cell : cells) {
        double sum = 0.0;
        for (const double acc : cell.run_accs) sum += acc;
        cell.mean_acc = sum / static_cast<double>(cell.run_accs.size());
        double ss = 0.0;
        for (const double acc : cell.run_accs) ss += (acc - cell.mean_acc) * (acc - cell.mean_acc);
        cell.std_acc = std::sqrt(ss / static_cast<double>(cell.run_accs.size()));
    }
    report.cells = std::move(cells);
    return report;
}

/// Writes the 2-d kernel-space map of one method at one missingness level:
/// N rows of (z1, z2, y_true, y_pred), reproducing run 0 of the sweep.
inline void emit_embedding(const ExperimentConfig& cfg, const std::string& method_name, double level,
                           const std::string& out_path) {
    const MethodSpec method = MethodSpec::parse(method_name);
    if (!method.kernel_based()) {
        throw std::invalid_argument("emit_embedding: method '" + method_name +
                                    "' has no kernel to embed");
    }
    std::size_t level_index = 0;
    for (std::size_t li = 0; li < cfg.missingness.levels.size(); ++li) {
        if (cfg.missingness.levels[li] == level) {
            level_index = li;
            break;
        }
    }
    const auto pool = detail::load_pool(cfg.dataset);
    const std::uint64_t run_seed =
        rng::derive_seed(cfg.base_seed, {static_cast<std::uint64_t>(level_index), 0});
    const auto run_data = detail::assemble_run_data(pool, cfg, level, run_seed);

    KernelMatrix kernel;
    if (method.kind == MethodSpec::Kind::Pckid) {
        EnsembleConfig ens = cfg.ensemble;
        ens.base_seed = rng::derive_seed(run_seed, {0x1u});
        kernel = build_kernel(run_data.data, ens);
    } else {
        const Eigen::MatrixXd imputed = impute(run_data.data, method.imputer);
        kernel = rbf_kernel(imputed, median_heuristic_sigma(imputed));
    }
    const Embedding embedding = kernel_pca(kernel, std::min<Index>(2, kernel.size()));
    const auto predicted = spectral_cluster(kernel, cfg.clusters, cfg.restarts,
                                            rng::derive_seed(run_seed, {0x2u, 0xEDu}));

    std::ofstream out(out_path);
    if (!out) throw ParseError("cannot open file for writing: " + out_path);
    out << "z1,z2,y_true,y_pred\n";
    for (Index i = 0; i < embedding.coords.rows(); ++i) {
        const double z2 = embedding.coords.cols() > 1 ? embedding.coords(i, 1) : 0.0;
        out << detail::format_double(embedding.coords(i, 0)) << ',' << detail::format_double(z2)
            << ',' << run_data.labels[static_cast<std::size_t>(i)] << ','
            << predicted[static_cast<std::size_t>(i)] << '\n';
    }
}

}  // namespace pckid
