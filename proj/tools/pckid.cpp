// Command-line front end for the incomplete-data ensemble kernel pipeline:
// config-driven experiment sweeps, missingness injection, kernel export and
// clustering-accuracy scoring.

#include <CLI11.hpp>

#include <pckid/pckid.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

namespace {

int run_experiment_command(const std::string& config_path, const std::string& out_json,
                           const std::string& out_csv, int threads, bool no_timing) {
    auto cfg = pckid::load_experiment_config(config_path);
    if (threads > 0) {
        cfg.threads = threads;
        cfg.ensemble.threads = threads;
    }
    if (no_timing) cfg.include_timing = false;
    const auto report = pckid::run_experiment(cfg);
    if (!out_json.empty()) pckid::write_report_json(report, out_json);
    if (!out_csv.empty()) pckid::write_report_csv(report, out_csv);
    std::printf("%-24s %8s %10s %10s\n", "method", "level", "mean_acc", "std_acc");
    for (const auto& cell : report.cells) {
        std::printf("%-24s %8.2f %10.4f %10.4f\n", cell.method.c_str(), cell.level, cell.mean_acc,
                    cell.std_acc);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PCKID ensemble kernel and spectral clustering pipeline"};
    app.require_subcommand(1);

    // experiment run / embed
    auto* experiment = app.add_subcommand("experiment", "config-driven sweeps");
    experiment->require_subcommand(1);

    std::string config_path, out_json, out_csv;
    int threads = 0;
    bool no_timing = false;
    auto* run = experiment->add_subcommand("run", "run the method x missingness matrix");
    run->add_option("config", config_path, "experiment config JSON")->required();
    run->add_option("--out", out_json, "report JSON path");
    run->add_option("--csv", out_csv, "summary CSV path");
    run->add_option("--threads", threads, "worker threads for the ensemble (0 = config value)");
    run->add_flag("--no-timing", no_timing, "omit wall-clock fields for byte-stable reports");

    std::string embed_method = "pckid", embed_out;
    double embed_level = 0.0;
    auto* embed = experiment->add_subcommand("embed", "export 2-d kernel-space coordinates");
    embed->add_option("config", config_path, "experiment config JSON")->required();
    embed->add_option("--method", embed_method, "kernel-based method name")->required();
    embed->add_option("--pm", embed_level, "missingness level")->required();
    embed->add_option("--out", embed_out, "output CSV path")->required();

    // data inject-missing
    auto* data_cmd = app.add_subcommand("data", "dataset utilities");
    data_cmd->require_subcommand(1);
    std::string in_csv, out_data_csv, mask_out, mechanism = "mcar", missing_token;
    double rate = 0.0, quadrant_pm = 0.0, quantile = 0.9;
    std::uint64_t seed = 0;
    long long side = 0;
    bool has_header = false;
    auto* inject = data_cmd->add_subcommand("inject-missing", "apply a missingness mechanism");
    inject->add_option("--input", in_csv, "input CSV (fully observed)")->required();
    inject->add_option("--output", out_data_csv, "output CSV")->required();
    inject->add_option("--mask-out", mask_out, "optional 0/1 mask audit CSV");
    inject->add_option("--mechanism", mechanism, "mcar | mar-quadrant | nmar-censor")->required();
    inject->add_option("--rate", rate, "mcar cell-missing probability");
    inject->add_option("--pm", quadrant_pm, "mar-quadrant fraction of affected images");
    inject->add_option("--side", side, "mar-quadrant image side length");
    inject->add_option("--quantile", quantile, "nmar-censor saturation quantile");
    inject->add_option("--seed", seed, "RNG seed");
    inject->add_option("--missing-token", missing_token, "token written into missing cells");
    inject->add_flag("--header", has_header, "input has a header line");

    // kernel build
    auto* kernel_cmd = app.add_subcommand("kernel", "kernel construction");
    kernel_cmd->require_subcommand(1);
    std::string kernel_in, kernel_out;
    bool kernel_binary = false;
    pckid::EnsembleConfig ensemble;
    std::string covariance = "diagonal";
    auto* build = kernel_cmd->add_subcommand("build", "build the ensemble kernel from a CSV");
    build->add_option("--input", kernel_in, "input CSV (may contain missing cells)")->required();
    build->add_option("--output", kernel_out, "output path")->required();
    build->add_flag("--binary", kernel_binary, "write the little-endian binary format");
    build->add_option("--initializations,--Q", ensemble.initializations, "ensemble initializations");
    build->add_option("--max-order,--G", ensemble.max_order, "largest mixture order");
    build->add_option("--subsample", ensemble.subsample_fraction, "training subsample fraction");
    build->add_option("--iterations", ensemble.em_iterations, "EM iterations per model");
    build->add_option("--covariance", covariance, "full | diagonal");
    build->add_option("--seed", ensemble.base_seed, "base seed");
    build->add_option("--threads", ensemble.threads, "worker threads (0 = all cores)");
    build->add_option("--missing-token", missing_token, "missing-cell token in the input");
    build->add_flag("--header", has_header, "input has a header line");

    // eval acc
    auto* eval_cmd = app.add_subcommand("eval", "evaluation utilities");
    eval_cmd->require_subcommand(1);
    std::string truth_csv, pred_csv;
    auto* acc = eval_cmd->add_subcommand("acc", "Hungarian-matched clustering accuracy");
    acc->add_option("--truth", truth_csv, "true labels, one integer per line")->required();
    acc->add_option("--pred", pred_csv, "predicted labels, one integer per line")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            return run_experiment_command(config_path, out_json, out_csv, threads, no_timing);
        }
        if (embed->parsed()) {
            const auto cfg = pckid::load_experiment_config(config_path);
            pckid::emit_embedding(cfg, embed_method, embed_level, embed_out);
            std::cout << "wrote " << embed_out << "\n";
            return 0;
        }
        if (inject->parsed()) {
            const auto data = pckid::load_csv(in_csv, missing_token, has_header);
            pckid::IncompleteMatrix result;
            if (mechanism == "mcar") {
                result = pckid::apply_mcar(data, rate, seed);
            } else if (mechanism == "mar-quadrant") {
                result = pckid::apply_mar_quadrant(data, quadrant_pm, side, seed);
            } else if (mechanism == "nmar-censor") {
                result = pckid::apply_nmar_censor(data, quantile);
            } else {
                std::cerr << "unknown mechanism '" << mechanism
                          << "' (expected mcar, mar-quadrant or nmar-censor)\n";
                return 2;
            }
            pckid::write_incomplete_csv(result, out_data_csv, missing_token);
            if (!mask_out.empty()) pckid::write_mask_csv(result.mask, mask_out);
            std::cout << "wrote " << out_data_csv << " ("
                      << (result.rows() * result.cols() - result.observed_count())
                      << " missing cells)\n";
            return 0;
        }
        if (build->parsed()) {
            if (covariance == "full") {
                ensemble.covariance_kind = pckid::CovarianceKind::Full;
            } else if (covariance == "diagonal") {
                ensemble.covariance_kind = pckid::CovarianceKind::Diagonal;
            } else {
                std::cerr << "unknown covariance '" << covariance << "'\n";
                return 2;
            }
            const auto data = pckid::load_csv(kernel_in, missing_token, has_header);
            pckid::EnsembleStats stats;
            const auto kernel = pckid::build_kernel(data, ensemble, &stats);
            if (kernel_binary) {
                pckid::save_kernel_binary(kernel, kernel_out);
            } else {
                pckid::save_kernel_csv(kernel, kernel_out);
            }
            std::cout << "wrote " << kernel_out << " (" << kernel.size() << "x" << kernel.size()
                      << ", " << stats.members_skipped << " of " << stats.members_total
                      << " members skipped)\n";
            return 0;
        }
        if (acc->parsed()) {
            const auto truth = pckid::load_label_csv(truth_csv);
            const auto pred = pckid::load_label_csv(pred_csv);
            std::printf("ACC = %.6f\n", pckid::clustering_accuracy(truth, pred));
            return 0;
        }
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    }
    return 0;
}
