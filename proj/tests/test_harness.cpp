#include <catch2/catch_amalgamated.hpp>

#include <pckid/experiment.hpp>

#include <algorithm>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "test_util.hpp"

using namespace pckid;
using Catch::Approx;

namespace {

std::string images_path() { return testutil::data_dir() + "/mnist56-images-idx3-ubyte"; }
std::string labels_path() { return testutil::data_dir() + "/mnist56-labels-idx1-ubyte"; }

/// Two separated blobs written as a CSV dataset with a label file.
struct SyntheticCsv {
    testutil::TempFile data_file;
    testutil::TempFile label_file;

    SyntheticCsv() {
        std::vector<int> labels;
        const Eigen::MatrixXd x = oracles::make_blobs(
            {Eigen::Vector4d(0, 0, 0, 0), Eigen::Vector4d(10, 10, 10, 10)}, 30, 0.7, 99, &labels);
        write_csv(x, data_file.path());
        write_label_csv(labels, label_file.path());
    }
};

nlohmann::json synthetic_config(const SyntheticCsv& csv) {
    nlohmann::json j;
    j["dataset"] = {{"format", "csv"},        {"path", csv.data_file.path()},
                    {"labels", csv.label_file.path()}, {"classes", {0, 1}},
                    {"per_class", 20},        {"standardize", false}};
    j["missingness"] = {{"mechanism", "mcar"}, {"levels", {0.0}}};
    j["methods"] = {"kmeans+mean"};
    j["runs"] = 1;
    j["clusters"] = 2;
    j["restarts"] = 10;
    j["ensemble"] = {{"initializations", 2}, {"max_order", 3}, {"covariance", "diagonal"}};
    j["base_seed"] = 7;
    j["include_timing"] = false;
    return j;
}

}  // namespace

TEST_CASE("load_idx_digits draws a balanced scaled sample", "[harness]") {
    const auto sample = load_idx_digits(images_path(), labels_path(), {5, 6}, 100, 3);
    REQUIRE(sample.data.rows() == 200);
    REQUIRE(sample.data.cols() == 784);
    CHECK(sample.data.mask.all());
    CHECK(sample.data.values.minCoeff() >= 0.0);
    CHECK(sample.data.values.maxCoeff() <= 1.0);
    CHECK(std::count(sample.labels.begin(), sample.labels.end(), 5) == 100);
    CHECK(std::count(sample.labels.begin(), sample.labels.end(), 6) == 100);

    const auto again = load_idx_digits(images_path(), labels_path(), {5, 6}, 100, 3);
    CHECK((sample.data.values - again.data.values).cwiseAbs().maxCoeff() == 0.0);
    const auto different = load_idx_digits(images_path(), labels_path(), {5, 6}, 100, 4);
    CHECK((sample.data.values - different.data.values).cwiseAbs().maxCoeff() > 0.0);

    CHECK_THROWS_AS(load_idx_digits(images_path(), labels_path(), {5}, 100000, 3),
                    std::invalid_argument);
}

TEST_CASE("idx loader rejects malformed files", "[harness]") {
    testutil::TempFile bad_magic(std::string("\x00\x00\x08\x05\x00\x00\x00\x01", 8), ".idx");
    CHECK_THROWS_AS(load_idx_images(bad_magic.path()), FormatError);
    CHECK_THROWS_AS(load_idx_labels(bad_magic.path()), FormatError);

    // valid image magic but not enough pixel bytes
    std::string truncated("\x00\x00\x08\x03", 4);
    truncated += std::string("\x00\x00\x00\x02", 4);  // 2 images
    truncated += std::string("\x00\x00\x00\x02", 4);  // 2 rows
    truncated += std::string("\x00\x00\x00\x02", 4);  // 2 cols
    truncated += std::string(3, '\x7f');              // needs 8 bytes
    testutil::TempFile short_file(truncated, ".idx");
    CHECK_THROWS_MATCHES(load_idx_images(short_file.path()), FormatError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("truncated")));

    CHECK_THROWS_AS(load_idx_images(testutil::data_dir() + "/does-not-exist"), FormatError);
}

TEST_CASE("run_experiment scores a separable dataset perfectly", "[harness]") {
    SyntheticCsv csv;
    const auto cfg = parse_experiment_config(synthetic_config(csv));
    const auto report = run_experiment(cfg);
    REQUIRE(report.cells.size() == 1);
    CHECK(report.cells[0].method == "kmeans+mean");
    CHECK(report.cells[0].level == 0.0);
    REQUIRE(report.cells[0].run_accs.size() == 1);
    CHECK(report.cells[0].run_accs[0] == 1.0);
    CHECK(report.cells[0].mean_acc == 1.0);
    CHECK(report.cells[0].std_acc == 0.0);
    REQUIRE(report.runs.size() == 1);
    CHECK(report.runs[0].kept_dimensions == 4);
}

TEST_CASE("identical configs produce byte-identical reports", "[harness]") {
    SyntheticCsv csv;
    auto j = synthetic_config(csv);
    j["missingness"]["levels"] = {0.0, 0.4};
    j["methods"] = {"pckid", "rbf+mean", "kmeans+median"};
    j["runs"] = 2;
    const auto cfg = parse_experiment_config(j);

    testutil::TempFile out_a("", ".json");
    testutil::TempFile out_b("", ".json");
    write_report_json(run_experiment(cfg), out_a.path());
    write_report_json(run_experiment(cfg), out_b.path());
    const std::string a = testutil::read_file(out_a.path());
    CHECK(a == testutil::read_file(out_b.path()));
    CHECK(a.find("generated_at") == std::string::npos);  // timing disabled
}

TEST_CASE("report aggregates are recomputable from the per-run values", "[harness]") {
    SyntheticCsv csv;
    auto j = synthetic_config(csv);
    j["missingness"]["levels"] = {0.3};
    j["methods"] = {"pckid", "kmeans+zero"};
    j["runs"] = 3;
    const auto report = run_experiment(parse_experiment_config(j));
    for (const auto& cell : report.cells) {
        double mean = 0.0;
        for (double acc : cell.run_accs) mean += acc;
        mean /= static_cast<double>(cell.run_accs.size());
        double variance = 0.0;
        for (double acc : cell.run_accs) variance += (acc - mean) * (acc - mean);
        variance /= static_cast<double>(cell.run_accs.size());
        CHECK(cell.mean_acc == Approx(mean).margin(1e-12));
        CHECK(cell.std_acc == Approx(std::sqrt(variance)).margin(1e-12));
    }
    // every method saw the same input: one digest per run
    for (const auto& run : report.runs) CHECK(run.data_hash.substr(0, 2) == "0x");
}

TEST_CASE("pckid beats a broken-width rbf baseline on blobs with missing data", "[harness]") {
    SyntheticCsv csv;
    auto j = synthetic_config(csv);
    j["missingness"]["levels"] = {0.3};
    j["methods"] = {"pckid", "rbf+mean"};
    j["runs"] = 2;
    j["ensemble"] = {{"initializations", 4}, {"max_order", 4}, {"covariance", "full"}};
    const auto report = run_experiment(parse_experiment_config(j));
    REQUIRE(report.cells.size() == 2);
    CHECK(report.cells[0].method == "pckid");
    CHECK(report.cells[0].mean_acc >= 0.95);
}

TEST_CASE("config parsing reports actionable errors", "[harness]") {
    SyntheticCsv csv;
    auto j = synthetic_config(csv);

    auto bad_method = j;
    bad_method["methods"] = {"svm"};
    CHECK_THROWS_MATCHES(parse_experiment_config(bad_method), std::invalid_argument,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("svm")));

    auto bad_level = j;
    bad_level["missingness"]["levels"] = {1.5};
    CHECK_THROWS_AS(parse_experiment_config(bad_level), ParseError);

    auto missing_key = j;
    missing_key["dataset"].erase("labels");
    CHECK_THROWS_MATCHES(parse_experiment_config(missing_key), ParseError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("labels")));

    auto absent_class = j;
    absent_class["dataset"]["classes"] = {0, 9};
    CHECK_THROWS_MATCHES(run_experiment(parse_experiment_config(absent_class)), std::invalid_argument,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("class 9")));

    auto no_file = j;
    no_file["dataset"]["path"] = "/nonexistent/data.csv";
    CHECK_THROWS_AS(run_experiment(parse_experiment_config(no_file)), ParseError);
}

TEST_CASE("emit_embedding writes separable coordinates", "[harness]") {
    SyntheticCsv csv;
    auto j = synthetic_config(csv);
    j["methods"] = {"pckid"};
    j["ensemble"] = {{"initializations", 3}, {"max_order", 3}, {"covariance", "full"}};
    const auto cfg = parse_experiment_config(j);

    testutil::TempFile out;
    emit_embedding(cfg, "pckid", 0.0, out.path());
    std::istringstream in(testutil::read_file(out.path()));
    std::string header;
    std::getline(in, header);
    CHECK(header == "z1,z2,y_true,y_pred");

    struct Row { double z1, z2; int truth, predicted; };
    std::vector<Row> rows;
    std::string line;
    while (std::getline(in, line)) {
        Row r{};
        REQUIRE(std::sscanf(line.c_str(), "%lf,%lf,%d,%d", &r.z1, &r.z2, &r.truth, &r.predicted) == 4);
        rows.push_back(r);
    }
    REQUIRE(rows.size() == 40);  // N rows

    // a separating direction exists with positive margin: project onto the
    // difference of class means and compare extremes
    Eigen::Vector2d mean_a = Eigen::Vector2d::Zero(), mean_b = Eigen::Vector2d::Zero();
    int n_a = 0, n_b = 0;
    for (const auto& r : rows) {
        if (r.truth == 0) { mean_a += Eigen::Vector2d(r.z1, r.z2); ++n_a; }
        else { mean_b += Eigen::Vector2d(r.z1, r.z2); ++n_b; }
    }
    mean_a /= n_a;
    mean_b /= n_b;
    const Eigen::Vector2d direction = mean_b - mean_a;
    double max_a = -1e300, min_b = 1e300;
    for (const auto& r : rows) {
        const double projected = direction.dot(Eigen::Vector2d(r.z1, r.z2));
        if (r.truth == 0) max_a = std::max(max_a, projected);
        else min_b = std::min(min_b, projected);
    }
    CHECK(min_b - max_a > 0.0);

    testutil::TempFile out2;
    emit_embedding(cfg, "pckid", 0.0, out2.path());
    CHECK(testutil::read_file(out.path()) == testutil::read_file(out2.path()));

    CHECK_THROWS_MATCHES(emit_embedding(cfg, "kmeans+mean", 0.0, out.path()), std::invalid_argument,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("kernel")));
}

TEST_CASE("standardize pipeline handles injected missingness", "[harness]") {
    SyntheticCsv csv;
    auto j = synthetic_config(csv);
    j["dataset"]["standardize"] = true;
    j["missingness"]["levels"] = {0.5};
    j["methods"] = {"kmeans+mean"};
    const auto report = run_experiment(parse_experiment_config(j));
    REQUIRE(report.cells.size() == 1);
    CHECK(report.cells[0].run_accs[0] >= 0.9);  // blobs stay separable after standardization
}
