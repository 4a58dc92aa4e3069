#include <catch2/catch_amalgamated.hpp>

#include <pckid/csv.hpp>
#include <pckid/idx.hpp>
#include <pckid/missingness.hpp>
#include <pckid/preprocess.hpp>

#include <algorithm>
#include <cmath>
#include <set>

#include "test_util.hpp"

using namespace pckid;

TEST_CASE("load_csv maps missing cells to the mask", "[dataset]") {
    testutil::TempFile f("1,2\n3,\n");
    const auto m = load_csv(f.path(), "");
    REQUIRE(m.rows() == 2);
    REQUIRE(m.cols() == 2);
    CHECK(m.mask(0, 0));
    CHECK(m.mask(0, 1));
    CHECK(m.mask(1, 0));
    CHECK_FALSE(m.mask(1, 1));
    CHECK(m.values(1, 0) == 3.0);
    CHECK(std::isnan(m.values(1, 1)));
}

TEST_CASE("load_csv fully observed and fully missing", "[dataset]") {
    testutil::TempFile all_observed("1,2\n3,4\n");
    CHECK(load_csv(all_observed.path()).mask.all());

    testutil::TempFile all_missing("NaN,NaN\nNaN,NaN\n");
    const auto m = load_csv(all_missing.path(), "NaN");
    CHECK(m.mask.count() == 0);
}

TEST_CASE("load_csv rejects ragged and non-numeric input", "[dataset]") {
    testutil::TempFile ragged("1,2\n3\n");
    CHECK_THROWS_MATCHES(load_csv(ragged.path()), ParseError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("line 2")));
    testutil::TempFile garbage("1,2\n3,frog\n");
    CHECK_THROWS_MATCHES(load_csv(garbage.path()), ParseError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("frog")));
}

TEST_CASE("csv round trip with header and token", "[dataset]") {
    testutil::TempFile f("a,b\n1.5,NA\n2.25,7\n");
    const auto m = load_csv(f.path(), "NA", true);
    REQUIRE(m.rows() == 2);
    CHECK_FALSE(m.mask(0, 1));
    testutil::TempFile out;
    write_incomplete_csv(m, out.path(), "NA");
    const auto again = load_csv(out.path(), "NA");
    CHECK((again.mask == m.mask).all());
    CHECK(again.values(1, 1) == 7.0);
}

TEST_CASE("apply_mcar edge rates", "[dataset]") {
    const auto data = IncompleteMatrix::complete(Eigen::MatrixXd::Random(6, 4));
    CHECK(apply_mcar(data, 0.0, 3).mask.all());
    CHECK(apply_mcar(data, 1.0, 3).mask.count() == 0);
    CHECK_THROWS_AS(apply_mcar(data, 1.5, 3), std::invalid_argument);
    CHECK_THROWS_AS(apply_mcar(apply_mcar(data, 0.5, 3), 0.5, 3), std::invalid_argument);
}

TEST_CASE("apply_mcar hits the requested rate within binomial noise", "[dataset]") {
    const auto data = IncompleteMatrix::complete(Eigen::MatrixXd::Random(100, 100));
    const auto masked = apply_mcar(data, 0.3, 99);
    const double observed_fraction = static_cast<double>(masked.observed_count()) / 10000.0;
    const double sigma = std::sqrt(0.3 * 0.7 / 10000.0);
    CHECK(std::abs(observed_fraction - 0.7) <= 3.0 * sigma);
}

TEST_CASE("apply_mcar is deterministic and leaves observed values alone", "[dataset]") {
    const auto data = IncompleteMatrix::complete(Eigen::MatrixXd::Random(30, 7));
    const auto a = apply_mcar(data, 0.4, 1234);
    const auto b = apply_mcar(data, 0.4, 1234);
    CHECK((a.mask == b.mask).all());
    for (Index i = 0; i < a.rows(); ++i) {
        for (Index j = 0; j < a.cols(); ++j) {
            if (a.mask(i, j)) CHECK(a.values(i, j) == data.values(i, j));
        }
    }
}

TEST_CASE("apply_mar_quadrant removes one quadrant per selected image", "[dataset]") {
    const auto images = IncompleteMatrix::complete(Eigen::MatrixXd::Random(50, 16));
    CHECK(apply_mar_quadrant(images, 0.0, 4, 5).mask.all());

    const auto tiny = IncompleteMatrix::complete(Eigen::MatrixXd::Random(40, 4));
    const auto hit = apply_mar_quadrant(tiny, 1.0, 2, 5);
    for (Index i = 0; i < hit.rows(); ++i) {
        CHECK((hit.mask.row(i) == false).count() == 1);  // a 2x2 image quadrant is one pixel
    }

    CHECK_THROWS_AS(apply_mar_quadrant(images, 0.5, 6, 5), std::invalid_argument);
}

TEST_CASE("apply_mar_quadrant selects quadrants uniformly", "[dataset]") {
    const Index side = 4;
    const auto images = IncompleteMatrix::complete(Eigen::MatrixXd::Random(1000, side * side));
    const auto masked = apply_mar_quadrant(images, 0.5, side, 2024);
    int with_missing = 0;
    Eigen::Vector4i quadrant_counts = Eigen::Vector4i::Zero();
    for (Index i = 0; i < masked.rows(); ++i) {
        if (masked.mask.row(i).all()) continue;
        ++with_missing;
        // identify the quadrant from the first missing pixel
        Index first = -1;
        for (Index j = 0; j < masked.cols(); ++j) {
            if (!masked.mask(i, j)) {
                first = j;
                break;
            }
        }
        const Index r = first / side;
        const Index c = first % side;
        quadrant_counts((r >= side / 2 ? 2 : 0) + (c >= side / 2 ? 1 : 0)) += 1;
        CHECK((masked.mask.row(i) == false).count() == (side / 2) * (side / 2));
    }
    CHECK(with_missing == 500);
    const double sigma = std::sqrt(0.25 * 0.75 / 500.0);
    for (int q = 0; q < 4; ++q) {
        CHECK(std::abs(quadrant_counts(q) / 500.0 - 0.25) <= 3.0 * sigma);
    }
}

TEST_CASE("apply_nmar_censor censors above the per-dimension quantile", "[dataset]") {
    Eigen::MatrixXd col(4, 1);
    col << 1, 2, 3, 4;
    const auto censored = apply_nmar_censor(IncompleteMatrix::complete(col), 0.5);
    CHECK(censored.mask(0, 0));
    CHECK(censored.mask(1, 0));
    CHECK_FALSE(censored.mask(2, 0));  // 3 > 2.5
    CHECK_FALSE(censored.mask(3, 0));  // 4 > 2.5

    Eigen::MatrixXd distinct(5, 2);
    distinct << 1, 10, 2, 20, 3, 30, 4, 40, 5, 50;
    const auto top = apply_nmar_censor(IncompleteMatrix::complete(distinct), 0.999);
    for (Index j = 0; j < 2; ++j) {
        CHECK((top.mask.col(j) == false).count() == 1);
        CHECK_FALSE(top.mask(4, j));  // only each column's maximum removed
    }

    const auto constant = apply_nmar_censor(
        IncompleteMatrix::complete(Eigen::MatrixXd::Constant(6, 3, 2.5)), 0.5);
    CHECK(constant.mask.all());
}

TEST_CASE("standardize_observed centers and scales observed entries", "[dataset]") {
    Eigen::MatrixXd two(2, 1);
    two << 2, 4;
    const auto r = standardize_observed(IncompleteMatrix::complete(two));
    CHECK(r.data.values(0, 0) == Catch::Approx(-1.0));
    CHECK(r.data.values(1, 0) == Catch::Approx(1.0));

    const auto again = standardize_observed(r.data);
    CHECK((again.data.values - r.data.values).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("standardize_observed with missing entries matches hand arithmetic", "[dataset]") {
    Eigen::MatrixXd col(4, 1);
    col << 1, 0, 3, 8;
    BoolMatrix mask(4, 1);
    mask << true, false, true, true;
    const auto data = IncompleteMatrix::with_mask(col, mask);
    const auto r = standardize_observed(data);
    const double mean = 4.0;
    const double stddev = std::sqrt(26.0 / 3.0);  // population variance of {1, 3, 8}
    CHECK(r.mean(0) == Catch::Approx(mean));
    CHECK(r.std(0) == Catch::Approx(stddev));
    CHECK(r.data.values(0, 0) == Catch::Approx((1 - mean) / stddev));
    CHECK(r.data.values(2, 0) == Catch::Approx((3 - mean) / stddev));
    CHECK(r.data.values(3, 0) == Catch::Approx((8 - mean) / stddev));
    CHECK_FALSE(r.data.mask(1, 0));
}

TEST_CASE("standardize_observed leaves constant dimensions unscaled and rejects empty ones",
          "[dataset]") {
    Eigen::MatrixXd m(3, 2);
    m << 5, 1, 5, 2, 5, 3;
    const auto r = standardize_observed(IncompleteMatrix::complete(m));
    CHECK(r.std(0) == 0.0);
    CHECK(r.data.values.col(0).cwiseAbs().maxCoeff() == 0.0);  // centered only

    BoolMatrix mask = BoolMatrix::Constant(3, 2, true);
    mask.col(1) = false;
    const auto broken = IncompleteMatrix::with_mask(m, mask);
    CHECK_THROWS_MATCHES(standardize_observed(broken), std::invalid_argument,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("drop")));
}

TEST_CASE("remove_zero_variance drops constant and unobserved dimensions", "[dataset]") {
    Eigen::MatrixXd m(3, 3);
    m << 1, 7, 0, 2, 7, 1, 3, 7, 2;
    const auto r = remove_zero_variance(IncompleteMatrix::complete(m));
    REQUIRE(r.kept == std::vector<Index>{0, 2});
    CHECK(r.data.cols() == 2);

    const auto identity = remove_zero_variance(IncompleteMatrix::complete(Eigen::MatrixXd::Random(4, 3)));
    CHECK(identity.kept == std::vector<Index>{0, 1, 2});

    CHECK_THROWS_AS(remove_zero_variance(IncompleteMatrix::complete(Eigen::MatrixXd::Constant(3, 2, 1.0))),
                    std::invalid_argument);
}

TEST_CASE("remove_zero_variance keeps roughly 500 of 784 digit dimensions", "[dataset]") {
    const auto sample = load_idx_digits(testutil::data_dir() + "/mnist56-images-idx3-ubyte",
                                        testutil::data_dir() + "/mnist56-labels-idx1-ubyte",
                                        {5, 6}, 200, 7);
    const auto r = remove_zero_variance(sample.data);
    CHECK(static_cast<Index>(r.kept.size()) >= 425);
    CHECK(static_cast<Index>(r.kept.size()) <= 575);
}

TEST_CASE("impute fills missing cells from observed statistics", "[dataset]") {
    Eigen::MatrixXd m(3, 1);
    m << 1, 0, 3;
    BoolMatrix mask(3, 1);
    mask << true, false, true;
    const auto data = IncompleteMatrix::with_mask(m, mask);
    CHECK(impute(data, ImputationStrategy::Mean)(1, 0) == Catch::Approx(2.0));
    CHECK(impute(data, ImputationStrategy::Zero)(1, 0) == 0.0);
    CHECK(impute(data, ImputationStrategy::Mean)(0, 0) == 1.0);  // observed copied verbatim

    Eigen::MatrixXd med(4, 1);
    med << 1, 2, 0, 9;
    BoolMatrix med_mask(4, 1);
    med_mask << true, true, false, true;
    CHECK(impute(IncompleteMatrix::with_mask(med, med_mask), ImputationStrategy::Median)(2, 0) ==
          Catch::Approx(2.0));

    Eigen::MatrixXd mf(4, 1);
    mf << 0, 0, 5, 0;
    BoolMatrix mf_mask(4, 1);
    mf_mask << true, true, true, false;
    CHECK(impute(IncompleteMatrix::with_mask(mf, mf_mask), ImputationStrategy::MostFrequent)(3, 0) ==
          0.0);

    BoolMatrix empty_mask = BoolMatrix::Constant(3, 1, false);
    CHECK_THROWS_AS(impute(IncompleteMatrix::with_mask(m, empty_mask), ImputationStrategy::Mean),
                    std::invalid_argument);
}

TEST_CASE("mean imputation after standardization fills zeros", "[dataset]") {
    auto eng = rng::make_engine(17);
    Eigen::MatrixXd m(40, 5);
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) m(i, j) = rng::normal(eng, 3.0, 2.0);
    }
    const auto incomplete = apply_mcar(IncompleteMatrix::complete(m), 0.3, 5);
    const auto standardized = standardize_observed(incomplete).data;
    const auto filled = impute(standardized, ImputationStrategy::Mean);
    for (Index i = 0; i < filled.rows(); ++i) {
        for (Index j = 0; j < filled.cols(); ++j) {
            if (!standardized.mask(i, j)) CHECK(std::abs(filled(i, j)) < 1e-12);
        }
    }
}

TEST_CASE("group_by_pattern partitions rows", "[dataset]") {
    const auto one = group_by_pattern(IncompleteMatrix::complete(Eigen::MatrixXd::Random(5, 3)));
    REQUIRE(one.size() == 1);
    CHECK(one.front().row_indices.size() == 5);

    Eigen::MatrixXd m(3, 2);
    m << 1, 2, 3, 0, 5, 6;
    BoolMatrix mask(3, 2);
    mask << true, true, true, false, true, true;
    const auto groups = group_by_pattern(IncompleteMatrix::with_mask(m, mask));
    REQUIRE(groups.size() == 2);
    CHECK(groups[0].row_indices == std::vector<Index>{1});  // "10" sorts before "11"
    CHECK(groups[1].row_indices == std::vector<Index>{0, 2});
}

TEST_CASE("group_by_pattern handles all-distinct patterns and yields a permutation", "[dataset]") {
    const Index n = 5;
    Eigen::MatrixXd m = Eigen::MatrixXd::Random(n, n);
    BoolMatrix mask = BoolMatrix::Constant(n, n, true);
    for (Index i = 0; i < n; ++i) mask(i, i) = false;
    const auto groups = group_by_pattern(IncompleteMatrix::with_mask(m, mask));
    CHECK(groups.size() == static_cast<std::size_t>(n));

    const auto fuzzed = apply_mcar(IncompleteMatrix::complete(Eigen::MatrixXd::Random(50, 4)), 0.5, 3);
    std::vector<Index> all;
    for (const auto& g : group_by_pattern(fuzzed)) {
        all.insert(all.end(), g.row_indices.begin(), g.row_indices.end());
    }
    std::sort(all.begin(), all.end());
    REQUIRE(all.size() == 50);
    for (Index i = 0; i < 50; ++i) CHECK(all[static_cast<std::size_t>(i)] == i);
}

TEST_CASE("results are independent of placeholder contents", "[dataset]") {
    auto data = apply_mcar(IncompleteMatrix::complete(Eigen::MatrixXd::Random(25, 4)), 0.35, 11);
    const auto imputed = impute(data, ImputationStrategy::Median);
    const auto standardized = standardize_observed(data);

    // scribble garbage into every unobserved cell and re-run
    auto eng = rng::make_engine(99);
    for (Index i = 0; i < data.rows(); ++i) {
        for (Index j = 0; j < data.cols(); ++j) {
            if (!data.mask(i, j)) data.values(i, j) = rng::normal(eng, 0.0, 1e6);
        }
    }
    const auto imputed_again = impute(data, ImputationStrategy::Median);
    const auto standardized_again = standardize_observed(data);
    CHECK((imputed - imputed_again).cwiseAbs().maxCoeff() == 0.0);
    for (Index i = 0; i < data.rows(); ++i) {
        for (Index j = 0; j < data.cols(); ++j) {
            if (data.mask(i, j)) {
                CHECK(standardized.data.values(i, j) == standardized_again.data.values(i, j));
            }
        }
    }
}

TEST_CASE("mask export writes 0/1 audit CSV", "[dataset]") {
    Eigen::MatrixXd m(2, 2);
    m << 1, 0, 3, 4;
    BoolMatrix mask(2, 2);
    mask << true, false, true, true;
    testutil::TempFile out;
    write_mask_csv(IncompleteMatrix::with_mask(m, mask).mask, out.path());
    CHECK(testutil::read_file(out.path()) == "1,0\n1,1\n");
}
