#include "doctest.h"

#include <cmath>

#include "hand_forest.hpp"
#include "rfgap/explain.hpp"
#include "rfgap/synthetic.hpp"

using namespace rfgap;

namespace {

constexpr double kQuery = 1.5;

Forest heteroscedastic_forest(Dataset& train_out, Dataset& test_out, std::size_t n_train,
                              std::size_t n_test, int trees) {
    SyntheticConfig cfg;
    cfg.n_rows = n_train + n_test;
    cfg.n_numeric = 3;
    cfg.noise = NoiseProfile::heteroscedastic;
    cfg.sigma_low = 0.1;
    cfg.sigma_high = 2.0;
    cfg.seed = 404;
    const Dataset all = generate_synthetic(cfg);
    auto [train, test] = time_split(all, static_cast<double>(n_train) /
                                             static_cast<double>(n_train + n_test));
    train_out = std::move(train);
    test_out = std::move(test);
    Hyperparams hp;
    hp.n_estimators = trees;
    hp.min_samples_leaf = 5;
    hp.seed = 11;
    return Forest::fit(train_out, hp);
}

} // namespace

TEST_CASE("hand forest explanation: ordering, truncation, confidence") {
    const Forest forest = make_hand_forest();
    const ProximityEngine engine(forest);
    const TrainErrorTable errors = compute_train_errors(forest);

    // Rows 1 and 2 are in-bag everywhere; rows 0 and 3 have OOB errors
    // |1 - 7/3| = 4/3 and |4 - 3| = 1.
    CHECK(errors.never_oob == 2);
    CHECK(errors.valid[0]);
    CHECK_FALSE(errors.valid[1]);
    CHECK(errors.abs_error[0] == doctest::Approx(4.0 / 3.0).epsilon(1e-15));
    CHECK(errors.abs_error[3] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(errors.trainset_mae == doctest::Approx(7.0 / 6.0).epsilon(1e-15));

    const double q[1] = {kQuery};
    const ExplanationReport report = explain(engine, errors, q);

    // Sorted neighbors: (1, 1/2), (0, 1/3), (2, 1/6); threshold 0.95 keeps all.
    REQUIRE(report.neighbors.size() == 3);
    CHECK(report.neighbors[0].train_index == 1);
    CHECK(report.neighbors[0].weight == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(report.neighbors[1].train_index == 0);
    CHECK(report.neighbors[1].weight == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(report.neighbors[2].train_index == 2);
    CHECK(report.neighbors[2].weight == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
    CHECK(report.prediction == doctest::Approx(11.0 / 6.0).epsilon(1e-15));
    CHECK(std::abs(report.contribution_sum - report.prediction) <= 1e-12);
    for (const auto& nb : report.neighbors)
        CHECK(nb.contribution == nb.weight * nb.label);

    // Neighbors 1 and 2 are both never-OOB, so only row 0 carries error
    // weight after renormalization: weighted_mae = 4/3 exactly.
    REQUIRE(report.confidence.weighted_mae_valid);
    CHECK(report.confidence.weighted_mae == doctest::Approx(4.0 / 3.0).epsilon(1e-12));
    CHECK(report.confidence.excluded_neighbors == 2);
    CHECK(report.confidence.excluded_weight ==
          doctest::Approx(0.5 + 1.0 / 6.0).epsilon(1e-15));
    CHECK(report.confidence.ratio ==
          doctest::Approx((4.0 / 3.0) / (7.0 / 6.0)).epsilon(1e-12));

    // A 0.5 threshold keeps only the heaviest neighbor.
    const ExplanationReport tight = explain(engine, errors, q, std::nullopt, 0.5);
    REQUIRE(tight.neighbors.size() == 1);
    CHECK(tight.neighbors[0].train_index == 1);

    CHECK_THROWS_AS(explain(engine, errors, q, std::nullopt, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(explain(engine, errors, q, std::nullopt, 1.5), std::invalid_argument);
}

TEST_CASE("curve increments are nonincreasing and cumulative ends at one") {
    SyntheticConfig cfg;
    cfg.n_rows = 250;
    cfg.seed = 31;
    const Dataset ds = generate_synthetic(cfg);
    Hyperparams hp;
    hp.n_estimators = 30;
    hp.seed = 3;
    const Forest forest = Forest::fit(ds, hp);
    const ProximityEngine engine(forest);
    const TrainErrorTable errors = compute_train_errors(forest);

    SyntheticConfig qcfg = cfg;
    qcfg.n_rows = 8;
    qcfg.seed = 77;
    const Dataset queries = generate_synthetic(qcfg);
    for (std::size_t i = 0; i < queries.n_rows(); ++i) {
        const ExplanationReport report =
            explain(engine, errors, queries.features.row(i), std::nullopt, 0.95, 0,
                    static_cast<std::int64_t>(i));
        const auto& curve = report.curve;
        REQUIRE(curve.weights.size() == report.total_nonzero);
        for (std::size_t k = 1; k < curve.weights.size(); ++k) {
            CHECK(curve.weights[k] <= curve.weights[k - 1]);
            CHECK(curve.cumulative[k] >= curve.cumulative[k - 1]);
        }
        CHECK(std::abs(curve.cumulative.back() - 1.0) <= 1e-12);
        CHECK(std::abs(report.contribution_sum - report.prediction) <= 1e-9);
        // Convex combination: weighted error lies within the neighbor range.
        double lo = 1e300, hi = -1e300;
        for (const auto& nb : report.neighbors) {
            if (!nb.error_valid) continue;
            lo = std::min(lo, nb.train_abs_error);
            hi = std::max(hi, nb.train_abs_error);
        }
        CHECK(report.confidence.weighted_mae >= lo - 1e-12);
        CHECK(report.confidence.weighted_mae <= hi + 1e-12);
    }
}

TEST_CASE("neighbors_needed prefix counts") {
    SUBCASE("hand-checked weights (0.6, 0.3, 0.1)") {
        CumulativeWeightCurve curve;
        curve.weights = {0.6, 0.3, 0.1};
        curve.cumulative = {0.6, 0.9, 1.0};
        CHECK(curve.count_for(0.8) == 2);
        CHECK(curve.count_for(0.9) == 2);
        CHECK(curve.count_for(0.95) == 3);
        CHECK(curve.count_for(1.0) == 3);
    }
    SUBCASE("uniform rows need ceil(tau * n)") {
        const std::size_t n = 7;
        CumulativeWeightCurve curve;
        for (std::size_t k = 0; k < n; ++k) {
            curve.weights.push_back(1.0 / static_cast<double>(n));
            curve.cumulative.push_back(static_cast<double>(k + 1) / static_cast<double>(n));
        }
        for (const double tau : {0.3, 0.5, 0.8, 0.99}) {
            const auto expected =
                static_cast<std::size_t>(std::ceil(tau * static_cast<double>(n)));
            CHECK(curve.count_for(tau) == expected);
        }
        CHECK(curve.count_for(1.0) == n);
    }
    SUBCASE("threshold 1.0 equals the nonzero count on a real forest") {
        SyntheticConfig cfg;
        cfg.n_rows = 200;
        cfg.seed = 8;
        const Dataset ds = generate_synthetic(cfg);
        Hyperparams hp;
        hp.n_estimators = 20;
        hp.seed = 4;
        const Forest forest = Forest::fit(ds, hp);
        const ProximityEngine engine(forest);
        SyntheticConfig qcfg = cfg;
        qcfg.n_rows = 6;
        qcfg.seed = 9;
        const Dataset queries = generate_synthetic(qcfg);
        const NeighborsNeededTable table = neighbors_needed(engine, queries.features);
        REQUIRE(table.thresholds.back() == 1.0);
        for (std::size_t i = 0; i < queries.n_rows(); ++i) {
            const ProximityRow row = engine.gap_row(queries.features.row(i));
            CHECK(table.counts[i].back() == row.entries.size());
        }
    }
}

TEST_CASE("pearson correlation handles degenerate inputs") {
    CHECK(pearson({1, 2, 3}, {2, 4, 6}).value() == doctest::Approx(1.0));
    CHECK(pearson({1, 2, 3}, {6, 4, 2}).value() == doctest::Approx(-1.0));
    CHECK_FALSE(pearson({1, 1, 1}, {2, 4, 6}).has_value()); // undefined, not 0
    CHECK_FALSE(pearson({1}, {2}).has_value());
}

TEST_CASE("confidence_vs_error: exact linearity and degenerate flags") {
    // Small forest; we mostly exercise the decile bookkeeping here.
    SyntheticConfig cfg;
    cfg.n_rows = 120;
    cfg.seed = 55;
    const Dataset ds = generate_synthetic(cfg);
    Hyperparams hp;
    hp.n_estimators = 25;
    hp.seed = 2;
    const Forest forest = Forest::fit(ds, hp);
    const ProximityEngine engine(forest);
    const TrainErrorTable errors = compute_train_errors(forest);

    SyntheticConfig qcfg = cfg;
    qcfg.n_rows = 23;
    qcfg.seed = 66;
    const Dataset queries = generate_synthetic(qcfg);
    const ConfidenceVsErrorTable table =
        confidence_vs_error(engine, errors, queries.features, queries.target, 10);

    // 23 points over 10 deciles: the three leading bins take the remainder.
    CHECK(table.decile_size[0] == 3);
    CHECK(table.decile_size[1] == 3);
    CHECK(table.decile_size[2] == 3);
    for (std::size_t k = 3; k < 10; ++k) CHECK(table.decile_size[k] == 2);

    // Deciles are ordered by weighted error.
    for (std::size_t k = 1; k < 10; ++k)
        CHECK(table.decile_mean_weighted_mae[k] >= table.decile_mean_weighted_mae[k - 1]);

    CHECK(table.pearson_per_point.has_value());
    CHECK_THROWS_AS(
        confidence_vs_error(engine, errors, queries.features, queries.target, 24),
        std::invalid_argument);

    SUBCASE("perfectly linear pairs give correlation 1") {
        std::vector<double> c{1, 2, 3, 4, 5}, twice{2, 4, 6, 8, 10};
        CHECK(pearson(c, twice).value() == doctest::Approx(1.0));
    }
}

TEST_CASE("heteroscedastic data: top confidence decile has larger test error") {
    Dataset train, test;
    const Forest forest = heteroscedastic_forest(train, test, 1500, 300, 60);
    const ProximityEngine engine(forest);
    const TrainErrorTable errors = compute_train_errors(forest);
    const ConfidenceVsErrorTable table =
        confidence_vs_error(engine, errors, test.features, test.target, 10);
    CHECK(table.decile_mean_abs_error.back() > table.decile_mean_abs_error.front());
    REQUIRE(table.pearson_per_point.has_value());
    CHECK(*table.pearson_per_point > 0.0);
    REQUIRE(table.pearson_decile_means.has_value());
    CHECK(*table.pearson_decile_means > *table.pearson_per_point);
}

TEST_CASE("explanations reject classification forests") {
    const std::size_t n = 40;
    Dataset ds;
    ds.features = Matrix(n, 1);
    ds.target.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        ds.features(i, 0) = static_cast<double>(i);
        ds.target[i] = static_cast<double>(i % 2);
    }
    Hyperparams hp;
    hp.n_estimators = 5;
    const Forest forest = Forest::fit(ds, hp, Task::classification);
    CHECK_THROWS_AS(compute_train_errors(forest), std::invalid_argument);
}

TEST_CASE("in-bag error source is available as a comparison toggle") {
    SyntheticConfig cfg;
    cfg.n_rows = 100;
    cfg.seed = 12;
    const Dataset ds = generate_synthetic(cfg);
    Hyperparams hp;
    hp.n_estimators = 30;
    hp.seed = 21;
    const Forest forest = Forest::fit(ds, hp);
    const TrainErrorTable oob = compute_train_errors(forest, TrainErrorSource::oob);
    const TrainErrorTable in_bag = compute_train_errors(forest, TrainErrorSource::in_bag);
    CHECK(in_bag.never_oob == 0);
    // In-bag fitted values are optimistically biased.
    CHECK(in_bag.trainset_mae < oob.trainset_mae);
}
