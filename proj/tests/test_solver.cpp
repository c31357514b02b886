#include "mortsurf/solver.hpp"

#include "mortsurf/simulate.hpp"
#include "support/dense_oracle.hpp"
#include "support/test_util.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

using namespace mortsurf;

namespace {

struct Problem {
    AugmentedArray augmented;
    BasisSet basis;
    PenaltyConfig penalty;
};

Problem toy_problem(Eigen::Index m, Eigen::Index n, Eigen::Index l, std::uint64_t seed,
                    int first_age = 0, int n_shock = 0) {
    Problem p;
    MortalityArray data = testutil::toy_data(m, n, l, seed, first_age);
    p.augmented = augment_with_totals(data);
    p.basis = build_basis_set(data, testutil::tiny_basis_config(2, n_shock));
    p.penalty.lambda_a = 2.0;
    p.penalty.lambda_t = 1.0;
    p.penalty.lambda_lon = 1.5;
    p.penalty.lambda_lat = 1.5;
    p.penalty.lambda_a_reduced = 1.0;
    p.penalty.lambda_t_reduced = 0.0;
    p.penalty.kappa = 2.0;
    return p;
}

} // namespace

TEST_CASE("a single-cell fit recovers the Poisson rate") {
    BlockDesign design;
    design.Ba = Eigen::MatrixXd::Ones(1, 1);
    design.Bt = Eigen::MatrixXd::Ones(1, 1);
    design.dims.m = 1;
    design.dims.l = 1;
    design.spatial = false;
    Array3 y(1, 1, 1), e(1, 1, 1);
    y(0, 0, 0) = 3.0;
    e(0, 0, 0) = 10.0;
    IterationControls tight;
    tight.tol_theta = 1e-10;
    tight.tol_deviance = 1e-16;
    tight.tol_deviance_absolute = 1e-16;
    FitResult fit = detail::fit_impl(design, y, e, Eigen::MatrixXd::Zero(1, 1), tight);
    CHECK(fit.converged);
    CHECK_THAT(fit.theta[0], Catch::Matchers::WithinAbs(std::log(0.3), 1e-7));
    CHECK_THAT(fit.eta_totals(0, 0), Catch::Matchers::WithinAbs(std::log(0.3), 1e-7));
    CHECK(fit.deviance < 1e-10);
}

TEST_CASE("all-zero counts shrink towards zero mortality and zero gamma") {
    Problem p = toy_problem(6, 4, 4, 17);
    p.augmented.base.deaths.vec().setZero();
    p.augmented.totals_deaths.setZero();
    p.penalty.lambda_a = p.penalty.lambda_t = 1e3;
    p.penalty.lambda_lon = p.penalty.lambda_lat = p.penalty.lambda_a_reduced = 1e3;
    p.penalty.kappa = 100.0;
    IterationControls controls;
    controls.max_iterations = 80;
    controls.tol_deviance_absolute = 1e-6;
    FitResult fit = mortsurf::fit(p.augmented, p.basis, p.penalty, controls);
    CHECK(fit.converged);
    CHECK(fit.eta_hat.vec().maxCoeff() < std::log(1e-7));
    CHECK(fit.gamma().cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("fit matches a dense-matrix IRWLS oracle") {
    Problem p = toy_problem(5, 6, 4, 23, 0, 1);
    IterationControls controls;
    controls.tol_theta = 1e-10;
    controls.tol_deviance = 1e-15;
    controls.tol_deviance_absolute = 1e-15;
    controls.max_iterations = 200;
    FitResult fit = mortsurf::fit(p.augmented, p.basis, p.penalty, controls);

    const BlockDesign design = BlockDesign::from_basis(p.basis);
    const Eigen::MatrixXd x = oracle::dense_design(design);
    const Eigen::MatrixXd penalty = assemble_penalty(p.penalty, p.basis);
    const Array3 y = detail::stack_observed(p.augmented, true);
    const Array3 e = detail::stack_observed(p.augmented, false);
    oracle::DenseIrwlsResult ref = oracle::dense_irwls(
        x, y.vec(), e.vec(), penalty, Eigen::VectorXd::Zero(x.cols()));

    CHECK((fit.theta - ref.theta).cwiseAbs().maxCoeff() < 1e-6);

    // stationarity of the penalized likelihood at convergence
    const Eigen::VectorXd mu_e = (x * fit.theta).array().exp() * e.vec().array();
    const Eigen::VectorXd score = x.transpose() * (y.vec() - mu_e) - penalty * fit.theta;
    const double scale = (x.transpose() * y.vec()).cwiseAbs().maxCoeff();
    CHECK(score.cwiseAbs().maxCoeff() < 1e-4 * scale);
}

TEST_CASE("penalized deviance is monotone after the first step") {
    Problem p = toy_problem(6, 5, 4, 29);
    FitResult fit = mortsurf::fit(p.augmented, p.basis, p.penalty, {});
    REQUIRE(fit.penalized_deviance_trace.size() >= 3);
    for (std::size_t i = 2; i < fit.penalized_deviance_trace.size(); ++i)
        CHECK(fit.penalized_deviance_trace[i] <=
              fit.penalized_deviance_trace[i - 1] +
                  1e-8 * (1.0 + std::abs(fit.penalized_deviance_trace[i - 1])));
}

TEST_CASE("scaling exposures shifts eta and leaves fitted deaths unchanged") {
    Problem p = toy_problem(6, 4, 5, 31, 1); // ages from 1: no indicator columns
    IterationControls controls;
    controls.tol_theta = 1e-10;
    controls.tol_deviance = 1e-15;
    controls.max_iterations = 200;
    FitResult base = mortsurf::fit(p.augmented, p.basis, p.penalty, controls);

    Problem scaled = p;
    const double c = 5.0;
    scaled.augmented.base.exposures.vec() *= c;
    scaled.augmented.totals_exposures *= c;
    FitResult shifted = mortsurf::fit(scaled.augmented, p.basis, p.penalty, controls);

    const Eigen::VectorXd eta_diff = shifted.eta_hat.vec() - base.eta_hat.vec();
    CHECK((eta_diff.array() + std::log(c)).abs().maxCoeff() < 1e-7);

    const Eigen::VectorXd fitted_base =
        base.eta_hat.vec().array().exp() * p.augmented.base.exposures.vec().array();
    const Eigen::VectorXd fitted_shifted =
        shifted.eta_hat.vec().array().exp() * scaled.augmented.base.exposures.vec().array();
    CHECK((fitted_base - fitted_shifted).cwiseAbs().maxCoeff() < 1e-8 * (1.0 + fitted_base.cwiseAbs().maxCoeff()));
}

TEST_CASE("summed area fits track the totals-row fit") {
    Scenario sc;
    sc.m = 8;
    sc.n = 12;
    sc.l = 4;
    sc.mean_exposure = 1000.0;
    sc.gompertz_log_level = -4.5;
    sc.gompertz_slope = 0.15;
    sc.infant_log_rate = -4.0;
    sc.trend_slope = -0.01;
    sc.seed = 7;
    auto [data, truth] = generate(sc);
    AugmentedArray augmented = augment_with_totals(data);
    BasisConfig config = testutil::tiny_basis_config(2);
    config.c_t = 3;
    config.c_t_reduced = 3;
    BasisSet basis = build_basis_set(data, config);
    PenaltyConfig penalty;
    FitResult fit = mortsurf::fit(augmented, basis, penalty, {});

    for (Eigen::Index k = 0; k < data.l(); ++k) {
        double sum_areas = 0.0, sum_totals = 0.0;
        for (Eigen::Index i = 0; i < data.m(); ++i) {
            sum_totals += std::exp(fit.eta_totals(i, k)) * augmented.totals_exposures(i, k);
            for (Eigen::Index j = 0; j < data.n(); ++j)
                sum_areas += std::exp(fit.eta_hat(i, j, k)) * data.exposures(i, j, k);
        }
        CHECK_THAT(sum_areas, Catch::Matchers::WithinRel(sum_totals, 0.03));
    }
}

TEST_CASE("hqic formula") {
    SECTION("ln ln of e^e is one") {
        CHECK_THAT(hqic(100.0, 10.0, std::exp(std::exp(1.0))),
                   Catch::Matchers::WithinAbs(120.0, 1e-12));
    }
    SECTION("zero effective dimension returns the deviance") {
        CHECK(hqic(57.5, 0.0, 1000) == 57.5);
    }
    SECTION("London-sized sample") {
        CHECK_THAT(hqic(5000.0, 200.0, 10'073'609.0),
                   Catch::Matchers::WithinAbs(6112.1, 0.1));
    }
    SECTION("matches independent evaluation on random tuples") {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> unif(1.0, 1e6);
        for (int rep = 0; rep < 5; ++rep) {
            const double dev = unif(rng), ed = unif(rng) / 1e3, n = unif(rng) + 3;
            const double expected = dev + 2.0 * std::log(std::log(n)) * ed;
            CHECK_THAT(hqic(dev, ed, n), Catch::Matchers::WithinRel(expected, 1e-12));
        }
    }
    SECTION("tiny samples are rejected") { CHECK_THROWS(hqic(1.0, 1.0, 2)); }
}

TEST_CASE("grid search bookkeeping") {
    Problem p = toy_problem(6, 4, 4, 37);
    SearchGrids grids;
    grids.lambda_a = {1.0};
    grids.lambda_t = {0.5};
    grids.lambda_lon = {1.0};
    grids.lambda_lat = {2.0};
    grids.lambda_a_reduced = {1.0};
    grids.kappa = {1.0, 10.0};

    GridSearchResult result = grid_search(p.augmented, p.basis, grids);
    CHECK(result.stage1.size() == 1);
    CHECK(result.stage2.size() == 2);
    CHECK(result.best.lambda_a == 1.0);
    CHECK(result.best.lambda_t == 0.5);
    CHECK(result.best.lambda_t_reduced == 0.0);
    for (const auto& pt : result.stage2) CHECK(pt.status == "ok");

    SECTION("stage-2 row count is the grid-size product") {
        grids.lambda_lon = {0.5, 5.0};
        grids.lambda_a_reduced = {0.5, 5.0};
        GridSearchResult bigger = grid_search(p.augmented, p.basis, grids, {}, 3);
        CHECK(bigger.stage2.size() == 2 * 1 * 2 * 2);
    }
    SECTION("results do not depend on the worker count") {
        GridSearchResult serial = grid_search(p.augmented, p.basis, grids, {}, 1);
        GridSearchResult parallel = grid_search(p.augmented, p.basis, grids, {}, 4);
        REQUIRE(serial.stage2.size() == parallel.stage2.size());
        for (std::size_t i = 0; i < serial.stage2.size(); ++i)
            CHECK(serial.stage2[i].hqic == parallel.stage2[i].hqic);
    }
    SECTION("empty grids are rejected") {
        grids.kappa.clear();
        CHECK_THROWS(grid_search(p.augmented, p.basis, grids));
    }
}

TEST_CASE("heavier age smoothing wins on a smooth truth") {
    Scenario sc;
    sc.m = 12;
    sc.n = 6;
    sc.l = 8;
    sc.mean_exposure = 2000.0;
    sc.gompertz_log_level = -6.0;
    sc.gompertz_slope = 0.25;
    sc.infant_log_rate = -4.5;
    sc.trend_slope = -0.015;
    sc.spatial_amplitude = 0.0;
    sc.seed = 11;
    auto [data, truth] = generate(sc);
    AugmentedArray augmented = augment_with_totals(data);
    BasisConfig config;
    config.c_a = 6;
    config.c_a_reduced = 4;
    config.c_t = 5;
    config.c_t_reduced = 4;
    config.c_lon = config.c_lat = 4;
    BasisSet basis = build_basis_set(data, config);

    SearchGrids grids;
    grids.lambda_a = {0.01, 1e5};
    grids.lambda_t = {1.0};
    grids.lambda_lon = {1.0};
    grids.lambda_lat = {1.0};
    grids.lambda_a_reduced = {1.0};
    grids.kappa = {1.0};
    GridSearchResult result = grid_search(augmented, basis, grids);
    CHECK(result.best.lambda_a == 1e5);
}

TEST_CASE("non-convergence carries the iteration trace") {
    Problem p = toy_problem(6, 4, 4, 41);
    IterationControls controls;
    controls.max_iterations = 1;
    controls.tol_theta = 1e-14;
    controls.tol_deviance = 1e-16;
    controls.tol_deviance_absolute = 0.0;
    REQUIRE_THROWS_WITH(mortsurf::fit(p.augmented, p.basis, p.penalty, controls),
                        Catch::Matchers::ContainsSubstring("did not converge") &&
                            Catch::Matchers::ContainsSubstring("trace"));
}

TEST_CASE("unrepaired data is rejected") {
    Problem p = toy_problem(5, 3, 3, 43);
    p.augmented.base.deaths(0, 0, 0) = 4.0;
    p.augmented.base.exposures(0, 0, 0) = 0.0;
    REQUIRE_THROWS_WITH(mortsurf::fit(p.augmented, p.basis, p.penalty, {}),
                        Catch::Matchers::ContainsSubstring("repaired"));
}

TEST_CASE("totals rows can be excluded from the information criterion") {
    Problem p = toy_problem(6, 4, 4, 47);
    IterationControls with_totals, without;
    without.include_totals_in_ic = false;
    FitResult a = mortsurf::fit(p.augmented, p.basis, p.penalty, with_totals);
    FitResult b = mortsurf::fit(p.augmented, p.basis, p.penalty, without);
    CHECK(a.hqic != b.hqic);
    CHECK(std::isfinite(b.hqic));
    CHECK(a.deviance == b.deviance); // reported deviance always covers all rows
}

TEST_CASE("validate_aggregation compares model and direct life expectancy") {
    MortalityArray data = testutil::toy_data(8, 6, 3, 53, 0, 400.0);
    data.deaths.vec() = data.deaths.vec().cwiseMax(1.0); // keep every rate positive

    FitResult saturated;
    saturated.eta_hat = data.deaths;
    saturated.eta_hat.vec() =
        (data.deaths.vec().array() / data.exposures.vec().array()).log();

    SECTION("identity grouping on a saturated fit gives identical series") {
        std::map<std::string, std::string> identity;
        for (const auto& id : data.area_ids) identity[id] = id;
        auto rows = validate_aggregation(saturated, data, identity);
        REQUIRE(rows.size() == static_cast<std::size_t>(data.n() * data.l()));
        for (const auto& row : rows)
            CHECK_THAT(row.e0_model, Catch::Matchers::WithinAbs(row.e0_direct, 1e-9));
    }
    SECTION("grouping all areas matches the exposure-weighted mean rates") {
        std::map<std::string, std::string> all;
        for (const auto& id : data.area_ids) all[id] = "g";
        auto rows = validate_aggregation(saturated, data, all);
        REQUIRE(rows.size() == static_cast<std::size_t>(data.l()));
        for (Eigen::Index k = 0; k < data.l(); ++k) {
            Eigen::VectorXd rates(data.m());
            for (Eigen::Index i = 0; i < data.m(); ++i) {
                double fitted = 0, expo = 0;
                for (Eigen::Index j = 0; j < data.n(); ++j) {
                    fitted += std::exp(saturated.eta_hat(i, j, k)) * data.exposures(i, j, k);
                    expo += data.exposures(i, j, k);
                }
                rates[i] = fitted / expo;
            }
            CHECK_THAT(rows[static_cast<std::size_t>(k)].e0_model,
                       Catch::Matchers::WithinAbs(life_table(rates, data.ages).e0, 1e-12));
        }
    }
}

TEST_CASE("aggregated model life expectancy stays close to direct estimates") {
    Scenario sc;
    sc.m = 15;
    sc.n = 20;
    sc.l = 4;
    sc.mean_exposure = 350.0;
    sc.gompertz_log_level = -5.5;
    sc.gompertz_slope = 0.3;
    sc.infant_log_rate = -5.0;
    sc.trend_slope = -0.01;
    sc.spatial_amplitude = 0.15;
    sc.seed = 19;
    auto [data, truth] = generate(sc);
    AugmentedArray augmented = augment_with_totals(data);
    BasisConfig config;
    config.c_a = 7;
    config.c_a_reduced = 5;
    config.c_t = 4;
    config.c_t_reduced = 4;
    config.c_lon = config.c_lat = 4;
    BasisSet basis = build_basis_set(data, config);
    PenaltyConfig penalty;
    penalty.kappa = 5.0;
    FitResult fit = mortsurf::fit(augmented, basis, penalty, {});

    std::map<std::string, std::string> grouping; // groups of ten areas
    for (std::size_t j = 0; j < data.area_ids.size(); ++j)
        grouping[data.area_ids[j]] = j < 10 ? "g0" : "g1";
    auto rows = validate_aggregation(fit, data, grouping);
    for (const auto& row : rows)
        CHECK(std::abs(row.e0_model - row.e0_direct) < 1.5);
}
