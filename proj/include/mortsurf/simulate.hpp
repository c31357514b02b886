#pragma once

#include "mortsurf/data.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace mortsurf {

/// Synthetic age-space-time mortality scenario with known truth. The truth
/// surface is built from closed-form curves (Gompertz age schedule, linear
/// trend, sinusoidal spatial field), not from splines, so recovery tests do
/// not share structure with the estimator.
struct Scenario {
    Eigen::Index m = 20, n = 25, l = 8;
    double mean_exposure = 300.0;
    double exposure_cv = 0.3;

    double infant_log_rate = -5.5;   // log hazard at age 0
    double gompertz_log_level = -7.0; // log hazard at age 1
    double gompertz_slope = 0.1;      // per year of age
    double trend_slope = -0.01;       // per calendar year, centered
    double spatial_amplitude = 0.0;   // scales a smooth field over the unit square
    std::vector<std::pair<Eigen::Index, double>> gamma_outliers; // (area index, log increment)
    std::vector<std::pair<int, double>> shocks;                  // (year, log increment)

    int first_year = 2010;
    std::uint64_t seed = 1;
    std::string sex = "female";
};

namespace detail {

inline double scenario_eta(const Scenario& sc, Eigen::Index age, double xs, double ys,
                           double gamma_j, Eigen::Index k) {
    double eta = age == 0 ? sc.infant_log_rate
                          : sc.gompertz_log_level + sc.gompertz_slope * static_cast<double>(age - 1);
    eta += sc.trend_slope * (static_cast<double>(k) - 0.5 * static_cast<double>(sc.l - 1));
    eta += sc.spatial_amplitude * std::sin(std::acos(-1.0) * xs) *
           std::cos(std::acos(-1.0) * ys);
    eta += gamma_j;
    for (const auto& [year, inc] : sc.shocks)
        if (sc.first_year + static_cast<int>(k) == year) eta += inc;
    return std::min(eta, std::log(1.5)); // keep hazards in a plausible range
}

} // namespace detail

/// Draw a synthetic dataset and return it with the true log-mortality array.
inline std::pair<MortalityArray, Array3> generate(const Scenario& sc) {
    std::mt19937_64 rng(sc.seed);
    std::uniform_real_distribution<double> jitter(-0.3, 0.3);

    MortalityArray data;
    data.sex = sc.sex;
    for (Eigen::Index i = 0; i < sc.m; ++i) data.ages.push_back(static_cast<int>(i));
    for (Eigen::Index k = 0; k < sc.l; ++k)
        data.years.push_back(sc.first_year + static_cast<int>(k));

    // Centroids on a jittered grid over the unit square.
    const auto side = static_cast<Eigen::Index>(std::ceil(std::sqrt(static_cast<double>(sc.n))));
    data.centroids.resize(sc.n, 2);
    for (Eigen::Index j = 0; j < sc.n; ++j) {
        char name[24];
        std::snprintf(name, sizeof(name), "A%04lld", static_cast<long long>(j));
        data.area_ids.emplace_back(name);
        const double col = static_cast<double>(j % side), row = static_cast<double>(j / side);
        data.centroids(j, 0) = (col + 0.5 + jitter(rng)) / static_cast<double>(side);
        data.centroids(j, 1) = (row + 0.5 + jitter(rng)) / static_cast<double>(side);
    }

    Eigen::VectorXd gamma = Eigen::VectorXd::Zero(sc.n);
    for (const auto& [j, g] : sc.gamma_outliers) gamma[j] = g;

    // Exposures around the population scale, log-normal with the given cv.
    const double sigma = std::sqrt(std::log(1.0 + sc.exposure_cv * sc.exposure_cv));
    std::lognormal_distribution<double> expo(std::log(sc.mean_exposure) - 0.5 * sigma * sigma,
                                             sigma);

    data.deaths = Array3(sc.m, sc.n, sc.l);
    data.exposures = Array3(sc.m, sc.n, sc.l);
    Array3 truth(sc.m, sc.n, sc.l);
    for (Eigen::Index k = 0; k < sc.l; ++k)
        for (Eigen::Index j = 0; j < sc.n; ++j)
            for (Eigen::Index i = 0; i < sc.m; ++i) {
                const double eta = detail::scenario_eta(sc, i, data.centroids(j, 0),
                                                        data.centroids(j, 1), gamma[j], k);
                truth(i, j, k) = eta;
                const double e = expo(rng);
                data.exposures(i, j, k) = e;
                std::poisson_distribution<long> deaths(std::exp(eta) * e);
                data.deaths(i, j, k) = static_cast<double>(deaths(rng));
            }
    return {std::move(data), std::move(truth)};
}

} // namespace mortsurf
