#pragma once

#include "mortsurf/errors.hpp"
#include "mortsurf/solver.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace mortsurf {

/// Coefficient draws from N(theta_hat, V) with V the inverse penalized normal
/// matrix of the fit.
struct BootstrapDraws {
    Eigen::MatrixXd draws; // B x coefficient count, one draw per row
    Eigen::VectorXd theta_hat;
    std::uint64_t seed = 0;
    int B = 0;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

} // namespace detail

/// Map a standard-normal vector z to a coefficient draw theta_hat + L^{-T} z,
/// where L L' is the penalized normal matrix, so draws have covariance V.
inline Eigen::VectorXd coefficient_draw(const FitResult& fit, const Eigen::VectorXd& z) {
    if (fit.penalized_normal_factor.rows() != z.size())
        throw std::invalid_argument("coefficient_draw: z length does not match the factorization");
    return fit.theta + fit.penalized_normal_factor.transpose()
                           .triangularView<Eigen::Upper>()
                           .solve(z);
}

/// Parametric bootstrap draws. Each draw uses its own RNG substream derived
/// from (seed, draw index), so results do not depend on the worker count.
inline BootstrapDraws sample_coefficients(const FitResult& fit, int B, std::uint64_t seed,
                                          int workers = 1) {
    if (!fit.converged || fit.penalized_normal_factor.size() == 0)
        throw NumericError("sample_coefficients: fit has no usable factorization");
    const Eigen::Index k = fit.theta.size();
    BootstrapDraws out;
    out.B = B;
    out.seed = seed;
    out.theta_hat = fit.theta;
    out.draws.resize(B, k);
    detail::parallel_for(B, workers, [&](Eigen::Index b) {
        std::mt19937_64 rng(detail::splitmix64(seed ^ (0x5851f42d4c957f2dull *
                                                       static_cast<std::uint64_t>(b + 1))));
        std::normal_distribution<double> normal;
        Eigen::VectorXd z(k);
        for (Eigen::Index i = 0; i < k; ++i) z[i] = normal(rng);
        out.draws.row(b) = coefficient_draw(fit, z).transpose();
    });
    return out;
}

struct Interval {
    double lo = 0.0, hi = 0.0, point = 0.0;
    int excluded = 0;
};

namespace detail {

/// Equal-tailed empirical quantile at the p(B+1) plotting position with
/// linear interpolation between order statistics; at B = 1000 and level 0.95
/// the bounds sit between the 25th/26th and 975th/976th order statistics.
inline double empirical_quantile(const std::vector<double>& sorted, double p) {
    const auto b = static_cast<double>(sorted.size());
    const double h = std::clamp(p * (b + 1.0), 1.0, b);
    const auto idx = static_cast<std::size_t>(std::floor(h));
    const double frac = h - std::floor(h);
    const double lower = sorted[idx - 1];
    const double upper = sorted[std::min<std::size_t>(idx, sorted.size() - 1)];
    return lower + frac * (upper - lower);
}

} // namespace detail

/// Equal-tailed bootstrap interval for a scalar summary of the coefficients.
/// Non-finite summaries are dropped; more than 1% of them is an error.
inline Interval interval(const std::function<double(const Eigen::VectorXd&)>& summary,
                         const BootstrapDraws& draws, double level) {
    if (!(level > 0 && level < 1)) throw std::invalid_argument("interval: level must be in (0,1)");
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(draws.B));
    int excluded = 0;
    for (int b = 0; b < draws.B; ++b) {
        const double v = summary(draws.draws.row(b).transpose());
        if (std::isfinite(v))
            values.push_back(v);
        else
            ++excluded;
    }
    if (values.empty() || excluded > 0.01 * draws.B)
        throw NumericError("interval: more than 1% of bootstrap summaries were non-finite (" +
                           std::to_string(excluded) + " of " + std::to_string(draws.B) + ")");
    std::sort(values.begin(), values.end());
    Interval out;
    out.excluded = excluded;
    out.point = summary(draws.theta_hat);
    out.lo = detail::empirical_quantile(values, (1.0 - level) / 2.0);
    out.hi = detail::empirical_quantile(values, (1.0 + level) / 2.0);
    return out;
}

enum class Significance { below, overlap, above };

inline const char* to_string(Significance s) {
    switch (s) {
        case Significance::below: return "below";
        case Significance::above: return "above";
        default: return "overlap";
    }
}

/// Overlap rule against a reference interval: an area is "below" only if its
/// whole interval sits under the reference, "above" only if it sits over it.
inline Significance classify_significance(double lo, double hi, double ref_lo, double ref_hi) {
    if (lo > hi || ref_lo > ref_hi)
        throw std::invalid_argument("classify_significance: invalid interval");
    if (hi < ref_lo) return Significance::below;
    if (lo > ref_hi) return Significance::above;
    return Significance::overlap;
}

inline std::vector<Significance> classify_significance(
    const std::vector<std::pair<double, double>>& area_intervals,
    std::pair<double, double> reference) {
    std::vector<Significance> out;
    out.reserve(area_intervals.size());
    for (const auto& [lo, hi] : area_intervals)
        out.push_back(classify_significance(lo, hi, reference.first, reference.second));
    return out;
}

} // namespace mortsurf
