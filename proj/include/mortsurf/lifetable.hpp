#pragma once

#include "mortsurf/array3.hpp"
#include "mortsurf/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace mortsurf {

/// Average fraction of the interval lived by those dying in it. The open
/// interval is closed out with L = l / m.
struct LifeTableConventions {
    double a0 = 0.1; // infants die early in the first year
    double ax = 0.5;
};

struct LifeTableRow {
    int age;
    double mx, qx, lx, Lx, Tx, ex;
};

struct LifeTableResult {
    double e0 = 0.0;
    std::vector<LifeTableRow> columns;
    int open_age = 0;
};

/// Period life table from single-year age-specific mortality rates. The last
/// rate belongs to the open age interval and must be positive.
inline LifeTableResult life_table(const Eigen::VectorXd& rates, const std::vector<int>& ages,
                                  const LifeTableConventions& conv = {}) {
    const auto m = static_cast<Eigen::Index>(ages.size());
    if (rates.size() != m || m < 2)
        throw std::invalid_argument("life_table: need rates for at least two ages");
    if (!rates.allFinite() || rates.minCoeff() < 0)
        throw std::invalid_argument("life_table: rates must be finite and non-negative");
    if (!(rates[m - 1] > 0))
        throw NumericError("undefined open-interval survival: open-age rate is not positive");

    LifeTableResult out;
    out.open_age = ages.back();
    out.columns.resize(static_cast<std::size_t>(m));

    double lx = 1.0;
    for (Eigen::Index i = 0; i < m; ++i) {
        auto& row = out.columns[static_cast<std::size_t>(i)];
        row.age = ages[static_cast<std::size_t>(i)];
        row.mx = rates[i];
        row.lx = lx;
        if (i + 1 < m) {
            const double a = (row.age == 0) ? conv.a0 : conv.ax;
            row.qx = std::min(1.0, row.mx / (1.0 + (1.0 - a) * row.mx));
            const double dx = lx * row.qx;
            row.Lx = lx - (1.0 - a) * dx;
            lx -= dx;
        } else {
            row.qx = 1.0;
            row.Lx = lx / row.mx;
        }
    }
    double tx = 0.0;
    for (Eigen::Index i = m - 1; i >= 0; --i) {
        auto& row = out.columns[static_cast<std::size_t>(i)];
        tx += row.Lx;
        row.Tx = tx;
        row.ex = row.lx > 0 ? row.Tx / row.lx : 0.0;
    }
    out.e0 = out.columns.front().ex;
    return out;
}

/// Life expectancy at birth for every (area, year) of a fitted or raw
/// log-mortality array.
inline Eigen::MatrixXd e0_surface(const Array3& eta, const std::vector<int>& ages,
                                  const std::vector<std::string>& area_ids,
                                  const std::vector<int>& years,
                                  const LifeTableConventions& conv = {}) {
    const Eigen::Index m = eta.dim0(), n = eta.dim1(), l = eta.dim2();
    Eigen::MatrixXd out(n, l);
    Eigen::VectorXd rates(m);
    for (Eigen::Index k = 0; k < l; ++k)
        for (Eigen::Index j = 0; j < n; ++j) {
            for (Eigen::Index i = 0; i < m; ++i) rates[i] = std::exp(eta(i, j, k));
            try {
                out(j, k) = life_table(rates, ages, conv).e0;
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " (area_id=" +
                                   area_ids[static_cast<std::size_t>(j)] + ", year=" +
                                   std::to_string(years[static_cast<std::size_t>(k)]) + ")");
            }
        }
    return out;
}

/// Index of dissimilarity at one (age, year): half the summed absolute gap
/// between each area's share of deaths and its share of exposure.
inline double dissimilarity_index(const Array3& fitted_deaths, const Array3& exposures,
                                  Eigen::Index age, Eigen::Index year) {
    if (!fitted_deaths.same_shape(exposures))
        throw std::invalid_argument("dissimilarity_index: shape mismatch");
    if (age < 0 || age >= fitted_deaths.dim0() || year < 0 || year >= fitted_deaths.dim2())
        throw std::invalid_argument("dissimilarity_index: age or year index out of range");
    const Eigen::Index n = fitted_deaths.dim1();
    double dsum = 0.0, esum = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        dsum += fitted_deaths(age, j, year);
        esum += exposures(age, j, year);
    }
    if (!(dsum > 0) || !(esum > 0))
        throw NumericError("dissimilarity_index: zero death or exposure total at the requested "
                           "(age, year)");
    double id = 0.0;
    for (Eigen::Index j = 0; j < n; ++j)
        id += std::abs(fitted_deaths(age, j, year) / dsum - exposures(age, j, year) / esum);
    return 0.5 * id;
}

} // namespace mortsurf
