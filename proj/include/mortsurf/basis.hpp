#pragma once

#include "mortsurf/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace mortsurf {

/// Evaluation matrix of a marginal B-spline basis on equally spaced knots.
struct MarginalBasis {
    Eigen::MatrixXd matrix; // rows = data positions, cols = basis functions
    Eigen::VectorXd knots;  // full knot vector including the end extensions
    int degree = 3;
    Eigen::Index n_basis = 0;
};

/// B-spline basis on equally spaced knots spanning [min, max] of `positions`,
/// with a degree-fold extension at each end. Entries come from the Cox-de Boor
/// recursion; rows sum to one everywhere on [min, max].
inline MarginalBasis bspline_basis(const Eigen::VectorXd& positions, int n_basis, int degree) {
    if (degree < 0) throw std::invalid_argument("bspline_basis: degree must be >= 0");
    if (n_basis < degree + 1)
        throw std::invalid_argument("bspline_basis: n_basis must be at least degree + 1");
    if (positions.size() == 0) throw std::invalid_argument("bspline_basis: no positions");
    if (!positions.allFinite()) throw std::invalid_argument("bspline_basis: non-finite positions");

    const double lo = positions.minCoeff();
    const double hi = positions.maxCoeff();
    if (!(hi > lo)) throw std::invalid_argument("bspline_basis: degenerate position range");

    const int nseg = n_basis - degree;
    const double h = (hi - lo) / nseg;

    MarginalBasis basis;
    basis.degree = degree;
    basis.n_basis = n_basis;
    basis.knots.resize(nseg + 1 + 2 * degree);
    for (Eigen::Index i = 0; i < basis.knots.size(); ++i)
        basis.knots[i] = lo + (static_cast<double>(i) - degree) * h;

    basis.matrix = Eigen::MatrixXd::Zero(positions.size(), n_basis);
    const int order = degree + 1;
    std::vector<double> value(order), left(order), right(order);
    for (Eigen::Index r = 0; r < positions.size(); ++r) {
        const double x = positions[r];
        // Span index within the interior grid; the right endpoint closes the
        // last interval.
        auto seg = static_cast<Eigen::Index>(std::floor((x - lo) / h));
        seg = std::clamp<Eigen::Index>(seg, 0, nseg - 1);
        const Eigen::Index knot = seg + degree; // knots[knot] <= x < knots[knot+1]

        value[0] = 1.0;
        for (int d = 1; d <= degree; ++d) {
            left[d] = x - basis.knots[knot + 1 - d];
            right[d] = basis.knots[knot + d] - x;
            double saved = 0.0;
            for (int j = 0; j < d; ++j) {
                const double tmp = value[j] / (right[j + 1] + left[d - j]);
                value[j] = saved + right[j + 1] * tmp;
                saved = left[d - j] * tmp;
            }
            value[d] = saved;
        }
        for (int j = 0; j <= degree; ++j) basis.matrix(r, seg + j) = value[j];
    }
    return basis;
}

/// Row-wise Kronecker ("box") product: row j of the result is
/// kron(row j of a, row j of b), with b's column index running fastest.
inline Eigen::MatrixXd box_product(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.rows() != b.rows()) throw std::invalid_argument("box_product: row count mismatch");
    Eigen::MatrixXd out(a.rows(), a.cols() * b.cols());
    for (Eigen::Index ca = 0; ca < a.cols(); ++ca)
        for (Eigen::Index cb = 0; cb < b.cols(); ++cb)
            out.col(ca * b.cols() + cb) = a.col(ca).cwiseProduct(b.col(cb));
    return out;
}

struct DifferenceOperator {
    Eigen::MatrixXd matrix; // (c - order) x c
    int order = 2;
};

/// Finite-difference matrix whose rows are successive order-th differences of
/// a coefficient vector of length c.
inline DifferenceOperator difference_matrix(Eigen::Index c, int order) {
    if (order < 1) throw std::invalid_argument("difference_matrix: order must be >= 1");
    if (c <= order) throw std::invalid_argument("difference_matrix: need c > order");
    std::vector<double> coef(static_cast<std::size_t>(order) + 1);
    for (int j = 0; j <= order; ++j) {
        double binom = 1.0;
        for (int t = 0; t < j; ++t) binom = binom * (order - t) / (t + 1);
        coef[static_cast<std::size_t>(j)] = ((order - j) % 2 == 0 ? 1.0 : -1.0) * binom;
    }
    DifferenceOperator d;
    d.order = order;
    d.matrix = Eigen::MatrixXd::Zero(c - order, c);
    for (Eigen::Index r = 0; r < c - order; ++r)
        for (int j = 0; j <= order; ++j) d.matrix(r, r + j) = coef[static_cast<std::size_t>(j)];
    return d;
}

/// Materialized spatial basis over scattered centroids.
struct SpatialBasis {
    Eigen::MatrixXd matrix; // n x (c_lon * c_lat), longitude index fastest
    MarginalBasis lon_basis;
    MarginalBasis lat_basis;
};

inline SpatialBasis spatial_basis(const Eigen::VectorXd& x, const Eigen::VectorXd& y, int c_lon,
                                  int c_lat, int degree) {
    SpatialBasis s;
    s.lon_basis = bspline_basis(x, c_lon, degree);
    s.lat_basis = bspline_basis(y, c_lat, degree);
    s.matrix = box_product(s.lat_basis.matrix, s.lon_basis.matrix);
    return s;
}

/// Marginal basis extended with indicator columns (the age-0 column and/or
/// shock-year columns), appended after the smooth columns.
struct ExtendedBasis {
    Eigen::MatrixXd matrix;
    Eigen::VectorXd knots;
    int degree = 3;
    Eigen::Index n_smooth = 0; // leading smooth B-spline columns
    Eigen::Index n_ext = 0;    // trailing indicator columns
};

struct BasisDims {
    Eigen::Index m = 0, n = 0, l = 0;
    Eigen::Index c_a = 0, c_t = 0, c_lon = 0, c_lat = 0;
    Eigen::Index c_a_reduced = 0, c_t_reduced = 0;
    Eigen::Index n_shock = 0;
    bool infant = false;

    Eigen::Index c_s() const { return c_lon * c_lat; }
    Eigen::Index c_a_ext() const { return c_a + (infant ? 1 : 0); }
    Eigen::Index c_t_ext() const { return c_t + n_shock; }
    Eigen::Index c_a_reduced_ext() const { return c_a_reduced + (infant ? 1 : 0); }
    Eigen::Index c_t_reduced_ext() const { return c_t_reduced + n_shock; }
};

struct BasisConfig {
    int c_a = 21;
    int c_t = 7;
    int c_lon = 11;
    int c_lat = 11;
    int c_a_reduced = 9;
    int c_t_reduced = 5;
    int degree = 3;
    int diff_order = 2;
    std::vector<int> shock_years;
};

/// All bases the model needs: full and reduced age/time bases (with infant and
/// shock indicator columns appended) plus the materialized spatial basis.
struct BasisSet {
    ExtendedBasis Ba;
    ExtendedBasis Bt;
    ExtendedBasis Ba_reduced;
    ExtendedBasis Bt_reduced;
    SpatialBasis Bs;
    std::vector<int> shock_years;
    int diff_order = 2;
    BasisDims dims;
};

namespace detail {

/// Smooth age basis with the age-0 coefficient split off: the smooth columns
/// are built over ages >= 1 (zero in the age-0 row) and an indicator column
/// for age 0 is appended.
inline ExtendedBasis age_basis_with_infant(const Eigen::VectorXd& ages, int n_basis, int degree,
                                           bool infant) {
    ExtendedBasis out;
    out.degree = degree;
    out.n_smooth = n_basis;
    if (!infant) {
        MarginalBasis b = bspline_basis(ages, n_basis, degree);
        out.matrix = std::move(b.matrix);
        out.knots = std::move(b.knots);
        return out;
    }
    const Eigen::Index m = ages.size();
    MarginalBasis b = bspline_basis(ages.tail(m - 1), n_basis, degree);
    out.matrix = Eigen::MatrixXd::Zero(m, n_basis + 1);
    out.matrix.block(1, 0, m - 1, n_basis) = b.matrix;
    out.matrix(0, n_basis) = 1.0;
    out.knots = std::move(b.knots);
    out.n_ext = 1;
    return out;
}

inline ExtendedBasis time_basis_with_shocks(const Eigen::VectorXd& years, int n_basis, int degree,
                                            const std::vector<int>& shock_years) {
    MarginalBasis b = bspline_basis(years, n_basis, degree);
    ExtendedBasis out;
    out.degree = degree;
    out.n_smooth = n_basis;
    out.n_ext = static_cast<Eigen::Index>(shock_years.size());
    out.knots = std::move(b.knots);
    out.matrix = Eigen::MatrixXd::Zero(years.size(), n_basis + out.n_ext);
    out.matrix.leftCols(n_basis) = b.matrix;
    for (std::size_t s = 0; s < shock_years.size(); ++s) {
        Eigen::Index row = -1;
        for (Eigen::Index k = 0; k < years.size(); ++k)
            if (static_cast<int>(years[k]) == shock_years[s]) row = k;
        if (row < 0)
            throw DataError("shock year " + std::to_string(shock_years[s]) +
                            " not present in the data years");
        out.matrix(row, n_basis + static_cast<Eigen::Index>(s)) = 1.0;
    }
    return out;
}

/// The reduced basis is nested in the full one: both span the same range with
/// equally spaced knots, and the full segment count must be a multiple of the
/// reduced segment count so the coarse knots are a subset of the fine ones.
inline void check_nested(int c_full, int c_reduced, int degree, const char* what) {
    const int nseg_full = c_full - degree;
    const int nseg_red = c_reduced - degree;
    if (nseg_red < 1 || nseg_full % nseg_red != 0)
        throw std::invalid_argument(std::string("reduced ") + what + " basis (" +
                                    std::to_string(c_reduced) + " of " + std::to_string(c_full) +
                                    ") is not nested: segment counts must divide evenly");
}

} // namespace detail

/// Build every basis the model uses from the data axes and centroids.
template <typename Data>
BasisSet build_basis_set(const Data& data, const BasisConfig& config) {
    const Eigen::Index m = data.m(), n = data.n(), l = data.l();
    Eigen::VectorXd ages(m), years(l);
    for (Eigen::Index i = 0; i < m; ++i) ages[i] = data.ages[static_cast<std::size_t>(i)];
    for (Eigen::Index k = 0; k < l; ++k) years[k] = data.years[static_cast<std::size_t>(k)];

    const bool infant = m >= 2 && data.ages.front() == 0;
    detail::check_nested(config.c_a, config.c_a_reduced, config.degree, "age");
    detail::check_nested(config.c_t, config.c_t_reduced, config.degree, "time");

    BasisSet set;
    set.shock_years = config.shock_years;
    set.diff_order = config.diff_order;
    set.Ba = detail::age_basis_with_infant(ages, config.c_a, config.degree, infant);
    set.Ba_reduced = detail::age_basis_with_infant(ages, config.c_a_reduced, config.degree, infant);
    set.Bt = detail::time_basis_with_shocks(years, config.c_t, config.degree, config.shock_years);
    set.Bt_reduced =
        detail::time_basis_with_shocks(years, config.c_t_reduced, config.degree, config.shock_years);
    set.Bs = spatial_basis(data.centroids.col(0), data.centroids.col(1), config.c_lon, config.c_lat,
                           config.degree);

    set.dims.m = m;
    set.dims.n = n;
    set.dims.l = l;
    set.dims.c_a = config.c_a;
    set.dims.c_t = config.c_t;
    set.dims.c_lon = config.c_lon;
    set.dims.c_lat = config.c_lat;
    set.dims.c_a_reduced = config.c_a_reduced;
    set.dims.c_t_reduced = config.c_t_reduced;
    set.dims.n_shock = static_cast<Eigen::Index>(config.shock_years.size());
    set.dims.infant = infant;
    return set;
}

} // namespace mortsurf
