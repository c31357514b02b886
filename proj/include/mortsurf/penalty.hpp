#pragma once

#include "mortsurf/basis.hpp"
#include "mortsurf/errors.hpp"

#include <Eigen/Dense>

#include <stdexcept>

namespace mortsurf {

/// Smoothing parameters for the three penalty blocks plus the ridge on the
/// area-level terms.
struct PenaltyConfig {
    double lambda_a = 1.0;
    double lambda_t = 1.0;
    double lambda_lon = 1.0;
    double lambda_lat = 1.0;
    double lambda_a_reduced = 1.0;
    double lambda_t_reduced = 0.0;
    double kappa = 1.0;
    /// Fixed tiny ridge on indicator coefficients (infant and shock columns),
    /// which carry no difference penalty of their own.
    double ridge_epsilon = 1e-6;
};

namespace detail {

inline Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

/// D'D for the leading `c_smooth` coefficients, embedded in a block of size
/// c_total; trailing indicator coefficients get zero rows and columns.
inline Eigen::MatrixXd embedded_difference_penalty(Eigen::Index c_smooth, Eigen::Index c_total,
                                                   int order) {
    const Eigen::MatrixXd d = difference_matrix(c_smooth, order).matrix;
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(c_total, c_total);
    q.topLeftCorner(c_smooth, c_smooth) = d.transpose() * d;
    return q;
}

inline void validate_penalty(const PenaltyConfig& p, bool with_gamma) {
    if (p.lambda_a < 0 || p.lambda_t < 0 || p.lambda_lon < 0 || p.lambda_lat < 0 ||
        p.lambda_a_reduced < 0 || p.lambda_t_reduced < 0)
        throw std::invalid_argument("smoothing parameters must be non-negative");
    if (with_gamma && !(p.kappa > 0))
        throw std::invalid_argument("kappa must be strictly positive (gamma identifiability)");
}

} // namespace detail

/// Penalty over the common age-time surface coefficients, laid out with the
/// age index fastest. Difference penalties act on the smooth sub-blocks only;
/// infant and shock coefficients receive the fixed tiny ridge instead.
inline Eigen::MatrixXd penalty_block1(const PenaltyConfig& p, const BasisDims& dims,
                                      int diff_order) {
    const Eigen::Index ca = dims.c_a_ext(), ct = dims.c_t_ext();
    const Eigen::MatrixXd qa = detail::embedded_difference_penalty(dims.c_a, ca, diff_order);
    const Eigen::MatrixXd qt = detail::embedded_difference_penalty(dims.c_t, ct, diff_order);
    Eigen::MatrixXd out = p.lambda_a * detail::kron(Eigen::MatrixXd::Identity(ct, ct), qa) +
                          p.lambda_t * detail::kron(qt, Eigen::MatrixXd::Identity(ca, ca));
    for (Eigen::Index t = 0; t < ct; ++t)
        for (Eigen::Index a = 0; a < ca; ++a) {
            const Eigen::Index idx = t * ca + a;
            if (a >= dims.c_a) out(idx, idx) += p.ridge_epsilon;
            if (t >= dims.c_t) out(idx, idx) += p.ridge_epsilon;
        }
    return out;
}

/// Penalty over the age-space-time deviation coefficients, laid out with the
/// reduced-age index fastest, then longitude, latitude and reduced time.
inline Eigen::MatrixXd penalty_block2(const PenaltyConfig& p, const BasisDims& dims,
                                      int diff_order) {
    const Eigen::Index ca = dims.c_a_reduced_ext(), ct = dims.c_t_reduced_ext();
    const Eigen::Index clon = dims.c_lon, clat = dims.c_lat;
    const auto eye = [](Eigen::Index c) { return Eigen::MatrixXd::Identity(c, c); };
    const Eigen::MatrixXd qa = detail::embedded_difference_penalty(dims.c_a_reduced, ca, diff_order);
    const Eigen::MatrixXd qt = detail::embedded_difference_penalty(dims.c_t_reduced, ct, diff_order);
    const Eigen::MatrixXd dlon = difference_matrix(clon, diff_order).matrix;
    const Eigen::MatrixXd dlat = difference_matrix(clat, diff_order).matrix;

    Eigen::MatrixXd out =
        p.lambda_lon *
            detail::kron(eye(ct), detail::kron(eye(clat),
                                               detail::kron(dlon.transpose() * dlon, eye(ca)))) +
        p.lambda_lat *
            detail::kron(eye(ct), detail::kron(dlat.transpose() * dlat,
                                               detail::kron(eye(clon), eye(ca)))) +
        p.lambda_a_reduced * detail::kron(eye(ct), detail::kron(eye(clat * clon), qa)) +
        p.lambda_t_reduced * detail::kron(qt, eye(clat * clon * ca));

    const Eigen::Index cs = dims.c_s();
    for (Eigen::Index t = 0; t < ct; ++t)
        for (Eigen::Index s = 0; s < cs; ++s)
            for (Eigen::Index a = 0; a < ca; ++a) {
                const Eigen::Index idx = (t * cs + s) * ca + a;
                if (a >= dims.c_a_reduced) out(idx, idx) += p.ridge_epsilon;
                if (t >= dims.c_t_reduced) out(idx, idx) += p.ridge_epsilon;
            }
    return out;
}

/// Full block-diagonal penalty diag(P1, P2, P3) matching the stacked
/// coefficient layout (common surface, deviations, area terms).
inline Eigen::MatrixXd assemble_penalty(const PenaltyConfig& p, const BasisDims& dims,
                                        int diff_order) {
    detail::validate_penalty(p, true);
    const Eigen::Index k1 = dims.c_t_ext() * dims.c_a_ext();
    const Eigen::Index k2 = dims.c_t_reduced_ext() * dims.c_s() * dims.c_a_reduced_ext();
    const Eigen::Index k3 = dims.n;
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(k1 + k2 + k3, k1 + k2 + k3);
    out.topLeftCorner(k1, k1) = penalty_block1(p, dims, diff_order);
    out.block(k1, k1, k2, k2) = penalty_block2(p, dims, diff_order);
    out.bottomRightCorner(k3, k3) = p.kappa * Eigen::MatrixXd::Identity(k3, k3);
    return out;
}

inline Eigen::MatrixXd assemble_penalty(const PenaltyConfig& p, const BasisSet& basis) {
    return assemble_penalty(p, basis.dims, basis.diff_order);
}

} // namespace mortsurf
