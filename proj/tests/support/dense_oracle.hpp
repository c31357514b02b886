#pragma once

// Brute-force reference implementations, independent of the library's array
// kernels: they materialize the full model matrix with explicit Kronecker
// loops and run textbook dense algebra on it.

#include "mortsurf/glam.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace oracle {

/// Explicit model matrix. Rows run over (age, area slot, year) with age
/// fastest; the totals slot is last and only sees the first block.
inline Eigen::MatrixXd dense_design(const mortsurf::BlockDesign& d) {
    const Eigen::Index m = d.dims.m, l = d.dims.l;
    const Eigen::Index n = d.spatial ? d.dims.n : 0;
    const Eigen::Index slots = d.weight_slots();
    const Eigen::Index ca = d.Ba.cols(), ct = d.Bt.cols();
    const auto lay = d.layout();
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(m * slots * l, lay.total());
    for (Eigen::Index k = 0; k < l; ++k)
        for (Eigen::Index j = 0; j < slots; ++j)
            for (Eigen::Index i = 0; i < m; ++i) {
                const Eigen::Index row = i + m * (j + slots * k);
                for (Eigen::Index t = 0; t < ct; ++t)
                    for (Eigen::Index a = 0; a < ca; ++a)
                        x(row, t * ca + a) = d.Bt(k, t) * d.Ba(i, a);
                if (j >= n) continue; // totals slot: blocks 2 and 3 are zero
                const Eigen::Index car = d.Bar.cols(), ctr = d.Btr.cols(), cs = d.Bs.cols();
                for (Eigen::Index t = 0; t < ctr; ++t)
                    for (Eigen::Index s = 0; s < cs; ++s)
                        for (Eigen::Index a = 0; a < car; ++a)
                            x(row, lay.offset2() + (t * cs + s) * car + a) =
                                d.Btr(k, t) * d.Bs(j, s) * d.Bar(i, a);
                x(row, lay.offset3() + j) = 1.0;
            }
    return x;
}

/// Naive recursive Cox-de Boor evaluation of one basis function.
inline double bspline_recursive(const Eigen::VectorXd& knots, Eigen::Index i, int degree,
                                double x) {
    if (degree == 0) {
        const bool last = i + 2 == knots.size();
        return (x >= knots[i] && (x < knots[i + 1] || (last && x == knots[i + 1]))) ? 1.0 : 0.0;
    }
    double left = 0.0, right = 0.0;
    if (knots[i + degree] > knots[i])
        left = (x - knots[i]) / (knots[i + degree] - knots[i]) *
               bspline_recursive(knots, i, degree - 1, x);
    if (knots[i + degree + 1] > knots[i + 1])
        right = (knots[i + degree + 1] - x) / (knots[i + degree + 1] - knots[i + 1]) *
                bspline_recursive(knots, i + 1, degree - 1, x);
    return left + right;
}

inline Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            for (Eigen::Index p = 0; p < b.rows(); ++p)
                for (Eigen::Index q = 0; q < b.cols(); ++q)
                    out(i * b.rows() + p, j * b.cols() + q) = a(i, j) * b(p, q);
    return out;
}

struct DenseIrwlsResult {
    Eigen::VectorXd theta;
    Eigen::VectorXd eta;
    int iterations = 0;
};

/// Textbook penalized IRWLS on the explicit design matrix.
inline DenseIrwlsResult dense_irwls(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                    const Eigen::VectorXd& e, const Eigen::MatrixXd& penalty,
                                    const Eigen::VectorXd& theta0, double tol = 1e-11,
                                    int max_iter = 300) {
    DenseIrwlsResult res;
    res.theta = theta0;
    for (int it = 1; it <= max_iter; ++it) {
        const Eigen::VectorXd eta = x * res.theta;
        const Eigen::VectorXd mu = eta.array().exp();
        const Eigen::VectorXd w = mu.cwiseProduct(e);
        Eigen::VectorXd z(eta.size());
        for (Eigen::Index r = 0; r < eta.size(); ++r)
            z[r] = w[r] > 0 ? eta[r] + (y[r] - mu[r] * e[r]) / w[r] : 0.0;
        const Eigen::MatrixXd a = x.transpose() * w.asDiagonal() * x + penalty;
        const Eigen::VectorXd rhs = x.transpose() * w.cwiseProduct(z);
        const Eigen::VectorXd next = a.ldlt().solve(rhs);
        const double delta = (next - res.theta).cwiseAbs().maxCoeff();
        res.theta = next;
        res.iterations = it;
        if (delta < tol) break;
    }
    res.eta = x * res.theta;
    return res;
}

inline double dense_effective_dimension(const Eigen::MatrixXd& x, const Eigen::VectorXd& w,
                                        const Eigen::MatrixXd& penalty) {
    const Eigen::MatrixXd normal = x.transpose() * w.asDiagonal() * x;
    return (normal + penalty).ldlt().solve(normal).trace();
}

} // namespace oracle
