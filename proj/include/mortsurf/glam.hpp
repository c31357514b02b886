#pragma once

#include "mortsurf/array3.hpp"
#include "mortsurf/basis.hpp"
#include "mortsurf/errors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <stdexcept>

namespace mortsurf {

/// Offsets of the three coefficient segments in the stacked vector theta:
/// common age-time surface, age-space-time deviations, area-level terms.
struct CoefficientLayout {
    Eigen::Index k1 = 0, k2 = 0, k3 = 0;
    Eigen::Index offset1() const { return 0; }
    Eigen::Index offset2() const { return k1; }
    Eigen::Index offset3() const { return k1 + k2; }
    Eigen::Index total() const { return k1 + k2 + k3; }
};

/// The block-structured model matrix, kept as its marginal factors. Weight and
/// response arrays carry one extra area slot at the end for the augmented
/// across-area totals; those rows only receive block-1 contributions.
struct BlockDesign {
    Eigen::MatrixXd Ba;  // m x c_a_ext
    Eigen::MatrixXd Bt;  // l x c_t_ext
    Eigen::MatrixXd Bar; // m x c_a_reduced_ext
    Eigen::MatrixXd Btr; // l x c_t_reduced_ext
    Eigen::MatrixXd Bs;  // n x c_s
    BasisDims dims;
    bool spatial = true;

    CoefficientLayout layout() const {
        CoefficientLayout lay;
        lay.k1 = Ba.cols() * Bt.cols();
        if (spatial) {
            lay.k2 = Bar.cols() * Bs.cols() * Btr.cols();
            lay.k3 = dims.n;
        }
        return lay;
    }

    /// Number of area slots in weight/response arrays (areas + totals slot).
    Eigen::Index weight_slots() const { return spatial ? dims.n + 1 : 1; }

    static BlockDesign from_basis(const BasisSet& basis) {
        BlockDesign d;
        d.Ba = basis.Ba.matrix;
        d.Bt = basis.Bt.matrix;
        d.Bar = basis.Ba_reduced.matrix;
        d.Btr = basis.Bt_reduced.matrix;
        d.Bs = basis.Bs.matrix;
        d.dims = basis.dims;
        d.spatial = true;
        return d;
    }

    /// Age-time model of the aggregate only: block 1, no deviations, no area
    /// terms. Weight arrays then have a single (totals) slot.
    static BlockDesign totals_only(const BasisSet& basis) {
        BlockDesign d;
        d.Ba = basis.Ba.matrix;
        d.Bt = basis.Bt.matrix;
        d.dims = basis.dims;
        d.spatial = false;
        return d;
    }
};

struct LinearPredictor {
    Array3 areas;           // m x n x l (empty for totals-only designs)
    Eigen::MatrixXd totals; // m x l
};

namespace detail {

inline void check_weight_shape(const BlockDesign& design, const Array3& w, const char* what) {
    if (w.dim0() != design.dims.m || w.dim1() != design.weight_slots() ||
        w.dim2() != design.dims.l)
        throw std::invalid_argument(std::string(what) +
                                    ": array shape does not match the design");
}

/// T[a,s,t] = sum_{ijk} w(i,j,k) fa(i,a) fs(j,s) ft(k,t).
inline Array3 contract3(const Array3& w, const Eigen::MatrixXd& fa, const Eigen::MatrixXd& fs,
                        const Eigen::MatrixXd& ft) {
    return mode_product(mode_product(mode_product(w, fa.transpose(), 0), fs.transpose(), 1),
                        ft.transpose(), 2);
}

} // namespace detail

/// Evaluate eta = X theta without materializing any Kronecker product: small
/// matrix products along each array axis plus a broadcast of the area terms.
inline LinearPredictor linear_predictor(const BlockDesign& design, const Eigen::VectorXd& theta) {
    const CoefficientLayout lay = design.layout();
    if (theta.size() != lay.total())
        throw std::invalid_argument("linear_predictor: theta length does not match the layout");
    const Eigen::Index m = design.dims.m, n = design.dims.n, l = design.dims.l;

    Eigen::Map<const Eigen::MatrixXd> theta1(theta.data(), design.Ba.cols(), design.Bt.cols());
    LinearPredictor out;
    out.totals = design.Ba * theta1 * design.Bt.transpose();
    if (!design.spatial) return out;

    Array3 theta2(design.Bar.cols(), design.Bs.cols(), design.Btr.cols());
    theta2.vec() = theta.segment(lay.offset2(), lay.k2);
    Array3 dev = mode_product(mode_product(mode_product(theta2, design.Bar, 0), design.Bs, 1),
                              design.Btr, 2);
    const Eigen::VectorXd gamma = theta.segment(lay.offset3(), lay.k3);

    out.areas = Array3(m, n, l);
    for (Eigen::Index k = 0; k < l; ++k)
        for (Eigen::Index j = 0; j < n; ++j)
            for (Eigen::Index i = 0; i < m; ++i)
                out.areas(i, j, k) = out.totals(i, k) + dev(i, j, k) + gamma[j];
    return out;
}

/// X'WX assembled block-pairwise from tensor contractions; never forms X.
inline Eigen::MatrixXd weighted_normal_matrix(const BlockDesign& design, const Array3& w) {
    detail::check_weight_shape(design, w, "weighted_normal_matrix");
    if (!w.vec().allFinite() || w.vec().minCoeff() < 0)
        throw std::invalid_argument("weighted_normal_matrix: weights must be finite and >= 0");

    const CoefficientLayout lay = design.layout();
    const Eigen::Index ca = design.Ba.cols(), ct = design.Bt.cols();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(lay.total(), lay.total());

    // (1,1): the common surface sees every row, totals included.
    const Eigen::MatrixXd wsum = w.sum1();
    const Eigen::MatrixXd t11 =
        box_product(design.Ba, design.Ba).transpose() * wsum * box_product(design.Bt, design.Bt);
    for (Eigen::Index t = 0; t < ct; ++t)
        for (Eigen::Index a = 0; a < ca; ++a)
            for (Eigen::Index t2 = 0; t2 < ct; ++t2)
                for (Eigen::Index a2 = 0; a2 < ca; ++a2)
                    out(t * ca + a, t2 * ca + a2) = t11(a * ca + a2, t * ct + t2);
    if (!design.spatial) return out;

    const Eigen::Index car = design.Bar.cols(), ctr = design.Btr.cols(), cs = design.Bs.cols();
    const Eigen::Index n = design.dims.n;
    const Array3 warea = w.drop_last1();

    const Array3 t22 =
        detail::contract3(warea, box_product(design.Bar, design.Bar),
                          box_product(design.Bs, design.Bs), box_product(design.Btr, design.Btr));
    for (Eigen::Index t = 0; t < ctr; ++t)
        for (Eigen::Index s = 0; s < cs; ++s)
            for (Eigen::Index a = 0; a < car; ++a) {
                const Eigen::Index row = lay.offset2() + (t * cs + s) * car + a;
                for (Eigen::Index t2 = 0; t2 < ctr; ++t2)
                    for (Eigen::Index s2 = 0; s2 < cs; ++s2)
                        for (Eigen::Index a2 = 0; a2 < car; ++a2)
                            out(row, lay.offset2() + (t2 * cs + s2) * car + a2) =
                                t22(a * car + a2, s * cs + s2, t * ctr + t2);
            }

    const Array3 t12 = detail::contract3(warea, box_product(design.Ba, design.Bar), design.Bs,
                                         box_product(design.Bt, design.Btr));
    for (Eigen::Index t = 0; t < ct; ++t)
        for (Eigen::Index a = 0; a < ca; ++a) {
            const Eigen::Index row = t * ca + a;
            for (Eigen::Index t2 = 0; t2 < ctr; ++t2)
                for (Eigen::Index s2 = 0; s2 < cs; ++s2)
                    for (Eigen::Index a2 = 0; a2 < car; ++a2) {
                        const Eigen::Index col = lay.offset2() + (t2 * cs + s2) * car + a2;
                        const double v = t12(a * car + a2, s2, t * ctr + t2);
                        out(row, col) = v;
                        out(col, row) = v;
                    }
        }

    // Per-area contractions for the gamma column blocks and diagonal.
    for (Eigen::Index j = 0; j < n; ++j) {
        const auto wj = warea.slice1(j);
        const Eigen::Index col = lay.offset3() + j;
        const Eigen::MatrixXd mj = design.Ba.transpose() * wj * design.Bt;
        for (Eigen::Index t = 0; t < ct; ++t)
            for (Eigen::Index a = 0; a < ca; ++a) {
                out(t * ca + a, col) = mj(a, t);
                out(col, t * ca + a) = mj(a, t);
            }
        const Eigen::MatrixXd vj = design.Bar.transpose() * wj * design.Btr;
        for (Eigen::Index t = 0; t < ctr; ++t)
            for (Eigen::Index s = 0; s < cs; ++s)
                for (Eigen::Index a = 0; a < car; ++a) {
                    const Eigen::Index row = lay.offset2() + (t * cs + s) * car + a;
                    const double v = design.Bs(j, s) * vj(a, t);
                    out(row, col) = v;
                    out(col, row) = v;
                }
        out(col, col) = wj.sum();
    }
    return out;
}

/// X'Wz assembled blockwise.
inline Eigen::VectorXd weighted_rhs(const BlockDesign& design, const Array3& w, const Array3& z) {
    detail::check_weight_shape(design, w, "weighted_rhs");
    if (!w.same_shape(z)) throw std::invalid_argument("weighted_rhs: weight/response shape mismatch");

    Array3 wz = w;
    wz.vec() = w.vec().cwiseProduct(z.vec());

    const CoefficientLayout lay = design.layout();
    Eigen::VectorXd out = Eigen::VectorXd::Zero(lay.total());
    const Eigen::MatrixXd r1 = design.Ba.transpose() * wz.sum1() * design.Bt;
    out.head(lay.k1) = Eigen::Map<const Eigen::VectorXd>(r1.data(), lay.k1);
    if (!design.spatial) return out;

    const Array3 wzarea = wz.drop_last1();
    const Array3 t2 = detail::contract3(wzarea, design.Bar, design.Bs, design.Btr);
    out.segment(lay.offset2(), lay.k2) = t2.vec();
    for (Eigen::Index j = 0; j < design.dims.n; ++j)
        out[lay.offset3() + j] = wzarea.slice1(j).sum();
    return out;
}

/// Effective dimension tr[(X'WX + P)^{-1} X'WX] via a Cholesky factorization
/// of the penalized normal matrix.
inline double effective_dimension(const BlockDesign& design, const Array3& w,
                                  const Eigen::MatrixXd& penalty) {
    const Eigen::MatrixXd normal = weighted_normal_matrix(design, w);
    if (penalty.rows() != normal.rows() || penalty.cols() != normal.cols())
        throw std::invalid_argument("effective_dimension: penalty size does not match the layout");
    Eigen::LLT<Eigen::MatrixXd> llt(normal + penalty);
    if (llt.info() != Eigen::Success)
        throw NumericError("singular penalized system");
    return llt.solve(normal).trace();
}

} // namespace mortsurf
