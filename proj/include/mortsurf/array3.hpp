#pragma once

#include <Eigen/Dense>

#include <stdexcept>

namespace mortsurf {

/// Dense 3-way array stored column-major over (axis0, axis1, axis2) with
/// axis0 fastest. For mortality data the axes are (age, area, year), so the
/// flattened vector matches vec(Y) of a design matrix written as
/// B_year (x) B_area (x) B_age.
class Array3 {
  public:
    Array3() = default;
    Array3(Eigen::Index d0, Eigen::Index d1, Eigen::Index d2)
        : d0_(d0), d1_(d1), d2_(d2), v_(Eigen::VectorXd::Zero(d0 * d1 * d2)) {}

    static Array3 constant(Eigen::Index d0, Eigen::Index d1, Eigen::Index d2, double value) {
        Array3 a(d0, d1, d2);
        a.v_.setConstant(value);
        return a;
    }

    Eigen::Index dim0() const { return d0_; }
    Eigen::Index dim1() const { return d1_; }
    Eigen::Index dim2() const { return d2_; }
    Eigen::Index size() const { return v_.size(); }
    bool same_shape(const Array3& o) const { return d0_ == o.d0_ && d1_ == o.d1_ && d2_ == o.d2_; }

    double& operator()(Eigen::Index i, Eigen::Index j, Eigen::Index k) {
        return v_[i + d0_ * (j + d1_ * k)];
    }
    double operator()(Eigen::Index i, Eigen::Index j, Eigen::Index k) const {
        return v_[i + d0_ * (j + d1_ * k)];
    }

    Eigen::VectorXd& vec() { return v_; }
    const Eigen::VectorXd& vec() const { return v_; }

    /// Matrix view over (axis0, axis2) at a fixed axis1 index.
    Eigen::Map<const Eigen::MatrixXd, 0, Eigen::OuterStride<>> slice1(Eigen::Index j) const {
        return {v_.data() + d0_ * j, d0_, d2_, Eigen::OuterStride<>(d0_ * d1_)};
    }
    Eigen::Map<Eigen::MatrixXd, 0, Eigen::OuterStride<>> slice1(Eigen::Index j) {
        return {v_.data() + d0_ * j, d0_, d2_, Eigen::OuterStride<>(d0_ * d1_)};
    }

    /// Sum over axis1, returning a (axis0 x axis2) matrix.
    Eigen::MatrixXd sum1() const {
        Eigen::MatrixXd out = Eigen::MatrixXd::Zero(d0_, d2_);
        for (Eigen::Index j = 0; j < d1_; ++j) out += slice1(j);
        return out;
    }

    /// Drop the last axis1 slot (used to strip the augmented-totals slot).
    Array3 drop_last1() const {
        Array3 out(d0_, d1_ - 1, d2_);
        for (Eigen::Index k = 0; k < d2_; ++k)
            for (Eigen::Index j = 0; j + 1 < d1_; ++j)
                for (Eigen::Index i = 0; i < d0_; ++i) out(i, j, k) = (*this)(i, j, k);
        return out;
    }

  private:
    Eigen::Index d0_ = 0, d1_ = 0, d2_ = 0;
    Eigen::VectorXd v_;
};

/// Multiply a matrix along one axis: result has dim(axis) = f.rows() and
/// entries sum_t f(p, t) * a(..., t, ...). This is the array counterpart of
/// multiplying vec(a) by I (x) f (x) I.
inline Array3 mode_product(const Array3& a, const Eigen::MatrixXd& f, int axis) {
    const Eigen::Index d0 = a.dim0(), d1 = a.dim1(), d2 = a.dim2();
    switch (axis) {
        case 0: {
            if (f.cols() != d0) throw std::invalid_argument("mode_product: axis0 size mismatch");
            Array3 out(f.rows(), d1, d2);
            Eigen::Map<const Eigen::MatrixXd> in(a.vec().data(), d0, d1 * d2);
            Eigen::Map<Eigen::MatrixXd>(out.vec().data(), f.rows(), d1 * d2) = f * in;
            return out;
        }
        case 1: {
            if (f.cols() != d1) throw std::invalid_argument("mode_product: axis1 size mismatch");
            Array3 out(d0, f.rows(), d2);
            for (Eigen::Index k = 0; k < d2; ++k) {
                Eigen::Map<const Eigen::MatrixXd> in(a.vec().data() + d0 * d1 * k, d0, d1);
                Eigen::Map<Eigen::MatrixXd>(out.vec().data() + d0 * f.rows() * k, d0, f.rows()) =
                    in * f.transpose();
            }
            return out;
        }
        case 2: {
            if (f.cols() != d2) throw std::invalid_argument("mode_product: axis2 size mismatch");
            Array3 out(d0, d1, f.rows());
            Eigen::Map<const Eigen::MatrixXd> in(a.vec().data(), d0 * d1, d2);
            Eigen::Map<Eigen::MatrixXd>(out.vec().data(), d0 * d1, f.rows()) = in * f.transpose();
            return out;
        }
        default: throw std::invalid_argument("mode_product: axis must be 0, 1 or 2");
    }
}

} // namespace mortsurf
