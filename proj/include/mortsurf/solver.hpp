#pragma once

#include "mortsurf/data.hpp"
#include "mortsurf/glam.hpp"
#include "mortsurf/lifetable.hpp"
#include "mortsurf/penalty.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace mortsurf {

struct IterationControls {
    int max_iterations = 50;
    double tol_theta = 1e-6;
    double tol_deviance = 1e-8;
    /// Stop when the deviance itself is this small: the fit is saturated, as
    /// happens with all-zero counts whose unpenalized optimum sits at mu = 0.
    double tol_deviance_absolute = 1e-9;
    int max_step_halvings = 10;
    /// Working linear predictor is clamped to this range. Log hazards sit in
    /// roughly (-12, 0.5); the clamp only engages when a boundary optimum
    /// (all-zero counts) would otherwise drive weights below rounding noise.
    double eta_floor = -20.0;
    double eta_ceiling = 5.0;
    /// Whether the augmented totals rows enter the deviance, effective
    /// dimension and sample size used by the information criterion.
    bool include_totals_in_ic = true;
};

struct FitResult {
    Eigen::VectorXd theta;
    Array3 eta_hat;             // fitted log-mortality, m x n x l (empty for totals-only fits)
    Eigen::MatrixXd eta_totals; // fitted log-mortality of the aggregate, m x l
    double deviance = 0.0;
    double effective_dimension = 0.0;
    double hqic = 0.0;
    /// Lower Cholesky factor of X'WX + P at convergence; its inverse-transpose
    /// maps standard normals to coefficient draws with covariance V.
    Eigen::MatrixXd penalized_normal_factor;
    bool converged = false;
    int iterations = 0;
    std::vector<double> penalized_deviance_trace;
    CoefficientLayout layout;

    Eigen::VectorXd gamma() const { return theta.segment(layout.offset3(), layout.k3); }
};

/// Hannan-Quinn information criterion.
inline double hqic(double deviance, double ed, double n_obs) {
    if (!(n_obs >= 3)) throw std::invalid_argument("hqic: need a sample size of at least 3");
    return deviance + 2.0 * std::log(std::log(n_obs)) * ed;
}

namespace detail {

inline double poisson_deviance(const Array3& y, const Array3& e, const Array3& mu,
                               bool skip_last_slot) {
    double dev = 0.0;
    const Eigen::Index slots = skip_last_slot ? y.dim1() - 1 : y.dim1();
    for (Eigen::Index k = 0; k < y.dim2(); ++k)
        for (Eigen::Index j = 0; j < slots; ++j)
            for (Eigen::Index i = 0; i < y.dim0(); ++i) {
                if (!(e(i, j, k) > 0)) continue;
                const double yi = y(i, j, k);
                const double fit = mu(i, j, k) * e(i, j, k);
                dev += (yi > 0 ? yi * std::log(yi / fit) : 0.0) - (yi - fit);
            }
    return 2.0 * dev;
}

/// Arrange area and totals predictors into one array with the totals slot
/// last, matching the weight-array convention.
inline Array3 stack_predictor(const BlockDesign& design, const LinearPredictor& lp) {
    const Eigen::Index m = design.dims.m, l = design.dims.l;
    const Eigen::Index slots = design.weight_slots();
    Array3 eta(m, slots, l);
    for (Eigen::Index k = 0; k < l; ++k)
        for (Eigen::Index i = 0; i < m; ++i) {
            for (Eigen::Index j = 0; j + 1 < slots; ++j) eta(i, j, k) = lp.areas(i, j, k);
            eta(i, slots - 1, k) = lp.totals(i, k);
        }
    return eta;
}

/// Starting values: least-squares projection of the log crude rates of the
/// aggregate onto the common age-time surface; deviations and area terms at 0.
inline Eigen::VectorXd initial_theta(const BlockDesign& design, const Array3& y, const Array3& e) {
    const Eigen::Index m = design.dims.m, l = design.dims.l;
    const Eigen::Index tot = y.dim1() - 1;
    Eigen::MatrixXd raw(m, l);
    for (Eigen::Index k = 0; k < l; ++k)
        for (Eigen::Index i = 0; i < m; ++i)
            raw(i, k) = std::log((y(i, tot, k) + 0.5) / (e(i, tot, k) + 1.0));

    const Eigen::MatrixXd rhs = design.Ba.transpose() * raw * design.Bt;
    const Eigen::Index k1 = design.Ba.cols() * design.Bt.cols();
    Eigen::MatrixXd gram = kron(design.Bt.transpose() * design.Bt,
                                design.Ba.transpose() * design.Ba);
    gram.diagonal().array() += 1e-8;
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(design.layout().total());
    theta.head(k1) = gram.ldlt().solve(Eigen::Map<const Eigen::VectorXd>(rhs.data(), k1));
    return theta;
}

struct IrwlsState {
    Array3 eta, mu, w;
    double deviance = 0.0;
    double penalized = 0.0;
};

inline IrwlsState evaluate(const BlockDesign& design, const Eigen::VectorXd& theta,
                           const Array3& y, const Array3& e, const Eigen::MatrixXd& penalty,
                           const IterationControls& controls) {
    IrwlsState st;
    st.eta = stack_predictor(design, linear_predictor(design, theta));
    st.eta.vec() = st.eta.vec().cwiseMax(controls.eta_floor).cwiseMin(controls.eta_ceiling);
    st.mu = st.eta;
    st.mu.vec() = st.eta.vec().array().exp();
    st.w = st.mu;
    st.w.vec() = st.mu.vec().cwiseProduct(e.vec()); // zero wherever exposure is zero
    st.deviance = poisson_deviance(y, e, st.mu, false);
    st.penalized = st.deviance + theta.dot(penalty * theta);
    return st;
}

inline FitResult fit_impl(const BlockDesign& design, const Array3& y, const Array3& e,
                          const Eigen::MatrixXd& penalty, const IterationControls& controls) {
    FitResult result;
    result.layout = design.layout();

    Eigen::VectorXd theta = initial_theta(design, y, e);
    IrwlsState state = evaluate(design, theta, y, e, penalty, controls);
    result.penalized_deviance_trace.push_back(state.penalized);

    for (int iter = 1; iter <= controls.max_iterations; ++iter) {
        Array3 z = state.eta;
        for (Eigen::Index c = 0; c < z.size(); ++c)
            z.vec()[c] = state.w.vec()[c] > 0
                             ? state.eta.vec()[c] +
                                   (y.vec()[c] - state.mu.vec()[c] * e.vec()[c]) / state.w.vec()[c]
                             : 0.0;

        const Eigen::MatrixXd normal = weighted_normal_matrix(design, state.w);
        const Eigen::VectorXd rhs = weighted_rhs(design, state.w, z);
        Eigen::LLT<Eigen::MatrixXd> llt(normal + penalty);
        if (llt.info() != Eigen::Success) throw NumericError("singular penalized system");
        const Eigen::VectorXd proposal = llt.solve(rhs);

        // Step-halving keeps the penalized deviance from climbing after an
        // overshoot on sparse counts.
        double step = 1.0;
        Eigen::VectorXd candidate;
        IrwlsState next;
        for (int h = 0;; ++h) {
            candidate = theta + step * (proposal - theta);
            next = evaluate(design, candidate, y, e, penalty, controls);
            if (next.penalized <= state.penalized + 1e-10 * (1.0 + std::abs(state.penalized)) ||
                h >= controls.max_step_halvings)
                break;
            step *= 0.5;
        }

        const double dtheta = (candidate - theta).cwiseAbs().maxCoeff();
        const double ddev =
            std::abs(next.deviance - state.deviance) / (std::abs(state.deviance) + 1e-10);
        theta = candidate;
        state = next;
        result.penalized_deviance_trace.push_back(state.penalized);
        result.iterations = iter;
        if (dtheta < controls.tol_theta || ddev < controls.tol_deviance ||
            state.deviance < controls.tol_deviance_absolute) {
            result.converged = true;
            break;
        }
    }
    if (!result.converged) {
        std::ostringstream msg;
        msg << "IRWLS did not converge in " << controls.max_iterations
            << " iterations; penalized deviance trace:";
        for (double v : result.penalized_deviance_trace) msg << " " << v;
        throw NumericError(msg.str());
    }

    result.theta = theta;
    const LinearPredictor lp = linear_predictor(design, theta);
    result.eta_hat = lp.areas;
    result.eta_totals = lp.totals;
    result.deviance = state.deviance;

    const Eigen::MatrixXd normal = weighted_normal_matrix(design, state.w);
    Eigen::LLT<Eigen::MatrixXd> llt(normal + penalty);
    if (llt.info() != Eigen::Success) throw NumericError("singular penalized system");
    result.penalized_normal_factor = llt.matrixL();
    result.effective_dimension = llt.solve(normal).trace();

    const bool drop_totals = design.spatial && !controls.include_totals_in_ic;
    double ic_dev = result.deviance;
    double ic_ed = result.effective_dimension;
    std::int64_t n_obs = 0;
    {
        const Eigen::Index slots = drop_totals ? y.dim1() - 1 : y.dim1();
        for (Eigen::Index k = 0; k < y.dim2(); ++k)
            for (Eigen::Index j = 0; j < slots; ++j)
                for (Eigen::Index i = 0; i < y.dim0(); ++i)
                    if (e(i, j, k) > 0) ++n_obs;
    }
    if (drop_totals) {
        ic_dev = poisson_deviance(y, e, state.mu, true);
        Array3 w_area = state.w;
        for (Eigen::Index k = 0; k < y.dim2(); ++k)
            for (Eigen::Index i = 0; i < y.dim0(); ++i) w_area(i, y.dim1() - 1, k) = 0.0;
        ic_ed = llt.solve(weighted_normal_matrix(design, w_area)).trace();
    }
    result.hqic = n_obs >= 3 ? hqic(ic_dev, ic_ed, static_cast<double>(n_obs))
                             : std::numeric_limits<double>::quiet_NaN();
    return result;
}

inline Array3 stack_observed(const AugmentedArray& data, bool deaths) {
    const Eigen::Index m = data.base.m(), n = data.base.n(), l = data.base.l();
    const Array3& src = deaths ? data.base.deaths : data.base.exposures;
    const Eigen::MatrixXd& tot = deaths ? data.totals_deaths : data.totals_exposures;
    Array3 out(m, n + 1, l);
    for (Eigen::Index k = 0; k < l; ++k)
        for (Eigen::Index i = 0; i < m; ++i) {
            for (Eigen::Index j = 0; j < n; ++j) out(i, j, k) = src(i, j, k);
            out(i, n, k) = tot(i, k);
        }
    return out;
}

template <typename F>
void parallel_for(Eigen::Index count, int workers, F&& body) {
    workers = std::max(1, std::min<int>(workers, static_cast<int>(count)));
    if (workers == 1) {
        for (Eigen::Index i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<Eigen::Index> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int t = 0; t < workers; ++t)
        pool.emplace_back([&] {
            for (Eigen::Index i = next.fetch_add(1); i < count; i = next.fetch_add(1)) body(i);
        });
    for (auto& th : pool) th.join();
}

} // namespace detail

/// Fit the full age-space-time model on repaired, augmented data.
inline FitResult fit(const AugmentedArray& data, const BasisSet& basis, const PenaltyConfig& config,
                     const IterationControls& controls = {}) {
    const MortalityArray& base = data.base;
    for (Eigen::Index k = 0; k < base.l(); ++k)
        for (Eigen::Index j = 0; j < base.n(); ++j)
            for (Eigen::Index i = 0; i < base.m(); ++i)
                if (base.deaths(i, j, k) > 0 && !(base.exposures(i, j, k) > 0))
                    throw DataError("fit requires repaired data: positive deaths with zero "
                                    "exposure at (area_id=" +
                                    base.area_ids[static_cast<std::size_t>(j)] + ")");
    detail::validate_penalty(config, true);
    const BlockDesign design = BlockDesign::from_basis(basis);
    const Eigen::MatrixXd penalty = assemble_penalty(config, basis.dims, basis.diff_order);
    return detail::fit_impl(design, detail::stack_observed(data, true),
                            detail::stack_observed(data, false), penalty, controls);
}

/// Fit the age-time model of the aggregate only (no spatial or area terms);
/// used for the first search stage and for London-wide reference intervals.
inline FitResult fit_totals(const AugmentedArray& data, const BasisSet& basis, double lambda_a,
                            double lambda_t, const IterationControls& controls = {},
                            double ridge_epsilon = 1e-6) {
    PenaltyConfig p;
    p.lambda_a = lambda_a;
    p.lambda_t = lambda_t;
    p.ridge_epsilon = ridge_epsilon;
    detail::validate_penalty(p, false);
    const BlockDesign design = BlockDesign::totals_only(basis);
    const Eigen::Index m = data.base.m(), l = data.base.l();
    Array3 y(m, 1, l), e(m, 1, l);
    for (Eigen::Index k = 0; k < l; ++k)
        for (Eigen::Index i = 0; i < m; ++i) {
            y(i, 0, k) = data.totals_deaths(i, k);
            e(i, 0, k) = data.totals_exposures(i, k);
        }
    return detail::fit_impl(design, y, e, penalty_block1(p, basis.dims, basis.diff_order),
                            controls);
}

struct SearchGrids {
    std::vector<double> lambda_a, lambda_t;
    std::vector<double> lambda_lon, lambda_lat, lambda_a_reduced, kappa;
};

struct Stage1Point {
    double lambda_a = 0, lambda_t = 0;
    double deviance = 0, ed = 0, hqic = 0;
    std::string status = "ok";
};

struct Stage2Point {
    double lambda_lon = 0, lambda_lat = 0, lambda_a_reduced = 0, kappa = 0;
    double deviance = 0, ed = 0, hqic = 0;
    std::string status = "ok";
};

struct GridSearchResult {
    std::vector<Stage1Point> stage1;
    std::vector<Stage2Point> stage2;
    PenaltyConfig best;
};

/// Staged search: smooth the aggregate age-time surface first, then search
/// the spatial and deviation parameters with the age-time pair fixed and the
/// reduced time penalty pinned at zero.
inline GridSearchResult grid_search(const AugmentedArray& data, const BasisSet& basis,
                                    const SearchGrids& grids,
                                    const IterationControls& controls = {}, int workers = 1,
                                    double ridge_epsilon = 1e-6) {
    auto check = [](const std::vector<double>& g, const char* name, bool strict) {
        if (g.empty()) throw std::invalid_argument(std::string("empty grid for ") + name);
        for (double v : g)
            if (v < 0 || (strict && v == 0))
                throw std::invalid_argument(std::string("invalid grid value for ") + name);
    };
    check(grids.lambda_a, "lambda_a", false);
    check(grids.lambda_t, "lambda_t", false);
    check(grids.lambda_lon, "lambda_lon", false);
    check(grids.lambda_lat, "lambda_lat", false);
    check(grids.lambda_a_reduced, "lambda_a_reduced", false);
    check(grids.kappa, "kappa", true);

    GridSearchResult result;
    const auto na = static_cast<Eigen::Index>(grids.lambda_a.size());
    const auto nt = static_cast<Eigen::Index>(grids.lambda_t.size());
    result.stage1.resize(static_cast<std::size_t>(na * nt));
    detail::parallel_for(na * nt, workers, [&](Eigen::Index idx) {
        Stage1Point& pt = result.stage1[static_cast<std::size_t>(idx)];
        pt.lambda_a = grids.lambda_a[static_cast<std::size_t>(idx / nt)];
        pt.lambda_t = grids.lambda_t[static_cast<std::size_t>(idx % nt)];
        try {
            FitResult f = fit_totals(data, basis, pt.lambda_a, pt.lambda_t, controls,
                                     ridge_epsilon);
            pt.deviance = f.deviance;
            pt.ed = f.effective_dimension;
            pt.hqic = f.hqic;
        } catch (const std::exception& e) {
            pt.status = e.what();
            pt.hqic = std::numeric_limits<double>::quiet_NaN();
        }
    });

    const Stage1Point* best1 = nullptr;
    for (const auto& pt : result.stage1)
        if (pt.status == "ok" && (!best1 || pt.hqic < best1->hqic)) best1 = &pt;
    if (!best1) throw NumericError("grid search: no stage-1 point converged");

    const auto g1 = static_cast<Eigen::Index>(grids.lambda_lon.size());
    const auto g2 = static_cast<Eigen::Index>(grids.lambda_lat.size());
    const auto g3 = static_cast<Eigen::Index>(grids.lambda_a_reduced.size());
    const auto g4 = static_cast<Eigen::Index>(grids.kappa.size());
    result.stage2.resize(static_cast<std::size_t>(g1 * g2 * g3 * g4));
    detail::parallel_for(g1 * g2 * g3 * g4, workers, [&](Eigen::Index idx) {
        Stage2Point& pt = result.stage2[static_cast<std::size_t>(idx)];
        Eigen::Index rest = idx;
        pt.kappa = grids.kappa[static_cast<std::size_t>(rest % g4)];
        rest /= g4;
        pt.lambda_a_reduced = grids.lambda_a_reduced[static_cast<std::size_t>(rest % g3)];
        rest /= g3;
        pt.lambda_lat = grids.lambda_lat[static_cast<std::size_t>(rest % g2)];
        pt.lambda_lon = grids.lambda_lon[static_cast<std::size_t>(rest / g2)];
        PenaltyConfig cfg;
        cfg.lambda_a = best1->lambda_a;
        cfg.lambda_t = best1->lambda_t;
        cfg.lambda_lon = pt.lambda_lon;
        cfg.lambda_lat = pt.lambda_lat;
        cfg.lambda_a_reduced = pt.lambda_a_reduced;
        cfg.lambda_t_reduced = 0.0;
        cfg.kappa = pt.kappa;
        cfg.ridge_epsilon = ridge_epsilon;
        try {
            FitResult f = fit(data, basis, cfg, controls);
            pt.deviance = f.deviance;
            pt.ed = f.effective_dimension;
            pt.hqic = f.hqic;
        } catch (const std::exception& e) {
            pt.status = e.what();
            pt.hqic = std::numeric_limits<double>::quiet_NaN();
        }
    });

    const Stage2Point* best2 = nullptr;
    for (const auto& pt : result.stage2)
        if (pt.status == "ok" && (!best2 || pt.hqic < best2->hqic)) best2 = &pt;
    if (!best2) throw NumericError("grid search: no stage-2 point converged");

    result.best.lambda_a = best1->lambda_a;
    result.best.lambda_t = best1->lambda_t;
    result.best.lambda_lon = best2->lambda_lon;
    result.best.lambda_lat = best2->lambda_lat;
    result.best.lambda_a_reduced = best2->lambda_a_reduced;
    result.best.lambda_t_reduced = 0.0;
    result.best.kappa = best2->kappa;
    result.best.ridge_epsilon = ridge_epsilon;
    return result;
}

struct ValidationRow {
    std::string group_id;
    int year = 0;
    double e0_direct = 0.0;
    double e0_model = 0.0;
};

/// Compare direct life expectancy of aggregated raw data against life
/// expectancy from aggregated fitted deaths, per group and year.
inline std::vector<ValidationRow> validate_aggregation(
    const FitResult& fit, const MortalityArray& data,
    const std::map<std::string, std::string>& grouping, const LifeTableConventions& conv = {}) {
    MortalityArray fitted = data;
    fitted.deaths.vec() = fit.eta_hat.vec().array().exp() * data.exposures.vec().array();

    const MortalityArray direct = aggregate(data, grouping);
    const MortalityArray model = aggregate(fitted, grouping);

    std::vector<ValidationRow> rows;
    Eigen::VectorXd rates(direct.m());
    for (Eigen::Index g = 0; g < direct.n(); ++g)
        for (Eigen::Index k = 0; k < direct.l(); ++k) {
            ValidationRow row;
            row.group_id = direct.area_ids[static_cast<std::size_t>(g)];
            row.year = direct.years[static_cast<std::size_t>(k)];
            for (Eigen::Index i = 0; i < direct.m(); ++i)
                rates[i] = direct.exposures(i, g, k) > 0
                               ? direct.deaths(i, g, k) / direct.exposures(i, g, k)
                               : 0.0;
            row.e0_direct = life_table(rates, direct.ages, conv).e0;
            for (Eigen::Index i = 0; i < model.m(); ++i)
                rates[i] = model.exposures(i, g, k) > 0
                               ? model.deaths(i, g, k) / model.exposures(i, g, k)
                               : 0.0;
            row.e0_model = life_table(rates, model.ages, conv).e0;
            rows.push_back(std::move(row));
        }
    return rows;
}

} // namespace mortsurf
