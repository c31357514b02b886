#pragma once

#include "mortsurf/config.hpp"
#include "mortsurf/data.hpp"
#include "mortsurf/glam.hpp"
#include "mortsurf/solver.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

namespace mortsurf {

static_assert(std::endian::native == std::endian::little,
              "artifact container assumes a little-endian host");

/// Everything a later `derive` or `validate` run needs: the repaired data,
/// the configuration that produced the fit, and the fit itself (coefficients
/// plus the Cholesky factor of the penalized normal matrix).
struct ModelArtifact {
    MortalityArray data; // repaired
    BasisConfig basis_config;
    PenaltyConfig penalty;
    IterationControls controls;
    BootstrapSettings bootstrap;
    LifeTableConventions lifetable;
    FitResult fit;
    std::string config_hash;
};

namespace detail {

constexpr char artifact_magic[4] = {'M', 'S', 'R', 'F'};
constexpr std::uint32_t artifact_version = 1;

class BinWriter {
  public:
    explicit BinWriter(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw DataError("cannot write artifact: " + path);
    }
    template <typename T> void put(T v) {
        out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }
    void put_string(const std::string& s) {
        put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    void put_doubles(const double* p, std::size_t count) {
        out_.write(reinterpret_cast<const char*>(p),
                   static_cast<std::streamsize>(count * sizeof(double)));
    }
    bool good() const { return out_.good(); }

  private:
    std::ofstream out_;
};

class BinReader {
  public:
    explicit BinReader(const std::string& path) : in_(path, std::ios::binary) {
        if (!in_) throw DataError("cannot open artifact: " + path);
    }
    template <typename T> T get() {
        T v{};
        in_.read(reinterpret_cast<char*>(&v), sizeof(T));
        if (!in_) throw DataError("truncated artifact file");
        return v;
    }
    std::string get_string() {
        auto size = get<std::uint32_t>();
        std::string s(size, '\0');
        in_.read(s.data(), size);
        if (!in_) throw DataError("truncated artifact file");
        return s;
    }
    void get_doubles(double* p, std::size_t count) {
        in_.read(reinterpret_cast<char*>(p),
                 static_cast<std::streamsize>(count * sizeof(double)));
        if (!in_) throw DataError("truncated artifact file");
    }

  private:
    std::ifstream in_;
};

} // namespace detail

inline void save_artifact(const ModelArtifact& a, const std::string& path) {
    detail::BinWriter w(path);
    for (char c : detail::artifact_magic) w.put<char>(c);
    w.put<std::uint32_t>(detail::artifact_version);

    const MortalityArray& d = a.data;
    w.put<std::int64_t>(d.m());
    w.put<std::int64_t>(d.n());
    w.put<std::int64_t>(d.l());
    for (int age : d.ages) w.put<std::int32_t>(age);
    for (int year : d.years) w.put<std::int32_t>(year);
    for (const auto& id : d.area_ids) w.put_string(id);
    for (Eigen::Index j = 0; j < d.n(); ++j) {
        w.put<double>(d.centroids(j, 0));
        w.put<double>(d.centroids(j, 1));
    }
    w.put_string(d.sex);
    w.put_doubles(d.deaths.vec().data(), static_cast<std::size_t>(d.deaths.size()));
    w.put_doubles(d.exposures.vec().data(), static_cast<std::size_t>(d.exposures.size()));

    const BasisConfig& b = a.basis_config;
    for (int v : {b.c_a, b.c_t, b.c_lon, b.c_lat, b.c_a_reduced, b.c_t_reduced, b.degree,
                  b.diff_order})
        w.put<std::int32_t>(v);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(b.shock_years.size()));
    for (int y : b.shock_years) w.put<std::int32_t>(y);

    for (double v : {a.penalty.lambda_a, a.penalty.lambda_t, a.penalty.lambda_lon,
                     a.penalty.lambda_lat, a.penalty.lambda_a_reduced, a.penalty.lambda_t_reduced,
                     a.penalty.kappa, a.penalty.ridge_epsilon})
        w.put<double>(v);

    w.put<std::int32_t>(a.controls.max_iterations);
    w.put<double>(a.controls.tol_theta);
    w.put<double>(a.controls.tol_deviance);
    w.put<std::int32_t>(a.controls.max_step_halvings);
    w.put<std::uint8_t>(a.controls.include_totals_in_ic ? 1 : 0);

    const Eigen::Index k = a.fit.theta.size();
    w.put<std::int64_t>(k);
    w.put_doubles(a.fit.theta.data(), static_cast<std::size_t>(k));
    for (Eigen::Index c = 0; c < k; ++c) // packed lower triangle, column by column
        w.put_doubles(a.fit.penalized_normal_factor.col(c).data() + c,
                      static_cast<std::size_t>(k - c));
    w.put<double>(a.fit.deviance);
    w.put<double>(a.fit.effective_dimension);
    w.put<double>(a.fit.hqic);
    w.put<std::uint8_t>(a.fit.converged ? 1 : 0);
    w.put<std::int32_t>(a.fit.iterations);

    w.put<std::int32_t>(a.bootstrap.draws);
    w.put<std::uint64_t>(a.bootstrap.seed);
    w.put<double>(a.bootstrap.level);
    w.put<double>(a.lifetable.a0);
    w.put<double>(a.lifetable.ax);
    w.put_string(a.config_hash);
    if (!w.good()) throw DataError("failed writing artifact: " + path);
}

inline ModelArtifact load_artifact(const std::string& path) {
    detail::BinReader r(path);
    char magic[4];
    magic[0] = r.get<char>();
    magic[1] = r.get<char>();
    magic[2] = r.get<char>();
    magic[3] = r.get<char>();
    if (std::memcmp(magic, detail::artifact_magic, 4) != 0)
        throw DataError("not a model artifact: " + path);
    const auto version = r.get<std::uint32_t>();
    if (version != detail::artifact_version)
        throw DataError("unsupported artifact version " + std::to_string(version) +
                        " (this build reads version " +
                        std::to_string(detail::artifact_version) + "): " + path);

    ModelArtifact a;
    MortalityArray& d = a.data;
    const auto m = static_cast<Eigen::Index>(r.get<std::int64_t>());
    const auto n = static_cast<Eigen::Index>(r.get<std::int64_t>());
    const auto l = static_cast<Eigen::Index>(r.get<std::int64_t>());
    d.ages.resize(static_cast<std::size_t>(m));
    for (auto& age : d.ages) age = r.get<std::int32_t>();
    d.years.resize(static_cast<std::size_t>(l));
    for (auto& year : d.years) year = r.get<std::int32_t>();
    d.area_ids.resize(static_cast<std::size_t>(n));
    for (auto& id : d.area_ids) id = r.get_string();
    d.centroids.resize(n, 2);
    for (Eigen::Index j = 0; j < n; ++j) {
        d.centroids(j, 0) = r.get<double>();
        d.centroids(j, 1) = r.get<double>();
    }
    d.sex = r.get_string();
    d.deaths = Array3(m, n, l);
    d.exposures = Array3(m, n, l);
    r.get_doubles(d.deaths.vec().data(), static_cast<std::size_t>(d.deaths.size()));
    r.get_doubles(d.exposures.vec().data(), static_cast<std::size_t>(d.exposures.size()));

    BasisConfig& b = a.basis_config;
    b.c_a = r.get<std::int32_t>();
    b.c_t = r.get<std::int32_t>();
    b.c_lon = r.get<std::int32_t>();
    b.c_lat = r.get<std::int32_t>();
    b.c_a_reduced = r.get<std::int32_t>();
    b.c_t_reduced = r.get<std::int32_t>();
    b.degree = r.get<std::int32_t>();
    b.diff_order = r.get<std::int32_t>();
    b.shock_years.resize(r.get<std::uint32_t>());
    for (auto& y : b.shock_years) y = r.get<std::int32_t>();

    a.penalty.lambda_a = r.get<double>();
    a.penalty.lambda_t = r.get<double>();
    a.penalty.lambda_lon = r.get<double>();
    a.penalty.lambda_lat = r.get<double>();
    a.penalty.lambda_a_reduced = r.get<double>();
    a.penalty.lambda_t_reduced = r.get<double>();
    a.penalty.kappa = r.get<double>();
    a.penalty.ridge_epsilon = r.get<double>();

    a.controls.max_iterations = r.get<std::int32_t>();
    a.controls.tol_theta = r.get<double>();
    a.controls.tol_deviance = r.get<double>();
    a.controls.max_step_halvings = r.get<std::int32_t>();
    a.controls.include_totals_in_ic = r.get<std::uint8_t>() != 0;

    const auto k = static_cast<Eigen::Index>(r.get<std::int64_t>());
    a.fit.theta.resize(k);
    r.get_doubles(a.fit.theta.data(), static_cast<std::size_t>(k));
    a.fit.penalized_normal_factor = Eigen::MatrixXd::Zero(k, k);
    for (Eigen::Index c = 0; c < k; ++c)
        r.get_doubles(a.fit.penalized_normal_factor.col(c).data() + c,
                      static_cast<std::size_t>(k - c));
    a.fit.deviance = r.get<double>();
    a.fit.effective_dimension = r.get<double>();
    a.fit.hqic = r.get<double>();
    a.fit.converged = r.get<std::uint8_t>() != 0;
    a.fit.iterations = r.get<std::int32_t>();

    a.bootstrap.draws = r.get<std::int32_t>();
    a.bootstrap.seed = r.get<std::uint64_t>();
    a.bootstrap.level = r.get<double>();
    a.lifetable.a0 = r.get<double>();
    a.lifetable.ax = r.get<double>();
    a.config_hash = r.get_string();

    // Rebuild the design deterministically and re-evaluate the fitted surface.
    const BasisSet basis = build_basis_set(d, b);
    const BlockDesign design = BlockDesign::from_basis(basis);
    a.fit.layout = design.layout();
    if (a.fit.layout.total() != k)
        throw DataError("artifact is inconsistent: coefficient count does not match its basis");
    const LinearPredictor lp = linear_predictor(design, a.fit.theta);
    a.fit.eta_hat = lp.areas;
    a.fit.eta_totals = lp.totals;
    return a;
}

} // namespace mortsurf
