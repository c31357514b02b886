#pragma once

#include "mortsurf/basis.hpp"
#include "mortsurf/errors.hpp"
#include "mortsurf/lifetable.hpp"
#include "mortsurf/penalty.hpp"
#include "mortsurf/simulate.hpp"
#include "mortsurf/solver.hpp"
#include "mortsurf/version.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace mortsurf {

struct DataPaths {
    std::string deaths, exposures, centroids;
    std::string sex = "female";
};

struct BootstrapSettings {
    int draws = 1000;
    std::uint64_t seed = 1;
    double level = 0.95;
};

/// One configuration file drives the whole pipeline; CLI flags override it.
struct AppConfig {
    DataPaths data;
    BasisConfig basis;
    std::optional<PenaltyConfig> penalty;
    std::optional<SearchGrids> grids;
    IterationControls controls;
    int workers = 1;
    BootstrapSettings bootstrap;
    LifeTableConventions lifetable;
    std::optional<Scenario> scenario;
    std::string output_dir = "out";
    std::string config_hash; // of the raw file bytes
};

/// Default smoothing-parameter grid: 10^-2 .. 10^6 in half-decade steps.
inline std::vector<double> default_grid() {
    std::vector<double> g;
    for (int i = -4; i <= 12; ++i) g.push_back(std::pow(10.0, 0.5 * i));
    return g;
}

namespace detail {

inline std::vector<double> grid_list(const nlohmann::json& j, const char* key) {
    if (!j.contains(key)) return default_grid();
    return j.at(key).get<std::vector<double>>();
}

} // namespace detail

inline AppConfig parse_config(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text, nullptr, true, true); // allow comments
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("config parse error: ") + e.what());
    }

    AppConfig cfg;
    cfg.config_hash = hash_hex(text);
    try {
        if (j.contains("data")) {
            const auto& d = j["data"];
            cfg.data.deaths = d.value("deaths", "");
            cfg.data.exposures = d.value("exposures", "");
            cfg.data.centroids = d.value("centroids", "");
            cfg.data.sex = d.value("sex", "female");
        }
        if (j.contains("basis")) {
            const auto& b = j["basis"];
            cfg.basis.c_a = b.value("c_a", cfg.basis.c_a);
            cfg.basis.c_t = b.value("c_t", cfg.basis.c_t);
            cfg.basis.c_lon = b.value("c_lon", cfg.basis.c_lon);
            cfg.basis.c_lat = b.value("c_lat", cfg.basis.c_lat);
            cfg.basis.c_a_reduced = b.value("c_a_reduced", cfg.basis.c_a_reduced);
            cfg.basis.c_t_reduced = b.value("c_t_reduced", cfg.basis.c_t_reduced);
            cfg.basis.degree = b.value("degree", cfg.basis.degree);
            cfg.basis.diff_order = b.value("diff_order", cfg.basis.diff_order);
            cfg.basis.shock_years =
                b.value("shock_years", std::vector<int>{});
        }
        if (j.contains("penalty")) {
            const auto& p = j["penalty"];
            PenaltyConfig pc;
            pc.lambda_a = p.at("lambda_a").get<double>();
            pc.lambda_t = p.at("lambda_t").get<double>();
            pc.lambda_lon = p.at("lambda_lon").get<double>();
            pc.lambda_lat = p.at("lambda_lat").get<double>();
            pc.lambda_a_reduced = p.at("lambda_a_reduced").get<double>();
            pc.lambda_t_reduced = p.value("lambda_t_reduced", 0.0);
            pc.kappa = p.at("kappa").get<double>();
            pc.ridge_epsilon = p.value("ridge_epsilon", pc.ridge_epsilon);
            cfg.penalty = pc;
        }
        if (j.contains("grid")) {
            const auto& g = j["grid"];
            SearchGrids grids;
            grids.lambda_a = detail::grid_list(g, "lambda_a");
            grids.lambda_t = detail::grid_list(g, "lambda_t");
            grids.lambda_lon = detail::grid_list(g, "lambda_lon");
            grids.lambda_lat = detail::grid_list(g, "lambda_lat");
            grids.lambda_a_reduced = detail::grid_list(g, "lambda_a_reduced");
            grids.kappa = detail::grid_list(g, "kappa");
            cfg.grids = grids;
        }
        if (j.contains("solver")) {
            const auto& s = j["solver"];
            cfg.controls.max_iterations = s.value("max_iterations", cfg.controls.max_iterations);
            cfg.controls.tol_theta = s.value("tol_theta", cfg.controls.tol_theta);
            cfg.controls.tol_deviance = s.value("tol_deviance", cfg.controls.tol_deviance);
            cfg.controls.max_step_halvings =
                s.value("max_step_halvings", cfg.controls.max_step_halvings);
            cfg.controls.include_totals_in_ic =
                s.value("include_totals_in_ic", cfg.controls.include_totals_in_ic);
            cfg.workers = s.value("workers", cfg.workers);
        }
        if (j.contains("bootstrap")) {
            const auto& b = j["bootstrap"];
            cfg.bootstrap.draws = b.value("draws", cfg.bootstrap.draws);
            cfg.bootstrap.seed = b.value("seed", cfg.bootstrap.seed);
            cfg.bootstrap.level = b.value("level", cfg.bootstrap.level);
        }
        if (j.contains("lifetable")) {
            const auto& t = j["lifetable"];
            cfg.lifetable.a0 = t.value("a0", cfg.lifetable.a0);
            cfg.lifetable.ax = t.value("ax", cfg.lifetable.ax);
        }
        if (j.contains("simulate")) {
            const auto& s = j["simulate"];
            Scenario sc;
            sc.m = s.value("m", static_cast<long long>(sc.m));
            sc.n = s.value("n", static_cast<long long>(sc.n));
            sc.l = s.value("l", static_cast<long long>(sc.l));
            sc.mean_exposure = s.value("mean_exposure", sc.mean_exposure);
            sc.exposure_cv = s.value("exposure_cv", sc.exposure_cv);
            sc.infant_log_rate = s.value("infant_log_rate", sc.infant_log_rate);
            sc.gompertz_log_level = s.value("gompertz_log_level", sc.gompertz_log_level);
            sc.gompertz_slope = s.value("gompertz_slope", sc.gompertz_slope);
            sc.trend_slope = s.value("trend_slope", sc.trend_slope);
            sc.spatial_amplitude = s.value("spatial_amplitude", sc.spatial_amplitude);
            sc.first_year = s.value("first_year", sc.first_year);
            sc.seed = s.value("seed", sc.seed);
            sc.sex = s.value("sex", sc.sex);
            if (s.contains("gamma_outliers"))
                for (const auto& pair : s["gamma_outliers"])
                    sc.gamma_outliers.emplace_back(pair.at(0).get<long long>(),
                                                   pair.at(1).get<double>());
            if (s.contains("shocks"))
                for (const auto& pair : s["shocks"])
                    sc.shocks.emplace_back(pair.at(0).get<int>(), pair.at(1).get<double>());
            cfg.scenario = sc;
        }
        if (j.contains("output")) cfg.output_dir = j["output"].value("dir", cfg.output_dir);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("config error: ") + e.what());
    }
    return cfg;
}

inline AppConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

} // namespace mortsurf
