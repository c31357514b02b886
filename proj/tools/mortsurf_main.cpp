#include "mortsurf/mortsurf.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace mortsurf;

namespace {

/// Files written by a command; removed again if the command fails partway.
class OutputGuard {
  public:
    std::string track(const std::string& path) {
        written_.push_back(path);
        return path;
    }
    void commit() { written_.clear(); }
    ~OutputGuard() {
        for (const auto& p : written_) {
            std::error_code ec;
            fs::remove(p, ec);
        }
    }

  private:
    std::vector<std::string> written_;
};

std::string stamp(const std::string& config_hash) {
    return "mortsurf " + std::string(version) + " config=" + config_hash;
}

std::string num(double v) { return csv::format_number(v); }

Eigen::Index year_index(const MortalityArray& data, int year) {
    for (Eigen::Index k = 0; k < data.l(); ++k)
        if (data.years[static_cast<std::size_t>(k)] == year) return k;
    throw DataError("year " + std::to_string(year) + " outside the fitted range " +
                    std::to_string(data.years.front()) + "-" + std::to_string(data.years.back()));
}

std::map<std::string, std::string> load_grouping(const std::string& path) {
    std::map<std::string, std::string> grouping;
    for (const auto& row : csv::read_table(path, "area_id,group_id")) {
        if (row.size() != 2) throw DataError("malformed row in " + path);
        grouping[row[0]] = row[1];
    }
    return grouping;
}

struct LoadedModel {
    ModelArtifact artifact;
    BasisSet basis;
    BlockDesign design;
    AugmentedArray augmented;
};

LoadedModel load_model(const std::string& path) {
    LoadedModel m{load_artifact(path), {}, {}, {}};
    m.basis = build_basis_set(m.artifact.data, m.artifact.basis_config);
    m.design = BlockDesign::from_basis(m.basis);
    m.augmented = augment_with_totals(m.artifact.data);
    return m;
}

/// Per-area life expectancy at the selected year indices for one coefficient
/// vector; result is (areas x selected years).
Eigen::MatrixXd e0_for_theta(const BlockDesign& design, const Eigen::VectorXd& theta,
                             const MortalityArray& data, const std::vector<Eigen::Index>& ks,
                             const LifeTableConventions& conv) {
    const LinearPredictor lp = linear_predictor(design, theta);
    Eigen::MatrixXd out(data.n(), static_cast<Eigen::Index>(ks.size()));
    Eigen::VectorXd rates(data.m());
    for (std::size_t c = 0; c < ks.size(); ++c)
        for (Eigen::Index j = 0; j < data.n(); ++j) {
            for (Eigen::Index i = 0; i < data.m(); ++i)
                rates[i] = std::exp(lp.areas(i, j, ks[c]));
            out(j, static_cast<Eigen::Index>(c)) = life_table(rates, data.ages, conv).e0;
        }
    return out;
}

/// Bootstrap e0 per area at the selected years: point estimate plus
/// equal-tailed quantile bounds across draws.
struct E0Intervals {
    Eigen::MatrixXd point, lo, hi; // areas x selected years
};

E0Intervals bootstrap_e0(const LoadedModel& m, const BootstrapDraws& draws,
                         const std::vector<Eigen::Index>& ks, double level, int workers) {
    const MortalityArray& data = m.artifact.data;
    E0Intervals out;
    out.point = e0_for_theta(m.design, m.artifact.fit.theta, data, ks, m.artifact.lifetable);
    out.lo.resizeLike(out.point);
    out.hi.resizeLike(out.point);

    std::vector<Eigen::MatrixXd> per_draw(static_cast<std::size_t>(draws.B));
    detail::parallel_for(draws.B, workers, [&](Eigen::Index b) {
        per_draw[static_cast<std::size_t>(b)] =
            e0_for_theta(m.design, draws.draws.row(b).transpose(), data, ks, m.artifact.lifetable);
    });
    std::vector<double> values(static_cast<std::size_t>(draws.B));
    for (Eigen::Index j = 0; j < out.point.rows(); ++j)
        for (Eigen::Index c = 0; c < out.point.cols(); ++c) {
            for (int b = 0; b < draws.B; ++b)
                values[static_cast<std::size_t>(b)] = per_draw[static_cast<std::size_t>(b)](j, c);
            std::sort(values.begin(), values.end());
            out.lo(j, c) = detail::empirical_quantile(values, (1.0 - level) / 2.0);
            out.hi(j, c) = detail::empirical_quantile(values, (1.0 + level) / 2.0);
        }
    return out;
}

/// Interval for aggregate-level e0 per selected year from the totals-only
/// reference model.
struct ReferenceIntervals {
    std::vector<double> lo, hi;
};

ReferenceIntervals reference_e0_intervals(const LoadedModel& m,
                                          const std::vector<Eigen::Index>& ks, int draws_count,
                                          std::uint64_t seed, double level, int workers,
                                          const IterationControls& controls) {
    FitResult ref = fit_totals(m.augmented, m.basis, m.artifact.penalty.lambda_a,
                               m.artifact.penalty.lambda_t, controls,
                               m.artifact.penalty.ridge_epsilon);
    BootstrapDraws draws = sample_coefficients(ref, draws_count, seed, workers);
    const BlockDesign totals_design = BlockDesign::totals_only(m.basis);
    const MortalityArray& data = m.artifact.data;

    ReferenceIntervals out;
    for (Eigen::Index k : ks) {
        std::vector<double> values(static_cast<std::size_t>(draws.B));
        Eigen::VectorXd rates(data.m());
        for (int b = 0; b < draws.B; ++b) {
            const LinearPredictor lp =
                linear_predictor(totals_design, draws.draws.row(b).transpose());
            for (Eigen::Index i = 0; i < data.m(); ++i) rates[i] = std::exp(lp.totals(i, k));
            values[static_cast<std::size_t>(b)] = life_table(rates, data.ages, m.artifact.lifetable).e0;
        }
        std::sort(values.begin(), values.end());
        out.lo.push_back(detail::empirical_quantile(values, (1.0 - level) / 2.0));
        out.hi.push_back(detail::empirical_quantile(values, (1.0 + level) / 2.0));
    }
    return out;
}

int cmd_fit(const std::string& config_path, int workers_override) {
    AppConfig cfg = load_config(config_path);
    if (workers_override > 0) cfg.workers = workers_override;
    if (cfg.data.deaths.empty())
        throw DataError("config has no data.deaths entry");

    OutputGuard guard;
    fs::create_directories(cfg.output_dir);

    MortalityArray raw =
        load_csv(cfg.data.deaths, cfg.data.exposures, cfg.data.centroids, cfg.data.sex);
    auto [repaired, report] = repair_exposures(raw);
    write_repair_report(report, guard.track(cfg.output_dir + "/repairs.csv"),
                        stamp(cfg.config_hash));
    AugmentedArray augmented = augment_with_totals(repaired);
    BasisSet basis = build_basis_set(repaired, cfg.basis);

    PenaltyConfig penalty;
    if (cfg.penalty) {
        penalty = *cfg.penalty;
    } else if (cfg.grids) {
        std::cout << "no penalty section; selecting smoothing parameters by grid search\n";
        penalty = grid_search(augmented, basis, *cfg.grids, cfg.controls, cfg.workers).best;
    } else {
        throw DataError("config needs either a penalty section or a grid section");
    }

    FitResult fit_result = fit(augmented, basis, penalty, cfg.controls);

    ModelArtifact artifact{repaired,      cfg.basis,     penalty,        cfg.controls,
                           cfg.bootstrap, cfg.lifetable, fit_result,     cfg.config_hash};
    const std::string artifact_path = guard.track(cfg.output_dir + "/model.bin");
    save_artifact(artifact, artifact_path);

    std::cout << "cells: " << raw.deaths.size() << " (m=" << raw.m() << " ages, n=" << raw.n()
              << " areas, l=" << raw.l() << " years)\n"
              << "repaired cells: " << report.cells.size() << "\n"
              << "iterations: " << fit_result.iterations
              << (fit_result.converged ? " (converged)" : " (not converged)") << "\n"
              << "deviance: " << num(fit_result.deviance) << "\n"
              << "effective dimension: " << num(fit_result.effective_dimension) << "\n"
              << "hqic: " << num(fit_result.hqic) << "\n"
              << "artifact: " << artifact_path << "\n";
    guard.commit();
    return 0;
}

int cmd_grid(const std::string& config_path, int workers_override) {
    AppConfig cfg = load_config(config_path);
    if (workers_override > 0) cfg.workers = workers_override;
    if (!cfg.grids) throw DataError("config has no grid section");

    OutputGuard guard;
    fs::create_directories(cfg.output_dir);

    MortalityArray raw =
        load_csv(cfg.data.deaths, cfg.data.exposures, cfg.data.centroids, cfg.data.sex);
    auto [repaired, report] = repair_exposures(raw);
    AugmentedArray augmented = augment_with_totals(repaired);
    BasisSet basis = build_basis_set(repaired, cfg.basis);

    GridSearchResult result =
        grid_search(augmented, basis, *cfg.grids, cfg.controls, cfg.workers);

    {
        csv::Writer w(guard.track(cfg.output_dir + "/stage1.csv"), stamp(cfg.config_hash),
                      "lambda_a,lambda_t,deviance,ed,hqic,status");
        for (const auto& p : result.stage1)
            w.row({num(p.lambda_a), num(p.lambda_t), num(p.deviance), num(p.ed), num(p.hqic),
                   p.status});
    }
    {
        csv::Writer w(guard.track(cfg.output_dir + "/stage2.csv"), stamp(cfg.config_hash),
                      "lambda_lon,lambda_lat,lambda_a_reduced,kappa,deviance,ed,hqic,status");
        for (const auto& p : result.stage2)
            w.row({num(p.lambda_lon), num(p.lambda_lat), num(p.lambda_a_reduced), num(p.kappa),
                   num(p.deviance), num(p.ed), num(p.hqic), p.status});
    }
    {
        std::ofstream best(guard.track(cfg.output_dir + "/best.json"));
        best << "{\n  \"penalty\": {\n"
             << "    \"lambda_a\": " << num(result.best.lambda_a) << ",\n"
             << "    \"lambda_t\": " << num(result.best.lambda_t) << ",\n"
             << "    \"lambda_lon\": " << num(result.best.lambda_lon) << ",\n"
             << "    \"lambda_lat\": " << num(result.best.lambda_lat) << ",\n"
             << "    \"lambda_a_reduced\": " << num(result.best.lambda_a_reduced) << ",\n"
             << "    \"lambda_t_reduced\": " << num(result.best.lambda_t_reduced) << ",\n"
             << "    \"kappa\": " << num(result.best.kappa) << "\n  }\n}\n";
    }
    std::cout << "stage1 points: " << result.stage1.size()
              << ", stage2 points: " << result.stage2.size() << "\n"
              << "best: lambda_a=" << num(result.best.lambda_a)
              << " lambda_t=" << num(result.best.lambda_t)
              << " lambda_lon=" << num(result.best.lambda_lon)
              << " lambda_lat=" << num(result.best.lambda_lat)
              << " lambda_a_reduced=" << num(result.best.lambda_a_reduced)
              << " kappa=" << num(result.best.kappa) << "\n";
    guard.commit();
    return 0;
}

struct DeriveOptions {
    std::string what;
    std::vector<int> years;
    int from_year = 0, to_year = 0;
    double level = 0.0;  // 0: use artifact setting
    int draws = -1;      // <0: use artifact setting
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string target = "level";  // significance: level | change
    std::string rule = "overlap";  // change significance: overlap | difference
    std::string out_dir;
    int workers = 1;
};

int cmd_derive(const std::string& artifact_path, const DeriveOptions& opt) {
    LoadedModel m = load_model(artifact_path);
    const MortalityArray& data = m.artifact.data;
    const std::string comment = stamp(m.artifact.config_hash);
    const double level = opt.level > 0 ? opt.level : m.artifact.bootstrap.level;
    const int draws_count = opt.draws >= 0 ? opt.draws : m.artifact.bootstrap.draws;
    const std::uint64_t seed = opt.seed_set ? opt.seed : m.artifact.bootstrap.seed;

    OutputGuard guard;
    const std::string out_dir = opt.out_dir.empty() ? "." : opt.out_dir;
    fs::create_directories(out_dir);

    std::vector<Eigen::Index> ks;
    if (opt.years.empty())
        for (Eigen::Index k = 0; k < data.l(); ++k) ks.push_back(k);
    else
        for (int y : opt.years) ks.push_back(year_index(data, y));

    if (opt.what == "e0") {
        BootstrapDraws draws = sample_coefficients(m.artifact.fit, draws_count, seed, opt.workers);
        E0Intervals e0 = bootstrap_e0(m, draws, ks, level, opt.workers);
        csv::Writer w(guard.track(out_dir + "/e0.csv"), comment, "area_id,year,e0,lo,hi");
        for (std::size_t c = 0; c < ks.size(); ++c)
            for (Eigen::Index j = 0; j < data.n(); ++j)
                w.row({data.area_ids[static_cast<std::size_t>(j)],
                       std::to_string(data.years[static_cast<std::size_t>(ks[c])]),
                       num(e0.point(j, static_cast<Eigen::Index>(c))),
                       num(e0.lo(j, static_cast<Eigen::Index>(c))),
                       num(e0.hi(j, static_cast<Eigen::Index>(c)))});
    } else if (opt.what == "id") {
        Array3 fitted = m.artifact.fit.eta_hat;
        fitted.vec() = fitted.vec().array().exp() * data.exposures.vec().array();
        csv::Writer w(guard.track(out_dir + "/id.csv"), comment, "age,year,id");
        for (Eigen::Index k : ks)
            for (Eigen::Index i = 0; i < data.m(); ++i)
                w.row({std::to_string(data.ages[static_cast<std::size_t>(i)]),
                       std::to_string(data.years[static_cast<std::size_t>(k)]),
                       num(dissimilarity_index(fitted, data.exposures, i, k))});
    } else if (opt.what == "change") {
        const std::vector<Eigen::Index> pair = {year_index(data, opt.from_year),
                                                year_index(data, opt.to_year)};
        Eigen::MatrixXd e0 =
            e0_for_theta(m.design, m.artifact.fit.theta, data, pair, m.artifact.lifetable);
        csv::Writer w(guard.track(out_dir + "/change.csv"), comment,
                      "area_id,e0_from,e0_to,change");
        for (Eigen::Index j = 0; j < data.n(); ++j)
            w.row({data.area_ids[static_cast<std::size_t>(j)], num(e0(j, 0)), num(e0(j, 1)),
                   num(e0(j, 1) - e0(j, 0))});
    } else if (opt.what == "significance") {
        BootstrapDraws draws = sample_coefficients(m.artifact.fit, draws_count, seed, opt.workers);
        if (opt.target == "level") {
            ReferenceIntervals ref = reference_e0_intervals(m, ks, draws_count, seed + 1, level,
                                                            opt.workers, m.artifact.controls);
            E0Intervals e0 = bootstrap_e0(m, draws, ks, level, opt.workers);
            csv::Writer w(guard.track(out_dir + "/significance.csv"), comment,
                          "area_id,year,e0,lo,hi,ref_lo,ref_hi,label");
            for (std::size_t c = 0; c < ks.size(); ++c)
                for (Eigen::Index j = 0; j < data.n(); ++j) {
                    const auto cc = static_cast<Eigen::Index>(c);
                    const Significance label = classify_significance(
                        e0.lo(j, cc), e0.hi(j, cc), ref.lo[c], ref.hi[c]);
                    w.row({data.area_ids[static_cast<std::size_t>(j)],
                           std::to_string(data.years[static_cast<std::size_t>(ks[c])]),
                           num(e0.point(j, cc)), num(e0.lo(j, cc)), num(e0.hi(j, cc)),
                           num(ref.lo[c]), num(ref.hi[c]), to_string(label)});
                }
        } else if (opt.target == "change") {
            const std::vector<Eigen::Index> pair = {year_index(data, opt.from_year),
                                                    year_index(data, opt.to_year)};
            E0Intervals e0 = bootstrap_e0(m, draws, pair, level, opt.workers);
            csv::Writer w(
                guard.track(out_dir + "/significance.csv"), comment,
                "area_id,e0_from,lo_from,hi_from,e0_to,lo_to,hi_to,change,change_lo,change_hi,"
                "label");
            std::vector<Eigen::MatrixXd> per_draw;
            if (opt.rule == "difference") {
                per_draw.resize(static_cast<std::size_t>(draws.B));
                detail::parallel_for(draws.B, opt.workers, [&](Eigen::Index b) {
                    per_draw[static_cast<std::size_t>(b)] = e0_for_theta(
                        m.design, draws.draws.row(b).transpose(), data, pair, m.artifact.lifetable);
                });
            }
            for (Eigen::Index j = 0; j < data.n(); ++j) {
                Significance label;
                std::string change_lo, change_hi;
                if (opt.rule == "difference") {
                    std::vector<double> diff(static_cast<std::size_t>(draws.B));
                    for (int b = 0; b < draws.B; ++b) {
                        const auto& d = per_draw[static_cast<std::size_t>(b)];
                        diff[static_cast<std::size_t>(b)] = d(j, 1) - d(j, 0);
                    }
                    std::sort(diff.begin(), diff.end());
                    const double lo = detail::empirical_quantile(diff, (1.0 - level) / 2.0);
                    const double hi = detail::empirical_quantile(diff, (1.0 + level) / 2.0);
                    label = lo > 0   ? Significance::above
                            : hi < 0 ? Significance::below
                                     : Significance::overlap;
                    change_lo = num(lo);
                    change_hi = num(hi);
                } else {
                    label = classify_significance(e0.lo(j, 1), e0.hi(j, 1), e0.lo(j, 0),
                                                  e0.hi(j, 0));
                }
                w.row({data.area_ids[static_cast<std::size_t>(j)], num(e0.point(j, 0)),
                       num(e0.lo(j, 0)), num(e0.hi(j, 0)), num(e0.point(j, 1)), num(e0.lo(j, 1)),
                       num(e0.hi(j, 1)), num(e0.point(j, 1) - e0.point(j, 0)), change_lo,
                       change_hi, to_string(label)});
            }
        } else {
            throw DataError("unknown significance target: " + opt.target);
        }
    } else {
        throw DataError("unknown derive target: " + opt.what +
                        " (expected e0, id, change or significance)");
    }
    guard.commit();
    return 0;
}

int cmd_validate(const std::string& artifact_path, const std::string& grouping_path,
                 const std::string& out_dir_opt) {
    LoadedModel m = load_model(artifact_path);
    const auto grouping = load_grouping(grouping_path);
    const auto rows =
        validate_aggregation(m.artifact.fit, m.artifact.data, grouping, m.artifact.lifetable);

    OutputGuard guard;
    const std::string out_dir = out_dir_opt.empty() ? "." : out_dir_opt;
    fs::create_directories(out_dir);
    csv::Writer w(guard.track(out_dir + "/validate.csv"), stamp(m.artifact.config_hash),
                  "group_id,year,e0_direct,e0_model");
    for (const auto& r : rows)
        w.row({r.group_id, std::to_string(r.year), num(r.e0_direct), num(r.e0_model)});
    std::cout << "groups x years: " << rows.size() << "\n";
    guard.commit();
    return 0;
}

int cmd_simulate(const std::string& config_path) {
    AppConfig cfg = load_config(config_path);
    if (!cfg.scenario) throw DataError("config has no simulate section");

    OutputGuard guard;
    fs::create_directories(cfg.output_dir);
    auto [data, truth] = generate(*cfg.scenario);
    write_csv(data, guard.track(cfg.output_dir + "/deaths.csv"),
              guard.track(cfg.output_dir + "/exposures.csv"),
              guard.track(cfg.output_dir + "/centroids.csv"), stamp(cfg.config_hash));
    csv::Writer w(guard.track(cfg.output_dir + "/truth_eta.csv"), stamp(cfg.config_hash),
                  "age,area_id,year,eta");
    for (Eigen::Index k = 0; k < data.l(); ++k)
        for (Eigen::Index j = 0; j < data.n(); ++j)
            for (Eigen::Index i = 0; i < data.m(); ++i)
                w.row({std::to_string(data.ages[static_cast<std::size_t>(i)]),
                       data.area_ids[static_cast<std::size_t>(j)],
                       std::to_string(data.years[static_cast<std::size_t>(k)]),
                       num(truth(i, j, k))});
    std::cout << "simulated " << data.deaths.size() << " cells into " << cfg.output_dir << "\n";
    guard.commit();
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Small-area mortality surfaces: penalized age-space-time smoothing"};
    app.require_subcommand(1);

    std::string config_path, artifact_path, grouping_path, out_dir;
    int workers = 0;
    DeriveOptions dopt;

    auto* fit_cmd = app.add_subcommand("fit", "fit the model and write a model artifact");
    fit_cmd->add_option("config", config_path, "configuration file")->required();
    fit_cmd->add_option("--workers", workers, "parallel fits during any grid search");

    auto* grid_cmd = app.add_subcommand("grid", "staged smoothing-parameter search");
    grid_cmd->add_option("config", config_path, "configuration file")->required();
    grid_cmd->add_option("--workers", workers, "parallel fits across grid points");

    auto* derive_cmd = app.add_subcommand("derive", "derived quantities from a model artifact");
    derive_cmd->add_option("artifact", artifact_path, "model artifact from `fit`")->required();
    derive_cmd->add_option("what", dopt.what, "e0 | id | change | significance")->required();
    derive_cmd->add_option("--years", dopt.years, "calendar years (default: all)");
    derive_cmd->add_option("--from", dopt.from_year, "first year of a change pair");
    derive_cmd->add_option("--to", dopt.to_year, "second year of a change pair");
    derive_cmd->add_option("--level", dopt.level, "interval level (default from artifact)");
    derive_cmd->add_option("--draws", dopt.draws, "bootstrap draws (default from artifact)");
    derive_cmd->add_option("--seed", dopt.seed, "bootstrap seed (default from artifact)")
        ->each([&](const std::string&) { dopt.seed_set = true; });
    derive_cmd->add_option("--target", dopt.target, "significance target: level | change");
    derive_cmd->add_option("--rule", dopt.rule, "change significance rule: overlap | difference");
    derive_cmd->add_option("--out", dopt.out_dir, "output directory (default: current)");
    derive_cmd->add_option("--workers", dopt.workers, "parallel bootstrap evaluation");

    auto* validate_cmd =
        app.add_subcommand("validate", "compare aggregated fits against direct estimates");
    validate_cmd->add_option("artifact", artifact_path, "model artifact from `fit`")->required();
    validate_cmd->add_option("grouping", grouping_path, "CSV mapping area_id,group_id")
        ->required();
    validate_cmd->add_option("--out", out_dir, "output directory (default: current)");

    auto* sim_cmd = app.add_subcommand("simulate", "generate synthetic data with known truth");
    sim_cmd->add_option("config", config_path, "configuration file with a simulate section")
        ->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (fit_cmd->parsed()) return cmd_fit(config_path, workers);
        if (grid_cmd->parsed()) return cmd_grid(config_path, workers);
        if (derive_cmd->parsed()) {
            if (dopt.what == "change" ||
                (dopt.what == "significance" && dopt.target == "change")) {
                if (dopt.from_year == 0 || dopt.to_year == 0)
                    throw DataError("change output needs --from and --to years");
            }
            return cmd_derive(artifact_path, dopt);
        }
        if (validate_cmd->parsed()) return cmd_validate(artifact_path, grouping_path, out_dir);
        if (sim_cmd->parsed()) return cmd_simulate(config_path);
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 1;
}
