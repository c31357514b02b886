#pragma once

#include "mortsurf/array3.hpp"
#include "mortsurf/csv.hpp"
#include "mortsurf/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace mortsurf {

/// Deaths and exposures on a dense (age x area x year) grid, with planar
/// centroid coordinates per area. One array per sex.
struct MortalityArray {
    Array3 deaths;
    Array3 exposures;
    std::vector<int> ages;  // strictly increasing; last entry is the open interval
    std::vector<int> years; // strictly increasing, unit step
    std::vector<std::string> area_ids;
    Eigen::MatrixX2d centroids; // (x, y) per area
    std::string sex;

    Eigen::Index m() const { return static_cast<Eigen::Index>(ages.size()); }
    Eigen::Index n() const { return static_cast<Eigen::Index>(area_ids.size()); }
    Eigen::Index l() const { return static_cast<Eigen::Index>(years.size()); }
};

/// MortalityArray plus the across-area totals used to augment the model.
struct AugmentedArray {
    MortalityArray base;
    Eigen::MatrixXd totals_deaths;    // m x l
    Eigen::MatrixXd totals_exposures; // m x l
};

struct RepairedCell {
    int age;
    std::string area_id;
    int year;
    double old_exposure;
    double new_exposure;
};

struct RepairReport {
    std::vector<RepairedCell> cells;
};

namespace detail {

inline std::string cell_key(int age, const std::string& area, int year) {
    return "(age=" + std::to_string(age) + ", area_id=" + area + ", year=" + std::to_string(year) +
           ")";
}

struct CountFile {
    std::vector<int> ages, years;
    std::vector<std::string> areas;
    // value indexed as age + m * (area + n * year), filled densely
    std::vector<double> values;
};

inline CountFile read_count_file(const std::string& path) {
    auto rows = csv::read_table(path, "age,area_id,year,count");
    std::set<int> age_set, year_set;
    std::set<std::string> area_set;
    struct Row {
        int age, year;
        std::string area;
        double count;
    };
    std::vector<Row> parsed;
    parsed.reserve(rows.size());
    for (const auto& r : rows) {
        if (r.size() != 4) throw DataError("malformed row in " + path);
        Row row;
        row.age = static_cast<int>(csv::parse_int(r[0], "age"));
        row.area = r[1];
        row.year = static_cast<int>(csv::parse_int(r[2], "year"));
        row.count = csv::parse_double(r[3], "count");
        age_set.insert(row.age);
        area_set.insert(row.area);
        year_set.insert(row.year);
        parsed.push_back(std::move(row));
    }
    CountFile out;
    out.ages.assign(age_set.begin(), age_set.end());
    out.years.assign(year_set.begin(), year_set.end());
    out.areas.assign(area_set.begin(), area_set.end());

    std::unordered_map<int, std::size_t> age_idx, year_idx;
    std::unordered_map<std::string, std::size_t> area_idx;
    for (std::size_t i = 0; i < out.ages.size(); ++i) age_idx[out.ages[i]] = i;
    for (std::size_t k = 0; k < out.years.size(); ++k) year_idx[out.years[k]] = k;
    for (std::size_t j = 0; j < out.areas.size(); ++j) area_idx[out.areas[j]] = j;

    const std::size_t m = out.ages.size(), n = out.areas.size(), l = out.years.size();
    out.values.assign(m * n * l, std::nan(""));
    for (const auto& row : parsed) {
        std::size_t idx = age_idx[row.age] + m * (area_idx[row.area] + n * year_idx[row.year]);
        if (!std::isnan(out.values[idx]))
            throw DataError("duplicate cell in " + path + " at " +
                            cell_key(row.age, row.area, row.year));
        out.values[idx] = row.count;
    }
    for (std::size_t k = 0; k < l; ++k)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < m; ++i)
                if (std::isnan(out.values[i + m * (j + n * k)]))
                    throw DataError("incomplete grid in " + path + ": missing cell " +
                                    cell_key(out.ages[i], out.areas[j], out.years[k]));
    return out;
}

} // namespace detail

/// Load deaths, exposures and centroids from CSV files into a dense array.
/// Axes come out sorted ascending by age, area_id (lexicographic) and year.
inline MortalityArray load_csv(const std::string& deaths_path, const std::string& exposures_path,
                               const std::string& centroids_path, const std::string& sex) {
    detail::CountFile deaths = detail::read_count_file(deaths_path);
    detail::CountFile expos = detail::read_count_file(exposures_path);
    if (deaths.ages != expos.ages || deaths.areas != expos.areas || deaths.years != expos.years)
        throw DataError("deaths and exposures files cover different (age, area_id, year) grids");

    auto centroid_rows = csv::read_table(centroids_path, "area_id,x,y");
    std::unordered_map<std::string, std::pair<double, double>> centroid_map;
    for (const auto& r : centroid_rows) {
        if (r.size() != 3) throw DataError("malformed row in " + centroids_path);
        double x = csv::parse_double(r[1], "x");
        double y = csv::parse_double(r[2], "y");
        if (!std::isfinite(x) || !std::isfinite(y))
            throw DataError("non-finite centroid for area " + r[0]);
        if (!centroid_map.emplace(r[0], std::make_pair(x, y)).second)
            throw DataError("duplicate cell in " + centroids_path + " for area " + r[0]);
    }

    MortalityArray data;
    data.sex = sex;
    data.ages = deaths.ages;
    data.years = deaths.years;
    data.area_ids = deaths.areas;
    for (std::size_t k = 1; k < data.years.size(); ++k)
        if (data.years[k] != data.years[k - 1] + 1)
            throw DataError("years must be consecutive: gap before " +
                            std::to_string(data.years[k]));

    const auto m = static_cast<Eigen::Index>(data.ages.size());
    const auto n = static_cast<Eigen::Index>(data.area_ids.size());
    const auto l = static_cast<Eigen::Index>(data.years.size());
    data.deaths = Array3(m, n, l);
    data.exposures = Array3(m, n, l);
    data.centroids.resize(n, 2);
    for (Eigen::Index j = 0; j < n; ++j) {
        auto it = centroid_map.find(data.area_ids[static_cast<std::size_t>(j)]);
        if (it == centroid_map.end())
            throw DataError("unknown area: " + data.area_ids[static_cast<std::size_t>(j)] +
                            " has no centroid");
        data.centroids(j, 0) = it->second.first;
        data.centroids(j, 1) = it->second.second;
    }

    for (Eigen::Index k = 0; k < l; ++k)
        for (Eigen::Index j = 0; j < n; ++j)
            for (Eigen::Index i = 0; i < m; ++i) {
                std::size_t idx = static_cast<std::size_t>(i + m * (j + n * k));
                double d = deaths.values[idx];
                double e = expos.values[idx];
                if (d < 0 || std::abs(d - std::round(d)) > 1e-9)
                    throw DataError(
                        "deaths must be non-negative integers; got " + csv::format_number(d) +
                        " at " +
                        detail::cell_key(data.ages[static_cast<std::size_t>(i)],
                                         data.area_ids[static_cast<std::size_t>(j)],
                                         data.years[static_cast<std::size_t>(k)]));
                if (e < 0 || !std::isfinite(e))
                    throw DataError(
                        "exposures must be non-negative; got " + csv::format_number(e) + " at " +
                        detail::cell_key(data.ages[static_cast<std::size_t>(i)],
                                         data.area_ids[static_cast<std::size_t>(j)],
                                         data.years[static_cast<std::size_t>(k)]));
                data.deaths(i, j, k) = std::round(d);
                data.exposures(i, j, k) = e;
            }
    return data;
}

/// Fix cells with positive deaths but zero exposure: the exposure becomes the
/// death count, and the same amount is taken from the other ages of that
/// (area, year) in proportion to their pre-repair exposures, so the column
/// total is unchanged.
inline std::pair<MortalityArray, RepairReport> repair_exposures(const MortalityArray& data) {
    MortalityArray out = data;
    RepairReport report;
    const Eigen::Index m = data.m(), n = data.n(), l = data.l();
    for (Eigen::Index k = 0; k < l; ++k)
        for (Eigen::Index j = 0; j < n; ++j) {
            double added = 0.0;
            double base = 0.0;
            std::vector<Eigen::Index> repaired;
            for (Eigen::Index i = 0; i < m; ++i) {
                if (data.deaths(i, j, k) > 0 && data.exposures(i, j, k) == 0.0)
                    repaired.push_back(i);
                else
                    base += data.exposures(i, j, k);
            }
            if (repaired.empty()) continue;
            for (Eigen::Index i : repaired) added += data.deaths(i, j, k);
            if (base <= 0.0 || added > base)
                throw DataError(
                    "unrepairable column: remaining exposure in (area_id=" +
                    data.area_ids[static_cast<std::size_t>(j)] +
                    ", year=" + std::to_string(data.years[static_cast<std::size_t>(k)]) +
                    ") cannot absorb the repaired amount");
            const double scale = 1.0 - added / base;
            for (Eigen::Index i = 0; i < m; ++i) {
                if (std::find(repaired.begin(), repaired.end(), i) != repaired.end()) {
                    out.exposures(i, j, k) = data.deaths(i, j, k);
                    report.cells.push_back({data.ages[static_cast<std::size_t>(i)],
                                            data.area_ids[static_cast<std::size_t>(j)],
                                            data.years[static_cast<std::size_t>(k)], 0.0,
                                            out.exposures(i, j, k)});
                } else {
                    out.exposures(i, j, k) = data.exposures(i, j, k) * scale;
                }
            }
        }
    return {std::move(out), std::move(report)};
}

/// Append the across-area totals (the aggregate population) to the data.
inline AugmentedArray augment_with_totals(const MortalityArray& data) {
    AugmentedArray out;
    out.base = data;
    out.totals_deaths = data.deaths.sum1();
    out.totals_exposures = data.exposures.sum1();
    return out;
}

/// Sum deaths and exposures within groups of areas. Group centroids are the
/// exposure-weighted means of member centroids.
inline MortalityArray aggregate(const MortalityArray& data,
                                const std::map<std::string, std::string>& grouping) {
    std::set<std::string> group_set;
    for (const auto& id : data.area_ids) {
        auto it = grouping.find(id);
        if (it == grouping.end()) throw DataError("unmapped area: " + id);
        group_set.insert(it->second);
    }
    std::vector<std::string> groups(group_set.begin(), group_set.end());
    std::unordered_map<std::string, Eigen::Index> group_idx;
    for (std::size_t g = 0; g < groups.size(); ++g)
        group_idx[groups[g]] = static_cast<Eigen::Index>(g);

    const Eigen::Index m = data.m(), n = data.n(), l = data.l();
    const auto ng = static_cast<Eigen::Index>(groups.size());
    MortalityArray out;
    out.ages = data.ages;
    out.years = data.years;
    out.sex = data.sex;
    out.area_ids = groups;
    out.deaths = Array3(m, ng, l);
    out.exposures = Array3(m, ng, l);
    out.centroids = Eigen::MatrixX2d::Zero(ng, 2);
    Eigen::VectorXd weight = Eigen::VectorXd::Zero(ng);

    for (Eigen::Index j = 0; j < n; ++j) {
        const Eigen::Index g = group_idx[grouping.at(data.area_ids[static_cast<std::size_t>(j)])];
        double w = 0.0;
        for (Eigen::Index k = 0; k < l; ++k)
            for (Eigen::Index i = 0; i < m; ++i) {
                out.deaths(i, g, k) += data.deaths(i, j, k);
                out.exposures(i, g, k) += data.exposures(i, j, k);
                w += data.exposures(i, j, k);
            }
        out.centroids.row(g) += w * data.centroids.row(j);
        weight[g] += w;
    }
    for (Eigen::Index g = 0; g < ng; ++g)
        if (weight[g] > 0) out.centroids.row(g) /= weight[g];
    return out;
}

/// Emit the three input CSVs for a MortalityArray (the schemas load_csv reads).
inline void write_csv(const MortalityArray& data, const std::string& deaths_path,
                      const std::string& exposures_path, const std::string& centroids_path,
                      const std::string& comment) {
    csv::Writer deaths(deaths_path, comment, "age,area_id,year,count");
    csv::Writer expos(exposures_path, comment, "age,area_id,year,count");
    for (Eigen::Index k = 0; k < data.l(); ++k)
        for (Eigen::Index j = 0; j < data.n(); ++j)
            for (Eigen::Index i = 0; i < data.m(); ++i) {
                const auto age = std::to_string(data.ages[static_cast<std::size_t>(i)]);
                const auto year = std::to_string(data.years[static_cast<std::size_t>(k)]);
                const auto& area = data.area_ids[static_cast<std::size_t>(j)];
                deaths.row({age, area, year, csv::format_number(data.deaths(i, j, k))});
                expos.row({age, area, year, csv::format_number(data.exposures(i, j, k))});
            }
    csv::Writer cent(centroids_path, comment, "area_id,x,y");
    for (Eigen::Index j = 0; j < data.n(); ++j)
        cent.row({data.area_ids[static_cast<std::size_t>(j)],
                  csv::format_number(data.centroids(j, 0)),
                  csv::format_number(data.centroids(j, 1))});
}

inline void write_repair_report(const RepairReport& report, const std::string& path,
                                const std::string& comment) {
    csv::Writer w(path, comment, "age,area_id,year,old_exposure,new_exposure");
    for (const auto& c : report.cells)
        w.row({std::to_string(c.age), c.area_id, std::to_string(c.year),
               csv::format_number(c.old_exposure), csv::format_number(c.new_exposure)});
}

} // namespace mortsurf
