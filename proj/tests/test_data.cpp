#include "mortsurf/data.hpp"

#include "support/test_util.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <random>

using namespace mortsurf;

namespace {

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

struct ToyFiles {
    testutil::TempDir dir{"data"};
    std::string deaths = dir.path("deaths.csv");
    std::string exposures = dir.path("exposures.csv");
    std::string centroids = dir.path("centroids.csv");

    ToyFiles() {
        write_file(deaths, "age,area_id,year,count\n"
                           "0,a,2001,1\n0,a,2002,2\n0,b,2001,3\n0,b,2002,4\n"
                           "1,a,2001,5\n1,a,2002,6\n1,b,2001,7\n1,b,2002,8\n");
        write_file(exposures, "age,area_id,year,count\n"
                              "0,a,2001,10\n0,a,2002,20\n0,b,2001,30\n0,b,2002,40\n"
                              "1,a,2001,50\n1,a,2002,60\n1,b,2001,70\n1,b,2002,80\n");
        write_file(centroids, "area_id,x,y\na,0.1,0.2\nb,0.9,0.8\n");
    }
};

} // namespace

TEST_CASE("load_csv builds a dense sorted array from toy files") {
    ToyFiles files;
    MortalityArray data = load_csv(files.deaths, files.exposures, files.centroids, "female");
    REQUIRE(data.m() == 2);
    REQUIRE(data.n() == 2);
    REQUIRE(data.l() == 2);
    CHECK(data.ages == std::vector<int>{0, 1});
    CHECK(data.years == std::vector<int>{2001, 2002});
    CHECK(data.area_ids == std::vector<std::string>{"a", "b"});
    CHECK(data.deaths(0, 0, 0) == 1.0);
    CHECK(data.deaths(1, 1, 1) == 8.0);
    CHECK(data.exposures(0, 1, 0) == 30.0);
    CHECK(data.centroids(1, 0) == 0.9);
    CHECK(data.sex == "female");
}

TEST_CASE("load_csv rejects an incomplete grid, naming the missing cell") {
    ToyFiles files;
    write_file(files.deaths, "age,area_id,year,count\n"
                             "0,a,2001,1\n0,a,2002,2\n0,b,2001,3\n0,b,2002,4\n"
                             "1,a,2001,5\n1,a,2002,6\n1,b,2001,7\n");
    REQUIRE_THROWS_WITH(load_csv(files.deaths, files.exposures, files.centroids, "female"),
                        Catch::Matchers::ContainsSubstring("incomplete grid") &&
                            Catch::Matchers::ContainsSubstring("age=1") &&
                            Catch::Matchers::ContainsSubstring("area_id=b") &&
                            Catch::Matchers::ContainsSubstring("year=2002"));
}

TEST_CASE("load_csv rejects duplicate cells and unknown areas") {
    ToyFiles files;
    SECTION("duplicate cell") {
        write_file(files.deaths, "age,area_id,year,count\n"
                                 "0,a,2001,1\n0,a,2001,1\n0,a,2002,2\n0,b,2001,3\n0,b,2002,4\n"
                                 "1,a,2001,5\n1,a,2002,6\n1,b,2001,7\n1,b,2002,8\n");
        REQUIRE_THROWS_WITH(load_csv(files.deaths, files.exposures, files.centroids, "female"),
                            Catch::Matchers::ContainsSubstring("duplicate cell"));
    }
    SECTION("missing centroid") {
        write_file(files.centroids, "area_id,x,y\na,0.1,0.2\n");
        REQUIRE_THROWS_WITH(load_csv(files.deaths, files.exposures, files.centroids, "female"),
                            Catch::Matchers::ContainsSubstring("unknown area: b"));
    }
    SECTION("non-integer deaths") {
        write_file(files.deaths, "age,area_id,year,count\n"
                                 "0,a,2001,1.5\n0,a,2002,2\n0,b,2001,3\n0,b,2002,4\n"
                                 "1,a,2001,5\n1,a,2002,6\n1,b,2001,7\n1,b,2002,8\n");
        REQUIRE_THROWS_AS(load_csv(files.deaths, files.exposures, files.centroids, "female"),
                          DataError);
    }
}

TEST_CASE("the full London extract dimensions give the reported cell count") {
    CHECK(91 * 4813 * 23 == 10'073'609);
}

TEST_CASE("write and reload round-trips integer counts bit-exactly") {
    MortalityArray data = testutil::toy_data(4, 3, 3, 99);
    testutil::TempDir dir("roundtrip");
    write_csv(data, dir.path("d.csv"), dir.path("e.csv"), dir.path("c.csv"), "test");
    MortalityArray back = load_csv(dir.path("d.csv"), dir.path("e.csv"), dir.path("c.csv"),
                                   data.sex);
    CHECK(back.deaths.vec() == data.deaths.vec());
    CHECK(back.exposures.vec() == data.exposures.vec());
    CHECK(back.centroids == data.centroids);
    CHECK(back.area_ids == data.area_ids);
}

TEST_CASE("repair shifts exposure into the zero cell and preserves the column sum") {
    MortalityArray data = testutil::toy_data(3, 1, 1, 1);
    data.deaths(0, 0, 0) = 2;
    data.deaths(1, 0, 0) = 0;
    data.deaths(2, 0, 0) = 0;
    data.exposures(0, 0, 0) = 0;
    data.exposures(1, 0, 0) = 6;
    data.exposures(2, 0, 0) = 4;

    auto [repaired, report] = repair_exposures(data);
    CHECK(repaired.exposures(0, 0, 0) == 2.0);
    CHECK_THAT(repaired.exposures(1, 0, 0), Catch::Matchers::WithinAbs(4.8, 1e-12));
    CHECK_THAT(repaired.exposures(2, 0, 0), Catch::Matchers::WithinAbs(3.2, 1e-12));
    CHECK_THAT(repaired.exposures(0, 0, 0) + repaired.exposures(1, 0, 0) +
                   repaired.exposures(2, 0, 0),
               Catch::Matchers::WithinAbs(10.0, 1e-12));

    REQUIRE(report.cells.size() == 1);
    CHECK(report.cells[0].age == 0);
    CHECK(report.cells[0].old_exposure == 0.0);
    CHECK(report.cells[0].new_exposure == 2.0);
}

TEST_CASE("repair is a no-op when no cell needs it") {
    MortalityArray data = testutil::toy_data(4, 3, 2, 7);
    data.exposures.vec().array() += 1.0; // strictly positive everywhere
    auto [repaired, report] = repair_exposures(data);
    CHECK(report.cells.empty());
    CHECK(repaired.exposures.vec() == data.exposures.vec());
}

TEST_CASE("repair preserves per-column exposure totals on random data") {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int rep = 0; rep < 25; ++rep) {
        MortalityArray data = testutil::toy_data(6, 4, 3, 1000 + rep);
        // Punch zero-exposure holes under some positive death counts.
        for (Eigen::Index k = 0; k < data.l(); ++k)
            for (Eigen::Index j = 0; j < data.n(); ++j)
                for (Eigen::Index i = 0; i < data.m(); ++i)
                    if (unif(rng) < 0.15) {
                        data.deaths(i, j, k) = std::floor(unif(rng) * 3) + 1;
                        data.exposures(i, j, k) = 0.0;
                    }
        auto [repaired, report] = repair_exposures(data);
        for (Eigen::Index k = 0; k < data.l(); ++k)
            for (Eigen::Index j = 0; j < data.n(); ++j) {
                double before = 0, after = 0;
                for (Eigen::Index i = 0; i < data.m(); ++i) {
                    before += data.exposures(i, j, k);
                    after += repaired.exposures(i, j, k);
                    if (repaired.deaths(i, j, k) > 0) CHECK(repaired.exposures(i, j, k) > 0);
                }
                CHECK_THAT(after, Catch::Matchers::WithinRel(before, 1e-9));
            }
    }
}

TEST_CASE("repair fails when the rest of the column has no exposure") {
    MortalityArray data = testutil::toy_data(2, 1, 1, 3);
    data.deaths(0, 0, 0) = 1;
    data.exposures(0, 0, 0) = 0;
    data.deaths(1, 0, 0) = 0;
    data.exposures(1, 0, 0) = 0;
    REQUIRE_THROWS_WITH(repair_exposures(data),
                        Catch::Matchers::ContainsSubstring("unrepairable column"));
}

TEST_CASE("repair handles several zero cells in one column before redistributing") {
    MortalityArray data = testutil::toy_data(4, 1, 1, 4);
    data.deaths(0, 0, 0) = 1;
    data.deaths(1, 0, 0) = 2;
    data.deaths(2, 0, 0) = 0;
    data.deaths(3, 0, 0) = 0;
    data.exposures(0, 0, 0) = 0;
    data.exposures(1, 0, 0) = 0;
    data.exposures(2, 0, 0) = 12;
    data.exposures(3, 0, 0) = 6;
    auto [repaired, report] = repair_exposures(data);
    REQUIRE(report.cells.size() == 2);
    CHECK(repaired.exposures(0, 0, 0) == 1.0);
    CHECK(repaired.exposures(1, 0, 0) == 2.0);
    // 3 units drawn from the 18 remaining, in 2:1 proportion
    CHECK_THAT(repaired.exposures(2, 0, 0), Catch::Matchers::WithinAbs(10.0, 1e-12));
    CHECK_THAT(repaired.exposures(3, 0, 0), Catch::Matchers::WithinAbs(5.0, 1e-12));
}

TEST_CASE("totals augmentation sums over areas") {
    SECTION("constant array") {
        MortalityArray data = testutil::toy_data(3, 4, 2, 5);
        data.deaths.vec().setOnes();
        AugmentedArray aug = augment_with_totals(data);
        CHECK((aug.totals_deaths.array() == 4.0).all());
    }
    SECTION("distinct entries match brute-force sums") {
        MortalityArray data = testutil::toy_data(2, 2, 2, 6);
        for (Eigen::Index c = 0; c < data.deaths.size(); ++c)
            data.deaths.vec()[c] = static_cast<double>(c + 1);
        AugmentedArray aug = augment_with_totals(data);
        for (Eigen::Index k = 0; k < 2; ++k)
            for (Eigen::Index i = 0; i < 2; ++i) {
                double sum = 0;
                for (Eigen::Index j = 0; j < 2; ++j) sum += data.deaths(i, j, k);
                CHECK(aug.totals_deaths(i, k) == sum);
            }
    }
    SECTION("re-summation of the base is idempotent") {
        MortalityArray data = testutil::toy_data(3, 5, 2, 8);
        AugmentedArray once = augment_with_totals(data);
        AugmentedArray twice = augment_with_totals(once.base);
        CHECK(once.totals_deaths == twice.totals_deaths);
        CHECK(once.totals_exposures == twice.totals_exposures);
    }
}

TEST_CASE("aggregate sums within groups") {
    MortalityArray data = testutil::toy_data(3, 4, 2, 11);
    SECTION("identity grouping returns the same array") {
        std::map<std::string, std::string> identity;
        for (const auto& id : data.area_ids) identity[id] = id;
        MortalityArray same = aggregate(data, identity);
        CHECK(same.deaths.vec() == data.deaths.vec());
        CHECK(same.exposures.vec() == data.exposures.vec());
    }
    SECTION("grouping everything reproduces the augmented totals") {
        std::map<std::string, std::string> all;
        for (const auto& id : data.area_ids) all[id] = "g";
        MortalityArray grouped = aggregate(data, all);
        AugmentedArray aug = augment_with_totals(data);
        REQUIRE(grouped.n() == 1);
        for (Eigen::Index k = 0; k < data.l(); ++k)
            for (Eigen::Index i = 0; i < data.m(); ++i)
                CHECK(grouped.deaths(i, 0, k) == aug.totals_deaths(i, k));
    }
    SECTION("two groups match hand-summed counts") {
        std::map<std::string, std::string> two = {{data.area_ids[0], "g1"},
                                                  {data.area_ids[1], "g1"},
                                                  {data.area_ids[2], "g2"},
                                                  {data.area_ids[3], "g2"}};
        MortalityArray grouped = aggregate(data, two);
        REQUIRE(grouped.n() == 2);
        for (Eigen::Index k = 0; k < data.l(); ++k)
            for (Eigen::Index i = 0; i < data.m(); ++i) {
                CHECK(grouped.deaths(i, 0, k) == data.deaths(i, 0, k) + data.deaths(i, 1, k));
                CHECK(grouped.deaths(i, 1, k) == data.deaths(i, 2, k) + data.deaths(i, 3, k));
            }
    }
    SECTION("unmapped area is an error") {
        std::map<std::string, std::string> partial = {{data.area_ids[0], "g"}};
        REQUIRE_THROWS_WITH(aggregate(data, partial),
                            Catch::Matchers::ContainsSubstring("unmapped area"));
    }
    SECTION("aggregation commutes with totals") {
        std::map<std::string, std::string> two;
        for (std::size_t j = 0; j < data.area_ids.size(); ++j)
            two[data.area_ids[j]] = j % 2 ? "odd" : "even";
        AugmentedArray direct = augment_with_totals(data);
        AugmentedArray grouped = augment_with_totals(aggregate(data, two));
        CHECK(direct.totals_deaths == grouped.totals_deaths); // integer counts: exact
        CHECK((direct.totals_exposures - grouped.totals_exposures).cwiseAbs().maxCoeff() <
              1e-12 * direct.totals_exposures.maxCoeff());
    }
}
