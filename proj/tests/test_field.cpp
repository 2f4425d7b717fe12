#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "windadj/errors.hpp"
#include "windadj/field.hpp"

using namespace windadj;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const char* name) {
    return fs::temp_directory_path() / (std::string("windadj_test_") + name);
}

Field small_field() {
    Field f;
    f.sites = {{0, -3.5, 40.0}, {1, -3.4, 40.1}, {2, -3.3, 40.2}};
    f.cal = Calendar{{2001, 12, 30}, 4};
    f.values.resize(3, 4);
    f.values << 1.0, 2.5, 3.25, 0.125, 4.0, 5.5, 6.0, 7.75, 0.0, 1.0 / 3.0, 2.0, 9.5;
    return f;
}

}  // namespace

TEST_CASE("date arithmetic matches the civil calendar") {
    CHECK(days_from_civil({1970, 1, 1}) == 0);
    CHECK(days_from_civil({1969, 12, 31}) == -1);
    CHECK(days_from_civil({2000, 3, 1}) == 11017);
    CHECK(days_from_civil({2024, 2, 29}) == 19782);
    CHECK(civil_from_days(19782) == Date{2024, 2, 29});

    // round trip across several centuries, including pre-epoch dates
    for (std::int64_t z = -200000; z <= 200000; z += 97)
        CHECK(days_from_civil(civil_from_days(z)) == z);
}

TEST_CASE("leap years and day-of-year") {
    CHECK(is_leap_year(2000));
    CHECK_FALSE(is_leap_year(1900));
    CHECK(is_leap_year(2024));
    CHECK_FALSE(is_leap_year(2023));
    CHECK(year_length(2024) == 366);
    CHECK(year_length(2023) == 365);
    CHECK(day_of_year({2024, 1, 1}) == 1);
    CHECK(day_of_year({2024, 3, 1}) == 61);
    CHECK(day_of_year({2023, 3, 1}) == 60);
    CHECK(day_of_year({2023, 12, 31}) == 365);
}

TEST_CASE("date parsing is strict") {
    CHECK(parse_date("2024-02-29") == Date{2024, 2, 29});
    CHECK(format_date({2024, 2, 29}) == "2024-02-29");
    CHECK_THROWS_AS(parse_date("2023-02-29"), DataError);
    CHECK_THROWS_AS(parse_date("2024-13-01"), DataError);
    CHECK_THROWS_AS(parse_date("2024-00-10"), DataError);
    CHECK_THROWS_AS(parse_date("2024/01/01"), DataError);
    CHECK_THROWS_AS(parse_date("24-01-01"), DataError);
    CHECK_THROWS_AS(parse_date(""), DataError);
}

TEST_CASE("calendar spans year boundaries") {
    Calendar cal{{2020, 12, 30}, 5};
    CHECK(cal.n_days() == 5);
    CHECK(cal.date_at(0) == Date{2020, 12, 30});
    CHECK(cal.date_at(2) == Date{2021, 1, 1});
    CHECK(cal.date_at(4) == Date{2021, 1, 3});
    CHECK(cal.day_of_year_at(0) == 365);  // 2020 is a leap year, Dec 30 = day 365
    CHECK(cal.day_of_year_at(2) == 1);
    CHECK(cal.year_at(0) == 2020);
    CHECK(cal.year_at(2) == 2021);
    CHECK(cal.year_length_at(0) == 366);
    CHECK(cal.year_length_at(2) == 365);

    CHECK(cal.index_of({2019, 1, 1}) == 0);   // before start clamps to 0
    CHECK(cal.index_of({2021, 1, 1}) == 2);
    CHECK(cal.index_of({2021, 6, 1}) == 5);   // past the end
}

TEST_CASE("field validation rejects broken invariants") {
    Field f = small_field();
    CHECK_NOTHROW(f.validate(true));

    SUBCASE("non-finite value") {
        f.values(1, 2) = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_AS(f.validate(false), DataError);
    }
    SUBCASE("negative value only fails when nonnegativity is required") {
        f.values(0, 0) = -1.0;
        CHECK_NOTHROW(f.validate(false));
        CHECK_THROWS_AS(f.validate(true), DataError);
    }
    SUBCASE("site ids must be contiguous from zero") {
        f.sites[2].id = 7;
        CHECK_THROWS_AS(f.validate(false), DataError);
    }
    SUBCASE("value shape must match sites and calendar") {
        f.values.resize(3, 2);
        CHECK_THROWS_AS(f.validate(false), DataError);
    }
}

TEST_CASE("csv round trip is exact") {
    Field f = small_field();
    const fs::path p = temp_file("roundtrip.csv");
    save_field_csv(f, p.string());
    Field g = load_field_csv(p.string());
    CHECK(g.n_sites() == 3);
    CHECK(g.n_days() == 4);
    CHECK(g.cal.start() == f.cal.start());
    CHECK(g.values == f.values);  // %.17g survives the round trip bit-exactly
    for (int i = 0; i < 3; ++i) {
        CHECK(g.sites[i].id == f.sites[i].id);
        CHECK(g.sites[i].lon == f.sites[i].lon);
        CHECK(g.sites[i].lat == f.sites[i].lat);
    }
    fs::remove(p);
}

TEST_CASE("csv loader rejects structural problems") {
    const fs::path p = temp_file("bad.csv");

    SUBCASE("duplicate cell") {
        std::ofstream(p) << "site_id,lon,lat,date,speed_mps\n"
                            "0,0,0,2020-01-01,1\n"
                            "0,0,0,2020-01-01,2\n";
        CHECK_THROWS_AS(load_field_csv(p.string()), DataError);
    }
    SUBCASE("missing cell") {
        std::ofstream(p) << "site_id,lon,lat,date,speed_mps\n"
                            "0,0,0,2020-01-01,1\n"
                            "0,0,0,2020-01-02,1\n"
                            "1,1,0,2020-01-01,1\n";
        CHECK_THROWS_AS(load_field_csv(p.string()), DataError);
    }
    SUBCASE("gap in the date range") {
        std::ofstream(p) << "site_id,lon,lat,date,speed_mps\n"
                            "0,0,0,2020-01-01,1\n"
                            "0,0,0,2020-01-03,1\n";
        CHECK_THROWS_AS(load_field_csv(p.string()), DataError);
    }
    SUBCASE("negative speed") {
        std::ofstream(p) << "site_id,lon,lat,date,speed_mps\n"
                            "0,0,0,2020-01-01,-1\n";
        CHECK_THROWS_AS(load_field_csv(p.string()), DataError);
        CHECK_NOTHROW(load_field_csv(p.string(), false));
    }
    SUBCASE("wrong header") {
        std::ofstream(p) << "id,lon,lat,date,speed\n0,0,0,2020-01-01,1\n";
        CHECK_THROWS_AS(load_field_csv(p.string()), DataError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_field_csv((p.string() + ".nope")), DataError);
    }
    fs::remove(p);
}

TEST_CASE("binary round trip is bit-exact and validates the magic") {
    Field f = small_field();
    const fs::path p = temp_file("roundtrip.stg1");
    save_field_binary(f, p.string());
    Field g = load_field_binary(p.string());
    CHECK(g.values == f.values);
    CHECK(g.cal.start() == f.cal.start());
    CHECK(g.sites[1].lon == f.sites[1].lon);

    std::ofstream(p, std::ios::binary) << "NOPE garbage";
    CHECK_THROWS_AS(load_field_binary(p.string()), DataError);
    fs::remove(p);
}

TEST_CASE("split by date") {
    Field f = small_field();  // starts 2001-12-30, 4 days
    auto [left, right] = split_by_date(f, {2002, 1, 1});
    CHECK(left.n_days() == 2);
    CHECK(right.n_days() == 2);
    CHECK(left.cal.start() == Date{2001, 12, 30});
    CHECK(right.cal.start() == Date{2002, 1, 1});
    CHECK(left.values == f.values.leftCols(2));
    CHECK(right.values == f.values.rightCols(2));

    CHECK_THROWS_AS(split_by_date(f, {2001, 12, 30}), DataError);  // empty left
    CHECK_THROWS_AS(split_by_date(f, {2003, 1, 1}), DataError);    // empty right
}

TEST_CASE("site subsampling reindexes ids") {
    Field f = small_field();
    Field g = subsample_sites(f, {2, 0});
    CHECK(g.n_sites() == 2);
    CHECK(g.sites[0].id == 0);
    CHECK(g.sites[0].lon == f.sites[2].lon);
    CHECK(g.sites[1].id == 1);
    CHECK(g.sites[1].lon == f.sites[0].lon);
    CHECK(g.values.row(0) == f.values.row(2));
    CHECK(g.values.row(1) == f.values.row(0));
    CHECK_THROWS_AS(subsample_sites(f, {5}), DataError);
    CHECK_THROWS_AS(subsample_sites(f, {}), DataError);
}

TEST_CASE("sites csv round trip") {
    std::vector<Site> sites = {{0, 10.25, -33.5}, {1, 11.0, -34.0}};
    const fs::path p = temp_file("sites.csv");
    save_sites_csv(sites, p.string());
    auto loaded = load_sites_csv(p.string());
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[1].lon == 11.0);
    CHECK(loaded[1].lat == -34.0);
    fs::remove(p);
}
