#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace windadj {

/// Calendar date, proleptic Gregorian (4/100/400 leap rule for all years).
struct Date {
    int y = 1970;
    int m = 1;
    int d = 1;

    friend bool operator==(const Date&, const Date&) = default;
    friend auto operator<=>(const Date&, const Date&) = default;
};

/// Days since 1970-01-01 (negative before).
std::int64_t days_from_civil(const Date& dt);
Date civil_from_days(std::int64_t z);
bool is_leap_year(int y);
/// 1-based ordinal day within its year (1..365 or 366).
int day_of_year(const Date& dt);
/// 365 or 366.
int year_length(int y);

/// Strict "YYYY-MM-DD" parse; throws DataError on malformed or invalid dates.
Date parse_date(const std::string& s);
std::string format_date(const Date& dt);

/// Measurement location.  Sites in a field are indexed 0..n-1 by id.
struct Site {
    std::uint32_t id = 0;
    double lon = 0.0;  // degrees, [-180, 360)
    double lat = 0.0;  // degrees, [-90, 90]
};

/// Contiguous run of daily time steps starting at a given date.
class Calendar {
  public:
    Calendar() = default;
    Calendar(const Date& start, int n_days);

    const Date& start() const { return start_; }
    int n_days() const { return n_days_; }
    Date date_at(int t) const;          // t in [0, n_days)
    int day_of_year_at(int t) const;    // 1-based
    int year_at(int t) const;
    int year_length_at(int t) const;    // 365 or 366 for the year containing day t
    /// Index of the first day >= dt; n_days if past the end.
    int index_of(const Date& dt) const;

  private:
    Date start_{};
    std::int64_t start_days_ = 0;
    int n_days_ = 0;
};

/// Daily values on a fixed site set: values(i, t) is site i at day t.
/// Invariants: site ids are contiguous 0..n-1 (row i is site id i),
/// all values finite.  Wind-speed I/O additionally enforces values >= 0;
/// synthetic residual-scale fields may hold negative values in memory.
struct Field {
    std::vector<Site> sites;
    Calendar cal;
    Eigen::MatrixXd values;  // n_sites x n_days

    int n_sites() const { return static_cast<int>(sites.size()); }
    int n_days() const { return cal.n_days(); }
    /// Throws DataError on violated invariants.  If require_nonnegative,
    /// negative values are also rejected.
    void validate(bool require_nonnegative) const;
};

/// CSV with header "site_id,lon,lat,date,speed_mps"; one row per (site, day);
/// dates must cover a contiguous daily range and every (site, day) cell must
/// appear exactly once.
Field load_field_csv(const std::string& path, bool require_nonnegative = true);
void save_field_csv(const Field& f, const std::string& path);

/// Packed little-endian binary: magic "STG1", u32 n_sites, u32 n_days,
/// u32 date length + ISO start date, per-site (u32 id, f64 lon, f64 lat),
/// then row-major (site-major) f64 values.
Field load_field_binary(const std::string& path, bool require_nonnegative = true);
void save_field_binary(const Field& f, const std::string& path);

/// Site geometry exchange: CSV with header "site_id,lon,lat".
std::vector<Site> load_sites_csv(const std::string& path);
void save_sites_csv(const std::vector<Site>& sites, const std::string& path);

/// Split at a cut date: left = days strictly before, right = days at/after.
/// Throws DataError if either part would be empty.
std::pair<Field, Field> split_by_date(const Field& f, const Date& cut);

/// Restrict to the given site rows (order preserved); ids reindexed 0..m-1.
Field subsample_sites(const Field& f, const std::vector<int>& rows);

}  // namespace windadj
