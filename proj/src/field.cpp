#include "windadj/field.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <unordered_map>

#include "windadj/errors.hpp"

namespace windadj {

namespace {

constexpr std::int64_t kEpochShift = 719468;  // 1970-01-01 in era-days

int days_in_month(int y, int m) {
    static const int len[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    if (m == 2 && is_leap_year(y)) return 29;
    return len[m - 1];
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    for (;;) {
        std::size_t comma = line.find(',', pos);
        if (comma == std::string::npos) {
            out.push_back(line.substr(pos));
            return out;
        }
        out.push_back(line.substr(pos, comma - pos));
        pos = comma + 1;
    }
}

double parse_double(const std::string& s, const char* what) {
    const char* begin = s.c_str();
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end == begin || end != begin + s.size())
        throw DataError(std::string("malformed ") + what + ": '" + s + "'");
    return v;
}

std::uint32_t parse_u32(const std::string& s, const char* what) {
    const char* begin = s.c_str();
    char* end = nullptr;
    unsigned long v = std::strtoul(begin, &end, 10);
    if (end == begin || end != begin + s.size() || v > 0xFFFFFFFFul)
        throw DataError(std::string("malformed ") + what + ": '" + s + "'");
    return static_cast<std::uint32_t>(v);
}

bool read_line(std::istream& in, std::string& line) {
    if (!std::getline(in, line)) return false;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
}

void check_lonlat(double lon, double lat) {
    if (!(lon >= -180.0 && lon < 360.0)) throw DataError("longitude out of range [-180, 360)");
    if (!(lat >= -90.0 && lat <= 90.0)) throw DataError("latitude out of range [-90, 90]");
}

// --- little-endian binary helpers -----------------------------------------

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& buf, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

struct ByteReader {
    const std::string& data;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > data.size()) throw DataError("binary field file truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    double f64() {
        need(8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i)
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
        pos += 8;
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = data.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

// --- calendar ---------------------------------------------------------------

bool is_leap_year(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

int year_length(int y) { return is_leap_year(y) ? 366 : 365; }

std::int64_t days_from_civil(const Date& dt) {
    int y = dt.y;
    const int m = dt.m;
    const int d = dt.d;
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const int yoe = static_cast<int>(y - era * 400);
    const int doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const int doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + doe - kEpochShift;
}

Date civil_from_days(std::int64_t z) {
    z += kEpochShift;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const int doe = static_cast<int>(z - era * 146097);
    const int yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t y = yoe + era * 400;
    const int doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const int mp = (5 * doy + 2) / 153;
    const int d = doy - (153 * mp + 2) / 5 + 1;
    const int m = mp + (mp < 10 ? 3 : -9);
    return Date{static_cast<int>(y + (m <= 2)), m, d};
}

int day_of_year(const Date& dt) {
    return static_cast<int>(days_from_civil(dt) - days_from_civil(Date{dt.y, 1, 1})) + 1;
}

Date parse_date(const std::string& s) {
    auto bad = [&]() { throw DataError("malformed date: '" + s + "' (want YYYY-MM-DD)"); };
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') bad();
    for (std::size_t i : {0u, 1u, 2u, 3u, 5u, 6u, 8u, 9u})
        if (!std::isdigit(static_cast<unsigned char>(s[i]))) bad();
    Date dt;
    dt.y = std::stoi(s.substr(0, 4));
    dt.m = std::stoi(s.substr(5, 2));
    dt.d = std::stoi(s.substr(8, 2));
    if (dt.m < 1 || dt.m > 12 || dt.d < 1 || dt.d > days_in_month(dt.y, dt.m))
        throw DataError("invalid calendar date: '" + s + "'");
    return dt;
}

std::string format_date(const Date& dt) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", dt.y, dt.m, dt.d);
    return buf;
}

Calendar::Calendar(const Date& start, int n_days)
    : start_(start), start_days_(days_from_civil(start)), n_days_(n_days) {
    if (n_days < 0) throw DataError("calendar length must be nonnegative");
}

Date Calendar::date_at(int t) const { return civil_from_days(start_days_ + t); }

int Calendar::day_of_year_at(int t) const { return day_of_year(date_at(t)); }

int Calendar::year_at(int t) const { return date_at(t).y; }

int Calendar::year_length_at(int t) const { return year_length(date_at(t).y); }

int Calendar::index_of(const Date& dt) const {
    std::int64_t off = days_from_civil(dt) - start_days_;
    if (off < 0) return 0;
    if (off > n_days_) return n_days_;
    return static_cast<int>(off);
}

// --- field ------------------------------------------------------------------

void Field::validate(bool require_nonnegative) const {
    const int n = n_sites();
    if (n == 0) throw DataError("field has no sites");
    if (cal.n_days() == 0) throw DataError("field has no days");
    if (values.rows() != n || values.cols() != cal.n_days())
        throw DataError("field value matrix shape does not match sites/calendar");
    for (int i = 0; i < n; ++i) {
        if (sites[i].id != static_cast<std::uint32_t>(i))
            throw DataError("site ids not contiguous from 0");
        check_lonlat(sites[i].lon, sites[i].lat);
    }
    for (int i = 0; i < n; ++i) {
        for (int t = 0; t < values.cols(); ++t) {
            const double v = values(i, t);
            if (!std::isfinite(v)) throw DataError("non-finite value in field");
            if (require_nonnegative && v < 0.0) throw DataError("negative wind speed in field");
        }
    }
}

Field load_field_csv(const std::string& path, bool require_nonnegative) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open field CSV: " + path);
    std::string line;
    if (!read_line(in, line)) throw DataError("empty field CSV: " + path);
    if (line != "site_id,lon,lat,date,speed_mps")
        throw DataError("bad field CSV header in " + path + ": '" + line + "'");

    struct Rec {
        std::uint32_t id;
        double lon, lat, v;
        std::int64_t day;
    };
    std::vector<Rec> recs;
    std::int64_t dmin = std::numeric_limits<std::int64_t>::max();
    std::int64_t dmax = std::numeric_limits<std::int64_t>::min();
    std::size_t lineno = 1;
    while (read_line(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto parts = split_csv_line(line);
        if (parts.size() != 5)
            throw DataError("bad field CSV row at line " + std::to_string(lineno) + " in " + path);
        Rec r;
        r.id = parse_u32(parts[0], "site_id");
        r.lon = parse_double(parts[1], "lon");
        r.lat = parse_double(parts[2], "lat");
        r.day = days_from_civil(parse_date(parts[3]));
        r.v = parse_double(parts[4], "speed_mps");
        recs.push_back(r);
        dmin = std::min(dmin, r.day);
        dmax = std::max(dmax, r.day);
    }
    if (recs.empty()) throw DataError("field CSV has no data rows: " + path);

    std::uint32_t max_id = 0;
    for (const auto& r : recs) max_id = std::max(max_id, r.id);
    const std::size_t n = static_cast<std::size_t>(max_id) + 1;
    const std::int64_t n_days64 = dmax - dmin + 1;
    if (n_days64 > std::numeric_limits<int>::max()) throw DataError("date range too long");
    const int n_days = static_cast<int>(n_days64);
    if (recs.size() != n * static_cast<std::size_t>(n_days))
        throw DataError("field CSV is not a complete site x day grid (" +
                        std::to_string(recs.size()) + " rows, expected " +
                        std::to_string(n * static_cast<std::size_t>(n_days)) + ")");

    Field f;
    f.sites.assign(n, Site{});
    std::vector<bool> seen_site(n, false);
    f.cal = Calendar(civil_from_days(dmin), n_days);
    f.values.setConstant(static_cast<Eigen::Index>(n), n_days,
                         std::numeric_limits<double>::quiet_NaN());
    for (const auto& r : recs) {
        const int t = static_cast<int>(r.day - dmin);
        if (seen_site[r.id]) {
            const Site& s = f.sites[r.id];
            if (s.lon != r.lon || s.lat != r.lat)
                throw DataError("inconsistent coordinates for site " + std::to_string(r.id));
        } else {
            f.sites[r.id] = Site{r.id, r.lon, r.lat};
            seen_site[r.id] = true;
        }
        if (!std::isnan(f.values(r.id, t)))
            throw DataError("duplicate (site, date) row for site " + std::to_string(r.id));
        f.values(r.id, t) = r.v;
    }
    for (std::size_t i = 0; i < n; ++i)
        if (!seen_site[i]) throw DataError("site ids not contiguous from 0");
    for (std::size_t i = 0; i < n; ++i)
        for (int t = 0; t < n_days; ++t)
            if (std::isnan(f.values(static_cast<Eigen::Index>(i), t)))
                throw DataError("missing (site, date) cell for site " + std::to_string(i));
    f.validate(require_nonnegative);
    return f;
}

void save_field_csv(const Field& f, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write field CSV: " + path);
    out << "site_id,lon,lat,date,speed_mps\n";
    std::vector<std::string> dates(static_cast<std::size_t>(f.n_days()));
    for (int t = 0; t < f.n_days(); ++t) dates[t] = format_date(f.cal.date_at(t));
    for (int i = 0; i < f.n_sites(); ++i) {
        const std::string lon = fmt_double(f.sites[i].lon);
        const std::string lat = fmt_double(f.sites[i].lat);
        for (int t = 0; t < f.n_days(); ++t) {
            out << f.sites[i].id << ',' << lon << ',' << lat << ',' << dates[t] << ','
                << fmt_double(f.values(i, t)) << '\n';
        }
    }
    if (!out) throw DataError("write failed: " + path);
}

Field load_field_binary(const std::string& path, bool require_nonnegative) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open field file: " + path);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    ByteReader r{data};
    if (r.bytes(4) != "STG1") throw DataError("bad magic in field file: " + path);
    const std::uint32_t n = r.u32();
    const std::uint32_t n_days = r.u32();
    const std::uint32_t date_len = r.u32();
    const std::string start = r.bytes(date_len);
    Field f;
    f.cal = Calendar(parse_date(start), static_cast<int>(n_days));
    f.sites.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        f.sites[i].id = r.u32();
        f.sites[i].lon = r.f64();
        f.sites[i].lat = r.f64();
    }
    f.values.resize(n, n_days);
    for (std::uint32_t i = 0; i < n; ++i)
        for (std::uint32_t t = 0; t < n_days; ++t) f.values(i, t) = r.f64();
    if (r.pos != data.size()) throw DataError("trailing bytes in field file: " + path);
    f.validate(require_nonnegative);
    return f;
}

void save_field_binary(const Field& f, const std::string& path) {
    std::string buf;
    buf.reserve(64 + static_cast<std::size_t>(f.n_sites()) *
                         (20 + 8 * static_cast<std::size_t>(f.n_days())));
    buf += "STG1";
    put_u32(buf, static_cast<std::uint32_t>(f.n_sites()));
    put_u32(buf, static_cast<std::uint32_t>(f.n_days()));
    const std::string start = format_date(f.cal.start());
    put_u32(buf, static_cast<std::uint32_t>(start.size()));
    buf += start;
    for (const auto& s : f.sites) {
        put_u32(buf, s.id);
        put_f64(buf, s.lon);
        put_f64(buf, s.lat);
    }
    for (int i = 0; i < f.n_sites(); ++i)
        for (int t = 0; t < f.n_days(); ++t) put_f64(buf, f.values(i, t));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write field file: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError("write failed: " + path);
}

std::vector<Site> load_sites_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open sites CSV: " + path);
    std::string line;
    if (!read_line(in, line)) throw DataError("empty sites CSV: " + path);
    if (line != "site_id,lon,lat")
        throw DataError("bad sites CSV header in " + path + ": '" + line + "'");
    std::vector<Site> sites;
    std::size_t lineno = 1;
    while (read_line(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto parts = split_csv_line(line);
        if (parts.size() != 3)
            throw DataError("bad sites CSV row at line " + std::to_string(lineno) + " in " + path);
        Site s;
        s.id = parse_u32(parts[0], "site_id");
        s.lon = parse_double(parts[1], "lon");
        s.lat = parse_double(parts[2], "lat");
        check_lonlat(s.lon, s.lat);
        sites.push_back(s);
    }
    if (sites.empty()) throw DataError("sites CSV has no rows: " + path);
    std::sort(sites.begin(), sites.end(), [](const Site& a, const Site& b) { return a.id < b.id; });
    for (std::size_t i = 0; i < sites.size(); ++i)
        if (sites[i].id != i) throw DataError("site ids not contiguous from 0 in " + path);
    return sites;
}

void save_sites_csv(const std::vector<Site>& sites, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write sites CSV: " + path);
    out << "site_id,lon,lat\n";
    for (const auto& s : sites)
        out << s.id << ',' << fmt_double(s.lon) << ',' << fmt_double(s.lat) << '\n';
    if (!out) throw DataError("write failed: " + path);
}

std::pair<Field, Field> split_by_date(const Field& f, const Date& cut) {
    const int idx = f.cal.index_of(cut);
    if (idx <= 0 || idx >= f.n_days())
        throw DataError("split date " + format_date(cut) + " leaves an empty part");
    Field left, right;
    left.sites = f.sites;
    right.sites = f.sites;
    left.cal = Calendar(f.cal.start(), idx);
    right.cal = Calendar(f.cal.date_at(idx), f.n_days() - idx);
    left.values = f.values.leftCols(idx);
    right.values = f.values.rightCols(f.n_days() - idx);
    return {std::move(left), std::move(right)};
}

Field subsample_sites(const Field& f, const std::vector<int>& rows) {
    if (rows.empty()) throw DataError("subsample_sites: empty site list");
    Field out;
    out.cal = f.cal;
    out.sites.resize(rows.size());
    out.values.resize(static_cast<Eigen::Index>(rows.size()), f.n_days());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const int i = rows[k];
        if (i < 0 || i >= f.n_sites()) throw DataError("subsample_sites: site index out of range");
        out.sites[k] = Site{static_cast<std::uint32_t>(k), f.sites[i].lon, f.sites[i].lat};
        out.values.row(static_cast<Eigen::Index>(k)) = f.values.row(i);
    }
    return out;
}

}  // namespace windadj
