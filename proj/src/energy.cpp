#include "windadj/energy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "windadj/errors.hpp"
#include "windadj/parallel.hpp"
#include "windadj/rng.hpp"

namespace windadj {

namespace {

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

void check_heights(double ref_height, double hub_height) {
    if (ref_height <= 0.0) throw ConfigError("reference height must be positive");
    if (hub_height <= 0.0) throw ConfigError("hub height must be positive");
}

Eigen::VectorXd hub_multiplier(const ShearFit& shear, double hub_height,
                               const Eigen::VectorXd& alpha) {
    check_heights(shear.ref_height, hub_height);
    const double log_ratio = std::log(hub_height / shear.ref_height);
    return (alpha.array() * log_ratio).exp();
}

void check_shear(const ShearFit& shear, int n_sites) {
    if (shear.alpha.size() != n_sites || shear.se.size() != n_sites)
        throw ConfigError("shear fit does not cover the site set");
}

}  // namespace

ShearFit constant_shear(int n_sites, double ref_height, double alpha) {
    if (n_sites < 1) throw ConfigError("site count must be positive");
    if (ref_height <= 0.0) throw ConfigError("reference height must be positive");
    ShearFit s;
    s.ref_height = ref_height;
    s.alpha = Eigen::VectorXd::Constant(n_sites, alpha);
    s.se = Eigen::VectorXd::Zero(n_sites);
    return s;
}

std::vector<ProfileRow> load_profiles_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open profile CSV: " + path);
    std::string line;
    if (!read_line(in, line) || line != "site_id,height_m,speed_mps")
        throw DataError("bad profile CSV header in " + path + ": '" + line + "'");
    std::vector<ProfileRow> rows;
    while (read_line(in, line)) {
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 3) throw DataError("bad profile CSV row: '" + line + "'");
        ProfileRow r;
        r.site_id = parse_u32(f[0], "site_id");
        r.height_m = parse_double(f[1], "height_m");
        r.speed_mps = parse_double(f[2], "speed_mps");
        if (!(r.height_m > 0.0)) throw DataError("measurement height must be positive: '" + line + "'");
        if (!(r.speed_mps > 0.0)) throw DataError("profile speed must be positive: '" + line + "'");
        rows.push_back(r);
    }
    if (rows.empty()) throw DataError("profile CSV has no data rows: " + path);
    return rows;
}

ShearFit fit_shear(const std::vector<ProfileRow>& rows, int n_sites, double ref_height) {
    if (n_sites < 1) throw ConfigError("site count must be positive");
    if (ref_height <= 0.0) throw ConfigError("reference height must be positive");

    std::vector<std::vector<const ProfileRow*>> by_site(static_cast<std::size_t>(n_sites));
    std::set<std::pair<std::uint32_t, double>> seen;
    for (const auto& r : rows) {
        if (r.site_id >= static_cast<std::uint32_t>(n_sites))
            throw DataError("profile site_id " + std::to_string(r.site_id) +
                            " outside the site set");
        if (!seen.insert({r.site_id, r.height_m}).second)
            throw DataError("duplicate profile height for site " + std::to_string(r.site_id));
        by_site[r.site_id].push_back(&r);
    }

    ShearFit fit;
    fit.ref_height = ref_height;
    fit.alpha.resize(n_sites);
    fit.se.resize(n_sites);
    const double rel_tol = 1e-9 * ref_height;
    for (int i = 0; i < n_sites; ++i) {
        double v_ref = 0.0;
        bool have_ref = false;
        std::vector<std::pair<double, double>> xy;  // (log height ratio, log speed ratio)
        for (const ProfileRow* r : by_site[static_cast<std::size_t>(i)]) {
            if (std::abs(r->height_m - ref_height) <= rel_tol) {
                v_ref = r->speed_mps;
                have_ref = true;
            }
        }
        if (!have_ref)
            throw DataError("site " + std::to_string(i) + " lacks the reference height profile");
        for (const ProfileRow* r : by_site[static_cast<std::size_t>(i)]) {
            if (std::abs(r->height_m - ref_height) <= rel_tol) continue;
            xy.emplace_back(std::log(r->height_m / ref_height), std::log(r->speed_mps / v_ref));
        }
        if (xy.size() < 2)
            throw DataError("site " + std::to_string(i) +
                            " needs at least two non-reference heights");
        double sxx = 0.0, sxy = 0.0;
        for (const auto& [x, y] : xy) {
            sxx += x * x;
            sxy += x * y;
        }
        const double alpha = sxy / sxx;
        double rss = 0.0;
        for (const auto& [x, y] : xy) {
            const double e = y - alpha * x;
            rss += e * e;
        }
        const auto m = static_cast<double>(xy.size());
        fit.alpha(i) = alpha;
        fit.se(i) = std::sqrt(rss / (m - 1.0) / sxx);
    }
    return fit;
}

Eigen::MatrixXd extrapolate_draw(const Eigen::MatrixXd& surface, const ShearFit& shear,
                                 double hub_height, double day_sd, std::uint64_t seed,
                                 int draw, const std::string& field_tag) {
    const int n = static_cast<int>(surface.rows());
    const int T = static_cast<int>(surface.cols());
    check_shear(shear, n);
    if (day_sd < 0.0) throw ConfigError("day-level noise sd must be nonnegative");
    if (draw < 0) throw ConfigError("draw index must be nonnegative");

    // common-random-numbers: the alpha perturbation depends only on (seed, draw)
    RngStream alpha_rng(seed_for(seed, "shear/alpha", static_cast<std::uint64_t>(draw)));
    Eigen::VectorXd alpha = shear.alpha;
    for (int i = 0; i < n; ++i) alpha(i) += shear.se(i) * alpha_rng.normal();
    const Eigen::VectorXd mult = hub_multiplier(shear, hub_height, alpha);

    Eigen::MatrixXd out = mult.asDiagonal() * surface;
    if (day_sd > 0.0) {
        RngStream day_rng(
            seed_for(seed, "shear/day/" + field_tag, static_cast<std::uint64_t>(draw)));
        for (int t = 0; t < T; ++t)
            for (int i = 0; i < n; ++i) out(i, t) *= std::exp(day_sd * day_rng.normal());
    }
    return out;
}

Eigen::MatrixXd extrapolate_mean(const Eigen::MatrixXd& surface, const ShearFit& shear,
                                 double hub_height) {
    check_shear(shear, static_cast<int>(surface.rows()));
    return hub_multiplier(shear, hub_height, shear.alpha).asDiagonal() * surface;
}

PowerCurve load_power_curve_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open power curve CSV: " + path);
    std::string line;
    if (!read_line(in, line) || line != "cut_in_mps,rated_mps,cut_out_mps,rated_kw")
        throw DataError("bad power curve CSV header in " + path + ": '" + line + "'");
    if (!read_line(in, line) || line.empty())
        throw DataError("power curve CSV has no data row: " + path);
    auto f = split_csv_line(line);
    if (f.size() != 4) throw DataError("bad power curve CSV row: '" + line + "'");
    PowerCurve c;
    c.cut_in = parse_double(f[0], "cut_in_mps");
    c.rated_speed = parse_double(f[1], "rated_mps");
    c.cut_out = parse_double(f[2], "cut_out_mps");
    c.rated_kw = parse_double(f[3], "rated_kw");
    std::string extra;
    while (read_line(in, extra))
        if (!extra.empty()) throw DataError("power curve CSV has more than one data row: " + path);
    if (!(c.cut_in >= 0.0 && c.cut_in < c.rated_speed && c.rated_speed <= c.cut_out))
        throw DataError("power curve speeds must satisfy 0 <= cut_in < rated <= cut_out");
    if (!(c.rated_kw > 0.0)) throw DataError("rated power must be positive");
    return c;
}

double power_output(const PowerCurve& c, double v) {
    if (v < c.cut_in || v > c.cut_out) return 0.0;
    if (v >= c.rated_speed) return c.rated_kw;
    const double ci3 = c.cut_in * c.cut_in * c.cut_in;
    const double r3 = c.rated_speed * c.rated_speed * c.rated_speed;
    return c.rated_kw * (v * v * v - ci3) / (r3 - ci3);
}

std::vector<FarmSite> load_farm_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open farm CSV: " + path);
    std::string line;
    if (!read_line(in, line) || line != "site_id,n_turbines,tariff_usd_per_kwh")
        throw DataError("bad farm CSV header in " + path + ": '" + line + "'");
    std::vector<FarmSite> farm;
    std::set<std::uint32_t> seen;
    while (read_line(in, line)) {
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 3) throw DataError("bad farm CSV row: '" + line + "'");
        FarmSite s;
        s.site_id = parse_u32(f[0], "site_id");
        s.n_turbines = static_cast<int>(parse_u32(f[1], "n_turbines"));
        s.tariff_per_kwh = parse_double(f[2], "tariff_usd_per_kwh");
        if (s.tariff_per_kwh < 0.0) throw DataError("tariff must be nonnegative: '" + line + "'");
        if (!seen.insert(s.site_id).second)
            throw DataError("duplicate farm site_id " + std::to_string(s.site_id));
        farm.push_back(s);
    }
    if (farm.empty()) throw DataError("farm CSV has no data rows: " + path);
    return farm;
}

RevenueDelta revenue_delta(const Field& hist, const Field& future, const ShearFit& shear,
                           double hub_height, double day_sd, const PowerCurve& curve,
                           const std::vector<FarmSite>& farm, int n_draws, std::uint64_t seed,
                           int threads) {
    if (n_draws < 1) throw ConfigError("ensemble size must be positive");
    if (farm.empty()) throw ConfigError("farm has no sites");
    const int n = hist.n_sites();
    if (future.n_sites() != n) throw DataError("historical and future site sets differ");
    for (int i = 0; i < n; ++i) {
        const Site& a = hist.sites[static_cast<std::size_t>(i)];
        const Site& b = future.sites[static_cast<std::size_t>(i)];
        if (a.id != b.id || a.lon != b.lon || a.lat != b.lat)
            throw DataError("historical and future site sets differ");
    }
    check_shear(shear, n);
    for (const auto& s : farm)
        if (s.site_id >= static_cast<std::uint32_t>(n))
            throw DataError("farm site_id " + std::to_string(s.site_id) +
                            " outside the field site set");

    const auto nf = farm.size();
    const double Th = hist.n_days();
    const double Tf = future.n_days();

    // deltas(draw, farm site): annualized revenue difference for one draw
    Eigen::MatrixXd deltas(n_draws, static_cast<Eigen::Index>(nf));
    parallel_for(
        static_cast<std::size_t>(n_draws),
        [&](std::size_t di) {
            const int d = static_cast<int>(di);
            const Eigen::MatrixXd hub_h =
                extrapolate_draw(hist.values, shear, hub_height, day_sd, seed, d, "hist");
            const Eigen::MatrixXd hub_f =
                extrapolate_draw(future.values, shear, hub_height, day_sd, seed, d, "future");
            for (std::size_t fi = 0; fi < nf; ++fi) {
                const auto row = static_cast<Eigen::Index>(farm[fi].site_id);
                double sum_h = 0.0, sum_f = 0.0;
                for (Eigen::Index t = 0; t < hub_h.cols(); ++t)
                    sum_h += power_output(curve, hub_h(row, t));
                for (Eigen::Index t = 0; t < hub_f.cols(); ++t)
                    sum_f += power_output(curve, hub_f(row, t));
                // kW averaged over days -> kWh/day (x24) -> USD/day -> USD/year
                const double usd_per_day = (sum_f / Tf - sum_h / Th) * 24.0 *
                                           farm[fi].n_turbines * farm[fi].tariff_per_kwh;
                deltas(d, static_cast<Eigen::Index>(fi)) = usd_per_day * 365.25;
            }
        },
        threads);

    RevenueDelta out;
    out.n_draws = n_draws;
    out.site_id.reserve(nf);
    for (const auto& s : farm) out.site_id.push_back(s.site_id);
    out.mean_per_year = deltas.colwise().mean();
    out.sd_per_year.resize(static_cast<Eigen::Index>(nf));
    if (n_draws > 1) {
        for (Eigen::Index j = 0; j < out.sd_per_year.size(); ++j) {
            const double mu = out.mean_per_year(j);
            out.sd_per_year(j) =
                std::sqrt((deltas.col(j).array() - mu).square().sum() / (n_draws - 1));
        }
    } else {
        out.sd_per_year.setZero();
    }
    const Eigen::VectorXd totals = deltas.rowwise().sum();
    out.total_mean_per_year = totals.mean();
    out.total_sd_per_year =
        n_draws > 1
            ? std::sqrt((totals.array() - out.total_mean_per_year).square().sum() / (n_draws - 1))
            : 0.0;
    return out;
}

Eigen::MatrixXd krige_weights(const std::vector<Site>& data, const std::vector<Site>& targets,
                              const KrigeModel& model) {
    if (data.empty()) throw ConfigError("kriging needs at least one data site");
    if (targets.empty()) throw ConfigError("kriging needs at least one target site");
    if (model.range <= 0.0) throw ConfigError("kriging range must be positive");
    if (model.sill <= 0.0) throw ConfigError("kriging sill must be positive");
    if (model.nugget < 0.0) throw ConfigError("kriging nugget must be nonnegative");

    const auto m = static_cast<Eigen::Index>(data.size());
    const auto k = static_cast<Eigen::Index>(targets.size());

    std::vector<Site> all = data;
    all.insert(all.end(), targets.begin(), targets.end());
    const Eigen::MatrixXd D = pairwise_distance(all, model.dist);

    auto cov_at = [&](double d) {
        // full sill at zero distance keeps prediction exact at data sites
        if (d == 0.0) return model.sill + model.nugget;
        return model.sill * std::exp(-d / model.range);
    };

    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(m + 1, m + 1);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < m; ++j) A(i, j) = cov_at(D(i, j));
    A.row(m).head(m).setOnes();
    A.col(m).head(m).setOnes();

    Eigen::MatrixXd B(m + 1, k);
    for (Eigen::Index j = 0; j < k; ++j) {
        for (Eigen::Index i = 0; i < m; ++i) B(i, j) = cov_at(D(i, m + j));
        B(m, j) = 1.0;
    }

    Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
    const Eigen::MatrixXd sol = lu.solve(B);
    if (!sol.allFinite() || (A * sol - B).cwiseAbs().maxCoeff() > 1e-6 * (model.sill + model.nugget))
        throw NumericError("kriging system is singular (duplicate data sites?)");
    return sol.topRows(m).transpose();
}

Eigen::MatrixXd krige_field(const Field& f, const std::vector<Site>& targets,
                            const KrigeModel& model) {
    return krige_weights(f.sites, targets, model) * f.values;
}

}  // namespace windadj
