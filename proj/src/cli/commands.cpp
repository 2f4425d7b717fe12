#include "windadj/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "windadj/adjustment.hpp"
#include "windadj/climatology.hpp"
#include "windadj/clustering.hpp"
#include "windadj/divergence.hpp"
#include "windadj/energy.hpp"
#include "windadj/errors.hpp"
#include "windadj/field.hpp"
#include "windadj/simgen.hpp"
#include "windadj/transform.hpp"

namespace windadj {

namespace {

using nlohmann::json;

void log_event(const json& j) { std::cerr << j.dump() << "\n"; }

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// --- strict config access ----------------------------------------------------

/// Wraps a JSON object; every key must be consumed exactly once, leftovers
/// are configuration errors.
class ConfigReader {
  public:
    ConfigReader(const json& j, std::string ctx) : j_(j), ctx_(std::move(ctx)) {
        if (!j_.is_object()) throw ConfigError(ctx_ + ": expected a JSON object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    std::string require_string(const std::string& key) {
        if (!has(key)) throw ConfigError(ctx_ + ": missing required key '" + key + "'");
        return get_string(key, "");
    }

    std::string get_string(const std::string& key, std::string def) {
        if (!mark(key)) return def;
        const json& v = j_.at(key);
        if (!v.is_string()) throw ConfigError(ctx_ + ": key '" + key + "' must be a string");
        return v.get<std::string>();
    }

    bool get_bool(const std::string& key, bool def) {
        if (!mark(key)) return def;
        const json& v = j_.at(key);
        if (!v.is_boolean()) throw ConfigError(ctx_ + ": key '" + key + "' must be a boolean");
        return v.get<bool>();
    }

    int get_int(const std::string& key, int def) {
        if (!mark(key)) return def;
        const json& v = j_.at(key);
        if (!v.is_number_integer() && !v.is_number_unsigned())
            throw ConfigError(ctx_ + ": key '" + key + "' must be an integer");
        return v.get<int>();
    }

    std::uint64_t get_u64(const std::string& key, std::uint64_t def) {
        if (!mark(key)) return def;
        const json& v = j_.at(key);
        if (v.is_number_unsigned()) return v.get<std::uint64_t>();
        if (v.is_number_integer() && v.get<std::int64_t>() >= 0)
            return static_cast<std::uint64_t>(v.get<std::int64_t>());
        throw ConfigError(ctx_ + ": key '" + key + "' must be a nonnegative integer");
    }

    double get_double(const std::string& key, double def) {
        if (!mark(key)) return def;
        const json& v = j_.at(key);
        if (!v.is_number()) throw ConfigError(ctx_ + ": key '" + key + "' must be a number");
        return v.get<double>();
    }

    std::vector<double> get_double_list(const std::string& key, std::vector<double> def) {
        if (!mark(key)) return def;
        const json& v = j_.at(key);
        if (!v.is_array()) throw ConfigError(ctx_ + ": key '" + key + "' must be an array");
        std::vector<double> out;
        for (const auto& e : v) {
            if (!e.is_number())
                throw ConfigError(ctx_ + ": key '" + key + "' must hold numbers only");
            out.push_back(e.get<double>());
        }
        return out;
    }

    std::vector<std::string> get_string_list(const std::string& key,
                                             std::vector<std::string> def) {
        if (!mark(key)) return def;
        const json& v = j_.at(key);
        if (!v.is_array()) throw ConfigError(ctx_ + ": key '" + key + "' must be an array");
        std::vector<std::string> out;
        for (const auto& e : v) {
            if (!e.is_string())
                throw ConfigError(ctx_ + ": key '" + key + "' must hold strings only");
            out.push_back(e.get<std::string>());
        }
        return out;
    }

    /// Nested object; returns an empty object when absent.
    json get_object(const std::string& key) {
        if (!mark(key)) return json::object();
        const json& v = j_.at(key);
        if (!v.is_object()) throw ConfigError(ctx_ + ": key '" + key + "' must be an object");
        return v;
    }

    /// Rejects any key that was never consumed.
    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!used_.count(it.key()))
                throw ConfigError(ctx_ + ": unknown key '" + it.key() + "'");
    }

  private:
    bool mark(const std::string& key) {
        if (!j_.contains(key)) return false;
        used_.insert(key);
        return true;
    }

    json j_;
    std::string ctx_;
    std::set<std::string> used_;
};

json load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
}

void check_schema_version(ConfigReader& r) {
    const int v = r.get_int("schema_version", 1);
    if (v != 1) throw ConfigError("unsupported schema_version " + std::to_string(v));
}

// --- enum <-> string ----------------------------------------------------------

std::string mode_name(AdjustMode m) {
    return m == AdjustMode::Anomaly ? "anomaly" : "as-written";
}

AdjustMode parse_mode(const std::string& s) {
    if (s == "anomaly") return AdjustMode::Anomaly;
    if (s == "as-written") return AdjustMode::AsWritten;
    throw ConfigError("unknown mode '" + s + "' (expected as-written or anomaly)");
}

std::string dist_name(DistanceKind d) {
    return d == DistanceKind::Haversine ? "haversine" : "euclidean";
}

DistanceKind parse_dist(const std::string& s) {
    if (s == "euclidean") return DistanceKind::Euclidean;
    if (s == "haversine") return DistanceKind::Haversine;
    throw ConfigError("unknown distance '" + s + "' (expected euclidean or haversine)");
}

std::string cov_name(CovModel c) {
    return c == CovModel::Nonstat ? "nonstationary" : "matern";
}

CovModel parse_cov(const std::string& s) {
    if (s == "matern") return CovModel::Matern;
    if (s == "nonstationary") return CovModel::Nonstat;
    throw ConfigError("unknown covariance model '" + s + "' (expected matern or nonstationary)");
}

// --- Eigen <-> JSON -------------------------------------------------------------

json vec_to_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

json mat_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json r = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
        rows.push_back(std::move(r));
    }
    return rows;
}

Eigen::VectorXd vec_from_json(const json& j, const std::string& what) {
    if (j.is_null()) return {};
    if (!j.is_array()) throw DataError("plan field '" + what + "' must be an array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    Eigen::Index i = 0;
    for (const auto& e : j) {
        if (!e.is_number()) throw DataError("plan field '" + what + "' must hold numbers");
        v(i++) = e.get<double>();
    }
    return v;
}

Eigen::MatrixXd mat_from_json(const json& j, const std::string& what) {
    if (j.is_null() || j.empty()) return {};
    if (!j.is_array()) throw DataError("plan field '" + what + "' must be an array of rows");
    const auto nr = static_cast<Eigen::Index>(j.size());
    const auto& first = j.at(0);
    if (!first.is_array()) throw DataError("plan field '" + what + "' must be an array of rows");
    const auto nc = static_cast<Eigen::Index>(first.size());
    Eigen::MatrixXd m(nr, nc);
    for (Eigen::Index i = 0; i < nr; ++i) {
        const auto& row = j.at(static_cast<std::size_t>(i));
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != nc)
            throw DataError("plan field '" + what + "' has ragged rows");
        for (Eigen::Index c = 0; c < nc; ++c) {
            const auto& e = row.at(static_cast<std::size_t>(c));
            if (!e.is_number()) throw DataError("plan field '" + what + "' must hold numbers");
            m(i, c) = e.get<double>();
        }
    }
    return m;
}

// --- field I/O by extension -----------------------------------------------------

Field load_any_field(const std::string& path, bool require_nonnegative) {
    Field f = ends_with(path, ".stg1") ? load_field_binary(path, require_nonnegative)
                                       : load_field_csv(path, require_nonnegative);
    log_event({{"event", "load_field"},
               {"path", path},
               {"sites", f.n_sites()},
               {"days", f.n_days()}});
    return f;
}

void save_any_field(const Field& f, const std::string& path) {
    if (ends_with(path, ".stg1"))
        save_field_binary(f, path);
    else
        save_field_csv(f, path);
    log_event({{"event", "write_field"},
               {"path", path},
               {"sites", f.n_sites()},
               {"days", f.n_days()}});
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write: " + path);
    out << text;
    if (!out) throw DataError("write failed: " + path);
}

// --- shared option parsing -------------------------------------------------------

/// Keys understood inside a fit/adjustment options block.  `base` supplies
/// the defaults so the validate command can start from the synthetic-study
/// defaults while fit starts from the general-purpose ones.
AdjustOptions parse_adjust_options(ConfigReader& r, AdjustOptions base) {
    if (r.has("mode")) base.mode = parse_mode(r.get_string("mode", ""));
    base.K = r.get_int("K", base.K);
    base.with_trend = r.get_bool("with_trend", base.with_trend);
    base.P = r.get_int("P", base.P);
    if (r.has("cov_model")) {
        base.cov_model = parse_cov(r.get_string("cov_model", ""));
        base.cov_model_set = true;
    }
    base.nu_grid = r.get_double_list("nu_grid", base.nu_grid);
    base.knots_x = r.get_int("knots_x", base.knots_x);
    base.knots_y = r.get_int("knots_y", base.knots_y);
    if (r.has("distance")) base.dist = parse_dist(r.get_string("distance", ""));
    base.freeze_year_term = r.get_bool("freeze_year_term", base.freeze_year_term);
    base.clamp_negative = r.get_bool("clamp_negative", base.clamp_negative);
    base.envelope_clamp = r.get_bool("envelope_clamp", base.envelope_clamp);
    base.cov_shrinkage = r.get_double("cov_shrinkage", base.cov_shrinkage);
    base.lambda_lo = r.get_double("lambda_lo", base.lambda_lo);
    base.lambda_hi = r.get_double("lambda_hi", base.lambda_hi);
    base.n_clusters = r.get_int("n_clusters", base.n_clusters);
    if (r.has("cluster_weights")) {
        const auto w = r.get_double_list("cluster_weights", {});
        if (w.size() != 3) throw ConfigError("cluster_weights must hold exactly 3 numbers");
        base.cluster_weights = Eigen::Vector3d(w[0], w[1], w[2]);
    }
    base.cluster_restarts = r.get_int("cluster_restarts", base.cluster_restarts);
    base.optimize_lambda = r.get_bool("optimize_lambda", base.optimize_lambda);
    base.opt_max_cycles = r.get_int("opt_max_cycles", base.opt_max_cycles);
    base.opt_tol_nats = r.get_double("opt_tol_nats", base.opt_tol_nats);
    base.opt_eval_days = r.get_int("opt_eval_days", base.opt_eval_days);
    base.opt_kl_k = r.get_int("opt_kl_k", base.opt_kl_k);
    base.opt_bracket = r.get_double("opt_bracket", base.opt_bracket);
    return base;
}

json options_to_json(const AdjustOptions& o) {
    json j;
    j["method"] = method_name(o.method);
    j["mode"] = mode_name(o.mode);
    j["K"] = o.K;
    j["with_trend"] = o.with_trend;
    j["P"] = o.P;
    j["cov_model"] = cov_name(o.cov_model);
    j["cov_model_set"] = o.cov_model_set;
    j["nu_grid"] = o.nu_grid;
    j["knots_x"] = o.knots_x;
    j["knots_y"] = o.knots_y;
    j["distance"] = dist_name(o.dist);
    j["freeze_year_term"] = o.freeze_year_term;
    j["clamp_negative"] = o.clamp_negative;
    j["envelope_clamp"] = o.envelope_clamp;
    j["cov_shrinkage"] = o.cov_shrinkage;
    j["lambda_lo"] = o.lambda_lo;
    j["lambda_hi"] = o.lambda_hi;
    j["n_clusters"] = o.n_clusters;
    j["cluster_weights"] = {o.cluster_weights(0), o.cluster_weights(1), o.cluster_weights(2)};
    j["cluster_restarts"] = o.cluster_restarts;
    j["optimize_lambda"] = o.optimize_lambda;
    j["opt_max_cycles"] = o.opt_max_cycles;
    j["opt_tol_nats"] = o.opt_tol_nats;
    j["opt_eval_days"] = o.opt_eval_days;
    j["opt_kl_k"] = o.opt_kl_k;
    j["opt_bracket"] = o.opt_bracket;
    j["seed"] = o.seed;
    return j;
}

AdjustOptions options_from_json(const json& j) {
    ConfigReader r(j, "plan options");
    AdjustOptions o;
    o.method = parse_method(r.require_string("method"));
    o.mode = parse_mode(r.get_string("mode", mode_name(o.mode)));
    o.K = r.get_int("K", o.K);
    o.with_trend = r.get_bool("with_trend", o.with_trend);
    o.P = r.get_int("P", o.P);
    o.cov_model = parse_cov(r.get_string("cov_model", cov_name(o.cov_model)));
    o.cov_model_set = r.get_bool("cov_model_set", false);
    o.nu_grid = r.get_double_list("nu_grid", o.nu_grid);
    o.knots_x = r.get_int("knots_x", o.knots_x);
    o.knots_y = r.get_int("knots_y", o.knots_y);
    o.dist = parse_dist(r.get_string("distance", dist_name(o.dist)));
    o.freeze_year_term = r.get_bool("freeze_year_term", o.freeze_year_term);
    o.clamp_negative = r.get_bool("clamp_negative", o.clamp_negative);
    o.envelope_clamp = r.get_bool("envelope_clamp", o.envelope_clamp);
    o.cov_shrinkage = r.get_double("cov_shrinkage", o.cov_shrinkage);
    o.lambda_lo = r.get_double("lambda_lo", o.lambda_lo);
    o.lambda_hi = r.get_double("lambda_hi", o.lambda_hi);
    o.n_clusters = r.get_int("n_clusters", o.n_clusters);
    const auto w = r.get_double_list("cluster_weights",
                                     {o.cluster_weights(0), o.cluster_weights(1), o.cluster_weights(2)});
    if (w.size() != 3) throw DataError("plan options cluster_weights must hold 3 numbers");
    o.cluster_weights = Eigen::Vector3d(w[0], w[1], w[2]);
    o.cluster_restarts = r.get_int("cluster_restarts", o.cluster_restarts);
    o.optimize_lambda = r.get_bool("optimize_lambda", o.optimize_lambda);
    o.opt_max_cycles = r.get_int("opt_max_cycles", o.opt_max_cycles);
    o.opt_tol_nats = r.get_double("opt_tol_nats", o.opt_tol_nats);
    o.opt_eval_days = r.get_int("opt_eval_days", o.opt_eval_days);
    o.opt_kl_k = r.get_int("opt_kl_k", o.opt_kl_k);
    o.opt_bracket = r.get_double("opt_bracket", o.opt_bracket);
    o.seed = r.get_u64("seed", o.seed);
    r.finish();
    return o;
}

// --- plan <-> JSON ---------------------------------------------------------------

json clim_to_json(const ClimatologyFit& c) {
    return {{"K", c.K},
            {"with_trend", c.with_trend},
            {"yr_ref", c.yr_ref},
            {"yr_last", c.yr_last},
            {"coef", mat_to_json(c.coef)},
            {"trend_se", vec_to_json(c.trend_se)}};
}

ClimatologyFit clim_from_json(const json& j) {
    ConfigReader r(j, "plan climatology");
    ClimatologyFit c;
    c.K = r.get_int("K", 0);
    c.with_trend = r.get_bool("with_trend", false);
    c.yr_ref = r.get_int("yr_ref", 0);
    c.yr_last = r.get_int("yr_last", 0);
    c.coef = mat_from_json(j.at("coef"), "coef");
    c.trend_se = vec_from_json(j.at("trend_se"), "trend_se");
    return c;
}

json ar_to_json(const ARFit& a) {
    return {{"P", a.P},
            {"phi", mat_to_json(a.phi)},
            {"innov_sd", vec_to_json(a.innov_sd)},
            {"stationary_sd", vec_to_json(a.stationary_sd)}};
}

ARFit ar_from_json(const json& j) {
    ARFit a;
    a.P = j.at("P").get<int>();
    a.phi = mat_from_json(j.at("phi"), "phi");
    a.innov_sd = vec_from_json(j.at("innov_sd"), "innov_sd");
    a.stationary_sd = vec_from_json(j.at("stationary_sd"), "stationary_sd");
    return a;
}

json matern_to_json(const MaternParams& m) {
    return {{"sigma2", m.sigma2}, {"range", m.range}, {"nu", m.nu}, {"nugget", m.nugget}};
}

MaternParams matern_from_json(const json& j) {
    MaternParams m;
    m.sigma2 = j.at("sigma2").get<double>();
    m.range = j.at("range").get<double>();
    m.nu = j.at("nu").get<double>();
    m.nugget = j.at("nugget").get<double>();
    return m;
}

json nonstat_to_json(const NonstatParams& p) {
    json knots = json::array();
    for (const auto& k : p.knot)
        knots.push_back({{"sigma2", k.sigma2},
                         {"zeta", k.zeta},
                         {"theta", k.theta},
                         {"range", k.range},
                         {"nugget", k.nugget}});
    return {{"knots", mat_to_json(p.knots)}, {"bandwidth", p.bandwidth}, {"knot", knots}};
}

NonstatParams nonstat_from_json(const json& j) {
    NonstatParams p;
    p.knots = mat_from_json(j.at("knots"), "knots");
    p.bandwidth = j.at("bandwidth").get<double>();
    for (const auto& e : j.at("knot")) {
        KnotParams k;
        k.sigma2 = e.at("sigma2").get<double>();
        k.zeta = e.at("zeta").get<double>();
        k.theta = e.at("theta").get<double>();
        k.range = e.at("range").get<double>();
        k.nugget = e.at("nugget").get<double>();
        p.knot.push_back(k);
    }
    return p;
}

json plan_to_json(const AdjustmentPlan& plan) {
    json j;
    j["kind"] = "adjustment_plan";
    j["schema_version"] = 1;
    j["seed"] = plan.opt.seed;
    j["options"] = options_to_json(plan.opt);
    json sites = json::array();
    for (const auto& s : plan.sites) sites.push_back({s.id, s.lon, s.lat});
    j["sites"] = std::move(sites);
    j["clim_o"] = clim_to_json(plan.clim_o);
    j["clim_s"] = clim_to_json(plan.clim_s);
    j["ar_o"] = ar_to_json(plan.ar_o);
    j["ar_s"] = ar_to_json(plan.ar_s);
    j["m_o"] = vec_to_json(plan.m_o);
    j["m_s"] = vec_to_json(plan.m_s);
    j["sd_o"] = vec_to_json(plan.sd_o);
    j["sd_s"] = vec_to_json(plan.sd_s);
    j["mat_o"] = matern_to_json(plan.mat_o);
    j["mat_s"] = matern_to_json(plan.mat_s);
    j["ns_o"] = nonstat_to_json(plan.ns_o);
    j["ns_s"] = nonstat_to_json(plan.ns_s);
    j["L_o"] = mat_to_json(plan.L_o);
    j["L_s"] = mat_to_json(plan.L_s);
    j["lambda_o"] = vec_to_json(plan.lambda_o);
    j["lambda_s"] = vec_to_json(plan.lambda_s);
    j["labels"] = plan.labels;
    j["mt_o"] = vec_to_json(plan.mt_o);
    j["mt_s"] = vec_to_json(plan.mt_s);
    j["Lt_o"] = mat_to_json(plan.Lt_o);
    j["Lt_s"] = mat_to_json(plan.Lt_s);
    j["kl_trace"] = plan.kl_trace;
    if (std::isfinite(plan.kl_at_identity)) j["kl_at_identity"] = plan.kl_at_identity;
    j["coords"] = mat_to_json(plan.coords);
    j["env_lo"] = plan.env_lo;
    j["env_hi"] = plan.env_hi;
    return j;
}

AdjustmentPlan plan_from_json(const json& j, const std::string& path) {
    if (!j.is_object() || j.value("kind", "") != "adjustment_plan")
        throw DataError("not an adjustment plan: " + path);
    if (j.value("schema_version", 0) != 1)
        throw DataError("unsupported plan schema_version in " + path);
    AdjustmentPlan p;
    p.opt = options_from_json(j.at("options"));
    for (const auto& s : j.at("sites")) {
        if (!s.is_array() || s.size() != 3) throw DataError("malformed site row in " + path);
        Site site;
        site.id = s.at(0).get<std::uint32_t>();
        site.lon = s.at(1).get<double>();
        site.lat = s.at(2).get<double>();
        p.sites.push_back(site);
    }
    p.clim_o = clim_from_json(j.at("clim_o"));
    p.clim_s = clim_from_json(j.at("clim_s"));
    p.ar_o = ar_from_json(j.at("ar_o"));
    p.ar_s = ar_from_json(j.at("ar_s"));
    p.m_o = vec_from_json(j.at("m_o"), "m_o");
    p.m_s = vec_from_json(j.at("m_s"), "m_s");
    p.sd_o = vec_from_json(j.at("sd_o"), "sd_o");
    p.sd_s = vec_from_json(j.at("sd_s"), "sd_s");
    p.mat_o = matern_from_json(j.at("mat_o"));
    p.mat_s = matern_from_json(j.at("mat_s"));
    p.ns_o = nonstat_from_json(j.at("ns_o"));
    p.ns_s = nonstat_from_json(j.at("ns_s"));
    p.L_o = mat_from_json(j.at("L_o"), "L_o");
    p.L_s = mat_from_json(j.at("L_s"), "L_s");
    p.lambda_o = vec_from_json(j.at("lambda_o"), "lambda_o");
    p.lambda_s = vec_from_json(j.at("lambda_s"), "lambda_s");
    p.labels = j.at("labels").get<std::vector<int>>();
    p.mt_o = vec_from_json(j.at("mt_o"), "mt_o");
    p.mt_s = vec_from_json(j.at("mt_s"), "mt_s");
    p.Lt_o = mat_from_json(j.at("Lt_o"), "Lt_o");
    p.Lt_s = mat_from_json(j.at("Lt_s"), "Lt_s");
    p.kl_trace = j.at("kl_trace").get<std::vector<double>>();
    if (j.contains("kl_at_identity")) p.kl_at_identity = j.at("kl_at_identity").get<double>();
    p.coords = mat_from_json(j.at("coords"), "coords");
    p.env_lo = j.at("env_lo").get<double>();
    p.env_hi = j.at("env_hi").get<double>();
    return p;
}

// --- fit summary -------------------------------------------------------------------

double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double harmonic_amplitude_mean(const ClimatologyFit& c) {
    if (c.K == 0) return 0.0;
    const int off = 1 + (c.with_trend ? 1 : 0);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < c.coef.rows(); ++i) {
        double s = 0.0;
        for (int k = 0; k < c.K; ++k) {
            const double a = c.coef(i, off + 2 * k);
            const double b = c.coef(i, off + 2 * k + 1);
            s += a * a + b * b;
        }
        acc += std::sqrt(s);
    }
    return acc / static_cast<double>(c.coef.rows());
}

int trend_significant_count(const ClimatologyFit& c) {
    if (!c.with_trend) return 0;
    int n = 0;
    for (Eigen::Index i = 0; i < c.coef.rows(); ++i) {
        const double se = c.trend_se(i);
        if (se > 0.0 && std::abs(c.coef(i, 1)) / se > 1.96) ++n;
    }
    return n;
}

struct SideMoments {
    std::vector<double> skew, kurt, skew_abs;
};

SideMoments innovation_moments(const Eigen::MatrixXd& innov) {
    SideMoments m;
    for (Eigen::Index i = 0; i < innov.rows(); ++i) {
        const Moments mo = sample_moments(innov.row(i).transpose());
        m.skew.push_back(mo.skewness);
        m.kurt.push_back(mo.excess_kurtosis);
        m.skew_abs.push_back(std::abs(mo.skewness));
    }
    return m;
}

json side_summary(const Field& f, const ClimatologyFit& clim, const ARFit& ar,
                  const Eigen::VectorXd& lambda, bool transformed) {
    const ResidualField rf = detrend(f, clim, ar);
    SideMoments pre = innovation_moments(rf.innov);
    json j;
    j["trend_significant"] = trend_significant_count(clim);
    j["n_sites"] = f.n_sites();
    j["harmonic_amplitude_mean"] = harmonic_amplitude_mean(clim);
    j["skewness_median"] = median_of(pre.skew);
    j["skewness_abs_median"] = median_of(pre.skew_abs);
    j["excess_kurtosis_median"] = median_of(pre.kurt);
    if (transformed) {
        SideMoments post = innovation_moments(yeo_johnson(rf.innov, lambda));
        j["skewness_abs_median_post_transform"] = median_of(post.skew_abs);
    }
    return j;
}

void print_fit_summary(const json& s, const AdjustmentPlan& plan) {
    std::cout << "method " << method_name(plan.opt.method) << ", mode "
              << mode_name(plan.opt.mode) << "\n";
    for (const char* side : {"observed", "simulated"}) {
        const json& o = s.at(side);
        std::cout << side << ": " << o.at("trend_significant").get<int>() << "/"
                  << o.at("n_sites").get<int>() << " sites with significant trend, "
                  << "harmonic amplitude mean " << o.at("harmonic_amplitude_mean").get<double>()
                  << ", skewness median " << o.at("skewness_median").get<double>()
                  << ", excess kurtosis median " << o.at("excess_kurtosis_median").get<double>();
        if (o.contains("skewness_abs_median_post_transform"))
            std::cout << ", |skewness| median pre " << o.at("skewness_abs_median").get<double>()
                      << " -> post " << o.at("skewness_abs_median_post_transform").get<double>();
        std::cout << "\n";
    }
    if (!plan.kl_trace.empty()) {
        std::cout << "lambda refinement trace (nats):";
        for (double v : plan.kl_trace) std::cout << " " << v;
        std::cout << "\n";
    }
}

// --- commands -----------------------------------------------------------------------

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::optional<std::string> mode;
};

int cmd_fit(const CommonFlags& fl) {
    const json cfg = load_config(fl.config);
    ConfigReader r(cfg, "fit config");
    check_schema_version(r);
    const std::string obs_path = r.require_string("obs");
    const std::string sim_path = r.require_string("sim");
    const std::string out_path = r.require_string("out");
    const bool allow_negative = r.get_bool("allow_negative", false);
    const std::string clusters_path = r.get_string("clusters", "");

    AdjustOptions opt = parse_adjust_options(r, AdjustOptions{});
    opt.method = parse_method(r.require_string("method"));
    opt.seed = r.get_u64("seed", opt.seed);
    r.finish();
    if (fl.seed) opt.seed = *fl.seed;
    if (fl.mode) opt.mode = parse_mode(*fl.mode);

    const Field obs = load_any_field(obs_path, !allow_negative);
    const Field sim = load_any_field(sim_path, !allow_negative);
    if (!clusters_path.empty())
        opt.cluster_labels = load_clusters_csv(clusters_path, obs.n_sites());

    AdjustmentPlan plan = fit_plan(obs, sim, opt);
    log_event({{"event", "fit_done"},
               {"method", method_name(opt.method)},
               {"seed", opt.seed},
               {"kl_trace_len", plan.kl_trace.size()}});

    json bundle = plan_to_json(plan);
    const bool transformed =
        opt.method == AdjustMethod::T1 || opt.method == AdjustMethod::TC;
    json summary;
    summary["observed"] = side_summary(obs, plan.clim_o, plan.ar_o, plan.lambda_o, transformed);
    summary["simulated"] = side_summary(sim, plan.clim_s, plan.ar_s, plan.lambda_s, transformed);
    bundle["summary"] = summary;
    write_text(out_path, bundle.dump(2) + "\n");
    log_event({{"event", "write_plan"}, {"path", out_path}});
    print_fit_summary(summary, plan);
    return 0;
}

int cmd_adjust(const CommonFlags& fl) {
    const json cfg = load_config(fl.config);
    ConfigReader r(cfg, "adjust config");
    check_schema_version(r);
    const std::string plan_path = r.require_string("plan");
    const std::string future_path = r.require_string("sim_future");
    const std::string out_path = r.require_string("out");
    const std::string sim_hist_path = r.get_string("sim_hist", "");
    const std::string obs_hist_path = r.get_string("obs_hist", "");
    const std::string heldout_path = r.get_string("obs_heldout", "");
    const std::string report_path = r.get_string("report", "");
    const int kl_k = r.get_int("kl_k", 0);
    const bool allow_negative = r.get_bool("allow_negative", false);
    r.finish();

    std::ifstream in(plan_path);
    if (!in) throw DataError("cannot open plan: " + plan_path);
    json pj;
    try {
        pj = json::parse(in);
    } catch (const json::parse_error& e) {
        throw DataError("plan parse error in " + plan_path + ": " + e.what());
    }
    AdjustmentPlan plan = plan_from_json(pj, plan_path);

    const Field future = load_any_field(future_path, !allow_negative);
    Field sim_hist, obs_hist;
    const Field* sim_hist_p = nullptr;
    const Field* obs_hist_p = nullptr;
    if (!sim_hist_path.empty()) {
        sim_hist = load_any_field(sim_hist_path, !allow_negative);
        sim_hist_p = &sim_hist;
    }
    if (!obs_hist_path.empty()) {
        obs_hist = load_any_field(obs_hist_path, !allow_negative);
        obs_hist_p = &obs_hist;
    }

    const Field adjusted = apply_plan(plan, future, sim_hist_p, obs_hist_p);
    save_any_field(adjusted, out_path);

    json report;
    report["kind"] = "adjust_report";
    report["schema_version"] = 1;
    report["method"] = method_name(plan.opt.method);
    report["mode"] = mode_name(plan.opt.mode);
    report["seed"] = plan.opt.seed;
    report["n_sites"] = adjusted.n_sites();
    report["n_days"] = adjusted.n_days();
    report["lambda_o"] = vec_to_json(plan.lambda_o);
    report["lambda_s"] = vec_to_json(plan.lambda_s);
    if (!heldout_path.empty()) {
        const Field heldout = load_any_field(heldout_path, !allow_negative);
        const KlEstimate kl =
            knn_kl(adjusted.values.transpose(), heldout.values.transpose(), kl_k);
        report["kl_heldout"] = {{"value", kl.value},
                                {"k", kl.k},
                                {"m", kl.m_est},
                                {"m_prime", kl.m_truth},
                                {"floored_pairs", kl.floored_pairs}};
    }
    const std::string text = report.dump(2) + "\n";
    if (!report_path.empty()) write_text(report_path, text);
    std::cout << text;
    return 0;
}

int cmd_validate(const CommonFlags& fl) {
    const json cfg = load_config(fl.config);
    ConfigReader r(cfg, "validate config");
    check_schema_version(r);
    ValidationConfig vc;
    vc.adjust = validation_adjust_defaults();
    const std::string out_path = r.require_string("out");
    const std::string summary_path = r.get_string("summary", "");
    vc.n_sims = r.get_int("n_sims", vc.n_sims);
    vc.n_days = r.get_int("n_days", vc.n_days);
    if (r.has("layout")) {
        ConfigReader lr(r.get_object("layout"), "validate config layout");
        vc.layout.regions_x = lr.get_int("regions_x", vc.layout.regions_x);
        vc.layout.regions_y = lr.get_int("regions_y", vc.layout.regions_y);
        vc.layout.grid = lr.get_int("grid", vc.layout.grid);
        lr.finish();
    }
    if (r.has("obs_gen")) {
        ConfigReader gr(r.get_object("obs_gen"), "validate config obs_gen");
        vc.obs_gen.skewness = gr.get_double("skewness", vc.obs_gen.skewness);
        vc.obs_gen.dof = gr.get_double("dof", vc.obs_gen.dof);
        vc.obs_gen.range_within = gr.get_double("range_within", vc.obs_gen.range_within);
        vc.obs_gen.range_between = gr.get_double("range_between", vc.obs_gen.range_between);
        vc.obs_gen.gaussian_limit = gr.get_bool("gaussian_limit", vc.obs_gen.gaussian_limit);
        gr.finish();
    }
    if (r.has("sim_gen")) {
        ConfigReader gr(r.get_object("sim_gen"), "validate config sim_gen");
        vc.sim_gen.dof = gr.get_double("dof", vc.sim_gen.dof);
        vc.sim_gen.range_eta = gr.get_double("range_eta", vc.sim_gen.range_eta);
        vc.sim_gen.range_xi = gr.get_double("range_xi", vc.sim_gen.range_xi);
        vc.sim_gen.tau2 = gr.get_double("tau2", vc.sim_gen.tau2);
        vc.sim_gen.gaussian_limit = gr.get_bool("gaussian_limit", vc.sim_gen.gaussian_limit);
        gr.finish();
    }
    if (r.has("methods")) {
        vc.methods.clear();
        for (const auto& name : r.get_string_list("methods", {}))
            vc.methods.push_back(parse_method(name));
    }
    if (r.has("baseline")) vc.baseline = parse_method(r.get_string("baseline", ""));
    if (r.has("adjust")) {
        ConfigReader ar(r.get_object("adjust"), "validate config adjust");
        vc.adjust = parse_adjust_options(ar, vc.adjust);
        ar.finish();
    }
    vc.kl_k = r.get_int("kl_k", vc.kl_k);
    vc.seed = r.get_u64("seed", vc.seed);
    vc.threads = r.get_int("threads", vc.threads);
    r.finish();
    if (fl.seed) vc.seed = *fl.seed;
    if (fl.threads) vc.threads = *fl.threads;
    if (fl.mode) vc.adjust.mode = parse_mode(*fl.mode);

    log_event({{"event", "validate_start"},
               {"n_sims", vc.n_sims},
               {"n_days", vc.n_days},
               {"sites", vc.layout.n_sites()},
               {"seed", vc.seed}});
    const ValidationResult res = run_validation(vc);

    std::string csv = "sim_id,method,kl,kl_ratio_vs_" + method_name(vc.baseline) + "\n";
    for (const auto& row : res.rows)
        csv += std::to_string(row.sim) + "," + row.method + "," + fmt_double(row.kl) + "," +
               fmt_double(row.ratio) + "\n";
    write_text(out_path, csv);
    log_event({{"event", "write_csv"}, {"path", out_path}, {"rows", res.rows.size()}});

    json summary;
    summary["kind"] = "validation_summary";
    summary["schema_version"] = 1;
    summary["seed"] = vc.seed;
    summary["n_sims"] = vc.n_sims;
    summary["n_days"] = vc.n_days;
    summary["n_sites"] = vc.layout.n_sites();
    summary["baseline"] = method_name(vc.baseline);
    summary["median_kl"] = res.median_kl;
    summary["median_kl_ratio"] = res.median_ratio;
    const std::string text = summary.dump(2) + "\n";
    if (!summary_path.empty()) write_text(summary_path, text);
    std::cout << text;
    return 0;
}

int cmd_kl(const CommonFlags& fl) {
    const json cfg = load_config(fl.config);
    ConfigReader r(cfg, "kl config");
    check_schema_version(r);
    const std::string est_path = r.require_string("est");
    const std::string truth_path = r.require_string("truth");
    const std::string out_path = r.get_string("out", "");
    const int k = r.get_int("k", 0);
    const bool allow_negative = r.get_bool("allow_negative", true);
    r.finish();

    const Field est = load_any_field(est_path, !allow_negative);
    const Field truth = load_any_field(truth_path, !allow_negative);
    const KlEstimate kl = knn_kl(est.values.transpose(), truth.values.transpose(), k);
    json rec = {{"value", kl.value},
                {"k", kl.k},
                {"m", kl.m_est},
                {"m_prime", kl.m_truth},
                {"floored_pairs", kl.floored_pairs}};
    const std::string text = rec.dump() + "\n";
    if (!out_path.empty()) write_text(out_path, text);
    std::cout << text;
    return 0;
}

int cmd_energy(const CommonFlags& fl) {
    const json cfg = load_config(fl.config);
    ConfigReader r(cfg, "energy config");
    check_schema_version(r);
    const std::string hist_path = r.require_string("hist");
    const std::string future_path = r.require_string("future");
    const std::string farm_path = r.require_string("farm");
    const std::string out_path = r.require_string("out");
    const std::string report_path = r.get_string("report", "");
    const std::string profiles_path = r.get_string("profiles", "");
    const std::string curve_path = r.get_string("power_curve", "");
    const double ref_height = r.get_double("ref_height", 10.0);
    const double hub_height = r.get_double("hub_height", 100.0);
    const double alpha = r.get_double("alpha", 1.0 / 7.0);
    const double day_sd = r.get_double("day_sd", 0.0);
    const int n_draws = r.get_int("n_draws", 100);
    std::uint64_t seed = r.get_u64("seed", 0x0E4E26ULL);
    int threads = r.get_int("threads", 1);
    const bool allow_negative = r.get_bool("allow_negative", false);
    r.finish();
    if (fl.seed) seed = *fl.seed;
    if (fl.threads) threads = *fl.threads;

    const Field hist = load_any_field(hist_path, !allow_negative);
    const Field future = load_any_field(future_path, !allow_negative);
    const ShearFit shear = profiles_path.empty()
                               ? constant_shear(hist.n_sites(), ref_height, alpha)
                               : fit_shear(load_profiles_csv(profiles_path), hist.n_sites(),
                                           ref_height);
    const PowerCurve curve =
        curve_path.empty() ? PowerCurve{} : load_power_curve_csv(curve_path);
    const std::vector<FarmSite> farm = load_farm_csv(farm_path);

    const RevenueDelta rd = revenue_delta(hist, future, shear, hub_height, day_sd, curve, farm,
                                          n_draws, seed, threads);

    std::string csv = "site_id,mean_usd_per_year,sd_usd_per_year\n";
    for (std::size_t i = 0; i < rd.site_id.size(); ++i)
        csv += std::to_string(rd.site_id[i]) + "," +
               fmt_double(rd.mean_per_year(static_cast<Eigen::Index>(i))) + "," +
               fmt_double(rd.sd_per_year(static_cast<Eigen::Index>(i))) + "\n";
    write_text(out_path, csv);
    log_event({{"event", "write_csv"}, {"path", out_path}, {"rows", rd.site_id.size()}});

    json report;
    report["kind"] = "energy_report";
    report["schema_version"] = 1;
    report["seed"] = seed;
    report["n_draws"] = rd.n_draws;
    report["hub_height"] = hub_height;
    report["total_mean_usd_per_year"] = rd.total_mean_per_year;
    report["total_sd_usd_per_year"] = rd.total_sd_per_year;
    const std::string text = report.dump(2) + "\n";
    if (!report_path.empty()) write_text(report_path, text);
    std::cout << text;
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"trans-Gaussian adjustment of simulated wind fields"};
    app.require_subcommand(1);

    CommonFlags fit_fl, adj_fl, val_fl, kl_fl, en_fl;
    auto add_common = [](CLI::App* sub, CommonFlags& fl, bool with_mode) {
        sub->add_option("--config", fl.config, "JSON configuration path")->required();
        sub->add_option("--seed", fl.seed, "root seed override");
        sub->add_option("--threads", fl.threads, "parallelism cap override");
        if (with_mode)
            sub->add_option("--mode", fl.mode, "adjustment mode override (as-written|anomaly)");
    };
    CLI::App* fit = app.add_subcommand("fit", "fit an adjustment plan from paired histories");
    add_common(fit, fit_fl, true);
    CLI::App* adj = app.add_subcommand("adjust", "apply a fitted plan to a future window");
    add_common(adj, adj_fl, false);
    CLI::App* val = app.add_subcommand("validate", "synthetic-field method comparison study");
    add_common(val, val_fl, true);
    CLI::App* klc = app.add_subcommand("kl", "divergence between two field sample clouds");
    add_common(klc, kl_fl, false);
    CLI::App* en = app.add_subcommand("energy", "hub-height power and revenue comparison");
    add_common(en, en_fl, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (fit->parsed()) return cmd_fit(fit_fl);
        if (adj->parsed()) return cmd_adjust(adj_fl);
        if (val->parsed()) return cmd_validate(val_fl);
        if (klc->parsed()) return cmd_kl(kl_fl);
        if (en->parsed()) return cmd_energy(en_fl);
        throw ConfigError("no subcommand given");
    } catch (const ConfigError& e) {
        log_event({{"event", "error"}, {"kind", "config"}, {"message", e.what()}});
        return 2;
    } catch (const DataError& e) {
        log_event({{"event", "error"}, {"kind", "data"}, {"message", e.what()}});
        return 3;
    } catch (const NumericError& e) {
        log_event({{"event", "error"}, {"kind", "numeric"}, {"message", e.what()}});
        return 4;
    } catch (const std::exception& e) {
        log_event({{"event", "error"}, {"kind", "internal"}, {"message", e.what()}});
        return 1;
    }
}

}  // namespace windadj
