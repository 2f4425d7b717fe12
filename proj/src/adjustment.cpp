#include "windadj/adjustment.hpp"

#include <algorithm>
#include <numeric>
#include <cmath>
#include <limits>

#include "windadj/divergence.hpp"
#include "windadj/errors.hpp"
#include "windadj/optimize.hpp"
#include "windadj/parallel.hpp"
#include "windadj/transform.hpp"

namespace windadj {

namespace {

void check_same_sites(const std::vector<Site>& a, const std::vector<Site>& b) {
    if (a.size() != b.size()) throw DataError("site sets differ in size");
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].id != b[i].id || a[i].lon != b[i].lon || a[i].lat != b[i].lat)
            throw DataError("site sets differ at site " + std::to_string(i));
}

void check_same_calendar(const Calendar& a, const Calendar& b) {
    if (!(a.start() == b.start()) || a.n_days() != b.n_days())
        throw DataError("historical fields must share one calendar");
}

bool contiguous(const Calendar& hist, const Calendar& fut) {
    return days_from_civil(hist.date_at(hist.n_days() - 1)) + 1 == days_from_civil(fut.start());
}

Eigen::VectorXd row_means(const Eigen::MatrixXd& X) { return X.rowwise().mean(); }

Eigen::VectorXd row_sds(const Eigen::MatrixXd& X) {
    const double T = static_cast<double>(X.cols());
    Eigen::MatrixXd Xc = X.colwise() - X.rowwise().mean();
    return (Xc.rowwise().squaredNorm() / std::max(1.0, T - 1.0)).cwiseSqrt();
}

CovModel resolve_cov_model(const AdjustOptions& opt) {
    if (opt.cov_model_set) return opt.cov_model;
    return opt.method == AdjustMethod::MC ? CovModel::Matern : CovModel::Nonstat;
}

bool is_transform_method(AdjustMethod m) {
    return m == AdjustMethod::T1 || m == AdjustMethod::TC;
}

bool needs_cov(AdjustMethod m) {
    return m == AdjustMethod::MC || m == AdjustMethod::MN || is_transform_method(m);
}

/// Fit the configured covariance model to zero-mean replicates and factor it.
/// The model covariance is shrunk toward the diagonal of empirical per-site
/// variances: a cross-site transfer estimated from few days is noise-dominated
/// and linear mixing of heavy-tailed residuals inflates the adjusted tails, so
/// short fit windows fall back to per-site scaling.
void fit_cov_side(const AdjustOptions& opt, CovModel model, const Eigen::MatrixXd& D,
                  const Eigen::MatrixXd& coords, const Eigen::MatrixXd& Xc,
                  MaternParams* mat, NonstatParams* ns, Eigen::MatrixXd* L) {
    Eigen::MatrixXd cov;
    if (model == CovModel::Matern) {
        *mat = fit_matern(D, Xc, opt.nu_grid);
        cov = matern_cov(D, *mat);
    } else {
        *ns = fit_nonstat(coords, Xc, opt.knots_x, opt.knots_y);
        cov = nonstat_cov(*ns, coords);
    }
    const double n = static_cast<double>(Xc.rows());
    const double T = static_cast<double>(Xc.cols());
    double g = opt.cov_shrinkage >= 0.0 ? std::min(opt.cov_shrinkage, 1.0)
                                        : std::min(1.0, n / std::max(1.0, T));
    if (g > 0.0) {
        Eigen::VectorXd ev = (Xc.rowwise().squaredNorm() / std::max(1.0, T - 1.0));
        cov = (1.0 - g) * cov;
        cov.diagonal() += g * ev;
    }
    *L = build_factor(cov).L;
}

Eigen::VectorXd pooled_cluster_lambdas(const Eigen::MatrixXd& E, const std::vector<int>& labels,
                                       int k, double lo, double hi) {
    const int n = static_cast<int>(E.rows());
    const int T = static_cast<int>(E.cols());
    Eigen::VectorXd lam(n);
    for (int c = 0; c < k; ++c) {
        std::vector<int> members;
        for (int i = 0; i < n; ++i)
            if (labels[static_cast<std::size_t>(i)] == c) members.push_back(i);
        if (members.empty()) continue;
        Eigen::VectorXd pooled(static_cast<Eigen::Index>(members.size()) * T);
        Eigen::Index pos = 0;
        for (int i : members) {
            pooled.segment(pos, T) = E.row(i).transpose();
            pos += T;
        }
        const double lc = fit_lambda_mle(pooled, lo, hi).lambda;
        for (int i : members) lam(i) = lc;
    }
    return lam;
}

/// Correlation factor of a fitted covariance factor: strip the marginal
/// scales so variance changes can be re-applied per evaluation.
Eigen::MatrixXd correlation_factor(const Eigen::MatrixXd& L) {
    Eigen::MatrixXd cov = L * L.transpose();
    Eigen::VectorXd d = cov.diagonal().cwiseSqrt();
    Eigen::MatrixXd corr = d.cwiseInverse().asDiagonal() * cov * d.cwiseInverse().asDiagonal();
    corr.diagonal().setOnes();
    return build_factor(corr).L;
}

}  // namespace

AdjustMethod parse_method(const std::string& s) {
    std::string u;
    for (char c : s) u.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    if (u == "M") return AdjustMethod::M;
    if (u == "MV") return AdjustMethod::MV;
    if (u == "MC") return AdjustMethod::MC;
    if (u == "MN") return AdjustMethod::MN;
    if (u == "T1") return AdjustMethod::T1;
    if (u == "TC") return AdjustMethod::TC;
    throw ConfigError("unknown adjustment method: '" + s + "'");
}

std::string method_name(AdjustMethod m) {
    switch (m) {
        case AdjustMethod::M: return "M";
        case AdjustMethod::MV: return "MV";
        case AdjustMethod::MC: return "MC";
        case AdjustMethod::MN: return "MN";
        case AdjustMethod::T1: return "T1";
        case AdjustMethod::TC: return "TC";
    }
    throw ConfigError("unknown adjustment method enum");
}

Eigen::MatrixXd adjust_m(const Eigen::MatrixXd& eps, const Eigen::VectorXd& m_o,
                         const Eigen::VectorXd& m_s) {
    return ((eps.colwise() - m_s).colwise() + m_o);
}

Eigen::MatrixXd adjust_mv(const Eigen::MatrixXd& eps, const Eigen::VectorXd& m_o,
                          const Eigen::VectorXd& m_s, const Eigen::VectorXd& sd_o,
                          const Eigen::VectorXd& sd_s) {
    for (Eigen::Index i = 0; i < sd_s.size(); ++i)
        if (!(sd_s(i) > 0.0))
            throw NumericError("zero simulated innovation variance at site " + std::to_string(i));
    Eigen::VectorXd ratio = sd_o.cwiseQuotient(sd_s);
    Eigen::MatrixXd out = ratio.asDiagonal() * (eps.colwise() - m_s);
    return out.colwise() + m_o;
}

Eigen::MatrixXd adjust_cov(const Eigen::MatrixXd& eps, const Eigen::VectorXd& m_o,
                           const Eigen::VectorXd& m_s, const Eigen::MatrixXd& L_o,
                           const Eigen::MatrixXd& L_s) {
    Eigen::MatrixXd Y = eps.colwise() - m_s;
    L_s.triangularView<Eigen::Lower>().solveInPlace(Y);
    Eigen::MatrixXd out = L_o.triangularView<Eigen::Lower>() * Y;
    return out.colwise() + m_o;
}

Eigen::MatrixXd adjust_transformed(const Eigen::MatrixXd& eps, const Eigen::VectorXd& lambda_s,
                                   const Eigen::VectorXd& lambda_o, const Eigen::VectorXd& mt_s,
                                   const Eigen::VectorXd& mt_o, const Eigen::MatrixXd& Lt_s,
                                   const Eigen::MatrixXd& Lt_o) {
    Eigen::MatrixXd Z = yeo_johnson(eps, lambda_s);
    Eigen::MatrixXd adj = adjust_cov(Z, mt_o, mt_s, Lt_o, Lt_s);
    return inverse_yeo_johnson(adj, lambda_o);
}

Eigen::MatrixXd adjust_transformed_shift(const Eigen::MatrixXd& eps,
                                         const Eigen::VectorXd& lambda_s,
                                         const Eigen::VectorXd& lambda_o,
                                         const Eigen::VectorXd& mt_s, const Eigen::VectorXd& mt_o,
                                         const Eigen::MatrixXd& Lt_s, const Eigen::MatrixXd& Lt_o) {
    Eigen::MatrixXd Z = yeo_johnson(eps, lambda_s);
    Eigen::VectorXd shift = mt_o - mt_s;
    Lt_s.triangularView<Eigen::Lower>().solveInPlace(shift);
    shift = Lt_o.triangularView<Eigen::Lower>() * shift;
    return inverse_yeo_johnson(Z.colwise() + shift, lambda_o);
}

AdjustmentPlan fit_plan(const Field& obs_hist, const Field& sim_hist, const AdjustOptions& opt) {
    check_same_sites(obs_hist.sites, sim_hist.sites);
    check_same_calendar(obs_hist.cal, sim_hist.cal);
    if (opt.P < 0) throw ConfigError("AR order must be >= 0");

    AdjustmentPlan plan;
    plan.opt = opt;
    plan.opt.cov_model = resolve_cov_model(opt);
    plan.opt.cov_model_set = true;
    plan.sites = obs_hist.sites;
    const int n = obs_hist.n_sites();

    plan.clim_o = fit_climatology(obs_hist, opt.K, opt.with_trend);
    plan.clim_s = fit_climatology(sim_hist, opt.K, opt.with_trend);
    {
        Eigen::MatrixXd ao = obs_hist.values - climatology_mean(plan.clim_o, obs_hist.cal);
        Eigen::MatrixXd as = sim_hist.values - climatology_mean(plan.clim_s, sim_hist.cal);
        plan.ar_o = fit_ar(ao, opt.P);
        plan.ar_s = fit_ar(as, opt.P);
    }
    Eigen::MatrixXd E_O = detrend(obs_hist, plan.clim_o, plan.ar_o).innov;
    Eigen::MatrixXd E_S = detrend(sim_hist, plan.clim_s, plan.ar_s).innov;
    plan.m_o = row_means(E_O);
    plan.m_s = row_means(E_S);
    plan.sd_o = row_sds(E_O);
    plan.sd_s = row_sds(E_S);
    plan.coords = planar_coords(plan.sites, opt.dist);
    plan.env_lo = obs_hist.values.minCoeff();
    plan.env_hi = obs_hist.values.maxCoeff();

    if (!needs_cov(opt.method)) return plan;

    const Eigen::MatrixXd D = pairwise_distance(plan.sites, opt.dist);
    if (!is_transform_method(opt.method)) {
        fit_cov_side(plan.opt, plan.opt.cov_model, D, plan.coords,
                     E_O.colwise() - plan.m_o, &plan.mat_o, &plan.ns_o, &plan.L_o);
        fit_cov_side(plan.opt, plan.opt.cov_model, D, plan.coords,
                     E_S.colwise() - plan.m_s, &plan.mat_s, &plan.ns_s, &plan.L_s);
        return plan;
    }

    // --- transformation methods -------------------------------------------
    int k = 1;
    if (!opt.cluster_labels.empty()) {
        if (static_cast<int>(opt.cluster_labels.size()) != n)
            throw ConfigError("cluster labels must cover every site");
        plan.labels = opt.cluster_labels;
        for (int v : plan.labels) {
            if (v < 0) throw ConfigError("negative cluster label");
            k = std::max(k, v + 1);
        }
    } else if (opt.method == AdjustMethod::T1) {
        plan.labels.assign(static_cast<std::size_t>(n), 0);
    } else {
        k = std::min(opt.n_clusters, n);
        Eigen::MatrixXd feats(n, 3);
        for (int i = 0; i < n; ++i) {
            Eigen::VectorXd row = E_O.row(i).transpose();
            feats(i, 0) = fit_lambda_mle(row, opt.lambda_lo, opt.lambda_hi).lambda;
            feats(i, 1) = plan.sites[static_cast<std::size_t>(i)].lat;
            feats(i, 2) = plan.sites[static_cast<std::size_t>(i)].lon;
        }
        ClusterAssignment a = weighted_kmeans(feats, opt.cluster_weights, k,
                                              opt.cluster_restarts,
                                              seed_for(opt.seed, "clusters", 0));
        plan.labels = a.label;
    }
    if (opt.fixed_lambda_o.size() > 0) {
        if (opt.fixed_lambda_o.size() != n || opt.fixed_lambda_s.size() != n)
            throw ConfigError("fixed lambdas must cover every site on both sides");
        plan.lambda_o = opt.fixed_lambda_o;
        plan.lambda_s = opt.fixed_lambda_s;
    } else {
        // The observation-side transformation is inverted when mapping the
        // adjusted series back to the original scale, so its parameter is kept
        // in [0, 2], where the inverse is defined on the whole real line.
        const double olo = std::max(opt.lambda_lo, 0.0);
        const double ohi = std::min(opt.lambda_hi, 2.0);
        if (!(olo < ohi))
            throw ConfigError("lambda bounds must overlap [0, 2] for transformation methods");
        plan.lambda_o = pooled_cluster_lambdas(E_O, plan.labels, k, olo, ohi);
        plan.lambda_s =
            pooled_cluster_lambdas(E_S, plan.labels, k, opt.lambda_lo, opt.lambda_hi);
    }

    auto refit_transformed = [&](void) {
        Eigen::MatrixXd ZO = yeo_johnson(E_O, plan.lambda_o);
        Eigen::MatrixXd ZS = yeo_johnson(E_S, plan.lambda_s);
        plan.mt_o = row_means(ZO);
        plan.mt_s = row_means(ZS);
        fit_cov_side(plan.opt, plan.opt.cov_model, D, plan.coords,
                     ZO.colwise() - plan.mt_o, &plan.mat_o, &plan.ns_o, &plan.Lt_o);
        fit_cov_side(plan.opt, plan.opt.cov_model, D, plan.coords,
                     ZS.colwise() - plan.mt_s, &plan.mat_s, &plan.ns_s, &plan.Lt_s);
    };
    refit_transformed();

    if (opt.optimize_lambda && opt.fixed_lambda_o.size() == 0) {
        optimize_lambdas(plan, obs_hist, sim_hist);
    }
    return plan;
}

namespace {

/// State for the transformation-parameter search: everything that changes
/// with a lambda update, plus the frozen correlation transfer.
struct LambdaSearchState {
    const Eigen::MatrixXd& E_O;
    const Eigen::MatrixXd& E_S;

    LambdaSearchState(const Eigen::MatrixXd& eo, const Eigen::MatrixXd& es)
        : E_O(eo), E_S(es) {}

    Eigen::MatrixXd ZO, ZS;        // full-history transforms
    Eigen::MatrixXd ZS_eval;       // transform restricted to eval days
    Eigen::VectorXd lam_o, lam_s;
    Eigen::VectorXd mt_o, mt_s, st_o, st_s;
    Eigen::MatrixXd M0;            // corr_factor_O * corr_factor_S^{-1}
    Eigen::MatrixXd obs_cloud;     // eval days x sites, fixed
    std::vector<int> days;         // held-out evaluation days
    std::vector<int> fit_days;     // complement: days the moments are fit on
    int kk = 1;
    AdjustMode mode = AdjustMode::Anomaly;
    double range_cap = 1e15;       // envelope: largest observed innovation magnitude

    /// Moments come from the fit days only; the evaluation days are held out
    /// so the objective scores the candidate on data the moments have not
    /// seen.  An in-sample evaluation would be moment-matched by
    /// construction, hiding genuine mismatch and letting the search chase
    /// estimator artifacts instead.
    void refresh_moments(bool obs_side, const std::vector<int>& rows) {
        const auto& Z = obs_side ? ZO : ZS;
        const double nf = static_cast<double>(fit_days.size());
        for (int i : rows) {
            double mu = 0.0;
            for (int t : fit_days) mu += Z(i, t);
            mu /= nf;
            double ss = 0.0;
            for (int t : fit_days) ss += (Z(i, t) - mu) * (Z(i, t) - mu);
            const double sd = std::sqrt(ss / std::max(1.0, nf - 1.0));
            if (obs_side) {
                mt_o(i) = mu;
                st_o(i) = sd;
            } else {
                mt_s(i) = mu;
                st_s(i) = sd;
            }
        }
    }

    void retransform_rows(bool obs_side, const std::vector<int>& rows, double lambda) {
        for (int i : rows) {
            if (obs_side) {
                lam_o(i) = lambda;
                for (Eigen::Index t = 0; t < E_O.cols(); ++t)
                    ZO(i, t) = yeo_johnson(E_O(i, t), lambda);
            } else {
                lam_s(i) = lambda;
                for (Eigen::Index t = 0; t < E_S.cols(); ++t)
                    ZS(i, t) = yeo_johnson(E_S(i, t), lambda);
                for (std::size_t c = 0; c < days.size(); ++c)
                    ZS_eval(i, static_cast<Eigen::Index>(c)) = ZS(i, days[c]);
            }
        }
        refresh_moments(obs_side, rows);
    }

    double objective() const {
        for (Eigen::Index i = 0; i < st_s.size(); ++i)
            if (!(st_s(i) > 1e-12) || !(st_o(i) > 1e-12)) return 1e18;
        Eigen::MatrixXd A = st_o.asDiagonal() * M0 * st_s.cwiseInverse().asDiagonal();
        Eigen::MatrixXd adj;
        if (mode == AdjustMode::AsWritten) {
            Eigen::VectorXd shift = A * (mt_o - mt_s);
            adj = ZS_eval.colwise() + shift;
        } else {
            Eigen::MatrixXd Zc = ZS_eval.colwise() - mt_s;
            adj = (A * Zc).colwise() + mt_o;
        }
        Eigen::MatrixXd eps = inverse_yeo_johnson(adj, lam_o);
        if (!eps.allFinite()) return 1e18;
        // Truncate to the observed envelope, exactly as the plan application
        // will.  Near the ends of the parameter range the inverse map turns
        // exponential and exiles poorly matched tail days arbitrarily far
        // away, where they form a self-consistent cluster that
        // nearest-neighbor estimates barely see -- the core then scores
        // deceptively well.  Clamping pins those days to the envelope, where
        // they pile up and the estimate sees them at full weight, so the
        // search is scored on the same bounded output it would produce.
        eps = eps.cwiseMax(-range_cap).cwiseMin(range_cap);
        return knn_kl(eps.transpose(), obs_cloud, kk).value;
    }
};

}  // namespace

void optimize_lambdas(AdjustmentPlan& plan, const Field& obs_hist, const Field& sim_hist) {
    if (!is_transform_method(plan.opt.method))
        throw ConfigError("lambda optimization applies to transformation methods only");
    const AdjustOptions& opt = plan.opt;

    Eigen::MatrixXd E_O = detrend(obs_hist, plan.clim_o, plan.ar_o).innov;
    Eigen::MatrixXd E_S = detrend(sim_hist, plan.clim_s, plan.ar_s).innov;
    const int n = static_cast<int>(E_O.rows());
    const int Tinn = static_cast<int>(E_O.cols());

    int k = 1;
    for (int v : plan.labels) k = std::max(k, v + 1);
    std::vector<std::vector<int>> members(static_cast<std::size_t>(k));
    for (int i = 0; i < n; ++i) members[static_cast<std::size_t>(plan.labels[static_cast<std::size_t>(i)])].push_back(i);

    // Fixed held-out evaluation days; at most half the window so the
    // remaining days still determine the moments.
    const int ndays = std::max(2, std::min(opt.opt_eval_days, Tinn / 2));
    RngStream rng(seed_for(opt.seed, "lambda-opt/days", 0));
    std::vector<int> days;
    {
        auto pick = rng.sample_without_replacement(static_cast<std::size_t>(Tinn),
                                                   static_cast<std::size_t>(ndays));
        days.assign(pick.begin(), pick.end());
        std::sort(days.begin(), days.end());
    }

    LambdaSearchState st(E_O, E_S);
    st.days = days;
    {
        std::vector<char> held(static_cast<std::size_t>(Tinn), 0);
        for (int d : days) held[static_cast<std::size_t>(d)] = 1;
        for (int t = 0; t < Tinn; ++t)
            if (!held[static_cast<std::size_t>(t)]) st.fit_days.push_back(t);
    }
    st.mode = opt.mode;
    st.lam_o = plan.lambda_o;
    st.lam_s = plan.lambda_s;
    st.ZO = yeo_johnson(E_O, st.lam_o);
    st.ZS = yeo_johnson(E_S, st.lam_s);
    st.ZS_eval.resize(n, ndays);
    for (int c = 0; c < ndays; ++c) st.ZS_eval.col(c) = st.ZS.col(days[static_cast<std::size_t>(c)]);
    st.mt_o.resize(n);
    st.mt_s.resize(n);
    st.st_o.resize(n);
    st.st_s.resize(n);
    {
        std::vector<int> all(static_cast<std::size_t>(n));
        std::iota(all.begin(), all.end(), 0);
        st.refresh_moments(true, all);
        st.refresh_moments(false, all);
    }
    st.obs_cloud.resize(ndays, n);
    for (int c = 0; c < ndays; ++c) st.obs_cloud.row(c) = E_O.col(days[static_cast<std::size_t>(c)]).transpose();
    st.kk = (opt.opt_kl_k > 0) ? opt.opt_kl_k : default_knn_k(ndays);
    st.range_cap = opt.envelope_clamp ? E_O.cwiseAbs().maxCoeff() : yj_inverse_cap;

    // Frozen correlation transfer from the initial transformed-space factors.
    {
        Eigen::MatrixXd Lc_o = correlation_factor(plan.Lt_o);
        Eigen::MatrixXd Lc_s = correlation_factor(plan.Lt_s);
        Eigen::MatrixXd inv =
            Lc_s.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(n, n));
        st.M0 = Lc_o.triangularView<Eigen::Lower>() * inv;
    }

    // Reference point: the same held-out objective at the identity
    // transformation, with the covariance transfer refitted on the raw
    // innovations.  This is what plain recoloring would score on this split;
    // the search is worthwhile only when it ends below this number.
    {
        const Eigen::MatrixXd D0 = pairwise_distance(plan.sites, opt.dist);
        LambdaSearchState id(E_O, E_S);
        id.days = st.days;
        id.fit_days = st.fit_days;
        id.mode = st.mode;
        id.obs_cloud = st.obs_cloud;
        id.kk = st.kk;
        id.range_cap = st.range_cap;
        id.lam_o = Eigen::VectorXd::Ones(n);
        id.lam_s = Eigen::VectorXd::Ones(n);
        id.ZO = E_O;
        id.ZS = E_S;
        id.ZS_eval.resize(n, ndays);
        for (int c = 0; c < ndays; ++c)
            id.ZS_eval.col(c) = E_S.col(days[static_cast<std::size_t>(c)]);
        id.mt_o.resize(n);
        id.mt_s.resize(n);
        id.st_o.resize(n);
        id.st_s.resize(n);
        {
            std::vector<int> all(static_cast<std::size_t>(n));
            std::iota(all.begin(), all.end(), 0);
            id.refresh_moments(true, all);
            id.refresh_moments(false, all);
        }
        MaternParams rm_o, rm_s;
        NonstatParams rn_o, rn_s;
        Eigen::MatrixXd Lr_o, Lr_s;
        fit_cov_side(opt, plan.opt.cov_model, D0, plan.coords,
                     E_O.colwise() - row_means(E_O), &rm_o, &rn_o, &Lr_o);
        fit_cov_side(opt, plan.opt.cov_model, D0, plan.coords,
                     E_S.colwise() - row_means(E_S), &rm_s, &rn_s, &Lr_s);
        Eigen::MatrixXd Lc_o = correlation_factor(Lr_o);
        Eigen::MatrixXd Lc_s = correlation_factor(Lr_s);
        Eigen::MatrixXd inv =
            Lc_s.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(n, n));
        id.M0 = Lc_o.triangularView<Eigen::Lower>() * inv;
        plan.kl_at_identity = id.objective();
    }

    plan.kl_trace.clear();
    double cur = st.objective();
    plan.kl_trace.push_back(cur);

    bool noise_floor = false;
    for (int cycle = 0; cycle < opt.opt_max_cycles && !noise_floor; ++cycle) {
        const double cycle_start = cur;
        for (int c = 0; c < k && !noise_floor; ++c) {
            if (members[static_cast<std::size_t>(c)].empty()) continue;
            for (int side = 0; side < 2; ++side) {
                const bool obs_side = (side == 1);
                const double lam0 = obs_side ? st.lam_o(members[static_cast<std::size_t>(c)][0])
                                             : st.lam_s(members[static_cast<std::size_t>(c)][0]);
                // Obs-side candidates stay in [0, 2] so the plan's inverse
                // transformation remains defined on the whole real line.
                const double lo = obs_side ? std::max(opt.lambda_lo, 0.0) : opt.lambda_lo;
                const double hi = obs_side ? std::min(opt.lambda_hi, 2.0) : opt.lambda_hi;
                const double a = std::max(lo, lam0 - opt.opt_bracket);
                const double b = std::min(hi, lam0 + opt.opt_bracket);
                auto g = [&](double lam) {
                    st.retransform_rows(obs_side, members[static_cast<std::size_t>(c)], lam);
                    return st.objective();
                };
                const double lam_best = golden_section(g, a, b, 2e-3, 60);
                const double f_best = g(lam_best);
                // A negative estimate of a nonnegative divergence means the
                // candidate has dropped below the estimator's noise floor:
                // reject it and stop refining rather than chase noise.
                if (f_best < 0.0) {
                    st.retransform_rows(obs_side, members[static_cast<std::size_t>(c)], lam0);
                    noise_floor = true;
                    break;
                }
                if (f_best < cur) {
                    cur = f_best;  // state already holds lam_best
                } else {
                    st.retransform_rows(obs_side, members[static_cast<std::size_t>(c)], lam0);
                }
                plan.kl_trace.push_back(cur);
            }
        }
        if (cycle_start - cur < opt.opt_tol_nats) break;
    }

    plan.lambda_o = st.lam_o;
    plan.lambda_s = st.lam_s;

    // Full refit of the transformed-space structure at the final lambdas.
    const Eigen::MatrixXd D = pairwise_distance(plan.sites, opt.dist);
    Eigen::MatrixXd ZO = yeo_johnson(E_O, plan.lambda_o);
    Eigen::MatrixXd ZS = yeo_johnson(E_S, plan.lambda_s);
    plan.mt_o = row_means(ZO);
    plan.mt_s = row_means(ZS);
    fit_cov_side(plan.opt, plan.opt.cov_model, D, plan.coords, ZO.colwise() - plan.mt_o,
                 &plan.mat_o, &plan.ns_o, &plan.Lt_o);
    fit_cov_side(plan.opt, plan.opt.cov_model, D, plan.coords, ZS.colwise() - plan.mt_s,
                 &plan.mat_s, &plan.ns_s, &plan.Lt_s);
}

Field apply_plan(const AdjustmentPlan& plan, const Field& sim_future, const Field* sim_hist,
                 const Field* obs_hist) {
    check_same_sites(plan.sites, sim_future.sites);
    const AdjustOptions& opt = plan.opt;
    const int n = sim_future.n_sites();
    const int P = opt.P;
    const AdjustMethod method = opt.method;

    Eigen::MatrixXd out;
    if (opt.mode == AdjustMode::AsWritten && is_transform_method(method)) {
        // Transformed-scale add-only correction: the simulated anomalies keep
        // their own stochastic structure; the forward/inverse maps reshape the
        // marginals and the operator-scaled transformed-mean difference
        // recenters them.
        Eigen::MatrixXd anoms =
            sim_future.values -
            climatology_mean(plan.clim_s, sim_future.cal, opt.freeze_year_term);
        Eigen::MatrixXd eps =
            adjust_transformed_shift(anoms, plan.lambda_s, plan.lambda_o, plan.mt_s, plan.mt_o,
                                     plan.Lt_s, plan.Lt_o);
        out = eps + climatology_mean(plan.clim_o, sim_future.cal, opt.freeze_year_term);
    } else if (opt.mode == AdjustMode::AsWritten) {
        // Operator-scaled climatological mean difference added to the series.
        Eigen::MatrixXd delta =
            climatology_mean(plan.clim_o, sim_future.cal, opt.freeze_year_term) -
            climatology_mean(plan.clim_s, sim_future.cal, opt.freeze_year_term);
        switch (method) {
            case AdjustMethod::M: break;
            case AdjustMethod::MV: {
                for (Eigen::Index i = 0; i < plan.sd_s.size(); ++i)
                    if (!(plan.sd_s(i) > 0.0))
                        throw NumericError("zero simulated innovation variance at site " +
                                           std::to_string(i));
                delta = plan.sd_o.cwiseQuotient(plan.sd_s).asDiagonal() * delta;
                break;
            }
            default: {
                plan.L_s.triangularView<Eigen::Lower>().solveInPlace(delta);
                delta = plan.L_o.triangularView<Eigen::Lower>() * delta;
                break;
            }
        }
        out = sim_future.values + delta;
    } else {
        // Innovation-space rebuild around the observed climatology.
        Eigen::MatrixXd warm_s;
        const bool sim_warm = (P > 0 && sim_hist != nullptr &&
                               contiguous(sim_hist->cal, sim_future.cal));
        if (sim_warm) {
            check_same_sites(plan.sites, sim_hist->sites);
            Eigen::MatrixXd anoms =
                sim_hist->values - climatology_mean(plan.clim_s, sim_hist->cal);
            warm_s = anoms.rightCols(P);
        }
        ResidualField rf = detrend(sim_future, plan.clim_s, plan.ar_s,
                                   sim_warm ? &warm_s : nullptr, opt.freeze_year_term);

        Eigen::MatrixXd adj;
        switch (method) {
            case AdjustMethod::M:
                adj = adjust_m(rf.innov, plan.m_o, plan.m_s);
                break;
            case AdjustMethod::MV:
                adj = adjust_mv(rf.innov, plan.m_o, plan.m_s, plan.sd_o, plan.sd_s);
                break;
            case AdjustMethod::MC:
            case AdjustMethod::MN:
                adj = adjust_cov(rf.innov, plan.m_o, plan.m_s, plan.L_o, plan.L_s);
                break;
            case AdjustMethod::T1:
            case AdjustMethod::TC:
                adj = adjust_transformed(rf.innov, plan.lambda_s, plan.lambda_o, plan.mt_s,
                                         plan.mt_o, plan.Lt_s, plan.Lt_o);
                break;
        }

        ResidualField rf_out;
        rf_out.P = P;
        rf_out.innov = std::move(adj);
        if (P > 0 && rf.warm) {
            rf_out.warm = true;
            const bool obs_warm =
                (obs_hist != nullptr && contiguous(obs_hist->cal, sim_future.cal));
            if (obs_warm) {
                check_same_sites(plan.sites, obs_hist->sites);
                Eigen::MatrixXd anoms =
                    obs_hist->values - climatology_mean(plan.clim_o, obs_hist->cal);
                rf_out.init = anoms.rightCols(P);
            } else {
                rf_out.init = Eigen::MatrixXd::Zero(n, P);  // stationary start
            }
        } else if (P > 0) {
            // Cold start: carry the leading anomalies across, rescaled per site.
            rf_out.warm = false;
            if (method == AdjustMethod::M) {
                rf_out.init = rf.init;
            } else {
                for (Eigen::Index i = 0; i < plan.sd_s.size(); ++i)
                    if (!(plan.sd_s(i) > 0.0))
                        throw NumericError("zero simulated innovation variance at site " +
                                           std::to_string(i));
                rf_out.init = plan.sd_o.cwiseQuotient(plan.sd_s).asDiagonal() * rf.init;
            }
        } else {
            rf_out.warm = false;
            rf_out.init.resize(n, 0);
        }
        out = reconstruct(plan.clim_o, plan.ar_o, sim_future.cal, rf_out, opt.freeze_year_term);
    }

    // Constant extrapolation outside the calibration range: a correction can
    // rearrange mass within the observed climate but has no business claiming
    // values no observation ever reached, which unbounded inverse
    // transformations otherwise do on poorly matched tail days.
    if (opt.envelope_clamp && plan.env_hi > plan.env_lo)
        out = out.cwiseMax(plan.env_lo).cwiseMin(plan.env_hi);
    if (opt.clamp_negative) out = out.cwiseMax(0.0);
    Field f;
    f.sites = plan.sites;
    f.cal = sim_future.cal;
    f.values = std::move(out);
    return f;
}

std::vector<KlRatioRow> kl_ratio_experiment(const Field& obs, const Field& sim, const Date& cut,
                                            const KlRatioConfig& cfg) {
    if (cfg.methods.empty()) throw ConfigError("kl_ratio_experiment: no methods given");
    std::vector<AdjustMethod> methods = cfg.methods;
    if (std::find(methods.begin(), methods.end(), cfg.baseline) == methods.end())
        methods.push_back(cfg.baseline);

    auto [obs_tr, obs_te] = split_by_date(obs, cut);
    auto [sim_tr, sim_te] = split_by_date(sim, cut);
    const int n = obs.n_sites();

    // Full-site plans, fitted once.
    std::vector<AdjustmentPlan> plans;
    plans.reserve(methods.size());
    for (AdjustMethod m : methods) {
        AdjustOptions o = cfg.adjust;
        o.method = m;
        o.cov_model_set = cfg.adjust.cov_model_set;
        plans.push_back(fit_plan(obs_tr, sim_tr, o));
    }

    const int kk = cfg.kl_k;  // 0 = auto
    std::vector<KlRatioRow> rows;

    // Full-site evaluation.
    {
        Eigen::MatrixXd obs_cloud = obs_te.values.transpose();
        std::vector<double> kls(methods.size());
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            Field adj = apply_plan(plans[mi], sim_te, &sim_tr, &obs_tr);
            kls[mi] = knn_kl(adj.values.transpose(), obs_cloud, kk).value;
        }
        double base = 0.0;
        for (std::size_t mi = 0; mi < methods.size(); ++mi)
            if (methods[mi] == cfg.baseline) base = kls[mi];
        for (std::size_t mi = 0; mi < methods.size(); ++mi)
            rows.push_back({method_name(methods[mi]), 0, kls[mi], kls[mi] / base});
    }

    if (cfg.n_subsamples <= 0) return rows;
    if (cfg.subsample_sites < 4 || cfg.subsample_sites > n)
        throw ConfigError("kl_ratio_experiment: subsample size out of range");

    // Cluster assignment for stratification, if a transformation plan has one.
    const std::vector<int>* labels = nullptr;
    for (std::size_t mi = 0; mi < methods.size(); ++mi)
        if (is_transform_method(methods[mi]) && !plans[mi].labels.empty())
            labels = &plans[mi].labels;

    std::vector<std::vector<KlRatioRow>> sub_rows(static_cast<std::size_t>(cfg.n_subsamples));
    parallel_for(
        static_cast<std::size_t>(cfg.n_subsamples),
        [&](std::size_t b) {
            RngStream rng(seed_for(cfg.seed, "klratio/subsample", b));
            std::vector<int> pick;
            if (cfg.stratified && labels != nullptr) {
                ClusterAssignment a;
                a.k = 1;
                for (int v : *labels) a.k = std::max(a.k, v + 1);
                a.label = *labels;
                pick = stratified_subsample(
                    a, static_cast<double>(cfg.subsample_sites) / static_cast<double>(n), rng);
            } else {
                auto s = rng.sample_without_replacement(
                    static_cast<std::size_t>(n), static_cast<std::size_t>(cfg.subsample_sites));
                pick.assign(s.begin(), s.end());
                std::sort(pick.begin(), pick.end());
            }

            Field obs_tr_b = subsample_sites(obs_tr, pick);
            Field sim_tr_b = subsample_sites(sim_tr, pick);
            Field obs_te_b = subsample_sites(obs_te, pick);
            Field sim_te_b = subsample_sites(sim_te, pick);
            Eigen::MatrixXd obs_cloud = obs_te_b.values.transpose();

            std::vector<double> kls(methods.size());
            for (std::size_t mi = 0; mi < methods.size(); ++mi) {
                AdjustOptions o = plans[mi].opt;
                o.optimize_lambda = false;
                if (is_transform_method(methods[mi])) {
                    o.fixed_lambda_o.resize(static_cast<Eigen::Index>(pick.size()));
                    o.fixed_lambda_s.resize(static_cast<Eigen::Index>(pick.size()));
                    o.cluster_labels.resize(pick.size());
                    for (std::size_t t = 0; t < pick.size(); ++t) {
                        o.fixed_lambda_o(static_cast<Eigen::Index>(t)) =
                            plans[mi].lambda_o(pick[t]);
                        o.fixed_lambda_s(static_cast<Eigen::Index>(t)) =
                            plans[mi].lambda_s(pick[t]);
                        o.cluster_labels[t] = plans[mi].labels[static_cast<std::size_t>(pick[t])];
                    }
                }
                AdjustmentPlan pb = fit_plan(obs_tr_b, sim_tr_b, o);
                Field adj = apply_plan(pb, sim_te_b, &sim_tr_b, &obs_tr_b);
                kls[mi] = knn_kl(adj.values.transpose(), obs_cloud, kk).value;
            }
            double base = 0.0;
            for (std::size_t mi = 0; mi < methods.size(); ++mi)
                if (methods[mi] == cfg.baseline) base = kls[mi];
            auto& out = sub_rows[b];
            for (std::size_t mi = 0; mi < methods.size(); ++mi)
                out.push_back({method_name(methods[mi]), static_cast<int>(b) + 1, kls[mi],
                               kls[mi] / base});
        },
        cfg.threads);

    for (auto& sr : sub_rows)
        for (auto& r : sr) rows.push_back(std::move(r));
    return rows;
}

}  // namespace windadj
