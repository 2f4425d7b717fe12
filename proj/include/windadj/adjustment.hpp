#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "windadj/climatology.hpp"
#include "windadj/clustering.hpp"
#include "windadj/covariance.hpp"
#include "windadj/field.hpp"

namespace windadj {

/// Correction families, ordered by nesting: each extends the previous.
///   M   mean shift
///   MV  mean shift + per-site variance scaling
///   MC  mean shift + stationary-covariance recoloring
///   MN  mean shift + nonstationary-covariance recoloring
///   T1  MN preceded by a global power transformation pair
///   TC  T1 with cluster-wise transformation parameters
enum class AdjustMethod { M, MV, MC, MN, T1, TC };

/// AsWritten adds the operator-scaled climatological mean difference to the
/// simulated series, preserving its day-to-day variability.  Anomaly rebuilds
/// the series around the observed climatology from operator-adjusted
/// innovations.  Transformation methods always use the full rebuild.
enum class AdjustMode { AsWritten, Anomaly };

enum class CovModel { Matern, Nonstat };

AdjustMethod parse_method(const std::string& s);
std::string method_name(AdjustMethod m);

struct AdjustOptions {
    AdjustMethod method = AdjustMethod::MC;
    AdjustMode mode = AdjustMode::AsWritten;
    int K = 3;                // seasonal harmonics
    bool with_trend = true;
    int P = 1;                // AR order
    CovModel cov_model = CovModel::Matern;  // resolved from method in fit_plan
    bool cov_model_set = false;             // true when caller pinned it
    std::vector<double> nu_grid = {0.5, 1.0, 1.5, 2.5};
    int knots_x = 2, knots_y = 2;
    DistanceKind dist = DistanceKind::Euclidean;
    bool freeze_year_term = true;
    bool clamp_negative = true;

    /// Truncate adjusted values to the range observed in the training
    /// observations (constant extrapolation outside the calibration range,
    /// as in quantile-mapping practice).  Unbounded inverse transformations
    /// can otherwise launch poorly matched tail days to arbitrary
    /// magnitudes, which no correction method should claim as wind.
    bool envelope_clamp = true;

    /// Shrinkage of the fitted covariance toward its diagonal (empirical
    /// per-site variances) before factoring.  A cross-site transfer is only
    /// trustworthy when the fit window is long relative to the site count, so
    /// the automatic setting (-1) uses weight min(1, n_sites / n_fit_days):
    /// short windows fall back to per-site scaling, long windows keep the
    /// full model.  0 disables, 1 forces the diagonal.
    double cov_shrinkage = -1.0;

    // transformation methods
    double lambda_lo = -2.0, lambda_hi = 4.0;
    int n_clusters = 20;                    // TC
    Eigen::Vector3d cluster_weights{0.98, 0.01, 0.01};
    int cluster_restarts = 20;
    std::vector<int> cluster_labels;        // optional externally provided
    bool optimize_lambda = true;            // divergence-based refinement
    int opt_max_cycles = 4;
    double opt_tol_nats = 1e-3;
    int opt_eval_days = 128;                // held-out day budget for the objective
    int opt_kl_k = 0;                       // 0 = default_knn_k
    double opt_bracket = 0.5;               // coordinate search half-width

    /// When non-empty (one value per site), transformation parameters are
    /// taken as given instead of estimated -- used for subsample refits that
    /// must reuse the full-fit transformation.
    Eigen::VectorXd fixed_lambda_o, fixed_lambda_s;

    std::uint64_t seed = 0x77AD0057ULL;
};

/// Everything fitted from the two historical fields; applicable to any
/// future window on the same site set.
struct AdjustmentPlan {
    AdjustOptions opt;
    std::vector<Site> sites;
    ClimatologyFit clim_o, clim_s;
    ARFit ar_o, ar_s;
    Eigen::VectorXd m_o, m_s;    // innovation means
    Eigen::VectorXd sd_o, sd_s;  // innovation sds

    // recoloring (MC/MN and transformed space for T1/TC)
    MaternParams mat_o, mat_s;
    NonstatParams ns_o, ns_s;
    Eigen::MatrixXd L_o, L_s;  // innovation covariance factors (MC/MN)

    // transformation methods
    Eigen::VectorXd lambda_o, lambda_s;      // per site
    std::vector<int> labels;                 // per site cluster (T1: all zero)
    Eigen::VectorXd mt_o, mt_s;              // transformed-innovation means
    Eigen::MatrixXd Lt_o, Lt_s;              // factors in transformed space
    std::vector<double> kl_trace;            // refinement objective history
    /// Held-out refinement objective evaluated at the identity
    /// transformation with a raw-innovation covariance transfer -- the
    /// untransformed recoloring baseline under the same evaluation split.
    /// NaN when no refinement ran.
    double kl_at_identity = std::numeric_limits<double>::quiet_NaN();
    Eigen::MatrixXd coords;                  // planar coordinates of the sites
    double env_lo = 0.0, env_hi = 0.0;       // observed training value range
};

// --- innovation-space operators (columns = days) -----------------------------

Eigen::MatrixXd adjust_m(const Eigen::MatrixXd& eps, const Eigen::VectorXd& m_o,
                         const Eigen::VectorXd& m_s);
/// Throws NumericError when any sim sd is zero.
Eigen::MatrixXd adjust_mv(const Eigen::MatrixXd& eps, const Eigen::VectorXd& m_o,
                          const Eigen::VectorXd& m_s, const Eigen::VectorXd& sd_o,
                          const Eigen::VectorXd& sd_s);
/// Whiten by the sim factor, recolor by the observed factor:
/// out = m_o + L_o L_s^{-1} (eps - m_s).  Transfers covariance exactly:
/// if cov(eps) = L_s L_s', then cov(out) = L_o L_o'.
Eigen::MatrixXd adjust_cov(const Eigen::MatrixXd& eps, const Eigen::VectorXd& m_o,
                           const Eigen::VectorXd& m_s, const Eigen::MatrixXd& L_o,
                           const Eigen::MatrixXd& L_s);
/// Transformation sandwich: forward map with sim lambdas, covariance
/// adjustment of the transformed values, inverse map with observed lambdas.
Eigen::MatrixXd adjust_transformed(const Eigen::MatrixXd& eps, const Eigen::VectorXd& lambda_s,
                                   const Eigen::VectorXd& lambda_o, const Eigen::VectorXd& mt_s,
                                   const Eigen::VectorXd& mt_o, const Eigen::MatrixXd& Lt_s,
                                   const Eigen::MatrixXd& Lt_o);
/// Add-only transformation sandwich: forward map with sim lambdas, plus the
/// operator-scaled transformed-mean difference L_o L_s^{-1} (mt_o - mt_s),
/// inverse map with observed lambdas.  The simulated stochastic structure is
/// preserved; only the transformed-scale mean is corrected.
Eigen::MatrixXd adjust_transformed_shift(const Eigen::MatrixXd& eps,
                                         const Eigen::VectorXd& lambda_s,
                                         const Eigen::VectorXd& lambda_o,
                                         const Eigen::VectorXd& mt_s, const Eigen::VectorXd& mt_o,
                                         const Eigen::MatrixXd& Lt_s, const Eigen::MatrixXd& Lt_o);

// --- plan lifecycle -----------------------------------------------------------

AdjustmentPlan fit_plan(const Field& obs_hist, const Field& sim_hist, const AdjustOptions& opt);

/// Divergence-based refinement of cluster-wise transformation parameters:
/// cyclic coordinate descent, golden-section per coordinate, objective =
/// knn_kl(adjusted historical sim cloud || observed historical cloud) on a
/// fixed day subsample with the correlation structure frozen at its initial
/// fit.  Refits the plan's factors at the final lambdas.
void optimize_lambdas(AdjustmentPlan& plan, const Field& obs_hist, const Field& sim_hist);

/// Adjust a future simulated window.  Historical fields, when given and
/// contiguous with the future calendar, warm-start the autoregressive
/// filters; otherwise the filter starts cold from scaled leading anomalies.
Field apply_plan(const AdjustmentPlan& plan, const Field& sim_future,
                 const Field* sim_hist = nullptr, const Field* obs_hist = nullptr);

// --- divergence-ratio experiment ----------------------------------------------

struct KlRatioRow {
    std::string method;
    int subsample = 0;  // 0 = full site set
    double kl = 0.0;
    double ratio = 0.0;  // kl / kl(baseline) on the same site subset
};

struct KlRatioConfig {
    std::vector<AdjustMethod> methods;
    AdjustMethod baseline = AdjustMethod::M;
    AdjustOptions adjust;
    int n_subsamples = 0;     // 0 = evaluate on the full site set only
    int subsample_sites = 0;  // per-subsample site count (SRS) ...
    bool stratified = true;   // stratify by the TC clusters when available
    int kl_k = 0;
    std::uint64_t seed = 1234;
    int threads = 1;
};

/// Split both fields at the cut date, fit plans on the training part, adjust
/// the simulated test part, and report knn_kl(adjusted || observed test)
/// normalized by the baseline method, optionally over site subsamples with
/// per-subsample covariance refits.
std::vector<KlRatioRow> kl_ratio_experiment(const Field& obs, const Field& sim, const Date& cut,
                                            const KlRatioConfig& cfg);

}  // namespace windadj
