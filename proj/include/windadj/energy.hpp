#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "windadj/covariance.hpp"
#include "windadj/field.hpp"

namespace windadj {

/// Power-law vertical shear: v(h) = v(h_ref) * (h / h_ref)^alpha per site.
struct ShearFit {
    double ref_height = 10.0;
    Eigen::VectorXd alpha;  // per site
    Eigen::VectorXd se;     // standard error of alpha (0 = no uncertainty)
};

ShearFit constant_shear(int n_sites, double ref_height, double alpha = 1.0 / 7.0);

struct ProfileRow {
    std::uint32_t site_id = 0;
    double height_m = 0.0;
    double speed_mps = 0.0;
};

/// CSV with header "site_id,height_m,speed_mps": long-term mean speed by
/// measurement height.
std::vector<ProfileRow> load_profiles_csv(const std::string& path);

/// Per-site through-origin regression of log(v_h / v_ref) on log(h / h_ref).
/// Every site needs the reference height plus at least two other heights.
ShearFit fit_shear(const std::vector<ProfileRow>& rows, int n_sites, double ref_height);

/// One ensemble member of hub-height speeds from surface speeds:
/// multiplier (hub/ref)^(alpha + se * z_draw,site) per site, plus independent
/// day-level noise of sd day_sd on the log scale.  The alpha perturbation
/// stream depends only on (seed, draw), so histories and futures extrapolated
/// with the same (seed, draw) share it (common random numbers); day noise is
/// tagged per field.
Eigen::MatrixXd extrapolate_draw(const Eigen::MatrixXd& surface, const ShearFit& shear,
                                 double hub_height, double day_sd, std::uint64_t seed,
                                 int draw, const std::string& field_tag);

/// Deterministic point extrapolation (no draws, no noise).
Eigen::MatrixXd extrapolate_mean(const Eigen::MatrixXd& surface, const ShearFit& shear,
                                 double hub_height);

// --- turbine power and revenue ---------------------------------------------

/// Cut-in / rated / cut-out turbine curve with a cubic ramp:
/// P(v) = rated_kw * (v^3 - ci^3)/(r^3 - ci^3) on [ci, r], rated_kw on
/// [r, co], else 0.
struct PowerCurve {
    double cut_in = 3.0;
    double rated_speed = 12.0;
    double cut_out = 25.0;
    double rated_kw = 2000.0;
};

/// CSV with header "cut_in_mps,rated_mps,cut_out_mps,rated_kw", one data row.
PowerCurve load_power_curve_csv(const std::string& path);
double power_output(const PowerCurve& c, double v);

struct FarmSite {
    std::uint32_t site_id = 0;
    int n_turbines = 0;
    double tariff_per_kwh = 0.05;
};

/// CSV with header "site_id,n_turbines,tariff_usd_per_kwh".
std::vector<FarmSite> load_farm_csv(const std::string& path);

struct RevenueDelta {
    std::vector<std::uint32_t> site_id;
    Eigen::VectorXd mean_per_year;  // future minus historical, USD per year
    Eigen::VectorXd sd_per_year;    // across ensemble draws
    double total_mean_per_year = 0.0;
    double total_sd_per_year = 0.0;
    int n_draws = 0;
};

/// Ensemble revenue comparison: for every draw, extrapolate both fields to
/// hub height with shared shear perturbations, convert daily speeds to energy
/// (kW * 24 h * turbines), price it, and annualize the difference of daily
/// means by 365.25.  Draws accumulate one at a time, so memory stays flat.
RevenueDelta revenue_delta(const Field& hist, const Field& future, const ShearFit& shear,
                           double hub_height, double day_sd, const PowerCurve& curve,
                           const std::vector<FarmSite>& farm, int n_draws, std::uint64_t seed,
                           int threads = 1);

// --- ordinary kriging --------------------------------------------------------

/// Exponential-correlation kriging model; full sill (sill + nugget) at zero
/// distance makes prediction exact at data sites.
struct KrigeModel {
    double range = 1.0;
    double sill = 1.0;
    double nugget = 0.0;
    DistanceKind dist = DistanceKind::Euclidean;
};

/// Ordinary kriging weight matrix (targets x data sites); rows sum to 1.
Eigen::MatrixXd krige_weights(const std::vector<Site>& data, const std::vector<Site>& targets,
                              const KrigeModel& model);

/// Apply kriging day by day: result is targets x n_days.
Eigen::MatrixXd krige_field(const Field& f, const std::vector<Site>& targets,
                            const KrigeModel& model);

}  // namespace windadj
