#pragma once

#include <Eigen/Dense>

#include "windadj/field.hpp"

namespace windadj {

/// Per-site harmonic regression of daily values on
///   1, (year - yr_ref), sin(2 pi k doy / delta), cos(2 pi k doy / delta),
/// k = 1..K, where doy is the 1-based day of year and delta the length
/// (365 or 366) of the day's year.
struct ClimatologyFit {
    int K = 0;
    bool with_trend = false;
    int yr_ref = 0;   // year of the first training day
    int yr_last = 0;  // year of the last training day (freeze target)
    /// n_sites x p coefficients, columns ordered
    /// [intercept, trend?, sin_1, cos_1, ..., sin_K, cos_K].
    Eigen::MatrixXd coef;
    /// Standard error of the trend slope per site (empty when !with_trend).
    Eigen::VectorXd trend_se;

    int n_params() const { return 1 + (with_trend ? 1 : 0) + 2 * K; }
};

/// Least-squares fit, shared design across sites.  Requires more days than
/// parameters.
ClimatologyFit fit_climatology(const Field& f, int K, bool with_trend);

/// Mean surface on an arbitrary calendar.  With freeze_year_term the year
/// covariate is capped at yr_last, so projections beyond the training window
/// hold the trend at its last fitted level; otherwise it extrapolates.
Eigen::MatrixXd climatology_mean(const ClimatologyFit& fit, const Calendar& cal,
                                 bool freeze_year_term = true);

/// Per-site AR(P) on climatology anomalies, fitted by conditional least
/// squares.  P = 0 is allowed (innovations == anomalies).
struct ARFit {
    int P = 0;
    Eigen::MatrixXd phi;           // n_sites x P lag coefficients
    Eigen::VectorXd innov_sd;      // residual (innovation) standard deviation
    Eigen::VectorXd stationary_sd; // implied marginal sd of the AR process
};

ARFit fit_ar(const Eigen::MatrixXd& anomalies, int P);

/// Anomalies filtered to AR innovations.  When warm (lags from the preceding
/// days are available) every day has an innovation; otherwise the first P
/// anomalies are kept verbatim as the initial condition.
struct ResidualField {
    int P = 0;
    bool warm = false;
    Eigen::MatrixXd init;   // n x P: warm lags (warm) or leading anomalies (cold)
    Eigen::MatrixXd innov;  // n x T (warm) or n x (T - P) (cold)
};

/// warm_lags, if given, holds the P anomaly columns immediately preceding the
/// field's first day (n x P, oldest first).
ResidualField detrend(const Field& f, const ClimatologyFit& clim, const ARFit& ar,
                      const Eigen::MatrixXd* warm_lags = nullptr,
                      bool freeze_year_term = true);

/// Exact inverse of detrend on the same calendar: runs the AR recursion and
/// adds the climatology mean back.  Returns the n x T value matrix.
Eigen::MatrixXd reconstruct(const ClimatologyFit& clim, const ARFit& ar, const Calendar& cal,
                            const ResidualField& r, bool freeze_year_term = true);

}  // namespace windadj
