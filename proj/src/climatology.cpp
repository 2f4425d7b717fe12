#include "windadj/climatology.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "windadj/errors.hpp"

namespace windadj {

namespace {

/// Covariate row for one day: [1, year - yr_ref (capped), sin/cos pairs].
void design_row(const Calendar& cal, int t, int K, bool with_trend, int yr_ref, int yr_cap,
                double* row) {
    int c = 0;
    row[c++] = 1.0;
    if (with_trend) {
        int yr = cal.year_at(t);
        if (yr > yr_cap) yr = yr_cap;
        row[c++] = static_cast<double>(yr - yr_ref);
    }
    const double doy = static_cast<double>(cal.day_of_year_at(t));
    const double delta = static_cast<double>(cal.year_length_at(t));
    for (int k = 1; k <= K; ++k) {
        const double arg = 2.0 * std::numbers::pi * k * doy / delta;
        row[c++] = std::sin(arg);
        row[c++] = std::cos(arg);
    }
}

Eigen::MatrixXd design_matrix(const Calendar& cal, int K, bool with_trend, int yr_ref,
                              int yr_cap) {
    const int T = cal.n_days();
    const int p = 1 + (with_trend ? 1 : 0) + 2 * K;
    Eigen::MatrixXd X(T, p);
    std::vector<double> row(static_cast<std::size_t>(p));
    for (int t = 0; t < T; ++t) {
        design_row(cal, t, K, with_trend, yr_ref, yr_cap, row.data());
        for (int c = 0; c < p; ++c) X(t, c) = row[static_cast<std::size_t>(c)];
    }
    return X;
}

}  // namespace

ClimatologyFit fit_climatology(const Field& f, int K, bool with_trend) {
    if (K < 0) throw ConfigError("harmonic order K must be >= 0");
    const int T = f.n_days();
    const int p = 1 + (with_trend ? 1 : 0) + 2 * K;
    if (T <= p)
        throw DataError("too few days (" + std::to_string(T) + ") to fit climatology with " +
                        std::to_string(p) + " parameters");
    ClimatologyFit fit;
    fit.K = K;
    fit.with_trend = with_trend;
    fit.yr_ref = f.cal.year_at(0);
    fit.yr_last = f.cal.year_at(T - 1);

    // No cap during fitting: the training window defines the trend.
    Eigen::MatrixXd X = design_matrix(f.cal, K, with_trend, fit.yr_ref, fit.yr_last);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    if (qr.rank() < p)
        throw NumericError(
            "climatology design is rank deficient (trend with a single year, or K too high "
            "for the record length)");
    Eigen::MatrixXd B = qr.solve(f.values.transpose());  // p x n
    fit.coef = B.transpose();

    if (with_trend) {
        Eigen::MatrixXd resid = f.values.transpose() - X * B;  // T x n
        Eigen::MatrixXd xtx_inv =
            (X.transpose() * X).ldlt().solve(Eigen::MatrixXd::Identity(p, p));
        const double v_trend = xtx_inv(1, 1);
        fit.trend_se.resize(f.n_sites());
        for (int i = 0; i < f.n_sites(); ++i) {
            const double s2 = resid.col(i).squaredNorm() / static_cast<double>(T - p);
            fit.trend_se(i) = std::sqrt(s2 * v_trend);
        }
    }
    return fit;
}

Eigen::MatrixXd climatology_mean(const ClimatologyFit& fit, const Calendar& cal,
                                 bool freeze_year_term) {
    const int yr_cap = freeze_year_term ? fit.yr_last : std::numeric_limits<int>::max();
    Eigen::MatrixXd X = design_matrix(cal, fit.K, fit.with_trend, fit.yr_ref, yr_cap);
    return fit.coef * X.transpose();  // n x T
}

ARFit fit_ar(const Eigen::MatrixXd& anomalies, int P) {
    if (P < 0) throw ConfigError("AR order P must be >= 0");
    const int n = static_cast<int>(anomalies.rows());
    const int T = static_cast<int>(anomalies.cols());
    if (T <= 2 * P + 1)
        throw DataError("too few days to fit AR(" + std::to_string(P) + ")");

    ARFit fit;
    fit.P = P;
    fit.phi.resize(n, P);
    fit.innov_sd.resize(n);
    fit.stationary_sd.resize(n);

    for (int i = 0; i < n; ++i) {
        if (P == 0) {
            const double s2 = anomalies.row(i).squaredNorm() / static_cast<double>(T);
            fit.innov_sd(i) = std::sqrt(s2);
            fit.stationary_sd(i) = fit.innov_sd(i);
            continue;
        }
        // Conditional least squares: regress a_t on its P lags, no intercept
        // (the climatology absorbs the level).
        Eigen::MatrixXd Z(T - P, P);
        Eigen::VectorXd y(T - P);
        for (int t = P; t < T; ++t) {
            y(t - P) = anomalies(i, t);
            for (int j = 1; j <= P; ++j) Z(t - P, j - 1) = anomalies(i, t - j);
        }
        Eigen::VectorXd phi = (Z.transpose() * Z).ldlt().solve(Z.transpose() * y);
        if (!phi.allFinite()) throw NumericError("AR fit failed (degenerate lags)");
        const double rss = (y - Z * phi).squaredNorm();
        const double s2 = rss / static_cast<double>(T - P);
        fit.phi.row(i) = phi.transpose();
        fit.innov_sd(i) = std::sqrt(s2);

        // Causality: companion-matrix spectral radius < 1.
        Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(P, P);
        comp.row(0) = phi.transpose();
        for (int j = 1; j < P; ++j) comp(j, j - 1) = 1.0;
        const double rad = comp.eigenvalues().cwiseAbs().maxCoeff();
        if (rad >= 1.0 - 1e-10)
            throw NumericError("non-causal AR fit at site " + std::to_string(i) +
                               " (spectral radius " + std::to_string(rad) + ")");

        // Stationary variance from the autocovariance equations:
        // gamma_k - sum_j phi_j gamma_|k-j| = [k == 0] s^2,  k = 0..P.
        Eigen::MatrixXd C = Eigen::MatrixXd::Zero(P + 1, P + 1);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(P + 1);
        rhs(0) = s2;
        for (int k = 0; k <= P; ++k) {
            C(k, k) += 1.0;
            for (int j = 1; j <= P; ++j) C(k, std::abs(k - j)) -= phi(j - 1);
        }
        Eigen::VectorXd gamma = C.fullPivLu().solve(rhs);
        if (!(gamma(0) > 0.0) || !std::isfinite(gamma(0)))
            throw NumericError("AR stationary variance is not positive");
        fit.stationary_sd(i) = std::sqrt(gamma(0));
    }
    return fit;
}

ResidualField detrend(const Field& f, const ClimatologyFit& clim, const ARFit& ar,
                      const Eigen::MatrixXd* warm_lags, bool freeze_year_term) {
    const int n = f.n_sites();
    const int T = f.n_days();
    const int P = ar.P;
    if (ar.phi.rows() != n || clim.coef.rows() != n)
        throw DataError("detrend: fits cover a different site count");
    Eigen::MatrixXd anoms = f.values - climatology_mean(clim, f.cal, freeze_year_term);

    ResidualField r;
    r.P = P;
    if (P == 0) {
        r.warm = false;
        r.init.resize(n, 0);
        r.innov = std::move(anoms);
        return r;
    }
    if (warm_lags != nullptr) {
        if (warm_lags->rows() != n || warm_lags->cols() != P)
            throw DataError("detrend: warm lags must be n_sites x P");
        r.warm = true;
        r.init = *warm_lags;
        r.innov.resize(n, T);
        for (int t = 0; t < T; ++t) {
            for (int i = 0; i < n; ++i) {
                double v = anoms(i, t);
                for (int j = 1; j <= P; ++j) {
                    const double lag =
                        (t - j >= 0) ? anoms(i, t - j) : r.init(i, P + (t - j));
                    v -= ar.phi(i, j - 1) * lag;
                }
                r.innov(i, t) = v;
            }
        }
    } else {
        if (T <= P) throw DataError("detrend: field shorter than the AR order");
        r.warm = false;
        r.init = anoms.leftCols(P);
        r.innov.resize(n, T - P);
        for (int t = P; t < T; ++t) {
            for (int i = 0; i < n; ++i) {
                double v = anoms(i, t);
                for (int j = 1; j <= P; ++j) v -= ar.phi(i, j - 1) * anoms(i, t - j);
                r.innov(i, t - P) = v;
            }
        }
    }
    return r;
}

Eigen::MatrixXd reconstruct(const ClimatologyFit& clim, const ARFit& ar, const Calendar& cal,
                            const ResidualField& r, bool freeze_year_term) {
    const int n = static_cast<int>(clim.coef.rows());
    const int T = cal.n_days();
    const int P = ar.P;
    if (r.P != P) throw DataError("reconstruct: residuals carry a different AR order");

    Eigen::MatrixXd anoms(n, T);
    if (P == 0) {
        if (r.innov.cols() != T) throw DataError("reconstruct: innovation length mismatch");
        anoms = r.innov;
    } else if (r.warm) {
        if (r.innov.cols() != T) throw DataError("reconstruct: innovation length mismatch");
        for (int t = 0; t < T; ++t) {
            for (int i = 0; i < n; ++i) {
                double v = r.innov(i, t);
                for (int j = 1; j <= P; ++j) {
                    const double lag = (t - j >= 0) ? anoms(i, t - j) : r.init(i, P + (t - j));
                    v += ar.phi(i, j - 1) * lag;
                }
                anoms(i, t) = v;
            }
        }
    } else {
        if (r.innov.cols() != T - P || r.init.cols() != P)
            throw DataError("reconstruct: innovation length mismatch");
        anoms.leftCols(P) = r.init;
        for (int t = P; t < T; ++t) {
            for (int i = 0; i < n; ++i) {
                double v = r.innov(i, t - P);
                for (int j = 1; j <= P; ++j) v += ar.phi(i, j - 1) * anoms(i, t - j);
                anoms(i, t) = v;
            }
        }
    }
    return anoms + climatology_mean(clim, cal, freeze_year_term);
}

}  // namespace windadj
