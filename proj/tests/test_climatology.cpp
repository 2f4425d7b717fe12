#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "windadj/climatology.hpp"
#include "windadj/errors.hpp"
#include "windadj/field.hpp"
#include "windadj/rng.hpp"

using namespace windadj;

namespace {

Field make_field(const Calendar& cal, const Eigen::MatrixXd& values) {
    Field f;
    for (Eigen::Index i = 0; i < values.rows(); ++i)
        f.sites.push_back({static_cast<std::uint32_t>(i), 0.01 * double(i), 40.0 + 0.01 * double(i)});
    f.cal = cal;
    f.values = values;
    f.validate(false);
    return f;
}

}  // namespace

TEST_CASE("harmonic regression recovers the generating coefficients exactly") {
    // Generate from the model's own mean surface so the forward map and the
    // fitted design agree bit for bit, then check coefficient recovery.
    const Calendar cal{{2001, 1, 1}, 1095};  // three full non-leap years
    const int K = 2;

    ClimatologyFit gen;
    gen.K = K;
    gen.with_trend = true;
    gen.yr_ref = 2001;
    gen.yr_last = 2003;
    gen.coef.resize(2, 1 + 1 + 2 * K);
    gen.coef.row(0) << 6.0, 0.3, 1.5, -0.7, 0.25, 0.1;
    gen.coef.row(1) << 4.0, -0.2, 0.8, 0.9, -0.15, 0.05;

    const Eigen::MatrixXd mean = climatology_mean(gen, cal, /*freeze_year_term=*/false);
    const Field f = make_field(cal, mean);

    const ClimatologyFit fit = fit_climatology(f, K, true);
    CHECK(fit.yr_ref == 2001);
    CHECK(fit.yr_last == 2003);
    REQUIRE(fit.coef.rows() == 2);
    REQUIRE(fit.coef.cols() == gen.coef.cols());
    CHECK((fit.coef - gen.coef).cwiseAbs().maxCoeff() < 1e-8);

    // noiseless data: the trend is "significant" with essentially zero se
    REQUIRE(fit.trend_se.size() == 2);
    CHECK(fit.trend_se.maxCoeff() < 1e-6);

    // and the fitted mean reproduces the data
    const Eigen::MatrixXd back = climatology_mean(fit, cal, false);
    CHECK((back - mean).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("freezing the year term caps extrapolation at the last training year") {
    ClimatologyFit gen;
    gen.K = 1;
    gen.with_trend = true;
    gen.yr_ref = 2001;
    gen.yr_last = 2002;
    gen.coef.resize(1, 4);
    gen.coef.row(0) << 5.0, 0.5, 1.0, -0.5;

    const Calendar future{{2010, 3, 1}, 10};
    const Eigen::MatrixXd frozen = climatology_mean(gen, future, true);
    const Eigen::MatrixXd open = climatology_mean(gen, future, false);

    // frozen: year covariate held at yr_last - yr_ref = 1; open: 9
    CHECK((open - frozen).cwiseAbs().minCoeff() ==
          doctest::Approx(0.5 * (2010 - 2002)).epsilon(1e-12));

    // inside the training window both agree
    const Calendar inside{{2002, 3, 1}, 10};
    CHECK((climatology_mean(gen, inside, true) - climatology_mean(gen, inside, false))
              .cwiseAbs()
              .maxCoeff() < 1e-14);
}

TEST_CASE("AR(1) coefficient recovery at phi = 0.6") {
    const int T = 10000, n = 3;
    RngStream rng(seed_for(2024, "ar-test", 0));
    Eigen::MatrixXd x(n, T);
    for (int i = 0; i < n; ++i) {
        double prev = 0.0;
        // burn in toward stationarity
        for (int t = 0; t < 200; ++t) prev = 0.6 * prev + rng.normal();
        for (int t = 0; t < T; ++t) {
            prev = 0.6 * prev + rng.normal();
            x(i, t) = prev;
        }
    }
    const ARFit ar = fit_ar(x, 1);
    REQUIRE(ar.P == 1);
    REQUIRE(ar.phi.rows() == n);
    for (int i = 0; i < n; ++i) {
        CHECK(std::abs(ar.phi(i, 0) - 0.6) < 0.02);
        CHECK(std::abs(ar.innov_sd(i) - 1.0) < 0.03);
        // stationary sd of AR(1): 1/sqrt(1 - 0.36) = 1.25
        CHECK(std::abs(ar.stationary_sd(i) - 1.25) < 0.05);
    }
}

TEST_CASE("AR(0) passes anomalies through") {
    Eigen::MatrixXd x(2, 6);
    x << 1, -2, 3, -1, 0.5, 2, 0.25, 1, -1, 2, -0.5, 1;
    const ARFit ar = fit_ar(x, 0);
    CHECK(ar.P == 0);
    CHECK(ar.phi.cols() == 0);
    for (int i = 0; i < 2; ++i) {
        const double rms = std::sqrt(x.row(i).squaredNorm() / double(x.cols()));
        CHECK(ar.innov_sd(i) == doctest::Approx(rms).epsilon(1e-12));
        CHECK(ar.stationary_sd(i) == doctest::Approx(rms).epsilon(1e-12));
    }
}

TEST_CASE("detrend and reconstruct are exact inverses") {
    // Synthetic field: harmonic mean + AR(2) noise, spanning a leap year.
    const Calendar cal{{2019, 11, 20}, 500};
    const int n = 4;
    RngStream rng(seed_for(77, "roundtrip", 0));
    Eigen::MatrixXd vals(n, cal.n_days());
    for (int i = 0; i < n; ++i) {
        double a1 = 0, a2 = 0;
        for (int t = 0; t < cal.n_days(); ++t) {
            const Date d = cal.date_at(t);
            const double doy = double(day_of_year(d));
            const double seas = 5.0 + 1.2 * std::sin(2 * M_PI * doy / 365.0);
            const double e = 0.5 * a1 - 0.2 * a2 + 0.3 * rng.normal();
            a2 = a1;
            a1 = e;
            vals(i, t) = seas + e + 0.1 * double(i);
        }
    }
    const Field f = make_field(cal, vals);
    const ClimatologyFit clim = fit_climatology(f, 2, false);
    const Eigen::MatrixXd anoms = vals - climatology_mean(clim, cal);
    const ARFit ar = fit_ar(anoms, 2);

    SUBCASE("cold start: leading anomalies kept verbatim") {
        const ResidualField r = detrend(f, clim, ar);
        CHECK(!r.warm);
        CHECK(r.P == 2);
        CHECK(r.init.cols() == 2);
        CHECK(r.innov.cols() == cal.n_days() - 2);
        const Eigen::MatrixXd back = reconstruct(clim, ar, cal, r);
        CHECK((back - vals).cwiseAbs().maxCoeff() < 1e-10);
    }
    SUBCASE("warm start: lags supplied from the preceding days") {
        // treat days [2, end) as the field, with days 0,1 as warm lags
        Field tail = f;
        tail.cal = Calendar{cal.date_at(2), cal.n_days() - 2};
        tail.values = vals.rightCols(cal.n_days() - 2);
        const Eigen::MatrixXd warm = anoms.leftCols(2);
        const ResidualField r = detrend(tail, clim, ar, &warm);
        CHECK(r.warm);
        CHECK(r.innov.cols() == cal.n_days() - 2);
        const Eigen::MatrixXd back = reconstruct(clim, ar, tail.cal, r);
        CHECK((back - tail.values).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("climatology error paths") {
    const Calendar cal{{2001, 1, 1}, 40};
    RngStream rng(seed_for(5, "err", 0));
    Eigen::MatrixXd vals(1, 40);
    for (int t = 0; t < 40; ++t) vals(0, t) = 5.0 + rng.normal();
    const Field f = make_field(cal, vals);

    CHECK_THROWS_AS((void)fit_climatology(f, -1, false), ConfigError);
    // 40 days cannot support K = 20 harmonics (41 parameters)
    CHECK_THROWS_AS((void)fit_climatology(f, 20, false), DataError);
    // trend with a single calendar year is confounded with the intercept
    CHECK_THROWS_AS((void)fit_climatology(f, 1, true), NumericError);

    CHECK_THROWS_AS((void)fit_ar(vals, -1), ConfigError);
    CHECK_THROWS_AS((void)fit_ar(vals.leftCols(2), 2), DataError);

    const ClimatologyFit clim = fit_climatology(f, 1, false);
    const ARFit ar = fit_ar(vals, 1);
    Eigen::MatrixXd bad_warm = Eigen::MatrixXd::Zero(1, 3);
    CHECK_THROWS_AS((void)detrend(f, clim, ar, &bad_warm), DataError);

    ResidualField r = detrend(f, clim, ar);
    r.innov = r.innov.leftCols(5).eval();
    CHECK_THROWS_AS((void)reconstruct(clim, ar, cal, r), DataError);
}
