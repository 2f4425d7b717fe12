#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "windadj/errors.hpp"
#include "windadj/rng.hpp"
#include "windadj/transform.hpp"

using namespace windadj;

TEST_CASE("power transform closed-form spot values") {
    // lambda = 2, w >= 0: ((w+1)^2 - 1)/2
    CHECK(yeo_johnson(1.0, 2.0) == doctest::Approx(1.5).epsilon(1e-15));
    // lambda = 0, w >= 0: log(w+1)
    CHECK(yeo_johnson(std::exp(2.0) - 1.0, 0.0) == doctest::Approx(2.0).epsilon(1e-14));
    // lambda = 0, w < 0: -((1-w)^2 - 1)/2
    CHECK(yeo_johnson(-1.0, 0.0) == doctest::Approx(-1.5).epsilon(1e-15));
    // lambda = 0.5, w >= 0: 2 (sqrt(w+1) - 1)
    CHECK(yeo_johnson(3.0, 0.5) == doctest::Approx(2.0).epsilon(1e-15));
    // lambda = 1.5, w < 0: -((1-w)^0.5 - 1)/0.5 = -2 (2 - 1)
    CHECK(yeo_johnson(-3.0, 1.5) == doctest::Approx(-2.0).epsilon(1e-15));
    // lambda = 2, w < 0: -log(1-w)
    CHECK(yeo_johnson(-(std::exp(1.0) - 1.0), 2.0) == doctest::Approx(-1.0).epsilon(1e-14));
    // identity at lambda = 1
    CHECK(yeo_johnson(0.37, 1.0) == doctest::Approx(0.37).epsilon(1e-15));
    CHECK(yeo_johnson(-0.37, 1.0) == doctest::Approx(-0.37).epsilon(1e-15));
    CHECK(yeo_johnson(0.0, -1.3) == 0.0);
}

TEST_CASE("forward and inverse round-trip a million random pairs") {
    RngStream rng(seed_for(11, "yj-roundtrip", 0));
    double worst = 0.0;
    for (int i = 0; i < 1000000; ++i) {
        const double w = 2.0 * rng.normal();
        const double lam = -2.0 + 6.0 * rng.uniform01();
        const double back = inverse_yeo_johnson(yeo_johnson(w, lam), lam);
        worst = std::max(worst, std::abs(back - w));
    }
    CHECK(worst < 1e-10);
}

TEST_CASE("matrix transform applies one lambda per row") {
    Eigen::MatrixXd W(2, 3);
    W << 1.0, 3.0, -1.0, -3.0, 0.0, 2.0;
    Eigen::VectorXd lam(2);
    lam << 2.0, 1.5;
    const Eigen::MatrixXd Z = yeo_johnson(W, lam);
    CHECK(Z(0, 0) == doctest::Approx(yeo_johnson(1.0, 2.0)).epsilon(1e-15));
    CHECK(Z(0, 1) == doctest::Approx(yeo_johnson(3.0, 2.0)).epsilon(1e-15));
    CHECK(Z(1, 0) == doctest::Approx(-2.0).epsilon(1e-15));
    const Eigen::MatrixXd back = inverse_yeo_johnson(Z, lam);
    CHECK((back - W).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("derivative matches a central finite difference") {
    RngStream rng(seed_for(11, "yj-deriv", 0));
    for (int i = 0; i < 200; ++i) {
        const double w = 3.0 * rng.normal();
        const double lam = -2.0 + 6.0 * rng.uniform01();
        const double h = 1e-6;
        const double fd = (yeo_johnson(w + h, lam) - yeo_johnson(w - h, lam)) / (2 * h);
        CHECK(yeo_johnson_deriv(w, lam) == doctest::Approx(fd).epsilon(1e-5));
    }
}

TEST_CASE("inverse saturates instead of overflowing outside the image") {
    // log-branch overflow is clamped to the cap, keeping the inverse total
    CHECK(inverse_yeo_johnson(800.0, 0.0) == yj_inverse_cap);
    CHECK(inverse_yeo_johnson(-800.0, 2.0) == -yj_inverse_cap);

    // For lambda < 0 the positive-branch image is bounded above by -1/lambda;
    // arguments beyond it map to a huge finite value, never inf/NaN.
    const double w = inverse_yeo_johnson(100.0, -2.0);
    CHECK(std::isfinite(w));
    CHECK(w > 1e5);
    CHECK(w <= yj_inverse_cap);

    // deep but in-image arguments still invert accurately
    const double deep = inverse_yeo_johnson(-10.0, 1.9);
    CHECK(deep == doctest::Approx(-1023.0).epsilon(1e-9));
    CHECK(yeo_johnson(deep, 1.9) == doctest::Approx(-10.0).epsilon(1e-9));
}

TEST_CASE("lambda MLE recovers the generating exponent") {
    // Draw z ~ N(0,1), map through the inverse transform with a known lambda;
    // the forward MLE on those w should find it.
    const int n = 50000;
    for (double lam_true : {0.3, 1.0, 1.7}) {
        RngStream rng(seed_for(13, "lam-mle", static_cast<std::uint64_t>(lam_true * 10)));
        Eigen::VectorXd w(n);
        for (int i = 0; i < n; ++i) w(i) = inverse_yeo_johnson(rng.normal(), lam_true);
        const LambdaEstimate est = fit_lambda_mle(w);
        CHECK(std::abs(est.lambda - lam_true) < 0.05);
        CHECK(est.ci_lo <= est.lambda);
        CHECK(est.ci_hi >= est.lambda);
        CHECK(est.ci_lo <= lam_true + 0.05);
        CHECK(est.ci_hi >= lam_true - 0.05);

        // the transform with the estimated exponent symmetrizes the sample
        Eigen::VectorXd z(n);
        for (int i = 0; i < n; ++i) z(i) = yeo_johnson(w(i), est.lambda);
        const Moments m = sample_moments(z);
        CHECK(std::abs(m.skewness) < 0.1);
    }
}

TEST_CASE("profile likelihood peaks at the estimate") {
    RngStream rng(seed_for(13, "profile", 0));
    const int n = 5000;
    Eigen::VectorXd w(n);
    for (int i = 0; i < n; ++i) w(i) = inverse_yeo_johnson(rng.normal(), 0.7);
    const LambdaEstimate est = fit_lambda_mle(w);
    const double at_hat = lambda_profile_loglik(w, est.lambda);
    CHECK(at_hat == doctest::Approx(est.loglik).epsilon(1e-9));
    CHECK(lambda_profile_loglik(w, est.lambda + 0.3) < at_hat);
    CHECK(lambda_profile_loglik(w, est.lambda - 0.3) < at_hat);
}

TEST_CASE("moment summary on a handworked sample") {
    Eigen::VectorXd x(4);
    x << 1, 2, 3, 4;
    const Moments m = sample_moments(x);
    CHECK(m.mean == doctest::Approx(2.5).epsilon(1e-15));
    CHECK(m.sd == doctest::Approx(1.2909944487358056).epsilon(1e-15));
    CHECK(m.skewness == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(m.excess_kurtosis == doctest::Approx(-1.36).epsilon(1e-12));

    Eigen::VectorXd tiny(1);
    tiny << 1.0;
    CHECK_THROWS_AS((void)sample_moments(tiny), DataError);
    Eigen::VectorXd flat = Eigen::VectorXd::Constant(5, 2.0);
    CHECK_THROWS_AS((void)sample_moments(flat), NumericError);
}

TEST_CASE("lambda bounds are honored") {
    RngStream rng(seed_for(13, "bounds", 0));
    Eigen::VectorXd w(2000);
    for (int i = 0; i < 2000; ++i) w(i) = inverse_yeo_johnson(rng.normal(), 1.7);
    const LambdaEstimate est = fit_lambda_mle(w, 0.0, 1.0);
    CHECK(est.lambda <= 1.0 + 1e-12);
    CHECK(est.lambda >= 0.0 - 1e-12);
    CHECK(est.lambda == doctest::Approx(1.0).epsilon(1e-6));  // pinned at the near bound
}
