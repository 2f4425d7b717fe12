#include <doctest.h>

#include <Eigen/Dense>
#include <chrono>
#include <cmath>

#include "windadj/divergence.hpp"
#include "windadj/rng.hpp"

using namespace windadj;

namespace {

/// m draws from N(mu, sigma2 I) in d dimensions.
Eigen::MatrixXd normal_cloud(int m, int d, double mu, double sigma, std::uint64_t seed) {
    RngStream rng(seed);
    Eigen::MatrixXd X(m, d);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j) X(i, j) = mu + sigma * rng.normal();
    return X;
}

}  // namespace

TEST_CASE("default neighbor order is the rounded square root") {
    CHECK(default_knn_k(4749) == 69);
    CHECK(default_knn_k(5000) == 71);
    CHECK(default_knn_k(100) == 10);
    CHECK(default_knn_k(2) == 1);  // clamped to m - 1
    CHECK_THROWS((void)default_knn_k(1));
}

TEST_CASE("three-point one-dimensional estimate by hand") {
    // est = {0, 1, 3}, truth = {0.5, 2, 4}, k = 1.
    // rho_1 = (1, 1, 2); nu_1 = (0.5, 0.5, 1); m' = 3, m = 3.
    // value = (1/3)[log .5 + log .5 + (log 1 - log 2)] + log(3/2)
    //       = -log 2 + log 3 - log 2 = log(3/4)
    Eigen::MatrixXd est(3, 1), truth(3, 1);
    est << 0, 1, 3;
    truth << 0.5, 2, 4;
    const KlEstimate r = knn_kl(est, truth, 1);
    CHECK(r.k == 1);
    CHECK(r.m_est == 3);
    CHECK(r.m_truth == 3);
    CHECK(r.floored_pairs == 0);
    CHECK(r.value == doctest::Approx(std::log(0.75)).epsilon(1e-12));
}

TEST_CASE("matches the closed form on Gaussian pairs") {
    const int m = 5000;
    const auto t0 = std::chrono::steady_clock::now();

    SUBCASE("identical distributions, divergence zero") {
        for (int d : {1, 2, 5}) {
            const auto est = normal_cloud(m, d, 0.0, 1.0, seed_for(21, "kl-same-est", d));
            const auto tru = normal_cloud(m, d, 0.0, 1.0, seed_for(21, "kl-same-tru", d));
            const KlEstimate r = knn_kl(est, tru);
            CHECK(r.k == 71);
            CHECK(std::abs(r.value - 0.0) < 0.05);
        }
    }
    SUBCASE("unit mean shift, divergence one half") {
        for (int d : {1, 2, 5}) {
            const auto est = normal_cloud(m, d, 0.0, 1.0, seed_for(21, "kl-shift-est", d));
            auto tru = normal_cloud(m, d, 0.0, 1.0, seed_for(21, "kl-shift-tru", d));
            tru.col(0).array() += 1.0;  // truth shifted: KL(N(0,I) || N(e1, I)) = 1/2
            const KlEstimate r = knn_kl(est, tru);
            const double err = std::abs(r.value - 0.5);
            CHECK((err < 0.05 || err / 0.5 < 0.15));
        }
    }
    SUBCASE("doubled variance in two dimensions, log 2 minus one half") {
        const int d = 2;
        const auto est = normal_cloud(m, d, 0.0, 1.0, seed_for(21, "kl-var-est", d));
        const auto tru =
            normal_cloud(m, d, 0.0, std::sqrt(2.0), seed_for(21, "kl-var-tru", d));
        const double want = std::log(2.0) - 0.5;  // d/2 log 2 - d/4 at d = 2
        const KlEstimate r = knn_kl(est, tru);
        const double err = std::abs(r.value - want);
        CHECK((err < 0.05 || err / want < 0.15));
    }

    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(secs < 30.0);
}

TEST_CASE("agrees with the analytic Gaussian divergence") {
    Eigen::VectorXd mu0(2), mu1(2);
    mu0 << 0, 0;
    mu1 << 1, 0;
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(2, 2);

    CHECK(gaussian_kl(mu0, I, mu0, I) == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(gaussian_kl(mu0, I, mu1, I) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(gaussian_kl(mu0, I, mu0, 2.0 * I) ==
          doctest::Approx(std::log(2.0) - 0.5).epsilon(1e-12));
    // general case: KL = .5 (tr(S1^-1 S0) + (m1-m0)' S1^-1 (m1-m0) - d + logdet S1/S0)
    Eigen::MatrixXd S0(2, 2), S1(2, 2);
    S0 << 1.0, 0.3, 0.3, 0.8;
    S1 << 1.5, -0.2, -0.2, 1.1;
    const Eigen::MatrixXd S1i = S1.inverse();
    const double want = 0.5 * ((S1i * S0).trace() + (mu1 - mu0).dot(S1i * (mu1 - mu0)) - 2.0 +
                               std::log(S1.determinant() / S0.determinant()));
    CHECK(gaussian_kl(mu0, S0, mu1, S1) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("duplicate points hit the distance floor, not a crash") {
    Eigen::MatrixXd est(4, 1), truth(3, 1);
    est << 1.0, 1.0, 1.0, 1.0;  // all identical: rho_k = 0 everywhere
    truth << 1.0, 2.0, 3.0;
    const KlEstimate r = knn_kl(est, truth, 1);
    CHECK(std::isfinite(r.value));
    CHECK(r.floored_pairs > 0);
}

TEST_CASE("degenerate inputs are rejected") {
    Eigen::MatrixXd one(1, 1), two(2, 1), truth(3, 1);
    one << 0.0;
    two << 0.0, 1.0;
    truth << 0, 1, 2;
    // a single estimate point has no within-cloud neighbor
    CHECK_THROWS((void)knn_kl(one, truth, 1));
    // k beyond m - 1 is invalid
    CHECK_THROWS((void)knn_kl(two, truth, 5));
    // dimension mismatch
    Eigen::MatrixXd wide(3, 2);
    wide.setZero();
    CHECK_THROWS((void)knn_kl(wide, truth, 1));
    // empty truth
    Eigen::MatrixXd empty(0, 1);
    CHECK_THROWS((void)knn_kl(two, empty, 1));
}
