#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "windadj/covariance.hpp"
#include "windadj/errors.hpp"
#include "windadj/field.hpp"
#include "windadj/rng.hpp"

using namespace windadj;

namespace {

std::vector<Site> grid_sites(int nx, int ny, double step) {
    std::vector<Site> s;
    for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x)
            s.push_back({static_cast<std::uint32_t>(s.size()), x * step, y * step});
    return s;
}

}  // namespace

TEST_CASE("smoothness one-half is the exponential correlation") {
    for (double h : {0.0, 0.01, 0.1, 0.5, 1.0, 3.0, 10.0})
        for (double rho : {0.2, 1.0, 2.5})
            CHECK(matern_corr(h, rho, 0.5) == doctest::Approx(std::exp(-h / rho)).epsilon(1e-12));
}

TEST_CASE("closed-form correlation values at the common smoothness levels") {
    // frozen reference values at h = range = 1 in the sqrt(2 nu) scaling
    CHECK(matern_corr(1.0, 1.0, 1.5) == doctest::Approx(0.4833577245965077).epsilon(1e-12));
    CHECK(matern_corr(1.0, 1.0, 2.5) == doctest::Approx(0.5239941088318203).epsilon(1e-12));
    // Bessel branch (nu = 1) agrees with the closed forms' ordering at h = range
    const double c1 = matern_corr(1.0, 1.0, 1.0);
    CHECK(c1 > matern_corr(1.0, 1.0, 0.5));
    CHECK(c1 < matern_corr(1.0, 1.0, 1.5));

    for (double nu : {0.5, 1.0, 1.5, 2.5}) {
        CHECK(matern_corr(0.0, 1.0, nu) == 1.0);
        // monotone decreasing in distance
        double prev = 1.0;
        for (double h = 0.25; h <= 4.0; h += 0.25) {
            const double c = matern_corr(h, 1.0, nu);
            CHECK(c < prev);
            CHECK(c > 0.0);
            prev = c;
        }
    }
}

TEST_CASE("covariance assembly from distance, variance, and nugget") {
    Eigen::MatrixXd D(3, 3);
    D << 0, 1, 2, 1, 0, 1, 2, 1, 0;
    MaternParams p{2.0, 1.0, 0.5, 0.25};
    const Eigen::MatrixXd C = matern_cov(D, p);
    CHECK(C(0, 0) == 2.0);
    CHECK(C(1, 1) == 2.0);
    CHECK(C(0, 1) == doctest::Approx(2.0 * 0.75 * std::exp(-1.0)).epsilon(1e-14));
    CHECK(C(0, 2) == doctest::Approx(2.0 * 0.75 * std::exp(-2.0)).epsilon(1e-14));
    CHECK((C - C.transpose()).cwiseAbs().maxCoeff() == 0.0);

    MaternParams bad = p;
    bad.nugget = 1.0;
    CHECK_THROWS_AS((void)matern_cov(D, bad), NumericError);
}

TEST_CASE("pairwise distances in both geometries") {
    std::vector<Site> s{{0, 0.0, 0.0}, {1, 1.0, 0.0}, {2, 0.0, 1.0}, {3, 3.0, 4.0}};

    const Eigen::MatrixXd De = pairwise_distance(s, DistanceKind::Euclidean);
    CHECK(De(0, 1) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(De(0, 3) == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(De.diagonal().cwiseAbs().maxCoeff() == 0.0);
    CHECK((De - De.transpose()).cwiseAbs().maxCoeff() == 0.0);

    // one degree of longitude on the equator, mean Earth radius 6371.0088 km
    const Eigen::MatrixXd Dh = pairwise_distance(s, DistanceKind::Haversine);
    CHECK(Dh(0, 1) == doctest::Approx(111.1950802335329).epsilon(1e-10));
    // one degree of latitude has the same great-circle length
    CHECK(Dh(0, 2) == doctest::Approx(111.1950802335329).epsilon(1e-10));

    const Eigen::MatrixXd Pe = planar_coords(s, DistanceKind::Euclidean);
    CHECK(Pe(3, 0) == 3.0);
    CHECK(Pe(3, 1) == 4.0);
    const Eigen::MatrixXd Ph = planar_coords(s, DistanceKind::Haversine);
    // equirectangular: lat spacing is exact, lon spacing scales with cos(mean lat)
    CHECK(std::abs((Ph(2, 1) - Ph(0, 1)) - 111.1950802335329) < 1e-6);
}

TEST_CASE("equal-knot kernel convolution collapses to a stationary model") {
    const auto sites = grid_sites(5, 4, 0.17);
    const Eigen::MatrixXd coords = planar_coords(sites, DistanceKind::Euclidean);

    NonstatParams p;
    p.knots.resize(4, 2);
    p.knots << 0.1, 0.1, 0.6, 0.1, 0.1, 0.45, 0.6, 0.45;
    p.bandwidth = 0.3;
    KnotParams kp;
    kp.sigma2 = 1.8;
    kp.zeta = 0.9;
    kp.theta = 0.6;
    kp.range = 0.35;
    kp.nugget = 0.15;
    p.knot = {kp, kp, kp, kp};

    // With identical knots the blended kernel is the knot kernel everywhere,
    // the prefactor cancels, and the covariance is stationary anisotropic
    // exponential in the kernel's Mahalanobis distance.
    const double c = std::cos(kp.theta), s = std::sin(kp.theta);
    Eigen::Matrix2d R;
    R << c, -s, s, c;
    Eigen::Matrix2d Dg = Eigen::Matrix2d::Zero();
    Dg(0, 0) = std::exp(0.5 * kp.zeta);
    Dg(1, 1) = std::exp(-0.5 * kp.zeta);
    const Eigen::Matrix2d Sigma = kp.range * kp.range * (R * Dg * R.transpose());
    const Eigen::Matrix2d Sinv = Sigma.inverse();

    const Eigen::MatrixXd C = nonstat_cov(p, coords);
    const int n = int(sites.size());
    for (int i = 0; i < n; ++i) {
        CHECK(C(i, i) == doctest::Approx(kp.sigma2).epsilon(1e-12));
        for (int j = i + 1; j < n; ++j) {
            Eigen::Vector2d d(coords(i, 0) - coords(j, 0), coords(i, 1) - coords(j, 1));
            const double want =
                kp.sigma2 * (1.0 - kp.nugget) * std::exp(-std::sqrt(d.dot(Sinv * d)));
            CHECK(C(i, j) == doctest::Approx(want).epsilon(1e-12));
        }
    }

    // isotropic special case (zeta = 0) matches the exponential Matern build
    KnotParams iso = kp;
    iso.zeta = 0.0;
    p.knot = {iso, iso, iso, iso};
    const Eigen::MatrixXd Ciso = nonstat_cov(p, coords);
    MaternParams mp{iso.sigma2, iso.range, 0.5, iso.nugget};
    const Eigen::MatrixXd Cm = matern_cov(pairwise_distance(sites, DistanceKind::Euclidean), mp);
    CHECK((Ciso - Cm).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("blending weights are a proper convex combination") {
    NonstatParams p;
    p.knots.resize(2, 2);
    p.knots << 0.0, 0.0, 1.0, 0.0;
    p.bandwidth = 0.2;
    p.knot = {KnotParams{}, KnotParams{}};
    const Eigen::VectorXd w = nonstat_weights_at(p, 0.1, 0.0);
    CHECK(w.sum() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(w(0) > w(1));  // nearer knot dominates
    CHECK(w.minCoeff() > 0.0);
    const Eigen::VectorXd mid = nonstat_weights_at(p, 0.5, 0.0);
    CHECK(mid(0) == doctest::Approx(mid(1)).epsilon(1e-14));
}

TEST_CASE("factorization reproduces the covariance") {
    const auto sites = grid_sites(6, 5, 0.22);
    const Eigen::MatrixXd D = pairwise_distance(sites, DistanceKind::Euclidean);
    const Eigen::MatrixXd C = matern_cov(D, MaternParams{1.3, 0.4, 1.5, 0.05});
    const CovFactor f = build_factor(C);
    CHECK(f.jitter <= 1e-8);
    CHECK((f.L * f.L.transpose() - C).cwiseAbs().maxCoeff() < 1e-8);

    // a singular matrix (duplicated site) gets jitter but still factors
    Eigen::MatrixXd Cs(3, 3);
    Cs << 1, 1, 0.5, 1, 1, 0.5, 0.5, 0.5, 1;
    const CovFactor g = build_factor(Cs);
    CHECK(g.jitter > 0.0);
    Eigen::MatrixXd back = g.L * g.L.transpose();
    back.diagonal().array() -= g.jitter;
    CHECK((back - Cs).cwiseAbs().maxCoeff() < 1e-6);

    CHECK_THROWS_AS((void)build_factor(Eigen::MatrixXd::Zero(2, 3)), DataError);
    Eigen::MatrixXd neg = -Eigen::MatrixXd::Identity(2, 2);
    CHECK_THROWS_AS((void)build_factor(neg), NumericError);
}

TEST_CASE("empirical covariance on a handworked matrix") {
    Eigen::MatrixXd X(2, 3);
    X << 1, 2, 3, 2, 4, 0;
    // rows centered: [-1 0 1], [0 2 -2]; divisor T-1 = 2
    const Eigen::MatrixXd S = empirical_cov(X);
    CHECK(S(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(S(1, 1) == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(S(0, 1) == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(S(1, 0) == doctest::Approx(-1.0).epsilon(1e-15));
}

TEST_CASE("stationary likelihood fit recovers simulated parameters") {
    // 30 sites, 500 replicate days from an exponential model: the range and
    // variance estimates should land close to the truth.
    const auto sites = grid_sites(6, 5, 0.2);
    const Eigen::MatrixXd D = pairwise_distance(sites, DistanceKind::Euclidean);
    const MaternParams truth{2.0, 0.3, 0.5, 0.0};
    const Eigen::MatrixXd C = matern_cov(D, truth);
    const CovFactor f = build_factor(C);

    RngStream rng(seed_for(101, "matern-recover", 0));
    const int T = 500, n = int(sites.size());
    Eigen::MatrixXd Z(n, T);
    for (int t = 0; t < T; ++t)
        for (int i = 0; i < n; ++i) Z(i, t) = rng.normal();
    const Eigen::MatrixXd X = f.L * Z;

    const MaternParams hat = fit_matern(D, X, {0.5, 1.5});
    CHECK(hat.nu == 0.5);  // smoothness winner on the grid
    CHECK(std::abs(hat.range - truth.range) < 0.05);
    CHECK(std::abs(hat.sigma2 - truth.sigma2) < 0.25);
    CHECK(hat.nugget < 0.08);
}

TEST_CASE("local likelihood windows need enough sites") {
    // 4 sites cannot populate any knot window
    Eigen::MatrixXd coords(4, 2);
    coords << 0, 0, 1, 0, 0, 1, 1, 1;
    Eigen::MatrixXd X = Eigen::MatrixXd::Random(4, 50);
    CHECK_THROWS_AS((void)fit_nonstat(coords, X, 2, 2), NumericError);

    Eigen::MatrixXd bad = Eigen::MatrixXd::Random(3, 50);
    CHECK_THROWS_AS((void)fit_nonstat(coords, bad, 2, 2), DataError);
}

TEST_CASE("single-knot local fit recovers a stationary exponential field") {
    const auto sites = grid_sites(5, 5, 0.25);
    const Eigen::MatrixXd coords = planar_coords(sites, DistanceKind::Euclidean);
    const Eigen::MatrixXd D = pairwise_distance(sites, DistanceKind::Euclidean);
    const MaternParams truth{1.5, 0.4, 0.5, 0.0};
    const CovFactor f = build_factor(matern_cov(D, truth));

    RngStream rng(seed_for(101, "nonstat-recover", 0));
    const int T = 400, n = int(sites.size());
    Eigen::MatrixXd Z(n, T);
    for (int t = 0; t < T; ++t)
        for (int i = 0; i < n; ++i) Z(i, t) = rng.normal();
    const Eigen::MatrixXd X = f.L * Z;

    const NonstatParams p = fit_nonstat(coords, X, 1, 1);
    REQUIRE(p.knot.size() == 1);
    // isotropic truth: small anisotropy, range and variance in the ballpark
    CHECK(std::abs(p.knot[0].zeta) < 0.35);
    CHECK(p.knot[0].range == doctest::Approx(truth.range).epsilon(0.35));
    CHECK(p.knot[0].sigma2 == doctest::Approx(truth.sigma2).epsilon(0.35));
    CHECK(p.knot[0].nugget < 0.15);

    // and the implied covariance is close to the truth where it matters
    const Eigen::MatrixXd Chat = nonstat_cov(p, coords);
    const Eigen::MatrixXd Ctrue = matern_cov(D, truth);
    CHECK((Chat - Ctrue).cwiseAbs().maxCoeff() < 0.5);
}
