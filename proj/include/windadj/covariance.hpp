#pragma once

#include <Eigen/Dense>
#include <vector>

#include "windadj/field.hpp"

namespace windadj {

enum class DistanceKind { Euclidean, Haversine };

/// Pairwise site distances: Euclidean in (lon, lat) coordinate units, or
/// great-circle kilometres (mean Earth radius 6371.0088 km).
Eigen::MatrixXd pairwise_distance(const std::vector<Site>& sites, DistanceKind kind);

/// Planar coordinates for kernel-convolution models: raw (lon, lat) for
/// Euclidean, equirectangular kilometres about the mean latitude for
/// Haversine.
Eigen::MatrixXd planar_coords(const std::vector<Site>& sites, DistanceKind kind);

// --- stationary Matern ------------------------------------------------------

/// Matern correlation in the sqrt(2 nu) scaling: corr(h) =
/// 2^(1-nu)/Gamma(nu) * (sqrt(2 nu) h / range)^nu * K_nu(sqrt(2 nu) h / range);
/// closed forms at nu in {0.5, 1.5, 2.5}.  corr(0) = 1 for every nu.
double matern_corr(double h, double range, double nu);

struct MaternParams {
    double sigma2 = 1.0;
    double range = 1.0;
    double nu = 0.5;
    double nugget = 0.0;  // fraction of sigma2 on the diagonal, in [0, 1)
};

/// sigma2 * [(1 - nugget) * corr(D) + nugget * I].
Eigen::MatrixXd matern_cov(const Eigen::MatrixXd& D, const MaternParams& p);

/// Gaussian maximum likelihood over iid zero-mean replicate columns of X
/// (n_sites x n_reps): profile sigma2 in closed form, optimize (range, nugget)
/// per nu on the grid, keep the best nu.
MaternParams fit_matern(const Eigen::MatrixXd& D, const Eigen::MatrixXd& X,
                        const std::vector<double>& nu_grid = {0.5, 1.0, 1.5, 2.5});

// --- nonstationary kernel convolution ----------------------------------------

/// Spatially varying parameters anchored at knots, blended with normalized
/// Gaussian weights w_a(s) ~ exp(-|s - b_a|^2 / (2 bandwidth)).
struct KnotParams {
    double sigma2 = 1.0;
    double zeta = 0.0;    // log eigenvalue ratio of the unit-determinant kernel
    double theta = 0.0;   // kernel orientation, radians
    double range = 1.0;   // exponential range; carries all kernel scale
    double nugget = 0.0;  // fraction of sigma2, [0, 1)
};

struct NonstatParams {
    Eigen::MatrixXd knots;  // A x 2 knot coordinates
    double bandwidth = 1.0; // squared-distance scale of the blending weights
    std::vector<KnotParams> knot;
};

/// Normalized blending weights of every knot at location (x, y).
Eigen::VectorXd nonstat_weights_at(const NonstatParams& p, double x, double y);

/// 2x2 blended kernel matrix at a location: sum_a w_a * range_a^2 * R(theta_a)
/// diag(e^zeta_a/2? ...)  -- see implementation; determinant of the
/// unit-determinant part is 1, so range^2 carries the scale.
Eigen::Matrix2d nonstat_kernel_at(const NonstatParams& p, double x, double y);

/// Kernel-convolution covariance on planar coords (n x 2): blends per-site
/// variances and kernels, exponential decay in the Mahalanobis distance of
/// the averaged kernels, nugget on the diagonal.  Symmetric positive definite
/// for any valid parameters.
Eigen::MatrixXd nonstat_cov(const NonstatParams& p, const Eigen::MatrixXd& coords);

/// Local fits around a grid of knots (default 2x2 over the bounding box),
/// each maximizing a weighted pairwise Gaussian likelihood with the knot's
/// blending weights; per-knot variance profiled in closed form.  Sites with
/// normalized weight below 0.01 are dropped from a knot's window; a window
/// of fewer than 5 sites is an error.
NonstatParams fit_nonstat(const Eigen::MatrixXd& coords, const Eigen::MatrixXd& X,
                          int knots_x = 2, int knots_y = 2);

// --- factors and empirical covariance ----------------------------------------

struct CovFactor {
    Eigen::MatrixXd L;    // lower Cholesky of (cov + jitter I)
    double jitter = 0.0;  // amount actually added
};

/// Cholesky with a jitter ladder: starts at 1e-10 * mean diagonal, escalates
/// x10 up to 1e-4 * mean diagonal, then throws NumericError.
CovFactor build_factor(const Eigen::MatrixXd& cov);

/// Row-centered covariance of replicate columns, divisor (T - 1).
Eigen::MatrixXd empirical_cov(const Eigen::MatrixXd& X);

}  // namespace windadj
