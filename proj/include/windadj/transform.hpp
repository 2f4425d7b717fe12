#pragma once

#include <Eigen/Dense>

namespace windadj {

/// Power transformation toward normality, defined on all of R:
///   w >= 0: ((w+1)^l - 1)/l          (log(w+1) at l = 0)
///   w <  0: -((1-w)^(2-l) - 1)/(2-l) (-log(1-w) at l = 2)
/// Monotone increasing in w for every l.
double yeo_johnson(double w, double lambda);

/// Magnitude cap of the inverse map.  For lambda outside [0, 2] the forward
/// image is a half-open interval whose boundary corresponds to w = +/-inf;
/// capping keeps the inverse total, monotone, and finite.
inline constexpr double yj_inverse_cap = 1e15;

/// Inverse map; outputs are capped to [-yj_inverse_cap, yj_inverse_cap], so
/// arguments beyond the forward image map to the cap instead of overflowing.
double inverse_yeo_johnson(double z, double lambda);

/// d/dw of the forward map (the likelihood Jacobian).
double yeo_johnson_deriv(double w, double lambda);

Eigen::MatrixXd yeo_johnson(const Eigen::MatrixXd& w, const Eigen::VectorXd& lambda_per_row);
Eigen::MatrixXd inverse_yeo_johnson(const Eigen::MatrixXd& z, const Eigen::VectorXd& lambda_per_row);

struct LambdaEstimate {
    double lambda = 1.0;
    double ci_lo = 1.0;   // 95% profile-likelihood interval, clipped to bounds
    double ci_hi = 1.0;
    double loglik = 0.0;  // profile log-likelihood at lambda
};

/// Gaussian profile likelihood over the transformation parameter: mean and
/// variance are profiled out in closed form, lambda maximized by a coarse
/// grid followed by golden-section refinement on [lo, hi].
LambdaEstimate fit_lambda_mle(const Eigen::VectorXd& w, double lo = -2.0, double hi = 4.0);

/// Profile log-likelihood at a fixed lambda (exposed for tests and CI search).
double lambda_profile_loglik(const Eigen::VectorXd& w, double lambda);

struct Moments {
    double mean = 0.0;
    double sd = 0.0;
    double skewness = 0.0;
    double excess_kurtosis = 0.0;
};

Moments sample_moments(const Eigen::VectorXd& x);

}  // namespace windadj
