#include "windadj/transform.hpp"

#include <cmath>
#include <limits>

#include "windadj/errors.hpp"
#include "windadj/optimize.hpp"

namespace windadj {

namespace {

constexpr double kLambdaEps = 1e-12;  // branch guard for the log limits
constexpr double kChi2_95_half = 1.9207294103470623;  // qchisq(.95, 1) / 2

// Cap on the inverse map's magnitude.  For lambda outside [0, 2] the forward
// image is a half-open interval whose boundary corresponds to w = +/-inf;
// arguments at or beyond it would otherwise blow up to inf/NaN.  A large
// finite cap keeps the inverse total and monotone, and lets divergence-based
// searches see a heavy (finite) penalty instead of poisoned distances.
double cap_inverse(double w) {
    if (w > yj_inverse_cap) return yj_inverse_cap;
    if (w < -yj_inverse_cap) return -yj_inverse_cap;
    return w;
}

}  // namespace

double yeo_johnson(double w, double lambda) {
    if (w >= 0.0) {
        if (std::fabs(lambda) < kLambdaEps) return std::log1p(w);
        return (std::pow(w + 1.0, lambda) - 1.0) / lambda;
    }
    const double two_ml = 2.0 - lambda;
    if (std::fabs(two_ml) < kLambdaEps) return -std::log1p(-w);
    return -(std::pow(1.0 - w, two_ml) - 1.0) / two_ml;
}

double inverse_yeo_johnson(double z, double lambda) {
    if (z >= 0.0) {
        if (std::fabs(lambda) < kLambdaEps) return cap_inverse(std::expm1(z));
        // Forward image of w >= 0 is bounded by -1/lambda when lambda < 0;
        // clamp so the base stays positive.
        double base = 1.0 + lambda * z;
        if (base < kLambdaEps) base = kLambdaEps;
        return cap_inverse(std::pow(base, 1.0 / lambda) - 1.0);
    }
    const double two_ml = 2.0 - lambda;
    if (std::fabs(two_ml) < kLambdaEps) return cap_inverse(-std::expm1(-z));
    double base = 1.0 - two_ml * z;
    if (base < kLambdaEps) base = kLambdaEps;
    return cap_inverse(1.0 - std::pow(base, 1.0 / two_ml));
}

double yeo_johnson_deriv(double w, double lambda) {
    if (w >= 0.0) return std::pow(w + 1.0, lambda - 1.0);
    return std::pow(1.0 - w, 1.0 - lambda);
}

Eigen::MatrixXd yeo_johnson(const Eigen::MatrixXd& w, const Eigen::VectorXd& lambda_per_row) {
    if (lambda_per_row.size() != w.rows())
        throw DataError("transform: one lambda per row required");
    Eigen::MatrixXd out(w.rows(), w.cols());
    for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index t = 0; t < w.cols(); ++t)
            out(i, t) = yeo_johnson(w(i, t), lambda_per_row(i));
    return out;
}

Eigen::MatrixXd inverse_yeo_johnson(const Eigen::MatrixXd& z,
                                    const Eigen::VectorXd& lambda_per_row) {
    if (lambda_per_row.size() != z.rows())
        throw DataError("transform: one lambda per row required");
    Eigen::MatrixXd out(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < z.rows(); ++i)
        for (Eigen::Index t = 0; t < z.cols(); ++t)
            out(i, t) = inverse_yeo_johnson(z(i, t), lambda_per_row(i));
    return out;
}

double lambda_profile_loglik(const Eigen::VectorXd& w, double lambda) {
    const Eigen::Index n = w.size();
    double sum = 0.0, sumsq = 0.0, jac = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double z = yeo_johnson(w(i), lambda);
        sum += z;
        sumsq += z * z;
        const double aw = std::fabs(w(i));
        jac += (w(i) >= 0.0 ? 1.0 : -1.0) * std::log1p(aw);
    }
    const double mean = sum / static_cast<double>(n);
    const double var = sumsq / static_cast<double>(n) - mean * mean;
    if (!(var > 1e-300) || !std::isfinite(var))
        throw NumericError("degenerate sample in transformation likelihood");
    return -0.5 * static_cast<double>(n) * std::log(var) + (lambda - 1.0) * jac;
}

LambdaEstimate fit_lambda_mle(const Eigen::VectorXd& w, double lo, double hi) {
    if (w.size() < 3) throw DataError("too few values to fit a transformation");
    if (!(lo < hi)) throw ConfigError("transformation bounds must satisfy lo < hi");

    auto negll = [&](double l) { return -lambda_profile_loglik(w, l); };

    // Coarse grid, then golden-section refinement around the best cell.
    const double step = 0.25;
    double best_l = lo, best_f = negll(lo);
    for (double l = lo + step; l <= hi + 1e-12; l += step) {
        const double f = negll(std::min(l, hi));
        if (f < best_f) {
            best_f = f;
            best_l = std::min(l, hi);
        }
    }
    const double a = std::max(lo, best_l - step);
    const double b = std::min(hi, best_l + step);
    double lhat = golden_section(negll, a, b, 1e-7);
    if (negll(lhat) > best_f) lhat = best_l;  // keep the grid winner on ties

    LambdaEstimate est;
    est.lambda = lhat;
    est.loglik = -negll(lhat);

    // 95% profile-likelihood interval, clipped to the search bounds.
    const double target = est.loglik - kChi2_95_half;
    auto crossing = [&](double inside, double outside) {
        // loglik(inside) >= target > loglik(outside); bisect the boundary.
        for (int it = 0; it < 80; ++it) {
            const double mid = 0.5 * (inside + outside);
            if (-negll(mid) >= target)
                inside = mid;
            else
                outside = mid;
        }
        return 0.5 * (inside + outside);
    };
    est.ci_lo = (-negll(lo) >= target) ? lo : crossing(lhat, lo);
    est.ci_hi = (-negll(hi) >= target) ? hi : crossing(lhat, hi);
    return est;
}

Moments sample_moments(const Eigen::VectorXd& x) {
    const Eigen::Index n = x.size();
    if (n < 2) throw DataError("too few values for sample moments");
    Moments m;
    m.mean = x.mean();
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double d = x(i) - m.mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= static_cast<double>(n);
    m3 /= static_cast<double>(n);
    m4 /= static_cast<double>(n);
    if (!(m2 > 0.0)) throw NumericError("zero variance in sample moments");
    m.sd = std::sqrt(m2 * static_cast<double>(n) / static_cast<double>(n - 1));
    m.skewness = m3 / std::pow(m2, 1.5);
    m.excess_kurtosis = m4 / (m2 * m2) - 3.0;
    return m;
}

}  // namespace windadj
