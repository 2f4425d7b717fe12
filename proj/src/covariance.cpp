#include "windadj/covariance.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "windadj/errors.hpp"
#include "windadj/optimize.hpp"

namespace windadj {

namespace {

constexpr double kEarthRadiusKm = 6371.0088;
constexpr double kDeg = std::numbers::pi / 180.0;

double haversine_km(double lon1, double lat1, double lon2, double lat2) {
    const double p1 = lat1 * kDeg, p2 = lat2 * kDeg;
    const double dp = p2 - p1, dl = (lon2 - lon1) * kDeg;
    const double a = std::sin(0.5 * dp) * std::sin(0.5 * dp) +
                     std::cos(p1) * std::cos(p2) * std::sin(0.5 * dl) * std::sin(0.5 * dl);
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(a)));
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Unnormalized Gaussian-likelihood cost for zero-mean replicates with unit
/// marginal variance structure K0 (correlation + nugget), variance profiled.
/// Returns +inf-like on factorization failure.
double profile_negll(const Eigen::MatrixXd& K0, const Eigen::MatrixXd& X) {
    Eigen::LLT<Eigen::MatrixXd> llt(K0);
    if (llt.info() != Eigen::Success) return 1e18;
    const auto& L = llt.matrixLLT();
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < K0.rows(); ++i) logdet += 2.0 * std::log(L(i, i));
    Eigen::MatrixXd Y = X;
    llt.matrixL().solveInPlace(Y);
    const double quad = Y.squaredNorm();
    const double nT = static_cast<double>(K0.rows()) * static_cast<double>(X.cols());
    const double sigma2 = quad / nT;
    if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) return 1e18;
    return 0.5 * (static_cast<double>(X.cols()) * logdet + nT * std::log(sigma2) + nT);
}

}  // namespace

Eigen::MatrixXd pairwise_distance(const std::vector<Site>& sites, DistanceKind kind) {
    const int n = static_cast<int>(sites.size());
    Eigen::MatrixXd D(n, n);
    for (int i = 0; i < n; ++i) {
        D(i, i) = 0.0;
        for (int j = i + 1; j < n; ++j) {
            double d;
            if (kind == DistanceKind::Euclidean) {
                const double dx = sites[i].lon - sites[j].lon;
                const double dy = sites[i].lat - sites[j].lat;
                d = std::sqrt(dx * dx + dy * dy);
            } else {
                d = haversine_km(sites[i].lon, sites[i].lat, sites[j].lon, sites[j].lat);
            }
            D(i, j) = D(j, i) = d;
        }
    }
    return D;
}

Eigen::MatrixXd planar_coords(const std::vector<Site>& sites, DistanceKind kind) {
    const int n = static_cast<int>(sites.size());
    Eigen::MatrixXd C(n, 2);
    if (kind == DistanceKind::Euclidean) {
        for (int i = 0; i < n; ++i) {
            C(i, 0) = sites[i].lon;
            C(i, 1) = sites[i].lat;
        }
        return C;
    }
    double mean_lat = 0.0;
    for (const auto& s : sites) mean_lat += s.lat;
    mean_lat /= static_cast<double>(n);
    const double scale = kEarthRadiusKm * std::cos(mean_lat * kDeg);
    for (int i = 0; i < n; ++i) {
        C(i, 0) = scale * sites[i].lon * kDeg;
        C(i, 1) = kEarthRadiusKm * sites[i].lat * kDeg;
    }
    return C;
}

double matern_corr(double h, double range, double nu) {
    if (!(range > 0.0)) throw NumericError("matern range must be positive");
    if (!(nu > 0.0)) throw NumericError("matern smoothness must be positive");
    const double x = std::sqrt(2.0 * nu) * h / range;
    if (x < 1e-10) return 1.0;
    if (nu == 0.5) return std::exp(-x);
    if (nu == 1.5) return (1.0 + x) * std::exp(-x);
    if (nu == 2.5) return (1.0 + x + x * x / 3.0) * std::exp(-x);
    // General form; cyl_bessel_k underflows to 0 for large x, which is the
    // correct limit.
    const double val = std::pow(2.0, 1.0 - nu) / std::tgamma(nu) * std::pow(x, nu) *
                       std::cyl_bessel_k(nu, x);
    return std::min(1.0, std::max(0.0, val));
}

Eigen::MatrixXd matern_cov(const Eigen::MatrixXd& D, const MaternParams& p) {
    if (!(p.nugget >= 0.0 && p.nugget < 1.0)) throw NumericError("nugget must be in [0, 1)");
    const int n = static_cast<int>(D.rows());
    Eigen::MatrixXd C(n, n);
    for (int i = 0; i < n; ++i) {
        C(i, i) = p.sigma2;
        for (int j = i + 1; j < n; ++j) {
            const double c = p.sigma2 * (1.0 - p.nugget) * matern_corr(D(i, j), p.range, p.nu);
            C(i, j) = C(j, i) = c;
        }
    }
    return C;
}

MaternParams fit_matern(const Eigen::MatrixXd& D, const Eigen::MatrixXd& X,
                        const std::vector<double>& nu_grid) {
    const int n = static_cast<int>(D.rows());
    if (X.rows() != n) throw DataError("fit_matern: replicate rows must match distance rows");
    if (n < 3 || X.cols() < 2) throw DataError("fit_matern: too little data");
    if (nu_grid.empty()) throw ConfigError("fit_matern: empty smoothness grid");

    double dsum = 0.0, dmax = 0.0;
    int cnt = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            dsum += D(i, j);
            dmax = std::max(dmax, D(i, j));
            ++cnt;
        }
    if (!(dmax > 0.0)) throw DataError("fit_matern: all distances are zero");
    const double dmean = dsum / static_cast<double>(cnt);

    const double nT = static_cast<double>(n) * static_cast<double>(X.cols());
    MaternParams best;
    double best_cost = std::numeric_limits<double>::infinity();
    for (double nu : nu_grid) {
        auto cost = [&](const Eigen::VectorXd& u) -> double {
            const double rho = std::exp(u(0));
            if (rho < 1e-6 * dmax || rho > 1e3 * dmax) return 1e17;
            const double nug = 0.8 * sigmoid(u(1));
            Eigen::MatrixXd K0(n, n);
            for (int i = 0; i < n; ++i) {
                K0(i, i) = 1.0;
                for (int j = i + 1; j < n; ++j) {
                    const double c = (1.0 - nug) * matern_corr(D(i, j), rho, nu);
                    K0(i, j) = K0(j, i) = c;
                }
            }
            return profile_negll(K0, X);
        };
        Eigen::VectorXd u0(2);
        u0 << std::log(dmean / 3.0), std::log(0.0625 / 0.9375);
        Eigen::VectorXd step(2);
        step << 0.8, 1.5;
        Eigen::VectorXd u = nelder_mead(cost, u0, step, 1e-8, 250);
        const double c = cost(u);
        if (c < best_cost) {
            best_cost = c;
            best.nu = nu;
            best.range = std::exp(u(0));
            best.nugget = 0.8 * sigmoid(u(1));
        }
    }
    if (!std::isfinite(best_cost) || best_cost >= 1e16)
        throw NumericError("fit_matern: likelihood optimization failed");

    // Recover the profiled variance at the winning parameters.
    Eigen::MatrixXd K0(n, n);
    for (int i = 0; i < n; ++i) {
        K0(i, i) = 1.0;
        for (int j = i + 1; j < n; ++j)
            K0(i, j) = K0(j, i) = (1.0 - best.nugget) * matern_corr(D(i, j), best.range, best.nu);
    }
    Eigen::LLT<Eigen::MatrixXd> llt(K0);
    Eigen::MatrixXd Y = X;
    llt.matrixL().solveInPlace(Y);
    best.sigma2 = Y.squaredNorm() / nT;
    return best;
}

// --- nonstationary ------------------------------------------------------------

Eigen::VectorXd nonstat_weights_at(const NonstatParams& p, double x, double y) {
    const int A = static_cast<int>(p.knots.rows());
    Eigen::VectorXd w(A);
    for (int a = 0; a < A; ++a) {
        const double dx = x - p.knots(a, 0);
        const double dy = y - p.knots(a, 1);
        w(a) = std::exp(-(dx * dx + dy * dy) / (2.0 * p.bandwidth));
    }
    const double s = w.sum();
    if (!(s > 0.0)) throw NumericError("degenerate blending weights");
    return w / s;
}

namespace {

/// Unit-determinant anisotropy matrix scaled by range^2.
Eigen::Matrix2d knot_kernel(const KnotParams& k) {
    const double c = std::cos(k.theta), s = std::sin(k.theta);
    const double e1 = std::exp(0.5 * k.zeta), e2 = std::exp(-0.5 * k.zeta);
    Eigen::Matrix2d R;
    R << c, -s, s, c;
    Eigen::Matrix2d Dg = Eigen::Matrix2d::Zero();
    Dg(0, 0) = e1;
    Dg(1, 1) = e2;
    return k.range * k.range * (R * Dg * R.transpose());
}

}  // namespace

Eigen::Matrix2d nonstat_kernel_at(const NonstatParams& p, double x, double y) {
    const Eigen::VectorXd w = nonstat_weights_at(p, x, y);
    Eigen::Matrix2d K = Eigen::Matrix2d::Zero();
    for (int a = 0; a < static_cast<int>(p.knot.size()); ++a) K += w(a) * knot_kernel(p.knot[a]);
    return K;
}

Eigen::MatrixXd nonstat_cov(const NonstatParams& p, const Eigen::MatrixXd& coords) {
    const int n = static_cast<int>(coords.rows());
    const int A = static_cast<int>(p.knot.size());
    if (p.knots.rows() != A) throw DataError("nonstat_cov: knot table size mismatch");

    std::vector<Eigen::Matrix2d> K(static_cast<std::size_t>(n));
    Eigen::VectorXd total_var(n), spat_var(n), det_quarter(n);
    for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd w = nonstat_weights_at(p, coords(i, 0), coords(i, 1));
        Eigen::Matrix2d Ki = Eigen::Matrix2d::Zero();
        double tv = 0.0, sv = 0.0;
        for (int a = 0; a < A; ++a) {
            Ki += w(a) * knot_kernel(p.knot[a]);
            tv += w(a) * p.knot[a].sigma2;
            sv += w(a) * (1.0 - p.knot[a].nugget) * p.knot[a].sigma2;
        }
        K[static_cast<std::size_t>(i)] = Ki;
        total_var(i) = tv;
        spat_var(i) = sv;
        det_quarter(i) = std::pow(Ki.determinant(), 0.25);
    }

    Eigen::MatrixXd C(n, n);
    for (int i = 0; i < n; ++i) {
        C(i, i) = total_var(i);
        for (int j = i + 1; j < n; ++j) {
            const Eigen::Matrix2d Kb = 0.5 * (K[static_cast<std::size_t>(i)] + K[static_cast<std::size_t>(j)]);
            const double det = Kb.determinant();
            Eigen::Vector2d d(coords(i, 0) - coords(j, 0), coords(i, 1) - coords(j, 1));
            const double q = d.dot(Kb.inverse() * d);
            const double pref = det_quarter(i) * det_quarter(j) / std::sqrt(det);
            const double c = std::sqrt(spat_var(i) * spat_var(j)) * pref * std::exp(-std::sqrt(std::max(0.0, q)));
            C(i, j) = C(j, i) = c;
        }
    }
    return C;
}

NonstatParams fit_nonstat(const Eigen::MatrixXd& coords, const Eigen::MatrixXd& X, int knots_x,
                          int knots_y) {
    const int n = static_cast<int>(coords.rows());
    if (X.rows() != n) throw DataError("fit_nonstat: replicate rows must match coordinate rows");
    if (knots_x < 1 || knots_y < 1) throw ConfigError("fit_nonstat: knot grid must be >= 1x1");
    const int T = static_cast<int>(X.cols());
    if (T < 2) throw DataError("fit_nonstat: need at least 2 replicates");

    const double minx = coords.col(0).minCoeff(), maxx = coords.col(0).maxCoeff();
    const double miny = coords.col(1).minCoeff(), maxy = coords.col(1).maxCoeff();
    const double diam = std::hypot(maxx - minx, maxy - miny);
    if (!(diam > 0.0)) throw DataError("fit_nonstat: degenerate site geometry");

    NonstatParams p;
    const int A = knots_x * knots_y;
    p.knots.resize(A, 2);
    for (int ay = 0; ay < knots_y; ++ay)
        for (int ax = 0; ax < knots_x; ++ax) {
            const int a = ay * knots_x + ax;
            p.knots(a, 0) = minx + (ax + 0.5) * (maxx - minx) / knots_x;
            p.knots(a, 1) = miny + (ay + 0.5) * (maxy - miny) / knots_y;
        }
    double min_knot_dist = std::numeric_limits<double>::infinity();
    for (int a = 0; a < A; ++a)
        for (int b = a + 1; b < A; ++b) {
            const double d = std::hypot(p.knots(a, 0) - p.knots(b, 0), p.knots(a, 1) - p.knots(b, 1));
            if (d > 0.0) min_knot_dist = std::min(min_knot_dist, d);
        }
    if (!std::isfinite(min_knot_dist)) min_knot_dist = 0.5 * diam;  // single knot
    p.bandwidth = 0.5 * min_knot_dist;

    // Normalized blending weights per site.
    Eigen::MatrixXd W(n, A);
    for (int i = 0; i < n; ++i)
        W.row(i) = nonstat_weights_at(p, coords(i, 0), coords(i, 1)).transpose();

    const Eigen::MatrixXd S = X * X.transpose();  // replicate sums of squares/products

    p.knot.resize(static_cast<std::size_t>(A));
    for (int a = 0; a < A; ++a) {
        std::vector<int> win;
        for (int i = 0; i < n; ++i)
            if (W(i, a) >= 0.01) win.push_back(i);
        if (static_cast<int>(win.size()) < 5)
            throw NumericError("local likelihood window at knot " + std::to_string(a) +
                               " has fewer than 5 sites");

        struct Pair {
            int i, j;
            double v, dx, dy, sii, sij, sjj;
        };
        std::vector<Pair> pairs;
        pairs.reserve(win.size() * (win.size() - 1) / 2);
        double mean_dist = 0.0;
        for (std::size_t ii = 0; ii < win.size(); ++ii)
            for (std::size_t jj = ii + 1; jj < win.size(); ++jj) {
                const int i = win[ii], j = win[jj];
                Pair q;
                q.i = i;
                q.j = j;
                q.v = W(i, a) * W(j, a);
                q.dx = coords(i, 0) - coords(j, 0);
                q.dy = coords(i, 1) - coords(j, 1);
                q.sii = S(i, i);
                q.sij = S(i, j);
                q.sjj = S(j, j);
                pairs.push_back(q);
                mean_dist += std::hypot(q.dx, q.dy);
            }
        mean_dist /= static_cast<double>(pairs.size());

        const double Td = static_cast<double>(T);
        auto cost = [&](const Eigen::VectorXd& u) -> double {
            const double zeta = u(0), theta = u(1);
            if (std::fabs(zeta) > 6.0) return 1e17 + zeta * zeta;
            const double r = std::exp(u(2));
            if (r < 1e-4 * diam || r > 1e2 * diam) return 1e17;
            const double nug = 0.8 * sigmoid(u(3));
            const double c = std::cos(theta), s = std::sin(theta);
            const double e1 = std::exp(-0.5 * zeta), e2 = std::exp(0.5 * zeta);
            const double inv_r2 = 1.0 / (r * r);
            const double q11 = inv_r2 * (c * c * e1 + s * s * e2);
            const double q22 = inv_r2 * (s * s * e1 + c * c * e2);
            const double q12 = inv_r2 * (c * s * (e1 - e2));
            double sv = 0.0, slog = 0.0, squad = 0.0;
            for (const auto& q : pairs) {
                const double qq =
                    q11 * q.dx * q.dx + 2.0 * q12 * q.dx * q.dy + q22 * q.dy * q.dy;
                const double corr = std::exp(-std::sqrt(std::max(0.0, qq)));
                const double k = (1.0 - nug) * corr;
                const double om = 1.0 - k * k;
                sv += q.v;
                slog += q.v * std::log(om);
                squad += q.v * (q.sii - 2.0 * k * q.sij + q.sjj) / om;
            }
            const double sigma2 = squad / (2.0 * Td * sv);
            if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) return 1e17;
            return Td * sv * std::log(sigma2) + 0.5 * Td * slog + Td * sv;
        };

        Eigen::VectorXd u0(4);
        u0 << 0.0, 0.0, std::log(mean_dist / 3.0), std::log(0.0625 / 0.9375);
        Eigen::VectorXd step(4);
        step << 0.6, 0.5, 0.8, 1.2;
        Eigen::VectorXd u = nelder_mead(cost, u0, step, 1e-8, 320);
        KnotParams kp;
        kp.zeta = u(0);
        kp.theta = u(1);
        kp.range = std::exp(u(2));
        kp.nugget = 0.8 * sigmoid(u(3));
        // Recover the profiled variance at the optimum.
        {
            const double c = std::cos(kp.theta), s = std::sin(kp.theta);
            const double e1 = std::exp(-0.5 * kp.zeta), e2 = std::exp(0.5 * kp.zeta);
            const double inv_r2 = 1.0 / (kp.range * kp.range);
            const double q11 = inv_r2 * (c * c * e1 + s * s * e2);
            const double q22 = inv_r2 * (s * s * e1 + c * c * e2);
            const double q12 = inv_r2 * (c * s * (e1 - e2));
            double sv = 0.0, squad = 0.0;
            for (const auto& q : pairs) {
                const double qq =
                    q11 * q.dx * q.dx + 2.0 * q12 * q.dx * q.dy + q22 * q.dy * q.dy;
                const double k = (1.0 - kp.nugget) * std::exp(-std::sqrt(std::max(0.0, qq)));
                const double om = 1.0 - k * k;
                sv += q.v;
                squad += q.v * (q.sii - 2.0 * k * q.sij + q.sjj) / om;
            }
            kp.sigma2 = squad / (2.0 * Td * sv);
        }
        if (!(kp.sigma2 > 0.0) || !std::isfinite(kp.sigma2))
            throw NumericError("fit_nonstat: degenerate local variance at knot " +
                               std::to_string(a));
        p.knot[static_cast<std::size_t>(a)] = kp;
    }
    return p;
}

// --- factors -------------------------------------------------------------------

CovFactor build_factor(const Eigen::MatrixXd& cov) {
    const int n = static_cast<int>(cov.rows());
    if (cov.cols() != n) throw DataError("build_factor: matrix must be square");
    const double md = cov.diagonal().mean();
    if (!(md > 0.0) || !std::isfinite(md))
        throw NumericError("build_factor: invalid diagonal");
    double jitter = 0.0;
    for (int attempt = 0; attempt < 8; ++attempt) {
        Eigen::MatrixXd K = cov;
        if (jitter > 0.0) K.diagonal().array() += jitter;
        Eigen::LLT<Eigen::MatrixXd> llt(K);
        if (llt.info() == Eigen::Success) {
            CovFactor f;
            f.L = llt.matrixL();
            f.jitter = jitter;
            return f;
        }
        jitter = (jitter == 0.0) ? 1e-10 * md : jitter * 10.0;
        if (jitter > 1e-4 * md * 1.0000001) break;
    }
    throw NumericError("covariance factorization failed after jitter escalation");
}

Eigen::MatrixXd empirical_cov(const Eigen::MatrixXd& X) {
    const int T = static_cast<int>(X.cols());
    if (T < 2) throw DataError("empirical_cov: need at least 2 replicates");
    Eigen::MatrixXd Xc = X.colwise() - X.rowwise().mean();
    return (Xc * Xc.transpose()) / static_cast<double>(T - 1);
}

}  // namespace windadj
