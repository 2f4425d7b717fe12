#include "windadj/divergence.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "windadj/errors.hpp"

namespace windadj {

int default_knn_k(int m) {
    if (m < 2) throw DataError("knn_kl: estimate cloud needs at least 2 points");
    int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(m))));
    k = std::max(1, std::min(k, m - 1));
    return k;
}

KlEstimate knn_kl(const Eigen::MatrixXd& est, const Eigen::MatrixXd& truth, int k) {
    const int m = static_cast<int>(est.rows());
    const int mp = static_cast<int>(truth.rows());
    const int d = static_cast<int>(est.cols());
    if (d == 0 || truth.cols() != d)
        throw DataError("knn_kl: clouds must share a positive dimension");
    if (m < 2 || mp < 1) throw DataError("knn_kl: clouds too small");
    if (k == 0) k = default_knn_k(m);
    if (k < 1 || k > m - 1 || k > mp)
        throw DataError("knn_kl: neighbor order k=" + std::to_string(k) +
                        " out of range for cloud sizes " + std::to_string(m) + "/" +
                        std::to_string(mp));

    // Brute-force squared distances with partial selection; clouds at the
    // intended scale (thousands of points) stay well under a second.
    // Duplicate-point guard: distances floored at 1e-12 so exact ties cannot
    // produce -inf; floored neighbor distances are counted.
    constexpr double kFloor2 = 1e-24;  // squared-distance floor (1e-12 distance)
    std::vector<double> buf(static_cast<std::size_t>(std::max(m, mp)));
    double acc = 0.0;
    int floored = 0;
    for (int i = 0; i < m; ++i) {
        const auto xi = est.row(i);
        // k-th neighbor within est, self excluded
        int cnt = 0;
        for (int j = 0; j < m; ++j) {
            if (j == i) continue;
            buf[static_cast<std::size_t>(cnt++)] = (est.row(j) - xi).squaredNorm();
        }
        std::nth_element(buf.begin(), buf.begin() + (k - 1), buf.begin() + cnt);
        double rho2 = buf[static_cast<std::size_t>(k - 1)];
        if (rho2 < kFloor2) {
            rho2 = kFloor2;
            ++floored;
        }
        // k-th neighbor in truth
        for (int j = 0; j < mp; ++j)
            buf[static_cast<std::size_t>(j)] = (truth.row(j) - xi).squaredNorm();
        std::nth_element(buf.begin(), buf.begin() + (k - 1), buf.begin() + mp);
        double nu2 = buf[static_cast<std::size_t>(k - 1)];
        if (nu2 < kFloor2) {
            nu2 = kFloor2;
            ++floored;
        }
        acc += 0.5 * (std::log(nu2) - std::log(rho2));
    }

    KlEstimate out;
    out.k = k;
    out.m_est = m;
    out.m_truth = mp;
    out.floored_pairs = floored;
    out.value = static_cast<double>(d) / static_cast<double>(m) * acc +
                std::log(static_cast<double>(mp) / static_cast<double>(m - 1));
    return out;
}

double gaussian_kl(const Eigen::VectorXd& mu0, const Eigen::MatrixXd& S0,
                   const Eigen::VectorXd& mu1, const Eigen::MatrixXd& S1) {
    const int d = static_cast<int>(mu0.size());
    if (mu1.size() != d || S0.rows() != d || S0.cols() != d || S1.rows() != d || S1.cols() != d)
        throw DataError("gaussian_kl: dimension mismatch");
    Eigen::LLT<Eigen::MatrixXd> l1(S1);
    if (l1.info() != Eigen::Success) throw NumericError("gaussian_kl: S1 not positive definite");
    Eigen::LLT<Eigen::MatrixXd> l0(S0);
    if (l0.info() != Eigen::Success) throw NumericError("gaussian_kl: S0 not positive definite");

    double logdet1 = 0.0, logdet0 = 0.0;
    for (int i = 0; i < d; ++i) {
        logdet1 += 2.0 * std::log(l1.matrixLLT()(i, i));
        logdet0 += 2.0 * std::log(l0.matrixLLT()(i, i));
    }
    const double tr = l1.solve(S0).trace();
    const Eigen::VectorXd dm = mu1 - mu0;
    const double quad = dm.dot(l1.solve(dm));
    return 0.5 * (tr + quad - static_cast<double>(d) + logdet1 - logdet0);
}

}  // namespace windadj
