#pragma once

#include <Eigen/Dense>

namespace windadj {

/// Default neighbor order: round(sqrt(m)) clamped to [1, m-1], m = estimate
/// cloud size.
int default_knn_k(int m);

struct KlEstimate {
    double value = 0.0;  // nats; the raw estimator may be negative
    int k = 0;
    int m_est = 0;          // points in the estimated cloud
    int m_truth = 0;        // points in the reference cloud
    int floored_pairs = 0;  // neighbor distances raised to the 1e-12 floor
};

/// k-nearest-neighbor Kullback-Leibler estimate D(est || truth) from sample
/// clouds (rows = points, columns = dimensions):
///   (d/m) sum_i [log nu_k(i) - log rho_k(i)] + log(m' / (m-1))
/// where rho_k is the k-th neighbor distance within est (self excluded) and
/// nu_k the k-th neighbor distance into truth.  k = 0 selects default_knn_k.
KlEstimate knn_kl(const Eigen::MatrixXd& est, const Eigen::MatrixXd& truth, int k = 0);

/// Closed-form KL divergence N(mu0, S0) || N(mu1, S1).
double gaussian_kl(const Eigen::VectorXd& mu0, const Eigen::MatrixXd& S0,
                   const Eigen::VectorXd& mu1, const Eigen::MatrixXd& S1);

}  // namespace windadj
