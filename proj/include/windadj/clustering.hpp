#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "windadj/rng.hpp"

namespace windadj {

struct ClusterAssignment {
    int k = 0;
    std::vector<int> label;      // per site, in [0, k)
    Eigen::MatrixXd centers;     // k x n_features, in the scaled feature space
    double wcss = 0.0;           // within-cluster sum of squares (scaled space)
    std::vector<int> sizes;      // per cluster
};

/// Weighted k-means: features are z-scored per column, scaled by
/// sqrt(weight), then clustered by Lloyd iterations with greedy
/// farthest-point seeding.  n_restarts independent seedings keep the lowest
/// within-cluster sum of squares; ties and farthest-point ties break toward
/// the lowest index, so results are reproducible for a given seed.
ClusterAssignment weighted_kmeans(const Eigen::MatrixXd& features,
                                  const Eigen::VectorXd& weights, int k,
                                  int n_restarts, std::uint64_t seed);

/// Round(fraction * size) sites from every cluster (at least 1), via the
/// given stream.  Returns ascending site indices.
std::vector<int> stratified_subsample(const ClusterAssignment& a, double fraction,
                                      RngStream& rng);

/// CSV with header "site_id,cluster_id", one row per site.
void save_clusters_csv(const ClusterAssignment& a, const std::string& path);
std::vector<int> load_clusters_csv(const std::string& path, int n_sites);

}  // namespace windadj
