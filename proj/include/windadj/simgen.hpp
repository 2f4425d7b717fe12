#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "windadj/adjustment.hpp"
#include "windadj/field.hpp"

namespace windadj {

/// Synthetic site layout: regions_x * regions_y rectangular regions tiling
/// the unit square, each holding a cell-centered grid x grid of sites.
struct RegionLayout {
    int regions_x = 4;
    int regions_y = 2;
    int grid = 5;

    int n_regions() const { return regions_x * regions_y; }
    int n_sites() const { return n_regions() * grid * grid; }
};

std::vector<Site> layout_sites(const RegionLayout& lay);
/// Region index of every site (row-major over region cells).
std::vector<int> layout_regions(const RegionLayout& lay);
/// Region centroids, n_regions x 2.
Eigen::MatrixXd layout_centroids(const RegionLayout& lay);

/// Skewed heavy-tailed field: per day, a region-level Gaussian vector U over
/// the centroid distances, an independent within-region Gaussian field eta,
/// and one chi-square-type mixing variable Z per region:
///   W(s) = (skewness |U_r| + eta_r(s)) / sqrt(Z_r),  Z_r ~ Gamma(dof/2, dof/2).
/// gaussian_limit drops the skew term and fixes Z = 1.
struct SkewTConfig {
    double skewness = 0.8;
    double dof = 8.0;
    double range_within = 0.2;   // exponential range of eta
    double range_between = 0.5;  // exponential range of the centroid process
    bool gaussian_limit = false;
};

Field simulate_skewt(const RegionLayout& lay, const SkewTConfig& cfg, int n_days,
                     std::uint64_t seed);

/// Gaussian log-Gaussian field: W(s) = eta(s) / sqrt(xi(s)) + tau eps(s) with
/// log xi ~ N(-dof/2, dof * C_xi), so E[xi] = 1 and the scale mixture has
/// strongly heavier tails than eta.  gaussian_limit fixes xi = 1.
struct GlgConfig {
    double dof = 8.0;
    double range_eta = 0.2;
    double range_xi = 0.7;
    double tau2 = 0.1;
    bool gaussian_limit = false;
};

Field simulate_glg(const RegionLayout& lay, const GlgConfig& cfg, int n_days,
                   std::uint64_t seed);

// --- oracle validation harness -------------------------------------------------

/// Defaults matching the synthetic setting: no seasonality or trend, no
/// autoregression, anomaly mode, nonstationary model for T1/TC, 8 clusters.
AdjustOptions validation_adjust_defaults();

struct ValidationConfig {
    int n_sims = 100;
    int n_days = 100;  // per simulation; split half training, half evaluation
    RegionLayout layout;
    SkewTConfig obs_gen;   // observation-side generator
    GlgConfig sim_gen;     // simulation-side generator
    std::vector<AdjustMethod> methods = {AdjustMethod::MV, AdjustMethod::MC, AdjustMethod::MN,
                                         AdjustMethod::T1, AdjustMethod::TC};
    AdjustMethod baseline = AdjustMethod::MV;
    AdjustOptions adjust = validation_adjust_defaults();
    int kl_k = 0;
    std::uint64_t seed = 0xC0FFEEULL;
    int threads = 1;
};

struct ValidationRow {
    int sim = 0;
    std::string method;
    double kl = 0.0;
    double ratio = 0.0;  // vs the baseline method in the same simulation
};

struct ValidationResult {
    std::vector<ValidationRow> rows;
    std::map<std::string, double> median_ratio;
    std::map<std::string, double> median_kl;
};

/// For each simulation: draw an observed and a simulated synthetic field,
/// split both in half, fit every method on the training halves, adjust the
/// simulated evaluation half, and score knn_kl(adjusted || observed
/// evaluation).  Ratios are against the baseline method per simulation.
ValidationResult run_validation(const ValidationConfig& cfg);

}  // namespace windadj
