#include "windadj/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "windadj/errors.hpp"

namespace windadj {

namespace {

struct KmeansRun {
    std::vector<int> label;
    Eigen::MatrixXd centers;
    double wcss = std::numeric_limits<double>::infinity();
};

KmeansRun lloyd(const Eigen::MatrixXd& Z, int k, RngStream& rng) {
    const int n = static_cast<int>(Z.rows());

    // Greedy farthest-point seeding from a random start; ties to lowest index.
    std::vector<int> seeds;
    seeds.push_back(static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(n))));
    Eigen::VectorXd mind =
        (Z.rowwise() - Z.row(seeds[0])).rowwise().squaredNorm();
    while (static_cast<int>(seeds.size()) < k) {
        int far = 0;
        double fd = -1.0;
        for (int i = 0; i < n; ++i)
            if (mind(i) > fd) {
                fd = mind(i);
                far = i;
            }
        seeds.push_back(far);
        mind = mind.cwiseMin((Z.rowwise() - Z.row(far)).rowwise().squaredNorm());
    }

    KmeansRun run;
    run.centers.resize(k, Z.cols());
    for (int c = 0; c < k; ++c) run.centers.row(c) = Z.row(seeds[static_cast<std::size_t>(c)]);
    run.label.assign(static_cast<std::size_t>(n), 0);

    for (int iter = 0; iter < 200; ++iter) {
        bool changed = false;
        // assignment
        for (int i = 0; i < n; ++i) {
            int bc = 0;
            double bd = std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                const double d = (Z.row(i) - run.centers.row(c)).squaredNorm();
                if (d < bd - 0.0) {
                    bd = d;
                    bc = c;
                }
            }
            if (run.label[static_cast<std::size_t>(i)] != bc) {
                run.label[static_cast<std::size_t>(i)] = bc;
                changed = true;
            }
        }
        // empty clusters: steal the point farthest from its center
        std::vector<int> count(static_cast<std::size_t>(k), 0);
        for (int i = 0; i < n; ++i) ++count[static_cast<std::size_t>(run.label[static_cast<std::size_t>(i)])];
        for (int c = 0; c < k; ++c) {
            if (count[static_cast<std::size_t>(c)] > 0) continue;
            int far = -1;
            double fd = -1.0;
            for (int i = 0; i < n; ++i) {
                const int li = run.label[static_cast<std::size_t>(i)];
                if (count[static_cast<std::size_t>(li)] <= 1) continue;
                const double d = (Z.row(i) - run.centers.row(li)).squaredNorm();
                if (d > fd) {
                    fd = d;
                    far = i;
                }
            }
            if (far < 0) throw NumericError("k-means could not repopulate an empty cluster");
            --count[static_cast<std::size_t>(run.label[static_cast<std::size_t>(far)])];
            run.label[static_cast<std::size_t>(far)] = c;
            ++count[static_cast<std::size_t>(c)];
            changed = true;
        }
        // update
        run.centers.setZero();
        for (int i = 0; i < n; ++i)
            run.centers.row(run.label[static_cast<std::size_t>(i)]) += Z.row(i);
        for (int c = 0; c < k; ++c) run.centers.row(c) /= static_cast<double>(count[static_cast<std::size_t>(c)]);
        if (!changed && iter > 0) break;
    }

    run.wcss = 0.0;
    for (int i = 0; i < n; ++i)
        run.wcss += (Z.row(i) - run.centers.row(run.label[static_cast<std::size_t>(i)])).squaredNorm();
    return run;
}

}  // namespace

ClusterAssignment weighted_kmeans(const Eigen::MatrixXd& features, const Eigen::VectorXd& weights,
                                  int k, int n_restarts, std::uint64_t seed) {
    const int n = static_cast<int>(features.rows());
    const int f = static_cast<int>(features.cols());
    if (weights.size() != f) throw ConfigError("weighted_kmeans: one weight per feature");
    if (k < 1) throw ConfigError("weighted_kmeans: k must be >= 1");
    if (k > n) throw ConfigError("weighted_kmeans: more clusters than points");
    if (n_restarts < 1) throw ConfigError("weighted_kmeans: need at least one restart");
    for (int j = 0; j < f; ++j)
        if (!(weights(j) >= 0.0)) throw ConfigError("weighted_kmeans: negative feature weight");

    // z-score columns, then scale by sqrt(weight); constant columns drop out.
    Eigen::MatrixXd Z(n, f);
    for (int j = 0; j < f; ++j) {
        const double mean = features.col(j).mean();
        const double sd = std::sqrt((features.col(j).array() - mean).square().sum() /
                                    std::max(1, n - 1));
        if (sd < 1e-12) {
            Z.col(j).setZero();
        } else {
            Z.col(j) = (features.col(j).array() - mean) / sd * std::sqrt(weights(j));
        }
    }

    KmeansRun best;
    for (int r = 0; r < n_restarts; ++r) {
        RngStream rng(seed_for(seed, "kmeans/restart", static_cast<std::uint64_t>(r)));
        KmeansRun run = lloyd(Z, k, rng);
        if (run.wcss < best.wcss) best = std::move(run);
    }

    ClusterAssignment a;
    a.k = k;
    a.label = std::move(best.label);
    a.centers = std::move(best.centers);
    a.wcss = best.wcss;
    a.sizes.assign(static_cast<std::size_t>(k), 0);
    for (int v : a.label) ++a.sizes[static_cast<std::size_t>(v)];
    return a;
}

std::vector<int> stratified_subsample(const ClusterAssignment& a, double fraction,
                                      RngStream& rng) {
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw ConfigError("stratified_subsample: fraction must be in (0, 1]");
    std::vector<int> out;
    for (int c = 0; c < a.k; ++c) {
        std::vector<int> members;
        for (int i = 0; i < static_cast<int>(a.label.size()); ++i)
            if (a.label[static_cast<std::size_t>(i)] == c) members.push_back(i);
        if (members.empty()) continue;
        std::size_t want = static_cast<std::size_t>(
            std::lround(fraction * static_cast<double>(members.size())));
        want = std::max<std::size_t>(1, std::min(want, members.size()));
        auto pick = rng.sample_without_replacement(members.size(), want);
        for (std::size_t idx : pick) out.push_back(members[idx]);
    }
    std::sort(out.begin(), out.end());
    return out;
}

void save_clusters_csv(const ClusterAssignment& a, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write clusters CSV: " + path);
    out << "site_id,cluster_id\n";
    for (std::size_t i = 0; i < a.label.size(); ++i) out << i << ',' << a.label[i] << '\n';
    if (!out) throw DataError("write failed: " + path);
}

std::vector<int> load_clusters_csv(const std::string& path, int n_sites) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open clusters CSV: " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty clusters CSV: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "site_id,cluster_id")
        throw DataError("bad clusters CSV header in " + path + ": '" + line + "'");
    std::vector<int> label(static_cast<std::size_t>(n_sites), -1);
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw DataError("bad clusters CSV row: '" + line + "'");
        const long id = std::stol(line.substr(0, comma));
        const long cl = std::stol(line.substr(comma + 1));
        if (id < 0 || id >= n_sites)
            throw DataError("clusters CSV site id out of range: " + std::to_string(id));
        if (cl < 0) throw DataError("clusters CSV negative cluster id");
        label[static_cast<std::size_t>(id)] = static_cast<int>(cl);
    }
    for (int i = 0; i < n_sites; ++i)
        if (label[static_cast<std::size_t>(i)] < 0)
            throw DataError("clusters CSV missing site " + std::to_string(i));
    return label;
}

}  // namespace windadj
