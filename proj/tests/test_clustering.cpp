#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "windadj/clustering.hpp"
#include "windadj/errors.hpp"
#include "windadj/rng.hpp"

using namespace windadj;

namespace {

std::string temp_path(const std::string& stem) {
    return (std::filesystem::temp_directory_path() / stem).string();
}

/// Three well-separated blobs of 10 points each in 2-D.
Eigen::MatrixXd blob_features(std::uint64_t seed) {
    RngStream rng(seed);
    Eigen::MatrixXd X(30, 2);
    const double cx[3] = {0.0, 10.0, 0.0};
    const double cy[3] = {0.0, 0.0, 10.0};
    for (int b = 0; b < 3; ++b)
        for (int i = 0; i < 10; ++i) {
            X(b * 10 + i, 0) = cx[b] + 0.3 * rng.normal();
            X(b * 10 + i, 1) = cy[b] + 0.3 * rng.normal();
        }
    return X;
}

}  // namespace

TEST_CASE("separated blobs are recovered exactly") {
    const Eigen::MatrixXd X = blob_features(seed_for(31, "blobs", 0));
    Eigen::VectorXd w = Eigen::VectorXd::Ones(2);
    const ClusterAssignment a = weighted_kmeans(X, w, 3, 5, 12345);

    REQUIRE(a.k == 3);
    REQUIRE(a.label.size() == 30);
    REQUIRE(a.sizes.size() == 3);
    CHECK(std::count(a.sizes.begin(), a.sizes.end(), 10) == 3);
    // every blob lands in one cluster
    for (int b = 0; b < 3; ++b)
        for (int i = 1; i < 10; ++i) CHECK(a.label[b * 10 + i] == a.label[b * 10]);
    // blobs get distinct labels
    std::set<int> lbl{a.label[0], a.label[10], a.label[20]};
    CHECK(lbl.size() == 3);
    CHECK(a.wcss > 0.0);
}

TEST_CASE("clustering is deterministic in the seed") {
    const Eigen::MatrixXd X = blob_features(seed_for(31, "blobs", 1));
    Eigen::VectorXd w = Eigen::VectorXd::Ones(2);
    const ClusterAssignment a = weighted_kmeans(X, w, 4, 7, 99);
    const ClusterAssignment b = weighted_kmeans(X, w, 4, 7, 99);
    CHECK(a.label == b.label);
    CHECK(a.wcss == b.wcss);
}

TEST_CASE("a near-zero weight silences a junk feature") {
    // Feature 0 separates two groups; feature 1 is noise 100x larger.
    RngStream rng(seed_for(31, "junk", 0));
    Eigen::MatrixXd X(20, 2);
    for (int i = 0; i < 20; ++i) {
        X(i, 0) = (i < 10) ? 0.0 : 1.0;
        X(i, 0) += 0.01 * rng.normal();
        X(i, 1) = 100.0 * rng.normal();
    }
    Eigen::VectorXd w(2);
    w << 1.0, 1e-12;
    const ClusterAssignment a = weighted_kmeans(X, w, 2, 10, 7);
    for (int i = 1; i < 10; ++i) CHECK(a.label[i] == a.label[0]);
    for (int i = 11; i < 20; ++i) CHECK(a.label[i] == a.label[10]);
    CHECK(a.label[0] != a.label[10]);
}

TEST_CASE("degenerate cluster counts") {
    const Eigen::MatrixXd X = blob_features(seed_for(31, "blobs", 2));
    Eigen::VectorXd w = Eigen::VectorXd::Ones(2);

    const ClusterAssignment one = weighted_kmeans(X, w, 1, 3, 1);
    CHECK(one.k == 1);
    CHECK(std::count(one.label.begin(), one.label.end(), 0) == 30);

    const ClusterAssignment all = weighted_kmeans(X, w, 30, 3, 1);
    CHECK(all.k == 30);
    std::set<int> labels(all.label.begin(), all.label.end());
    CHECK(labels.size() == 30);  // every site its own cluster
    CHECK(all.wcss == doctest::Approx(0.0).epsilon(1e-20));

    CHECK_THROWS((void)weighted_kmeans(X, w, 0, 3, 1));
    CHECK_THROWS((void)weighted_kmeans(X, w, 31, 3, 1));
    Eigen::VectorXd wbad = Eigen::VectorXd::Ones(3);
    CHECK_THROWS((void)weighted_kmeans(X, wbad, 3, 3, 1));
}

TEST_CASE("stratified subsample draws from every cluster") {
    const Eigen::MatrixXd X = blob_features(seed_for(31, "blobs", 3));
    Eigen::VectorXd w = Eigen::VectorXd::Ones(2);
    const ClusterAssignment a = weighted_kmeans(X, w, 3, 5, 5);

    RngStream rng(seed_for(31, "subsample", 0));
    const std::vector<int> pick = stratified_subsample(a, 0.2, rng);
    REQUIRE(pick.size() == 6);  // round(0.2 * 10) = 2 per cluster
    CHECK(std::is_sorted(pick.begin(), pick.end()));
    std::vector<int> per_cluster(3, 0);
    for (int i : pick) ++per_cluster[static_cast<std::size_t>(a.label[static_cast<std::size_t>(i)])];
    for (int c = 0; c < 3; ++c) CHECK(per_cluster[static_cast<std::size_t>(c)] == 2);

    // at least one site per cluster even for a tiny fraction
    RngStream rng2(seed_for(31, "subsample", 1));
    const std::vector<int> tiny = stratified_subsample(a, 1e-6, rng2);
    CHECK(tiny.size() == 3);

    // deterministic for a fixed stream state
    RngStream r3(seed_for(31, "subsample", 0));
    CHECK(stratified_subsample(a, 0.2, r3) == pick);
}

TEST_CASE("cluster table round-trips through CSV") {
    const Eigen::MatrixXd X = blob_features(seed_for(31, "blobs", 4));
    Eigen::VectorXd w = Eigen::VectorXd::Ones(2);
    const ClusterAssignment a = weighted_kmeans(X, w, 3, 5, 5);

    const std::string path = temp_path("windadj_test_clusters.csv");
    save_clusters_csv(a, path);
    const std::vector<int> back = load_clusters_csv(path, 30);
    CHECK(back == a.label);

    // wrong site count is rejected
    CHECK_THROWS_AS((void)load_clusters_csv(path, 29), DataError);
    CHECK_THROWS_AS((void)load_clusters_csv(path, 31), DataError);
    std::remove(path.c_str());

    CHECK_THROWS_AS((void)load_clusters_csv(temp_path("windadj_missing.csv"), 30), DataError);
}
