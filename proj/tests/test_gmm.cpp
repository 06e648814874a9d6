#include <doctest.h>

#include <cmath>
#include <vector>

#include "camo/errors.hpp"
#include "camo/gmm.hpp"
#include "camo/rng.hpp"

using namespace camo;
using hfc::GaussianMixture;
using hfc::GmmConfig;

namespace {

// Density computed from first principles with an explicit 2x2 inverse,
// bypassing the library's Cholesky path entirely.
double brute_log_density_2d(const GaussianMixture& g, const std::vector<double>& v) {
    double total = 0.0;
    for (std::size_t c = 0; c < g.k; ++c) {
        const double a = g.covariances[c].at(0, 0);
        const double b = g.covariances[c].at(0, 1);
        const double d = g.covariances[c].at(1, 1);
        const double det = a * d - b * b;
        const double dx = v[0] - g.means[c][0];
        const double dy = v[1] - g.means[c][1];
        const double maha = (d * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
        total += g.weights[c] *
                 std::exp(-0.5 * (2.0 * std::log(2.0 * 3.14159265358979323846) + std::log(det) + maha));
    }
    return std::log(total);
}

// Two tight, far-apart blobs; EM must land on the per-cluster sample stats.
Tensor two_blob_data(std::size_t n0, std::size_t n1, std::uint64_t seed) {
    Rng rng(seed);
    Tensor rows({n0 + n1, 2});
    for (std::size_t i = 0; i < n0 + n1; ++i) {
        const double cx = i < n0 ? 0.0 : 10.0;
        rows.at(i, 0) = cx + 0.3 * rng.normal();
        rows.at(i, 1) = cx + 0.3 * rng.normal();
    }
    return rows;
}

} // namespace

TEST_CASE("gmm recovers separated cluster statistics") {
    const std::size_t n0 = 60, n1 = 40;
    Tensor rows = two_blob_data(n0, n1, 42);
    GaussianMixture g = hfc::gmm_fit(rows, 2, {.seed = 1});

    // independent per-cluster maximum-likelihood statistics
    auto cluster_stats = [&](std::size_t lo, std::size_t hi) {
        std::vector<double> mean(2, 0.0);
        for (std::size_t i = lo; i < hi; ++i)
            for (std::size_t j = 0; j < 2; ++j) mean[j] += rows.at(i, j);
        for (double& m : mean) m /= static_cast<double>(hi - lo);
        std::vector<double> cov(4, 0.0); // a b; b d flattened
        for (std::size_t i = lo; i < hi; ++i) {
            const double dx = rows.at(i, 0) - mean[0];
            const double dy = rows.at(i, 1) - mean[1];
            cov[0] += dx * dx;
            cov[1] += dx * dy;
            cov[3] += dy * dy;
        }
        for (double& c : cov) c /= static_cast<double>(hi - lo);
        cov[2] = cov[1];
        return std::make_pair(mean, cov);
    };
    auto [mean0, cov0] = cluster_stats(0, n0);
    auto [mean1, cov1] = cluster_stats(n0, n0 + n1);

    // map fitted components onto clusters by nearest mean
    std::size_t c0 = g.means[0][0] < 5.0 ? 0 : 1;
    std::size_t c1 = 1 - c0;
    CHECK(g.weights[c0] == doctest::Approx(0.6).epsilon(1e-9));
    CHECK(g.weights[c1] == doctest::Approx(0.4).epsilon(1e-9));
    for (std::size_t j = 0; j < 2; ++j) {
        CHECK(g.means[c0][j] == doctest::Approx(mean0[j]).epsilon(1e-9));
        CHECK(g.means[c1][j] == doctest::Approx(mean1[j]).epsilon(1e-9));
    }
    for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t b = 0; b < 2; ++b) {
            CHECK(g.covariances[c0].at(a, b) == doctest::Approx(cov0[a * 2 + b]).epsilon(1e-7));
            CHECK(g.covariances[c1].at(a, b) == doctest::Approx(cov1[a * 2 + b]).epsilon(1e-7));
        }
    CHECK(g.reg_added == 0.0);
}

TEST_CASE("gmm density matches a from-scratch evaluation") {
    Tensor rows = two_blob_data(50, 50, 7);
    GaussianMixture g = hfc::gmm_fit(rows, 2, {.seed = 3});

    Rng rng(99);
    for (int t = 0; t < 50; ++t) {
        std::vector<double> v = {rng.uniform(-2.0, 12.0), rng.uniform(-2.0, 12.0)};
        const double lib = hfc::gmm_log_likelihood(g, v);
        const double ref = brute_log_density_2d(g, v);
        CHECK(std::abs(lib - ref) <= 1e-10 * std::max(1.0, std::abs(ref)));
    }
}

TEST_CASE("em log-likelihood never decreases") {
    // overlapping clusters so EM actually has to work for many iterations
    Rng rng(5);
    Tensor rows({150, 3});
    for (std::size_t i = 0; i < 150; ++i) {
        const double c = static_cast<double>(i % 3);
        for (std::size_t j = 0; j < 3; ++j) rows.at(i, j) = c + 1.2 * rng.normal();
    }
    GaussianMixture g = hfc::gmm_fit(rows, 3, {.max_iter = 200, .tol = 1e-12, .seed = 2});

    REQUIRE(g.ll_history.size() == g.iterations);
    REQUIRE(g.iterations >= 3);
    for (std::size_t i = 1; i < g.ll_history.size(); ++i)
        CHECK(g.ll_history[i] >= g.ll_history[i - 1] - 1e-9);
    CHECK(g.ll_history.back() == g.final_log_likelihood);

    // the reported likelihood must describe the returned parameters
    double recomputed = 0.0;
    for (std::size_t i = 0; i < rows.dim(0); ++i) {
        std::vector<double> v = {rows.at(i, 0), rows.at(i, 1), rows.at(i, 2)};
        recomputed += hfc::gmm_log_likelihood(g, v);
    }
    CHECK(recomputed == doctest::Approx(g.final_log_likelihood).epsilon(1e-12));
}

TEST_CASE("component selection and ties") {
    Tensor rows = two_blob_data(50, 50, 13);
    GaussianMixture g = hfc::gmm_fit(rows, 2, {.seed = 4});
    std::size_t low = g.means[0][0] < 5.0 ? 0 : 1;
    CHECK(hfc::select_component(g, {0.1, -0.2}) == low);
    CHECK(hfc::select_component(g, {9.8, 10.1}) == 1 - low);

    // identical components: scores tie exactly, lowest index wins
    GaussianMixture twin;
    twin.k = 2;
    twin.dim = 1;
    twin.weights = {0.5, 0.5};
    twin.means = {{0.0}, {0.0}};
    twin.covariances = {Tensor::matrix(1, 1, {1.0}), Tensor::matrix(1, 1, {1.0})};
    twin.chols = {cholesky(twin.covariances[0]), cholesky(twin.covariances[1])};
    std::vector<double> scores = hfc::component_log_scores(twin, {0.7});
    CHECK(scores[0] == scores[1]);
    CHECK(hfc::select_component(twin, {0.7}) == 0);
}

TEST_CASE("gmm fit validation and determinism") {
    Tensor rows = two_blob_data(10, 10, 1);
    CHECK_THROWS_AS(hfc::gmm_fit(rows, 0, {}), ConfigError);
    CHECK_THROWS_AS(hfc::gmm_fit(rows, 21, {}), ConfigError);

    Tensor flat({8, 2});
    for (std::size_t i = 0; i < 8; ++i) {
        flat.at(i, 0) = 1.0;
        flat.at(i, 1) = 2.0;
    }
    CHECK_THROWS_AS(hfc::gmm_fit(flat, 2, {}), DegenerateDataError);

    GaussianMixture a = hfc::gmm_fit(rows, 2, {.seed = 6});
    GaussianMixture b = hfc::gmm_fit(rows, 2, {.seed = 6});
    CHECK(a.weights == b.weights);
    CHECK(a.means == b.means);
    CHECK(a.final_log_likelihood == b.final_log_likelihood);
}
