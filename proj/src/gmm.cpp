#include "camo/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "camo/errors.hpp"
#include "camo/rng.hpp"

namespace camo::hfc {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double sq_dist(const double* a, const double* b, std::size_t d) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        double diff = a[i] - b[i];
        s += diff * diff;
    }
    return s;
}

// Lloyd's algorithm; empty clusters are reseeded with the point farthest
// from its current center. Returns hard assignments.
std::vector<std::size_t> kmeans_assign(const Tensor& x, std::size_t k, Rng& rng) {
    const std::size_t n = x.dim(0), d = x.dim(1);
    std::vector<std::size_t> pick(n);
    std::iota(pick.begin(), pick.end(), 0);
    rng.shuffle(pick);

    std::vector<std::vector<double>> centers(k, std::vector<double>(d));
    for (std::size_t c = 0; c < k; ++c)
        std::copy(x.data() + pick[c] * d, x.data() + (pick[c] + 1) * d, centers[c].begin());

    std::vector<std::size_t> assign(n, 0);
    for (std::size_t round = 0; round < 25; ++round) {
        bool moved = false;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                double dist = sq_dist(x.data() + i * d, centers[c].data(), d);
                if (dist < best_d) {
                    best_d = dist;
                    best = c;
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                moved = true;
            }
        }

        std::vector<std::size_t> counts(k, 0);
        std::vector<std::vector<double>> sums(k, std::vector<double>(d, 0.0));
        for (std::size_t i = 0; i < n; ++i) {
            counts[assign[i]]++;
            for (std::size_t j = 0; j < d; ++j) sums[assign[i]][j] += x.at(i, j);
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                // farthest point from its own center takes over this slot
                std::size_t far = 0;
                double far_d = -1.0;
                for (std::size_t i = 0; i < n; ++i) {
                    double dist = sq_dist(x.data() + i * d, centers[assign[i]].data(), d);
                    if (dist > far_d) {
                        far_d = dist;
                        far = i;
                    }
                }
                std::copy(x.data() + far * d, x.data() + (far + 1) * d, centers[c].begin());
                assign[far] = c;
                moved = true;
            } else {
                for (std::size_t j = 0; j < d; ++j)
                    centers[c][j] = sums[c][j] / static_cast<double>(counts[c]);
            }
        }
        if (!moved && round > 0) break;
    }
    return assign;
}

// Factorizes cov, adding escalating ridge reg*(trace/d)*I until it goes
// through. Returns the total ridge added.
double factor_with_ridge(Tensor& cov, double reg, CholeskyFactor& out) {
    const std::size_t d = cov.dim(0);
    double trace = 0.0;
    for (std::size_t i = 0; i < d; ++i) trace += cov.at(i, i);
    if (trace <= 0.0) trace = 1.0;
    double step = reg * trace / static_cast<double>(d);
    double added = 0.0;
    for (int attempt = 0; attempt < 60; ++attempt) {
        try {
            out = cholesky(cov);
            return added;
        } catch (const NotPdError&) {
            for (std::size_t i = 0; i < d; ++i) cov.at(i, i) += step;
            added += step;
            step *= 10.0;
        }
    }
    throw DegenerateDataError("gmm: covariance not factorizable even with heavy ridge");
}

} // namespace

std::vector<double> component_log_scores(const GaussianMixture& g, const std::vector<double>& v) {
    if (v.size() != g.dim) throw ShapeError("gmm: dimension mismatch");
    std::vector<double> scores(g.k);
    for (std::size_t c = 0; c < g.k; ++c) {
        double maha = mahalanobis_sq(v, g.means[c], g.chols[c]);
        scores[c] = std::log(g.weights[c]) -
                    0.5 * (static_cast<double>(g.dim) * kLog2Pi + g.chols[c].log_det_source() +
                           maha);
    }
    return scores;
}

double gmm_log_likelihood(const GaussianMixture& g, const std::vector<double>& v) {
    return log_sum_exp(component_log_scores(g, v));
}

std::size_t select_component(const GaussianMixture& g, const std::vector<double>& v) {
    std::vector<double> scores = component_log_scores(g, v);
    std::size_t best = 0;
    for (std::size_t c = 1; c < g.k; ++c)
        if (scores[c] > scores[best]) best = c;
    return best;
}

GaussianMixture gmm_fit(const Tensor& features, std::size_t k, const GmmConfig& cfg) {
    if (features.rank() != 2) throw ShapeError("gmm_fit: features must be n x d");
    const std::size_t n = features.dim(0), d = features.dim(1);
    if (k == 0) throw ConfigError("gmm_fit: k must be positive");
    if (n < k) throw ConfigError("gmm_fit: fewer samples than components");

    // All-identical data has no spread to model.
    bool identical = true;
    for (std::size_t i = 1; i < n && identical; ++i)
        for (std::size_t j = 0; j < d; ++j)
            if (features.at(i, j) != features.at(0, j)) {
                identical = false;
                break;
            }
    if (identical) throw DegenerateDataError("gmm_fit: all samples identical");

    GaussianMixture g;
    g.k = k;
    g.dim = d;
    g.weights.resize(k);
    g.means.assign(k, std::vector<double>(d, 0.0));
    g.covariances.assign(k, Tensor({d, d}));
    g.chols.resize(k);

    // Hard k-means assignments seed the first M step.
    Rng rng(cfg.seed);
    std::vector<std::size_t> assign = kmeans_assign(features, k, rng);
    Tensor resp({n, k}, 0.0);
    for (std::size_t i = 0; i < n; ++i) resp.at(i, assign[i]) = 1.0;

    auto m_step = [&]() {
        for (std::size_t c = 0; c < k; ++c) {
            double nc = 0.0;
            for (std::size_t i = 0; i < n; ++i) nc += resp.at(i, c);
            nc = std::max(nc, 1e-10);
            g.weights[c] = nc / static_cast<double>(n);

            std::vector<double>& mu = g.means[c];
            std::fill(mu.begin(), mu.end(), 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                double r = resp.at(i, c);
                if (r == 0.0) continue;
                for (std::size_t j = 0; j < d; ++j) mu[j] += r * features.at(i, j);
            }
            for (std::size_t j = 0; j < d; ++j) mu[j] /= nc;

            Tensor& cov = g.covariances[c];
            std::fill(cov.values().begin(), cov.values().end(), 0.0);
            std::vector<double> diff(d);
            for (std::size_t i = 0; i < n; ++i) {
                double r = resp.at(i, c);
                if (r == 0.0) continue;
                for (std::size_t j = 0; j < d; ++j) diff[j] = features.at(i, j) - mu[j];
                for (std::size_t a = 0; a < d; ++a)
                    for (std::size_t b = 0; b <= a; ++b) cov.at(a, b) += r * diff[a] * diff[b];
            }
            for (std::size_t a = 0; a < d; ++a)
                for (std::size_t b = 0; b <= a; ++b) {
                    cov.at(a, b) /= nc;
                    cov.at(b, a) = cov.at(a, b);
                }
            g.reg_added += factor_with_ridge(cov, cfg.reg, g.chols[c]);
        }
        // renormalize the floored weights
        double wsum = std::accumulate(g.weights.begin(), g.weights.end(), 0.0);
        for (double& w : g.weights) w /= wsum;
    };

    m_step();

    // E before M in each round, so the recorded likelihood always belongs
    // to the parameters the caller receives.
    double prev_ll = -std::numeric_limits<double>::infinity();
    for (std::size_t iter = 0;; ++iter) {
        double ll = 0.0;
        std::vector<double> v(d);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) v[j] = features.at(i, j);
            std::vector<double> scores = component_log_scores(g, v);
            double lse = log_sum_exp(scores);
            ll += lse;
            for (std::size_t c = 0; c < k; ++c) resp.at(i, c) = std::exp(scores[c] - lse);
        }
        g.ll_history.push_back(ll);
        g.iterations = iter + 1; // E-steps run; always equals ll_history.size()
        g.final_log_likelihood = ll;

        bool converged =
            iter > 0 && std::abs(ll - prev_ll) / std::max(std::abs(prev_ll), 1.0) < cfg.tol;
        if (converged || iter == cfg.max_iter) break;
        prev_ll = ll;

        m_step();
    }

    return g;
}

} // namespace camo::hfc
