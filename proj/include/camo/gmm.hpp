// Full-covariance Gaussian mixtures fitted by EM from a k-means start.
// Dimensions here are small (d <= 16), so everything is dense and exact.

#pragma once

#include <cstdint>
#include <vector>

#include "camo/linalg.hpp"
#include "camo/tensor.hpp"

namespace camo::hfc {

struct GmmConfig {
    std::size_t max_iter = 100;
    double tol = 1e-6; // relative log-likelihood change
    double reg = 1e-6; // ridge scale, applied as reg * (trace/d) * I on demand
    std::uint64_t seed = 0;
};

struct GaussianMixture {
    std::size_t k = 0;
    std::size_t dim = 0;
    std::vector<double> weights;            // pi_k, sum to 1
    std::vector<std::vector<double>> means; // k x d
    std::vector<Tensor> covariances;        // k full d x d matrices
    std::vector<CholeskyFactor> chols;      // cached factors, aligned

    // fit metadata
    std::size_t iterations = 0;
    double final_log_likelihood = 0.0;
    double reg_added = 0.0; // total ridge magnitude ever added
    std::vector<double> ll_history;
};

// features: n x d matrix, one sample per row.
GaussianMixture gmm_fit(const Tensor& features, std::size_t k, const GmmConfig& cfg);

// ln sum_k pi_k N(v | mu_k, Sigma_k), evaluated via log-sum-exp.
double gmm_log_likelihood(const GaussianMixture& g, const std::vector<double>& v);

// ln pi_k + ln N(v | mu_k, Sigma_k) for every component.
std::vector<double> component_log_scores(const GaussianMixture& g, const std::vector<double>& v);

// argmax of component_log_scores; ties break to the lowest index.
std::size_t select_component(const GaussianMixture& g, const std::vector<double>& v);

} // namespace camo::hfc
