// Matrix products, Cholesky factorization and solves, Mahalanobis forms,
// stable softmax / log-sum-exp, and a small symmetric eigensolver.

#pragma once

#include <cstddef>
#include <vector>

#include "camo/tensor.hpp"

namespace camo {

// Lower-triangular factor L with L * L^T equal to the source matrix.
struct CholeskyFactor {
    std::size_t dim = 0;
    std::vector<double> lower; // row-major dim x dim, upper part zero

    double at(std::size_t i, std::size_t j) const { return lower[i * dim + j]; }
    double log_det_source() const; // log |L L^T| = 2 * sum log diag(L)
};

Tensor mat_mul(const Tensor& a, const Tensor& b);

// Requires s symmetric within 1e-10. Throws NotPdError carrying the failing
// pivot index when a pivot is not strictly positive; regularization policy
// is the caller's.
CholeskyFactor cholesky(const Tensor& s);

// Solve L y = b (forward) then L^T x = y (backward).
std::vector<double> forward_solve(const CholeskyFactor& chol, const std::vector<double>& b);
std::vector<double> backward_solve(const CholeskyFactor& chol, const std::vector<double>& b);

// (v - mean)^T Sigma^{-1} (v - mean) through two triangular solves.
double mahalanobis_sq(const std::vector<double>& v, const std::vector<double>& mean,
                      const CholeskyFactor& chol);

// Sigma^{-1} (v - mean); the gradient of the half quadratic form above.
std::vector<double> mahalanobis_grad(const std::vector<double>& v,
                                     const std::vector<double>& mean,
                                     const CholeskyFactor& chol);

double log_sum_exp(const std::vector<double>& v);
std::vector<double> softmax(const std::vector<double>& v);

// Cyclic Jacobi on a symmetric matrix. Returns eigenvalues (descending) and
// matching eigenvectors as rows of the second tensor.
struct EigenSym {
    std::vector<double> values;
    Tensor vectors; // row i = eigenvector of values[i]
};
EigenSym eigen_sym(const Tensor& s, std::size_t max_sweeps = 64);

// Column means and biased (1/n) covariance of a row-per-sample matrix.
std::vector<double> column_mean(const Tensor& rows);
Tensor covariance(const Tensor& rows, const std::vector<double>& mean);

} // namespace camo
