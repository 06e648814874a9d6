#include "camo/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "camo/errors.hpp"

namespace camo {

double CholeskyFactor::log_det_source() const {
    double s = 0.0;
    for (std::size_t i = 0; i < dim; ++i) s += std::log(at(i, i));
    return 2.0 * s;
}

Tensor mat_mul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) throw ShapeError("mat_mul: operands must be matrices");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) throw ShapeError("mat_mul: inner dimensions disagree");
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a.at(i, p);
            if (aip == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) out.at(i, j) += aip * b.at(p, j);
        }
    }
    return out;
}

CholeskyFactor cholesky(const Tensor& s) {
    if (s.rank() != 2 || s.dim(0) != s.dim(1)) throw ShapeError("cholesky: square matrix required");
    const std::size_t d = s.dim(0);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i + 1; j < d; ++j)
            if (std::abs(s.at(i, j) - s.at(j, i)) > 1e-10 * std::max(1.0, std::abs(s.at(i, j))))
                throw ShapeError("cholesky: matrix not symmetric");

    CholeskyFactor f;
    f.dim = d;
    f.lower.assign(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double sum = s.at(i, j);
            for (std::size_t p = 0; p < j; ++p) sum -= f.lower[i * d + p] * f.lower[j * d + p];
            if (i == j) {
                if (!(sum > 0.0)) throw NotPdError(i);
                f.lower[i * d + i] = std::sqrt(sum);
            } else {
                f.lower[i * d + j] = sum / f.lower[j * d + j];
            }
        }
    }
    return f;
}

std::vector<double> forward_solve(const CholeskyFactor& chol, const std::vector<double>& b) {
    const std::size_t d = chol.dim;
    if (b.size() != d) throw ShapeError("forward_solve: dimension mismatch");
    std::vector<double> y(d);
    for (std::size_t i = 0; i < d; ++i) {
        double sum = b[i];
        for (std::size_t j = 0; j < i; ++j) sum -= chol.lower[i * d + j] * y[j];
        y[i] = sum / chol.lower[i * d + i];
    }
    return y;
}

std::vector<double> backward_solve(const CholeskyFactor& chol, const std::vector<double>& b) {
    const std::size_t d = chol.dim;
    if (b.size() != d) throw ShapeError("backward_solve: dimension mismatch");
    std::vector<double> x(d);
    for (std::size_t ii = d; ii-- > 0;) {
        double sum = b[ii];
        for (std::size_t j = ii + 1; j < d; ++j) sum -= chol.lower[j * d + ii] * x[j];
        x[ii] = sum / chol.lower[ii * d + ii];
    }
    return x;
}

double mahalanobis_sq(const std::vector<double>& v, const std::vector<double>& mean,
                      const CholeskyFactor& chol) {
    if (v.size() != mean.size() || v.size() != chol.dim)
        throw ShapeError("mahalanobis_sq: dimension mismatch");
    std::vector<double> delta(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) delta[i] = v[i] - mean[i];
    std::vector<double> y = forward_solve(chol, delta);
    double q = dot(y, y);
    return q < 0.0 ? 0.0 : q;
}

std::vector<double> mahalanobis_grad(const std::vector<double>& v,
                                     const std::vector<double>& mean,
                                     const CholeskyFactor& chol) {
    if (v.size() != mean.size() || v.size() != chol.dim)
        throw ShapeError("mahalanobis_grad: dimension mismatch");
    std::vector<double> delta(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) delta[i] = v[i] - mean[i];
    return backward_solve(chol, forward_solve(chol, delta));
}

double log_sum_exp(const std::vector<double>& v) {
    if (v.empty()) throw ShapeError("log_sum_exp: empty vector");
    double m = *std::max_element(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

std::vector<double> softmax(const std::vector<double>& v) {
    if (v.empty()) throw ShapeError("softmax: empty vector");
    double m = *std::max_element(v.begin(), v.end());
    std::vector<double> out(v.size());
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - m);
        s += out[i];
    }
    for (double& x : out) x /= s;
    return out;
}

EigenSym eigen_sym(const Tensor& s, std::size_t max_sweeps) {
    if (s.rank() != 2 || s.dim(0) != s.dim(1)) throw ShapeError("eigen_sym: square matrix required");
    const std::size_t d = s.dim(0);
    Tensor a = s;
    Tensor v = Tensor::identity(d);

    for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = i + 1; j < d; ++j) off += a.at(i, j) * a.at(i, j);
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < d; ++p) {
            for (std::size_t q = p + 1; q < d; ++q) {
                double apq = a.at(p, q);
                if (std::abs(apq) < 1e-300) continue;
                double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                double t = (theta >= 0.0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double sn = t * c;
                for (std::size_t i = 0; i < d; ++i) {
                    double aip = a.at(i, p), aiq = a.at(i, q);
                    a.at(i, p) = c * aip - sn * aiq;
                    a.at(i, q) = sn * aip + c * aiq;
                }
                for (std::size_t i = 0; i < d; ++i) {
                    double api = a.at(p, i), aqi = a.at(q, i);
                    a.at(p, i) = c * api - sn * aqi;
                    a.at(q, i) = sn * api + c * aqi;
                }
                for (std::size_t i = 0; i < d; ++i) {
                    double vip = v.at(i, p), viq = v.at(i, q);
                    v.at(i, p) = c * vip - sn * viq;
                    v.at(i, q) = sn * vip + c * viq;
                }
            }
        }
    }

    std::vector<std::size_t> order(d);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t x, std::size_t y) { return a.at(x, x) > a.at(y, y); });

    EigenSym result;
    result.values.resize(d);
    result.vectors = Tensor({d, d});
    for (std::size_t r = 0; r < d; ++r) {
        result.values[r] = a.at(order[r], order[r]);
        for (std::size_t i = 0; i < d; ++i) result.vectors.at(r, i) = v.at(i, order[r]);
    }
    return result;
}

std::vector<double> column_mean(const Tensor& rows) {
    if (rows.rank() != 2) throw ShapeError("column_mean: matrix required");
    const std::size_t n = rows.dim(0), d = rows.dim(1);
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) mean[j] += rows.at(i, j);
    for (double& m : mean) m /= static_cast<double>(n);
    return mean;
}

Tensor covariance(const Tensor& rows, const std::vector<double>& mean) {
    if (rows.rank() != 2) throw ShapeError("covariance: matrix required");
    const std::size_t n = rows.dim(0), d = rows.dim(1);
    if (mean.size() != d) throw ShapeError("covariance: mean dimension mismatch");
    Tensor cov({d, d});
    std::vector<double> delta(d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) delta[j] = rows.at(i, j) - mean[j];
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = a; b < d; ++b) cov.at(a, b) += delta[a] * delta[b];
    }
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) {
            cov.at(a, b) /= static_cast<double>(n);
            cov.at(b, a) = cov.at(a, b);
        }
    return cov;
}

} // namespace camo
