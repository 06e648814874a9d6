#include "camo/tensor.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace camo {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        if (d == 0) throw ShapeError("tensor: zero-length axis");
        n *= d;
    }
    return n;
}

} // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_product(shape_) != data_.size())
        throw ShapeError("tensor: shape does not match data length");
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor Tensor::vector(std::vector<double> values) {
    std::size_t n = values.size();
    if (n == 0) throw ShapeError("tensor: empty vector");
    return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

double& Tensor::at(std::size_t i, std::size_t j) {
    if (rank() != 2) throw ShapeError("tensor: 2-d access on rank " + std::to_string(rank()));
    return data_[i * shape_[1] + j];
}

double Tensor::at(std::size_t i, std::size_t j) const {
    if (rank() != 2) throw ShapeError("tensor: 2-d access on rank " + std::to_string(rank()));
    return data_[i * shape_[1] + j];
}

double& Tensor::at(std::size_t c, std::size_t h, std::size_t w) {
    if (rank() != 3) throw ShapeError("tensor: 3-d access on rank " + std::to_string(rank()));
    return data_[(c * shape_[1] + h) * shape_[2] + w];
}

double Tensor::at(std::size_t c, std::size_t h, std::size_t w) const {
    if (rank() != 3) throw ShapeError("tensor: 3-d access on rank " + std::to_string(rank()));
    return data_[(c * shape_[1] + h) * shape_[2] + w];
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
    if (shape_product(shape) != data_.size())
        throw ShapeError("tensor: reshape changes element count");
    return Tensor(std::move(shape), data_);
}

void Tensor::assert_finite(const char* context) const {
    for (double v : data_) {
        if (!std::isfinite(v))
            throw ShapeError(std::string(context) + ": non-finite element");
    }
}

Tensor& Tensor::operator+=(const Tensor& other) {
    if (!same_shape(other)) throw ShapeError("tensor: += shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
    if (!same_shape(other)) throw ShapeError("tensor: -= shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

double l2_norm(const std::vector<double>& v) {
    return std::sqrt(dot(v, v));
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    double na = l2_norm(a), nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / (na * nb);
}

} // namespace camo
