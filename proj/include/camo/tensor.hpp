// Dense n-dimensional array of doubles, row-major flat storage. The one
// value carrier used by every module.

#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

#include "camo/errors.hpp"

namespace camo {

class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);
    Tensor(std::vector<std::size_t> shape, double fill);

    static Tensor vector(std::vector<double> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
    static Tensor identity(std::size_t n);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t i, std::size_t j);
    double at(std::size_t i, std::size_t j) const;
    double& at(std::size_t c, std::size_t h, std::size_t w);
    double at(std::size_t c, std::size_t h, std::size_t w) const;

    // Same data, new shape; element count must match.
    Tensor reshaped(std::vector<std::size_t> shape) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    // Throws ShapeError if any element is NaN or infinite. Modules with a
    // finite contract call this on their outputs.
    void assert_finite(const char* context) const;

    Tensor& operator+=(const Tensor& other);
    Tensor& operator-=(const Tensor& other);
    Tensor& operator*=(double s);

  private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double l2_norm(const std::vector<double>& v);
double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

} // namespace camo
