#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace recindial {

/// Dense row-major matrix of doubles. Vectors are 1 x n matrices.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    std::span<double> flat() noexcept { return data_; }
    std::span<const double> flat() const noexcept { return data_; }
    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }

    void fill(double v);
    void set_zero() { fill(0.0); }
    bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }
    bool all_finite() const;

    Matrix transposed() const;

    Matrix& operator+=(const Matrix& o);
    Matrix& operator*=(double s);

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Dense kernels. `out` is overwritten unless the name says accumulate.
void matmul(const Matrix& a, const Matrix& b, Matrix& out);            // a b
void matmul_acc(const Matrix& a, const Matrix& b, Matrix& out);        // out += a b
void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out);     // out += a^T b
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out);         // a b^T
void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& out);     // out += a b^T

double dot(std::span<const double> a, std::span<const double> b);
void axpy(double alpha, std::span<const double> x, std::span<double> y);

/// Softmax in place. Entries equal to -infinity stay at exactly zero.
void softmax_inplace(std::span<double> v);
/// Log-softmax in place. -infinity entries stay -infinity.
void log_softmax_inplace(std::span<double> v);

void fill_normal(Matrix& m, std::mt19937_64& rng, double stddev);

/// Named reference to a parameter tensor; the unit of optimizers, checkpoints and gradient checks.
struct NamedTensor {
    std::string name;
    Matrix* value = nullptr;
};

using TensorList = std::vector<NamedTensor>;

}  // namespace recindial
