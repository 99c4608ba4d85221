#include "recindial/tensor.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace recindial {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw std::invalid_argument("Matrix: data size does not match shape");
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
}

Matrix& Matrix::operator+=(const Matrix& o) {
    if (!same_shape(o)) throw std::invalid_argument("Matrix +=: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

Matrix& Matrix::operator*=(double s) {
    for (double& x : data_) x *= s;
    return *this;
}

void matmul(const Matrix& a, const Matrix& b, Matrix& out) {
    if (out.rows() != a.rows() || out.cols() != b.cols()) out = Matrix(a.rows(), b.cols());
    else out.set_zero();
    matmul_acc(a, b, out);
}

void matmul_acc(const Matrix& a, const Matrix& b, Matrix& out) {
    assert(a.cols() == b.rows() && out.rows() == a.rows() && out.cols() == b.cols());
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    for (std::size_t i = 0; i < n; ++i) {
        double* o = out.data() + i * m;
        const double* ar = a.data() + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ar[p];
            if (av == 0.0) continue;
            const double* br = b.data() + p * m;
            for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
        }
    }
}

void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out) {
    assert(a.rows() == b.rows() && out.rows() == a.cols() && out.cols() == b.cols());
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    for (std::size_t i = 0; i < n; ++i) {
        const double* ar = a.data() + i * k;
        const double* br = b.data() + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ar[p];
            if (av == 0.0) continue;
            double* o = out.data() + p * m;
            for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
        }
    }
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out) {
    if (out.rows() != a.rows() || out.cols() != b.rows()) out = Matrix(a.rows(), b.rows());
    else out.set_zero();
    matmul_nt_acc(a, b, out);
}

void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& out) {
    assert(a.cols() == b.cols() && out.rows() == a.rows() && out.cols() == b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto ar = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) += dot(ar, b.row(j));
    }
}

double dot(std::span<const double> a, std::span<const double> b) {
    assert(a.size() == b.size());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    assert(x.size() == y.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void softmax_inplace(std::span<double> v) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : v) mx = std::max(mx, x);
    if (!std::isfinite(mx)) {
        throw std::domain_error("softmax: no finite entry");
    }
    double sum = 0.0;
    for (double& x : v) {
        x = (x == -std::numeric_limits<double>::infinity()) ? 0.0 : std::exp(x - mx);
        sum += x;
    }
    for (double& x : v) x /= sum;
}

void log_softmax_inplace(std::span<double> v) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : v) mx = std::max(mx, x);
    if (!std::isfinite(mx)) {
        throw std::domain_error("log_softmax: no finite entry");
    }
    double sum = 0.0;
    for (double x : v) {
        if (x != -std::numeric_limits<double>::infinity()) sum += std::exp(x - mx);
    }
    const double lse = mx + std::log(sum);
    for (double& x : v) {
        if (x != -std::numeric_limits<double>::infinity()) x -= lse;
    }
}

void fill_normal(Matrix& m, std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& x : m.flat()) x = dist(rng);
}

}  // namespace recindial
