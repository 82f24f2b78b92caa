#include "astra/matrix.hpp"

#include <cmath>
#include <string>

#include "astra/errors.hpp"

namespace astra {

namespace {

void check_shape(std::size_t rows, std::size_t cols) {
    if (rows == 0 || cols == 0) {
        throw shape_error("matrix shape must be at least 1x1, got " +
                          std::to_string(rows) + "x" + std::to_string(cols));
    }
}

void check_finite(const std::vector<double>& values) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw value_error("matrix constructor rejects NaN/Inf entries");
        }
    }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {
    check_shape(rows, cols);
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
    check_shape(rows, cols);
    if (data_.size() != rows * cols) {
        throw shape_error("matrix data length " + std::to_string(data_.size()) +
                          " does not match shape " + std::to_string(rows) + "x" +
                          std::to_string(cols));
    }
    check_finite(data_);
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size()), cols_(rows.size() ? rows.begin()->size() : 0) {
    check_shape(rows_, cols_);
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) {
            throw shape_error("ragged row in matrix literal");
        }
        data_.insert(data_.end(), r.begin(), r.end());
    }
    check_finite(data_);
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::column(const std::vector<double>& values) {
    return Matrix(values.size(), 1, values);
}

std::vector<double> Matrix::col(std::size_t j) const {
    std::vector<double> out(rows_);
    for (std::size_t i = 0; i < rows_; ++i) out[i] = (*this)(i, j);
    return out;
}

Matrix Matrix::transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i) {
        for (std::size_t j = 0; j < cols_; ++j) {
            t(j, i) = (*this)(i, j);
        }
    }
    return t;
}

Matrix Matrix::columns(std::size_t first, std::size_t count) const {
    if (count == 0 || first + count > cols_) {
        throw shape_error("column slice [" + std::to_string(first) + ", " +
                          std::to_string(first + count) + ") out of range for " +
                          std::to_string(cols_) + " columns");
    }
    Matrix out(rows_, count);
    for (std::size_t i = 0; i < rows_; ++i) {
        for (std::size_t j = 0; j < count; ++j) {
            out(i, j) = (*this)(i, first + j);
        }
    }
    return out;
}

double Matrix::frobenius_norm() const {
    double sum = 0.0;
    for (double v : data_) sum += v * v;
    return std::sqrt(sum);
}

double Matrix::max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
}

bool Matrix::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

namespace {

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw shape_error(std::string(op) + ": shape mismatch " +
                          std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                          " vs " + std::to_string(b.rows()) + "x" +
                          std::to_string(b.cols()));
    }
}

}  // namespace

Matrix& Matrix::operator+=(const Matrix& other) {
    check_same_shape(*this, other, "operator+");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
    check_same_shape(*this, other, "operator-");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
}

Matrix& Matrix::operator*=(double scalar) {
    for (double& v : data_) v *= scalar;
    return *this;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw shape_error("matmul: inner dimensions " + std::to_string(a.cols()) +
                          " and " + std::to_string(b.rows()) + " do not match");
    }
    Matrix c(a.rows(), b.cols());
    const std::size_t n = a.cols();
    const std::size_t m = b.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        std::span<double> ci = c.row(i);
        std::span<const double> ai = a.row(i);
        for (std::size_t k = 0; k < n; ++k) {
            const double aik = ai[k];
            std::span<const double> bk = b.row(k);
            for (std::size_t j = 0; j < m; ++j) {
                ci[j] += aik * bk[j];
            }
        }
    }
    return c;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    check_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
    }
    return m;
}

}  // namespace astra
