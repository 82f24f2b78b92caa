#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace astra {

/// Dense real matrix, row-major, 64-bit precision throughout.
///
/// Constructors reject empty shapes and non-finite entries; element access
/// is unchecked. Values are immutable-by-convention once handed to another
/// component: every operation returns a fresh matrix.
class Matrix {
public:
    // Zero-filled.
    Matrix(std::size_t rows, std::size_t cols);

    // Takes ownership of `values` (row-major). Rejects NaN/Inf and size
    // mismatches.
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    // Row-wise literal, e.g. Matrix{{1, 2}, {3, 4}}.
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);

    // d x 1 column vector.
    static Matrix column(const std::vector<double>& values);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double operator()(std::size_t i, std::size_t j) const {
        return data_[i * cols_ + j];
    }
    double& operator()(std::size_t i, std::size_t j) {
        return data_[i * cols_ + j];
    }

    std::span<const double> values() const { return data_; }
    std::span<double> values() { return data_; }

    // Row-major row view.
    std::span<const double> row(std::size_t i) const {
        return std::span<const double>(data_).subspan(i * cols_, cols_);
    }
    std::span<double> row(std::size_t i) {
        return std::span<double>(data_).subspan(i * cols_, cols_);
    }

    std::vector<double> col(std::size_t j) const;

    Matrix transpose() const;

    // Columns [first, first + count).
    Matrix columns(std::size_t first, std::size_t count) const;

    double frobenius_norm() const;
    double max_abs() const;
    bool all_finite() const;

    Matrix& operator+=(const Matrix& other);
    Matrix& operator-=(const Matrix& other);
    Matrix& operator*=(double scalar);

    friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
    friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
    friend Matrix operator*(Matrix a, double s) { return a *= s; }
    friend Matrix operator*(double s, Matrix a) { return a *= s; }

    bool operator==(const Matrix& other) const = default;

private:
    std::size_t rows_;
    std::size_t cols_;
    std::vector<double> data_;
};

// Standard product; summation over the inner index in ascending order.
Matrix matmul(const Matrix& a, const Matrix& b);

// Largest |a - b| entry; shapes must match.
double max_abs_diff(const Matrix& a, const Matrix& b);

}  // namespace astra
