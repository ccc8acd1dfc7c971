#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace e2lora {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
///
/// Zero-extent matrices are allowed (a pruned adapter of rank 0 has a
/// d_out x 0 basis). Entries supplied through the data constructor must be
/// finite; element access does not re-check.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols);
    Matrix(std::size_t rows, std::size_t cols, Vector data);

    static Matrix identity(std::size_t n);
    /// Builds a matrix from nested rows; every row must have the same length.
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
    /// Single column.
    static Matrix column(std::span<const double> values);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    Vector col(std::size_t j) const;
    void set_col(std::size_t j, std::span<const double> values);

    /// Columns [first, first + count).
    Matrix col_block(std::size_t first, std::size_t count) const;
    /// Rows [first, first + count).
    Matrix row_block(std::size_t first, std::size_t count) const;

    Matrix transpose() const;
    bool all_finite() const noexcept;

    Matrix& operator+=(const Matrix& other);
    Matrix& operator-=(const Matrix& other);
    Matrix& operator*=(double s) noexcept;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    Vector data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);
Matrix operator*(double s, Matrix a);

Matrix matmul(const Matrix& a, const Matrix& b);
/// aᵀ · b without materializing the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Vector matvec(const Matrix& a, std::span<const double> x);
/// aᵀ · x.
Vector matvec_t(const Matrix& a, std::span<const double> x);

/// Horizontal concatenation; all inputs must share a row count.
Matrix hcat(std::span<const Matrix> blocks, std::size_t rows);

double frobenius_norm(const Matrix& m);
double frobenius_norm_sq(const Matrix& m);
double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);

/// max |(mᵀm - I)_ij|.
double orthonormality_defect(const Matrix& m);

}  // namespace e2lora
