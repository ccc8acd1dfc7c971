#pragma once

// Shared helpers for the unit tests. Eigen is used only as an independent
// reference implementation; nothing in the library depends on it.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "e2lora/matrix.hpp"

namespace testutil {

using e2lora::Matrix;
using e2lora::Vector;

inline Eigen::MatrixXd to_eigen(const Matrix& m) {
    Eigen::MatrixXd e(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
    return e;
}

inline Matrix from_eigen(const Eigen::MatrixXd& e) {
    Matrix m(e.rows(), e.cols());
    for (Eigen::Index i = 0; i < e.rows(); ++i)
        for (Eigen::Index j = 0; j < e.cols(); ++j) m(i, j) = e(i, j);
    return m;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    Matrix m(rows, cols);
    for (auto& v : m.data()) v = n(rng);
    return m;
}

/// Triple loop, no shared code with the library's matmul.
inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            c(i, j) = s;
        }
    return c;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

inline double rel_frobenius(const Matrix& got, const Matrix& want) {
    return (to_eigen(got) - to_eigen(want)).norm() / std::max(1e-300, to_eigen(want).norm());
}

/// Max |qᵀq - I|.
inline double gram_defect(const Matrix& q) {
    const Eigen::MatrixXd e = to_eigen(q);
    return (e.transpose() * e - Eigen::MatrixXd::Identity(q.cols(), q.cols())).cwiseAbs().maxCoeff();
}

/// Singular values via the symmetric eigensolver on mᵀm, descending.
inline std::vector<double> gram_singular_values(const Matrix& m) {
    const Eigen::MatrixXd e = to_eigen(m);
    const Eigen::MatrixXd g = e.rows() >= e.cols() ? Eigen::MatrixXd(e.transpose() * e) : Eigen::MatrixXd(e * e.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g);
    std::vector<double> out;
    for (Eigen::Index i = es.eigenvalues().size() - 1; i >= 0; --i) out.push_back(std::sqrt(std::max(0.0, es.eigenvalues()(i))));
    return out;
}

}  // namespace testutil
