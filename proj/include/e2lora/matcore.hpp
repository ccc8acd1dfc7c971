#pragma once

#include <cstdint>
#include <random>

#include "e2lora/matrix.hpp"

namespace e2lora {

/// Thin SVD m = u · diag(sigma) · vᵀ with k = min(rows, cols).
///
/// sigma is non-increasing; u (rows x k) and v (cols x k) have orthonormal
/// columns. The largest-magnitude entry of every u column is non-negative
/// (lowest row index wins ties), which makes the factorization unique for
/// distinct singular values.
struct SvdResult {
    Matrix u;
    Vector sigma;
    Matrix v;
};

/// Default covariance ridge added before factorizing in gaussian_sample.
inline constexpr double kCovarianceRidge = 1e-4;

/// One-sided (Hestenes) Jacobi SVD with cyclic column-pair sweeps.
///
/// Throws ValidationError on non-finite or empty input and ConvergenceError
/// if the sweep cap (100 * cols) is reached.
SvdResult thin_svd(const Matrix& m);

/// Gram-Schmidt (two passes) orthonormalization preserving the leading-column
/// spans. Requires rows >= cols and full column rank.
Matrix orthonormalize(const Matrix& m);

/// Extends the orthonormal columns of `basis` to `target_cols` columns.
///
/// New directions are taken from `candidates` first (greedily, largest
/// residual after projection, lowest index on ties) and then from the
/// standard basis. `basis` may have zero columns.
Matrix extend_orthonormal(const Matrix& basis, const Matrix& candidates, std::size_t target_cols);

/// `count` x dim draws from N(mu, cov + ridge * I), deterministic in `seed`.
Matrix gaussian_sample(std::span<const double> mu, const Matrix& cov, std::size_t count, std::uint64_t seed,
                       double ridge = kCovarianceRidge);

/// Lower Cholesky factor of a symmetric positive definite matrix.
Matrix cholesky(const Matrix& spd);

/// rows x cols matrix of independent N(0, scale²) entries.
Matrix gaussian_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0);

}  // namespace e2lora
