#include "e2lora/matcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "e2lora/errors.hpp"

namespace e2lora {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

// Factors are stored transposed so that column sweeps run over contiguous memory.
struct TallFactors {
    Matrix u_t;  // k x rows, rows of u_t are columns of u
    Vector sigma;
    Matrix v_t;  // k x k
};

void rotate(std::span<double> x, std::span<double> y, double c, double s) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        const double yi = y[i];
        x[i] = c * xi - s * yi;
        y[i] = s * xi + c * yi;
    }
}

// Projects `v` onto the orthogonal complement of the first `count` rows of `q_t` (twice).
void project_out(std::span<double> v, const Matrix& q_t, std::size_t count) {
    for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t j = 0; j < count; ++j) {
            auto qj = q_t.row(j);
            const double h = dot(qj, v);
            for (std::size_t i = 0; i < v.size(); ++i) v[i] -= h * qj[i];
        }
    }
}

// Fills rows [filled, k) of q_t with orthonormal directions from the standard basis.
void complete_rows(Matrix& q_t, std::size_t filled) {
    const std::size_t k = q_t.rows();
    const std::size_t d = q_t.cols();
    for (std::size_t next = filled; next < k; ++next) {
        Vector best;
        double best_norm = -1.0;
        for (std::size_t e = 0; e < d; ++e) {
            Vector cand(d, 0.0);
            cand[e] = 1.0;
            project_out(cand, q_t, next);
            const double nrm = norm2(cand);
            if (nrm > best_norm) {
                best_norm = nrm;
                best = std::move(cand);
            }
        }
        if (best_norm < 1e-8) throw NumericalError("failed to complete orthonormal basis");
        for (std::size_t i = 0; i < d; ++i) q_t(next, i) = best[i] / best_norm;
    }
}

// Requires rows >= cols.
TallFactors jacobi_tall(const Matrix& a) {
    const std::size_t m = a.rows();
    const std::size_t n = a.cols();
    Matrix w_t = a.transpose();
    Matrix v_t = Matrix::identity(n);
    const double tol = static_cast<double>(std::max<std::size_t>(m, 1)) * kEps;
    const std::size_t max_sweeps = 100 * n;

    double residual = 0.0;
    bool converged = (n < 2);
    for (std::size_t sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
        bool rotated = false;
        residual = 0.0;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                auto wp = w_t.row(p);
                auto wq = w_t.row(q);
                const double alpha = dot(wp, wp);
                const double beta = dot(wq, wq);
                const double gamma = dot(wp, wq);
                if (alpha == 0.0 || beta == 0.0 || gamma == 0.0) continue;
                const double off = std::abs(gamma) / std::sqrt(alpha * beta);
                residual = std::max(residual, off);
                if (off <= tol) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                rotate(wp, wq, c, s);
                rotate(v_t.row(p), v_t.row(q), c, s);
            }
        }
        converged = !rotated;
    }
    if (!converged) {
        throw ConvergenceError("one-sided Jacobi SVD did not converge in " + std::to_string(max_sweeps) +
                                   " sweeps (residual " + std::to_string(residual) + ")",
                               residual);
    }

    Vector norms(n);
    for (std::size_t j = 0; j < n; ++j) norms[j] = norm2(w_t.row(j));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

    TallFactors out{Matrix(n, m), Vector(n), Matrix(n, n)};
    std::size_t nonzero = 0;
    for (std::size_t idx = 0; idx < n; ++idx) {
        const std::size_t j = order[idx];
        out.sigma[idx] = norms[j];
        auto vsrc = v_t.row(j);
        std::copy(vsrc.begin(), vsrc.end(), out.v_t.row(idx).begin());
        if (norms[j] > std::numeric_limits<double>::min() * 1e4) {
            auto wsrc = w_t.row(j);
            auto dst = out.u_t.row(idx);
            for (std::size_t i = 0; i < m; ++i) dst[i] = wsrc[i] / norms[j];
            nonzero = idx + 1;
        } else {
            out.sigma[idx] = 0.0;
        }
    }
    complete_rows(out.u_t, nonzero);
    return out;
}

}  // namespace

SvdResult thin_svd(const Matrix& m) {
    if (m.rows() == 0 || m.cols() == 0) throw ValidationError("thin_svd requires a non-empty matrix");
    if (!m.all_finite()) throw ValidationError("thin_svd input contains non-finite entries");

    const bool wide = m.rows() < m.cols();
    TallFactors f = wide ? jacobi_tall(m.transpose()) : jacobi_tall(m);
    // For the wide case mᵀ = U' Σ V'ᵀ, so u = V' and v = U'.
    Matrix u_t = wide ? std::move(f.v_t) : std::move(f.u_t);
    Matrix v_t = wide ? std::move(f.u_t) : std::move(f.v_t);

    for (std::size_t j = 0; j < u_t.rows(); ++j) {
        auto uj = u_t.row(j);
        std::size_t arg = 0;
        for (std::size_t i = 1; i < uj.size(); ++i)
            if (std::abs(uj[i]) > std::abs(uj[arg])) arg = i;
        if (uj[arg] < 0.0) {
            for (double& x : uj) x = -x;
            for (double& x : v_t.row(j)) x = -x;
        }
    }
    return SvdResult{u_t.transpose(), std::move(f.sigma), v_t.transpose()};
}

Matrix orthonormalize(const Matrix& m) {
    if (m.rows() < m.cols()) throw ValidationError("orthonormalize requires rows >= cols");
    if (!m.all_finite()) throw ValidationError("orthonormalize input contains non-finite entries");
    const std::size_t n = m.cols();
    Matrix q_t = m.transpose();
    double leading = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        auto v = q_t.row(j);
        project_out(v, q_t, j);
        const double pivot = norm2(v);
        if (j == 0) leading = pivot;
        if (pivot == 0.0 || pivot < 1e-12 * leading) {
            throw RankDeficiencyError("orthonormalize: column " + std::to_string(j) + " is linearly dependent");
        }
        for (double& x : v) x /= pivot;
    }
    return q_t.transpose();
}

Matrix extend_orthonormal(const Matrix& basis, const Matrix& candidates, std::size_t target_cols) {
    const std::size_t d = basis.rows();
    if (target_cols > d) throw ValidationError("cannot extend beyond the ambient dimension");
    if (!candidates.empty() && candidates.rows() != d) throw ValidationError("candidate dimension mismatch");
    if (target_cols <= basis.cols()) return basis.col_block(0, target_cols);

    Matrix q_t(target_cols, d);
    for (std::size_t j = 0; j < basis.cols(); ++j)
        for (std::size_t i = 0; i < d; ++i) q_t(j, i) = basis(i, j);

    const Matrix cand_t = candidates.transpose();
    std::vector<bool> used(cand_t.rows(), false);
    std::size_t filled = basis.cols();
    while (filled < target_cols) {
        Vector best;
        double best_norm = -1.0;
        std::size_t best_idx = 0;
        for (std::size_t c = 0; c < cand_t.rows(); ++c) {
            if (used[c]) continue;
            auto src = cand_t.row(c);
            Vector v(src.begin(), src.end());
            const double scale = norm2(v);
            if (scale == 0.0) continue;
            for (double& x : v) x /= scale;
            project_out(v, q_t, filled);
            const double nrm = norm2(v);
            if (nrm > best_norm) {
                best_norm = nrm;
                best = std::move(v);
                best_idx = c;
            }
        }
        if (best_norm < 1e-8) break;
        used[best_idx] = true;
        for (std::size_t i = 0; i < d; ++i) q_t(filled, i) = best[i] / best_norm;
        ++filled;
    }
    complete_rows(q_t, filled);
    return q_t.transpose();
}

Matrix cholesky(const Matrix& spd) {
    const std::size_t n = spd.rows();
    if (spd.cols() != n) throw ValidationError("cholesky requires a square matrix");
    Matrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double diag = spd(j, j);
        for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
        if (!(diag > 0.0)) throw NumericalError("cholesky: matrix is not positive definite");
        l(j, j) = std::sqrt(diag);
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = spd(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / l(j, j);
        }
    }
    return l;
}

Matrix gaussian_sample(std::span<const double> mu, const Matrix& cov, std::size_t count, std::uint64_t seed,
                       double ridge) {
    const std::size_t dim = mu.size();
    if (cov.rows() != dim || cov.cols() != dim) throw ValidationError("covariance shape does not match mean");
    if (!cov.all_finite()) throw ValidationError("covariance contains non-finite entries");
    for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = i + 1; j < dim; ++j)
            if (std::abs(cov(i, j) - cov(j, i)) > 1e-8) throw ValidationError("covariance is not symmetric");

    Matrix ridged = cov;
    for (std::size_t i = 0; i < dim; ++i) ridged(i, i) += ridge;
    const Matrix l = cholesky(ridged);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix out(count, dim);
    Vector z(dim);
    for (std::size_t s = 0; s < count; ++s) {
        for (double& v : z) v = normal(rng);
        auto row = out.row(s);
        for (std::size_t i = 0; i < dim; ++i) {
            double acc = mu[i];
            for (std::size_t k = 0; k <= i; ++k) acc += l(i, k) * z[k];
            row[i] = acc;
        }
    }
    return out;
}

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale) {
    std::normal_distribution<double> normal(0.0, scale);
    Matrix m(rows, cols);
    for (double& v : m.data()) v = normal(rng);
    return m;
}

}  // namespace e2lora
