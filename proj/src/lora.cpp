#include "e2lora/lora.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "e2lora/errors.hpp"
#include "e2lora/matcore.hpp"

namespace e2lora {

LoraPair::LoraPair(int task_id, Matrix b, Matrix a, bool b_frozen)
    : task_id_(task_id), b_(std::move(b)), a_(std::move(a)), b_frozen_(b_frozen) {
    if (b_.cols() != a_.rows()) {
        throw ValidationError("LoRA pair rank mismatch: b has " + std::to_string(b_.cols()) + " columns, a has " +
                              std::to_string(a_.rows()) + " rows");
    }
    if (b_.rows() == 0 || a_.cols() == 0) throw ValidationError("LoRA pair needs d_out >= 1 and d_in >= 1");
    if (b_.cols() > b_.rows()) throw ValidationError("LoRA rank exceeds d_out");
    if (!b_.all_finite() || !a_.all_finite()) throw ValidationError("LoRA pair contains non-finite entries");
}

Matrix delta(const LoraPair& pair) {
    if (pair.rank() == 0) return Matrix(pair.d_out(), pair.d_in());
    return matmul(pair.b(), pair.a());
}

Matrix output_drift(const LoraPair& pair, const ProxyBatch& x) {
    if (x.features.rows() != pair.d_in()) {
        throw ValidationError("proxy batch has " + std::to_string(x.features.rows()) + " rows, adapter expects d_in " +
                              std::to_string(pair.d_in()));
    }
    if (pair.rank() == 0) return Matrix(pair.d_out(), x.count());
    return matmul(pair.b(), matmul(pair.a(), x.features));
}

namespace {

constexpr double kFactorPathTol = 1e-10;

// Largest-magnitude entry of every column made non-negative (lowest row wins ties).
void fix_column_signs(Matrix& u) {
    for (std::size_t j = 0; j < u.cols(); ++j) {
        std::size_t arg = 0;
        for (std::size_t i = 1; i < u.rows(); ++i)
            if (std::abs(u(i, j)) > std::abs(u(arg, j))) arg = i;
        if (u(arg, j) < 0.0)
            for (std::size_t i = 0; i < u.rows(); ++i) u(i, j) = -u(i, j);
    }
}

}  // namespace

TransformResult energy_transform(const LoraPair& pair, const ProxyBatch& x) {
    if (x.count() == 0) throw ValidationError("energy_transform needs at least one proxy sample");
    const std::size_t r = pair.rank();
    const std::size_t d_out = pair.d_out();
    if (r == 0) throw ValidationError("energy_transform on a rank-0 pair");

    // With orthonormal b, ΔY = b · (a X) has the singular values of the small
    // r x n factor and left vectors b · ũ. Going through the factor keeps every
    // u exactly inside span(b); a direct SVD of ΔY lets rounding leak
    // O(eps ‖ΔY‖ / σ_i) out of the span for tiny σ_i, which then shows up as
    // overlap with other tasks' bases.
    const bool orthonormal_b = orthonormality_defect(pair.b()) <= kFactorPathTol;
    SvdResult svd;
    if (orthonormal_b) {
        svd = thin_svd(matmul(pair.a(), x.features));
        svd.u = matmul(pair.b(), svd.u);
        fix_column_signs(svd.u);
    } else {
        svd = thin_svd(output_drift(pair, x));
    }
    const std::size_t k = svd.sigma.size();
    const double cutoff = static_cast<double>(std::max(d_out, x.count())) * std::numeric_limits<double>::epsilon() *
                          svd.sigma.front();

    std::size_t nonzero = 0;
    while (nonzero < std::min(r, k) && svd.sigma[nonzero] > cutoff) ++nonzero;

    const Matrix leading = svd.u.col_block(0, nonzero);
    Matrix b_new = extend_orthonormal(leading, pair.b(), r);

    Matrix a_new(r, pair.d_in());
    if (nonzero > 0) {
        const Matrix head = matmul(matmul_tn(leading, pair.b()), pair.a());
        std::copy(head.data().begin(), head.data().end(), a_new.data().begin());
    }

    DriftSpectrum spectrum;
    spectrum.task_id = pair.task_id();
    spectrum.u = b_new;
    spectrum.sigma.assign(r, 0.0);
    std::copy_n(svd.sigma.begin(), nonzero, spectrum.sigma.begin());
    spectrum.proxy_count = x.count();

    return TransformResult{LoraPair(pair.task_id(), std::move(b_new), std::move(a_new), pair.b_frozen()),
                           std::move(spectrum)};
}

TruncateResult truncate(const LoraPair& pair, const DriftSpectrum& spectrum, std::size_t r_keep) {
    const std::size_t r = pair.rank();
    if (r_keep > r) {
        throw ValidationError("cannot keep " + std::to_string(r_keep) + " ranks of a rank-" + std::to_string(r) +
                              " pair");
    }
    if (r > 0 && orthonormality_defect(pair.b()) > kOrthonormalStateTol) {
        throw StateError("truncate requires an energy-transformed pair (b must have orthonormal columns)");
    }
    if (spectrum.sigma.size() < r_keep) throw ValidationError("spectrum shorter than the retained rank");

    TruncateResult out;
    out.pair = LoraPair(pair.task_id(), pair.b().col_block(0, r_keep), pair.a().row_block(0, r_keep),
                        pair.b_frozen());
    out.released = pair.b().col_block(r_keep, r - r_keep);
    out.spectrum.task_id = spectrum.task_id;
    out.spectrum.sigma.assign(spectrum.sigma.begin(), spectrum.sigma.begin() + static_cast<std::ptrdiff_t>(r_keep));
    out.spectrum.u = spectrum.u.cols() >= r_keep ? spectrum.u.col_block(0, r_keep) : out.pair.b();
    out.spectrum.proxy_count = spectrum.proxy_count;
    return out;
}

Vector merged_forward(const Matrix& base, std::span<const LoraPair> pairs, std::span<const double> x) {
    if (base.cols() != x.size()) throw ValidationError("merged_forward: input length does not match base d_in");
    Vector y = matvec(base, x);
    for (const auto& p : pairs) {
        if (p.d_out() != base.rows() || p.d_in() != base.cols()) {
            throw ValidationError("merged_forward: adapter shape does not match base weight");
        }
        if (p.rank() == 0) continue;
        const Vector ax = matvec(p.a(), x);
        const Vector bax = matvec(p.b(), ax);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += bax[i];
    }
    return y;
}

}  // namespace e2lora
