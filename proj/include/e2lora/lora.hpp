#pragma once

#include <span>

#include "e2lora/matrix.hpp"

namespace e2lora {

/// One task's low-rank update ΔW = b · a, with b (d_out x r) and a (r x d_in).
///
/// A rank-0 pair is legal: it is what pruning leaves behind when every
/// direction of a task has been released.
class LoraPair {
public:
    LoraPair() = default;
    LoraPair(int task_id, Matrix b, Matrix a, bool b_frozen = true);

    int task_id() const noexcept { return task_id_; }
    const Matrix& b() const noexcept { return b_; }
    const Matrix& a() const noexcept { return a_; }
    Matrix& mutable_a() noexcept { return a_; }
    bool b_frozen() const noexcept { return b_frozen_; }
    void set_b_frozen(bool frozen) noexcept { b_frozen_ = frozen; }

    std::size_t rank() const noexcept { return b_.cols(); }
    std::size_t d_out() const noexcept { return b_.rows(); }
    std::size_t d_in() const noexcept { return a_.cols(); }

    friend bool operator==(const LoraPair&, const LoraPair&) = default;

private:
    int task_id_ = 0;
    Matrix b_;
    Matrix a_;
    bool b_frozen_ = true;
};

/// Left singular basis and singular values of a task's output drift ΔY.
/// Singular values are raw (not divided by the proxy count).
struct DriftSpectrum {
    int task_id = 0;
    Matrix u;
    Vector sigma;
    std::size_t proxy_count = 0;

    friend bool operator==(const DriftSpectrum&, const DriftSpectrum&) = default;
};

/// Layer-input activations, one sample per column (d_in x n).
struct ProxyBatch {
    Matrix features;
    int source_task = 0;

    std::size_t count() const noexcept { return features.cols(); }
};

struct TransformResult {
    LoraPair pair;
    DriftSpectrum spectrum;
};

struct TruncateResult {
    LoraPair pair;
    /// Released basis columns b[:, r_keep:], available for reuse.
    Matrix released;
    DriftSpectrum spectrum;
};

Matrix delta(const LoraPair& pair);

/// ΔY = b · a · X (d_out x n).
Matrix output_drift(const LoraPair& pair, const ProxyBatch& x);

/// Re-expresses the pair in the left singular basis of its output drift.
///
/// b' = U[:, :r] and a' = U[:, :r]ᵀ · b · a, so rank i of the result carries
/// drift energy sigma_i² and ranks come out sorted by energy. Directions with
/// numerically zero singular value are completed inside span(b) and get
/// exactly-zero rows in a'. The returned pair keeps b's freeze flag.
/// When b already has orthonormal columns the SVD is taken of the r x n factor
/// a·X (same singular values, u = b·ũ), which keeps u inside span(b).
TransformResult energy_transform(const LoraPair& pair, const ProxyBatch& x);

/// Keeps the leading r_keep ranks of an energy-transformed pair.
TruncateResult truncate(const LoraPair& pair, const DriftSpectrum& spectrum, std::size_t r_keep);

/// (W_0 + Σ b_t a_t) · x evaluated factor by factor.
Vector merged_forward(const Matrix& base, std::span<const LoraPair> pairs, std::span<const double> x);

/// Tolerance on bᵀb - I for operations that require a transformed pair.
inline constexpr double kOrthonormalStateTol = 1e-6;

}  // namespace e2lora
