#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "e2lora/allocator.hpp"
#include "e2lora/lora.hpp"
#include "e2lora/model.hpp"
#include "e2lora/trainer.hpp"

namespace e2lora {

// Brute-force validators. Everything here recomputes its reference with naive
// loops and does not call back into the SVD or the allocator's planning code.

struct OracleReport {
    std::string name;
    std::string descriptor;
    double measured = 0.0;
    double reference = 0.0;
    double tolerance = 0.0;
    bool pass = false;
    bool skipped = false;
    std::string note;

    /// Single-line JSON object.
    std::string to_json() const;
};

/// pass = |measured - reference| <= tolerance * max(1, |reference|).
OracleReport make_oracle_report(std::string name, std::string descriptor, double measured, double reference,
                                double tolerance);

/// Σ_j ‖(ΔW - ΔW^(r_keep)) x_j‖² vs Σ_{i>r_keep} σ_i², rtol 1e-6.
OracleReport check_truncation_identity(const LoraPair& pair, const DriftSpectrum& spectrum, const ProxyBatch& x,
                                       std::size_t r_keep);

/// ‖b'a'X - baX‖_F vs 0 with tolerance 1e-9 · max(1, ‖baX‖_F) (reported as a relative error).
OracleReport check_product_preservation(const LoraPair& original, const LoraPair& transformed, const ProxyBatch& x);

/// Σ_j ‖(ΔW - update) x_j‖² by naive loops.
double proxy_error(const Matrix& delta_w, const Matrix& update, const ProxyBatch& x);

/// Randomized search for a rank-r_keep update beating the truncated one on
/// the proxy set. measured = number of candidates below truncated - 1e-9.
/// Requires d_out <= 8 and n <= 16.
OracleReport check_rank_optimality(const LoraPair& pair, const ProxyBatch& x, std::size_t r_keep, std::size_t trials,
                                   std::uint64_t seed);

/// Max |off-diagonal| of the Gram matrix of all stacked b columns, tolerance 1e-8.
OracleReport check_cross_task_orthogonality(std::span<const LoraPair> retained, const LoraPair& new_pair);
OracleReport check_cross_task_orthogonality(std::span<const LoraPair> pairs);

/// Exhaustive audit of the uniform fallback: the plan's removed σ² multiset
/// must be the smallest possible among all removal sets of equal size.
/// Instances with more than 12 post-threshold ranks are skipped.
OracleReport check_uniform_pruning(const CapacityPool& pool, const AllocationPlan& plan);

/// Threshold ranks minimal for rho (clamped to the current rank), checked by direct summation.
OracleReport check_threshold_minimality(const CapacityPool& pool, const AllocationPlan& plan, double rho);

/// Capacity and minimum-rank guarantees of one allocation step.
OracleReport check_capacity(const CapacityPool& pool, const AllocationPlan& plan);

OracleReport check_gradients(const ContinualModel& model, const LabeledSet& batch, const ClassPartition& partition,
                             const TrainConfig& cfg);

/// Small two-layer model with one consolidated old task and an active task,
/// four classes (two old, two new) and a batch labeled with the new classes.
struct GradientFixture {
    ContinualModel model;
    LabeledSet batch;
    ClassPartition partition;
};
GradientFixture make_gradient_fixture(std::uint64_t seed);

/// Deliberate defects for negative-control runs of the suites.
enum class Fault { none, transform_sign };

Fault parse_fault(const std::string& text);

struct SuiteOptions {
    std::uint64_t seed = 0;
    Fault fault = Fault::none;
};

/// Suite names accepted by run_suite.
std::vector<std::string> suite_names();

/// Runs one battery ("truncation", "optimality", "orthogonality", "pruning",
/// "gradients" or "all") over its seeded instance grid.
std::vector<OracleReport> run_suite(const std::string& name, const SuiteOptions& options = {});

/// The (d_out, d_in, r, n) grid of the truncation suite: 20 of the 32 valid
/// combinations of d_out ∈ {4,16,64}, d_in ∈ {8,32}, r ∈ {2,4,8}, n ∈ {10,50}.
struct GridInstance {
    std::size_t d_out, d_in, rank, n;
    std::uint64_t seed;
};
std::vector<GridInstance> truncation_grid(std::uint64_t base_seed = 0);

/// Random (non-orthonormal) pair and proxy batch for a grid instance.
struct DriftInstance {
    LoraPair pair;
    ProxyBatch x;
};
DriftInstance make_drift_instance(const GridInstance& g);

}  // namespace e2lora
