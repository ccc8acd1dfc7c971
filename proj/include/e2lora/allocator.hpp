#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "e2lora/lora.hpp"

namespace e2lora {

struct AllocConfig {
    /// Cumulative energy fraction every old task must keep.
    double rho = 0.9999;
    /// Rank given to the first task; empty means d_out (full rank).
    std::optional<std::size_t> first_task_rank_cap;

    void validate() const;
};

/// Per-layer budget of d_out orthonormal output directions shared by all tasks.
struct CapacityPool {
    struct Entry {
        int task_id = 0;
        std::size_t retained_rank = 0;
        /// Spectrum recorded at consolidation, full length.
        Vector sigma;
    };

    std::size_t d_out = 0;
    std::vector<Entry> entries;

    std::size_t total_retained() const;
    /// Throws StateError when an invariant is broken.
    void validate() const;
};

enum class AllocReason { threshold, uniform_fallback, padding };

std::string to_string(AllocReason reason);

/// One structured allocation log line.
struct AllocRecord {
    int task_id = 0;
    std::size_t kept = 0;
    std::size_t freed = 0;
    AllocReason reason = AllocReason::threshold;
};

/// A single rank removed by the uniform fallback.
struct Removal {
    int task_id = 0;
    std::size_t rank_index = 0;  // 0-based position inside the task's spectrum
    double energy = 0.0;         // sigma²
};

struct AllocationPlan {
    std::map<int, std::size_t> keep_ranks;
    std::size_t new_task_rank = 0;
    int new_task_id = 0;
    /// Ranks per task after the threshold phase, before the uniform fallback.
    std::map<int, std::size_t> threshold_ranks;
    std::vector<Removal> removals;
    std::vector<AllocRecord> records;
    /// False when even exhausting every old rank cannot reach ceil(d_out / t).
    bool min_rank_met = true;
};

/// Smallest r with (Σ_{i<r} σ_i²) / (Σ σ_i²) >= rho; 0 for an all-zero spectrum.
std::size_t retained_rank_for(std::span<const double> sigma, double rho);

/// ceil(d_out / t).
std::size_t min_rank(std::size_t d_out, std::size_t t);

/// Threshold pruning followed, if needed, by uniform removal of the globally
/// lowest-energy retained ranks (ties: older task first).
AllocationPlan plan_allocation(const CapacityPool& pool, int new_task_id, const AllocConfig& cfg);

/// Records a plan's keep ranks in the pool.
void commit_plan(CapacityPool& pool, const AllocationPlan& plan);

struct ApplyResult {
    std::vector<LoraPair> pairs;
    std::vector<DriftSpectrum> spectra;
    /// Released columns in task order, then complement padding.
    Matrix freed_basis;
    std::size_t padded_columns = 0;
};

/// Prunes every old pair to its planned rank and gathers the freed basis.
/// `pairs` and `spectra` must be in pool order.
ApplyResult apply_plan(std::span<const LoraPair> pairs, std::span<const DriftSpectrum> spectra,
                       const AllocationPlan& plan, std::size_t d_out);

/// Fresh adapter over a frozen freed basis with a = 0.
LoraPair init_new_task(const Matrix& freed_basis, std::size_t d_in, int task_id);

}  // namespace e2lora
