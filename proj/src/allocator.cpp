#include "e2lora/allocator.hpp"

#include <cmath>

#include "e2lora/errors.hpp"
#include "e2lora/log.hpp"
#include "e2lora/matcore.hpp"

namespace e2lora {

void AllocConfig::validate() const {
    if (!(rho > 0.0 && rho < 1.0)) throw ValidationError("alloc.rho must lie in (0, 1)");
    if (first_task_rank_cap && *first_task_rank_cap == 0) {
        throw ValidationError("alloc.first_task_rank_cap must be >= 1");
    }
}

std::size_t CapacityPool::total_retained() const {
    std::size_t total = 0;
    for (const auto& e : entries) total += e.retained_rank;
    return total;
}

void CapacityPool::validate() const {
    if (d_out == 0) throw StateError("capacity pool has d_out = 0");
    if (total_retained() > d_out) throw StateError("capacity pool over budget");
    for (const auto& e : entries) {
        if (e.sigma.size() < e.retained_rank) {
            throw StateError("pool entry for task " + std::to_string(e.task_id) + " has fewer sigmas than ranks");
        }
        for (std::size_t i = 0; i + 1 < e.sigma.size(); ++i) {
            if (e.sigma[i] < e.sigma[i + 1]) {
                throw StateError("pool entry for task " + std::to_string(e.task_id) + " has an unsorted spectrum");
            }
        }
    }
}

std::string to_string(AllocReason reason) {
    switch (reason) {
        case AllocReason::threshold: return "threshold";
        case AllocReason::uniform_fallback: return "uniform-fallback";
        case AllocReason::padding: return "padding";
    }
    return "unknown";
}

std::size_t retained_rank_for(std::span<const double> sigma, double rho) {
    double total = 0.0;
    for (double s : sigma) {
        if (s < 0.0 || !std::isfinite(s)) throw ValidationError("singular values must be finite and non-negative");
        total += s * s;
    }
    if (total == 0.0) return 0;
    double cumulative = 0.0;
    for (std::size_t r = 0; r < sigma.size(); ++r) {
        cumulative += sigma[r] * sigma[r];
        if (cumulative / total >= rho) return r + 1;
    }
    return sigma.size();
}

std::size_t min_rank(std::size_t d_out, std::size_t t) {
    if (t == 0) throw ValidationError("task index is 1-based; t = 0 is invalid");
    return (d_out + t - 1) / t;
}

AllocationPlan plan_allocation(const CapacityPool& pool, int new_task_id, const AllocConfig& cfg) {
    cfg.validate();
    pool.validate();
    if (new_task_id != static_cast<int>(pool.entries.size()) + 1) {
        throw StateError("new task id " + std::to_string(new_task_id) + " does not follow " +
                         std::to_string(pool.entries.size()) + " pooled tasks");
    }

    AllocationPlan plan;
    plan.new_task_id = new_task_id;
    const std::size_t d_out = pool.d_out;

    if (pool.entries.empty()) {
        plan.new_task_rank = std::min(d_out, cfg.first_task_rank_cap.value_or(d_out));
        plan.records.push_back({new_task_id, plan.new_task_rank, 0, AllocReason::padding});
        return plan;
    }

    std::vector<std::size_t> keep(pool.entries.size());
    std::size_t kept_total = 0;
    for (std::size_t k = 0; k < pool.entries.size(); ++k) {
        const auto& e = pool.entries[k];
        keep[k] = std::min(retained_rank_for(e.sigma, cfg.rho), e.retained_rank);
        kept_total += keep[k];
        plan.threshold_ranks[e.task_id] = keep[k];
        plan.records.push_back({e.task_id, keep[k], e.retained_rank - keep[k], AllocReason::threshold});
    }

    const std::size_t need = min_rank(d_out, static_cast<std::size_t>(new_task_id));
    while (d_out - kept_total < need && kept_total > 0) {
        std::size_t victim = pool.entries.size();
        double lowest = 0.0;
        for (std::size_t k = 0; k < pool.entries.size(); ++k) {
            if (keep[k] == 0) continue;
            const double s = pool.entries[k].sigma[keep[k] - 1];
            const double energy = s * s;
            if (victim == pool.entries.size() || energy < lowest) {
                victim = k;
                lowest = energy;
            }
        }
        --keep[victim];
        --kept_total;
        plan.removals.push_back({pool.entries[victim].task_id, keep[victim], lowest});
    }

    for (std::size_t k = 0; k < pool.entries.size(); ++k) {
        const auto& e = pool.entries[k];
        plan.keep_ranks[e.task_id] = keep[k];
        const std::size_t after_threshold = plan.threshold_ranks[e.task_id];
        if (keep[k] < after_threshold) {
            plan.records.push_back({e.task_id, keep[k], after_threshold - keep[k], AllocReason::uniform_fallback});
        }
    }

    const std::size_t idle = d_out - pool.total_retained();
    plan.new_task_rank = d_out - kept_total;
    if (idle > 0) plan.records.push_back({new_task_id, plan.new_task_rank, idle, AllocReason::padding});
    if (plan.new_task_rank < need) {
        plan.min_rank_met = false;
        plan.new_task_rank = std::max<std::size_t>(1, plan.new_task_rank);
        warn("task " + std::to_string(new_task_id) + " receives rank " + std::to_string(plan.new_task_rank) +
             " below the minimum " + std::to_string(need));
    }
    return plan;
}

void commit_plan(CapacityPool& pool, const AllocationPlan& plan) {
    for (auto& e : pool.entries) {
        const auto it = plan.keep_ranks.find(e.task_id);
        if (it == plan.keep_ranks.end()) throw ValidationError("plan has no entry for task " + std::to_string(e.task_id));
        e.retained_rank = it->second;
    }
}

ApplyResult apply_plan(std::span<const LoraPair> pairs, std::span<const DriftSpectrum> spectra,
                       const AllocationPlan& plan, std::size_t d_out) {
    if (pairs.size() != spectra.size()) throw ValidationError("apply_plan: pair/spectrum count mismatch");
    if (pairs.size() != plan.keep_ranks.size()) throw ValidationError("apply_plan: plan does not cover every pair");

    ApplyResult out;
    std::vector<Matrix> freed_blocks;
    std::vector<Matrix> retained_blocks;
    std::size_t freed_cols = 0;
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        const auto& pair = pairs[k];
        if (pair.d_out() != d_out) throw ValidationError("apply_plan: pair d_out mismatch");
        const auto it = plan.keep_ranks.find(pair.task_id());
        if (it == plan.keep_ranks.end()) {
            throw ValidationError("apply_plan: no keep rank for task " + std::to_string(pair.task_id()));
        }
        TruncateResult t = truncate(pair, spectra[k], it->second);
        freed_cols += t.released.cols();
        retained_blocks.push_back(t.pair.b());
        freed_blocks.push_back(std::move(t.released));
        out.pairs.push_back(std::move(t.pair));
        out.spectra.push_back(std::move(t.spectrum));
    }
    if (freed_cols > plan.new_task_rank) {
        throw ValidationError("apply_plan: released more columns than the new task's rank");
    }

    Matrix freed = hcat(freed_blocks, d_out);
    if (freed_cols < plan.new_task_rank) {
        std::vector<Matrix> occupied = retained_blocks;
        occupied.push_back(freed);
        const Matrix used = hcat(occupied, d_out);
        const Matrix extended = extend_orthonormal(used, Matrix(), used.cols() + plan.new_task_rank - freed_cols);
        const Matrix padding = extended.col_block(used.cols(), plan.new_task_rank - freed_cols);
        out.padded_columns = padding.cols();
        const Matrix blocks[] = {freed, padding};
        freed = hcat(blocks, d_out);
    }
    out.freed_basis = std::move(freed);
    return out;
}

LoraPair init_new_task(const Matrix& freed_basis, std::size_t d_in, int task_id) {
    if (freed_basis.cols() == 0) throw ValidationError("a new task must receive rank >= 1");
    if (orthonormality_defect(freed_basis) > kOrthonormalStateTol) {
        throw ValidationError("freed basis is not orthonormal");
    }
    return LoraPair(task_id, freed_basis, Matrix(freed_basis.cols(), d_in), true);
}

}  // namespace e2lora
