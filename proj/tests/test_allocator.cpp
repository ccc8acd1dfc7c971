#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "e2lora/allocator.hpp"
#include "e2lora/errors.hpp"
#include "e2lora/log.hpp"
#include "e2lora/matcore.hpp"
#include "support.hpp"

using namespace e2lora;
using testutil::random_matrix;

namespace {

// Silences and counts warnings for the lifetime of the object.
struct CaptureWarnings {
    std::vector<std::string> seen;
    CaptureWarnings() {
        set_warning_sink([this](const std::string& m) { seen.push_back(m); });
    }
    ~CaptureWarnings() { set_warning_sink({}); }
};

Vector sorted_desc(Vector v) {
    std::sort(v.begin(), v.end(), std::greater<>());
    return v;
}

// Transformed pair with a controlled orthonormal basis inside a d_out pool.
struct Layer {
    std::vector<LoraPair> pairs;
    std::vector<DriftSpectrum> spectra;
    CapacityPool pool;
};

Layer two_task_layer() {
    Layer l;
    l.pool.d_out = 16;
    const Matrix basis = orthonormalize(random_matrix(16, 8, 77));
    for (int t = 1; t <= 2; ++t) {
        const Matrix b = basis.col_block((t - 1) * 4, 4);
        const LoraPair p(t, b, random_matrix(4, 6, 100 + t));
        const auto tr = energy_transform(p, ProxyBatch{random_matrix(6, 20, 200 + t), t});
        l.pairs.push_back(tr.pair);
        l.spectra.push_back(tr.spectrum);
        l.pool.entries.push_back({t, 4, tr.spectrum.sigma});
    }
    return l;
}

}  // namespace

TEST(RetainedRank, HandExamples) {
    EXPECT_EQ(retained_rank_for(Vector{1.0, 0.0, 0.0}, 0.9999), 1u);
    EXPECT_EQ(retained_rank_for(Vector{1.0, 1.0}, 0.6), 2u);
    EXPECT_EQ(retained_rank_for(Vector{0.0, 0.0}, 0.5), 0u);
    EXPECT_THROW(retained_rank_for(Vector{1.0, -0.5}, 0.5), ValidationError);
}

TEST(RetainedRank, GeometricAgainstExactArithmetic) {
    // σ_i = 2^-i, so σ_i² = 4^-i. Scaled by 4^9 every energy is an integer and
    // the cumulative comparison is exact in 64-bit integers.
    Vector sigma;
    for (int i = 0; i < 10; ++i) sigma.push_back(std::pow(0.5, i));
    std::uint64_t total = 0;
    std::vector<std::uint64_t> e;
    for (int i = 0; i < 10; ++i) e.push_back(std::uint64_t{1} << (2 * (9 - i))), total += e.back();
    // ratio >= 0.9999  <=>  10000 * cum >= 9999 * total
    std::size_t expected = 0;
    std::uint64_t cum = 0;
    for (std::size_t r = 0; r < 10; ++r) {
        cum += e[r];
        if (10000 * cum >= 9999 * total) {
            expected = r + 1;
            break;
        }
    }
    EXPECT_EQ(retained_rank_for(sigma, 0.9999), expected);
    EXPECT_EQ(expected, 7u);
}

TEST(MinRank, Ceiling) {
    EXPECT_EQ(min_rank(64, 1), 64u);
    EXPECT_EQ(min_rank(64, 10), 7u);
    EXPECT_EQ(min_rank(7, 3), 3u);
    EXPECT_THROW(min_rank(8, 0), ValidationError);
}

TEST(PlanAllocation, FirstTaskFullRank) {
    CapacityPool pool;
    pool.d_out = 32;
    AllocConfig cfg;
    cfg.first_task_rank_cap = 32;
    const auto plan = plan_allocation(pool, 1, cfg);
    EXPECT_EQ(plan.new_task_rank, 32u);
    EXPECT_TRUE(plan.keep_ranks.empty());
}

TEST(PlanAllocation, FirstTaskCap) {
    CapacityPool pool;
    pool.d_out = 32;
    AllocConfig cfg;
    cfg.first_task_rank_cap = 5;
    EXPECT_EQ(plan_allocation(pool, 1, cfg).new_task_rank, 5u);
}

TEST(PlanAllocation, ThresholdOnly) {
    CapacityPool pool;
    pool.d_out = 8;
    pool.entries.push_back({1, 2, {10.0, 1e-6}});
    const auto plan = plan_allocation(pool, 2, AllocConfig{});
    // 100 / (100 + 1e-12) >= 0.9999 at r = 1
    EXPECT_GE(100.0 / (100.0 + 1e-12), 0.9999);
    EXPECT_EQ(plan.keep_ranks.at(1), 1u);
    EXPECT_EQ(plan.new_task_rank, 7u);
    EXPECT_GE(plan.new_task_rank, min_rank(8, 2));
    EXPECT_TRUE(plan.removals.empty());
}

TEST(PlanAllocation, UniformFallbackMatchesExhaustiveMinimum) {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(0.5, 5.0);
    CapacityPool pool;
    pool.d_out = 32;
    for (int t = 1; t <= 3; ++t) {
        Vector s(10);
        for (auto& v : s) v = u(rng);
        pool.entries.push_back({t, 10, sorted_desc(s)});
    }
    AllocConfig cfg;
    cfg.rho = 0.9999;
    const auto plan = plan_allocation(pool, 4, cfg);
    for (int t = 1; t <= 3; ++t) EXPECT_EQ(plan.threshold_ranks.at(t), 10u);
    ASSERT_EQ(plan.removals.size(), 6u);
    EXPECT_EQ(plan.new_task_rank, 8u);

    // Oracle: the 6 smallest σ² among all 30 retained ranks.
    Vector all;
    for (const auto& e : pool.entries)
        for (double s : e.sigma) all.push_back(s * s);
    std::sort(all.begin(), all.end());
    Vector removed;
    for (const auto& r : plan.removals) removed.push_back(r.energy);
    std::sort(removed.begin(), removed.end());
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(removed[i], all[i]);

    std::size_t kept = 0;
    for (const auto& [id, k] : plan.keep_ranks) kept += k;
    EXPECT_EQ(kept + plan.new_task_rank, 32u);
}

TEST(PlanAllocation, TieBreakOlderTaskFirst) {
    CapacityPool pool;
    pool.d_out = 4;
    pool.entries.push_back({1, 2, {3.0, 1.0}});
    pool.entries.push_back({2, 2, {3.0, 1.0}});
    // t = 3 needs ceil(4/3) = 2, pool full: remove the two σ² = 1 ranks.
    AllocConfig cfg;
    cfg.rho = 0.99;
    const auto plan = plan_allocation(pool, 3, cfg);
    ASSERT_EQ(plan.removals.size(), 2u);
    EXPECT_EQ(plan.removals[0].task_id, 1);
    EXPECT_EQ(plan.removals[1].task_id, 2);
}

TEST(PlanAllocation, MinimumReachedByExhaustingOldRanks) {
    CaptureWarnings w;
    CapacityPool pool;
    pool.d_out = 2;
    pool.entries.push_back({1, 1, {1.0}});
    pool.entries.push_back({2, 1, {1.0}});
    AllocConfig cfg;
    cfg.rho = 0.5;
    const auto plan = plan_allocation(pool, 3, cfg);
    EXPECT_EQ(plan.new_task_rank, 1u);  // ceil(2/3) = 1 is met by removing one rank
    EXPECT_TRUE(plan.min_rank_met);

    CapacityPool tiny;
    tiny.d_out = 1;
    tiny.entries.push_back({1, 0, {}});
    const auto p2 = plan_allocation(tiny, 2, cfg);
    EXPECT_EQ(p2.new_task_rank, 1u);
    EXPECT_TRUE(p2.min_rank_met);
}

TEST(PlanAllocation, Errors) {
    CapacityPool pool;
    pool.d_out = 4;
    pool.entries.push_back({1, 3, {1.0, 2.0, 0.5}});  // unsorted
    EXPECT_THROW(plan_allocation(pool, 2, AllocConfig{}), StateError);
    pool.entries[0].sigma = {2.0, 1.0, 0.5};
    EXPECT_THROW(plan_allocation(pool, 3, AllocConfig{}), StateError);
    pool.entries[0].retained_rank = 5;
    EXPECT_THROW(plan_allocation(pool, 2, AllocConfig{}), StateError);
    AllocConfig bad;
    bad.rho = 1.0;
    EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(ApplyPlan, KeepEverythingPadsFromComplement) {
    Layer l = two_task_layer();
    AllocationPlan plan;
    plan.keep_ranks = {{1, 4}, {2, 4}};
    plan.new_task_rank = 8;
    const auto r = apply_plan(l.pairs, l.spectra, plan, 16);
    EXPECT_EQ(r.pairs[0], l.pairs[0]);
    EXPECT_EQ(r.pairs[1], l.pairs[1]);
    EXPECT_EQ(r.freed_basis.cols(), 8u);
    EXPECT_EQ(r.padded_columns, 8u);
}

TEST(ApplyPlan, DropWholeTask) {
    Layer l = two_task_layer();
    AllocationPlan plan;
    plan.keep_ranks = {{1, 0}, {2, 4}};
    plan.new_task_rank = 4;
    const auto r = apply_plan(l.pairs, l.spectra, plan, 16);
    EXPECT_EQ(delta(r.pairs[0]), Matrix(16, 6));
    EXPECT_EQ(r.freed_basis.col_block(0, 4), l.pairs[0].b());
}

TEST(ApplyPlan, FreedBasisOrthogonalToRetained) {
    Layer l = two_task_layer();
    AllocationPlan plan;
    plan.keep_ranks = {{1, 2}, {2, 3}};
    plan.new_task_rank = 11;
    const auto r = apply_plan(l.pairs, l.spectra, plan, 16);
    std::vector<Matrix> blocks{r.pairs[0].b(), r.pairs[1].b(), r.freed_basis};
    const Matrix all = hcat(blocks, 16);
    EXPECT_EQ(all.cols(), 16u);
    EXPECT_LT(testutil::gram_defect(all), 1e-8);
    // Released columns come first, in task order.
    EXPECT_EQ(r.freed_basis.col_block(0, 2), l.pairs[0].b().col_block(2, 2));
    EXPECT_EQ(r.freed_basis.col_block(2, 1), l.pairs[1].b().col_block(3, 1));

    const LoraPair fresh = init_new_task(r.freed_basis, 6, 3);
    const std::vector<Matrix> with_new{r.pairs[0].b(), r.pairs[1].b(), fresh.b()};
    EXPECT_LT(testutil::gram_defect(hcat(with_new, 16)), 1e-8);
}

TEST(ApplyPlan, Mismatch) {
    Layer l = two_task_layer();
    AllocationPlan plan;
    plan.keep_ranks = {{1, 2}};
    EXPECT_THROW(apply_plan(l.pairs, l.spectra, plan, 16), ValidationError);
    plan.keep_ranks = {{1, 2}, {2, 2}};
    plan.new_task_rank = 1;  // fewer than released
    EXPECT_THROW(apply_plan(l.pairs, l.spectra, plan, 16), ValidationError);
}

TEST(InitNewTask, Cases) {
    const Matrix slice = Matrix::identity(4);
    const LoraPair p = init_new_task(slice, 3, 2);
    EXPECT_EQ(p.b(), slice);
    EXPECT_EQ(p.a(), Matrix(4, 3));
    EXPECT_TRUE(p.b_frozen());
    EXPECT_THROW(init_new_task(Matrix(4, 0), 3, 2), ValidationError);
    EXPECT_THROW(init_new_task(random_matrix(4, 2, 1), 3, 2), ValidationError);
}

TEST(CommitPlan, UpdatesRetainedRanks) {
    Layer l = two_task_layer();
    AllocationPlan plan;
    plan.keep_ranks = {{1, 1}, {2, 3}};
    commit_plan(l.pool, plan);
    EXPECT_EQ(l.pool.entries[0].retained_rank, 1u);
    EXPECT_EQ(l.pool.total_retained(), 4u);
    plan.keep_ranks.erase(2);
    EXPECT_THROW(commit_plan(l.pool, plan), ValidationError);
}
