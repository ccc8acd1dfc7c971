#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>
#include <json.hpp>

#include "e2lora/errors.hpp"
#include "e2lora/matcore.hpp"
#include "e2lora/oracle.hpp"
#include "support.hpp"

using namespace e2lora;
using testutil::random_matrix;

namespace {

struct Transformed {
    LoraPair original;
    TransformResult t;
    ProxyBatch x;
};

Transformed transformed(std::size_t d_out, std::size_t r, std::size_t d_in, std::size_t n, std::uint64_t seed) {
    LoraPair p(1, random_matrix(d_out, r, seed), random_matrix(r, d_in, seed + 1));
    ProxyBatch x{random_matrix(d_in, n, seed + 2), 1};
    TransformResult t = energy_transform(p, x);
    return {std::move(p), std::move(t), std::move(x)};
}

bool all_pass(const std::vector<OracleReport>& reps) {
    for (const auto& r : reps)
        if (!r.pass) return false;
    return true;
}

}  // namespace

TEST(OracleReport, PassSemantics) {
    EXPECT_TRUE(make_oracle_report("x", "", 1.0 + 1e-7, 1.0, 1e-6).pass);
    EXPECT_FALSE(make_oracle_report("x", "", 1.0 + 1e-5, 1.0, 1e-6).pass);
    // Absolute floor below |reference| = 1.
    EXPECT_TRUE(make_oracle_report("x", "", 5e-7, 0.0, 1e-6).pass);
    EXPECT_TRUE(make_oracle_report("x", "", 1000.0005, 1000.0, 1e-6).pass);
}

TEST(OracleReport, Json) {
    OracleReport r = make_oracle_report("capacity", "task=2", 0.0, 0.0, 0.0);
    r.note = "ok";
    const auto j = nlohmann::json::parse(r.to_json());
    EXPECT_EQ(j["check"], "capacity");
    EXPECT_EQ(j["instance"], "task=2");
    EXPECT_EQ(j["pass"], true);
    EXPECT_EQ(j["note"], "ok");
    EXPECT_FALSE(j.contains("skipped"));
    EXPECT_EQ(r.to_json().find('\n'), std::string::npos);
}

TEST(TruncationIdentity, KeepAllAndNone) {
    const auto s = transformed(6, 4, 5, 10, 13);
    const auto all = check_truncation_identity(s.t.pair, s.t.spectrum, s.x, 4);
    EXPECT_TRUE(all.pass);
    EXPECT_EQ(all.reference, 0.0);
    const auto none = check_truncation_identity(s.t.pair, s.t.spectrum, s.x, 0);
    EXPECT_TRUE(none.pass);
    // r_keep = 0 leaves the whole drift: ‖ΔW X‖_F² computed by Eigen.
    const double full = (testutil::to_eigen(s.original.b()) * testutil::to_eigen(s.original.a()) *
                         testutil::to_eigen(s.x.features)).squaredNorm();
    EXPECT_NEAR(none.reference, full, 1e-9 * full);
}

TEST(TruncationIdentity, EveryRank) {
    const auto s = transformed(6, 4, 5, 10, 13);
    for (std::size_t k = 0; k <= 4; ++k) EXPECT_TRUE(check_truncation_identity(s.t.pair, s.t.spectrum, s.x, k).pass);
}

TEST(TruncationIdentity, DetectsWrongSpectrum) {
    auto s = transformed(6, 4, 5, 10, 21);
    s.t.spectrum.sigma[3] *= 1.5;
    EXPECT_FALSE(check_truncation_identity(s.t.pair, s.t.spectrum, s.x, 2).pass);
}

TEST(TruncationIdentity, Errors) {
    const auto s = transformed(6, 4, 5, 10, 13);
    EXPECT_THROW(check_truncation_identity(s.t.pair, s.t.spectrum, s.x, 5), ValidationError);
    EXPECT_THROW(check_truncation_identity(s.t.pair, s.t.spectrum, ProxyBatch{random_matrix(4, 10, 1), 1}, 1),
                 ValidationError);
    EXPECT_THROW(check_truncation_identity(s.t.pair, s.t.spectrum, ProxyBatch{random_matrix(5, 9, 1), 1}, 1),
                 ValidationError);
}

TEST(ProductPreservation, TransformPreserves) {
    const auto s = transformed(16, 8, 32, 50, 3);
    const auto r = check_product_preservation(s.original, s.t.pair, s.x);
    EXPECT_TRUE(r.pass) << r.measured;
}

TEST(ProductPreservation, DetectsSignFlip) {
    const auto s = transformed(8, 3, 6, 10, 4);
    Matrix b = s.t.pair.b();
    for (std::size_t i = 0; i < b.rows(); ++i) b(i, 0) = -b(i, 0);
    const LoraPair bad(1, b, s.t.pair.a());
    EXPECT_FALSE(check_product_preservation(s.original, bad, s.x).pass);
}

TEST(RankOptimality, ZeroTrialsVacuous) {
    const auto s = transformed(6, 3, 4, 10, 5);
    const auto r = check_rank_optimality(s.t.pair, s.x, 1, 0, 1);
    EXPECT_TRUE(r.pass);
    EXPECT_EQ(r.note, "no candidates");
}

TEST(RankOptimality, NoCandidateBeatsTruncation) {
    const auto s = transformed(8, 4, 8, 16, 6);
    for (std::size_t k = 1; k < 4; ++k) {
        const auto r = check_rank_optimality(s.t.pair, s.x, k, 500, 7 + k);
        EXPECT_TRUE(r.pass) << r.descriptor;
        EXPECT_EQ(r.measured, 0.0);
    }
}

TEST(RankOptimality, UntransformedPairLoses) {
    // Truncating a pair that is not in energy order is beaten by the search.
    const auto s = transformed(8, 4, 8, 16, 6);
    Matrix b = s.t.pair.b(), a = s.t.pair.a();
    const std::size_t last = 3;
    for (std::size_t i = 0; i < b.rows(); ++i) std::swap(b(i, 0), b(i, last));
    for (std::size_t j = 0; j < a.cols(); ++j) std::swap(a(0, j), a(last, j));
    const auto r = check_rank_optimality(LoraPair(1, b, a), s.x, 1, 500, 9);
    EXPECT_FALSE(r.pass);
}

TEST(RankOptimality, SizeLimits) {
    const auto s = transformed(16, 2, 4, 10, 1);
    EXPECT_THROW(check_rank_optimality(s.t.pair, s.x, 1, 10, 1), ValidationError);
}

TEST(CrossTaskOrthogonality, Cases) {
    const Matrix q = orthonormalize(random_matrix(10, 5, 2));
    const LoraPair p1(1, q.col_block(0, 3), random_matrix(3, 4, 3));
    const LoraPair p2(2, q.col_block(3, 2), random_matrix(2, 4, 4));
    EXPECT_TRUE(check_cross_task_orthogonality(std::span<const LoraPair>(&p1, 1)).pass);
    EXPECT_TRUE(check_cross_task_orthogonality(std::span<const LoraPair>(&p1, 1), p2).pass);
    const LoraPair dup(3, q.col_block(0, 1), random_matrix(1, 4, 5));
    const auto r = check_cross_task_orthogonality(std::span<const LoraPair>(&p1, 1), dup);
    EXPECT_FALSE(r.pass);
    EXPECT_NEAR(r.measured, 1.0, 1e-12);
    EXPECT_THROW(check_cross_task_orthogonality(std::span<const LoraPair>{}), ValidationError);
}

TEST(UniformPruning, NoRemovals) {
    CapacityPool pool{16, {{1, 4, {4.0, 3.0, 2.0, 1.0}}}};
    const auto plan = plan_allocation(pool, 2, AllocConfig{});
    EXPECT_TRUE(plan.removals.empty());
    EXPECT_TRUE(check_uniform_pruning(pool, plan).pass);
    EXPECT_TRUE(check_capacity(pool, plan).pass);
    EXPECT_TRUE(check_threshold_minimality(pool, plan, 0.9999).pass);
}

TEST(UniformPruning, SmallestEnergiesRemoved) {
    // d_out 3, two retained tasks: {5, 1} and {4, 2}; t = 3 needs one free slot.
    CapacityPool pool{4, {{1, 2, {5.0, 1.0}}, {2, 2, {4.0, 2.0}}}};
    const auto plan = plan_allocation(pool, 3, AllocConfig{});
    ASSERT_EQ(plan.removals.size(), 2u);
    EXPECT_EQ(plan.removals[0].energy, 1.0);
    EXPECT_EQ(plan.removals[1].energy, 4.0);
    EXPECT_TRUE(check_uniform_pruning(pool, plan).pass);
    EXPECT_TRUE(check_capacity(pool, plan).pass);
}

TEST(UniformPruning, DetectsSuboptimalPlan) {
    CapacityPool pool{4, {{1, 2, {5.0, 1.0}}, {2, 2, {4.0, 2.0}}}};
    AllocationPlan plan = plan_allocation(pool, 3, AllocConfig{});
    // Remove task 2's leading rank instead of task 1's tail.
    plan.keep_ranks[1] = 2;
    plan.keep_ranks[2] = 0;
    plan.removals = {{2, 1, 4.0}, {2, 0, 16.0}};
    EXPECT_FALSE(check_uniform_pruning(pool, plan).pass);
}

TEST(UniformPruning, TieRemovesOlderTaskFirst) {
    CapacityPool pool{2, {{1, 1, {3.0}}, {2, 1, {3.0}}}};
    const auto plan = plan_allocation(pool, 3, AllocConfig{});
    ASSERT_EQ(plan.removals.size(), 1u);
    EXPECT_EQ(plan.removals[0].task_id, 1);
    EXPECT_TRUE(check_uniform_pruning(pool, plan).pass);
}

TEST(Capacity, DetectsOverBudget) {
    CapacityPool pool{8, {{1, 4, {2.0, 1.0, 1.0, 1.0}}}};
    AllocationPlan plan = plan_allocation(pool, 2, AllocConfig{});
    plan.new_task_rank = 6;
    EXPECT_FALSE(check_capacity(pool, plan).pass);
    plan.new_task_rank = 3;
    EXPECT_FALSE(check_capacity(pool, plan).pass);
}

TEST(ThresholdMinimality, DetectsNonMinimal) {
    CapacityPool pool{16, {{1, 3, {10.0, 1e-6, 1e-6}}}};
    AllocationPlan plan = plan_allocation(pool, 2, AllocConfig{});
    EXPECT_TRUE(check_threshold_minimality(pool, plan, 0.9999).pass);
    plan.threshold_ranks[1] = 2;
    EXPECT_FALSE(check_threshold_minimality(pool, plan, 0.9999).pass);
}

TEST(Gradients, FixtureChecks) {
    const GradientFixture fx = make_gradient_fixture(3);
    TrainConfig cfg;
    const auto r = check_gradients(fx.model, fx.batch, fx.partition, cfg);
    EXPECT_TRUE(r.pass) << r.measured;
}

TEST(Grid, TwentyValidInstances) {
    const auto g = truncation_grid(0);
    ASSERT_EQ(g.size(), 20u);
    for (const auto& i : g) EXPECT_LE(i.rank, i.d_out);
    EXPECT_EQ(truncation_grid(5)[0].seed, truncation_grid(5)[0].seed);
    EXPECT_NE(truncation_grid(5)[0].seed, truncation_grid(6)[0].seed);
}

TEST(Suites, Names) {
    const auto names = suite_names();
    for (const char* n : {"truncation", "optimality", "orthogonality", "pruning", "gradients", "all"})
        EXPECT_NE(std::find(names.begin(), names.end(), n), names.end()) << n;
    EXPECT_THROW(run_suite("nope"), ValidationError);
    EXPECT_EQ(parse_fault("transform-sign"), Fault::transform_sign);
    EXPECT_THROW(parse_fault("bogus"), ValidationError);
}

TEST(Suites, TruncationPasses) {
    const auto reps = run_suite("truncation");
    EXPECT_GE(reps.size(), 20u);
    EXPECT_TRUE(all_pass(reps));
}

TEST(Suites, OptimalityPasses) { EXPECT_TRUE(all_pass(run_suite("optimality"))); }

TEST(Suites, GradientsPass) {
    const auto reps = run_suite("gradients");
    EXPECT_EQ(reps.size(), 10u);
    EXPECT_TRUE(all_pass(reps));
}

TEST(Suites, InjectedFaultIsCaught) {
    SuiteOptions o;
    o.fault = Fault::transform_sign;
    EXPECT_FALSE(all_pass(run_suite("truncation", o)));
}
