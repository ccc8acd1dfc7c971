#include <cmath>

#include <gtest/gtest.h>

#include "e2lora/align.hpp"
#include "e2lora/errors.hpp"
#include "e2lora/matcore.hpp"
#include "support.hpp"

using namespace e2lora;

namespace {

ClassStats make_stats(int id, Vector mu, double var) {
    ClassStats s;
    s.class_id = id;
    s.sigma_mat = Matrix::identity(mu.size()) * var;
    s.mu = std::move(mu);
    s.count = 100;
    return s;
}

// Fraction of fresh draws from each class that the trainable head labels correctly.
double head_accuracy(const ContinualModel& m, std::span<const ClassStats> stats, std::size_t per_class,
                     std::uint64_t seed) {
    const ClassifierHead& head = m.heads()[m.trainable_head()];
    std::size_t hit = 0, total = 0;
    for (std::size_t k = 0; k < stats.size(); ++k) {
        const Matrix draws = gaussian_sample(stats[k].mu, stats[k].sigma_mat, per_class, seed + k);
        for (std::size_t i = 0; i < draws.rows(); ++i) {
            const Vector z = m.head_logits(m.trainable_head(), draws.row(i));
            std::size_t best = 0;
            for (std::size_t c = 1; c < z.size(); ++c)
                if (z[c] > z[best]) best = c;
            hit += head.class_ids[best] == stats[k].class_id;
            ++total;
        }
    }
    return static_cast<double>(hit) / static_cast<double>(total);
}

ContinualModel small_model(std::vector<int> classes) {
    const std::size_t dims[] = {3, 4, 2};
    ContinualModel m = ContinualModel::random_backbone(dims, 5);
    m.add_head(std::move(classes));
    return m;
}

}  // namespace

TEST(EstimateStats, TwoPoints) {
    const auto s = estimate_stats(Matrix::from_rows({{0.0, 0.0}, {2.0, 0.0}}), std::vector<int>{4, 4});
    ASSERT_EQ(s.size(), 1u);
    const ClassStats& c = s.at(4);
    EXPECT_EQ(c.mu, (Vector{1.0, 0.0}));
    EXPECT_EQ(c.sigma_mat, Matrix::from_rows({{2.0, 0.0}, {0.0, 0.0}}));
    EXPECT_EQ(c.count, 2u);
}

TEST(EstimateStats, SingleSampleHasZeroCovariance) {
    const auto s = estimate_stats(Matrix::from_rows({{1.0, 2.0}, {3.0, -1.0}}), std::vector<int>{0, 1});
    EXPECT_EQ(s.at(0).mu, (Vector{1.0, 2.0}));
    EXPECT_EQ(s.at(0).sigma_mat, Matrix(2, 2));
    EXPECT_EQ(s.at(1).mu, (Vector{3.0, -1.0}));
}

TEST(EstimateStats, MomentRecovery) {
    const Matrix x = gaussian_sample(Vector{1.0, 2.0}, Matrix::from_rows({{4.0, 0.0}, {0.0, 1.0}}), 1000, 17, 0.0);
    const auto s = estimate_stats(x, std::vector<int>(1000, 3));
    const ClassStats& c = s.at(3);
    EXPECT_NEAR(c.mu[0], 1.0, 0.2);
    EXPECT_NEAR(c.mu[1], 2.0, 0.2);
    EXPECT_NEAR(c.sigma_mat(0, 0), 4.0, 0.5);
    EXPECT_NEAR(c.sigma_mat(1, 1), 1.0, 0.5);
    EXPECT_EQ(c.sigma_mat(0, 1), c.sigma_mat(1, 0));
    // Independent check with Eigen's unbiased covariance.
    const Eigen::MatrixXd e = testutil::to_eigen(x);
    const Eigen::MatrixXd centered = e.rowwise() - e.colwise().mean();
    const Eigen::MatrixXd cov = centered.transpose() * centered / 999.0;
    EXPECT_LT((cov - testutil::to_eigen(c.sigma_mat)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(EstimateStats, Errors) {
    EXPECT_THROW(estimate_stats(Matrix(0, 2), std::vector<int>{}), ValidationError);
    EXPECT_THROW(estimate_stats(Matrix(2, 2), std::vector<int>{1}), ValidationError);
}

TEST(AlignClassifier, ZeroEpochsUnchanged) {
    const ContinualModel m = small_model({0, 1});
    const std::vector<ClassStats> stats{make_stats(0, {1.0, 0.0}, 1.0), make_stats(1, {0.0, 1.0}, 1.0)};
    AlignConfig cfg;
    cfg.samples_per_class = 1;
    cfg.epochs = 0;
    const ContinualModel out = align_classifier(m, stats, cfg);
    EXPECT_EQ(out.heads()[0].weight, m.heads()[0].weight);
    EXPECT_EQ(out.heads()[0].bias, m.heads()[0].bias);
    cfg.samples_per_class = 0;
    EXPECT_THROW(align_classifier(m, stats, cfg), ValidationError);
}

TEST(AlignClassifier, SeparatedClasses) {
    const ContinualModel m = small_model({0, 1});
    const std::vector<ClassStats> stats{make_stats(0, {-5.0, 0.0}, 1.0), make_stats(1, {5.0, 0.0}, 1.0)};
    const ContinualModel out = align_classifier(m, stats, AlignConfig{});
    EXPECT_GE(head_accuracy(out, stats, 2000, 99), 0.99);
}

TEST(AlignClassifier, FixesRecencyBias) {
    ContinualModel m = small_model({0, 1, 2, 3});
    const std::vector<ClassStats> stats{make_stats(0, {-4.0, 0.0}, 1.0), make_stats(1, {0.0, -4.0}, 1.0),
                                        make_stats(2, {4.0, 0.0}, 1.0), make_stats(3, {0.0, 4.0}, 1.0)};
    // Head that only knows the task-2 classes and strongly prefers them.
    ClassifierHead& h = m.heads()[0];
    h.weight(2, 0) = 1.0;
    h.weight(3, 1) = 1.0;
    h.bias = {0.0, 0.0, 6.0, 6.0};
    const std::vector<ClassStats> old(stats.begin(), stats.begin() + 2);
    const double before = head_accuracy(m, old, 500, 7);
    AlignConfig cfg;
    cfg.lr = 0.1;
    cfg.epochs = 20;
    const ContinualModel out = align_classifier(m, stats, cfg);
    const double after = head_accuracy(out, old, 500, 7);
    EXPECT_GT(after, before);
    EXPECT_GE(after, 0.9);
}

TEST(AlignClassifier, TouchesOnlyTheClassifier) {
    ContinualModel m = small_model({0, 1});
    m.layers()[0].pairs.push_back(LoraPair(1, orthonormalize(testutil::random_matrix(4, 2, 3)),
                                           testutil::random_matrix(2, 3, 4)));
    const std::vector<ClassStats> stats{make_stats(0, {-1.0, 0.0}, 1.0), make_stats(1, {1.0, 0.0}, 1.0)};
    const ContinualModel out = align_classifier(m, stats, AlignConfig{});
    for (std::size_t l = 0; l < m.layers().size(); ++l) {
        EXPECT_EQ(out.layers()[l].weight, m.layers()[l].weight);
        EXPECT_EQ(out.layers()[l].bias, m.layers()[l].bias);
        EXPECT_EQ(out.layers()[l].pairs, m.layers()[l].pairs);
    }
    EXPECT_NE(out.heads()[0].weight, m.heads()[0].weight);
}

TEST(AlignClassifier, MissingStatsRejected) {
    const ContinualModel m = small_model({0, 1, 2});
    const std::vector<ClassStats> stats{make_stats(0, {1.0, 0.0}, 1.0), make_stats(1, {0.0, 1.0}, 1.0)};
    EXPECT_THROW(align_classifier(m, stats, AlignConfig{}), ValidationError);
    const std::vector<ClassStats> wrong_dim{make_stats(0, {1.0}, 1.0), make_stats(1, {0.0}, 1.0),
                                            make_stats(2, {0.0}, 1.0)};
    EXPECT_THROW(align_classifier(m, wrong_dim, AlignConfig{}), ValidationError);
}

TEST(AlignClassifier, Deterministic) {
    const ContinualModel m = small_model({0, 1});
    const std::vector<ClassStats> stats{make_stats(0, {-1.0, 0.5}, 0.5), make_stats(1, {1.0, 0.0}, 2.0)};
    AlignConfig cfg;
    cfg.seed = 42;
    EXPECT_EQ(align_classifier(m, stats, cfg).heads()[0].weight, align_classifier(m, stats, cfg).heads()[0].weight);
}
