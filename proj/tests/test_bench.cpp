#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "e2lora/bench.hpp"
#include "e2lora/errors.hpp"
#include "e2lora/log.hpp"
#include "support.hpp"

using namespace e2lora;

namespace {

// One-hot least-squares linear classifier fit on the pooled training sets,
// test accuracy in percent. Independent of the library's trainer.
double direct_linear_accuracy(const TaskStream& s) {
    std::size_t n_train = 0, n_test = 0;
    for (const auto& t : s.tasks) n_train += t.train.size(), n_test += t.test.size();
    const std::size_t d = s.feature_dim, c = s.total_classes;
    Eigen::MatrixXd x(n_train, d + 1), y = Eigen::MatrixXd::Zero(n_train, c);
    std::size_t row = 0;
    for (const auto& t : s.tasks)
        for (std::size_t i = 0; i < t.train.size(); ++i, ++row) {
            for (std::size_t j = 0; j < d; ++j) x(row, j) = t.train.x(i, j);
            x(row, d) = 1.0;
            y(row, t.train.labels[i]) = 1.0;
        }
    const Eigen::MatrixXd w = x.colPivHouseholderQr().solve(y);
    std::size_t hit = 0;
    for (const auto& t : s.tasks)
        for (std::size_t i = 0; i < t.test.size(); ++i) {
            Eigen::RowVectorXd xi(d + 1);
            for (std::size_t j = 0; j < d; ++j) xi(j) = t.test.x(i, j);
            xi(d) = 1.0;
            Eigen::Index best;
            (xi * w).maxCoeff(&best);
            hit += static_cast<int>(best) == t.test.labels[i];
        }
    return 100.0 * static_cast<double>(hit) / static_cast<double>(n_test);
}

RunOptions quick_options() {
    RunOptions o;
    o.align.samples_per_class = 64;
    return o;
}

}  // namespace

TEST(SyntheticStream, ClassIncrementalStructure) {
    StreamParams p;
    p.num_tasks = 3;
    p.classes_per_task = 4;
    p.feature_dim = 8;
    p.samples_per_class = 50;
    const TaskStream s = make_synthetic_stream(p);
    ASSERT_EQ(s.tasks.size(), 3u);
    EXPECT_EQ(s.total_classes, 12u);
    std::set<int> seen;
    for (const auto& t : s.tasks) {
        for (int c : t.class_ids) EXPECT_TRUE(seen.insert(c).second);
        EXPECT_EQ(t.train.size(), 4u * 40u);
        EXPECT_EQ(t.test.size(), 4u * 10u);
        EXPECT_EQ(t.train.x.cols(), 8u);
    }
}

TEST(SyntheticStream, DomainIncrementalSharesClasses) {
    StreamParams p;
    p.num_tasks = 3;
    p.classes_per_task = 3;
    p.feature_dim = 6;
    p.mode = StreamMode::domain_incremental;
    const TaskStream s = make_synthetic_stream(p);
    EXPECT_EQ(s.total_classes, 3u);
    for (const auto& t : s.tasks) EXPECT_EQ(t.class_ids, s.tasks[0].class_ids);
    EXPECT_NE(s.tasks[0].train.x, s.tasks[1].train.x);
}

TEST(SyntheticStream, DeterministicPerSeed) {
    StreamParams p;
    p.num_tasks = 2;
    const TaskStream a = make_synthetic_stream(p), b = make_synthetic_stream(p);
    EXPECT_EQ(a.tasks[1].train.x, b.tasks[1].train.x);
    p.seed = 2;
    EXPECT_NE(make_synthetic_stream(p).tasks[1].train.x, a.tasks[1].train.x);
}

TEST(SyntheticStream, SeparationZeroIsChance) {
    StreamParams p;
    p.num_tasks = 2;
    p.classes_per_task = 2;
    p.feature_dim = 4;
    p.separation = 0.0;
    p.samples_per_class = 2000;
    const double acc = direct_linear_accuracy(make_synthetic_stream(p));
    EXPECT_NEAR(acc, 25.0, 5.0);
}

TEST(SyntheticStream, CanonicalStreamIsLinearlySeparable) {
    StreamParams p;  // 5 x 4 classes, dim 32, separation 8
    EXPECT_GE(direct_linear_accuracy(make_synthetic_stream(p)), 95.0);
}

TEST(SyntheticStream, Validation) {
    StreamParams p;
    p.classes_per_task = 1;
    EXPECT_THROW(make_synthetic_stream(p), ValidationError);
    p.classes_per_task = 2;
    p.num_tasks = 0;
    EXPECT_THROW(make_synthetic_stream(p), ValidationError);
    EXPECT_EQ(parse_stream_mode("dil"), StreamMode::domain_incremental);
    EXPECT_THROW(parse_stream_mode("task-incremental"), ValidationError);
    EXPECT_EQ(parse_strategy(to_string(Strategy::naive_lora)), Strategy::naive_lora);
    EXPECT_THROW(parse_strategy("ewc"), ValidationError);
}

TEST(MakeReport, IncAccArithmetic) {
    const MetricsReport r = make_report({93.1, 91.0, 90.2});
    EXPECT_NEAR(r.inc_acc, 91.43333333333333, 1e-12);
    EXPECT_EQ(r.last_acc, 90.2);
    EXPECT_NEAR(r.inc_acc * 3.0, 93.1 + 91.0 + 90.2, 1e-12);
}

TEST(Evaluate, RangeAndChance) {
    StreamParams p;
    p.num_tasks = 2;
    p.feature_dim = 6;
    p.samples_per_class = 500;
    const TaskStream s = make_synthetic_stream(p);
    const std::size_t dims[] = {6, 8, 8};
    ContinualModel m = ContinualModel::random_backbone(dims, 3);
    m.add_head({0, 1, 2, 3, 4, 5, 6, 7});
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 1e-3);
    for (auto& v : m.heads()[0].weight.data()) v = n(rng);
    EXPECT_THROW(evaluate(m, s, 0), ValidationError);
    EXPECT_THROW(evaluate(m, s, 3), ValidationError);
    const double acc = evaluate(m, s, 2);
    EXPECT_GE(acc, 0.0);
    EXPECT_LE(acc, 40.0);  // chance is 12.5
}

TEST(Evaluate, AggregationWithDuplicateHeads) {
    StreamParams p;
    p.num_tasks = 1;
    p.feature_dim = 5;
    const TaskStream s = make_synthetic_stream(p);
    const std::size_t dims[] = {5, 6, 6};
    ContinualModel one = ContinualModel::random_backbone(dims, 8);
    one.add_head({0, 1, 2, 3});
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& v : one.heads()[0].weight.data()) v = n(rng);
    ContinualModel two = one;
    two.heads().push_back(one.heads()[0]);
    for (std::size_t i = 0; i < s.tasks[0].test.size(); ++i) {
        const auto x = s.tasks[0].test.x.row(i);
        EXPECT_EQ(one.predict(x), two.predict(x));
    }
    EXPECT_EQ(evaluate(one, s, 1), evaluate(two, s, 1));
}

TEST(RunContinual, SingleTaskStrategiesAgree) {
    StreamParams p;
    p.num_tasks = 1;
    const TaskStream s = make_synthetic_stream(p);
    const RunOptions o = quick_options();
    const double e = run_continual(s, Strategy::e2lora, o, 1).report.last_acc;
    const double n = run_continual(s, Strategy::naive_lora, o, 1).report.last_acc;
    const double j = run_continual(s, Strategy::joint, o, 1).report.last_acc;
    EXPECT_LE(std::abs(e - n), 2.0);
    EXPECT_LE(std::abs(e - j), 2.0);
    EXPECT_LE(std::abs(n - j), 2.0);
}

TEST(RunContinual, E2loraBeatsNaiveOnSeparableStream) {
    const TaskStream s = make_synthetic_stream(StreamParams{});
    const RunOptions o = quick_options();
    const RunResult e = run_continual(s, Strategy::e2lora, o, 1);
    const RunResult n = run_continual(s, Strategy::naive_lora, o, 1);
    EXPECT_GE(e.report.last_acc - n.report.last_acc, 10.0);
    EXPECT_EQ(e.report.per_step.size(), 5u);
    EXPECT_NEAR(e.report.inc_acc * 5.0, std::accumulate(e.report.per_step.begin(), e.report.per_step.end(), 0.0),
                1e-12);
    for (double a : e.report.per_step) {
        EXPECT_GE(a, 0.0);
        EXPECT_LE(a, 100.0);
    }
}

TEST(RunContinual, RecordsSpectraAndDecisions) {
    StreamParams p;
    p.num_tasks = 3;
    const TaskStream s = make_synthetic_stream(p);
    std::vector<int> ended;
    RunOptions o = quick_options();
    o.on_task_end = [&](int t, const ContinualModel&, std::span<const ClassStats> stats) {
        ended.push_back(t);
        EXPECT_EQ(stats.size(), static_cast<std::size_t>(4 * t));
    };
    const RunResult r = run_continual(s, Strategy::e2lora, o, 5);
    EXPECT_EQ(ended, (std::vector<int>{1, 2, 3}));
    EXPECT_EQ(r.decisions.size(), 6u);
    std::set<int> tasks;
    for (const auto& rec : r.spectra) tasks.insert(rec.task);
    EXPECT_EQ(tasks.size(), 3u);
    for (const auto& d : r.decisions) EXPECT_GE(d.assigned_rank, d.min_rank);
    EXPECT_EQ(r.train_log.size(), 3u * o.train.epochs);
}

TEST(RunContinual, JointHasOneStep) {
    StreamParams p;
    p.num_tasks = 2;
    const RunResult r = run_continual(make_synthetic_stream(p), Strategy::joint, quick_options(), 1);
    EXPECT_EQ(r.report.per_step.size(), 1u);
}

TEST(RunContinual, InvalidConfigRejected) {
    RunOptions o = quick_options();
    o.train.temperature = 0.0;
    EXPECT_THROW(run_continual(make_synthetic_stream(StreamParams{}), Strategy::e2lora, o, 1), ValidationError);
    EXPECT_THROW(run_continual(TaskStream{}, Strategy::e2lora, quick_options(), 1), ValidationError);
}

TEST(EnergyCurve, Examples) {
    const auto one = energy_curve(Vector{1.0});
    ASSERT_EQ(one.size(), 1u);
    EXPECT_EQ(one[0], (std::pair<double, double>{1.0, 1.0}));
    const auto two = energy_curve(Vector{1.0, 1.0});
    EXPECT_EQ(two[0], (std::pair<double, double>{0.5, 0.5}));
    EXPECT_EQ(two[1], (std::pair<double, double>{1.0, 1.0}));
    EXPECT_THROW(energy_curve(Vector{}), ValidationError);
}

TEST(EnergyCurve, AllZeroWarns) {
    std::vector<std::string> w;
    set_warning_sink([&](const std::string& m) { w.push_back(m); });
    const auto c = energy_curve(Vector{0.0, 0.0, 0.0});
    set_warning_sink({});
    EXPECT_EQ(w.size(), 1u);
    for (const auto& [x, y] : c) EXPECT_EQ(y, 0.0);
}

TEST(EnergyCurve, ConcaveAndConcentratedOnRealRun) {
    StreamParams p;
    p.num_tasks = 2;
    const RunResult r = run_continual(make_synthetic_stream(p), Strategy::e2lora, quick_options(), 1);
    Vector sigma;
    for (const auto& rec : r.spectra)
        if (rec.task == 1 && rec.layer == 1) sigma.push_back(rec.sigma);
    ASSERT_FALSE(sigma.empty());
    const auto c = energy_curve(sigma);
    EXPECT_EQ(c.back().second, 1.0);
    for (std::size_t i = 1; i < c.size(); ++i) {
        EXPECT_GE(c[i].second, c[i - 1].second);
        const double step = c[i].second - c[i - 1].second;
        const double prev = i >= 2 ? c[i - 1].second - c[i - 2].second : c[0].second;
        EXPECT_LE(step, prev + 1e-12);
    }
    // Uniform spectrum of the same total energy puts 1/r in the first rank.
    EXPECT_GT(c[0].second, 1.0 / static_cast<double>(sigma.size()));
}
