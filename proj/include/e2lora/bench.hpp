#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "e2lora/align.hpp"
#include "e2lora/allocator.hpp"
#include "e2lora/model.hpp"
#include "e2lora/trainer.hpp"

namespace e2lora {

enum class StreamMode { class_incremental, domain_incremental };

std::string to_string(StreamMode mode);
StreamMode parse_stream_mode(const std::string& text);

struct Task {
    LabeledSet train;
    LabeledSet test;
    std::vector<int> class_ids;
    int domain = 0;
};

struct TaskStream {
    StreamMode mode = StreamMode::class_incremental;
    std::vector<Task> tasks;
    std::size_t feature_dim = 0;
    std::size_t total_classes = 0;
    std::uint64_t seed = 0;
};

struct StreamParams {
    std::size_t num_tasks = 5;
    std::size_t classes_per_task = 4;
    std::size_t feature_dim = 32;
    double separation = 8.0;
    std::uint64_t seed = 1;
    StreamMode mode = StreamMode::class_incremental;
    /// Samples drawn per class and domain before the 80/20 split.
    std::size_t samples_per_class = 100;

    void validate() const;
};

/// Gaussian-cluster task stream (unit covariance, means on a sphere of
/// radius `separation`). Domain-incremental streams share one class set and
/// rotate its means by a seeded orthogonal transform per task.
TaskStream make_synthetic_stream(const StreamParams& params);

struct MetricsReport {
    /// A_t in percent after each task.
    Vector per_step;
    double last_acc = 0.0;
    double inc_acc = 0.0;
};

MetricsReport make_report(Vector per_step);

/// Accuracy (percent) on the union of test sets of tasks 1..upto_task.
double evaluate(const ContinualModel& model, const TaskStream& stream, std::size_t upto_task);

/// Same as evaluate() but scoring with a single head only.
double evaluate_head(const ContinualModel& model, const TaskStream& stream, std::size_t upto_task, std::size_t head);

enum class Strategy { e2lora, naive_lora, joint };

std::string to_string(Strategy strategy);
Strategy parse_strategy(const std::string& text);

struct BackboneConfig {
    std::size_t hidden = 64;
    std::size_t feature_dim = 64;
};

struct SpectrumRecord {
    int task = 0;
    std::size_t layer = 0;
    std::size_t rank_index = 0;
    double sigma = 0.0;
};

struct AllocLogEntry {
    int task = 0;
    std::size_t layer = 0;
    AllocRecord record;
};

/// Per (task, layer) allocation outcome.
struct RankDecision {
    int task = 0;
    std::size_t layer = 0;
    std::size_t assigned_rank = 0;  // rank given to the task at allocation time
    std::size_t threshold_rank = 0;  // retained_rank_for(own spectrum, rho) at consolidation
    std::size_t min_rank = 0;
};

/// Called after allocation for every (task, layer), before training.
/// `before` is the layer's pool as the plan saw it; `layer_state` already
/// holds the pruned pairs and the new task's pair.
using AllocationObserver = std::function<void(int task, std::size_t layer, const CapacityPool& before,
                                              const AdaptedLayer& layer_state, const AllocationPlan& plan)>;

/// Called once a task is fully processed (after evaluation) with the model and
/// every class statistic stored so far.
using TaskEndObserver = std::function<void(int task, const ContinualModel& model, std::span<const ClassStats> stats)>;

struct RunOptions {
    TrainConfig train;
    AllocConfig alloc;
    AlignConfig align;
    BackboneConfig backbone;
    AllocationObserver on_allocation;
    TaskEndObserver on_task_end;
};

struct RunResult {
    MetricsReport report;
    std::vector<SpectrumRecord> spectra;
    std::vector<EpochRecord> train_log;
    std::vector<AllocLogEntry> alloc_log;
    std::vector<RankDecision> decisions;
    ContinualModel model;
};

/// Runs a whole stream with one strategy.
///
/// e2lora: allocate, train, energy-transform, align, evaluate per task.
/// naive_lora: one shared full-rank adapter trained task after task, no KD, no alignment.
/// joint: a single training pass over the pooled stream (report has one step).
RunResult run_continual(const TaskStream& stream, Strategy strategy, const RunOptions& options, std::uint64_t seed);

/// (i / r, Σ_{j<=i} σ_j² / Σ σ_j²) for i = 1..r.
std::vector<std::pair<double, double>> energy_curve(std::span<const double> sigma);

}  // namespace e2lora
