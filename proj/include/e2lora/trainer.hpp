#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "e2lora/model.hpp"

namespace e2lora {

struct TrainConfig {
    double lr_lora = 0.0005;
    double lr_classifier = 0.01;
    std::size_t epochs = 5;
    std::size_t batch_size = 64;
    double lambda = 0.2;
    double temperature = 2.0;
    std::uint64_t seed = 0;
    std::size_t proxy_count = 16;

    void validate() const;
};

/// Classes already learned vs classes introduced by the current task.
struct ClassPartition {
    std::vector<int> old_classes;
    std::vector<int> new_classes;

    void validate() const;
};

/// One per-epoch training log line.
struct EpochRecord {
    int task = 0;
    std::size_t epoch = 0;
    double ce = 0.0;
    double kd = 0.0;
    double total = 0.0;
};

/// T² · KL(softmax(z_tea[old] / T) ‖ softmax(z_stu[old] / T)).
/// `old_positions` index into the logit vectors.
double distill_loss(std::span<const double> z_tea, std::span<const double> z_stu,
                    std::span<const std::size_t> old_positions, double temperature);

/// -log softmax(z_stu[new])[label], with `label_position` indexing z_stu.
double ce_loss(std::span<const double> z_stu, std::size_t label_position, std::span<const std::size_t> new_positions);

double total_loss(double ce, double kd, double lambda);

/// Gradients of the batch-mean loss w.r.t. the trainable parameters only:
/// the active task's `a` matrices and the trainable classifier head.
struct BatchGradients {
    /// One entry per layer; 0x0 when the layer has no active pair.
    std::vector<Matrix> adapter_a;
    Matrix head_weight;
    Vector head_bias;
    double ce = 0.0;  // batch mean
    double kd = 0.0;  // batch mean (0 when there are no old classes)
    double loss = 0.0;
};

/// Batch loss and gradients for rows `indices` of `data`. The teacher is the
/// same network with the active task's adapters masked out.
BatchGradients batch_gradients(const ContinualModel& model, const LabeledSet& data, std::span<const std::size_t> indices,
                               const ClassPartition& partition, double lambda, double temperature);

/// Batch loss only (used by finite differences).
double batch_loss(const ContinualModel& model, const LabeledSet& data, std::span<const std::size_t> indices,
                  const ClassPartition& partition, double lambda, double temperature);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch SGD on the active adapters' `a` and the trainable head.
///
/// New classes are appended to the trainable head if missing. Throws
/// DivergenceError on a non-finite batch loss.
ContinualModel train_task(ContinualModel model, const LabeledSet& data, const ClassPartition& partition,
                          const TrainConfig& cfg, const EpochCallback& on_epoch = {});

struct GradientCheckReport {
    double max_relative_deviation = 0.0;
    std::size_t checked_parameters = 0;
};

/// Compares batch_gradients against central differences (step 1e-5) on every
/// trainable scalar. Relative deviation uses max(|analytic|, |numeric|, 1e-6).
/// Teacher logits are held at their unperturbed values (they are targets).
GradientCheckReport analytic_gradient_check(const ContinualModel& model, const LabeledSet& batch,
                                            const ClassPartition& partition, const TrainConfig& cfg);

/// Input activations of each adapted layer on a seeded subsample of `data`
/// (without replacement, sorted by row index). Oversized requests are clamped.
std::vector<ProxyBatch> collect_proxy_features(const ContinualModel& model, const LabeledSet& data,
                                               std::size_t proxy_count, std::uint64_t seed, int task_id = 0);

}  // namespace e2lora
