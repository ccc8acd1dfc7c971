#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "e2lora/allocator.hpp"
#include "e2lora/lora.hpp"
#include "e2lora/matrix.hpp"

namespace e2lora {

/// Labeled samples, one per row of `x`.
struct LabeledSet {
    Matrix x;
    std::vector<int> labels;

    std::size_t size() const noexcept { return labels.size(); }
};

/// A frozen linear layer with its adapters and capacity bookkeeping.
struct AdaptedLayer {
    Matrix weight;  // d_out x d_in, never modified after construction
    Vector bias;
    std::vector<LoraPair> pairs;
    /// Consolidated spectra, parallel to `pairs` for pairs already transformed.
    std::vector<DriftSpectrum> spectra;
    CapacityPool pool;

    std::size_t d_out() const noexcept { return weight.rows(); }
    std::size_t d_in() const noexcept { return weight.cols(); }
};

/// Linear classifier over an ordered list of class ids.
struct ClassifierHead {
    Matrix weight;  // classes x feature_dim
    Vector bias;
    std::vector<int> class_ids;

    std::size_t position_of(int class_id) const;  // throws if absent
    bool contains(int class_id) const;
};

struct ForwardCache {
    /// Input of each adapted layer.
    std::vector<Vector> inputs;
    /// Pre-activation output of each layer.
    std::vector<Vector> outputs;
    Vector features;
};

/// Frozen random backbone (linear layers with rectifiers in between), LoRA
/// adapters on every linear layer and one or more classifier heads.
///
/// Class-incremental runs use a single growing head; domain-incremental runs
/// add one head per domain and sum head scores at inference.
class ContinualModel {
public:
    ContinualModel() = default;

    /// He-initialized backbone with layer widths dims[0] -> dims[1] -> ... and zero biases.
    static ContinualModel random_backbone(std::span<const std::size_t> dims, std::uint64_t seed);

    std::vector<AdaptedLayer>& layers() noexcept { return layers_; }
    const std::vector<AdaptedLayer>& layers() const noexcept { return layers_; }
    std::vector<ClassifierHead>& heads() noexcept { return heads_; }
    const std::vector<ClassifierHead>& heads() const noexcept { return heads_; }

    std::size_t input_dim() const;
    std::size_t feature_dim() const;

    /// Task whose adapters receive gradients; 0 means none.
    int active_task() const noexcept { return active_task_; }
    void set_active_task(int task) noexcept { active_task_ = task; }
    /// Head that receives gradients during training and alignment.
    std::size_t trainable_head() const noexcept { return trainable_head_; }
    void set_trainable_head(std::size_t h) noexcept { trainable_head_ = h; }

    /// Appends a zero-initialized head and returns its index.
    std::size_t add_head(std::vector<int> class_ids);
    /// Appends zero rows for class ids the head does not yet cover.
    void add_classes(std::size_t head, std::span<const int> class_ids);

    /// Backbone output. With `mask_active` the active task's adapters are skipped.
    Vector features(std::span<const double> x, bool mask_active = false) const;
    ForwardCache forward(std::span<const double> x, bool mask_active = false) const;

    Vector head_logits(std::size_t head, std::span<const double> features) const;

    /// Class ids scored by `predict`, the union over all heads in first-seen order.
    std::vector<int> all_class_ids() const;
    /// Scores over all_class_ids(); each class sums the scores of every head that has it.
    Vector aggregated_scores(std::span<const double> features, double scale = 1.0) const;
    int predict(std::span<const double> x) const;

    /// Base weight plus every non-active adapter, materialized.
    Matrix frozen_weight(std::size_t layer) const;
    /// The active task's pair in `layer`, or nullptr.
    const LoraPair* active_pair(std::size_t layer) const;
    LoraPair* active_pair(std::size_t layer);

private:
    std::vector<AdaptedLayer> layers_;
    std::vector<ClassifierHead> heads_;
    int active_task_ = 0;
    std::size_t trainable_head_ = 0;
};

}  // namespace e2lora
