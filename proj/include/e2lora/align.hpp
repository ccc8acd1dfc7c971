#pragma once

#include <cstdint>
#include <map>
#include <span>

#include "e2lora/model.hpp"

namespace e2lora {

/// Gaussian summary of one class's backbone features.
struct ClassStats {
    int class_id = 0;
    Vector mu;
    Matrix sigma_mat;
    std::size_t count = 0;
};

struct AlignConfig {
    std::size_t samples_per_class = 256;
    std::size_t epochs = 3;
    double lr = 0.01;
    std::uint64_t seed = 0;
    std::size_t batch_size = 64;

    void validate() const;
};

/// Per-class mean and covariance (denominator max(count - 1, 1)) of feature rows.
std::map<int, ClassStats> estimate_stats(const Matrix& features, std::span<const int> labels);

/// Fine-tunes only the trainable head on synthetic features drawn from `stats`.
///
/// Every class of the trainable head needs at least one stats entry. Several
/// entries may share a class id (one per domain); each contributes S samples.
ContinualModel align_classifier(ContinualModel model, std::span<const ClassStats> stats, const AlignConfig& cfg);

}  // namespace e2lora
