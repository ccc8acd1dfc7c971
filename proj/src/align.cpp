#include "e2lora/align.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "e2lora/errors.hpp"
#include "e2lora/matcore.hpp"

namespace e2lora {

void AlignConfig::validate() const {
    if (samples_per_class == 0) throw ValidationError("align.samples_per_class must be >= 1");
    if (!(lr > 0.0)) throw ValidationError("align.lr must be > 0");
    if (batch_size == 0) throw ValidationError("align.batch_size must be >= 1");
}

std::map<int, ClassStats> estimate_stats(const Matrix& features, std::span<const int> labels) {
    if (features.rows() != labels.size()) throw ValidationError("feature rows and label count differ");
    if (labels.empty()) throw ValidationError("cannot estimate statistics of an empty class set");
    const std::size_t dim = features.cols();

    std::map<int, ClassStats> stats;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        ClassStats& s = stats[labels[i]];
        if (s.count == 0) {
            s.class_id = labels[i];
            s.mu.assign(dim, 0.0);
            s.sigma_mat = Matrix(dim, dim);
        }
        ++s.count;
        auto row = features.row(i);
        for (std::size_t j = 0; j < dim; ++j) s.mu[j] += row[j];
    }
    for (auto& [id, s] : stats)
        for (double& m : s.mu) m /= static_cast<double>(s.count);

    Vector centered(dim);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        ClassStats& s = stats[labels[i]];
        auto row = features.row(i);
        for (std::size_t j = 0; j < dim; ++j) centered[j] = row[j] - s.mu[j];
        for (std::size_t a = 0; a < dim; ++a)
            for (std::size_t b = a; b < dim; ++b) s.sigma_mat(a, b) += centered[a] * centered[b];
    }
    for (auto& [id, s] : stats) {
        const double denom = static_cast<double>(std::max<std::size_t>(s.count - 1, 1));
        for (std::size_t a = 0; a < dim; ++a) {
            for (std::size_t b = a; b < dim; ++b) {
                s.sigma_mat(a, b) /= denom;
                s.sigma_mat(b, a) = s.sigma_mat(a, b);
            }
        }
    }
    return stats;
}

ContinualModel align_classifier(ContinualModel model, std::span<const ClassStats> stats, const AlignConfig& cfg) {
    cfg.validate();
    if (model.heads().empty()) throw StateError("model has no classifier head");
    ClassifierHead& head = model.heads()[model.trainable_head()];
    for (int c : head.class_ids) {
        const bool covered = std::any_of(stats.begin(), stats.end(), [c](const ClassStats& s) { return s.class_id == c; });
        if (!covered) throw ValidationError("missing statistics for class " + std::to_string(c));
    }
    if (cfg.epochs == 0) return model;

    const std::size_t dim = model.feature_dim();
    std::vector<Matrix> pools;
    std::vector<std::size_t> labels;  // head positions
    for (std::size_t k = 0; k < stats.size(); ++k) {
        const ClassStats& s = stats[k];
        if (!head.contains(s.class_id)) continue;
        if (s.mu.size() != dim) throw ValidationError("class statistics have the wrong feature dimension");
        pools.push_back(gaussian_sample(s.mu, s.sigma_mat, cfg.samples_per_class, cfg.seed * 1000003ULL + 7919ULL * (k + 1)));
        labels.insert(labels.end(), cfg.samples_per_class, head.position_of(s.class_id));
    }

    std::vector<const double*> rows;
    for (const Matrix& p : pools)
        for (std::size_t i = 0; i < p.rows(); ++i) rows.push_back(p.row(i).data());

    const std::size_t classes = head.class_ids.size();
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(rows.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Matrix grad_w(classes, dim);
    Vector grad_b(classes);
    Vector z(classes);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t len = std::min(cfg.batch_size, order.size() - start);
            const double weight = 1.0 / static_cast<double>(len);
            std::fill(grad_w.data().begin(), grad_w.data().end(), 0.0);
            std::fill(grad_b.begin(), grad_b.end(), 0.0);
            for (std::size_t s = start; s < start + len; ++s) {
                const std::span<const double> f(rows[order[s]], dim);
                double peak = -std::numeric_limits<double>::infinity();
                for (std::size_t c = 0; c < classes; ++c) {
                    z[c] = dot(head.weight.row(c), f) + head.bias[c];
                    peak = std::max(peak, z[c]);
                }
                double sum = 0.0;
                for (double& v : z) sum += (v = std::exp(v - peak));
                for (std::size_t c = 0; c < classes; ++c) {
                    const double g = weight * (z[c] / sum - (c == labels[order[s]] ? 1.0 : 0.0));
                    auto row = grad_w.row(c);
                    for (std::size_t j = 0; j < dim; ++j) row[j] += g * f[j];
                    grad_b[c] += g;
                }
            }
            for (std::size_t i = 0; i < head.weight.size(); ++i) head.weight.data()[i] -= cfg.lr * grad_w.data()[i];
            for (std::size_t c = 0; c < classes; ++c) head.bias[c] -= cfg.lr * grad_b[c];
        }
    }
    return model;
}

}  // namespace e2lora
