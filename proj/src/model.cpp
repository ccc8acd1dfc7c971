#include "e2lora/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "e2lora/errors.hpp"
#include "e2lora/matcore.hpp"

namespace e2lora {

std::size_t ClassifierHead::position_of(int class_id) const {
    const auto it = std::find(class_ids.begin(), class_ids.end(), class_id);
    if (it == class_ids.end()) throw ValidationError("class " + std::to_string(class_id) + " is not in the head");
    return static_cast<std::size_t>(it - class_ids.begin());
}

bool ClassifierHead::contains(int class_id) const {
    return std::find(class_ids.begin(), class_ids.end(), class_id) != class_ids.end();
}

ContinualModel ContinualModel::random_backbone(std::span<const std::size_t> dims, std::uint64_t seed) {
    if (dims.size() < 2) throw ValidationError("backbone needs at least an input and an output width");
    std::mt19937_64 rng(seed);
    ContinualModel model;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        if (dims[l] == 0 || dims[l + 1] == 0) throw ValidationError("backbone widths must be positive");
        AdaptedLayer layer;
        layer.weight = gaussian_matrix(dims[l + 1], dims[l], rng, std::sqrt(2.0 / static_cast<double>(dims[l])));
        layer.bias.assign(dims[l + 1], 0.0);
        layer.pool.d_out = dims[l + 1];
        model.layers_.push_back(std::move(layer));
    }
    return model;
}

std::size_t ContinualModel::input_dim() const { return layers_.empty() ? 0 : layers_.front().d_in(); }
std::size_t ContinualModel::feature_dim() const { return layers_.empty() ? 0 : layers_.back().d_out(); }

std::size_t ContinualModel::add_head(std::vector<int> class_ids) {
    ClassifierHead head;
    head.weight = Matrix(class_ids.size(), feature_dim());
    head.bias.assign(class_ids.size(), 0.0);
    head.class_ids = std::move(class_ids);
    heads_.push_back(std::move(head));
    return heads_.size() - 1;
}

void ContinualModel::add_classes(std::size_t head_index, std::span<const int> class_ids) {
    ClassifierHead& head = heads_.at(head_index);
    std::vector<int> fresh;
    for (int c : class_ids)
        if (!head.contains(c) && std::find(fresh.begin(), fresh.end(), c) == fresh.end()) fresh.push_back(c);
    if (fresh.empty()) return;
    Matrix grown(head.weight.rows() + fresh.size(), feature_dim());
    std::copy(head.weight.data().begin(), head.weight.data().end(), grown.data().begin());
    head.weight = std::move(grown);
    head.bias.resize(head.bias.size() + fresh.size(), 0.0);
    head.class_ids.insert(head.class_ids.end(), fresh.begin(), fresh.end());
}

ForwardCache ContinualModel::forward(std::span<const double> x, bool mask_active) const {
    if (x.size() != input_dim()) throw ValidationError("input width does not match the backbone");
    ForwardCache cache;
    Vector current(x.begin(), x.end());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const AdaptedLayer& layer = layers_[l];
        cache.inputs.push_back(current);
        Vector out = matvec(layer.weight, current);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += layer.bias[i];
        for (const LoraPair& p : layer.pairs) {
            if (p.rank() == 0 || (mask_active && p.task_id() == active_task_)) continue;
            const Vector bax = matvec(p.b(), matvec(p.a(), current));
            for (std::size_t i = 0; i < out.size(); ++i) out[i] += bax[i];
        }
        cache.outputs.push_back(out);
        if (l + 1 < layers_.size()) {
            for (double& v : out) v = std::max(v, 0.0);
        }
        current = std::move(out);
    }
    cache.features = std::move(current);
    return cache;
}

Vector ContinualModel::features(std::span<const double> x, bool mask_active) const {
    return forward(x, mask_active).features;
}

Vector ContinualModel::head_logits(std::size_t head_index, std::span<const double> feats) const {
    const ClassifierHead& head = heads_.at(head_index);
    Vector z = matvec(head.weight, feats);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += head.bias[i];
    return z;
}

std::vector<int> ContinualModel::all_class_ids() const {
    std::vector<int> ids;
    for (const auto& h : heads_)
        for (int c : h.class_ids)
            if (std::find(ids.begin(), ids.end(), c) == ids.end()) ids.push_back(c);
    return ids;
}

Vector ContinualModel::aggregated_scores(std::span<const double> feats, double scale) const {
    const std::vector<int> ids = all_class_ids();
    Vector scores(ids.size(), 0.0);
    for (std::size_t h = 0; h < heads_.size(); ++h) {
        const Vector z = head_logits(h, feats);
        for (std::size_t i = 0; i < z.size(); ++i) {
            const auto pos = static_cast<std::size_t>(
                std::find(ids.begin(), ids.end(), heads_[h].class_ids[i]) - ids.begin());
            scores[pos] += scale * z[i];
        }
    }
    return scores;
}

int ContinualModel::predict(std::span<const double> x) const {
    if (heads_.empty()) throw StateError("model has no classifier head");
    const Vector scores = aggregated_scores(features(x));
    const std::vector<int> ids = all_class_ids();
    const auto best = std::max_element(scores.begin(), scores.end()) - scores.begin();
    return ids[static_cast<std::size_t>(best)];
}

Matrix ContinualModel::frozen_weight(std::size_t l) const {
    const AdaptedLayer& layer = layers_.at(l);
    Matrix w = layer.weight;
    for (const LoraPair& p : layer.pairs) {
        if (p.rank() == 0 || p.task_id() == active_task_) continue;
        w += delta(p);
    }
    return w;
}

const LoraPair* ContinualModel::active_pair(std::size_t l) const {
    for (const LoraPair& p : layers_.at(l).pairs)
        if (p.task_id() == active_task_ && active_task_ != 0) return &p;
    return nullptr;
}

LoraPair* ContinualModel::active_pair(std::size_t l) {
    for (LoraPair& p : layers_.at(l).pairs)
        if (p.task_id() == active_task_ && active_task_ != 0) return &p;
    return nullptr;
}

}  // namespace e2lora
