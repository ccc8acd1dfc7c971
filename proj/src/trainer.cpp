#include "e2lora/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "e2lora/errors.hpp"
#include "e2lora/log.hpp"

namespace e2lora {

void TrainConfig::validate() const {
    if (!(lr_lora > 0.0)) throw ValidationError("train.lr_lora must be > 0");
    if (!(lr_classifier > 0.0)) throw ValidationError("train.lr_classifier must be > 0");
    if (!(temperature > 0.0)) throw ValidationError("train.temperature must be > 0");
    if (!(lambda >= 0.0)) throw ValidationError("train.lambda must be >= 0");
    if (batch_size == 0) throw ValidationError("train.batch_size must be >= 1");
    if (proxy_count == 0) throw ValidationError("train.proxy_count must be >= 1");
}

void ClassPartition::validate() const {
    for (int c : old_classes)
        if (std::find(new_classes.begin(), new_classes.end(), c) != new_classes.end())
            throw ValidationError("class " + std::to_string(c) + " is both old and new");
    if (new_classes.empty()) throw ValidationError("partition has no new classes");
}

namespace {

// log softmax(z[positions] / temperature), in the order of `positions`.
Vector log_softmax_subset(std::span<const double> z, std::span<const std::size_t> positions, double temperature) {
    Vector out(positions.size());
    if (out.empty()) return out;
    std::size_t top = 0;
    for (std::size_t i = 0; i < positions.size(); ++i) {
        out[i] = z[positions[i]] / temperature;
        if (out[i] > out[top]) top = i;
    }
    // log1p of the non-peak mass keeps tiny losses (confident predictions) accurate.
    const double peak = out[top];
    double rest = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (i != top) rest += std::exp(out[i] - peak);
    const double tail = std::log1p(rest);
    for (double& v : out) v = (v - peak) - tail;
    return out;
}

std::vector<std::size_t> positions_in(const ClassifierHead& head, std::span<const int> ids) {
    std::vector<std::size_t> pos;
    pos.reserve(ids.size());
    for (int c : ids) pos.push_back(head.position_of(c));
    return pos;
}

// The network as seen during one task: frozen weights materialized once,
// the active pair applied factor by factor.
struct TaskView {
    const ContinualModel& model;
    std::vector<Matrix> frozen;
    std::vector<const LoraPair*> active;

    explicit TaskView(const ContinualModel& m) : model(m) {
        for (std::size_t l = 0; l < m.layers().size(); ++l) {
            frozen.push_back(m.frozen_weight(l));
            active.push_back(m.active_pair(l));
        }
    }

    ForwardCache forward(std::span<const double> x, bool teacher) const {
        ForwardCache cache;
        Vector current(x.begin(), x.end());
        const std::size_t n_layers = frozen.size();
        for (std::size_t l = 0; l < n_layers; ++l) {
            cache.inputs.push_back(current);
            Vector out = matvec(frozen[l], current);
            const Vector& bias = model.layers()[l].bias;
            for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias[i];
            if (!teacher && active[l] != nullptr && active[l]->rank() > 0) {
                const Vector bax = matvec(active[l]->b(), matvec(active[l]->a(), current));
                for (std::size_t i = 0; i < out.size(); ++i) out[i] += bax[i];
            }
            cache.outputs.push_back(out);
            if (l + 1 < n_layers)
                for (double& v : out) v = std::max(v, 0.0);
            current = std::move(out);
        }
        cache.features = std::move(current);
        return cache;
    }
};

struct SampleTerms {
    double ce = 0.0;
    double kd = 0.0;
};

// Loss of one sample plus dLoss/dlogits (scaled by `weight`) added to `g`.
SampleTerms sample_loss(std::span<const double> z_stu, std::span<const double> z_tea, std::size_t label_pos,
                        std::span<const std::size_t> new_pos, std::span<const std::size_t> old_pos, double lambda,
                        double temperature, double weight, Vector* g) {
    SampleTerms terms;
    const Vector log_p = log_softmax_subset(z_stu, new_pos, 1.0);
    std::size_t label_idx = new_pos.size();
    for (std::size_t i = 0; i < new_pos.size(); ++i)
        if (new_pos[i] == label_pos) label_idx = i;
    if (label_idx == new_pos.size()) throw ValidationError("label is not among the new classes");
    terms.ce = -log_p[label_idx];
    if (g != nullptr) {
        for (std::size_t i = 0; i < new_pos.size(); ++i)
            (*g)[new_pos[i]] += weight * (std::exp(log_p[i]) - (i == label_idx ? 1.0 : 0.0));
    }
    if (!old_pos.empty()) {
        const Vector log_t = log_softmax_subset(z_tea, old_pos, temperature);
        const Vector log_s = log_softmax_subset(z_stu, old_pos, temperature);
        double kl = 0.0;
        for (std::size_t i = 0; i < old_pos.size(); ++i) kl += std::exp(log_t[i]) * (log_t[i] - log_s[i]);
        terms.kd = temperature * temperature * kl;
        if (g != nullptr && lambda != 0.0) {
            for (std::size_t i = 0; i < old_pos.size(); ++i)
                (*g)[old_pos[i]] += weight * lambda * temperature * (std::exp(log_s[i]) - std::exp(log_t[i]));
        }
    }
    return terms;
}

struct Positions {
    std::vector<std::size_t> old_pos;
    std::vector<std::size_t> new_pos;
};

Positions resolve_positions(const ContinualModel& model, const ClassPartition& partition) {
    const ClassifierHead& head = model.heads().at(model.trainable_head());
    return Positions{positions_in(head, partition.old_classes), positions_in(head, partition.new_classes)};
}

BatchGradients run_batch(const TaskView& view, const LabeledSet& data, std::span<const std::size_t> indices,
                         const ClassPartition& partition, const Positions& pos, double lambda, double temperature,
                         bool want_gradients, const std::vector<Vector>* fixed_teacher = nullptr) {
    const ContinualModel& model = view.model;
    const std::size_t head_idx = model.trainable_head();
    const ClassifierHead& head = model.heads().at(head_idx);
    const std::size_t n_layers = view.frozen.size();
    const double weight = 1.0 / static_cast<double>(indices.size());

    BatchGradients out;
    if (want_gradients) {
        for (std::size_t l = 0; l < n_layers; ++l)
            out.adapter_a.push_back(view.active[l] ? Matrix(view.active[l]->rank(), view.active[l]->d_in()) : Matrix());
        out.head_weight = Matrix(head.weight.rows(), head.weight.cols());
        out.head_bias.assign(head.bias.size(), 0.0);
    }

    Vector g(head.class_ids.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const std::size_t idx = indices[k];
        const int label = data.labels.at(idx);
        if (std::find(partition.new_classes.begin(), partition.new_classes.end(), label) ==
            partition.new_classes.end()) {
            throw ValidationError("sample label " + std::to_string(label) + " is not a new class of this task");
        }
        const auto x = data.x.row(idx);
        const ForwardCache student = view.forward(x, false);
        const Vector z_stu = model.head_logits(head_idx, student.features);
        Vector z_tea;
        if (!pos.old_pos.empty()) {
            z_tea = fixed_teacher ? (*fixed_teacher)[k] : model.head_logits(head_idx, view.forward(x, true).features);
        }

        std::fill(g.begin(), g.end(), 0.0);
        const SampleTerms terms = sample_loss(z_stu, z_tea, head.position_of(label), pos.new_pos, pos.old_pos, lambda,
                                              temperature, weight, want_gradients ? &g : nullptr);
        out.ce += weight * terms.ce;
        out.kd += weight * terms.kd;
        if (!want_gradients) continue;

        for (std::size_t c = 0; c < g.size(); ++c) {
            if (g[c] == 0.0) continue;
            auto row = out.head_weight.row(c);
            for (std::size_t j = 0; j < row.size(); ++j) row[j] += g[c] * student.features[j];
            out.head_bias[c] += g[c];
        }
        Vector g_out = matvec_t(head.weight, g);
        for (std::size_t l = n_layers; l-- > 0;) {
            if (l + 1 < n_layers) {
                const Vector& pre = student.outputs[l];
                for (std::size_t i = 0; i < g_out.size(); ++i)
                    if (pre[i] <= 0.0) g_out[i] = 0.0;
            }
            const LoraPair* pair = view.active[l];
            Vector bt_g;
            if (pair != nullptr && pair->rank() > 0) {
                bt_g = matvec_t(pair->b(), g_out);
                const Vector& input = student.inputs[l];
                Matrix& ga = out.adapter_a[l];
                for (std::size_t r = 0; r < bt_g.size(); ++r) {
                    if (bt_g[r] == 0.0) continue;
                    auto row = ga.row(r);
                    for (std::size_t j = 0; j < row.size(); ++j) row[j] += bt_g[r] * input[j];
                }
            }
            if (l == 0) break;
            Vector g_in = matvec_t(view.frozen[l], g_out);
            if (!bt_g.empty()) {
                const Vector extra = matvec_t(pair->a(), bt_g);
                for (std::size_t i = 0; i < g_in.size(); ++i) g_in[i] += extra[i];
            }
            g_out = std::move(g_in);
        }
    }
    out.loss = total_loss(out.ce, out.kd, lambda);
    return out;
}

}  // namespace

double distill_loss(std::span<const double> z_tea, std::span<const double> z_stu,
                    std::span<const std::size_t> old_positions, double temperature) {
    if (old_positions.empty()) throw ValidationError("distillation needs at least one old class");
    if (!(temperature > 0.0)) throw ValidationError("temperature must be > 0");
    if (z_tea.size() != z_stu.size()) throw ValidationError("teacher and student logits differ in length");
    for (std::size_t p : old_positions)
        if (p >= z_stu.size()) throw ValidationError("old-class position out of range");
    const Vector log_t = log_softmax_subset(z_tea, old_positions, temperature);
    const Vector log_s = log_softmax_subset(z_stu, old_positions, temperature);
    double kl = 0.0;
    for (std::size_t i = 0; i < log_t.size(); ++i) kl += std::exp(log_t[i]) * (log_t[i] - log_s[i]);
    return temperature * temperature * std::max(kl, 0.0);
}

double ce_loss(std::span<const double> z_stu, std::size_t label_position,
               std::span<const std::size_t> new_positions) {
    const auto it = std::find(new_positions.begin(), new_positions.end(), label_position);
    if (it == new_positions.end()) throw ValidationError("label is not among the new classes");
    for (std::size_t p : new_positions)
        if (p >= z_stu.size()) throw ValidationError("new-class position out of range");
    const Vector log_p = log_softmax_subset(z_stu, new_positions, 1.0);
    return -log_p[static_cast<std::size_t>(it - new_positions.begin())];
}

double total_loss(double ce, double kd, double lambda) { return ce + lambda * kd; }

BatchGradients batch_gradients(const ContinualModel& model, const LabeledSet& data, std::span<const std::size_t> indices,
                               const ClassPartition& partition, double lambda, double temperature) {
    if (indices.empty()) throw ValidationError("empty batch");
    const TaskView view(model);
    return run_batch(view, data, indices, partition, resolve_positions(model, partition), lambda, temperature, true);
}

double batch_loss(const ContinualModel& model, const LabeledSet& data, std::span<const std::size_t> indices,
                  const ClassPartition& partition, double lambda, double temperature) {
    if (indices.empty()) throw ValidationError("empty batch");
    const TaskView view(model);
    return run_batch(view, data, indices, partition, resolve_positions(model, partition), lambda, temperature, false)
        .loss;
}

ContinualModel train_task(ContinualModel model, const LabeledSet& data, const ClassPartition& partition,
                          const TrainConfig& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    partition.validate();
    if (data.size() == 0 || data.x.rows() != data.size()) throw ValidationError("training set is empty or ragged");
    if (model.heads().empty()) throw StateError("model has no classifier head");
    model.add_classes(model.trainable_head(), partition.new_classes);
    const Positions pos = resolve_positions(model, partition);
    const double lambda = pos.old_pos.empty() ? 0.0 : cfg.lambda;

    // Frozen weights do not change during the task; only the active `a` and the head do.
    TaskView view(model);
    std::vector<LoraPair*> active;
    for (std::size_t l = 0; l < model.layers().size(); ++l) active.push_back(model.active_pair(l));
    ClassifierHead& head = model.heads()[model.trainable_head()];

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double ce_sum = 0.0;
        double kd_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t len = std::min(cfg.batch_size, order.size() - start);
            const std::span<const std::size_t> batch(order.data() + start, len);
            const BatchGradients grads = run_batch(view, data, batch, partition, pos, lambda, cfg.temperature, true);
            if (!std::isfinite(grads.loss)) {
                throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                                          std::to_string(batches),
                                      active.empty() || active[0] == nullptr ? 0 : active[0]->task_id(),
                                      static_cast<int>(epoch + 1), batches);
            }
            for (std::size_t l = 0; l < active.size(); ++l) {
                if (active[l] == nullptr) continue;
                Matrix& a = active[l]->mutable_a();
                const Matrix& ga = grads.adapter_a[l];
                for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] -= cfg.lr_lora * ga.data()[i];
            }
            for (std::size_t i = 0; i < head.weight.size(); ++i)
                head.weight.data()[i] -= cfg.lr_classifier * grads.head_weight.data()[i];
            for (std::size_t i = 0; i < head.bias.size(); ++i) head.bias[i] -= cfg.lr_classifier * grads.head_bias[i];
            ce_sum += grads.ce;
            kd_sum += grads.kd;
            ++batches;
        }
        if (on_epoch) {
            EpochRecord rec;
            rec.task = model.active_task();
            rec.epoch = epoch + 1;
            rec.ce = ce_sum / static_cast<double>(batches);
            rec.kd = kd_sum / static_cast<double>(batches);
            rec.total = total_loss(rec.ce, rec.kd, lambda);
            on_epoch(rec);
        }
    }
    return model;
}

GradientCheckReport analytic_gradient_check(const ContinualModel& model, const LabeledSet& batch,
                                            const ClassPartition& partition, const TrainConfig& cfg) {
    std::vector<std::size_t> indices(batch.size());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    const BatchGradients analytic =
        batch_gradients(model, batch, indices, partition, cfg.lambda, cfg.temperature);

    // Teacher outputs are targets, not a function of the parameters: the
    // classifier is shared with the teacher, so a perturbation must not move them.
    const Positions pos = resolve_positions(model, partition);
    std::vector<Vector> teacher;
    {
        const TaskView view(model);
        for (std::size_t idx : indices)
            teacher.push_back(model.head_logits(model.trainable_head(), view.forward(batch.x.row(idx), true).features));
    }

    constexpr double kStep = 1e-5;
    GradientCheckReport report;
    ContinualModel probe = model;
    auto loss_at = [&] {
        const TaskView view(probe);
        return run_batch(view, batch, indices, partition, pos, cfg.lambda, cfg.temperature, false, &teacher).loss;
    };
    auto check = [&](double& param, double grad) {
        const double saved = param;
        param = saved + kStep;
        const double up = loss_at();
        param = saved - kStep;
        const double down = loss_at();
        param = saved;
        const double numeric = (up - down) / (2.0 * kStep);
        const double scale = std::max({std::abs(grad), std::abs(numeric), 1e-6});
        report.max_relative_deviation = std::max(report.max_relative_deviation, std::abs(grad - numeric) / scale);
        ++report.checked_parameters;
    };

    for (std::size_t l = 0; l < probe.layers().size(); ++l) {
        LoraPair* pair = probe.active_pair(l);
        if (pair == nullptr) continue;
        Matrix& a = pair->mutable_a();
        for (std::size_t i = 0; i < a.size(); ++i) check(a.data()[i], analytic.adapter_a[l].data()[i]);
    }
    ClassifierHead& head = probe.heads()[probe.trainable_head()];
    for (std::size_t i = 0; i < head.weight.size(); ++i) check(head.weight.data()[i], analytic.head_weight.data()[i]);
    for (std::size_t i = 0; i < head.bias.size(); ++i) check(head.bias[i], analytic.head_bias[i]);
    return report;
}

std::vector<ProxyBatch> collect_proxy_features(const ContinualModel& model, const LabeledSet& data,
                                               std::size_t proxy_count, std::uint64_t seed, int task_id) {
    if (data.size() == 0) throw ValidationError("cannot sample proxies from an empty set");
    if (proxy_count > data.size()) {
        warn("proxy_count " + std::to_string(proxy_count) + " exceeds dataset size " + std::to_string(data.size()) +
             "; clamping");
        proxy_count = data.size();
    }
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(proxy_count);
    std::sort(order.begin(), order.end());

    std::vector<ProxyBatch> batches;
    for (const auto& layer : model.layers()) batches.push_back(ProxyBatch{Matrix(layer.d_in(), proxy_count), task_id});
    for (std::size_t j = 0; j < proxy_count; ++j) {
        const ForwardCache cache = model.forward(data.x.row(order[j]));
        for (std::size_t l = 0; l < batches.size(); ++l) batches[l].features.set_col(j, cache.inputs[l]);
    }
    return batches;
}

}  // namespace e2lora
