#include "e2lora/bench.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "e2lora/errors.hpp"
#include "e2lora/log.hpp"
#include "e2lora/matcore.hpp"

namespace e2lora {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Independent stream per (purpose, index) so that adding a draw in one place
// does not shift every other random sequence of the run.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index = 0) {
    return splitmix64(splitmix64(splitmix64(seed) ^ purpose) ^ index);
}

enum SeedPurpose : std::uint64_t {
    kClassMeans = 1,
    kSamples,
    kRotation,
    kBackbone,
    kFirstBasis,
    kTrainOrder,
    kProxy,
    kAlign,
};

Vector sphere_point(std::size_t dim, double radius, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector v(dim);
    double nrm = 0.0;
    while (nrm == 0.0) {
        for (double& x : v) x = normal(rng);
        nrm = norm2(v);
    }
    for (double& x : v) x *= radius / nrm;
    return v;
}

// Appends `count` unit-covariance draws around `mean` to train/test with an 80/20 split.
void draw_class(const Vector& mean, int label, std::size_t count, std::mt19937_64& rng, std::vector<double>& train_x,
                std::vector<int>& train_y, std::vector<double>& test_x, std::vector<int>& test_y) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t n_train = (count * 4 + 4) / 5;
    for (std::size_t s = 0; s < count; ++s) {
        auto& xs = s < n_train ? train_x : test_x;
        auto& ys = s < n_train ? train_y : test_y;
        for (double m : mean) xs.push_back(m + normal(rng));
        ys.push_back(label);
    }
}

LabeledSet make_set(std::vector<double> xs, std::vector<int> ys, std::size_t dim) {
    const std::size_t n = ys.size();
    return LabeledSet{Matrix(n, dim, std::move(xs)), std::move(ys)};
}

double accuracy_with(const ContinualModel& model, const TaskStream& stream, std::size_t upto_task,
                     const std::function<int(std::span<const double>)>& predict) {
    if (upto_task == 0 || upto_task > stream.tasks.size()) {
        throw ValidationError("upto_task " + std::to_string(upto_task) + " outside 1.." +
                              std::to_string(stream.tasks.size()));
    }
    (void)model;
    std::size_t correct = 0;
    std::size_t total = 0;
    for (std::size_t t = 0; t < upto_task; ++t) {
        const LabeledSet& test = stream.tasks[t].test;
        for (std::size_t i = 0; i < test.size(); ++i) {
            if (predict(test.x.row(i)) == test.labels[i]) ++correct;
            ++total;
        }
    }
    if (total == 0) return 0.0;
    return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

LabeledSet pooled_train(const TaskStream& stream) {
    std::vector<double> xs;
    std::vector<int> ys;
    for (const Task& t : stream.tasks) {
        xs.insert(xs.end(), t.train.x.data().begin(), t.train.x.data().end());
        ys.insert(ys.end(), t.train.labels.begin(), t.train.labels.end());
    }
    return make_set(std::move(xs), std::move(ys), stream.feature_dim);
}

std::vector<int> union_classes(const TaskStream& stream) {
    std::vector<int> ids;
    for (const Task& t : stream.tasks)
        for (int c : t.class_ids)
            if (std::find(ids.begin(), ids.end(), c) == ids.end()) ids.push_back(c);
    return ids;
}

ContinualModel fresh_model(const TaskStream& stream, const RunOptions& options, std::uint64_t seed) {
    const std::size_t dims[] = {stream.feature_dim, options.backbone.hidden, options.backbone.feature_dim};
    return ContinualModel::random_backbone(dims, derive_seed(seed, kBackbone));
}

// Single full-rank adapter per layer, active under task id 1.
void attach_shared_adapters(ContinualModel& model, std::uint64_t seed) {
    for (std::size_t l = 0; l < model.layers().size(); ++l) {
        AdaptedLayer& layer = model.layers()[l];
        std::mt19937_64 rng(derive_seed(seed, kFirstBasis, l));
        Matrix b = orthonormalize(gaussian_matrix(layer.d_out(), layer.d_out(), rng));
        layer.pairs.emplace_back(1, std::move(b), Matrix(layer.d_out(), layer.d_in()), true);
    }
    model.set_active_task(1);
}

TrainConfig task_train_config(const RunOptions& options, std::uint64_t seed, std::size_t task) {
    TrainConfig cfg = options.train;
    cfg.seed = derive_seed(seed ^ options.train.seed, kTrainOrder, task);
    return cfg;
}

RunResult run_e2lora(const TaskStream& stream, const RunOptions& options, std::uint64_t seed) {
    RunResult result;
    ContinualModel model = fresh_model(stream, options, seed);
    const bool dil = stream.mode == StreamMode::domain_incremental;
    std::vector<ClassStats> stored_stats;
    std::vector<int> seen_classes;
    Vector per_step;

    for (std::size_t ti = 0; ti < stream.tasks.size(); ++ti) {
        const Task& task = stream.tasks[ti];
        const int t = static_cast<int>(ti + 1);
        model.set_active_task(t);

        if (dil) {
            model.set_trainable_head(model.add_head(task.class_ids));
        } else if (model.heads().empty()) {
            model.add_head({});
        }

        // Phase 1: allocation.
        for (std::size_t l = 0; l < model.layers().size(); ++l) {
            AdaptedLayer& layer = model.layers()[l];
            const CapacityPool before = layer.pool;
            const AllocationPlan plan = plan_allocation(layer.pool, t, options.alloc);
            for (const AllocRecord& rec : plan.records) result.alloc_log.push_back({t, l, rec});
            if (t == 1) {
                std::mt19937_64 rng(derive_seed(seed, kFirstBasis, l));
                Matrix b = orthonormalize(gaussian_matrix(layer.d_out(), plan.new_task_rank, rng));
                layer.pairs.push_back(init_new_task(b, layer.d_in(), t));
            } else {
                ApplyResult applied = apply_plan(layer.pairs, layer.spectra, plan, layer.d_out());
                layer.pairs = std::move(applied.pairs);
                layer.spectra = std::move(applied.spectra);
                commit_plan(layer.pool, plan);
                layer.pairs.push_back(init_new_task(applied.freed_basis, layer.d_in(), t));
            }
            result.decisions.push_back(
                {t, l, layer.pairs.back().rank(), 0, min_rank(layer.d_out(), static_cast<std::size_t>(t))});
            if (options.on_allocation) options.on_allocation(t, l, before, layer, plan);
        }

        // Phase 2: training.
        ClassPartition partition;
        partition.new_classes = task.class_ids;
        if (!dil) partition.old_classes = seen_classes;
        model = train_task(std::move(model), task.train, partition, task_train_config(options, seed, ti),
                           [&](const EpochRecord& r) { result.train_log.push_back(r); });

        // Phase 3: energy-structured transformation.
        const std::vector<ProxyBatch> proxies =
            collect_proxy_features(model, task.train, options.train.proxy_count, derive_seed(seed, kProxy, ti), t);
        for (std::size_t l = 0; l < model.layers().size(); ++l) {
            AdaptedLayer& layer = model.layers()[l];
            TransformResult tr = energy_transform(layer.pairs.back(), proxies[l]);
            for (std::size_t i = 0; i < tr.spectrum.sigma.size(); ++i)
                result.spectra.push_back({t, l, i, tr.spectrum.sigma[i]});
            const std::size_t rank = tr.pair.rank();
            for (auto& d : result.decisions)
                if (d.task == t && d.layer == l) d.threshold_rank = retained_rank_for(tr.spectrum.sigma, options.alloc.rho);
            layer.pool.entries.push_back({t, rank, tr.spectrum.sigma});
            layer.pairs.back() = std::move(tr.pair);
            layer.spectra.push_back(std::move(tr.spectrum));
        }
        model.set_active_task(0);

        // Phase 4: classifier alignment on post-transform features.
        Matrix feats(task.train.size(), model.feature_dim());
        for (std::size_t i = 0; i < task.train.size(); ++i) {
            const Vector f = model.features(task.train.x.row(i));
            std::copy(f.begin(), f.end(), feats.row(i).begin());
        }
        for (auto& [id, s] : estimate_stats(feats, task.train.labels)) stored_stats.push_back(std::move(s));
        for (int c : task.class_ids)
            if (std::find(seen_classes.begin(), seen_classes.end(), c) == seen_classes.end()) seen_classes.push_back(c);
        AlignConfig align = options.align;
        align.seed = derive_seed(seed ^ options.align.seed, kAlign, ti);
        model = align_classifier(std::move(model), stored_stats, align);

        per_step.push_back(evaluate(model, stream, ti + 1));
        if (options.on_task_end) options.on_task_end(t, model, stored_stats);
    }
    result.report = make_report(std::move(per_step));
    result.model = std::move(model);
    return result;
}

RunResult run_naive(const TaskStream& stream, const RunOptions& options, std::uint64_t seed) {
    RunResult result;
    ContinualModel model = fresh_model(stream, options, seed);
    attach_shared_adapters(model, seed);
    const bool dil = stream.mode == StreamMode::domain_incremental;
    if (!dil) model.add_head({});
    Vector per_step;
    TrainConfig base = options.train;
    base.lambda = 0.0;
    RunOptions no_kd = options;
    no_kd.train = base;
    // Plain sequential fine-tuning: softmax over every class seen so far, so
    // old classes are pushed down by new-task data (recency bias).
    std::vector<int> seen;
    for (std::size_t ti = 0; ti < stream.tasks.size(); ++ti) {
        const Task& task = stream.tasks[ti];
        if (dil) {
            model.set_trainable_head(model.add_head(task.class_ids));
            seen.clear();
        }
        for (int c : task.class_ids)
            if (std::find(seen.begin(), seen.end(), c) == seen.end()) seen.push_back(c);
        ClassPartition partition;
        partition.new_classes = seen;
        model = train_task(std::move(model), task.train, partition, task_train_config(no_kd, seed, ti),
                           [&](const EpochRecord& r) {
                               EpochRecord rec = r;
                               rec.task = static_cast<int>(ti + 1);
                               result.train_log.push_back(rec);
                           });
        per_step.push_back(evaluate(model, stream, ti + 1));
        if (options.on_task_end) options.on_task_end(static_cast<int>(ti + 1), model, {});
    }
    model.set_active_task(0);
    result.report = make_report(std::move(per_step));
    result.model = std::move(model);
    return result;
}

RunResult run_joint(const TaskStream& stream, const RunOptions& options, std::uint64_t seed) {
    RunResult result;
    ContinualModel model = fresh_model(stream, options, seed);
    attach_shared_adapters(model, seed);
    const std::vector<int> classes = union_classes(stream);
    model.add_head(classes);
    ClassPartition partition;
    partition.new_classes = classes;
    TrainConfig cfg = task_train_config(options, seed, 0);
    cfg.lambda = 0.0;
    model = train_task(std::move(model), pooled_train(stream), partition, cfg,
                       [&](const EpochRecord& r) { result.train_log.push_back(r); });
    model.set_active_task(0);
    result.report = make_report({evaluate(model, stream, stream.tasks.size())});
    if (options.on_task_end) options.on_task_end(1, model, {});
    result.model = std::move(model);
    return result;
}

}  // namespace

std::string to_string(StreamMode mode) {
    return mode == StreamMode::class_incremental ? "class-incremental" : "domain-incremental";
}

StreamMode parse_stream_mode(const std::string& text) {
    if (text == "class-incremental" || text == "cil") return StreamMode::class_incremental;
    if (text == "domain-incremental" || text == "dil") return StreamMode::domain_incremental;
    throw ValidationError("unknown stream mode '" + text + "'");
}

std::string to_string(Strategy strategy) {
    switch (strategy) {
        case Strategy::e2lora: return "e2lora";
        case Strategy::naive_lora: return "naive_lora";
        case Strategy::joint: return "joint";
    }
    return "unknown";
}

Strategy parse_strategy(const std::string& text) {
    if (text == "e2lora") return Strategy::e2lora;
    if (text == "naive_lora") return Strategy::naive_lora;
    if (text == "joint") return Strategy::joint;
    throw ValidationError("unknown strategy '" + text + "'");
}

void StreamParams::validate() const {
    if (num_tasks < 1) throw ValidationError("stream.tasks must be >= 1");
    if (classes_per_task < 2) throw ValidationError("stream.classes_per_task must be >= 2");
    if (feature_dim < 1) throw ValidationError("stream.dim must be >= 1");
    if (!(separation >= 0.0) || !std::isfinite(separation)) throw ValidationError("stream.separation must be >= 0");
    if (samples_per_class < 2) throw ValidationError("stream.samples_per_class must be >= 2");
}

TaskStream make_synthetic_stream(const StreamParams& p) {
    p.validate();
    TaskStream stream;
    stream.mode = p.mode;
    stream.feature_dim = p.feature_dim;
    stream.seed = p.seed;

    std::mt19937_64 mean_rng(derive_seed(p.seed, kClassMeans));
    std::mt19937_64 sample_rng(derive_seed(p.seed, kSamples));

    if (p.mode == StreamMode::class_incremental) {
        stream.total_classes = p.num_tasks * p.classes_per_task;
        for (std::size_t t = 0; t < p.num_tasks; ++t) {
            Task task;
            task.domain = static_cast<int>(t);
            std::vector<double> trx, tex;
            std::vector<int> try_, tey;
            for (std::size_t c = 0; c < p.classes_per_task; ++c) {
                const int label = static_cast<int>(t * p.classes_per_task + c);
                task.class_ids.push_back(label);
                const Vector mean = sphere_point(p.feature_dim, p.separation, mean_rng);
                draw_class(mean, label, p.samples_per_class, sample_rng, trx, try_, tex, tey);
            }
            task.train = make_set(std::move(trx), std::move(try_), p.feature_dim);
            task.test = make_set(std::move(tex), std::move(tey), p.feature_dim);
            stream.tasks.push_back(std::move(task));
        }
        return stream;
    }

    stream.total_classes = p.classes_per_task;
    std::vector<Vector> base_means;
    for (std::size_t c = 0; c < p.classes_per_task; ++c) base_means.push_back(sphere_point(p.feature_dim, p.separation, mean_rng));
    for (std::size_t t = 0; t < p.num_tasks; ++t) {
        std::mt19937_64 rot_rng(derive_seed(p.seed, kRotation, t));
        const Matrix rotation = orthonormalize(gaussian_matrix(p.feature_dim, p.feature_dim, rot_rng));
        Task task;
        task.domain = static_cast<int>(t);
        std::vector<double> trx, tex;
        std::vector<int> try_, tey;
        for (std::size_t c = 0; c < p.classes_per_task; ++c) {
            const int label = static_cast<int>(c);
            task.class_ids.push_back(label);
            draw_class(matvec(rotation, base_means[c]), label, p.samples_per_class, sample_rng, trx, try_, tex, tey);
        }
        task.train = make_set(std::move(trx), std::move(try_), p.feature_dim);
        task.test = make_set(std::move(tex), std::move(tey), p.feature_dim);
        stream.tasks.push_back(std::move(task));
    }
    return stream;
}

MetricsReport make_report(Vector per_step) {
    MetricsReport r;
    if (!per_step.empty()) {
        r.last_acc = per_step.back();
        r.inc_acc = std::accumulate(per_step.begin(), per_step.end(), 0.0) / static_cast<double>(per_step.size());
    }
    r.per_step = std::move(per_step);
    return r;
}

double evaluate(const ContinualModel& model, const TaskStream& stream, std::size_t upto_task) {
    return accuracy_with(model, stream, upto_task, [&](std::span<const double> x) { return model.predict(x); });
}

double evaluate_head(const ContinualModel& model, const TaskStream& stream, std::size_t upto_task, std::size_t head) {
    const ClassifierHead& h = model.heads().at(head);
    return accuracy_with(model, stream, upto_task, [&](std::span<const double> x) {
        const Vector z = model.head_logits(head, model.features(x));
        return h.class_ids[static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin())];
    });
}

RunResult run_continual(const TaskStream& stream, Strategy strategy, const RunOptions& options, std::uint64_t seed) {
    options.train.validate();
    options.alloc.validate();
    options.align.validate();
    if (stream.tasks.empty()) throw ValidationError("stream has no tasks");
    if (options.backbone.hidden == 0 || options.backbone.feature_dim == 0) {
        throw ValidationError("backbone widths must be positive");
    }
    switch (strategy) {
        case Strategy::e2lora: return run_e2lora(stream, options, seed);
        case Strategy::naive_lora: return run_naive(stream, options, seed);
        case Strategy::joint: return run_joint(stream, options, seed);
    }
    throw ValidationError("unknown strategy");
}

std::vector<std::pair<double, double>> energy_curve(std::span<const double> sigma) {
    if (sigma.empty()) throw ValidationError("energy_curve needs a non-empty spectrum");
    double total = 0.0;
    for (double s : sigma) total += s * s;
    std::vector<std::pair<double, double>> curve;
    const double r = static_cast<double>(sigma.size());
    if (total == 0.0) {
        warn("energy_curve: all-zero spectrum");
        for (std::size_t i = 1; i <= sigma.size(); ++i) curve.emplace_back(static_cast<double>(i) / r, 0.0);
        return curve;
    }
    double cumulative = 0.0;
    for (std::size_t i = 0; i < sigma.size(); ++i) {
        cumulative += sigma[i] * sigma[i];
        curve.emplace_back(static_cast<double>(i + 1) / r, i + 1 == sigma.size() ? 1.0 : cumulative / total);
    }
    return curve;
}

}  // namespace e2lora
