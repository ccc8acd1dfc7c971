#include "e2lora/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <random>

#include <json.hpp>

#include "e2lora/bench.hpp"
#include "e2lora/errors.hpp"
#include "e2lora/matcore.hpp"

namespace e2lora {

namespace {

constexpr double kTruncationRtol = 1e-6;
constexpr double kPreservationRtol = 1e-9;
constexpr double kOptimalityMargin = 1e-9;
constexpr double kOrthogonalityTol = 1e-8;
constexpr double kGradientTol = 1e-4;
constexpr std::size_t kPruningEnumerationLimit = 12;

std::string fmt(const char* pattern, auto... args) {
    char buf[256];
    std::snprintf(buf, sizeof buf, pattern, args...);
    return buf;
}

// Σ_{i in [first, last)} b[:, i] a[i, :], by explicit loops.
Matrix naive_product(const LoraPair& pair, std::size_t first, std::size_t last) {
    Matrix out(pair.d_out(), pair.d_in());
    for (std::size_t r = 0; r < pair.d_out(); ++r)
        for (std::size_t c = 0; c < pair.d_in(); ++c) {
            double s = 0.0;
            for (std::size_t i = first; i < last; ++i) s += pair.b()(r, i) * pair.a()(i, c);
            out(r, c) = s;
        }
    return out;
}

Matrix naive_mul(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            out(i, j) = s;
        }
    return out;
}

// Modified Gram-Schmidt, twice. Returns false when the columns are (nearly) dependent.
bool local_orthonormalize(Matrix& q) {
    for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t j = 0; j < q.cols(); ++j) {
            for (std::size_t k = 0; k < j; ++k) {
                double d = 0.0;
                for (std::size_t i = 0; i < q.rows(); ++i) d += q(i, k) * q(i, j);
                for (std::size_t i = 0; i < q.rows(); ++i) q(i, j) -= d * q(i, k);
            }
            double n = 0.0;
            for (std::size_t i = 0; i < q.rows(); ++i) n += q(i, j) * q(i, j);
            n = std::sqrt(n);
            if (n < 1e-10) return false;
            for (std::size_t i = 0; i < q.rows(); ++i) q(i, j) /= n;
        }
    }
    return true;
}

Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale) {
    std::normal_distribution<double> normal(0.0, scale);
    Matrix m(rows, cols);
    for (double& v : m.data()) v = normal(rng);
    return m;
}

double energy_prefix(std::span<const double> sigma, std::size_t r) {
    double s = 0.0;
    for (std::size_t i = 0; i < r; ++i) s += sigma[i] * sigma[i];
    return s;
}

LoraPair flip_first_column(const LoraPair& pair) {
    if (pair.rank() == 0) return pair;
    Matrix b = pair.b();
    for (std::size_t i = 0; i < b.rows(); ++i) b(i, 0) = -b(i, 0);
    return LoraPair(pair.task_id(), std::move(b), pair.a(), pair.b_frozen());
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a * 0x9e3779b97f4a7c15ULL + b + 0x632be59bd9b4e019ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// ---- suites ----

std::vector<OracleReport> truncation_suite(const SuiteOptions& opt) {
    std::vector<OracleReport> out;
    for (const GridInstance& g : truncation_grid(opt.seed)) {
        const DriftInstance inst = make_drift_instance(g);
        TransformResult tr = energy_transform(inst.pair, inst.x);
        if (opt.fault == Fault::transform_sign) tr.pair = flip_first_column(tr.pair);
        const std::string desc = fmt("d_out=%zu d_in=%zu r=%zu n=%zu seed=%llu", g.d_out, g.d_in, g.rank, g.n,
                                     static_cast<unsigned long long>(g.seed));
        OracleReport p = check_product_preservation(inst.pair, tr.pair, inst.x);
        p.descriptor = desc;
        out.push_back(std::move(p));
        for (std::size_t k = 0; k <= g.rank; ++k) {
            OracleReport rep = check_truncation_identity(tr.pair, tr.spectrum, inst.x, k);
            rep.descriptor = desc + fmt(" r_keep=%zu", k);
            out.push_back(std::move(rep));
        }
    }
    return out;
}

std::vector<OracleReport> optimality_suite(const SuiteOptions& opt) {
    std::vector<OracleReport> out;
    for (std::size_t i = 0; i < 10; ++i) {
        std::mt19937_64 rng(mix(opt.seed, 200 + i));
        const std::size_t d_out = 4 + i % 5;           // 4..8
        const std::size_t d_in = i % 2 == 0 ? 4 : 8;
        const std::size_t rank = std::min<std::size_t>(d_out, 2 + i % 3);  // 2..4
        const std::size_t n = 8 + 2 * (i % 5);         // 8..16
        const GridInstance g{d_out, d_in, rank, n, mix(opt.seed, 300 + i)};
        const DriftInstance inst = make_drift_instance(g);
        TransformResult tr = energy_transform(inst.pair, inst.x);
        if (opt.fault == Fault::transform_sign) tr.pair = flip_first_column(tr.pair);
        for (std::size_t k = 1; k < rank; ++k) {
            OracleReport rep = check_rank_optimality(tr.pair, inst.x, k, 500, rng());
            rep.descriptor = fmt("d_out=%zu d_in=%zu r=%zu n=%zu seed=%llu r_keep=%zu ", d_out, d_in, rank, n,
                                 static_cast<unsigned long long>(g.seed), k) + rep.descriptor;
            out.push_back(std::move(rep));
        }
    }
    return out;
}

struct AllocationEvent {
    int task;
    std::size_t layer;
    CapacityPool before;
    std::vector<LoraPair> pairs;
    AllocationPlan plan;
    double rho;
};

std::vector<AllocationEvent> audit_run(const SuiteOptions& opt) {
    StreamParams p;
    p.num_tasks = 10;
    p.classes_per_task = 2;
    p.feature_dim = 32;
    p.seed = opt.seed + 1;
    const TaskStream stream = make_synthetic_stream(p);
    RunOptions ro;
    std::vector<AllocationEvent> events;
    ro.on_allocation = [&](int t, std::size_t l, const CapacityPool& before, const AdaptedLayer& layer,
                           const AllocationPlan& plan) {
        events.push_back({t, l, before, layer.pairs, plan, ro.alloc.rho});
    };
    run_continual(stream, Strategy::e2lora, ro, opt.seed + 1);
    return events;
}

std::vector<OracleReport> orthogonality_reports(const std::vector<AllocationEvent>& events) {
    std::vector<OracleReport> out;
    for (const auto& e : events) {
        OracleReport rep = check_cross_task_orthogonality(e.pairs);
        rep.descriptor = fmt("run=10x2 task=%d layer=%zu d_out=%zu ", e.task, e.layer, e.before.d_out) + rep.descriptor;
        out.push_back(std::move(rep));
    }
    return out;
}

void append_pruning(std::vector<OracleReport>& out, const CapacityPool& pool, const AllocationPlan& plan, double rho,
                    const std::string& desc) {
    for (OracleReport rep : {check_capacity(pool, plan), check_threshold_minimality(pool, plan, rho),
                             check_uniform_pruning(pool, plan)}) {
        rep.descriptor = desc;
        out.push_back(std::move(rep));
    }
}

std::vector<OracleReport> pruning_reports(const std::vector<AllocationEvent>& events, const SuiteOptions& opt) {
    std::vector<OracleReport> out;
    const AllocConfig cfg;
    for (const auto& e : events) {
        append_pruning(out, e.before, e.plan, e.rho, fmt("run=10x2 task=%d layer=%zu", e.task, e.layer));

        // Small sub-instance cut from the run's real spectra, sized so that the
        // uniform fallback has to act and the enumeration stays exhaustive.
        if (e.before.entries.size() < 2) continue;
        CapacityPool sub;
        for (std::size_t k = 0; k < std::min<std::size_t>(3, e.before.entries.size()); ++k) {
            const auto& src = e.before.entries[k];
            const std::size_t len = std::min<std::size_t>(4, src.sigma.size());
            if (len == 0) continue;
            sub.entries.push_back({static_cast<int>(sub.entries.size() + 1), len,
                                   Vector(src.sigma.begin(), src.sigma.begin() + static_cast<std::ptrdiff_t>(len))});
        }
        if (sub.entries.empty()) continue;
        sub.d_out = sub.total_retained();
        const AllocationPlan plan = plan_allocation(sub, static_cast<int>(sub.entries.size() + 1), cfg);
        append_pruning(out, sub, plan, cfg.rho, fmt("sub-instance of task=%d layer=%zu", e.task, e.layer));
    }

    // Seeded random pools with coarse spectra so ties are frequent.
    std::mt19937_64 rng(mix(opt.seed, 400));
    std::uniform_int_distribution<int> tasks_dist(1, 3), len_dist(1, 4), val_dist(1, 5), slack_dist(0, 2);
    const double rhos[] = {0.5, 0.9, 0.9999};
    for (std::size_t i = 0; i < 30; ++i) {
        CapacityPool pool;
        const int tasks = tasks_dist(rng);
        for (int k = 0; k < tasks; ++k) {
            Vector sigma(static_cast<std::size_t>(len_dist(rng)));
            for (double& s : sigma) s = val_dist(rng);
            std::sort(sigma.rbegin(), sigma.rend());
            pool.entries.push_back({k + 1, sigma.size(), sigma});
        }
        pool.d_out = pool.total_retained() + static_cast<std::size_t>(slack_dist(rng));
        AllocConfig c;
        c.rho = rhos[i % 3];
        const AllocationPlan plan = plan_allocation(pool, tasks + 1, c);
        append_pruning(out, pool, plan, c.rho, fmt("random pool #%zu tasks=%d d_out=%zu rho=%g", i, tasks, pool.d_out, c.rho));
    }
    return out;
}

std::vector<OracleReport> gradient_suite(const SuiteOptions& opt) {
    std::vector<OracleReport> out;
    for (std::uint64_t s = 0; s < 5; ++s) {
        const GradientFixture fx = make_gradient_fixture(mix(opt.seed, 500 + s));
        for (double lambda : {0.0, 0.2}) {
            TrainConfig cfg;
            cfg.lambda = lambda;
            OracleReport rep = check_gradients(fx.model, fx.batch, fx.partition, cfg);
            rep.descriptor = fmt("model=%llu lambda=%g ", static_cast<unsigned long long>(s), lambda) + rep.descriptor;
            out.push_back(std::move(rep));
        }
    }
    return out;
}

}  // namespace

std::string OracleReport::to_json() const {
    nlohmann::json j;
    j["check"] = name;
    j["instance"] = descriptor;
    j["measured"] = measured;
    j["reference"] = reference;
    j["tolerance"] = tolerance;
    j["pass"] = pass;
    if (skipped) j["skipped"] = true;
    if (!note.empty()) j["note"] = note;
    return j.dump();
}

OracleReport make_oracle_report(std::string name, std::string descriptor, double measured, double reference,
                                double tolerance) {
    OracleReport r;
    r.name = std::move(name);
    r.descriptor = std::move(descriptor);
    r.measured = measured;
    r.reference = reference;
    r.tolerance = tolerance;
    r.pass = std::abs(measured - reference) <= tolerance * std::max(1.0, std::abs(reference));
    return r;
}

double proxy_error(const Matrix& delta_w, const Matrix& update, const ProxyBatch& x) {
    if (delta_w.rows() != update.rows() || delta_w.cols() != update.cols() || x.features.rows() != delta_w.cols()) {
        throw ValidationError("proxy_error: dimension mismatch");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < x.count(); ++j)
        for (std::size_t i = 0; i < delta_w.rows(); ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k < delta_w.cols(); ++k) s += (delta_w(i, k) - update(i, k)) * x.features(k, j);
            total += s * s;
        }
    return total;
}

OracleReport check_truncation_identity(const LoraPair& pair, const DriftSpectrum& spectrum, const ProxyBatch& x,
                                       std::size_t r_keep) {
    if (x.features.rows() != pair.d_in()) throw ValidationError("proxy batch rows do not match the pair's d_in");
    if (spectrum.sigma.size() != pair.rank()) throw ValidationError("spectrum length does not match the pair's rank");
    if (spectrum.proxy_count != 0 && spectrum.proxy_count != x.count()) {
        throw ValidationError("spectrum was computed on a different proxy batch size");
    }
    if (r_keep > pair.rank()) throw ValidationError("r_keep exceeds the pair's rank");

    // The rank-r_keep update differs from the full one by exactly the tail terms.
    const Matrix tail = naive_product(pair, r_keep, pair.rank());
    const double measured = proxy_error(tail, Matrix(tail.rows(), tail.cols()), x);
    double reference = 0.0;
    for (std::size_t i = r_keep; i < spectrum.sigma.size(); ++i) reference += spectrum.sigma[i] * spectrum.sigma[i];
    return make_oracle_report("truncation_identity", fmt("r_keep=%zu", r_keep), measured, reference, kTruncationRtol);
}

OracleReport check_product_preservation(const LoraPair& original, const LoraPair& transformed, const ProxyBatch& x) {
    if (original.d_out() != transformed.d_out() || original.d_in() != transformed.d_in() ||
        x.features.rows() != original.d_in()) {
        throw ValidationError("product preservation: dimension mismatch");
    }
    const Matrix before = naive_product(original, 0, original.rank());
    const Matrix after = naive_product(transformed, 0, transformed.rank());
    const double diff = std::sqrt(proxy_error(before, after, x));
    const double scale = std::sqrt(proxy_error(before, Matrix(before.rows(), before.cols()), x));
    return make_oracle_report("product_preservation", {}, diff / std::max(1.0, scale), 0.0, kPreservationRtol);
}

OracleReport check_rank_optimality(const LoraPair& pair, const ProxyBatch& x, std::size_t r_keep, std::size_t trials,
                                   std::uint64_t seed) {
    if (pair.d_out() > 8 || x.count() > 16) throw ValidationError("rank optimality search needs d_out <= 8 and n <= 16");
    if (x.features.rows() != pair.d_in()) throw ValidationError("proxy batch rows do not match the pair's d_in");
    if (r_keep > pair.rank()) throw ValidationError("r_keep exceeds the pair's rank");

    const std::size_t d_out = pair.d_out();
    const std::size_t d_in = pair.d_in();
    const Matrix full = naive_product(pair, 0, pair.rank());
    const Matrix b_r = pair.b().col_block(0, r_keep);
    const Matrix a_r = pair.a().row_block(0, r_keep);
    const Matrix truncated = naive_mul(b_r, a_r);
    const double err_t = proxy_error(full, truncated, x);

    double scale_a = 0.0;
    for (double v : pair.a().data()) scale_a = std::max(scale_a, std::abs(v));
    if (scale_a == 0.0) scale_a = 1.0;

    std::mt19937_64 rng(seed);
    std::size_t violations = 0;
    std::size_t evaluated = 0;
    double best = std::numeric_limits<double>::infinity();
    const double eps_levels[] = {1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-6};
    for (std::size_t trial = 0; trial < trials; ++trial) {
        const double eps = eps_levels[(trial / 3) % 6];
        Matrix candidate;
        switch (trial % 3) {
            case 0: {  // random factors
                candidate = naive_mul(random_matrix(d_out, r_keep, rng, 1.0), random_matrix(r_keep, d_in, rng, scale_a * eps));
                break;
            }
            case 1: {  // projection of ΔW onto a random (or near-optimal) r_keep-dim subspace
                Matrix q = random_matrix(d_out, r_keep, rng, eps);
                if (eps < 1.0) q += b_r;
                if (!local_orthonormalize(q)) continue;
                candidate = naive_mul(naive_mul(q, q.transpose()), full);
                break;
            }
            default: {  // perturbation of the truncated solution
                Matrix b = b_r + random_matrix(d_out, r_keep, rng, eps);
                Matrix a = a_r + random_matrix(r_keep, d_in, rng, eps * scale_a);
                candidate = naive_mul(b, a);
                break;
            }
        }
        if (r_keep == 0) candidate = Matrix(d_out, d_in);
        const double err = proxy_error(full, candidate, x);
        ++evaluated;
        best = std::min(best, err);
        if (err < err_t - kOptimalityMargin) ++violations;
    }
    OracleReport rep = make_oracle_report("rank_optimality",
                                          fmt("trials=%zu truncated_error=%.17g best_candidate=%.17g", evaluated, err_t,
                                              evaluated ? best : err_t),
                                          static_cast<double>(violations), 0.0, 0.0);
    if (trials == 0) rep.note = "no candidates";
    return rep;
}

OracleReport check_cross_task_orthogonality(std::span<const LoraPair> pairs) {
    if (pairs.empty()) throw ValidationError("orthogonality check needs at least one pair");
    const std::size_t d_out = pairs.front().d_out();
    std::vector<std::vector<double>> columns;
    for (const LoraPair& p : pairs) {
        if (p.d_out() != d_out) throw ValidationError("pairs disagree on d_out");
        for (std::size_t j = 0; j < p.rank(); ++j) {
            std::vector<double> c(d_out);
            for (std::size_t i = 0; i < d_out; ++i) c[i] = p.b()(i, j);
            columns.push_back(std::move(c));
        }
    }
    double worst = 0.0;
    for (std::size_t a = 0; a < columns.size(); ++a)
        for (std::size_t b = a + 1; b < columns.size(); ++b) {
            double g = 0.0;
            for (std::size_t i = 0; i < d_out; ++i) g += columns[a][i] * columns[b][i];
            worst = std::max(worst, std::abs(g));
        }
    return make_oracle_report("cross_task_orthogonality", fmt("columns=%zu", columns.size()), worst, 0.0,
                              kOrthogonalityTol);
}

OracleReport check_cross_task_orthogonality(std::span<const LoraPair> retained, const LoraPair& new_pair) {
    std::vector<LoraPair> all(retained.begin(), retained.end());
    all.push_back(new_pair);
    return check_cross_task_orthogonality(all);
}

OracleReport check_uniform_pruning(const CapacityPool& pool, const AllocationPlan& plan) {
    struct Item {
        double energy;
        int task;
    };
    std::vector<Item> available;
    std::vector<double> removed;
    std::string problem;
    for (const auto& e : pool.entries) {
        const auto thr_it = plan.threshold_ranks.find(e.task_id);
        const auto keep_it = plan.keep_ranks.find(e.task_id);
        if (thr_it == plan.threshold_ranks.end() || keep_it == plan.keep_ranks.end()) {
            problem = "plan does not cover task " + std::to_string(e.task_id);
            break;
        }
        if (keep_it->second > thr_it->second || thr_it->second > e.sigma.size()) {
            problem = "inconsistent keep/threshold ranks for task " + std::to_string(e.task_id);
            break;
        }
        for (std::size_t i = 0; i < thr_it->second; ++i) available.push_back({e.sigma[i] * e.sigma[i], e.task_id});
        for (std::size_t i = keep_it->second; i < thr_it->second; ++i) removed.push_back(e.sigma[i] * e.sigma[i]);
    }
    if (!problem.empty()) {
        OracleReport r = make_oracle_report("uniform_pruning", {}, 1.0, 0.0, 0.0);
        r.pass = false;
        r.note = problem;
        return r;
    }
    const std::size_t m = removed.size();
    const std::string desc = fmt("ranks=%zu removals=%zu", available.size(), m);

    // Removal must be exactly enough: capacity reached, and not reachable with one fewer.
    std::size_t kept = 0;
    for (const auto& [id, k] : plan.keep_ranks) kept += k;
    const std::size_t t = pool.entries.size() + 1;
    const std::size_t need = (pool.d_out + t - 1) / t;
    if (m > 0 && pool.d_out - (kept + 1) >= need) problem = "removed more ranks than needed";
    if (kept > 0 && pool.d_out - kept < need) problem = "capacity for the new task not reached";
    if (plan.removals.size() != m) problem = "removal log disagrees with keep ranks";

    if (m == 0 && problem.empty()) return make_oracle_report("uniform_pruning", desc, 0.0, 0.0, 1e-12);
    if (available.size() > kPruningEnumerationLimit) {
        OracleReport r = make_oracle_report("uniform_pruning", desc, 0.0, 0.0, 1e-12);
        r.skipped = true;
        r.note = "skipped: more than 12 ranks";
        if (!problem.empty()) {
            r.pass = false;
            r.note = problem;
        }
        return r;
    }

    // Every m-subset of the retained ranks; keep the one with the smallest energy sum.
    const std::size_t n = available.size();
    double best_sum = std::numeric_limits<double>::infinity();
    std::vector<double> best;
    for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
        if (static_cast<std::size_t>(__builtin_popcount(mask)) != m) continue;
        std::vector<double> pick;
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (mask & (1u << i)) {
                pick.push_back(available[i].energy);
                sum += available[i].energy;
            }
        std::sort(pick.begin(), pick.end());
        if (sum < best_sum || (sum == best_sum && pick < best)) {
            best_sum = sum;
            best = std::move(pick);
        }
    }
    std::sort(removed.begin(), removed.end());
    double diff = 0.0;
    for (std::size_t i = 0; i < m; ++i) diff = std::max(diff, std::abs(removed[i] - best[i]));
    OracleReport r = make_oracle_report("uniform_pruning", desc, diff, 0.0, 1e-12);
    if (!problem.empty()) {
        r.pass = false;
        r.note = problem;
    }
    return r;
}

OracleReport check_threshold_minimality(const CapacityPool& pool, const AllocationPlan& plan, double rho) {
    std::size_t mismatches = 0;
    std::string note;
    for (const auto& e : pool.entries) {
        const auto it = plan.threshold_ranks.find(e.task_id);
        if (it == plan.threshold_ranks.end()) {
            ++mismatches;
            continue;
        }
        const double total = energy_prefix(e.sigma, e.sigma.size());
        std::size_t minimal = 0;
        if (total > 0.0) {
            minimal = e.sigma.size();
            for (std::size_t r = 1; r <= e.sigma.size(); ++r)
                if (energy_prefix(e.sigma, r) / total >= rho) {
                    minimal = r;
                    break;
                }
        }
        if (it->second != std::min(minimal, e.retained_rank)) {
            ++mismatches;
            note += fmt("task %d: %zu vs minimal %zu; ", e.task_id, it->second, minimal);
        }
    }
    OracleReport r = make_oracle_report("threshold_minimality", {}, static_cast<double>(mismatches), 0.0, 0.0);
    r.note = note;
    return r;
}

OracleReport check_capacity(const CapacityPool& pool, const AllocationPlan& plan) {
    std::size_t kept = 0;
    for (const auto& [id, k] : plan.keep_ranks) kept += k;
    const std::size_t t = pool.entries.size() + 1;
    const std::size_t need = (pool.d_out + t - 1) / t;
    std::size_t violations = 0;
    std::string note;
    if (kept + plan.new_task_rank > pool.d_out) {
        ++violations;
        note += fmt("over budget %zu + %zu > %zu; ", kept, plan.new_task_rank, pool.d_out);
    }
    if (plan.new_task_rank < need) {
        ++violations;
        note += fmt("new rank %zu below minimum %zu; ", plan.new_task_rank, need);
    }
    OracleReport r = make_oracle_report("capacity", {}, static_cast<double>(violations), 0.0, 0.0);
    r.note = note;
    return r;
}

OracleReport check_gradients(const ContinualModel& model, const LabeledSet& batch, const ClassPartition& partition,
                             const TrainConfig& cfg) {
    const GradientCheckReport g = analytic_gradient_check(model, batch, partition, cfg);
    return make_oracle_report("gradients", fmt("parameters=%zu", g.checked_parameters), g.max_relative_deviation, 0.0,
                              kGradientTol);
}

GradientFixture make_gradient_fixture(std::uint64_t seed) {
    const std::size_t dims[] = {6, 5, 4};
    GradientFixture fx;
    fx.model = ContinualModel::random_backbone(dims, seed);
    std::mt19937_64 rng(mix(seed, 1));
    for (AdaptedLayer& layer : fx.model.layers()) {
        const Matrix basis = orthonormalize(gaussian_matrix(layer.d_out(), layer.d_out(), rng));
        const std::size_t old_rank = 2;
        layer.pairs.emplace_back(1, basis.col_block(0, old_rank), gaussian_matrix(old_rank, layer.d_in(), rng, 0.5));
        layer.pairs.emplace_back(2, basis.col_block(old_rank, layer.d_out() - old_rank),
                                 gaussian_matrix(layer.d_out() - old_rank, layer.d_in(), rng, 0.5));
    }
    fx.model.set_active_task(2);
    const std::size_t h = fx.model.add_head({0, 1, 2, 3});
    ClassifierHead& head = fx.model.heads()[h];
    head.weight = gaussian_matrix(head.weight.rows(), head.weight.cols(), rng, 0.5);
    for (double& b : head.bias) b = std::normal_distribution<double>(0.0, 0.1)(rng);
    const std::size_t n = 8;
    Matrix x = gaussian_matrix(n, dims[0], rng);
    std::vector<int> labels;
    for (std::size_t i = 0; i < n; ++i) labels.push_back(i % 2 == 0 ? 2 : 3);
    fx.batch = LabeledSet{std::move(x), std::move(labels)};
    fx.partition.old_classes = {0, 1};
    fx.partition.new_classes = {2, 3};
    return fx;
}

Fault parse_fault(const std::string& text) {
    if (text.empty() || text == "none") return Fault::none;
    if (text == "transform-sign") return Fault::transform_sign;
    throw ValidationError("unknown fault '" + text + "'");
}

std::vector<std::string> suite_names() {
    return {"truncation", "optimality", "orthogonality", "pruning", "gradients", "all"};
}

std::vector<GridInstance> truncation_grid(std::uint64_t base_seed) {
    std::vector<GridInstance> valid;
    for (std::size_t d_out : {4, 16, 64})
        for (std::size_t d_in : {8, 32})
            for (std::size_t r : {2, 4, 8})
                for (std::size_t n : {10, 50})
                    if (r <= d_out) valid.push_back({d_out, d_in, r, n, 0});
    std::vector<GridInstance> grid;
    for (std::size_t i = 0; i < 20; ++i) {
        GridInstance g = valid[i * valid.size() / 20];
        g.seed = mix(base_seed, 100 + i);
        grid.push_back(g);
    }
    return grid;
}

DriftInstance make_drift_instance(const GridInstance& g) {
    std::mt19937_64 rng(g.seed);
    Matrix b = gaussian_matrix(g.d_out, g.rank, rng);
    Matrix a = gaussian_matrix(g.rank, g.d_in, rng);
    Matrix x = gaussian_matrix(g.d_in, g.n, rng);
    return {LoraPair(1, std::move(b), std::move(a)), ProxyBatch{std::move(x), 1}};
}

std::vector<OracleReport> run_suite(const std::string& name, const SuiteOptions& options) {
    if (name == "truncation") return truncation_suite(options);
    if (name == "optimality") return optimality_suite(options);
    if (name == "gradients") return gradient_suite(options);
    if (name == "orthogonality") return orthogonality_reports(audit_run(options));
    if (name == "pruning") return pruning_reports(audit_run(options), options);
    if (name == "all") {
        std::vector<OracleReport> out = truncation_suite(options);
        auto append = [&](std::vector<OracleReport> more) {
            out.insert(out.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
        };
        append(optimality_suite(options));
        const auto events = audit_run(options);
        append(orthogonality_reports(events));
        append(pruning_reports(events, options));
        append(gradient_suite(options));
        return out;
    }
    throw ValidationError("unknown suite '" + name + "'");
}

}  // namespace e2lora
