#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "e2lora/allocator.hpp"
#include "e2lora/bench.hpp"
#include "e2lora/config.hpp"
#include "e2lora/errors.hpp"
#include "e2lora/lora.hpp"
#include "e2lora/matcore.hpp"
#include "e2lora/oracle.hpp"
#include "e2lora/trainer.hpp"

namespace py = pybind11;
using namespace e2lora;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& arr) {
    if (arr.ndim() != 2) throw ValidationError("expected a 2-D array");
    const auto rows = static_cast<std::size_t>(arr.shape(0));
    const auto cols = static_cast<std::size_t>(arr.shape(1));
    return Matrix(rows, cols, Vector(arr.data(), arr.data() + rows * cols));
}

Array to_array(const Matrix& m) {
    Array out({m.rows(), m.cols()});
    std::copy(m.data().begin(), m.data().end(), out.mutable_data());
    return out;
}

Array to_array(const Vector& v) {
    Array out(v.size());
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

py::dict report_dict(const OracleReport& r) {
    py::dict d;
    d["check"] = r.name;
    d["instance"] = r.descriptor;
    d["measured"] = r.measured;
    d["reference"] = r.reference;
    d["tolerance"] = r.tolerance;
    d["passed"] = r.pass;
    d["skipped"] = r.skipped;
    d["note"] = r.note;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Energy-structured LoRA continual learning core";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<StateError>(m, "StateError", base.ptr());
    py::register_exception<DivergenceError>(m, "DivergenceError", base.ptr());

    m.def(
        "thin_svd",
        [](const Array& a) {
            const SvdResult s = thin_svd(to_matrix(a));
            return py::make_tuple(to_array(s.u), to_array(s.sigma), to_array(s.v));
        },
        py::arg("m"), "Thin SVD (u, sigma, v) by one-sided Jacobi.");

    m.def("orthonormalize", [](const Array& a) { return to_array(orthonormalize(to_matrix(a))); }, py::arg("m"));

    m.def(
        "output_drift",
        [](const Array& b, const Array& a, const Array& x) {
            return to_array(output_drift(LoraPair(0, to_matrix(b), to_matrix(a)), ProxyBatch{to_matrix(x), 0}));
        },
        py::arg("b"), py::arg("a"), py::arg("x"));

    m.def(
        "energy_transform",
        [](const Array& b, const Array& a, const Array& x) {
            const TransformResult t = energy_transform(LoraPair(0, to_matrix(b), to_matrix(a)), ProxyBatch{to_matrix(x), 0});
            return py::make_tuple(to_array(t.pair.b()), to_array(t.pair.a()), to_array(t.spectrum.sigma));
        },
        py::arg("b"), py::arg("a"), py::arg("x"), "Returns (b', a', sigma).");

    m.def(
        "retained_rank_for", [](const std::vector<double>& sigma, double rho) { return retained_rank_for(sigma, rho); },
        py::arg("sigma"), py::arg("rho"));
    m.def("min_rank", &min_rank, py::arg("d_out"), py::arg("t"));

    m.def(
        "plan_allocation",
        [](std::size_t d_out, const std::vector<std::tuple<int, std::size_t, std::vector<double>>>& entries,
           int new_task_id, double rho) {
            CapacityPool pool;
            pool.d_out = d_out;
            for (const auto& [id, rank, sigma] : entries) pool.entries.push_back({id, rank, sigma});
            AllocConfig cfg;
            cfg.rho = rho;
            const AllocationPlan plan = plan_allocation(pool, new_task_id, cfg);
            py::list removals;
            for (const auto& r : plan.removals) removals.append(py::make_tuple(r.task_id, r.rank_index, r.energy));
            py::dict d;
            d["keep_ranks"] = plan.keep_ranks;
            d["threshold_ranks"] = plan.threshold_ranks;
            d["new_task_rank"] = plan.new_task_rank;
            d["removals"] = removals;
            d["min_rank_met"] = plan.min_rank_met;
            return d;
        },
        py::arg("d_out"), py::arg("entries"), py::arg("new_task_id"), py::arg("rho") = 0.9999,
        "entries: list of (task_id, retained_rank, sigma).");

    m.def(
        "distill_loss",
        [](const std::vector<double>& z_tea, const std::vector<double>& z_stu, const std::vector<std::size_t>& old,
           double temperature) { return distill_loss(z_tea, z_stu, old, temperature); },
        py::arg("z_tea"), py::arg("z_stu"), py::arg("old_positions"), py::arg("temperature") = 2.0);
    m.def(
        "ce_loss",
        [](const std::vector<double>& z, std::size_t label, const std::vector<std::size_t>& fresh) {
            return ce_loss(z, label, fresh);
        },
        py::arg("z"), py::arg("label_position"), py::arg("new_positions"));
    m.def("total_loss", &total_loss, py::arg("ce"), py::arg("kd"), py::arg("lam"));

    m.def(
        "energy_curve", [](const std::vector<double>& sigma) { return energy_curve(sigma); }, py::arg("sigma"));

    m.def(
        "run",
        [](const std::string& config_json) {
            const RunConfig cfg = parse_run_config(config_json);
            RunResult result;
            {
                py::gil_scoped_release release;
                result = run_continual(make_synthetic_stream(cfg.stream), cfg.strategy, run_options(cfg), cfg.seed);
            }
            py::list spectra;
            for (const auto& s : result.spectra) spectra.append(py::make_tuple(s.task, s.layer, s.rank_index, s.sigma));
            py::dict d;
            d["per_step"] = result.report.per_step;
            d["last_acc"] = result.report.last_acc;
            d["inc_acc"] = result.report.inc_acc;
            d["spectra"] = spectra;
            d["config_hash"] = config_hash(cfg);
            return d;
        },
        py::arg("config_json") = "{}", "Runs a stream from a JSON config string and returns metrics and spectra.");

    m.def(
        "verify",
        [](const std::string& suite, std::uint64_t seed) {
            SuiteOptions o;
            o.seed = seed;
            std::vector<OracleReport> reports;
            {
                py::gil_scoped_release release;
                reports = run_suite(suite, o);
            }
            py::list out;
            for (const auto& r : reports) out.append(report_dict(r));
            return out;
        },
        py::arg("suite"), py::arg("seed") = 0);
}
