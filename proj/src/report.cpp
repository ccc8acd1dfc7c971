#include "e2lora/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "e2lora/errors.hpp"

namespace e2lora {

std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string metrics_csv(const MetricsReport& report) {
    std::string out = "step,acc\n";
    for (std::size_t i = 0; i < report.per_step.size(); ++i)
        out += std::to_string(i + 1) + "," + format_real(report.per_step[i]) + "\n";
    return out;
}

std::string spectra_csv(std::span<const SpectrumRecord> spectra) {
    std::string out = "task,layer,rank_index,sigma\n";
    for (const auto& s : spectra)
        out += std::to_string(s.task) + "," + std::to_string(s.layer) + "," + std::to_string(s.rank_index) + "," +
               format_real(s.sigma) + "\n";
    return out;
}

std::string train_log(std::span<const EpochRecord> epochs) {
    // Hand-formatted so numbers carry the same 17 digits as the CSVs.
    std::string out;
    for (const auto& e : epochs)
        out += "{\"task\":" + std::to_string(e.task) + ",\"epoch\":" + std::to_string(e.epoch) + ",\"ce\":" +
               format_real(e.ce) + ",\"kd\":" + format_real(e.kd) + ",\"total\":" + format_real(e.total) + "}\n";
    return out;
}

std::string allocations_csv(std::span<const AllocLogEntry> entries) {
    std::string out = "task,layer,task_id,kept,freed,reason\n";
    for (const auto& e : entries)
        out += std::to_string(e.task) + "," + std::to_string(e.layer) + "," + std::to_string(e.record.task_id) + "," +
               std::to_string(e.record.kept) + "," + std::to_string(e.record.freed) + "," + to_string(e.record.reason) +
               "\n";
    return out;
}

std::string summary_json(const RunConfig& cfg, const RunResult& result) {
    nlohmann::ordered_json j;
    j["last_acc"] = result.report.last_acc;
    j["inc_acc"] = result.report.inc_acc;
    j["per_step"] = result.report.per_step;
    j["config_hash"] = config_hash(cfg);
    j["seed"] = cfg.seed;
    j["strategy"] = to_string(cfg.strategy);
    j["tasks"] = cfg.stream.num_tasks;
    nlohmann::ordered_json energy = nlohmann::ordered_json::array();
    for (const auto& e : task_energies(result.spectra)) energy.push_back({{"task", e.task}, {"energy", e.energy}});
    j["task_energy"] = energy;
    return j.dump(2) + "\n";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("write failed for " + path.string());
}

void write_run_artifacts(const std::filesystem::path& dir, const RunConfig& cfg, const RunResult& result) {
    std::filesystem::create_directories(dir);
    write_text(dir / "config.resolved", resolved_config(cfg));
    write_text(dir / "metrics.csv", metrics_csv(result.report));
    write_text(dir / "spectra.csv", spectra_csv(result.spectra));
    write_text(dir / "train.log", train_log(result.train_log));
    write_text(dir / "allocations.csv", allocations_csv(result.alloc_log));
    write_text(dir / "summary.json", summary_json(cfg, result));
}

std::vector<SpectrumRecord> read_spectra_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("missing spectra file " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "task,layer,rank_index,sigma") {
        throw ValidationError(path.string() + ": expected header task,layer,rank_index,sigma");
    }
    std::vector<SpectrumRecord> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        SpectrumRecord r;
        long long task = 0;
        unsigned long long layer = 0, index = 0;
        char tail = 0;
        if (std::sscanf(line.c_str(), "%lld,%llu,%llu,%lf%c", &task, &layer, &index, &r.sigma, &tail) != 4 ||
            !(r.sigma >= 0.0)) {
            throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": malformed row");
        }
        r.task = static_cast<int>(task);
        r.layer = layer;
        r.rank_index = index;
        out.push_back(r);
    }
    return out;
}

std::vector<TaskEnergy> task_energies(std::span<const SpectrumRecord> spectra) {
    std::map<int, double> by_task;
    for (const auto& s : spectra) by_task[s.task] += s.sigma * s.sigma;
    std::vector<TaskEnergy> out;
    for (const auto& [task, e] : by_task) out.push_back({task, e});
    return out;
}

std::string energy_csv(std::span<const TaskEnergy> energies) {
    std::string out = "task,energy\n";
    for (const auto& e : energies) out += std::to_string(e.task) + "," + format_real(e.energy) + "\n";
    return out;
}

std::string curves_csv(std::span<const SpectrumRecord> spectra) {
    std::map<std::pair<int, std::size_t>, std::vector<std::pair<std::size_t, double>>> groups;
    for (const auto& s : spectra) groups[{s.task, s.layer}].emplace_back(s.rank_index, s.sigma);
    std::string out = "task,layer,rank_fraction,energy_fraction\n";
    for (auto& [key, entries] : groups) {
        std::sort(entries.begin(), entries.end());
        Vector sigma;
        for (const auto& [idx, s] : entries) sigma.push_back(s);
        for (const auto& [rank_fraction, energy_fraction] : energy_curve(sigma))
            out += std::to_string(key.first) + "," + std::to_string(key.second) + "," + format_real(rank_fraction) +
                   "," + format_real(energy_fraction) + "\n";
    }
    return out;
}

}  // namespace e2lora
