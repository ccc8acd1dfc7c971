#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "e2lora/bench.hpp"
#include "e2lora/config.hpp"

namespace e2lora {

/// Number format used in every CSV: 17 significant digits.
std::string format_real(double v);

std::string metrics_csv(const MetricsReport& report);
std::string spectra_csv(std::span<const SpectrumRecord> spectra);
/// One JSON object per line: {"task":..,"epoch":..,"ce":..,"kd":..,"total":..}.
std::string train_log(std::span<const EpochRecord> epochs);
std::string allocations_csv(std::span<const AllocLogEntry> entries);
std::string summary_json(const RunConfig& cfg, const RunResult& result);

/// metrics.csv, summary.json, spectra.csv, train.log, allocations.csv and
/// config.resolved under `dir` (created if needed).
void write_run_artifacts(const std::filesystem::path& dir, const RunConfig& cfg, const RunResult& result);

/// Parses a spectra.csv written by spectra_csv. Throws ValidationError on a
/// missing file, wrong header or malformed row.
std::vector<SpectrumRecord> read_spectra_csv(const std::filesystem::path& path);

struct TaskEnergy {
    int task = 0;
    double energy = 0.0;  // Σ σ² over every layer of the task
};

std::vector<TaskEnergy> task_energies(std::span<const SpectrumRecord> spectra);
/// task,energy
std::string energy_csv(std::span<const TaskEnergy> energies);
/// task,layer,rank_fraction,energy_fraction, one curve per (task, layer).
std::string curves_csv(std::span<const SpectrumRecord> spectra);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace e2lora
