// e2lora: experiment runner and verification front-end.
//
//   e2lora run CONFIG [--seed S] [--out DIR] [--jobs N]
//   e2lora verify SUITE [--seed S] [--out DIR] [--inject-fault NAME]
//   e2lora spectra RUN_DIR [--out DIR]
//
// Exit codes: 0 success, 1 failed checks or runtime error, 2 usage/schema
// error, 3 training divergence.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "e2lora/checkpoint.hpp"
#include "e2lora/config.hpp"
#include "e2lora/errors.hpp"
#include "e2lora/oracle.hpp"
#include "e2lora/report.hpp"

namespace fs = std::filesystem;
using namespace e2lora;

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kUsage = 2;
constexpr int kDiverged = 3;

int run_one(RunConfig cfg) {
    try {
        fs::create_directories(cfg.out_dir);
    } catch (const fs::filesystem_error& e) {
        std::cerr << "output.dir: cannot create " << cfg.out_dir << ": " << e.code().message() << "\n";
        return kUsage;
    }
    {
        // Fail early on a read-only directory rather than after training.
        std::ofstream probe(cfg.out_dir / "config.resolved");
        if (!probe) {
            std::cerr << "output.dir: " << cfg.out_dir << " is not writable\n";
            return kUsage;
        }
        probe << resolved_config(cfg);
    }

    RunOptions options = run_options(cfg);
    if (cfg.checkpoint) {
        const fs::path dir = cfg.out_dir / "checkpoints";
        fs::create_directories(dir);
        options.on_task_end = [dir](int task, const ContinualModel& model, std::span<const ClassStats> stats) {
            char name[32];
            std::snprintf(name, sizeof name, "task_%03d.bin", task);
            save_checkpoint(dir / name, Checkpoint{task, model, {stats.begin(), stats.end()}});
        };
    }

    try {
        const TaskStream stream = make_synthetic_stream(cfg.stream);
        const RunResult result = run_continual(stream, cfg.strategy, options, cfg.seed);
        write_run_artifacts(cfg.out_dir, cfg, result);
        std::printf("%s seed %llu: last_acc %s inc_acc %s -> %s\n", to_string(cfg.strategy).c_str(),
                    static_cast<unsigned long long>(cfg.seed), format_real(result.report.last_acc).c_str(),
                    format_real(result.report.inc_acc).c_str(), cfg.out_dir.string().c_str());
    } catch (const DivergenceError& e) {
        std::cerr << "diverged at task " << e.task() << ", epoch " << e.epoch() << ", batch " << e.batch() << ": "
                  << e.what() << "\n";
        return kDiverged;
    } catch (const ValidationError& e) {
        std::cerr << "invalid configuration: " << e.what() << "\n";
        return kUsage;
    }
    return kOk;
}

int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed, std::optional<std::string> out,
            std::size_t jobs) {
    RunConfig cfg;
    try {
        cfg = load_run_config(config_path);
        if (seed) {
            cfg.seed = *seed;
            cfg.stream.seed = *seed;
        }
        if (out) cfg.out_dir = *out;
        cfg.validate();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kUsage;
    }
    if (jobs <= 1) return run_one(cfg);

    // One worker process per seed, each in its own directory.
    std::vector<pid_t> workers;
    const fs::path root = cfg.out_dir;
    for (std::size_t k = 0; k < jobs; ++k) {
        RunConfig job = cfg;
        job.seed = cfg.seed + k;
        job.stream.seed = job.seed;
        job.out_dir = root / ("seed_" + std::to_string(job.seed));
        std::fflush(nullptr);
        const pid_t pid = fork();
        if (pid < 0) {
            std::perror("fork");
            return kFailed;
        }
        if (pid == 0) {
            int code = kFailed;
            try {
                code = run_one(job);
            } catch (const std::exception& e) {
                std::cerr << "seed " << job.seed << ": " << e.what() << "\n";
            }
            std::fflush(nullptr);
            _exit(code);
        }
        workers.push_back(pid);
    }
    int worst = kOk;
    for (pid_t pid : workers) {
        int status = 0;
        if (waitpid(pid, &status, 0) < 0 || !WIFEXITED(status)) {
            worst = std::max(worst, kFailed);
            continue;
        }
        worst = std::max(worst, WEXITSTATUS(status));
    }
    return worst;
}

int cmd_verify(const std::string& suite, std::uint64_t seed, std::optional<std::string> out, const std::string& fault) {
    const auto names = suite_names();
    if (std::find(names.begin(), names.end(), suite) == names.end()) {
        std::cerr << "unknown suite '" << suite << "' (expected truncation, optimality, orthogonality, pruning, "
                     "gradients or all)\n";
        return kUsage;
    }
    SuiteOptions options;
    options.seed = seed;
    try {
        options.fault = parse_fault(fault);
    } catch (const ValidationError& e) {
        std::cerr << e.what() << "\n";
        return kUsage;
    }

    const std::vector<OracleReport> reports = run_suite(suite, options);
    std::string lines;
    std::size_t failed = 0, skipped = 0;
    for (const auto& r : reports) {
        lines += r.to_json() + "\n";
        failed += r.pass ? 0 : 1;
        skipped += r.skipped ? 1 : 0;
    }
    std::fputs(lines.c_str(), stdout);
    if (out) {
        fs::create_directories(*out);
        write_text(fs::path(*out) / ("verify_" + suite + ".jsonl"), lines);
    }
    std::fprintf(stderr, "verify %s: %zu checks, %zu failed, %zu skipped\n", suite.c_str(), reports.size(), failed,
                 skipped);
    return failed == 0 ? kOk : kFailed;
}

int cmd_spectra(const std::string& run_dir, std::optional<std::string> out) {
    std::vector<SpectrumRecord> spectra;
    try {
        spectra = read_spectra_csv(fs::path(run_dir) / "spectra.csv");
    } catch (const ValidationError& e) {
        std::cerr << e.what() << "\n";
        return kUsage;
    }
    if (spectra.empty()) {
        std::cerr << run_dir << "/spectra.csv has no rows\n";
        return kUsage;
    }
    const fs::path dest = out ? fs::path(*out) : fs::path(run_dir);
    fs::create_directories(dest);
    const auto energies = task_energies(spectra);
    write_text(dest / "energy.csv", energy_csv(energies));
    write_text(dest / "curves.csv", curves_csv(spectra));
    std::printf("%zu tasks; first-task energy %s, last-task energy %s (%s)\n", energies.size(),
                format_real(energies.front().energy).c_str(), format_real(energies.back().energy).c_str(),
                energies.front().energy >= energies.back().energy ? "earlier task higher" : "earlier task lower");
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Energy-structured LoRA continual learning: runs, oracle verification, spectra"};
    app.require_subcommand(1);

    std::string config_path, suite, run_dir, fault;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::size_t jobs = 1;

    CLI::App* run = app.add_subcommand("run", "Run a continual-learning experiment from a JSON config");
    run->add_option("config", config_path, "Config file")->required();
    run->add_option("--seed", seed, "Override the config seed");
    run->add_option("--out", out, "Override the output directory");
    run->add_option("--jobs", jobs, "Run seeds seed..seed+N-1 as parallel worker processes")
        ->check(CLI::PositiveNumber);

    CLI::App* verify = app.add_subcommand("verify", "Run oracle batteries");
    verify->add_option("suite", suite, "truncation | optimality | orthogonality | pruning | gradients | all")
        ->required();
    verify->add_option("--seed", seed, "Instance grid seed (default 0)");
    verify->add_option("--out", out, "Also write the JSON-lines report here");
    verify->add_option("--inject-fault", fault, "Negative control: transform-sign");

    CLI::App* spectra = app.add_subcommand("spectra", "Energy tables and retention curves from a run directory");
    spectra->add_option("run_dir", run_dir, "Directory holding spectra.csv")->required();
    spectra->add_option("--out", out, "Output directory (default: the run directory)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (run->parsed()) return cmd_run(config_path, seed, out, jobs);
        if (verify->parsed()) return cmd_verify(suite, seed.value_or(0), out, fault);
        return cmd_spectra(run_dir, out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailed;
    }
}
