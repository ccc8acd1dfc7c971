#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "e2lora/bench.hpp"
#include "e2lora/errors.hpp"

namespace e2lora {

/// Schema problem in a run config; `path()` names the offending field ("train.lr_lora").
class ConfigError : public ValidationError {
public:
    ConfigError(std::string path, const std::string& what)
        : ValidationError(path + ": " + what), path_(std::move(path)) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

/// Everything a `run` needs. One seed drives stream generation, initialization
/// and shuffling; train.seed and align.seed are extra offsets mixed into it.
struct RunConfig {
    std::uint64_t seed = 1;
    Strategy strategy = Strategy::e2lora;
    StreamParams stream;
    BackboneConfig backbone;
    TrainConfig train;
    AllocConfig alloc;
    AlignConfig align;
    std::filesystem::path out_dir = "runs/default";
    bool checkpoint = false;

    /// Throws ConfigError naming the field of the first invalid value.
    void validate() const;
};

/// Parses a JSON config. Missing keys take their defaults; unknown keys and
/// wrongly typed values are ConfigErrors.
RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::filesystem::path& path);

/// The fully resolved config (every default filled in) as pretty JSON.
std::string resolved_config(const RunConfig& cfg);

/// FNV-1a 64 over resolved_config() without the output section, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

RunOptions run_options(const RunConfig& cfg);

}  // namespace e2lora
