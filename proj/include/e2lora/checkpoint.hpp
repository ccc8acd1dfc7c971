#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "e2lora/align.hpp"
#include "e2lora/model.hpp"

namespace e2lora {

// Binary layout, little-endian throughout:
//   magic "E2LORACK", u32 version,
//   i32 task, model, u64 stats count, stats...
// Matrices are u64 rows, u64 cols, then rows*cols f64 in row-major order.
// A pair is i32 task_id, u8 b_frozen, u64 d_out, u64 d_in, u64 rank, b, a
// (b and a written without their own shape headers).

struct Checkpoint {
    int task = 0;  // last completed task
    ContinualModel model;
    std::vector<ClassStats> stats;

    friend bool operator==(const Checkpoint&, const Checkpoint&);
};

void write_pair(std::ostream& out, const LoraPair& pair);
LoraPair read_pair(std::istream& in);

void write_checkpoint(std::ostream& out, const Checkpoint& ck);
/// Throws ValidationError on a bad magic, unknown version or truncated input.
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace e2lora
