#pragma once

// Command-line front end: subcommands synth | run | sweep | check, config
// files, environment overrides, and the d x mdf x ve sweep harness.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "corrfl/scenario.hpp"

namespace corrfl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitRuntime = 4;

struct SweepGrid {
    std::vector<std::size_t> delays{1};
    std::vector<std::size_t> mdfs{5};
    std::vector<std::size_t> ves{1};

    std::size_t cells() const { return delays.size() * mdfs.size() * ves.size(); }
};

// Deterministic per-cell seed derived from the master seed and the cell's
// coordinates; replaying a cell is `run --seed <derived> --delay ...`.
std::uint64_t cell_seed(std::uint64_t master, std::size_t delay, std::size_t mdf,
                        std::size_t ve);

void write_dataset_summary(const std::vector<data::SensorRecord>& records,
                           double activity_threshold, std::ostream& out);

int cmd_synth(const data::SynthConfig& cfg, double activity_threshold,
              const std::filesystem::path& out_dir, std::ostream& out);
int cmd_run(const scenario::ScenarioConfig& cfg, const std::filesystem::path& out_dir,
            std::ostream& out);
int cmd_sweep(const scenario::ScenarioConfig& base, const SweepGrid& grid, bool parallel_cells,
              const std::filesystem::path& out_dir, std::ostream& out);
// Fast self-tests: gradient checks, loss identities, aggregation oracle.
int cmd_check(bool corrupt_l3, std::ostream& out);

// Full entry point: parses argv, dispatches, maps error classes to exit codes.
int run_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace corrfl::cli
