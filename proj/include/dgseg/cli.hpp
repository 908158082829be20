#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dgseg/core.hpp"
#include "dgseg/datasynth.hpp"
#include "dgseg/eval.hpp"

namespace dgseg {

/// Process exit codes.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitRuntime = 3 };

/// Entry point of the `dgseg` binary. Never throws; prints a one-line
/// diagnostic to stderr on failure.
int run_cli(int argc, const char* const* argv);

struct AblationRow {
    Components components;
    std::string label;  // "none", "DS", "DS+DF", ...
    ApResult result;
    std::filesystem::path run_dir;
};

/// The five component rows of the ablation table, baseline first.
std::vector<Components> default_ablation_combinations();

/// Trains one run per combination under `out_dir/<label>`, all with the
/// config's seed. Stage 1 does not depend on the components, so it is
/// trained once and copied into the other run directories.
std::vector<AblationRow> run_ablation(const Config& base, const Dataset& data, const std::filesystem::path& out_dir,
                                      const std::vector<Components>& combos, bool log_progress = false);

std::string ablation_csv(const std::vector<AblationRow>& rows);
/// Fixed-width table with one checkmark column per component.
std::string ablation_table(const std::vector<AblationRow>& rows);

/// Run directory name for a combination ("none", "ds", "ds_df", ...).
std::string run_dir_name(const Components& c);

}  // namespace dgseg
