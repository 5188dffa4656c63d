#pragma once

#include <filesystem>
#include <string>

#include "run_config.hpp"

namespace mvcl::cli {

/// Creates `<out>/<command>-<UTC timestamp>[-k]`, points `<out>/LATEST` at it
/// and writes the resolved configuration to `config.resolved` inside it.
std::filesystem::path open_run_dir(const RunConfig& config, const std::string& command);

// Each command writes only inside `run_dir` and returns nothing; failures are
// reported as mvcl::Error.
void cmd_gen_synthetic(const RunConfig& config, const std::filesystem::path& run_dir);
void cmd_extract_views(const RunConfig& config, const std::filesystem::path& run_dir);
void cmd_pretrain(RunConfig& config, const std::filesystem::path& run_dir);
void cmd_linear_eval(const RunConfig& config, const std::filesystem::path& run_dir);
void cmd_finetune(const RunConfig& config, const std::filesystem::path& run_dir);
void cmd_report(const RunConfig& config, const std::filesystem::path& run_dir);

/// Fills the empty optimizer keys from the preset so the snapshot is complete.
void resolve_optimizer_keys(RunConfig& config);

}  // namespace mvcl::cli
