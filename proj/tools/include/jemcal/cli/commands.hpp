#pragma once

// The jemcal subcommands as library calls. Each writes its outputs and the
// resolved config.yaml under `out`, and throws on failure; exit_code() maps
// an exception to the process exit status.

#include <exception>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "jemcal/cli/run_config.hpp"
#include "jemcal/model_io.hpp"

namespace jemcal::cli {

struct CommandContext {
  RunConfig config;
  std::filesystem::path out;
  std::optional<std::filesystem::path> model;
  std::optional<std::filesystem::path> predictions;
  Split split = Split::test;
  std::string method = "temperature";
  std::size_t n = 1000;
  std::ostream* log = nullptr;  // warnings and progress; nullptr silences
};

/// Generated or ingested dataset with splits applied, before any scaling.
Dataset build_dataset(const RunConfig& config);

/// Standardized with train statistics (when configured) and clipped to the box.
Dataset training_data(const RunConfig& config, std::ostream* log);

/// The same rows mapped with the normalization stored in `model`.
Dataset evaluation_data(const RunConfig& config, const ModelFile& model, std::ostream* log);

void cmd_train(const CommandContext& ctx);
void cmd_eval(const CommandContext& ctx);
void cmd_calibrate(const CommandContext& ctx);
void cmd_sample(const CommandContext& ctx);
void cmd_report(const CommandContext& ctx);

/// 2 for usage and validation errors, 1 for runtime failures.
int exit_code(const std::exception& e);

}  // namespace jemcal::cli
