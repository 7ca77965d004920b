#pragma once

// Command-line front end. Subcommands:
//
//   amusd run     [--config FILE] [--seed N] [--backend concurrent|simulate] [--out-dir DIR]
//   amusd compare [--config FILE] [--seed N] [--backend ...] [--out-dir DIR]
//   amusd trace   --run-id ID [--config FILE] [--out-dir DIR] [--format csv|json] [--output FILE]
//
// Each run writes <out_dir>/<strategy>-<trial>/{tokens.json,stats.json,trace.csv}.

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>

#include "amusd/config.hpp"
#include "amusd/engines.hpp"
#include "amusd/metrics.hpp"
#include "amusd/simulator.hpp"

namespace amusd::cli {

enum ExitCode : int {
    exit_ok = 0,
    exit_failure = 1,  // config or runtime error
    exit_usage = 2,
    exit_mismatch = 3,  // outputs differ across strategies, or a protocol violation
};

struct RunOutput {
    EngineKind engine = EngineKind::autoregressive;
    std::size_t trial = 0;
    DecodeResult result;
    DecodeTrace trace;
};

std::string run_id(EngineKind engine, std::size_t trial);

/// One strategy, one trial. Relative script paths resolve against `base_dir`.
RunOutput execute_run(const RunConfig& config, EngineKind engine, std::size_t trial,
                      const std::filesystem::path& base_dir = {});

void write_run_artifacts(const std::filesystem::path& dir, const RunOutput& run);

int cmd_run(const RunConfig& config, const std::filesystem::path& base_dir, std::ostream& out,
            std::ostream& err);
int cmd_compare(const RunConfig& config, const std::filesystem::path& base_dir, std::ostream& out,
                std::ostream& err);

enum class TraceFormat { csv, json };

/// Emits the tokens-over-time series of a stored run, to `output` or `out`.
int cmd_trace(const RunConfig& config, std::string_view id, TraceFormat format,
              const std::filesystem::path& output, std::ostream& out, std::ostream& err);

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace amusd::cli
