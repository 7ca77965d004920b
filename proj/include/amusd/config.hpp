#pragma once

// Run configuration, stored as JSON:
//
// {
//   "seed": 42,
//   "model":     {"kind": "hash_chain", "vocab_size": 32000, "eos_token": 2, "rho": 0.8,
//                 "eos_in_range": true, "eos_position": null,
//                 "script_path": null, "script_offset": null},
//   "decode":    {"max_new_tokens": 128, "draft_window_k": 4, "max_draft_lead": null,
//                 "prompt": [1, 2, 3, 4]},
//   "latency":   {"draft_base_ms": 0, "draft_per_token_ms": 10, "verify_base_ms": 25,
//                 "verify_per_token_ms": 0, "rollback_overhead_ms": 0},
//   "execution": {"backend": "simulate", "strategies": ["autoregressive", "sync_speculative", "amusd"],
//                 "out_dir": "runs", "trials": 1, "inject_sleep": false}
// }
//
// Every field is optional; omitted fields take the defaults shown. The
// verify model is built from the model section; the draft model agrees with
// it with probability rho.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "amusd/engines.hpp"
#include "amusd/latency.hpp"
#include "amusd/model.hpp"
#include "amusd/simulator.hpp"

namespace amusd {

enum class BackendKind { concurrent, simulate };

std::string_view to_string(BackendKind kind) noexcept;
std::optional<BackendKind> parse_backend_kind(std::string_view name) noexcept;

struct ModelSection {
    ModelKind kind = ModelKind::hash_chain;
    std::uint32_t vocab_size = 32000;
    TokenId eos_token = 2;
    double rho = 0.8;
    bool eos_in_range = true;
    std::optional<std::size_t> eos_position;
    /// Scripted verify model: a JSON array or whitespace-separated list of token ids.
    std::optional<std::string> script_path;
    /// Absolute position of the first scripted token; defaults to prompt length + 1.
    std::optional<std::size_t> script_offset;

    friend bool operator==(const ModelSection&, const ModelSection&) = default;
};

struct DecodeSection {
    std::size_t max_new_tokens = 128;
    std::size_t draft_window_k = 4;
    std::optional<std::size_t> max_draft_lead;
    std::vector<TokenId> prompt{1, 2, 3, 4};

    friend bool operator==(const DecodeSection&, const DecodeSection&) = default;
};

struct ExecutionSection {
    BackendKind backend = BackendKind::simulate;
    std::vector<EngineKind> strategies{EngineKind::autoregressive, EngineKind::sync_speculative,
                                       EngineKind::amusd};
    std::string out_dir = "runs";
    std::size_t trials = 1;
    /// Concurrent backend only: sleep for the modeled latency of each forward.
    bool inject_sleep = false;

    friend bool operator==(const ExecutionSection&, const ExecutionSection&) = default;
};

struct RunConfig {
    std::uint64_t seed = 42;
    ModelSection model;
    DecodeSection decode;
    LatencyModel latency;
    ExecutionSection execution;

    DecodeConfig decode_config(std::size_t trial = 0) const;
    /// Seed used by a trial; trial 0 uses the config seed itself.
    std::uint64_t trial_seed(std::size_t trial) const noexcept { return seed + trial; }

    /// Throws ConfigError naming the offending field.
    void validate() const;

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Parses and validates. Syntax errors carry the line number; semantic
/// errors name the field and, where it can be found, its line.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::json to_json(const RunConfig& config);
std::string serialize_run_config(const RunConfig& config);

/// Reads a token list: a JSON array, or integers separated by whitespace or commas.
std::vector<TokenId> load_token_list(const std::filesystem::path& path);

/// Draft and verify models for one trial. Relative script paths resolve
/// against `base_dir`.
ModelPair build_models(const RunConfig& config, std::size_t trial,
                       const std::filesystem::path& base_dir = {});

}  // namespace amusd
