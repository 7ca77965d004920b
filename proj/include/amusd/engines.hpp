#pragma once

// Decoding strategies. decode_autoregressive is the reference: every other
// engine must reproduce its tokens and termination cause exactly.
//
// Each engine is written as step functions so the same code runs directly,
// on two threads (AMUSD), or interleaved under the virtual clock.

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "amusd/coordination.hpp"
#include "amusd/latency.hpp"
#include "amusd/metrics.hpp"
#include "amusd/model.hpp"

namespace amusd {

struct DecodeConfig {
    std::size_t max_new_tokens = 128;
    /// Draft tokens per round of the synchronous baseline.
    std::size_t draft_window_k = 4;
    /// AMUSD draft idles while p_d - p_v >= this. Unbounded when empty.
    std::optional<std::size_t> max_draft_lead;
    std::uint64_t seed = 0;

    void validate() const;
};

enum class FinishReason { eos, length_limit };

std::string_view to_string(FinishReason reason) noexcept;

struct DecodeResult {
    std::vector<TokenId> tokens;
    FinishReason finished_by = FinishReason::length_limit;
    DecodeStats stats;
};

/// 1-based index of the first position where the sequences differ.
std::optional<std::size_t> find_mismatch(std::span<const TokenId> candidates,
                                         std::span<const TokenId> predictions);

// --- Autoregressive -----------------------------------------------------------

class AutoregressiveDecoder {
public:
    AutoregressiveDecoder(ModelPtr verify, std::span<const TokenId> prompt, DecodeConfig config);

    struct Step {
        std::size_t position = 0;
        TokenId token = 0;
        bool completed = false;
    };

    /// One verify forward, one token.
    Step step();

    bool done() const noexcept { return done_; }
    std::size_t prompt_length() const noexcept { return prompt_length_; }
    const std::vector<TokenId>& tokens() const noexcept { return tokens_; }
    FinishReason finish_reason() const noexcept { return reason_; }

private:
    ModelPtr verify_;
    DecodeConfig config_;
    ModelState state_;
    std::size_t prompt_length_;
    std::vector<TokenId> tokens_;
    bool done_ = false;
    FinishReason reason_ = FinishReason::length_limit;
};

// --- Synchronous speculative ---------------------------------------------------

/// Rounds of {draft up to k tokens; verify them in one forward; accept the
/// matched prefix plus one verify token (correction or bonus)}.
class SyncSpeculativeDecoder {
public:
    SyncSpeculativeDecoder(ModelPtr draft, ModelPtr verify, std::span<const TokenId> prompt,
                           DecodeConfig config);

    enum class Phase { draft, verify, done };

    struct DraftStep {
        std::size_t position = 0;
        TokenId token = 0;
    };

    struct VerifyStep {
        std::size_t first_position = 0;
        std::size_t appended = 0;
        std::size_t matched = 0;
        std::size_t candidates = 0;
        bool corrected = false;
        bool completed = false;
    };

    Phase phase() const noexcept;
    DraftStep draft_step();
    VerifyStep verify_step();

    std::size_t round_size() const noexcept { return round_target_; }
    std::size_t prompt_length() const noexcept { return prompt_length_; }
    const std::vector<TokenId>& tokens() const noexcept { return tokens_; }
    FinishReason finish_reason() const noexcept { return reason_; }

private:
    void start_round();

    ModelPtr draft_;
    ModelPtr verify_;
    DecodeConfig config_;
    ModelState draft_state_;
    ModelState verify_state_;
    std::size_t prompt_length_;
    std::vector<TokenId> tokens_;
    std::vector<TokenId> candidates_;
    std::size_t round_target_ = 0;
    bool done_ = false;
    FinishReason reason_ = FinishReason::length_limit;
};

// --- AMUSD loop steps -----------------------------------------------------------

enum class DraftStatus { generated, rolled_back, idle, stopped };

struct DraftStep {
    DraftStatus status = DraftStatus::idle;
    /// generated: position of the published token.
    std::size_t position = 0;
    TokenId token = 0;
    /// rolled_back: the request that was acknowledged, and p_d before it.
    RollbackRequest rollback;
    std::size_t p_d_before = 0;
};

/// True when draft_loop_step would generate a token right now.
bool draft_would_generate(const SharedDecodeState& shared, std::optional<std::size_t> max_draft_lead);

/// Priority: completion -> stopped; pending rollback -> acknowledge;
/// lead cap or full buffer -> idle; otherwise generate and publish one token.
DraftStep draft_loop_step(SharedDecodeState& shared, const Model& draft_model, ModelState& draft_state,
                          std::optional<std::size_t> max_draft_lead);

enum class VerifyStatus { accepted, corrected, idle, done };

/// A window read from D together with the verify model's predictions for it.
struct VerifyBatch {
    std::size_t first_position = 0;
    std::vector<TokenId> candidates;
    std::vector<TokenId> predictions;
};

struct VerifyStep {
    VerifyStatus status = VerifyStatus::idle;
    std::size_t first_position = 0;
    /// Tokens appended to V (matched drafts plus the correction, if any).
    std::size_t appended = 0;
    std::size_t matched = 0;
    bool corrected = false;
    /// This step signaled completion.
    bool completed = false;
};

/// Reads the draft window and scores it. Empty when there is nothing to
/// verify: completion signaled, a rollback pending, or p_d == p_v.
std::optional<VerifyBatch> begin_verify(const SharedDecodeState& shared, const Model& verify_model,
                                        const ModelState& verify_state);

/// Publishes the accepted tokens, requests a rollback on mismatch and
/// signals completion on eos or |V| == N.
VerifyStep commit_verify(SharedDecodeState& shared, const Model& verify_model, ModelState& verify_state,
                         const VerifyBatch& batch);

/// begin_verify followed by commit_verify.
VerifyStep verify_loop_step(SharedDecodeState& shared, const Model& verify_model, ModelState& verify_state);

FinishReason finish_reason_of(const SharedDecodeState& shared, TokenId eos_token);

// --- Drivers ------------------------------------------------------------------------

/// Two threads polling the shared state.
struct ConcurrentBackend {
    /// Sleep for the modeled forward cost before each forward.
    std::optional<LatencyModel> inject_latency;
    /// Random yields/sleeps between steps, to vary the interleaving.
    bool jitter = false;
    std::uint64_t jitter_seed = 0;
    std::chrono::microseconds max_backoff{200};
    ProtocolMonitor* monitor = nullptr;
};

/// Virtual-clock execution through the simulator.
struct SimulatedBackend {
    LatencyModel latency;
};

using Backend = std::variant<ConcurrentBackend, SimulatedBackend>;

// The serial drivers run on the calling thread. `inject_latency` sleeps for
// the modeled cost before each forward, as ConcurrentBackend does.
DecodeResult decode_autoregressive(ModelPtr verify, std::span<const TokenId> prompt,
                                   const DecodeConfig& config, DecodeTrace* trace = nullptr,
                                   const std::optional<LatencyModel>& inject_latency = std::nullopt);

DecodeResult decode_speculative_sync(ModelPtr draft, ModelPtr verify, std::span<const TokenId> prompt,
                                     const DecodeConfig& config, DecodeTrace* trace = nullptr,
                                     const std::optional<LatencyModel>& inject_latency = std::nullopt);

DecodeResult decode_amusd(ModelPtr draft, ModelPtr verify, std::span<const TokenId> prompt,
                          const DecodeConfig& config, const Backend& backend = ConcurrentBackend{},
                          DecodeTrace* trace = nullptr);

}  // namespace amusd
