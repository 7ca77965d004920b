#include "amusd/engines.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include <fmt/format.h>

#include "amusd/errors.hpp"
#include "amusd/simulator.hpp"

namespace amusd {

void LatencyModel::validate() const {
    const std::pair<const char*, double> fields[] = {
        {"draft_base_ms", draft_base_ms},         {"draft_per_token_ms", draft_per_token_ms},
        {"verify_base_ms", verify_base_ms},       {"verify_per_token_ms", verify_per_token_ms},
        {"rollback_overhead_ms", rollback_overhead_ms}};
    for (const auto& [name, value] : fields) {
        if (!std::isfinite(value) || value < 0.0) {
            throw InvalidInput(fmt::format("latency.{} must be a non-negative number, got {}", name, value));
        }
    }
}

void DecodeConfig::validate() const {
    if (max_new_tokens == 0) throw InvalidInput("max_new_tokens must be at least 1");
    if (draft_window_k == 0) throw InvalidInput("draft_window_k must be at least 1");
    if (max_draft_lead && *max_draft_lead == 0) throw InvalidInput("max_draft_lead must be at least 1");
}

std::string_view to_string(FinishReason reason) noexcept {
    return reason == FinishReason::eos ? "eos" : "length_limit";
}

std::optional<std::size_t> find_mismatch(std::span<const TokenId> candidates,
                                         std::span<const TokenId> predictions) {
    if (candidates.size() != predictions.size()) {
        throw InvalidInput(fmt::format("find_mismatch: {} candidates vs {} predictions",
                                       candidates.size(), predictions.size()));
    }
    const auto [c, p] = std::mismatch(candidates.begin(), candidates.end(), predictions.begin());
    if (c == candidates.end()) return std::nullopt;
    return static_cast<std::size_t>(c - candidates.begin()) + 1;
}

namespace {

/// Cuts `tokens` right after the first eos. Returns true if one was found.
bool truncate_at_eos(std::vector<TokenId>& tokens, TokenId eos) {
    const auto it = std::find(tokens.begin(), tokens.end(), eos);
    if (it == tokens.end()) return false;
    tokens.erase(it + 1, tokens.end());
    return true;
}

}  // namespace

// --- AutoregressiveDecoder ------------------------------------------------------

AutoregressiveDecoder::AutoregressiveDecoder(ModelPtr verify, std::span<const TokenId> prompt,
                                             DecodeConfig config)
    : verify_(std::move(verify)),
      config_(config),
      state_(verify_->init_state(prompt)),
      prompt_length_(prompt.size()) {
    config_.validate();
    tokens_.reserve(config_.max_new_tokens);
}

AutoregressiveDecoder::Step AutoregressiveDecoder::step() {
    if (done_) throw ProtocolViolation("autoregressive decoder stepped after completion");
    const TokenId token = verify_->next_token(state_);
    const TokenId one[] = {token};
    verify_->advance(state_, one);
    tokens_.push_back(token);
    if (token == verify_->eos_token()) {
        done_ = true;
        reason_ = FinishReason::eos;
    } else if (tokens_.size() >= config_.max_new_tokens) {
        done_ = true;
        reason_ = FinishReason::length_limit;
    }
    return {prompt_length_ + tokens_.size(), token, done_};
}

// --- SyncSpeculativeDecoder -------------------------------------------------------

SyncSpeculativeDecoder::SyncSpeculativeDecoder(ModelPtr draft, ModelPtr verify,
                                               std::span<const TokenId> prompt, DecodeConfig config)
    : draft_(std::move(draft)),
      verify_(std::move(verify)),
      config_(config),
      draft_state_(draft_->init_state(prompt)),
      verify_state_(verify_->init_state(prompt)),
      prompt_length_(prompt.size()) {
    config_.validate();
    start_round();
}

void SyncSpeculativeDecoder::start_round() {
    candidates_.clear();
    const auto remaining = config_.max_new_tokens - tokens_.size();
    // A round appends at most round_target_ + 1 tokens.
    round_target_ = std::min(config_.draft_window_k, remaining - 1);
}

SyncSpeculativeDecoder::Phase SyncSpeculativeDecoder::phase() const noexcept {
    if (done_) return Phase::done;
    return candidates_.size() < round_target_ ? Phase::draft : Phase::verify;
}

SyncSpeculativeDecoder::DraftStep SyncSpeculativeDecoder::draft_step() {
    if (phase() != Phase::draft) throw ProtocolViolation("sync decoder: draft step out of phase");
    const TokenId token = draft_->next_token(draft_state_);
    const TokenId one[] = {token};
    draft_->advance(draft_state_, one);
    candidates_.push_back(token);
    return {prompt_length_ + tokens_.size() + candidates_.size(), token};
}

SyncSpeculativeDecoder::VerifyStep SyncSpeculativeDecoder::verify_step() {
    if (phase() != Phase::verify) throw ProtocolViolation("sync decoder: verify step out of phase");
    const std::size_t frontier = prompt_length_ + tokens_.size();

    std::vector<TokenId> accepted;
    std::size_t matched = 0;
    std::size_t verify_advanced = 0;  // accepted tokens already in verify_state_
    bool correction = false;

    if (candidates_.empty()) {
        accepted.push_back(verify_->next_token(verify_state_));
    } else {
        const auto predictions = verify_->verify_tokens(verify_state_, candidates_);
        if (const auto m = find_mismatch(candidates_, predictions)) {
            matched = *m - 1;
            accepted.assign(candidates_.begin(), candidates_.begin() + static_cast<std::ptrdiff_t>(matched));
            accepted.push_back(predictions[matched]);
            correction = true;
        } else {
            // Full match: the same forward also yields the next (bonus) token.
            matched = candidates_.size();
            accepted = candidates_;
            verify_->advance(verify_state_, candidates_);
            verify_advanced = candidates_.size();
            accepted.push_back(verify_->next_token(verify_state_));
        }
    }

    const bool eos = truncate_at_eos(accepted, verify_->eos_token());
    matched = std::min(matched, accepted.size());
    correction = correction && accepted.size() == matched + 1;

    if (accepted.size() > verify_advanced) {
        verify_->advance(verify_state_, std::span(accepted).subspan(verify_advanced));
    }
    draft_->rollback_state(draft_state_, frontier + matched);
    if (accepted.size() > matched) draft_->advance(draft_state_, std::span(accepted).subspan(matched));

    tokens_.insert(tokens_.end(), accepted.begin(), accepted.end());
    VerifyStep step{frontier + 1, accepted.size(), matched, candidates_.size(), correction, false};

    if (eos) {
        done_ = true;
        reason_ = FinishReason::eos;
    } else if (tokens_.size() >= config_.max_new_tokens) {
        done_ = true;
        reason_ = FinishReason::length_limit;
    }
    step.completed = done_;
    if (!done_) start_round();
    return step;
}

// --- AMUSD loop steps ---------------------------------------------------------------

bool draft_would_generate(const SharedDecodeState& shared, std::optional<std::size_t> max_draft_lead) {
    if (shared.is_complete() || shared.is_aborted() || shared.rollback_pending()) return false;
    if (shared.draft_full()) return false;
    if (max_draft_lead) {
        const auto p_v = shared.verified_position();
        const auto p_d = shared.draft_position();
        if (p_d >= p_v && p_d - p_v >= *max_draft_lead) return false;
    }
    return true;
}

DraftStep draft_loop_step(SharedDecodeState& shared, const Model& draft_model, ModelState& draft_state,
                          std::optional<std::size_t> max_draft_lead) {
    DraftStep step;
    if (shared.is_complete() || shared.is_aborted()) {
        step.status = DraftStatus::stopped;
        return step;
    }
    if (shared.rollback_pending()) {
        step.p_d_before = shared.draft_position();
        step.rollback = shared.acknowledge_rollback(draft_model, draft_state);
        step.status = DraftStatus::rolled_back;
        step.position = shared.draft_position();
        return step;
    }
    if (!draft_would_generate(shared, max_draft_lead)) {
        step.status = DraftStatus::idle;
        return step;
    }
    const TokenId token = draft_model.next_token(draft_state);
    const TokenId one[] = {token};
    draft_model.advance(draft_state, one);
    shared.publish_draft_token(token);
    step.status = DraftStatus::generated;
    step.position = shared.draft_position();
    step.token = token;
    return step;
}

std::optional<VerifyBatch> begin_verify(const SharedDecodeState& shared, const Model& verify_model,
                                        const ModelState& verify_state) {
    if (shared.is_complete() || shared.is_aborted() || shared.rollback_pending()) return std::nullopt;
    auto window = shared.read_draft_window();
    if (window.empty()) return std::nullopt;
    VerifyBatch batch;
    batch.first_position = shared.verified_position() + 1;
    batch.predictions = verify_model.verify_tokens(verify_state, window);
    batch.candidates = std::move(window);
    return batch;
}

VerifyStep commit_verify(SharedDecodeState& shared, const Model& verify_model, ModelState& verify_state,
                         const VerifyBatch& batch) {
    if (batch.first_position != shared.verified_position() + 1 ||
        verify_state.prefix_length() != shared.verified_position()) {
        throw ProtocolViolation(fmt::format("stale verify batch at {} (p_v = {})", batch.first_position,
                                            shared.verified_position()));
    }
    std::vector<TokenId> accepted;
    std::size_t matched = batch.candidates.size();
    const auto mismatch = find_mismatch(batch.candidates, batch.predictions);
    if (mismatch) {
        matched = *mismatch - 1;
        accepted.assign(batch.candidates.begin(), batch.candidates.begin() + static_cast<std::ptrdiff_t>(matched));
        accepted.push_back(batch.predictions[matched]);
    } else {
        accepted = batch.candidates;
    }
    const bool eos = truncate_at_eos(accepted, verify_model.eos_token());
    matched = std::min(matched, accepted.size());
    const bool correction = mismatch && accepted.size() == matched + 1;

    shared.publish_verified(accepted);
    verify_model.advance(verify_state, accepted);
    if (correction) shared.request_rollback({shared.verified_position(), accepted.back()});

    VerifyStep step;
    step.first_position = batch.first_position;
    step.appended = accepted.size();
    step.matched = matched;
    step.corrected = correction;
    step.completed = eos || shared.verified_buffer().size() >= shared.max_new_tokens();
    if (step.completed) shared.signal_completion();
    step.status = step.completed ? VerifyStatus::done
                                 : (correction ? VerifyStatus::corrected : VerifyStatus::accepted);
    return step;
}

VerifyStep verify_loop_step(SharedDecodeState& shared, const Model& verify_model, ModelState& verify_state) {
    if (shared.is_complete() || shared.is_aborted()) return {VerifyStatus::done};
    auto batch = begin_verify(shared, verify_model, verify_state);
    if (!batch) return {VerifyStatus::idle};
    return commit_verify(shared, verify_model, verify_state, *batch);
}

FinishReason finish_reason_of(const SharedDecodeState& shared, TokenId eos_token) {
    const auto& v = shared.verified_buffer();
    const auto n = v.size();
    return n > 0 && v.at(n - 1) == eos_token ? FinishReason::eos : FinishReason::length_limit;
}

// --- Direct drivers ------------------------------------------------------------------

namespace {

using SteadyClock = std::chrono::steady_clock;

double elapsed_ms(SteadyClock::time_point start) {
    return std::chrono::duration<double, std::milli>(SteadyClock::now() - start).count();
}

void sleep_ms(double ms) {
    if (ms > 0.0) std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(ms));
}

}  // namespace

DecodeResult decode_autoregressive(ModelPtr verify, std::span<const TokenId> prompt,
                                   const DecodeConfig& config, DecodeTrace* trace,
                                   const std::optional<LatencyModel>& inject_latency) {
    AutoregressiveDecoder decoder(std::move(verify), prompt, config);
    TraceRecorder recorder(ClockKind::wall, prompt.size());
    const auto start = SteadyClock::now();
    while (!decoder.done()) {
        const double begin = elapsed_ms(start);
        if (inject_latency) sleep_ms(inject_latency->verify_cost(1));
        const auto step = decoder.step();
        const double end = elapsed_ms(start);
        recorder.record({end, begin, Actor::verify, EventKind::verify_accept, step.position, step.position, 0});
    }
    const double end = elapsed_ms(start);
    recorder.record({end, end, Actor::verify, EventKind::complete, 0, 0, 0});

    auto merged = recorder.merge();
    DecodeResult result{decoder.tokens(), decoder.finish_reason(), summarize(merged)};
    if (trace) *trace = std::move(merged);
    return result;
}

DecodeResult decode_speculative_sync(ModelPtr draft, ModelPtr verify, std::span<const TokenId> prompt,
                                     const DecodeConfig& config, DecodeTrace* trace,
                                     const std::optional<LatencyModel>& inject_latency) {
    SyncSpeculativeDecoder decoder(std::move(draft), std::move(verify), prompt, config);
    TraceRecorder recorder(ClockKind::wall, prompt.size());
    const auto start = SteadyClock::now();
    for (auto phase = decoder.phase(); phase != SyncSpeculativeDecoder::Phase::done; phase = decoder.phase()) {
        const double begin = elapsed_ms(start);
        if (phase == SyncSpeculativeDecoder::Phase::draft) {
            if (inject_latency) sleep_ms(inject_latency->draft_cost(1));
            const auto step = decoder.draft_step();
            recorder.record({elapsed_ms(start), begin, Actor::draft, EventKind::draft_token, step.position,
                             step.position, 0});
            continue;
        }
        if (inject_latency) sleep_ms(inject_latency->verify_cost(decoder.round_size()));
        const auto step = decoder.verify_step();
        const double end = elapsed_ms(start);
        const auto last = step.first_position + step.appended - 1;
        recorder.record({end, begin, Actor::verify,
                         step.corrected ? EventKind::verify_correct : EventKind::verify_accept,
                         step.first_position, last, step.matched});
        if (step.corrected && !step.completed) {
            recorder.record({end, end, Actor::draft, EventKind::rollback, last,
                             step.first_position + step.candidates - 1, 0});
        }
    }
    const double end = elapsed_ms(start);
    recorder.record({end, end, Actor::verify, EventKind::complete, 0, 0, 0});

    auto merged = recorder.merge();
    DecodeResult result{decoder.tokens(), decoder.finish_reason(), summarize(merged)};
    if (trace) *trace = std::move(merged);
    return result;
}

}  // namespace amusd
