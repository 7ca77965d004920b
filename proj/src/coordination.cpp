#include "amusd/coordination.hpp"

#include <fmt/format.h>

#include "amusd/errors.hpp"

namespace amusd {

TokenBuffer::TokenBuffer(std::size_t capacity)
    : capacity_(capacity), slots_(std::make_unique<std::atomic<TokenId>[]>(capacity)) {}

void TokenBuffer::claim_writer() {
    const auto self = std::this_thread::get_id();
    auto expected = std::thread::id{};
    if (writer_.compare_exchange_strong(expected, self)) return;
    if (expected != self) throw ProtocolViolation("token buffer written by a second thread");
}

std::vector<TokenId> TokenBuffer::copy(std::size_t first, std::size_t last) const {
    std::vector<TokenId> out;
    if (last <= first) return out;
    out.reserve(last - first);
    for (std::size_t i = first; i < last; ++i) out.push_back(at(i));
    return out;
}

void TokenBuffer::push(TokenId token) {
    claim_writer();
    const auto n = size_.load(std::memory_order_relaxed);
    if (n == capacity_) throw ProtocolViolation("token buffer capacity exceeded");
    slots_[n].store(token, std::memory_order_relaxed);
    size_.store(n + 1, std::memory_order_seq_cst);
}

void TokenBuffer::rewind(std::size_t new_size, TokenId last) {
    claim_writer();
    if (new_size == 0 || new_size > size_.load(std::memory_order_relaxed)) {
        throw ProtocolViolation("rewind target outside the buffer");
    }
    slots_[new_size - 1].store(last, std::memory_order_relaxed);
    size_.store(new_size, std::memory_order_seq_cst);
}

// --- InvariantChecker -------------------------------------------------------

void InvariantChecker::fail(std::string message) {
    violations_.fetch_add(1);
    std::lock_guard lock(mutex_);
    messages_.push_back(std::move(message));
}

std::vector<std::string> InvariantChecker::messages() const {
    std::lock_guard lock(mutex_);
    return messages_;
}

void InvariantChecker::on_draft_publish(std::size_t p_d_before, std::size_t p_d_after) {
    if (p_d_after != p_d_before + 1) {
        fail(fmt::format("draft publish moved p_d {} -> {}", p_d_before, p_d_after));
    }
}

void InvariantChecker::on_window_read(std::size_t p_v, std::size_t p_d, bool rollback_pending) {
    if (rollback_pending) fail(fmt::format("window read at p_v={} during pending rollback", p_v));
    if (p_v > p_d) fail(fmt::format("window read with p_v={} > p_d={}", p_v, p_d));
}

void InvariantChecker::on_verified_publish(std::size_t p_v_before, std::size_t p_v_after,
                                           bool rollback_pending) {
    publishes_.fetch_add(1);
    if (rollback_pending) fail(fmt::format("verified publish at p_v={} during pending rollback", p_v_before));
    if (p_v_after <= p_v_before || p_v_before < last_p_v_) {
        fail(fmt::format("p_v not monotone: last {}, {} -> {}", last_p_v_, p_v_before, p_v_after));
    }
    last_p_v_ = p_v_after;
}

void InvariantChecker::on_rollback_ack(const SharedDecodeState& shared, const RollbackRequest& req,
                                       std::size_t p_d_before) {
    acks_.fetch_add(1);
    const auto p_d = shared.draft_position();
    const auto p_v = shared.verified_position();
    if (p_d != req.target || p_d > p_d_before) {
        fail(fmt::format("ack moved p_d {} -> {} for target {}", p_d_before, p_d, req.target));
    }
    if (p_d != p_v) fail(fmt::format("after ack p_d={} != p_v={}", p_d, p_v));
    const auto n = p_d - shared.prompt_length();
    for (std::size_t i = 0; i < n; ++i) {
        if (shared.draft_buffer().at(i) != shared.verified_buffer().at(i)) {
            fail(fmt::format("after ack D and V differ at generated index {}", i));
            break;
        }
    }
}

// --- SharedDecodeState -------------------------------------------------------

SharedDecodeState::SharedDecodeState(std::size_t prompt_length, std::size_t max_new_tokens)
    : prompt_length_(prompt_length),
      max_new_tokens_(max_new_tokens),
      draft_(max_new_tokens),
      verified_(max_new_tokens) {
    if (max_new_tokens == 0) throw InvalidInput("max_new_tokens must be at least 1");
}

std::vector<TokenId> SharedDecodeState::verified_tokens() const {
    return verified_.copy(0, verified_.size());
}

void SharedDecodeState::publish_draft_token(TokenId token) {
    const auto before = draft_position();
    draft_.push(token);
    if (monitor_) monitor_->on_draft_publish(before, draft_position());
}

RollbackRequest SharedDecodeState::acknowledge_rollback(const Model& draft_model,
                                                        ModelState& draft_state) {
    if (!rollback_pending()) throw ProtocolViolation("acknowledge_rollback without a pending request");
    const RollbackRequest req{rollback_target_, rollback_correction_};
    const auto p_d_before = draft_position();
    if (req.target <= prompt_length_ || req.target > p_d_before) {
        throw ProtocolViolation(fmt::format("rollback target {} outside ({}, {}]", req.target,
                                            prompt_length_, p_d_before));
    }

    draft_model.rollback_state(draft_state, req.target - 1);
    const TokenId correction[] = {req.correction_token};
    draft_model.advance(draft_state, correction);

    acks_begun_.fetch_add(1);
    draft_.rewind(req.target - prompt_length_, req.correction_token);
    acks_completed_.fetch_add(1);

    if (monitor_) monitor_->on_rollback_ack(*this, req, p_d_before);
    rollback_pending_.store(false, std::memory_order_release);
    return req;
}

std::vector<TokenId> SharedDecodeState::read_draft_window() const {
    const bool pending = rollback_pending();
    const auto p_d = draft_.size();
    const auto p_v = verified_.size();
    if (monitor_) monitor_->on_window_read(prompt_length_ + p_v, prompt_length_ + p_d, pending);
    if (pending) throw ProtocolViolation("read_draft_window while a rollback is pending");
    return draft_.copy(p_v, p_d);
}

void SharedDecodeState::publish_verified(std::span<const TokenId> tokens) {
    const bool pending = rollback_pending();
    const auto before = verified_position();
    if (monitor_ && !tokens.empty()) {
        monitor_->on_verified_publish(before, before + tokens.size(), pending);
    }
    if (pending) throw ProtocolViolation("publish_verified while a rollback is pending");
    for (TokenId t : tokens) verified_.push(t);
}

void SharedDecodeState::request_rollback(const RollbackRequest& req) {
    if (rollback_pending()) throw ProtocolViolation("rollback requested while another is pending");
    const auto p_v = verified_position();
    if (req.target != p_v || req.target <= prompt_length_) {
        throw ProtocolViolation(
            fmt::format("rollback target {} is not the verified frontier {}", req.target, p_v));
    }
    if (verified_.at(req.target - prompt_length_ - 1) != req.correction_token) {
        throw ProtocolViolation("correction token must already be published to V");
    }
    rollback_target_ = req.target;
    rollback_correction_ = req.correction_token;
    rollback_pending_.store(true, std::memory_order_release);
}

std::optional<RollbackRequest> SharedDecodeState::pending_rollback() const {
    if (!rollback_pending()) return std::nullopt;
    return RollbackRequest{rollback_target_, rollback_correction_};
}

void SharedDecodeState::signal_completion() {
    complete_.store(true, std::memory_order_release);
}

}  // namespace amusd
