#pragma once

// Shared decode state for the asynchronous draft/verify protocol.
//
// D (draft tokens) is written only by the draft loop and V (verified tokens)
// only by the verify loop, so neither buffer is locked. Each buffer publishes
// a token by storing it into a preallocated slot and then release-storing the
// new length; a reader that acquire-loads a length can read every slot below
// it. Positions are absolute: p_d = prompt_length + |D|, p_v = prompt_length + |V|.
//
// Rollback handshake:
//   verify: publish_verified(matched + correction); request_rollback({t, c})
//   draft:  acknowledge_rollback -> crop S_d to t-1, advance with c,
//           D := V[..t], p_d := t, clear R
// The verify loop neither reads D nor extends V while R is raised.

#include <atomic>
#include <cstddef>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "amusd/model.hpp"

namespace amusd {

/// Fixed-capacity single-writer token buffer with release/acquire publication.
class TokenBuffer {
public:
    explicit TokenBuffer(std::size_t capacity);

    std::size_t capacity() const noexcept { return capacity_; }
    std::size_t size() const noexcept { return size_.load(std::memory_order_acquire); }
    bool full() const noexcept { return size() == capacity_; }

    /// Valid for index < an observed size().
    TokenId at(std::size_t index) const noexcept {
        return slots_[index].load(std::memory_order_relaxed);
    }

    /// Tokens [first, last) as of the caller's observation of size().
    std::vector<TokenId> copy(std::size_t first, std::size_t last) const;

    void push(TokenId token);
    /// Shrinks the buffer to new_size (>= 1) and replaces its last token, with
    /// a single size store. Only the rollback path on D calls this.
    void rewind(std::size_t new_size, TokenId last);

private:
    void claim_writer();

    std::size_t capacity_;
    std::unique_ptr<std::atomic<TokenId>[]> slots_;
    std::atomic<std::size_t> size_{0};
    std::atomic<std::thread::id> writer_{};
};

struct RollbackRequest {
    /// Absolute position of the correction token in V.
    std::size_t target = 0;
    TokenId correction_token = 0;

    friend bool operator==(const RollbackRequest&, const RollbackRequest&) = default;
};

class SharedDecodeState;

/// Observation hooks, called on the thread performing the operation. Used by
/// tests to check protocol invariants under real concurrency.
class ProtocolMonitor {
public:
    virtual ~ProtocolMonitor() = default;
    virtual void on_draft_publish(std::size_t /*p_d_before*/, std::size_t /*p_d_after*/) {}
    virtual void on_window_read(std::size_t /*p_v*/, std::size_t /*p_d*/, bool /*rollback_pending*/) {}
    virtual void on_verified_publish(std::size_t /*p_v_before*/, std::size_t /*p_v_after*/,
                                     bool /*rollback_pending*/) {}
    virtual void on_rollback_ack(const SharedDecodeState& /*shared*/, const RollbackRequest& /*req*/,
                                 std::size_t /*p_d_before*/) {}
};

/// Counts invariant violations seen through ProtocolMonitor callbacks.
class InvariantChecker final : public ProtocolMonitor {
public:
    void on_draft_publish(std::size_t p_d_before, std::size_t p_d_after) override;
    void on_window_read(std::size_t p_v, std::size_t p_d, bool rollback_pending) override;
    void on_verified_publish(std::size_t p_v_before, std::size_t p_v_after,
                             bool rollback_pending) override;
    void on_rollback_ack(const SharedDecodeState& shared, const RollbackRequest& req,
                         std::size_t p_d_before) override;

    std::size_t violations() const noexcept { return violations_.load(); }
    std::size_t acks() const noexcept { return acks_.load(); }
    std::size_t verify_publishes() const noexcept { return publishes_.load(); }
    std::vector<std::string> messages() const;

private:
    void fail(std::string message);

    std::atomic<std::size_t> violations_{0};
    std::atomic<std::size_t> acks_{0};
    std::atomic<std::size_t> publishes_{0};
    std::size_t last_p_v_ = 0;  // verify thread only
    mutable std::mutex mutex_;
    std::vector<std::string> messages_;
};

class SharedDecodeState {
public:
    /// D and V each hold at most max_new_tokens generated tokens.
    SharedDecodeState(std::size_t prompt_length, std::size_t max_new_tokens);

    SharedDecodeState(const SharedDecodeState&) = delete;
    SharedDecodeState& operator=(const SharedDecodeState&) = delete;

    std::size_t prompt_length() const noexcept { return prompt_length_; }
    std::size_t max_new_tokens() const noexcept { return max_new_tokens_; }

    std::size_t draft_position() const noexcept { return prompt_length_ + draft_.size(); }
    std::size_t verified_position() const noexcept { return prompt_length_ + verified_.size(); }

    const TokenBuffer& draft_buffer() const noexcept { return draft_; }
    const TokenBuffer& verified_buffer() const noexcept { return verified_; }

    /// Generated tokens in V, excluding the prompt.
    std::vector<TokenId> verified_tokens() const;

    // Draft side.
    bool draft_full() const noexcept { return draft_.full(); }
    void publish_draft_token(TokenId token);
    /// Consumes the pending request; returns it.
    RollbackRequest acknowledge_rollback(const Model& draft_model, ModelState& draft_state);

    // Verify side.
    /// Tokens at absolute positions (p_v, p_d]; empty means wait.
    std::vector<TokenId> read_draft_window() const;
    void publish_verified(std::span<const TokenId> tokens);
    void request_rollback(const RollbackRequest& req);
    void signal_completion();

    bool rollback_pending() const noexcept { return rollback_pending_.load(std::memory_order_acquire); }
    std::optional<RollbackRequest> pending_rollback() const;
    bool is_complete() const noexcept { return complete_.load(std::memory_order_acquire); }

    /// Stops both loops after a failure on either side.
    void abort() noexcept { aborted_.store(true, std::memory_order_release); }
    bool is_aborted() const noexcept { return aborted_.load(std::memory_order_acquire); }

    /// Rollback acknowledgments that have started / finished. Incremented
    /// around the p_d decrease so an outside observer can attribute it.
    std::size_t acks_begun() const noexcept { return acks_begun_.load(); }
    std::size_t acks_completed() const noexcept { return acks_completed_.load(); }

    void set_monitor(ProtocolMonitor* monitor) noexcept { monitor_ = monitor; }

private:
    std::size_t prompt_length_;
    std::size_t max_new_tokens_;
    TokenBuffer draft_;
    TokenBuffer verified_;

    std::atomic<bool> rollback_pending_{false};
    std::size_t rollback_target_ = 0;      // written before rollback_pending_ is raised
    TokenId rollback_correction_ = 0;

    std::atomic<bool> complete_{false};
    std::atomic<bool> aborted_{false};
    std::atomic<std::size_t> acks_begun_{0};
    std::atomic<std::size_t> acks_completed_{0};

    ProtocolMonitor* monitor_ = nullptr;
};

}  // namespace amusd
