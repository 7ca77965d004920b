#include "amusd/simulator.hpp"

#include "amusd/coordination.hpp"
#include "amusd/errors.hpp"

namespace amusd {

std::string_view to_string(EngineKind kind) noexcept {
    switch (kind) {
        case EngineKind::autoregressive: return "autoregressive";
        case EngineKind::sync_speculative: return "sync_speculative";
        case EngineKind::amusd: return "amusd";
    }
    return "unknown";
}

std::optional<EngineKind> parse_engine_kind(std::string_view name) noexcept {
    for (auto kind : {EngineKind::autoregressive, EngineKind::sync_speculative, EngineKind::amusd}) {
        if (to_string(kind) == name) return kind;
    }
    return std::nullopt;
}

// --- EventQueue ---------------------------------------------------------------

bool EventQueue::Later::operator()(const SimEvent& a, const SimEvent& b) const noexcept {
    if (a.timestamp != b.timestamp) return a.timestamp > b.timestamp;
    const auto rank = [](Actor actor) { return actor == Actor::verify ? 0 : 1; };
    if (rank(a.actor) != rank(b.actor)) return rank(a.actor) > rank(b.actor);
    return a.sequence > b.sequence;
}

void EventQueue::schedule(double timestamp, Actor actor, SimEventKind kind, std::size_t first,
                          std::size_t last) {
    heap_.push({timestamp, actor, kind, next_sequence_++, first, last});
}

SimEvent EventQueue::pop() {
    if (heap_.empty()) throw SimulatorError("pop from an empty event queue");
    SimEvent event = heap_.top();
    heap_.pop();
    return event;
}

DecodeTrace virtual_clock_run(EventQueue& queue, SimulationHandler& handler) {
    double clock = 0.0;
    while (!handler.finished()) {
        if (queue.empty()) throw SimulatorError("event queue drained before completion");
        const SimEvent event = queue.pop();
        if (event.timestamp < clock) throw SimulatorError("event scheduled in the past");
        clock = event.timestamp;
        handler.handle(event, queue);
    }
    return handler.trace();
}

namespace {

// --- Autoregressive: one verify forward per token --------------------------------

class AutoregressiveHandler final : public SimulationHandler {
public:
    AutoregressiveHandler(ModelPtr verify, std::span<const TokenId> prompt, const DecodeConfig& config,
                          const LatencyModel& latency)
        : decoder_(std::move(verify), prompt, config),
          latency_(latency),
          recorder_(ClockKind::virtual_clock, prompt.size()) {}

    void start(EventQueue& queue) override { begin_forward(0.0, queue); }

    void handle(const SimEvent& event, EventQueue& queue) override {
        if (event.kind == SimEventKind::completion) {
            recorder_.record({event.timestamp, event.timestamp, Actor::verify, EventKind::complete, 0, 0, 0});
            finished_ = true;
            return;
        }
        const auto step = decoder_.step();
        recorder_.record({event.timestamp, forward_start_, Actor::verify, EventKind::verify_accept,
                          step.position, step.position, 0});
        if (step.completed) {
            queue.schedule(event.timestamp, Actor::verify, SimEventKind::completion);
        } else {
            begin_forward(event.timestamp, queue);
        }
    }

    bool finished() const override { return finished_; }
    DecodeTrace trace() const override { return recorder_.merge(); }
    const AutoregressiveDecoder& decoder() const { return decoder_; }

private:
    void begin_forward(double now, EventQueue& queue) {
        forward_start_ = now;
        const auto position = decoder_.prompt_length() + decoder_.tokens().size() + 1;
        queue.schedule(now + latency_.verify_cost(1), Actor::verify, SimEventKind::forward_done, position,
                       position);
    }

    AutoregressiveDecoder decoder_;
    LatencyModel latency_;
    TraceRecorder recorder_;
    double forward_start_ = 0.0;
    bool finished_ = false;
};

// --- Synchronous speculative: draft and verify strictly alternate --------------------

class SyncHandler final : public SimulationHandler {
public:
    SyncHandler(ModelPtr draft, ModelPtr verify, std::span<const TokenId> prompt, const DecodeConfig& config,
                const LatencyModel& latency)
        : decoder_(std::move(draft), std::move(verify), prompt, config),
          latency_(latency),
          recorder_(ClockKind::virtual_clock, prompt.size()) {}

    void start(EventQueue& queue) override { next(0.0, queue); }

    void handle(const SimEvent& event, EventQueue& queue) override {
        const double now = event.timestamp;
        if (event.kind == SimEventKind::completion) {
            recorder_.record({now, now, Actor::verify, EventKind::complete, 0, 0, 0});
            finished_ = true;
            return;
        }
        if (event.actor == Actor::draft) {
            const auto step = decoder_.draft_step();
            recorder_.record({now, busy_since_, Actor::draft, EventKind::draft_token, step.position,
                              step.position, 0});
            next(now, queue);
            return;
        }
        const auto step = decoder_.verify_step();
        const auto last = step.first_position + step.appended - 1;
        recorder_.record({now, busy_since_, Actor::verify,
                          step.corrected ? EventKind::verify_correct : EventKind::verify_accept,
                          step.first_position, last, step.matched});
        if (step.corrected && !step.completed) {
            recorder_.record({now, now, Actor::draft, EventKind::rollback, last,
                              step.first_position + step.candidates - 1, 0});
        }
        if (step.completed) {
            queue.schedule(now, Actor::verify, SimEventKind::completion);
        } else {
            next(now, queue);
        }
    }

    bool finished() const override { return finished_; }
    DecodeTrace trace() const override { return recorder_.merge(); }
    const SyncSpeculativeDecoder& decoder() const { return decoder_; }

private:
    void next(double now, EventQueue& queue) {
        busy_since_ = now;
        if (decoder_.phase() == SyncSpeculativeDecoder::Phase::draft) {
            queue.schedule(now + latency_.draft_cost(1), Actor::draft, SimEventKind::forward_done);
        } else {
            const auto batch = std::max<std::size_t>(1, decoder_.round_size());
            queue.schedule(now + latency_.verify_cost(batch), Actor::verify, SimEventKind::forward_done);
        }
    }

    SyncSpeculativeDecoder decoder_;
    LatencyModel latency_;
    TraceRecorder recorder_;
    double busy_since_ = 0.0;
    bool finished_ = false;
};

// --- AMUSD: two actors sharing the decode state ---------------------------------------

class AmusdHandler final : public SimulationHandler {
public:
    AmusdHandler(ModelPtr draft, ModelPtr verify, std::span<const TokenId> prompt, const DecodeConfig& config,
                 const LatencyModel& latency)
        : draft_(std::move(draft)),
          verify_(std::move(verify)),
          config_(config),
          latency_(latency),
          shared_(prompt.size(), config.max_new_tokens),
          draft_state_(draft_->init_state(prompt)),
          verify_state_(verify_->init_state(prompt)),
          recorder_(ClockKind::virtual_clock, prompt.size()) {
        config_.validate();
    }

    void start(EventQueue& queue) override {
        try_start_verify(0.0, queue);
        try_start_draft(0.0, queue);
    }

    void handle(const SimEvent& event, EventQueue& queue) override {
        const double now = event.timestamp;
        switch (event.kind) {
            case SimEventKind::completion:
                recorder_.record({now, now, Actor::verify, EventKind::complete, 0, 0, 0});
                finished_ = true;
                return;
            case SimEventKind::wake:
                if (event.actor == Actor::draft) {
                    draft_wake_scheduled_ = false;
                    try_start_draft(now, queue);
                } else {
                    verify_wake_scheduled_ = false;
                    try_start_verify(now, queue);
                }
                return;
            case SimEventKind::rollback_ack: on_rollback_ack(now, queue); return;
            case SimEventKind::forward_done:
                if (event.actor == Actor::draft) {
                    on_draft_forward_done(now, queue);
                } else {
                    on_verify_forward_done(now, queue);
                }
                return;
        }
    }

    bool finished() const override { return finished_; }
    DecodeTrace trace() const override { return recorder_.merge(); }
    const SharedDecodeState& shared() const { return shared_; }

private:
    void try_start_draft(double now, EventQueue& queue) {
        if (draft_busy_ || shared_.is_complete()) return;
        if (shared_.rollback_pending()) {
            draft_busy_ = true;
            draft_busy_since_ = now;
            queue.schedule(now + latency_.rollback_overhead_ms, Actor::draft, SimEventKind::rollback_ack);
            return;
        }
        if (draft_would_generate(shared_, config_.max_draft_lead)) {
            draft_busy_ = true;
            draft_busy_since_ = now;
            const auto position = shared_.draft_position() + 1;
            queue.schedule(now + latency_.draft_cost(1), Actor::draft, SimEventKind::forward_done, position,
                           position);
            return;
        }
        draft_waiting_ = true;
    }

    void try_start_verify(double now, EventQueue& queue) {
        if (verify_busy_ || shared_.is_complete()) return;
        batch_ = begin_verify(shared_, *verify_, verify_state_);
        if (!batch_) {
            verify_waiting_ = true;
            return;
        }
        verify_busy_ = true;
        verify_busy_since_ = now;
        queue.schedule(now + latency_.verify_cost(batch_->candidates.size()), Actor::verify,
                       SimEventKind::forward_done, batch_->first_position,
                       batch_->first_position + batch_->candidates.size() - 1);
    }

    void wake(Actor actor, double now, EventQueue& queue) {
        if (actor == Actor::draft && draft_waiting_ && !draft_wake_scheduled_) {
            draft_waiting_ = false;
            draft_wake_scheduled_ = true;
            queue.schedule(now, Actor::draft, SimEventKind::wake);
        } else if (actor == Actor::verify && verify_waiting_ && !verify_wake_scheduled_) {
            verify_waiting_ = false;
            verify_wake_scheduled_ = true;
            queue.schedule(now, Actor::verify, SimEventKind::wake);
        }
    }

    void on_draft_forward_done(double now, EventQueue& queue) {
        if (shared_.is_complete()) {
            draft_busy_ = false;
            return;
        }
        if (shared_.rollback_pending()) {
            // The forward raced a correction: its token is discarded.
            queue.schedule(now + latency_.rollback_overhead_ms, Actor::draft, SimEventKind::rollback_ack);
            return;
        }
        const auto step = draft_loop_step(shared_, *draft_, draft_state_, config_.max_draft_lead);
        if (step.status != DraftStatus::generated) throw SimulatorError("draft forward finished without a token");
        recorder_.record({now, draft_busy_since_, Actor::draft, EventKind::draft_token, step.position,
                          step.position, 0});
        draft_busy_ = false;
        wake(Actor::verify, now, queue);
        try_start_draft(now, queue);
    }

    void on_rollback_ack(double now, EventQueue& queue) {
        draft_busy_ = false;
        const auto step = draft_loop_step(shared_, *draft_, draft_state_, config_.max_draft_lead);
        if (step.status == DraftStatus::stopped) return;
        if (step.status != DraftStatus::rolled_back) throw SimulatorError("rollback_ack without a pending rollback");
        recorder_.record({now, draft_busy_since_, Actor::draft, EventKind::rollback, step.rollback.target,
                          step.p_d_before, 0});
        wake(Actor::verify, now, queue);
        try_start_draft(now, queue);
    }

    void on_verify_forward_done(double now, EventQueue& queue) {
        verify_busy_ = false;
        const auto step = commit_verify(shared_, *verify_, verify_state_, *batch_);
        batch_.reset();
        recorder_.record({now, verify_busy_since_, Actor::verify,
                          step.corrected ? EventKind::verify_correct : EventKind::verify_accept,
                          step.first_position, step.first_position + step.appended - 1, step.matched});
        if (step.completed) {
            queue.schedule(now, Actor::verify, SimEventKind::completion);
            return;
        }
        // Either a rollback to acknowledge or a lead cap that may have been released.
        wake(Actor::draft, now, queue);
        try_start_verify(now, queue);
    }

    ModelPtr draft_;
    ModelPtr verify_;
    DecodeConfig config_;
    LatencyModel latency_;
    SharedDecodeState shared_;
    ModelState draft_state_;
    ModelState verify_state_;
    TraceRecorder recorder_;

    std::optional<VerifyBatch> batch_;
    bool draft_busy_ = false;
    bool verify_busy_ = false;
    bool draft_waiting_ = false;
    bool verify_waiting_ = false;
    bool draft_wake_scheduled_ = false;
    bool verify_wake_scheduled_ = false;
    double draft_busy_since_ = 0.0;
    double verify_busy_since_ = 0.0;
    bool finished_ = false;
};

}  // namespace

SimulationOutput simulate(EngineKind engine, ModelPtr draft, ModelPtr verify, std::span<const TokenId> prompt,
                          const DecodeConfig& config, const LatencyModel& latency) {
    latency.validate();
    config.validate();
    if (!verify) throw InvalidInput("simulate needs a verify model");
    if (engine != EngineKind::autoregressive && !draft) throw InvalidInput("simulate needs a draft model");
    EventQueue queue;
    SimulationOutput out;

    switch (engine) {
        case EngineKind::autoregressive: {
            AutoregressiveHandler handler(verify, prompt, config, latency);
            handler.start(queue);
            out.trace = virtual_clock_run(queue, handler);
            out.result = {handler.decoder().tokens(), handler.decoder().finish_reason(), {}};
            break;
        }
        case EngineKind::sync_speculative: {
            SyncHandler handler(draft, verify, prompt, config, latency);
            handler.start(queue);
            out.trace = virtual_clock_run(queue, handler);
            out.result = {handler.decoder().tokens(), handler.decoder().finish_reason(), {}};
            break;
        }
        case EngineKind::amusd: {
            AmusdHandler handler(draft, verify, prompt, config, latency);
            handler.start(queue);
            out.trace = virtual_clock_run(queue, handler);
            out.result = {handler.shared().verified_tokens(),
                          finish_reason_of(handler.shared(), verify->eos_token()), {}};
            break;
        }
    }
    out.result.stats = summarize(out.trace);
    return out;
}

}  // namespace amusd
