// AMUSD on two threads: the draft loop and the verify loop poll the shared
// state; the calling thread orchestrates and merges their traces.

#include <exception>
#include <mutex>
#include <random>
#include <thread>

#include "amusd/engines.hpp"
#include "amusd/errors.hpp"
#include "amusd/simulator.hpp"

namespace amusd {

namespace {

using SteadyClock = std::chrono::steady_clock;

class Backoff {
public:
    explicit Backoff(std::chrono::microseconds max) : max_(max) {}

    void wait() {
        if (spins_ < 16) {
            ++spins_;
            std::this_thread::yield();
            return;
        }
        std::this_thread::sleep_for(delay_);
        delay_ = std::min(delay_ * 2, max_);
    }

    void reset() noexcept {
        spins_ = 0;
        delay_ = std::chrono::microseconds{1};
    }

private:
    std::chrono::microseconds max_;
    std::chrono::microseconds delay_{1};
    int spins_ = 0;
};

/// Random pauses between steps, so repeated runs exercise different
/// interleavings of the two loops.
class Jitter {
public:
    Jitter(bool enabled, std::uint64_t seed) : enabled_(enabled), rng_(seed) {}

    void maybe_pause() {
        if (!enabled_) return;
        const auto roll = rng_() % 8;
        if (roll == 0) {
            std::this_thread::sleep_for(std::chrono::microseconds(rng_() % 50));
        } else if (roll < 3) {
            std::this_thread::yield();
        }
    }

private:
    bool enabled_;
    std::mt19937_64 rng_;
};

void sleep_ms(double ms) {
    if (ms > 0.0) std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(ms));
}

struct LoopContext {
    SharedDecodeState& shared;
    TraceRecorder& recorder;
    const ConcurrentBackend& backend;
    SteadyClock::time_point start;

    double now() const {
        return std::chrono::duration<double, std::milli>(SteadyClock::now() - start).count();
    }
};

void run_draft_loop(LoopContext ctx, const Model& model, ModelState& state,
                    std::optional<std::size_t> max_lead) {
    Backoff backoff(ctx.backend.max_backoff);
    Jitter jitter(ctx.backend.jitter, ctx.backend.jitter_seed * 2 + 1);
    for (;;) {
        jitter.maybe_pause();
        const bool will_generate = draft_would_generate(ctx.shared, max_lead);
        if (!will_generate && !ctx.shared.rollback_pending() && !ctx.shared.is_complete() &&
            !ctx.shared.is_aborted()) {
            backoff.wait();
            continue;
        }
        const double begin = ctx.now();
        if (will_generate && ctx.backend.inject_latency) sleep_ms(ctx.backend.inject_latency->draft_cost(1));

        const double at = ctx.now();
        const auto ticket = ctx.recorder.take_ticket();
        const auto step = draft_loop_step(ctx.shared, model, state, max_lead);
        switch (step.status) {
            case DraftStatus::stopped: return;
            case DraftStatus::idle: backoff.wait(); continue;
            case DraftStatus::generated:
                ctx.recorder.record(ticket, {at, begin, Actor::draft, EventKind::draft_token, step.position,
                                             step.position, 0});
                break;
            case DraftStatus::rolled_back:
                if (ctx.backend.inject_latency) sleep_ms(ctx.backend.inject_latency->rollback_overhead_ms);
                ctx.recorder.record(ticket, {at, begin, Actor::draft, EventKind::rollback,
                                             step.rollback.target, step.p_d_before, 0});
                break;
        }
        backoff.reset();
    }
}

void run_verify_loop(LoopContext ctx, const Model& model, ModelState& state) {
    Backoff backoff(ctx.backend.max_backoff);
    Jitter jitter(ctx.backend.jitter, ctx.backend.jitter_seed * 2 + 2);
    for (;;) {
        jitter.maybe_pause();
        if (ctx.shared.is_aborted() || ctx.shared.is_complete()) return;
        const double begin = ctx.now();
        auto batch = begin_verify(ctx.shared, model, state);
        if (!batch) {
            backoff.wait();
            continue;
        }
        backoff.reset();
        if (ctx.backend.inject_latency) sleep_ms(ctx.backend.inject_latency->verify_cost(batch->candidates.size()));

        const double at = ctx.now();
        const auto ticket = ctx.recorder.take_ticket();
        const auto step = commit_verify(ctx.shared, model, state, *batch);
        ctx.recorder.record(ticket, {at, begin, Actor::verify,
                                     step.corrected ? EventKind::verify_correct : EventKind::verify_accept,
                                     step.first_position, step.first_position + step.appended - 1,
                                     step.matched});
        if (step.completed) {
            ctx.recorder.record({at, at, Actor::verify, EventKind::complete, 0, 0, 0});
            return;
        }
    }
}

DecodeResult run_concurrent(ModelPtr draft, ModelPtr verify, std::span<const TokenId> prompt,
                            const DecodeConfig& config, const ConcurrentBackend& backend, DecodeTrace* trace) {
    config.validate();
    if (backend.inject_latency) backend.inject_latency->validate();
    SharedDecodeState shared(prompt.size(), config.max_new_tokens);
    shared.set_monitor(backend.monitor);
    ModelState draft_state = draft->init_state(prompt);
    ModelState verify_state = verify->init_state(prompt);
    TraceRecorder recorder(ClockKind::wall, prompt.size());

    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto guarded = [&](auto&& body) {
        return [&, body]() {
            try {
                body();
            } catch (...) {
                {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
                shared.abort();
            }
        };
    };

    const LoopContext ctx{shared, recorder, backend, SteadyClock::now()};
    std::thread verify_thread(guarded([&] { run_verify_loop(ctx, *verify, verify_state); }));
    std::thread draft_thread(
        guarded([&] { run_draft_loop(ctx, *draft, draft_state, config.max_draft_lead); }));
    verify_thread.join();
    draft_thread.join();
    if (failure) std::rethrow_exception(failure);

    auto merged = recorder.merge();
    DecodeResult result{shared.verified_tokens(), finish_reason_of(shared, verify->eos_token()),
                        summarize(merged)};
    if (trace) *trace = std::move(merged);
    return result;
}

}  // namespace

DecodeResult decode_amusd(ModelPtr draft, ModelPtr verify, std::span<const TokenId> prompt,
                          const DecodeConfig& config, const Backend& backend, DecodeTrace* trace) {
    if (const auto* simulated = std::get_if<SimulatedBackend>(&backend)) {
        auto out = simulate(EngineKind::amusd, std::move(draft), std::move(verify), prompt, config,
                            simulated->latency);
        if (trace) *trace = std::move(out.trace);
        return std::move(out.result);
    }
    return run_concurrent(std::move(draft), std::move(verify), prompt, config,
                          std::get<ConcurrentBackend>(backend), trace);
}

}  // namespace amusd
