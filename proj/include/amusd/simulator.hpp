#pragma once

// Deterministic virtual-clock executor for the three engines.
//
// Events are processed in (timestamp, actor, sequence) order with the
// verify actor ahead of the draft actor at equal timestamps, so a correction
// is visible before the next draft token is committed. Each actor is busy for
// the modeled cost of a forward pass; in AMUSD mode the two actors run
// concurrently, in the serial engines only one is ever busy.
//
// A draft forward that is in flight when a rollback is requested completes,
// is discarded, and the acknowledgment happens rollback_overhead_ms later.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <queue>
#include <span>
#include <string_view>
#include <vector>

#include "amusd/engines.hpp"
#include "amusd/latency.hpp"
#include "amusd/metrics.hpp"
#include "amusd/model.hpp"

namespace amusd {

enum class EngineKind { autoregressive, sync_speculative, amusd };

std::string_view to_string(EngineKind kind) noexcept;
std::optional<EngineKind> parse_engine_kind(std::string_view name) noexcept;

enum class SimEventKind { forward_done, rollback_ack, wake, completion };

struct SimEvent {
    double timestamp = 0.0;
    Actor actor = Actor::verify;
    SimEventKind kind = SimEventKind::forward_done;
    std::uint64_t sequence = 0;
    /// Positions involved, when known at scheduling time.
    std::size_t first = 0;
    std::size_t last = 0;
};

class EventQueue {
public:
    void schedule(double timestamp, Actor actor, SimEventKind kind, std::size_t first = 0,
                  std::size_t last = 0);
    SimEvent pop();
    bool empty() const noexcept { return heap_.empty(); }
    std::size_t size() const noexcept { return heap_.size(); }

private:
    struct Later {
        bool operator()(const SimEvent& a, const SimEvent& b) const noexcept;
    };

    std::priority_queue<SimEvent, std::vector<SimEvent>, Later> heap_;
    std::uint64_t next_sequence_ = 0;
};

/// Engine-specific reaction to simulator events.
class SimulationHandler {
public:
    virtual ~SimulationHandler() = default;
    /// Seeds the initial events.
    virtual void start(EventQueue& queue) = 0;
    virtual void handle(const SimEvent& event, EventQueue& queue) = 0;
    virtual bool finished() const = 0;
    virtual DecodeTrace trace() const = 0;
};

/// Pops events until the handler reports completion. Running out of events
/// first is a SimulatorError.
DecodeTrace virtual_clock_run(EventQueue& queue, SimulationHandler& handler);

struct SimulationOutput {
    DecodeResult result;
    DecodeTrace trace;
};

/// `draft` may be null for the autoregressive engine.
SimulationOutput simulate(EngineKind engine, ModelPtr draft, ModelPtr verify, std::span<const TokenId> prompt,
                          const DecodeConfig& config, const LatencyModel& latency);

}  // namespace amusd
