#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace amusd {

enum class Actor { draft, verify };
enum class EventKind { draft_token, verify_accept, verify_correct, rollback, complete };
enum class ClockKind { wall, virtual_clock };

std::string_view to_string(Actor actor) noexcept;
std::string_view to_string(EventKind kind) noexcept;
std::string_view to_string(ClockKind clock) noexcept;
std::optional<Actor> parse_actor(std::string_view name) noexcept;
std::optional<EventKind> parse_event_kind(std::string_view name) noexcept;
std::optional<ClockKind> parse_clock_kind(std::string_view name) noexcept;

/// One trace entry. [start_ms, t_ms] is the busy interval of the work that
/// produced the event (equal for instantaneous events). Positions are
/// absolute and inclusive; `matched` counts draft tokens the event accepted.
struct TraceEvent {
    double t_ms = 0.0;
    double start_ms = 0.0;
    Actor actor = Actor::verify;
    EventKind kind = EventKind::complete;
    std::size_t first = 0;
    std::size_t last = 0;
    std::size_t matched = 0;

    std::size_t span() const noexcept { return last >= first ? last - first + 1 : 0; }

    friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

struct DecodeTrace {
    ClockKind clock = ClockKind::virtual_clock;
    std::size_t prompt_length = 0;
    std::vector<TraceEvent> events;

    bool complete() const noexcept;
};

/// Per-actor append-only logs, merged into one trace at completion. Each
/// record takes a ticket from a shared counter so the merged order follows
/// the order in which the actors acted.
class TraceRecorder {
public:
    explicit TraceRecorder(ClockKind clock, std::size_t prompt_length)
        : clock_(clock), prompt_length_(prompt_length) {}

    /// Reserves a position in the merged order. Concurrent actors take the
    /// ticket before the action the event describes becomes visible.
    std::uint64_t take_ticket() noexcept { return ticket_.fetch_add(1); }

    void record(const TraceEvent& event) { record(take_ticket(), event); }
    void record(std::uint64_t ticket, const TraceEvent& event);

    /// Merges both logs. Wall-clock timestamps are clamped to be
    /// non-decreasing in the merged order.
    DecodeTrace merge() const;

private:
    struct Entry {
        std::uint64_t ticket;
        TraceEvent event;
    };

    ClockKind clock_;
    std::size_t prompt_length_;
    std::atomic<std::uint64_t> ticket_{0};
    std::vector<Entry> draft_log_;
    std::vector<Entry> verify_log_;
};

struct DecodeStats {
    ClockKind clock = ClockKind::virtual_clock;
    std::size_t generated_tokens = 0;
    double duration_ms = 0.0;
    double mean_ms_per_token = 0.0;
    std::size_t verify_steps = 0;
    /// Tokens appended to V per verify step (matched drafts plus any
    /// correction or bonus token).
    double accepted_per_verify_step = 0.0;
    std::size_t rollbacks = 0;
    std::size_t drafted_tokens = 0;
    std::size_t accepted_draft_tokens = 0;
    std::size_t wasted_draft_tokens = 0;

    friend bool operator==(const DecodeStats&, const DecodeStats&) = default;
};

DecodeStats summarize(const DecodeTrace& trace);

struct ComparisonRow {
    std::string label;
    double mean_ms_per_token = 0.0;
    double speedup = 0.0;
};

struct ComparisonTable {
    ClockKind clock = ClockKind::virtual_clock;
    std::vector<ComparisonRow> rows;

    std::string to_text() const;
    nlohmann::json to_json() const;
};

/// The first entry is the baseline; speedup = baseline mean / row mean.
ComparisonTable compare_runs(const std::vector<std::pair<std::string, DecodeStats>>& results);

struct TimelinePoint {
    double t_ms = 0.0;
    std::size_t verified_tokens = 0;

    friend bool operator==(const TimelinePoint&, const TimelinePoint&) = default;
};

/// Cumulative verified tokens over time, starting at (0, 0).
std::vector<TimelinePoint> export_timeline(const DecodeTrace& trace);

struct Interval {
    double begin = 0.0;
    double end = 0.0;
};

/// Busy intervals of an actor: draft_token and rollback events for the draft,
/// verify_accept and verify_correct for the verifier. Zero-length intervals
/// are dropped.
std::vector<Interval> busy_intervals(const DecodeTrace& trace, Actor actor);

/// Total time during which draft and verifier were both busy.
double overlap_ms(const DecodeTrace& trace);

// Serialization. CSV headers are stable:
//   trace:    t_ms,start_ms,actor,kind,first,last,matched
//   timeline: t_ms,verified_tokens
void write_trace_csv(std::ostream& out, const DecodeTrace& trace);
DecodeTrace read_trace_csv(std::istream& in);
void write_timeline_csv(std::ostream& out, const std::vector<TimelinePoint>& timeline);

nlohmann::json to_json(const DecodeStats& stats);
nlohmann::json to_json(const std::vector<TimelinePoint>& timeline);

}  // namespace amusd
