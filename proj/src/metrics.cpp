#include "amusd/metrics.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "amusd/errors.hpp"

namespace amusd {

std::string_view to_string(Actor actor) noexcept {
    return actor == Actor::draft ? "draft" : "verify";
}

std::string_view to_string(EventKind kind) noexcept {
    switch (kind) {
        case EventKind::draft_token: return "draft_token";
        case EventKind::verify_accept: return "verify_accept";
        case EventKind::verify_correct: return "verify_correct";
        case EventKind::rollback: return "rollback";
        case EventKind::complete: return "complete";
    }
    return "unknown";
}

std::string_view to_string(ClockKind clock) noexcept {
    return clock == ClockKind::wall ? "wall" : "virtual";
}

std::optional<Actor> parse_actor(std::string_view name) noexcept {
    if (name == "draft") return Actor::draft;
    if (name == "verify") return Actor::verify;
    return std::nullopt;
}

std::optional<EventKind> parse_event_kind(std::string_view name) noexcept {
    for (auto kind : {EventKind::draft_token, EventKind::verify_accept, EventKind::verify_correct,
                      EventKind::rollback, EventKind::complete}) {
        if (to_string(kind) == name) return kind;
    }
    return std::nullopt;
}

std::optional<ClockKind> parse_clock_kind(std::string_view name) noexcept {
    if (name == "wall") return ClockKind::wall;
    if (name == "virtual") return ClockKind::virtual_clock;
    return std::nullopt;
}

bool DecodeTrace::complete() const noexcept {
    return std::count_if(events.begin(), events.end(), [](const TraceEvent& e) {
               return e.kind == EventKind::complete;
           }) == 1;
}

// --- TraceRecorder -----------------------------------------------------------

void TraceRecorder::record(std::uint64_t ticket, const TraceEvent& event) {
    auto& log = event.actor == Actor::draft ? draft_log_ : verify_log_;
    log.push_back({ticket, event});
}

DecodeTrace TraceRecorder::merge() const {
    std::vector<Entry> all;
    all.reserve(draft_log_.size() + verify_log_.size());
    all.insert(all.end(), draft_log_.begin(), draft_log_.end());
    all.insert(all.end(), verify_log_.begin(), verify_log_.end());
    std::sort(all.begin(), all.end(),
              [](const Entry& a, const Entry& b) { return a.ticket < b.ticket; });

    DecodeTrace trace;
    trace.clock = clock_;
    trace.prompt_length = prompt_length_;
    trace.events.reserve(all.size());
    double floor = 0.0;
    for (const auto& entry : all) {
        TraceEvent e = entry.event;
        if (clock_ == ClockKind::wall) {
            e.t_ms = std::max(e.t_ms, floor);
            e.start_ms = std::min(e.start_ms, e.t_ms);
            floor = e.t_ms;
        }
        trace.events.push_back(e);
    }
    return trace;
}

// --- summarize ---------------------------------------------------------------

DecodeStats summarize(const DecodeTrace& trace) {
    if (!trace.complete()) throw InvalidInput("cannot summarize an incomplete trace");
    DecodeStats stats;
    stats.clock = trace.clock;
    for (const auto& e : trace.events) {
        switch (e.kind) {
            case EventKind::draft_token: ++stats.drafted_tokens; break;
            case EventKind::verify_correct: ++stats.rollbacks; [[fallthrough]];
            case EventKind::verify_accept:
                ++stats.verify_steps;
                stats.generated_tokens += e.span();
                stats.accepted_draft_tokens += e.matched;
                break;
            case EventKind::rollback: break;
            case EventKind::complete: stats.duration_ms = e.t_ms; break;
        }
    }
    if (stats.generated_tokens > 0) {
        stats.mean_ms_per_token = stats.duration_ms / static_cast<double>(stats.generated_tokens);
    }
    if (stats.verify_steps > 0) {
        stats.accepted_per_verify_step =
            static_cast<double>(stats.generated_tokens) / static_cast<double>(stats.verify_steps);
    }
    stats.wasted_draft_tokens = stats.drafted_tokens - std::min(stats.drafted_tokens,
                                                                stats.accepted_draft_tokens);
    return stats;
}

// --- comparison --------------------------------------------------------------

ComparisonTable compare_runs(const std::vector<std::pair<std::string, DecodeStats>>& results) {
    if (results.empty()) throw InvalidInput("compare_runs needs at least one run");
    if (results.size() < 2) throw InvalidInput("compare_runs needs a baseline and at least one other run");
    ComparisonTable table;
    table.clock = results.front().second.clock;
    const double baseline = results.front().second.mean_ms_per_token;
    for (const auto& [label, stats] : results) {
        if (stats.clock != table.clock) {
            throw InvalidInput(fmt::format("run '{}' uses the {} clock, baseline uses {}", label,
                                           to_string(stats.clock), to_string(table.clock)));
        }
        const double speedup = stats.mean_ms_per_token > 0.0 ? baseline / stats.mean_ms_per_token : 0.0;
        table.rows.push_back({label, stats.mean_ms_per_token, speedup});
    }
    return table;
}

std::string ComparisonTable::to_text() const {
    std::size_t label_width = 8;
    for (const auto& row : rows) label_width = std::max(label_width, row.label.size());
    const auto header = fmt::format("mean token time ({})", to_string(clock));
    std::vector<std::string> times;
    std::size_t time_width = header.size();
    for (const auto& row : rows) {
        times.push_back(fmt::format("{:.2f} ms/tok", row.mean_ms_per_token));
        time_width = std::max(time_width, times.back().size());
    }
    std::string out = fmt::format("{:<{}}  {:>{}}  {:>8}\n", "strategy", label_width, header, time_width, "speedup");
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out += fmt::format("{:<{}}  {:>{}}  {:>7.2f}x\n", rows[i].label, label_width, times[i], time_width,
                           rows[i].speedup);
    }
    return out;
}

nlohmann::json ComparisonTable::to_json() const {
    nlohmann::json rows_json = nlohmann::json::array();
    for (const auto& row : rows) {
        rows_json.push_back({{"label", row.label},
                             {"mean_ms_per_token", row.mean_ms_per_token},
                             {"speedup", row.speedup}});
    }
    return {{"clock", std::string(to_string(clock))}, {"rows", rows_json}};
}

// --- timeline and busy intervals ----------------------------------------------

std::vector<TimelinePoint> export_timeline(const DecodeTrace& trace) {
    std::vector<TimelinePoint> series{{0.0, 0}};
    for (const auto& e : trace.events) {
        if (e.kind != EventKind::verify_accept && e.kind != EventKind::verify_correct) continue;
        const auto total = series.back().verified_tokens + e.span();
        series.push_back({std::max(e.t_ms, series.back().t_ms), total});
    }
    return series;
}

std::vector<Interval> busy_intervals(const DecodeTrace& trace, Actor actor) {
    std::vector<Interval> out;
    for (const auto& e : trace.events) {
        const bool draft_busy = e.kind == EventKind::draft_token || e.kind == EventKind::rollback;
        const bool verify_busy = e.kind == EventKind::verify_accept || e.kind == EventKind::verify_correct;
        if ((actor == Actor::draft && draft_busy) || (actor == Actor::verify && verify_busy)) {
            if (e.t_ms > e.start_ms) out.push_back({e.start_ms, e.t_ms});
        }
    }
    std::sort(out.begin(), out.end(), [](const Interval& a, const Interval& b) { return a.begin < b.begin; });
    return out;
}

double overlap_ms(const DecodeTrace& trace) {
    const auto draft = busy_intervals(trace, Actor::draft);
    const auto verify = busy_intervals(trace, Actor::verify);
    double total = 0.0;
    std::size_t i = 0, j = 0;
    while (i < draft.size() && j < verify.size()) {
        const double lo = std::max(draft[i].begin, verify[j].begin);
        const double hi = std::min(draft[i].end, verify[j].end);
        if (hi > lo) total += hi - lo;
        if (draft[i].end < verify[j].end) ++i; else ++j;
    }
    return total;
}

// --- CSV / JSON --------------------------------------------------------------

namespace {

constexpr std::string_view kTraceHeader = "t_ms,start_ms,actor,kind,first,last,matched";

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, sep)) fields.push_back(field);
    return fields;
}

}  // namespace

void write_trace_csv(std::ostream& out, const DecodeTrace& trace) {
    out << fmt::format("# clock={},prompt_length={}\n", to_string(trace.clock), trace.prompt_length);
    out << kTraceHeader << '\n';
    for (const auto& e : trace.events) {
        out << fmt::format("{},{},{},{},{},{},{}\n", e.t_ms, e.start_ms, to_string(e.actor),
                           to_string(e.kind), e.first, e.last, e.matched);
    }
}

DecodeTrace read_trace_csv(std::istream& in) {
    DecodeTrace trace;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line.front() == '#') {
            for (const auto& kv : split(line.substr(1), ',')) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos) continue;
                auto key = kv.substr(0, eq);
                key.erase(0, key.find_first_not_of(' '));
                const auto value = kv.substr(eq + 1);
                if (key == "clock") {
                    auto clock = parse_clock_kind(value);
                    if (!clock) throw InvalidInput(fmt::format("trace line {}: unknown clock '{}'", line_no, value));
                    trace.clock = *clock;
                } else if (key == "prompt_length") {
                    trace.prompt_length = std::stoull(value);
                }
            }
            continue;
        }
        if (!header_seen) {
            if (line != kTraceHeader) throw InvalidInput(fmt::format("trace line {}: unexpected header", line_no));
            header_seen = true;
            continue;
        }
        const auto fields = split(line, ',');
        if (fields.size() != 7) throw InvalidInput(fmt::format("trace line {}: expected 7 fields", line_no));
        try {
            TraceEvent e;
            e.t_ms = std::stod(fields[0]);
            e.start_ms = std::stod(fields[1]);
            auto actor = parse_actor(fields[2]);
            auto kind = parse_event_kind(fields[3]);
            if (!actor || !kind) throw InvalidInput("bad actor or kind");
            e.actor = *actor;
            e.kind = *kind;
            e.first = std::stoull(fields[4]);
            e.last = std::stoull(fields[5]);
            e.matched = std::stoull(fields[6]);
            trace.events.push_back(e);
        } catch (const std::exception& ex) {
            throw InvalidInput(fmt::format("trace line {}: {}", line_no, ex.what()));
        }
    }
    if (!header_seen) throw InvalidInput("trace has no header");
    return trace;
}

void write_timeline_csv(std::ostream& out, const std::vector<TimelinePoint>& timeline) {
    out << "t_ms,verified_tokens\n";
    for (const auto& p : timeline) out << fmt::format("{},{}\n", p.t_ms, p.verified_tokens);
}

nlohmann::json to_json(const DecodeStats& s) {
    return {{"clock", std::string(to_string(s.clock))},
            {"generated_tokens", s.generated_tokens},
            {"duration_ms", s.duration_ms},
            {"mean_ms_per_token", s.mean_ms_per_token},
            {"verify_steps", s.verify_steps},
            {"accepted_per_verify_step", s.accepted_per_verify_step},
            {"rollbacks", s.rollbacks},
            {"drafted_tokens", s.drafted_tokens},
            {"accepted_draft_tokens", s.accepted_draft_tokens},
            {"wasted_draft_tokens", s.wasted_draft_tokens}};
}

nlohmann::json to_json(const std::vector<TimelinePoint>& timeline) {
    nlohmann::json points = nlohmann::json::array();
    for (const auto& p : timeline) points.push_back({{"t_ms", p.t_ms}, {"verified_tokens", p.verified_tokens}});
    return {{"columns", {"t_ms", "verified_tokens"}}, {"points", points}};
}

}  // namespace amusd
