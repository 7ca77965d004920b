#include "amusd/cli.hpp"

#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "amusd/errors.hpp"

namespace amusd::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string run_id(EngineKind engine, std::size_t trial) {
    return fmt::format("{}-{}", to_string(engine), trial);
}

RunOutput execute_run(const RunConfig& config, EngineKind engine, std::size_t trial, const fs::path& base_dir) {
    const auto models = build_models(config, trial, base_dir);
    const auto decode = config.decode_config(trial);
    const auto& prompt = config.decode.prompt;
    RunOutput run{engine, trial, {}, {}};

    if (config.execution.backend == BackendKind::simulate) {
        auto out = simulate(engine, models.draft, models.verify, prompt, decode, config.latency);
        run.result = std::move(out.result);
        run.trace = std::move(out.trace);
        return run;
    }

    std::optional<LatencyModel> sleep;
    if (config.execution.inject_sleep) sleep = config.latency;
    switch (engine) {
        case EngineKind::autoregressive:
            run.result = decode_autoregressive(models.verify, prompt, decode, &run.trace, sleep);
            break;
        case EngineKind::sync_speculative:
            run.result = decode_speculative_sync(models.draft, models.verify, prompt, decode, &run.trace, sleep);
            break;
        case EngineKind::amusd: {
            ConcurrentBackend backend;
            backend.inject_latency = sleep;
            run.result = decode_amusd(models.draft, models.verify, prompt, decode, backend, &run.trace);
            break;
        }
    }
    return run;
}

namespace {

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream file(path, std::ios::binary);
    file << content;
    if (!file) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
}

json tokens_json(const DecodeResult& result) {
    return {{"tokens", result.tokens}, {"finished_by", std::string(to_string(result.finished_by))}};
}

void print_summary(std::ostream& out, const std::string& id, const DecodeResult& result) {
    const auto& s = result.stats;
    out << fmt::format("{:<20} {:>5} tokens ({}), {:.3f} ms/token, {} verify steps, {:.2f} tokens/step, "
                       "{} rollbacks\n",
                       id, result.tokens.size(), to_string(result.finished_by), s.mean_ms_per_token,
                       s.verify_steps, s.accepted_per_verify_step, s.rollbacks);
}

/// Autoregressive first when present, so it is the comparison baseline.
std::vector<EngineKind> ordered_strategies(const RunConfig& config) {
    std::vector<EngineKind> order;
    for (auto e : config.execution.strategies) {
        if (e == EngineKind::autoregressive && std::find(order.begin(), order.end(), e) == order.end()) {
            order.push_back(e);
        }
    }
    for (auto e : config.execution.strategies) {
        if (std::find(order.begin(), order.end(), e) == order.end()) order.push_back(e);
    }
    return order;
}

/// Per-strategy totals over all trials.
struct Aggregate {
    DecodeStats stats;
    std::size_t trials = 0;

    void add(const DecodeStats& s) {
        stats.clock = s.clock;
        stats.generated_tokens += s.generated_tokens;
        stats.duration_ms += s.duration_ms;
        stats.verify_steps += s.verify_steps;
        stats.rollbacks += s.rollbacks;
        stats.drafted_tokens += s.drafted_tokens;
        stats.accepted_draft_tokens += s.accepted_draft_tokens;
        stats.wasted_draft_tokens += s.wasted_draft_tokens;
        ++trials;
    }

    DecodeStats finish() const {
        auto s = stats;
        if (s.generated_tokens > 0) s.mean_ms_per_token = s.duration_ms / static_cast<double>(s.generated_tokens);
        if (s.verify_steps > 0) {
            s.accepted_per_verify_step =
                static_cast<double>(s.generated_tokens) / static_cast<double>(s.verify_steps);
        }
        return s;
    }
};

struct Failure {
    int code;
    std::string message;
};

/// Runs every strategy and trial, writing artifacts as it goes. On failure
/// the run directory gets a FAILED marker and earlier outputs are kept.
std::variant<std::vector<RunOutput>, Failure> run_all(const RunConfig& config, const fs::path& base_dir,
                                                      std::ostream& out) {
    const fs::path out_dir = config.execution.out_dir;
    std::vector<RunOutput> runs;
    for (std::size_t trial = 0; trial < config.execution.trials; ++trial) {
        for (auto engine : ordered_strategies(config)) {
            const auto id = run_id(engine, trial);
            const auto dir = out_dir / id;
            fs::create_directories(dir);
            fs::remove(dir / "FAILED");
            try {
                auto run = execute_run(config, engine, trial, base_dir);
                write_run_artifacts(dir, run);
                print_summary(out, id, run.result);
                runs.push_back(std::move(run));
            } catch (const ProtocolViolation& e) {
                write_file(dir / "FAILED", fmt::format("protocol violation: {}\n", e.what()));
                return Failure{exit_mismatch, fmt::format("{}: protocol violation: {}", id, e.what())};
            } catch (const std::exception& e) {
                write_file(dir / "FAILED", fmt::format("error: {}\n", e.what()));
                return Failure{exit_failure, fmt::format("{}: {}", id, e.what())};
            }
        }
    }
    return runs;
}

ComparisonTable aggregate_table(const RunConfig& config, const std::vector<RunOutput>& runs) {
    std::map<EngineKind, Aggregate> totals;
    for (const auto& run : runs) totals[run.engine].add(run.result.stats);
    std::vector<std::pair<std::string, DecodeStats>> rows;
    for (auto engine : ordered_strategies(config)) {
        rows.emplace_back(std::string(to_string(engine)), totals[engine].finish());
    }
    return compare_runs(rows);
}

template <typename Body>
int guarded(std::ostream& err, Body&& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return exit_failure;
    } catch (const ProtocolViolation& e) {
        err << "protocol violation: " << e.what() << '\n';
        return exit_mismatch;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return exit_failure;
    }
}

}  // namespace

void write_run_artifacts(const fs::path& dir, const RunOutput& run) {
    fs::create_directories(dir);
    write_file(dir / "tokens.json", tokens_json(run.result).dump(2) + "\n");
    write_file(dir / "stats.json", to_json(run.result.stats).dump(2) + "\n");
    std::ofstream csv(dir / "trace.csv", std::ios::binary);
    write_trace_csv(csv, run.trace);
    if (!csv) throw std::runtime_error(fmt::format("cannot write {}", (dir / "trace.csv").string()));
}

int cmd_run(const RunConfig& config, const fs::path& base_dir, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        auto outcome = run_all(config, base_dir, out);
        if (auto* failure = std::get_if<Failure>(&outcome)) {
            err << failure->message << '\n';
            return failure->code;
        }
        const auto& runs = std::get<std::vector<RunOutput>>(outcome);
        if (ordered_strategies(config).size() >= 2) out << '\n' << aggregate_table(config, runs).to_text();
        return static_cast<int>(exit_ok);
    });
}

int cmd_compare(const RunConfig& config, const fs::path& base_dir, std::ostream& out, std::ostream& err) {
    if (ordered_strategies(config).size() < 2) {
        err << "compare needs at least two distinct strategies in execution.strategies\n";
        return exit_usage;
    }
    return guarded(err, [&] {
        auto outcome = run_all(config, base_dir, out);
        if (auto* failure = std::get_if<Failure>(&outcome)) {
            err << failure->message << '\n';
            return failure->code;
        }
        const auto& runs = std::get<std::vector<RunOutput>>(outcome);
        std::map<std::size_t, const RunOutput*> reference;
        for (const auto& run : runs) {
            auto [it, inserted] = reference.emplace(run.trial, &run);
            if (inserted) continue;
            const auto& base = *it->second;
            if (run.result.tokens != base.result.tokens || run.result.finished_by != base.result.finished_by) {
                err << fmt::format("output mismatch in trial {}: {} and {} differ; refusing to report timings\n",
                                   run.trial, to_string(base.engine), to_string(run.engine));
                return static_cast<int>(exit_mismatch);
            }
        }
        const auto table = aggregate_table(config, runs);
        const auto text = table.to_text();
        out << '\n' << text;
        auto report = table.to_json();
        report["trials"] = config.execution.trials;
        report["outputs_identical"] = true;
        write_file(fs::path(config.execution.out_dir) / "comparison.json", report.dump(2) + "\n");
        return static_cast<int>(exit_ok);
    });
}

int cmd_trace(const RunConfig& config, std::string_view id, TraceFormat format, const fs::path& output,
              std::ostream& out, std::ostream& err) {
    const auto path = fs::path(config.execution.out_dir) / std::string(id) / "trace.csv";
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        err << fmt::format("no trace for run '{}' (looked for {})\n", id, path.string());
        return exit_failure;
    }
    return guarded(err, [&] {
        const auto timeline = export_timeline(read_trace_csv(in));
        std::ostringstream text;
        if (format == TraceFormat::csv) {
            write_timeline_csv(text, timeline);
        } else {
            text << to_json(timeline).dump(2) << '\n';
        }
        if (output.empty()) {
            out << text.str();
        } else {
            write_file(output, text.str());
        }
        return static_cast<int>(exit_ok);
    });
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Asynchronous speculative decoding engines and simulator"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string backend;
    std::string out_dir;
    std::string id;
    std::string format = "csv";
    std::string output;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", config_path, "JSON config file")->check(CLI::ExistingFile);
        sub->add_option("--out-dir", out_dir, "Directory for run artifacts");
    };
    auto* run = app.add_subcommand("run", "Run each strategy and write tokens, stats and traces");
    auto* compare = app.add_subcommand("compare", "Run all strategies, check identical output, print speedups");
    auto* trace = app.add_subcommand("trace", "Emit the tokens-over-time series of a stored run");
    for (auto* sub : {run, compare}) {
        add_common(sub);
        sub->add_option("--seed", seed, "Override the config seed");
        sub->add_option("--backend", backend, "concurrent or simulate")
            ->check(CLI::IsMember({"concurrent", "simulate"}));
    }
    add_common(trace);
    trace->add_option("--run-id", id, "Run directory name, e.g. amusd-0")->required();
    trace->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
    trace->add_option("-o,--output", output, "Write here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? static_cast<int>(exit_ok) : static_cast<int>(exit_usage);
    }

    RunConfig config;
    fs::path base_dir;
    try {
        if (!config_path.empty()) {
            config = load_run_config(config_path);
            base_dir = fs::path(config_path).parent_path();
        }
        if (seed) config.seed = *seed;
        if (!backend.empty()) config.execution.backend = *parse_backend_kind(backend);
        if (!out_dir.empty()) config.execution.out_dir = out_dir;
        config.validate();
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return exit_failure;
    }

    if (run->parsed()) return cmd_run(config, base_dir, out, err);
    if (compare->parsed()) return cmd_compare(config, base_dir, out, err);
    return cmd_trace(config, id, format == "json" ? TraceFormat::json : TraceFormat::csv, output, out, err);
}

}  // namespace amusd::cli
