#include "amusd/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "amusd/errors.hpp"

namespace amusd {

using nlohmann::json;

std::string_view to_string(BackendKind kind) noexcept {
    return kind == BackendKind::concurrent ? "concurrent" : "simulate";
}

std::optional<BackendKind> parse_backend_kind(std::string_view name) noexcept {
    if (name == "concurrent") return BackendKind::concurrent;
    if (name == "simulate") return BackendKind::simulate;
    return std::nullopt;
}

namespace {

std::size_t line_at_byte(std::string_view text, std::size_t byte) {
    byte = std::min(byte, text.size());
    return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + byte, '\n'));
}

/// Line of the first `"key"` occurring after the `"section"` key, 0 if absent.
std::size_t line_of_key(std::string_view text, std::string_view section, std::string_view key) {
    std::size_t from = 0;
    if (!section.empty()) {
        from = text.find(fmt::format("\"{}\"", section));
        if (from == std::string_view::npos) return 0;
    }
    const auto at = text.find(fmt::format("\"{}\"", key), from);
    return at == std::string_view::npos ? 0 : line_at_byte(text, at);
}

[[noreturn]] void fail(std::string_view text, std::string_view section, std::string_view key,
                       const std::string& message) {
    const auto line = line_of_key(text, section, key);
    const auto field = section.empty() ? std::string(key) : fmt::format("{}.{}", section, key);
    if (line > 0) throw ConfigError(fmt::format("line {}: {}: {}", line, field, message), line);
    throw ConfigError(fmt::format("{}: {}", field, message));
}

/// Typed access to one object of the config with field-naming errors.
class Section {
public:
    Section(std::string_view text, std::string_view name, const json& object,
            std::initializer_list<std::string_view> known)
        : text_(text), name_(name), object_(object) {
        if (!object_.is_object()) fail(text_, "", name_, "must be an object");
        for (const auto& [key, value] : object_.items()) {
            if (std::find(known.begin(), known.end(), key) == known.end()) {
                fail(text_, name_, key, "unknown field");
            }
        }
    }

    template <typename T>
    void read(std::string_view key, T& out) const {
        const auto it = object_.find(std::string(key));
        if (it == object_.end() || it->is_null()) return;
        convert(key, *it, out);
    }

    template <typename T>
    void read(std::string_view key, std::optional<T>& out) const {
        const auto it = object_.find(std::string(key));
        if (it == object_.end()) return;
        if (it->is_null()) {
            out.reset();
            return;
        }
        T value{};
        convert(key, *it, value);
        out = value;
    }

    [[noreturn]] void error(std::string_view key, const std::string& message) const {
        fail(text_, name_, key, message);
    }

private:
    template <typename T>
    void convert(std::string_view key, const json& value, T& out) const {
        if constexpr (std::is_same_v<T, bool>) {
            if (!value.is_boolean()) error(key, "expected true or false");
            out = value.get<bool>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!value.is_number_integer() || (value.is_number_integer() && !value.is_number_unsigned() &&
                                               value.get<std::int64_t>() < 0)) {
                error(key, "expected a non-negative integer");
            }
            const auto raw = value.get<std::uint64_t>();
            if (raw > std::numeric_limits<T>::max()) error(key, "integer out of range");
            out = static_cast<T>(raw);
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!value.is_number()) error(key, "expected a number");
            out = value.get<T>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!value.is_string()) error(key, "expected a string");
            out = value.get<std::string>();
        } else if constexpr (std::is_same_v<T, std::vector<TokenId>>) {
            if (!value.is_array()) error(key, "expected an array of token ids");
            out.clear();
            for (const auto& item : value) {
                if (!item.is_number_unsigned()) error(key, "expected an array of token ids");
                out.push_back(item.get<TokenId>());
            }
        } else {
            static_assert(sizeof(T) == 0, "unsupported config field type");
        }
    }

    std::string_view text_;
    std::string_view name_;
    const json& object_;
};

const json kEmpty = json::object();

const json& child(const json& root, const char* key) {
    const auto it = root.find(key);
    return it == root.end() || it->is_null() ? kEmpty : *it;
}

}  // namespace

DecodeConfig RunConfig::decode_config(std::size_t trial) const {
    DecodeConfig config;
    config.max_new_tokens = decode.max_new_tokens;
    config.draft_window_k = decode.draft_window_k;
    config.max_draft_lead = decode.max_draft_lead;
    config.seed = trial_seed(trial);
    return config;
}

void RunConfig::validate() const {
    auto bad = [](std::string_view field, const std::string& message) {
        throw ConfigError(fmt::format("{}: {}", field, message));
    };
    if (!(model.rho >= 0.0 && model.rho <= 1.0)) bad("model.rho", fmt::format("must lie in [0,1], got {}", model.rho));
    if (model.vocab_size < 2) bad("model.vocab_size", "must be at least 2");
    if (model.eos_token >= model.vocab_size) bad("model.eos_token", "must be below vocab_size");
    if (model.eos_position && *model.eos_position == 0) bad("model.eos_position", "is 1-based");
    if (model.kind == ModelKind::agreement_pair_member) bad("model.kind", "must be hash_chain or scripted");
    if (model.kind == ModelKind::scripted && !model.script_path) bad("model.script_path", "required for scripted models");
    if (decode.max_new_tokens == 0) bad("decode.max_new_tokens", "must be at least 1");
    if (decode.draft_window_k == 0) bad("decode.draft_window_k", "must be at least 1");
    if (decode.max_draft_lead && *decode.max_draft_lead == 0) bad("decode.max_draft_lead", "must be at least 1");
    if (decode.prompt.empty()) bad("decode.prompt", "must not be empty");
    for (auto t : decode.prompt) {
        if (t >= model.vocab_size) bad("decode.prompt", fmt::format("token {} outside vocabulary", t));
    }
    try {
        latency.validate();
    } catch (const InvalidInput& e) {
        throw ConfigError(e.what());
    }
    if (execution.strategies.empty()) bad("execution.strategies", "must list at least one strategy");
    if (execution.trials == 0) bad("execution.trials", "must be at least 1");
    if (execution.out_dir.empty()) bad("execution.out_dir", "must not be empty");
}

RunConfig parse_run_config(std::string_view text) {
    json root;
    try {
        root = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        const auto line = line_at_byte(text, e.byte == 0 ? 0 : e.byte - 1);
        throw ConfigError(fmt::format("line {}: {}", line, e.what()), line);
    }
    if (!root.is_object()) throw ConfigError("line 1: config must be a JSON object", 1);

    RunConfig config;
    const Section top(text, "", root, {"seed", "model", "decode", "latency", "execution"});
    top.read("seed", config.seed);

    const Section model(text, "model", child(root, "model"),
                        {"kind", "vocab_size", "eos_token", "rho", "eos_in_range", "eos_position",
                         "script_path", "script_offset"});
    std::string kind{to_string(config.model.kind)};
    model.read("kind", kind);
    const auto parsed_kind = parse_model_kind(kind);
    if (!parsed_kind || *parsed_kind == ModelKind::agreement_pair_member) {
        model.error("kind", fmt::format("unknown model kind '{}' (hash_chain or scripted)", kind));
    }
    config.model.kind = *parsed_kind;
    model.read("vocab_size", config.model.vocab_size);
    model.read("eos_token", config.model.eos_token);
    model.read("rho", config.model.rho);
    if (!(config.model.rho >= 0.0 && config.model.rho <= 1.0)) {
        model.error("rho", fmt::format("must lie in [0,1], got {}", config.model.rho));
    }
    model.read("eos_in_range", config.model.eos_in_range);
    model.read("eos_position", config.model.eos_position);
    model.read("script_path", config.model.script_path);
    model.read("script_offset", config.model.script_offset);

    const Section decode(text, "decode", child(root, "decode"),
                         {"max_new_tokens", "draft_window_k", "max_draft_lead", "prompt"});
    decode.read("max_new_tokens", config.decode.max_new_tokens);
    decode.read("draft_window_k", config.decode.draft_window_k);
    decode.read("max_draft_lead", config.decode.max_draft_lead);
    decode.read("prompt", config.decode.prompt);

    const Section latency(text, "latency", child(root, "latency"),
                          {"draft_base_ms", "draft_per_token_ms", "verify_base_ms", "verify_per_token_ms",
                           "rollback_overhead_ms"});
    latency.read("draft_base_ms", config.latency.draft_base_ms);
    latency.read("draft_per_token_ms", config.latency.draft_per_token_ms);
    latency.read("verify_base_ms", config.latency.verify_base_ms);
    latency.read("verify_per_token_ms", config.latency.verify_per_token_ms);
    latency.read("rollback_overhead_ms", config.latency.rollback_overhead_ms);

    const Section execution(text, "execution", child(root, "execution"),
                            {"backend", "strategies", "out_dir", "trials", "inject_sleep"});
    std::string backend{to_string(config.execution.backend)};
    execution.read("backend", backend);
    const auto parsed_backend = parse_backend_kind(backend);
    if (!parsed_backend) execution.error("backend", fmt::format("unknown backend '{}'", backend));
    config.execution.backend = *parsed_backend;
    if (const auto it = child(root, "execution").find("strategies");
        it != child(root, "execution").end() && !it->is_null()) {
        if (!it->is_array()) execution.error("strategies", "expected an array of strategy names");
        config.execution.strategies.clear();
        for (const auto& item : *it) {
            const auto engine = item.is_string() ? parse_engine_kind(item.get<std::string>()) : std::nullopt;
            if (!engine) {
                execution.error("strategies",
                                fmt::format("unknown strategy {} (autoregressive, sync_speculative, amusd)",
                                            item.dump()));
            }
            config.execution.strategies.push_back(*engine);
        }
    }
    execution.read("out_dir", config.execution.out_dir);
    execution.read("trials", config.execution.trials);
    execution.read("inject_sleep", config.execution.inject_sleep);

    config.validate();
    return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot read config file {}", path.string()));
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_run_config(buffer.str());
}

json to_json(const RunConfig& c) {
    auto optional_json = [](const auto& value) -> json { return value ? json(*value) : json(nullptr); };
    json strategies = json::array();
    for (auto s : c.execution.strategies) strategies.push_back(std::string(to_string(s)));
    return {
        {"seed", c.seed},
        {"model",
         {{"kind", std::string(to_string(c.model.kind))},
          {"vocab_size", c.model.vocab_size},
          {"eos_token", c.model.eos_token},
          {"rho", c.model.rho},
          {"eos_in_range", c.model.eos_in_range},
          {"eos_position", optional_json(c.model.eos_position)},
          {"script_path", optional_json(c.model.script_path)},
          {"script_offset", optional_json(c.model.script_offset)}}},
        {"decode",
         {{"max_new_tokens", c.decode.max_new_tokens},
          {"draft_window_k", c.decode.draft_window_k},
          {"max_draft_lead", optional_json(c.decode.max_draft_lead)},
          {"prompt", c.decode.prompt}}},
        {"latency",
         {{"draft_base_ms", c.latency.draft_base_ms},
          {"draft_per_token_ms", c.latency.draft_per_token_ms},
          {"verify_base_ms", c.latency.verify_base_ms},
          {"verify_per_token_ms", c.latency.verify_per_token_ms},
          {"rollback_overhead_ms", c.latency.rollback_overhead_ms}}},
        {"execution",
         {{"backend", std::string(to_string(c.execution.backend))},
          {"strategies", strategies},
          {"out_dir", c.execution.out_dir},
          {"trials", c.execution.trials},
          {"inject_sleep", c.execution.inject_sleep}}},
    };
}

std::string serialize_run_config(const RunConfig& config) {
    return to_json(config).dump(2) + "\n";
}

std::vector<TokenId> load_token_list(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot read token list {}", path.string()));
    std::stringstream buffer;
    buffer << in.rdbuf();
    const std::string text = buffer.str();
    const auto first = text.find_first_not_of(" \t\r\n");
    std::vector<TokenId> tokens;
    if (first != std::string::npos && text[first] == '[') {
        try {
            for (const auto& item : json::parse(text)) tokens.push_back(item.get<TokenId>());
        } catch (const json::exception& e) {
            throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
        }
        return tokens;
    }
    std::string cleaned = text;
    std::replace(cleaned.begin(), cleaned.end(), ',', ' ');
    std::istringstream words(cleaned);
    std::string word;
    while (words >> word) {
        try {
            std::size_t used = 0;
            const auto value = std::stoull(word, &used);
            if (used != word.size() || value > std::numeric_limits<TokenId>::max()) throw std::out_of_range(word);
            tokens.push_back(static_cast<TokenId>(value));
        } catch (const std::exception&) {
            throw ConfigError(fmt::format("{}: '{}' is not a token id", path.string(), word));
        }
    }
    return tokens;
}

ModelPair build_models(const RunConfig& config, std::size_t trial, const std::filesystem::path& base_dir) {
    MockModelSpec spec;
    spec.kind = config.model.kind;
    spec.seed = config.trial_seed(trial);
    spec.vocab_size = config.model.vocab_size;
    spec.eos_token = config.model.eos_token;
    spec.eos_in_range = config.model.eos_in_range;
    spec.eos_position = config.model.eos_position;
    if (config.model.kind == ModelKind::scripted && config.model.script_path) {
        std::filesystem::path path = *config.model.script_path;
        if (path.is_relative() && !base_dir.empty()) path = base_dir / path;
        const auto tokens = load_token_list(path);
        const auto offset = config.model.script_offset.value_or(config.decode.prompt.size() + 1);
        for (std::size_t i = 0; i < tokens.size(); ++i) spec.script[offset + i] = tokens[i];
    }
    try {
        auto verify = make_model(spec);
        auto draft = make_agreement_draft(verify, config.model.rho);
        return {std::move(draft), std::move(verify)};
    } catch (const InvalidInput& e) {
        throw ConfigError(fmt::format("model: {}", e.what()));
    }
}

}  // namespace amusd
