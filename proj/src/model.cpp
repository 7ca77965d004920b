#include "amusd/model.hpp"

#include <atomic>

#include <fmt/format.h>

#include "amusd/errors.hpp"

namespace amusd {

namespace {

std::atomic<std::uint64_t> next_model_id{1};

void validate_spec(const MockModelSpec& spec) {
    if (spec.vocab_size == 0) throw InvalidInput("vocab_size must be positive");
    if (spec.eos_token >= spec.vocab_size) {
        throw InvalidInput(fmt::format("eos_token {} outside vocabulary of size {}",
                                       spec.eos_token, spec.vocab_size));
    }
    if (!spec.eos_in_range && spec.vocab_size < 2) {
        throw InvalidInput("excluding eos needs a vocabulary of at least 2 tokens");
    }
    if (spec.eos_position && *spec.eos_position == 0) {
        throw InvalidInput("eos_position is 1-based");
    }
    for (const auto& [position, token] : spec.script) {
        if (position == 0) throw InvalidInput("script positions are 1-based");
        if (token >= spec.vocab_size) {
            throw InvalidInput(fmt::format("script token {} at position {} outside vocabulary",
                                           token, position));
        }
    }
}

class HashChainModel final : public Model {
public:
    explicit HashChainModel(MockModelSpec spec) : Model(std::move(spec)) {}

protected:
    TokenId predict_impl(const PredictionContext& context) const override {
        const auto position = context.length + 1;
        if (spec().eos_position && position == *spec().eos_position) return eos_token();
        if (auto it = spec().script.find(position); it != spec().script.end()) return it->second;
        return chain_token(context.chain);
    }
};

class AgreementDraftModel final : public Model {
public:
    AgreementDraftModel(MockModelSpec spec, ModelPtr verify)
        : Model(std::move(spec)), verify_(std::move(verify)) {}

protected:
    TokenId predict_impl(const PredictionContext& context) const override {
        const TokenId target = verify_->predict(context);
        const double u = hash::unit_interval(hash::mix64(context.chain ^ hash::kAgreeSalt));
        if (u < spec().agreement_rho) return target;
        const std::uint64_t vocab = vocab_size();
        const std::uint64_t offset = 1 + hash::mix64(context.chain ^ hash::kAltSalt) % (vocab - 1);
        return static_cast<TokenId>((target + offset) % vocab);
    }

private:
    ModelPtr verify_;
};

}  // namespace

std::string_view to_string(ModelKind kind) noexcept {
    switch (kind) {
        case ModelKind::hash_chain: return "hash_chain";
        case ModelKind::scripted: return "scripted";
        case ModelKind::agreement_pair_member: return "agreement_pair_member";
    }
    return "unknown";
}

std::optional<ModelKind> parse_model_kind(std::string_view name) noexcept {
    if (name == "hash_chain") return ModelKind::hash_chain;
    if (name == "scripted") return ModelKind::scripted;
    if (name == "agreement_pair_member") return ModelKind::agreement_pair_member;
    return std::nullopt;
}

Model::Model(MockModelSpec spec) : spec_(std::move(spec)), id_(next_model_id.fetch_add(1)) {
    validate_spec(spec_);
}

TokenId Model::chain_token(std::uint64_t chain) const noexcept {
    if (spec_.eos_in_range) return static_cast<TokenId>(chain % spec_.vocab_size);
    const auto r = static_cast<TokenId>(chain % (spec_.vocab_size - 1));
    return r >= spec_.eos_token ? r + 1 : r;
}

void Model::check_owner(const ModelState& state) const {
    if (state.owner_ != id_) throw InvalidInput("model state belongs to a different model");
}

void Model::check_tokens(std::span<const TokenId> tokens) const {
    for (TokenId t : tokens) {
        if (t >= spec_.vocab_size) {
            throw InvalidInput(
                fmt::format("token {} outside vocabulary of size {}", t, spec_.vocab_size));
        }
    }
}

ModelState Model::init_state(std::span<const TokenId> prompt) const {
    if (prompt.empty()) throw InvalidInput("prompt must not be empty");
    check_tokens(prompt);
    ModelState state;
    state.owner_ = id_;
    state.prompt_length_ = prompt.size();
    state.tokens_.reserve(prompt.size());
    state.chain_.reserve(prompt.size() + 1);
    state.chain_.push_back(hash::chain_origin(spec_.seed));
    for (TokenId t : prompt) {
        state.tokens_.push_back(t);
        state.chain_.push_back(hash::chain_link(state.chain_.back(), t));
    }
    return state;
}

TokenId Model::next_token(const ModelState& state) const {
    check_owner(state);
    return predict({state.chain_head(), state.prefix_length()});
}

void Model::advance(ModelState& state, std::span<const TokenId> tokens) const {
    check_owner(state);
    if (tokens.empty()) throw InvalidInput("advance needs at least one token");
    check_tokens(tokens);
    for (TokenId t : tokens) {
        state.tokens_.push_back(t);
        state.chain_.push_back(hash::chain_link(state.chain_.back(), t));
    }
}

void Model::rollback_state(ModelState& state, std::size_t position) const {
    check_owner(state);
    if (position > state.prefix_length()) {
        throw InvalidRollback(fmt::format("rollback to {} beyond prefix length {}", position,
                                          state.prefix_length()));
    }
    if (position < state.prompt_length()) {
        throw InvalidRollback(fmt::format("rollback to {} below prompt length {}", position,
                                          state.prompt_length()));
    }
    state.tokens_.resize(position);
    state.chain_.resize(position + 1);
}

std::vector<TokenId> Model::verify_tokens(const ModelState& state,
                                          std::span<const TokenId> candidates) const {
    check_owner(state);
    if (candidates.empty()) throw InvalidInput("verify_tokens needs at least one candidate");
    check_tokens(candidates);
    std::vector<TokenId> predictions;
    predictions.reserve(candidates.size());
    PredictionContext context{state.chain_head(), state.prefix_length()};
    for (std::size_t j = 0; j < candidates.size(); ++j) {
        predictions.push_back(predict(context));
        context.chain = hash::chain_link(context.chain, candidates[j]);
        ++context.length;
    }
    return predictions;
}

ModelPtr make_model(const MockModelSpec& spec) {
    if (spec.kind == ModelKind::agreement_pair_member) {
        throw InvalidInput("agreement pair members are built with make_agreement_draft");
    }
    return std::make_shared<HashChainModel>(spec);
}

ModelPtr make_agreement_draft(ModelPtr verify, double rho) {
    if (!verify) throw InvalidInput("agreement draft needs a verify model");
    if (!(rho >= 0.0 && rho <= 1.0)) {
        throw InvalidInput(fmt::format("rho must lie in [0,1], got {}", rho));
    }
    if (verify->vocab_size() < 2) throw InvalidInput("agreement pair needs vocab_size >= 2");
    MockModelSpec spec = verify->spec();
    spec.kind = ModelKind::agreement_pair_member;
    spec.agreement_rho = rho;
    spec.eos_position.reset();
    spec.script.clear();
    return std::make_shared<AgreementDraftModel>(std::move(spec), std::move(verify));
}

ModelPair make_agreement_pair(std::uint64_t seed, double rho, std::uint32_t vocab_size,
                              TokenId eos_token, bool eos_in_range) {
    if (!(rho >= 0.0 && rho <= 1.0)) {
        throw InvalidInput(fmt::format("rho must lie in [0,1], got {}", rho));
    }
    MockModelSpec spec;
    spec.kind = ModelKind::hash_chain;
    spec.seed = seed;
    spec.vocab_size = vocab_size;
    spec.eos_token = eos_token;
    spec.eos_in_range = eos_in_range;
    auto verify = make_model(spec);
    auto draft = make_agreement_draft(verify, rho);
    return {std::move(draft), std::move(verify)};
}

}  // namespace amusd
