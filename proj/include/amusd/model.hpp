#pragma once

// Deterministic mock language models.
//
// Every model is a pure function of its spec and the token prefix it has
// seen. The prefix is summarized incrementally by a 64-bit hash chain which
// plays the role of the KV cache: advancing appends one chain link per token,
// rolling back crops the chain.
//
// Hash chain (stable, re-implementable from this comment alone):
//
//   mix64(z):  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9
//              z = (z ^ (z >> 27)) * 0x94d049bb133111eb
//              return z ^ (z >> 31)                         (splitmix64 finalizer)
//   h_0     = mix64(seed)
//   h_i     = mix64(h_{i-1} ^ (t_i + 0x9e3779b97f4a7c15))   for each token t_i
//
// A hash_chain model predicts `h_n mod vocab_size` after n tokens. With
// eos_in_range == false it predicts r = h_n mod (vocab_size - 1), mapped to
// r + 1 when r >= eos_token, so eos is never emitted.
//
// An agreement-pair draft keys two further values on h_n:
//   u   = (mix64(h_n ^ 0xd1b54a32d192ed03) >> 11) * 2^-53     uniform in [0,1)
//   alt = mix64(h_n ^ 0x8cb92ba72f3d8dd7)
// and predicts the verify model's token v when u < rho, otherwise
// (v + 1 + alt mod (vocab_size - 1)) mod vocab_size, which is never v.

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace amusd {

using TokenId = std::uint32_t;

namespace hash {

inline constexpr std::uint64_t kTokenSalt = 0x9e3779b97f4a7c15ULL;
inline constexpr std::uint64_t kAgreeSalt = 0xd1b54a32d192ed03ULL;
inline constexpr std::uint64_t kAltSalt = 0x8cb92ba72f3d8dd7ULL;

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t chain_origin(std::uint64_t seed) noexcept { return mix64(seed); }

constexpr std::uint64_t chain_link(std::uint64_t head, TokenId token) noexcept {
    return mix64(head ^ (static_cast<std::uint64_t>(token) + kTokenSalt));
}

/// Uniform double in [0, 1) from the top 53 bits of a 64-bit value.
constexpr double unit_interval(std::uint64_t bits) noexcept {
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

}  // namespace hash

enum class ModelKind { hash_chain, scripted, agreement_pair_member };

std::string_view to_string(ModelKind kind) noexcept;
std::optional<ModelKind> parse_model_kind(std::string_view name) noexcept;

struct MockModelSpec {
    ModelKind kind = ModelKind::hash_chain;
    std::uint64_t seed = 0;
    std::uint32_t vocab_size = 32000;
    TokenId eos_token = 2;
    /// Absolute 1-based position at which eos is forced.
    std::optional<std::size_t> eos_position;
    /// Only meaningful for agreement_pair_member.
    double agreement_rho = 1.0;
    bool eos_in_range = true;
    /// Scripted overrides, keyed by absolute 1-based position. Positions not
    /// listed fall back to the hash chain.
    std::map<std::size_t, TokenId> script;
};

class Model;

/// Incremental decoding state of one model (the KV-cache analog).
class ModelState {
public:
    std::size_t prefix_length() const noexcept { return tokens_.size(); }
    std::size_t prompt_length() const noexcept { return prompt_length_; }
    std::span<const TokenId> tokens() const noexcept { return tokens_; }
    std::uint64_t chain_head() const noexcept { return chain_.back(); }

private:
    friend class Model;
    ModelState() = default;

    std::uint64_t owner_ = 0;
    std::size_t prompt_length_ = 0;
    std::vector<TokenId> tokens_;
    // chain_[i] is the hash after the first i tokens; size is prefix_length + 1.
    std::vector<std::uint64_t> chain_;
};

/// What a prediction may depend on: the chain hash of the prefix and its length.
struct PredictionContext {
    std::uint64_t chain = 0;
    std::size_t length = 0;
};

/// Immutable after construction, safe to share across threads.
class Model {
public:
    virtual ~Model() = default;
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const MockModelSpec& spec() const noexcept { return spec_; }
    std::uint32_t vocab_size() const noexcept { return spec_.vocab_size; }
    TokenId eos_token() const noexcept { return spec_.eos_token; }

    ModelState init_state(std::span<const TokenId> prompt) const;

    /// Greedy prediction for position prefix_length + 1. Does not mutate.
    TokenId next_token(const ModelState& state) const;

    void advance(ModelState& state, std::span<const TokenId> tokens) const;

    /// Crop the state back to `position` tokens.
    void rollback_state(ModelState& state, std::size_t position) const;

    /// T_v[j] is the prediction for position prefix_length + j given the
    /// prefix plus candidates[0..j-1]. Does not mutate the state.
    std::vector<TokenId> verify_tokens(const ModelState& state,
                                       std::span<const TokenId> candidates) const;

    TokenId predict(const PredictionContext& context) const { return predict_impl(context); }

protected:
    explicit Model(MockModelSpec spec);

    virtual TokenId predict_impl(const PredictionContext& context) const = 0;

    /// Hash-chain token for the context, honoring eos_in_range.
    TokenId chain_token(std::uint64_t chain) const noexcept;

private:
    void check_owner(const ModelState& state) const;
    void check_tokens(std::span<const TokenId> tokens) const;

    MockModelSpec spec_;
    std::uint64_t id_;
};

using ModelPtr = std::shared_ptr<const Model>;

struct ModelPair {
    ModelPtr draft;
    ModelPtr verify;
};

/// Builds a hash_chain or scripted model.
ModelPtr make_model(const MockModelSpec& spec);

/// A draft model that agrees with `verify` at each prefix with probability rho.
ModelPtr make_agreement_draft(ModelPtr verify, double rho);

/// Verify model is hash_chain(seed); draft agrees with it with probability rho.
ModelPair make_agreement_pair(std::uint64_t seed, double rho, std::uint32_t vocab_size,
                              TokenId eos_token, bool eos_in_range = true);

}  // namespace amusd
