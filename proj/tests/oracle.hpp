#pragma once

// Reference implementations used by the tests. Written from the documented
// definitions only; nothing here includes library headers.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace oracle {

inline std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t chain(std::uint64_t seed, const std::vector<std::uint32_t>& prefix) {
    std::uint64_t h = mix(seed);
    for (auto t : prefix) h = mix(h ^ (static_cast<std::uint64_t>(t) + 0x9e3779b97f4a7c15ULL));
    return h;
}

struct HashModel {
    std::uint64_t seed = 0;
    std::uint32_t vocab = 32000;
    std::uint32_t eos = 2;
    bool eos_in_range = true;

    std::uint32_t predict(const std::vector<std::uint32_t>& prefix) const {
        const auto h = chain(seed, prefix);
        if (eos_in_range) return static_cast<std::uint32_t>(h % vocab);
        const auto r = static_cast<std::uint32_t>(h % (vocab - 1));
        return r >= eos ? r + 1 : r;
    }

    /// Draft of an agreement pair whose verify model is this one.
    std::uint32_t predict_draft(const std::vector<std::uint32_t>& prefix, double rho) const {
        const auto h = chain(seed, prefix);
        const auto v = predict(prefix);
        const double u = static_cast<double>(mix(h ^ 0xd1b54a32d192ed03ULL) >> 11) / 9007199254740992.0;
        if (u < rho) return v;
        return static_cast<std::uint32_t>((v + 1 + mix(h ^ 0x8cb92ba72f3d8dd7ULL) % (vocab - 1)) % vocab);
    }
};

struct Sequence {
    std::vector<std::uint32_t> tokens;
    bool hit_eos = false;
};

/// Greedy decoding one token at a time, recomputing the hash from scratch.
inline Sequence greedy(const HashModel& model, std::vector<std::uint32_t> prompt, std::size_t n) {
    Sequence out;
    while (out.tokens.size() < n) {
        const auto t = model.predict(prompt);
        out.tokens.push_back(t);
        prompt.push_back(t);
        if (t == model.eos) {
            out.hit_eos = true;
            break;
        }
    }
    return out;
}

/// Completion time of the synchronous engine when draft and verify always
/// agree: rounds of min(k, remaining - 1) serial draft forwards and one
/// verify forward, each round yielding drafts + 1 tokens.
inline double sync_full_agreement_ms(std::size_t n, std::size_t k, double draft_ms, double verify_ms) {
    double t = 0.0;
    std::size_t produced = 0;
    while (produced < n) {
        const std::size_t drafts = std::min(k, n - produced - 1);
        t += static_cast<double>(drafts) * draft_ms + verify_ms;
        produced += drafts + 1;
    }
    return t;
}

/// Completion time of the asynchronous engine when draft and verify always
/// agree. The draft publishes token j at j * draft_ms and never stalls. The
/// verifier starts as soon as it is free and a token is waiting; a token
/// published at exactly the instant the verifier frees up is not yet
/// visible (verify events win ties). Each verify forward costs verify_ms.
inline double amusd_full_agreement_ms(std::size_t n, double draft_ms, double verify_ms) {
    std::size_t p_v = 0;
    double free_at = 0.0;
    for (;;) {
        // Tokens visible when the verifier looks at time free_at.
        std::size_t visible = 0;
        while (visible < n && static_cast<double>(visible + 1) * draft_ms < free_at) ++visible;
        double start = free_at;
        if (visible <= p_v) {
            // Idle: wake on the next publish, which is then visible.
            visible = p_v + 1;
            start = std::max(free_at, static_cast<double>(visible) * draft_ms);
        }
        free_at = start + verify_ms;
        p_v = visible;
        if (p_v >= n) return free_at;
    }
}

}  // namespace oracle
