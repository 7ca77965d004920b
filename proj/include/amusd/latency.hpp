#pragma once

#include <cstddef>

namespace amusd {

/// Forward-pass cost model, in milliseconds. Defaults: the draft model costs
/// 10 ms per generated token and a verify forward costs a flat 25 ms
/// regardless of how many candidates it scores.
struct LatencyModel {
    double draft_base_ms = 0.0;
    double draft_per_token_ms = 10.0;
    double verify_base_ms = 25.0;
    double verify_per_token_ms = 0.0;
    double rollback_overhead_ms = 0.0;

    double draft_cost(std::size_t batch = 1) const noexcept {
        return draft_base_ms + draft_per_token_ms * static_cast<double>(batch);
    }
    double verify_cost(std::size_t batch) const noexcept {
        return verify_base_ms + verify_per_token_ms * static_cast<double>(batch);
    }

    /// Throws InvalidInput naming the first negative or non-finite field.
    void validate() const;

    friend bool operator==(const LatencyModel&, const LatencyModel&) = default;
};

}  // namespace amusd
