#include <thread>

#include <gtest/gtest.h>

#include "amusd/coordination.hpp"
#include "amusd/engines.hpp"
#include "amusd/errors.hpp"
#include "oracle.hpp"

using namespace amusd;

namespace {

std::vector<TokenId> prompt_of(std::size_t n) {
    std::vector<TokenId> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<TokenId>(i + 1);
    return p;
}

}  // namespace

TEST(TokenBuffer, PushAndCopy) {
    TokenBuffer b(4);
    EXPECT_EQ(b.size(), 0u);
    b.push(5);
    b.push(6);
    EXPECT_EQ(b.size(), 2u);
    EXPECT_EQ(b.at(1), 6u);
    EXPECT_EQ(b.copy(0, 2), (std::vector<TokenId>{5, 6}));
    b.push(7);
    b.push(8);
    EXPECT_TRUE(b.full());
    EXPECT_THROW(b.push(9), ProtocolViolation);
}

TEST(TokenBuffer, RewindReplacesLastToken) {
    TokenBuffer b(8);
    for (TokenId t : {1, 2, 3, 4, 5}) b.push(t);
    b.rewind(3, 42);
    EXPECT_EQ(b.copy(0, b.size()), (std::vector<TokenId>{1, 2, 42}));
    EXPECT_THROW(b.rewind(0, 1), ProtocolViolation);
    EXPECT_THROW(b.rewind(4, 1), ProtocolViolation);
}

TEST(TokenBuffer, SecondWriterThreadRejected) {
    TokenBuffer b(4);
    b.push(1);
    bool threw = false;
    std::thread other([&] {
        try {
            b.push(2);
        } catch (const ProtocolViolation&) {
            threw = true;
        }
    });
    other.join();
    EXPECT_TRUE(threw);
    EXPECT_EQ(b.size(), 1u);
}

TEST(PublishDraft, AdvancesPositionByOne) {
    SharedDecodeState shared(10, 8);
    EXPECT_EQ(shared.draft_position(), 10u);
    shared.publish_draft_token(7);
    EXPECT_EQ(shared.draft_position(), 11u);
    EXPECT_EQ(shared.draft_buffer().at(0), 7u);
}

TEST(PublishDraft, ObserverNeverSeesStaleToken) {
    constexpr std::size_t n = 200000;
    auto token_at = [](std::size_t i) { return static_cast<TokenId>((i * 2654435761u) % 32000); };
    SharedDecodeState shared(1, n);
    std::atomic<bool> done{false};
    std::size_t stale = 0;
    std::size_t observed = 0;
    std::thread reader([&] {
        std::size_t last = 0;
        while (!done.load()) {
            const auto size = shared.draft_buffer().size();
            if (size < last) ++stale;
            for (std::size_t i = last; i < size; ++i) {
                if (shared.draft_buffer().at(i) != token_at(i)) ++stale;
            }
            observed += size - std::min(size, last);
            last = size;
        }
    });
    for (std::size_t i = 0; i < n; ++i) shared.publish_draft_token(token_at(i));
    done.store(true);
    reader.join();
    EXPECT_EQ(stale, 0u);
}

TEST(ReadWindow, WindowArithmetic) {
    SharedDecodeState shared(3, 10);
    for (TokenId t : {10, 11, 12, 13, 14, 15}) shared.publish_draft_token(t);
    const std::vector<TokenId> matched{10, 11};
    shared.publish_verified(matched);
    EXPECT_EQ(shared.verified_position(), 5u);
    EXPECT_EQ(shared.draft_position(), 9u);
    EXPECT_EQ(shared.read_draft_window(), (std::vector<TokenId>{12, 13, 14, 15}));
}

TEST(ReadWindow, EmptyWhenCaughtUp) {
    SharedDecodeState shared(3, 10);
    EXPECT_TRUE(shared.read_draft_window().empty());
    shared.publish_draft_token(4);
    shared.publish_verified(std::vector<TokenId>{4});
    EXPECT_TRUE(shared.read_draft_window().empty());
}

TEST(PublishVerified, MatchedOnly) {
    SharedDecodeState shared(2, 10);
    for (TokenId t : {1, 2, 3, 4}) shared.publish_draft_token(t);
    shared.publish_verified(std::vector<TokenId>{1, 2, 3, 4});
    EXPECT_EQ(shared.verified_position(), 6u);
    EXPECT_FALSE(shared.rollback_pending());
}

TEST(PublishVerified, MatchedPlusCorrectionRaisesRollback) {
    SharedDecodeState shared(2, 10);
    for (TokenId t : {1, 2, 3, 4}) shared.publish_draft_token(t);
    shared.publish_verified(std::vector<TokenId>{1, 2, 30});
    shared.request_rollback({5, 30});
    EXPECT_EQ(shared.verified_position(), 5u);
    EXPECT_TRUE(shared.rollback_pending());
    EXPECT_EQ(shared.pending_rollback(), (RollbackRequest{5, 30}));
}

TEST(PublishVerified, ImmediateMismatchAdvancesByOne) {
    SharedDecodeState shared(2, 10);
    shared.publish_draft_token(1);
    shared.publish_verified(std::vector<TokenId>{9});
    shared.request_rollback({3, 9});
    EXPECT_EQ(shared.verified_position(), 3u);
}

TEST(RequestRollback, HandshakeRules) {
    SharedDecodeState shared(10, 10);
    shared.publish_draft_token(1);
    shared.publish_draft_token(2);
    shared.publish_verified(std::vector<TokenId>{5});
    EXPECT_THROW(shared.request_rollback({12, 5}), ProtocolViolation);  // not the frontier
    EXPECT_THROW(shared.request_rollback({11, 6}), ProtocolViolation);  // correction not in V
    shared.request_rollback({11, 5});
    EXPECT_THROW(shared.request_rollback({11, 5}), ProtocolViolation);
    EXPECT_THROW(shared.read_draft_window(), ProtocolViolation);
    EXPECT_THROW(shared.publish_verified(std::vector<TokenId>{1}), ProtocolViolation);
}

TEST(AcknowledgeRollback, ResynchronizesDraft) {
    const auto pair = make_agreement_pair(4, 0.5, 100, 0);
    const auto prompt = prompt_of(9);
    SharedDecodeState shared(prompt.size(), 20);
    auto draft_state = pair.draft->init_state(prompt);
    // Draft runs to p_d = 15.
    for (int i = 0; i < 6; ++i) {
        const auto t = pair.draft->next_token(draft_state);
        pair.draft->advance(draft_state, std::vector<TokenId>{t});
        shared.publish_draft_token(t);
    }
    ASSERT_EQ(shared.draft_position(), 15u);
    const auto d = shared.draft_buffer().copy(0, 6);
    // Verifier accepts two and corrects position 12.
    const TokenId c = (d[2] + 1) % 100;
    shared.publish_verified(std::vector<TokenId>{d[0], d[1], c});
    shared.request_rollback({12, c});

    const auto req = shared.acknowledge_rollback(*pair.draft, draft_state);
    EXPECT_EQ(req, (RollbackRequest{12, c}));
    EXPECT_EQ(shared.draft_position(), 12u);
    EXPECT_EQ(shared.draft_position(), shared.verified_position());
    EXPECT_FALSE(shared.rollback_pending());
    EXPECT_EQ(shared.draft_buffer().copy(0, 2), shared.verified_buffer().copy(0, 2));
    EXPECT_EQ(shared.draft_buffer().copy(0, 2 + 1), shared.verified_tokens());
    EXPECT_EQ(draft_state.prefix_length(), 12u);

    std::vector<TokenId> expected_history = prompt;
    expected_history.insert(expected_history.end(), {d[0], d[1], c});
    EXPECT_EQ(std::vector<TokenId>(draft_state.tokens().begin(), draft_state.tokens().end()), expected_history);
    auto fresh = pair.draft->init_state(expected_history);
    EXPECT_EQ(pair.draft->next_token(draft_state), pair.draft->next_token(fresh));
    EXPECT_THROW(shared.acknowledge_rollback(*pair.draft, draft_state), ProtocolViolation);
}

TEST(AcknowledgeRollback, RhoZeroProgressesEveryStep) {
    const auto pair = make_agreement_pair(9, 0.0, 1000, 0, false);
    const auto prompt = prompt_of(4);
    const std::size_t n = 100;
    SharedDecodeState shared(prompt.size(), n);
    auto draft_state = pair.draft->init_state(prompt);
    auto verify_state = pair.verify->init_state(prompt);
    std::size_t last_p_v = shared.verified_position();
    std::size_t steps = 0;
    while (!shared.is_complete()) {
        // Draft a few tokens, then let the verifier act.
        for (int i = 0; i < 3; ++i) draft_loop_step(shared, *pair.draft, draft_state, std::nullopt);
        const auto step = verify_loop_step(shared, *pair.verify, verify_state);
        if (step.status == VerifyStatus::idle) continue;
        ++steps;
        ASSERT_GT(shared.verified_position(), last_p_v);
        ASSERT_EQ(step.appended, 1u);
        last_p_v = shared.verified_position();
    }
    EXPECT_EQ(steps, n);
    const oracle::HashModel ref{9, 1000, 0, false};
    EXPECT_EQ(shared.verified_tokens(), oracle::greedy(ref, prompt, n).tokens);
}

TEST(Completion, EosInVerifiedSignalsCompletion) {
    MockModelSpec spec;
    spec.kind = ModelKind::scripted;
    spec.eos_position = 3;
    spec.eos_token = 0;
    auto verify = make_model(spec);
    auto draft = make_agreement_draft(verify, 1.0);
    const std::vector<TokenId> prompt{5, 6};
    SharedDecodeState shared(prompt.size(), 50);
    auto ds = draft->init_state(prompt);
    auto vs = verify->init_state(prompt);
    EXPECT_EQ(draft_loop_step(shared, *draft, ds, std::nullopt).status, DraftStatus::generated);
    EXPECT_EQ(draft_loop_step(shared, *draft, ds, std::nullopt).status, DraftStatus::generated);
    const auto step = verify_loop_step(shared, *verify, vs);
    EXPECT_TRUE(step.completed);
    EXPECT_TRUE(shared.is_complete());
    EXPECT_EQ(shared.verified_tokens(), std::vector<TokenId>{0});
    // The draft observes completion on its next iteration.
    EXPECT_EQ(draft_loop_step(shared, *draft, ds, std::nullopt).status, DraftStatus::stopped);
    EXPECT_EQ(finish_reason_of(shared, 0), FinishReason::eos);
}

TEST(Completion, LengthLimitSignalsCompletion) {
    const auto pair = make_agreement_pair(3, 1.0, 1000, 0, false);
    const std::vector<TokenId> prompt{1};
    SharedDecodeState shared(prompt.size(), 4);
    auto ds = pair.draft->init_state(prompt);
    auto vs = pair.verify->init_state(prompt);
    for (int i = 0; i < 6; ++i) draft_loop_step(shared, *pair.draft, ds, std::nullopt);
    EXPECT_EQ(shared.draft_position(), 5u);  // D holds at most N tokens
    const auto step = verify_loop_step(shared, *pair.verify, vs);
    EXPECT_TRUE(step.completed);
    EXPECT_EQ(shared.verified_tokens().size(), 4u);
    EXPECT_EQ(finish_reason_of(shared, 0), FinishReason::length_limit);
}

TEST(InvariantChecker, FlagsViolations) {
    InvariantChecker checker;
    checker.on_draft_publish(5, 7);
    EXPECT_EQ(checker.violations(), 1u);
    checker.on_window_read(5, 6, true);
    EXPECT_EQ(checker.violations(), 2u);
    checker.on_verified_publish(5, 6, true);
    EXPECT_EQ(checker.violations(), 3u);
    checker.on_verified_publish(6, 6, false);
    EXPECT_GE(checker.violations(), 3u);
    EXPECT_FALSE(checker.messages().empty());
}

TEST(InvariantChecker, CleanSingleThreadedRunHasNoViolations) {
    const auto pair = make_agreement_pair(21, 0.6, 500, 0, false);
    const auto prompt = prompt_of(3);
    SharedDecodeState shared(prompt.size(), 64);
    InvariantChecker checker;
    shared.set_monitor(&checker);
    auto ds = pair.draft->init_state(prompt);
    auto vs = pair.verify->init_state(prompt);
    std::size_t i = 0;
    while (!shared.is_complete()) {
        if (i++ % 3 == 2) {
            verify_loop_step(shared, *pair.verify, vs);
        } else {
            draft_loop_step(shared, *pair.draft, ds, std::nullopt);
        }
    }
    EXPECT_EQ(checker.violations(), 0u) << (checker.messages().empty() ? "" : checker.messages().front());
    EXPECT_GT(checker.acks(), 0u);
}
