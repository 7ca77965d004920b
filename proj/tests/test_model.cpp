#include <random>

#include <gtest/gtest.h>

#include "amusd/errors.hpp"
#include "amusd/model.hpp"
#include "oracle.hpp"

using namespace amusd;

namespace {

ModelPtr hash_model(std::uint64_t seed, std::uint32_t vocab = 32000, TokenId eos = 2) {
    MockModelSpec spec;
    spec.seed = seed;
    spec.vocab_size = vocab;
    spec.eos_token = eos;
    return make_model(spec);
}

std::vector<TokenId> random_tokens(std::mt19937_64& rng, std::size_t n, std::uint32_t vocab) {
    std::vector<TokenId> out(n);
    for (auto& t : out) t = static_cast<TokenId>(rng() % vocab);
    return out;
}

}  // namespace

TEST(Hash, Mix64MatchesFrozenValues) {
    EXPECT_EQ(hash::mix64(0), 0u);
    EXPECT_EQ(hash::mix64(1), 0x5692161d100b05e5ULL);
    EXPECT_EQ(hash::mix64(12345), oracle::mix(12345));
}

TEST(InitState, PrefixLengthIsPromptLength) {
    auto m = hash_model(1);
    const std::vector<TokenId> prompt{1, 2, 3};
    auto s = m->init_state(prompt);
    EXPECT_EQ(s.prefix_length(), 3u);
    EXPECT_EQ(s.prompt_length(), 3u);
    EXPECT_EQ(std::vector<TokenId>(s.tokens().begin(), s.tokens().end()), prompt);
}

TEST(InitState, EmptyPromptRejected) {
    auto m = hash_model(1);
    EXPECT_THROW(m->init_state(std::vector<TokenId>{}), InvalidInput);
}

TEST(InitState, OutOfVocabularyRejected) {
    auto m = hash_model(1, 10);
    EXPECT_THROW(m->init_state(std::vector<TokenId>{1, 10}), InvalidInput);
}

TEST(InitState, Seed42Prompt123MatchesOracle) {
    auto m = hash_model(42);
    auto s = m->init_state(std::vector<TokenId>{1, 2, 3});
    EXPECT_EQ(s.chain_head(), 0x38d4fa51163ac43aULL);
    EXPECT_EQ(m->next_token(s), 20538u);
    EXPECT_EQ(m->next_token(s), (oracle::HashModel{42, 32000, 2, true}.predict({1, 2, 3})));
}

TEST(NextToken, ScriptedTableLookup) {
    MockModelSpec spec;
    spec.kind = ModelKind::scripted;
    spec.script = {{4, 17}};
    auto m = make_model(spec);
    auto s = m->init_state(std::vector<TokenId>{1, 2, 3});
    EXPECT_EQ(m->next_token(s), 17u);
}

TEST(NextToken, ScriptedEosPosition) {
    MockModelSpec spec;
    spec.kind = ModelKind::scripted;
    spec.eos_position = 4;
    spec.eos_token = 9;
    auto m = make_model(spec);
    auto s = m->init_state(std::vector<TokenId>{1, 2, 3});
    EXPECT_EQ(m->next_token(s), 9u);
    // Past the forced position the hash chain takes over again.
    m->advance(s, std::vector<TokenId>{9});
    EXPECT_EQ(m->next_token(s), (oracle::HashModel{0, 32000, 9, true}.predict({1, 2, 3, 9})));
}

TEST(NextToken, Seed7Vocab101Prefix56) {
    auto m = hash_model(7, 101);
    auto s = m->init_state(std::vector<TokenId>{5, 6});
    EXPECT_EQ(s.chain_head(), 0x750434f002a20d5eULL);
    EXPECT_EQ(m->next_token(s), 10u);
}

TEST(NextToken, DoesNotMutateAndIsDeterministic) {
    auto a = hash_model(5);
    auto b = hash_model(5);
    auto sa = a->init_state(std::vector<TokenId>{8, 9});
    auto sb = b->init_state(std::vector<TokenId>{8, 9});
    const auto first = a->next_token(sa);
    EXPECT_EQ(a->next_token(sa), first);
    EXPECT_EQ(b->next_token(sb), first);
    EXPECT_EQ(sa.prefix_length(), 2u);
}

TEST(NextToken, ForeignStateRejected) {
    auto a = hash_model(5);
    auto b = hash_model(5);
    auto sa = a->init_state(std::vector<TokenId>{1});
    EXPECT_THROW(b->next_token(sa), InvalidInput);
}

TEST(NextToken, EosExcludedFromRange) {
    MockModelSpec spec;
    spec.seed = 3;
    spec.vocab_size = 5;
    spec.eos_token = 2;
    spec.eos_in_range = false;
    auto m = make_model(spec);
    const oracle::HashModel ref{3, 5, 2, false};
    std::vector<TokenId> prefix{1};
    auto s = m->init_state(prefix);
    for (int i = 0; i < 200; ++i) {
        const auto t = m->next_token(s);
        EXPECT_NE(t, 2u);
        EXPECT_EQ(t, ref.predict(prefix));
        prefix.push_back(t);
        m->advance(s, std::vector<TokenId>{t});
    }
}

TEST(Advance, IncrementsLength) {
    auto m = hash_model(1);
    auto s = m->init_state(std::vector<TokenId>{1, 2, 3});
    m->advance(s, std::vector<TokenId>{4});
    EXPECT_EQ(s.prefix_length(), 4u);
}

TEST(Advance, RejectsEmptyAndOutOfRange) {
    auto m = hash_model(1, 50);
    auto s = m->init_state(std::vector<TokenId>{1});
    EXPECT_THROW(m->advance(s, std::vector<TokenId>{}), InvalidInput);
    EXPECT_THROW(m->advance(s, std::vector<TokenId>{50}), InvalidInput);
    EXPECT_EQ(s.prefix_length(), 1u);
}

TEST(Advance, OneByOneEqualsAllAtOnce) {
    auto m = hash_model(11);
    const std::vector<TokenId> more{7, 8, 9, 10, 11};
    auto a = m->init_state(std::vector<TokenId>{1});
    auto b = m->init_state(std::vector<TokenId>{1});
    for (auto t : more) m->advance(a, std::vector<TokenId>{t});
    m->advance(b, more);
    EXPECT_EQ(a.chain_head(), b.chain_head());
    EXPECT_EQ(m->next_token(a), m->next_token(b));
}

TEST(Advance, MatchesOracleOnConcatenatedPrefix) {
    auto m = hash_model(99, 1000);
    auto s = m->init_state(std::vector<TokenId>{4, 5});
    m->advance(s, std::vector<TokenId>{6, 7, 8});
    EXPECT_EQ(m->next_token(s), (oracle::HashModel{99, 1000, 2, true}.predict({4, 5, 6, 7, 8})));
}

TEST(Rollback, ToCurrentLengthIsNoOp) {
    auto m = hash_model(3);
    auto s = m->init_state(std::vector<TokenId>{1, 2});
    m->advance(s, std::vector<TokenId>{3, 4});
    const auto before = m->next_token(s);
    m->rollback_state(s, 4);
    EXPECT_EQ(s.prefix_length(), 4u);
    EXPECT_EQ(m->next_token(s), before);
}

TEST(Rollback, RollbackThenAdvanceEqualsFreshHistory) {
    auto m = hash_model(3);
    auto s = m->init_state(std::vector<TokenId>{1});
    m->advance(s, std::vector<TokenId>{10, 11, 12});
    m->rollback_state(s, 2);
    m->advance(s, std::vector<TokenId>{21, 22});
    auto fresh = m->init_state(std::vector<TokenId>{1});
    m->advance(fresh, std::vector<TokenId>{10, 21, 22});
    EXPECT_EQ(s.chain_head(), fresh.chain_head());
    EXPECT_EQ(m->next_token(s), m->next_token(fresh));
    EXPECT_EQ(std::vector<TokenId>(s.tokens().begin(), s.tokens().end()),
              (std::vector<TokenId>{1, 10, 21, 22}));
}

TEST(Rollback, OutOfBoundsRejected) {
    auto m = hash_model(3);
    auto s = m->init_state(std::vector<TokenId>{1, 2, 3});
    m->advance(s, std::vector<TokenId>{4});
    EXPECT_THROW(m->rollback_state(s, 2), InvalidRollback);
    EXPECT_THROW(m->rollback_state(s, 5), InvalidRollback);
    EXPECT_EQ(s.prefix_length(), 4u);
}

TEST(Rollback, RandomInterleavingsMatchFreshState) {
    std::mt19937_64 rng(2024);
    auto m = hash_model(77, 300);
    for (int trial = 0; trial < 200; ++trial) {
        auto prompt = random_tokens(rng, 1 + rng() % 4, 300);
        auto s = m->init_state(prompt);
        std::vector<TokenId> net = prompt;
        for (int op = 0; op < 30; ++op) {
            if (rng() % 3 == 0 && net.size() > prompt.size()) {
                const auto pos = prompt.size() + rng() % (net.size() - prompt.size() + 1);
                m->rollback_state(s, pos);
                net.resize(pos);
            } else {
                auto add = random_tokens(rng, 1 + rng() % 3, 300);
                m->advance(s, add);
                net.insert(net.end(), add.begin(), add.end());
            }
        }
        auto fresh = m->init_state(prompt);
        if (net.size() > prompt.size()) {
            m->advance(fresh, std::span<const TokenId>(net).subspan(prompt.size()));
        }
        ASSERT_EQ(m->next_token(s), m->next_token(fresh));
        ASSERT_EQ(m->next_token(s), (oracle::HashModel{77, 300, 2, true}.predict(net)));
    }
}

TEST(VerifyTokens, SingleCandidateIgnoresItsValue) {
    auto m = hash_model(8);
    auto s = m->init_state(std::vector<TokenId>{1, 2});
    const auto expected = m->next_token(s);
    EXPECT_EQ(m->verify_tokens(s, std::vector<TokenId>{0}), std::vector<TokenId>{expected});
    EXPECT_EQ(m->verify_tokens(s, std::vector<TokenId>{31999}), std::vector<TokenId>{expected});
}

TEST(VerifyTokens, ScriptedFullMatch) {
    MockModelSpec spec;
    spec.kind = ModelKind::scripted;
    spec.script = {{3, 9}, {4, 9}, {5, 9}};
    auto m = make_model(spec);
    auto s = m->init_state(std::vector<TokenId>{1, 2});
    EXPECT_EQ(m->verify_tokens(s, std::vector<TokenId>{9, 9, 9}), (std::vector<TokenId>{9, 9, 9}));
}

TEST(VerifyTokens, EmptyCandidatesRejected) {
    auto m = hash_model(8);
    auto s = m->init_state(std::vector<TokenId>{1});
    EXPECT_THROW(m->verify_tokens(s, std::vector<TokenId>{}), InvalidInput);
}

TEST(VerifyTokens, EqualsSequentialOracle) {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 300; ++trial) {
        const auto seed = rng();
        const std::uint32_t vocab = 2 + static_cast<std::uint32_t>(rng() % 500);
        auto m = hash_model(seed, vocab, 0);
        auto prompt = random_tokens(rng, 1 + rng() % 5, vocab);
        auto candidates = random_tokens(rng, 1 + rng() % 16, vocab);
        auto s = m->init_state(prompt);
        const auto got = m->verify_tokens(s, candidates);
        ASSERT_EQ(s.prefix_length(), prompt.size());

        // Sequential next_token/advance on a scratch state.
        auto scratch = m->init_state(prompt);
        const oracle::HashModel ref{seed, vocab, 0, true};
        std::vector<TokenId> prefix = prompt;
        ASSERT_EQ(got.size(), candidates.size());
        for (std::size_t j = 0; j < candidates.size(); ++j) {
            ASSERT_EQ(got[j], m->next_token(scratch));
            ASSERT_EQ(got[j], ref.predict(prefix));
            m->advance(scratch, std::vector<TokenId>{candidates[j]});
            prefix.push_back(candidates[j]);
        }
    }
}

TEST(AgreementPair, RhoOneAlwaysAgrees) {
    auto pair = make_agreement_pair(5, 1.0, 1000, 2);
    std::mt19937_64 rng(1);
    for (int i = 0; i < 2000; ++i) {
        auto prefix = random_tokens(rng, 1 + rng() % 8, 1000);
        ASSERT_EQ(pair.draft->next_token(pair.draft->init_state(prefix)),
                  pair.verify->next_token(pair.verify->init_state(prefix)));
    }
}

TEST(AgreementPair, RhoZeroNeverAgrees) {
    auto pair = make_agreement_pair(5, 0.0, 2, 0);
    std::mt19937_64 rng(2);
    for (int i = 0; i < 2000; ++i) {
        auto prefix = random_tokens(rng, 1 + rng() % 8, 2);
        ASSERT_NE(pair.draft->next_token(pair.draft->init_state(prefix)),
                  pair.verify->next_token(pair.verify->init_state(prefix)));
    }
}

TEST(AgreementPair, RhoPointEightCalibration) {
    auto pair = make_agreement_pair(2024, 0.8, 32000, 2);
    std::mt19937_64 rng(99);
    int agree = 0;
    const int samples = 10000;
    for (int i = 0; i < samples; ++i) {
        auto prefix = random_tokens(rng, 1 + rng() % 12, 32000);
        agree += pair.draft->next_token(pair.draft->init_state(prefix)) ==
                 pair.verify->next_token(pair.verify->init_state(prefix));
    }
    const double rate = static_cast<double>(agree) / samples;
    EXPECT_GE(rate, 0.78);
    EXPECT_LE(rate, 0.82);
}

TEST(AgreementPair, DraftMatchesBruteForceOracle) {
    const oracle::HashModel ref{11, 50, 2, true};
    auto pair = make_agreement_pair(11, 0.5, 50, 2);
    std::vector<TokenId> prefix{3, 4};
    // Frozen from an independent implementation.
    const std::vector<TokenId> draft_expected{33, 14, 37, 15, 39, 0};
    const std::vector<TokenId> verify_expected{16, 14, 37, 15, 39, 0};
    for (std::size_t i = 0; i < draft_expected.size(); ++i) {
        EXPECT_EQ(pair.draft->next_token(pair.draft->init_state(prefix)), draft_expected[i]);
        EXPECT_EQ(pair.verify->next_token(pair.verify->init_state(prefix)), verify_expected[i]);
        EXPECT_EQ(draft_expected[i], ref.predict_draft(prefix, 0.5));
        prefix.push_back(0);
    }
    std::mt19937_64 rng(5);
    for (double rho : {0.0, 0.25, 0.5, 0.95}) {
        auto p = make_agreement_pair(11, rho, 50, 2);
        for (int i = 0; i < 500; ++i) {
            auto pre = random_tokens(rng, 1 + rng() % 6, 50);
            ASSERT_EQ(p.draft->next_token(p.draft->init_state(pre)), ref.predict_draft(pre, rho));
        }
    }
}

TEST(AgreementPair, InvalidRhoRejected) {
    EXPECT_THROW(make_agreement_pair(1, 1.5, 100, 2), InvalidInput);
    EXPECT_THROW(make_agreement_pair(1, -0.1, 100, 2), InvalidInput);
}

TEST(ModelSpec, InvalidSpecsRejected) {
    MockModelSpec spec;
    spec.vocab_size = 10;
    spec.eos_token = 10;
    EXPECT_THROW(make_model(spec), InvalidInput);
    spec.eos_token = 2;
    spec.eos_position = 0;
    EXPECT_THROW(make_model(spec), InvalidInput);
    spec.eos_position.reset();
    spec.script = {{3, 11}};
    EXPECT_THROW(make_model(spec), InvalidInput);
}

TEST(ModelKindNames, RoundTrip) {
    for (auto k : {ModelKind::hash_chain, ModelKind::scripted, ModelKind::agreement_pair_member}) {
        EXPECT_EQ(parse_model_kind(to_string(k)), k);
    }
    EXPECT_FALSE(parse_model_kind("llama"));
}
