#include <doctest.h>

#include <cmath>

#include "checks.hpp"
#include "oracles.hpp"
#include "recindial/vpdecode.hpp"

using namespace recindial;

namespace {

Vocabulary five_three() {
    const std::vector<std::string> items{"m1", "m2"}, base{"a"};
    return Vocabulary::build(items, base);
}

DecodeOptions opts(std::size_t n_max, std::size_t width = 1, std::size_t k = 10) {
    DecodeOptions o;
    o.max_steps = n_max;
    o.beam_width = width;
    o.top_k = k;
    return o;
}

}  // namespace

TEST_CASE("automaton transitions") {
    const Vocabulary v = checks::tiny_vocab();
    GenerationState s;
    s = advance(s, 5, v);
    CHECK_FALSE(s.in_slot);
    s = advance(s, v.rec_start(), v);
    CHECK(s.in_slot);
    CHECK_THROWS_AS(advance(s, 5, v), AutomatonViolation);
    s = advance(s, 10, v);
    CHECK_THROWS_AS(advance(s, v.eos(), v), AutomatonViolation);
    s = advance(s, v.rec_end(), v);
    CHECK_FALSE(s.in_slot);
    CHECK_THROWS_AS(advance(s, 11, v), AutomatonViolation);
    CHECK_NOTHROW(advance(s, 11, v, false));
    s = advance(s, v.eos(), v);
    CHECK(s.finished);
    CHECK_THROWS_AS(advance(s, 5, v), AutomatonViolation);
    CHECK_THROWS_AS(advance(GenerationState{}, 99, v), AutomatonViolation);
}

TEST_CASE("greedy: a scorer that prefers [EOS] gives an empty response") {
    const Vocabulary v = checks::tiny_vocab();
    const std::vector<TokenId> prefix{5, 1};
    const auto scorer = oracle::scripted_scorer(v, prefix.size(), {});
    const auto r = greedy_generate(prefix, scorer, {}, v, opts(10));
    CHECK(r.response_tokens.empty());
    CHECK(r.items.empty());
}

TEST_CASE("greedy: a scripted slot yields its item first") {
    const Vocabulary v = checks::tiny_vocab();
    const std::vector<TokenId> prefix{5, 1};
    const TokenId m1 = v.item_token("m1");
    const auto scorer = oracle::scripted_scorer(v, prefix.size(), {v.rec_start(), m1, v.rec_end(), v.eos()});
    const auto r = greedy_generate(prefix, scorer, {}, v, opts(10));
    CHECK(r.response_tokens == std::vector<TokenId>{v.rec_start(), m1, v.rec_end()});
    REQUIRE(r.items.size() == 3);
    CHECK(r.items[0].item_id == "m1");
    const double want = std::exp(10.0) / (std::exp(10.0) + 3.0);
    CHECK(r.items[0].prob == doctest::Approx(want).epsilon(1e-12));
    CHECK_FALSE(r.truncated_slot);
}

TEST_CASE("greedy: the step cap bounds the response") {
    const Vocabulary v = checks::tiny_vocab();
    const std::vector<TokenId> prefix{5};
    const auto scorer = oracle::FunctionScorer(v.size(), [&](std::span<const TokenId>) {
        std::vector<double> z(v.size(), 0.0);
        z[6] = 5.0;
        return z;
    });
    const auto h = greedy_decode(prefix, scorer, {}, v, opts(3));
    CHECK(h.state.emitted == std::vector<TokenId>{6, 6, 6});

    // An open slot at the cap is closed implicitly.
    const auto open = oracle::scripted_scorer(v, prefix.size(), {5, v.rec_start(), 10, 10});
    const auto r = greedy_generate(prefix, open, {}, v, opts(3));
    CHECK(r.response_tokens == std::vector<TokenId>{5, v.rec_start(), 10, v.rec_end()});
    CHECK(r.truncated_slot);
}

TEST_CASE("top-k reads the first slot distribution") {
    const Vocabulary v = checks::tiny_vocab();
    GenerationState s;
    s.slots.push_back({1, {0.0, 0.5, 0.3, 0.2}});
    s.slots.push_back({5, {0.0, 0.0, 0.0, 1.0}});
    const auto top = extract_topk_items(s, 2, v);
    REQUIRE(top.size() == 2);
    CHECK(top[0].item_id == "m1");
    CHECK(top[1].item_id == "m2");
    CHECK(extract_topk_items(s, 0, v).empty());
    CHECK(extract_topk_items(GenerationState{}, 3, v).empty());

    GenerationState tie;
    tie.slots.push_back({1, {0.1, 0.3, 0.3, 0.3}});
    const auto t = extract_topk_items(tie, 3, v);
    CHECK(t[0].item_id == "m1");
    CHECK(t[2].item_id == "m3");
}

TEST_CASE("beam width 1 equals greedy") {
    const Vocabulary v = checks::tiny_vocab();
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const oracle::HashScorer scorer(v.size(), seed);
        const std::vector<TokenId> prefix{5, 6};
        const auto g = greedy_decode(prefix, scorer, {}, v, opts(8));
        const auto b = beam_generate(prefix, scorer, {}, v, opts(8, 1));
        REQUIRE(b.size() == 1);
        CHECK(b[0].state.emitted == g.state.emitted);
        CHECK(b[0].log_prob == doctest::Approx(g.log_prob).epsilon(1e-12));
    }
}

TEST_CASE("wide beam equals exhaustive enumeration") {
    const Vocabulary v = five_three();
    REQUIRE(v.size() == 8);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const oracle::HashScorer scorer(v.size(), seed + 100, 1.5);
        const std::vector<double> bias{0.3, -0.5, 0.8};
        const std::vector<TokenId> prefix{4};
        auto o = opts(3, 512);
        o.length_penalty = seed % 2 ? 1.0 : 0.0;
        const auto beams = beam_generate(prefix, scorer, bias, v, o);
        const auto all = oracle::enumerate_responses(prefix, scorer, bias, v, 3, o.length_penalty);
        REQUIRE(beams.size() == all.size());
        for (std::size_t i = 0; i < all.size(); ++i) {
            CHECK(beams[i].state.emitted == all[i].tokens);
            CHECK(beams[i].score == doctest::Approx(all[i].score).epsilon(1e-10));
        }
    }
}

TEST_CASE("equal scores are ordered lexicographically") {
    const Vocabulary v = five_three();
    const oracle::FunctionScorer flat(v.size(), [&](std::span<const TokenId>) { return std::vector<double>(v.size(), 0.0); });
    const std::vector<TokenId> prefix{4};
    auto o = opts(1, 8);
    o.length_penalty = 0.0;
    const auto beams = beam_generate(prefix, flat, {}, v, o);
    REQUIRE(beams.size() == 5);
    for (std::size_t i = 0; i + 1 < beams.size(); ++i) {
        CHECK(beams[i].score == beams[i + 1].score);
        CHECK(beams[i].state.emitted < beams[i + 1].state.emitted);
    }
}

TEST_CASE("fuzzed decodes never leave the active partition") {
    std::mt19937_64 rng(77);
    std::normal_distribution<double> nd(0.0, 3.0);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<std::string> items, base{"[UNK]"};
        for (std::size_t i = 0, n = 1 + rng() % 6; i < n; ++i) items.push_back("i" + std::to_string(i));
        for (std::size_t i = 0, n = rng() % 5; i < n; ++i) base.push_back("w" + std::to_string(i));
        const Vocabulary v = Vocabulary::build(items, base);
        const oracle::HashScorer scorer(v.size(), rng(), 3.0);
        std::vector<double> bias(v.item_partition_size());
        for (double& b : bias) b = nd(rng);
        const std::vector<TokenId> prefix{static_cast<TokenId>(rng() % v.general_size())};
        const auto o = opts(1 + rng() % 12, 1 + rng() % 4, 1 + rng() % 5);
        const auto r = trial % 2 ? greedy_generate(prefix, scorer, bias, v, o) : recommend(prefix, scorer, bias, v, o);
        CHECK(oracle::valid_pointer_sequence(r.response_tokens, v));
        for (const auto& it : r.items) CHECK(v.find_item(it.item_id).has_value());
    }
}

TEST_CASE("without the pointer, items are captured wherever they appear") {
    const Vocabulary v = checks::tiny_vocab();
    const std::vector<TokenId> prefix{5};
    const auto scorer = oracle::scripted_scorer(v, prefix.size(), {5, 11, v.eos()});
    auto o = opts(10);
    o.vocab_pointer = false;
    const auto r = greedy_generate(prefix, scorer, {}, v, o);
    CHECK(r.response_tokens == std::vector<TokenId>{5, 11});
    REQUIRE_FALSE(r.items.empty());
    CHECK(r.items[0].item_id == "m2");
    double s = 0.0;
    for (const auto& it : r.items) s += it.prob;
    CHECK(s <= 1.0 + 1e-12);
}

TEST_CASE("scorer length limit stops decoding") {
    const Vocabulary v = checks::tiny_vocab();
    struct Short : oracle::HashScorer {
        using HashScorer::HashScorer;
        std::size_t max_length() const override { return 4; }
    } scorer(v.size(), 3);
    const std::vector<TokenId> prefix{5, 6};
    const auto h = greedy_decode(prefix, scorer, {}, v, opts(50));
    CHECK(h.state.emitted.size() <= 3);
    const auto full = std::vector<TokenId>{5, 6, 7, 8};
    CHECK(greedy_decode(full, scorer, {}, v, opts(50)).state.emitted.empty());
}
