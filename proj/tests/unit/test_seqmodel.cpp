#include <doctest.h>

#include <cmath>

#include "checks.hpp"
#include "oracles.hpp"
#include "recindial/seqmodel.hpp"

using namespace recindial;

namespace {

// General partition of five tokens, item partition of three ([RecE] m1 m2).
Vocabulary five_three() {
    const std::vector<std::string> items{"m1", "m2"}, base{"a"};
    return Vocabulary::build(items, base);
}

oracle::FunctionScorer uniform(const Vocabulary& v) {
    return oracle::FunctionScorer(v.size(), [n = v.size()](std::span<const TokenId>) { return std::vector<double>(n, 0.0); });
}

ModelConfig small_config(const Vocabulary& v) {
    ModelConfig c;
    c.layers = 2;
    c.heads = 2;
    c.width = 8;
    c.ff_width = 16;
    c.max_position = 12;
    c.general_size = v.general_size();
    c.item_partition_size = v.item_partition_size();
    return c;
}

}  // namespace

TEST_CASE("mask selects exactly one partition") {
    const Vocabulary v = five_three();
    REQUIRE(v.general_size() == 5);
    REQUIRE(v.item_partition_size() == 3);
    const std::vector<double> zero(v.size(), 0.0);

    const auto out = masked_distribution(zero, {}, false, v);
    for (std::size_t i = 0; i < 5; ++i) CHECK(out[i] == doctest::Approx(0.2).epsilon(1e-15));
    for (std::size_t i = 5; i < 8; ++i) CHECK(out[i] == 0.0);

    const auto in = masked_distribution(zero, {}, true, v);
    for (std::size_t i = 0; i < 5; ++i) CHECK(in[i] == 0.0);
    for (std::size_t i = 5; i < 8; ++i) CHECK(in[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    const auto mask = step_mask(true, v);
    CHECK(std::isinf(mask[0]));
    CHECK(mask[6] == 0.0);
}

TEST_CASE("bias shifts only item logits") {
    const Vocabulary v = five_three();
    const std::vector<double> zero(v.size(), 0.0);
    const std::vector<double> bias{0.0, std::log(2.0), 0.0};
    const auto in = masked_distribution(zero, bias, true, v);
    CHECK(in[6] == doctest::Approx(0.5));
    CHECK(in[5] == doctest::Approx(0.25));
    const auto out = masked_distribution(zero, bias, false, v);
    CHECK(out[0] == doctest::Approx(0.2));

    const auto open = masked_distribution(zero, bias, false, v, false);
    double s = 0.0;
    for (double p : open) s += p;
    CHECK(s == doctest::Approx(1.0));
    CHECK(open[6] == doctest::Approx(2.0 / 9.0));
    CHECK_THROWS_AS(masked_distribution(zero, std::vector<double>{1.0}, true, v), std::invalid_argument);
}

TEST_CASE("masked distribution is a distribution on random inputs") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd(0.0, 20.0);
    const Vocabulary v = checks::tiny_vocab();
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<double> z(v.size()), b(v.item_partition_size());
        for (double& x : z) x = nd(rng);
        for (double& x : b) x = nd(rng);
        const bool slot = trial % 2;
        const auto p = masked_distribution(z, b, slot, v);
        double s = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (v.is_general(static_cast<TokenId>(i)) == slot) CHECK(p[i] == 0.0);
            s += p[i];
        }
        CHECK(std::abs(s - 1.0) <= 1e-9);
    }
}

TEST_CASE("gold pointer states") {
    const Vocabulary v = five_three();
    const std::vector<TokenId> ok{4, v.rec_start(), 6, v.rec_end(), v.eos(), v.pad()};
    CHECK(gold_pointer_states(ok, v) == std::vector<bool>{false, false, true, true, false});
    const std::vector<TokenId> unbalanced{v.rec_start(), 6, v.eos()};
    CHECK_THROWS_AS(gold_pointer_states(unbalanced, v), DataError);
    const std::vector<TokenId> wrong{6, v.eos()};
    CHECK_THROWS_AS(gold_pointer_states(wrong, v), DataError);
    CHECK_NOTHROW(gold_pointer_states(wrong, v, false));
    const std::vector<TokenId> trailing{4, v.eos(), 4};
    CHECK_THROWS_AS(gold_pointer_states(trailing, v), DataError);
}

TEST_CASE("generation loss under a uniform scorer") {
    const Vocabulary v = five_three();
    const auto scorer = uniform(v);
    ContextResponsePair plain;
    plain.context = {4};
    plain.response = {4, v.eos()};
    CHECK(gen_loss(scorer, v, plain, {}) == doctest::Approx(2.0 * std::log(5.0)));

    ContextResponsePair slot;
    slot.context = {4};
    slot.response = {v.rec_start(), 6, v.rec_end(), v.eos()};
    CHECK(gen_loss(scorer, v, slot, {}) == doctest::Approx(2.0 * std::log(5.0) + 2.0 * std::log(3.0)));
    CHECK(response_token_count(slot, v) == 4);

    // Without the pointer mask every token competes in the full vocabulary.
    const std::vector<ContextResponsePair> pairs{plain, slot};
    CHECK(perplexity(scorer, v, pairs, {}, LossOptions{false, 1.0}) == doctest::Approx(8.0));
    CHECK_THROWS_AS(perplexity(scorer, v, std::span<const ContextResponsePair>{}), std::invalid_argument);
}

TEST_CASE("incremental cursor matches full forward") {
    const Vocabulary v = checks::tiny_vocab();
    std::mt19937_64 rng(9);
    const TransformerLM lm(small_config(v), rng);
    const std::vector<TokenId> seq{5, 6, 1, 7, 3, 10, 9, 8};
    const Matrix all = lm.forward_logits(seq);

    auto cursor = lm.start(std::span<const TokenId>(seq).first(1));
    for (std::size_t t = 1; t <= seq.size(); ++t) {
        const auto want = lm.score(std::span<const TokenId>(seq).first(t));
        const auto got = cursor->logits();
        for (std::size_t i = 0; i < want.size(); ++i) {
            CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-10));
            CHECK(all(t - 1, i) == doctest::Approx(want[i]).epsilon(1e-10));
        }
        if (t < seq.size()) cursor->push(seq[t]);
    }
    auto copy = cursor->clone();
    CHECK(copy->length() == cursor->length());
}

TEST_CASE("future tokens do not change earlier logits") {
    const Vocabulary v = checks::tiny_vocab();
    std::mt19937_64 rng(10);
    const TransformerLM lm(small_config(v), rng);
    const Matrix a = lm.forward_logits(std::vector<TokenId>{5, 6, 7, 8});
    const Matrix b = lm.forward_logits(std::vector<TokenId>{5, 6, 11, 2});
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) CHECK(a(r, c) == b(r, c));
    CHECK_THROWS_AS(lm.forward_logits(std::vector<TokenId>(13, 5)), std::length_error);
}

TEST_CASE("config validation") {
    const Vocabulary v = checks::tiny_vocab();
    ModelConfig c = small_config(v);
    CHECK_NOTHROW(c.validate());
    c.heads = 3;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = small_config(v);
    c.dropout = 1.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = small_config(v);
    c.item_partition_size = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("generation loss gradients") {
    for (std::uint64_t seed : {1u, 2u}) {
        const auto r = checks::gen_grad_check(seed);
        INFO("worst " << r.worst_tensor << "[" << r.worst_index << "] analytic " << r.worst_analytic << " numeric "
                      << r.worst_numeric);
        CHECK(r.max_rel_error < 1e-4);
    }
    const auto open = checks::gen_grad_check(3, false);
    CHECK(open.max_rel_error < 1e-4);
}

TEST_CASE("dropout changes training activations but not scoring") {
    const Vocabulary v = checks::tiny_vocab();
    ModelConfig c = small_config(v);
    c.dropout = 0.5;
    std::mt19937_64 rng(4);
    const TransformerLM lm(c, rng);
    const std::vector<TokenId> seq{5, 6, 7};
    const Matrix plain = lm.forward_hidden(seq);
    std::mt19937_64 drop(1);
    const Matrix noisy = lm.forward_hidden(seq, nullptr, &drop);
    CHECK(oracle::max_abs_diff(plain, noisy) > 0.0);
    CHECK(oracle::max_abs_diff(plain, lm.forward_hidden(seq)) == 0.0);
}
