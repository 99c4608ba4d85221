#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "recindial/evalsuite.hpp"

using namespace recindial;

namespace {

std::vector<std::string> words(const std::string& s) {
    std::vector<std::string> out;
    std::string w;
    for (char c : s) {
        if (c == ' ') {
            if (!w.empty()) out.push_back(w);
            w.clear();
        } else {
            w += c;
        }
    }
    if (!w.empty()) out.push_back(w);
    return out;
}

EvalInstance inst(std::vector<std::string> ranked, std::vector<std::string> gold, std::size_t turn = 2) {
    EvalInstance e;
    e.pair_id = "d#" + std::to_string(turn);
    e.turn_index = turn;
    for (auto& r : ranked) e.items.emplace_back(r, 0.1);
    e.gold_items = std::move(gold);
    return e;
}

}  // namespace

TEST_CASE("distinct-n worked example") {
    CHECK(distinct_n({words("a b a b")}, 1) == doctest::Approx(0.5));
    CHECK(distinct_n({words("a b a b")}, 2) == doctest::Approx(0.5));
    CHECK(distinct_n({words("a")}, 2) == 0.0);
    CHECK(distinct_n({words("a b"), {}}, 1) == doctest::Approx(0.5));
    CHECK(distinct_n({}, 2) == 0.0);
}

TEST_CASE("bleu and rouge worked examples") {
    const auto hyp = words("the cat sat"), ref = words("the cat slept");
    CHECK(bleu(hyp, ref, 2) == doctest::Approx(std::sqrt(2.0 / 3.0 * 0.5)));
    CHECK(rouge_l(hyp, ref) == doctest::Approx(2.0 / 3.0));

    const auto h2 = words("a b c"), r2 = words("a c");
    const double p = 2.0 / 3.0, r = 1.0, b2 = 1.44;
    CHECK(rouge_l(h2, r2) == doctest::Approx((1 + b2) * p * r / (r + b2 * p)));
    // Two matched unigrams of three, no matched bigram: smoothed to 0.1 / 2.
    CHECK(bleu(h2, r2, 2) == doctest::Approx(std::sqrt(2.0 / 3.0 * 0.05)));

    CHECK(bleu({}, ref, 2) == 0.0);
    CHECK(bleu(words("x y"), ref, 2) == 0.0);
    CHECK(bleu(ref, ref, 2) == doctest::Approx(1.0));
    CHECK(bleu(words("the cat"), ref, 2) == doctest::Approx(std::exp(1.0 - 1.5)));
    CHECK(rouge_l(words("The CAT"), words("the cat")) == doctest::Approx(1.0));
}

TEST_CASE("metrics equal brute force on every short string") {
    const auto all = oracle::all_strings({"a", "b", "c"}, 4);
    for (const auto& h : all) {
        for (std::size_t n = 1; n <= 3; ++n) CHECK(distinct_n({h}, n) == doctest::Approx(oracle::distinct(h, n)));
        for (const auto& r : all) {
            const double b2 = bleu(h, r, 2), b4 = bleu(h, r, 4);
            const double rl = rouge_l(h, r);
            if (std::abs(b2 - oracle::bleu(h, r, 2)) > 1e-12 || std::abs(b4 - oracle::bleu(h, r, 4)) > 1e-12 ||
                std::abs(rl - oracle::rouge_l(h, r)) > 1e-12) {
                FAIL("mismatch on a pair of strings");
            }
        }
    }
}

TEST_CASE("item ratio") {
    CHECK(item_ratio({words("try @12 now"), words("hello there")}) == doctest::Approx(50.0));
    CHECK(item_ratio({words("try @12 @13"), words("hi")}, true) == doctest::Approx(50.0));
    CHECK(item_ratio({words("email me@x"), words("@")}) == 0.0);
    CHECK_THROWS_AS(item_ratio({}), std::invalid_argument);
    CHECK(is_item_word("@1"));
    CHECK_FALSE(is_item_word("@"));
}

TEST_CASE("recall at k") {
    const std::vector<EvalInstance> four{inst({"m1", "m2"}, {"m1"}), inst({"m3", "m1"}, {"m1"}), inst({"m2"}, {"m2", "m9"}),
                                         inst({"m4"}, {"m5"})};
    CHECK(recall_at_k(four, 2) == doctest::Approx(0.75));
    CHECK(recall_at_k(four, 1) == doctest::Approx(0.5));

    // No ranked items is a miss; no gold items is not counted.
    const std::vector<EvalInstance> mixed{inst({}, {"m1"}), inst({"m1"}, {}), inst({"m1"}, {"m1"})};
    CHECK(recall_at_k(mixed, 10) == doctest::Approx(0.5));
    CHECK_THROWS_AS(recall_at_k({inst({"m1"}, {})}, 1), std::invalid_argument);
    CHECK_THROWS_AS(recall_at_k(four, 0), std::invalid_argument);
}

TEST_CASE("frequency buckets on a hand fixture") {
    const std::unordered_map<std::string, std::size_t> counts{{"rare", 2}, {"mid", 7}, {"common", 40}, {"hot", 500}};
    const std::vector<EvalInstance> xs{
        inst({"rare"}, {"rare"}),            // <5 hit
        inst({"x"}, {"unseen"}),              // <5 miss (never seen in training)
        inst({"mid"}, {"mid", "hot"}),        // 5-9 (rarest gold), hit
        inst({"common"}, {"common"}),         // 10-99 hit
        inst({"x"}, {"hot"}),                 // >=100 miss
        inst({"hot"}, {"hot"}),               // >=100 hit
    };
    const auto b = recall_by_frequency(xs, counts, 1);
    REQUIRE(b.size() == 4);
    CHECK(b[0].label == "<5");
    CHECK(b[0].count == 2);
    CHECK(b[0].recall == doctest::Approx(0.5));
    CHECK(b[1].label == "5-9");
    CHECK(b[1].recall == doctest::Approx(1.0));
    CHECK(b[2].label == "10-99");
    CHECK(b[3].label == ">=100");
    CHECK(b[3].count == 2);
    CHECK(b[3].recall == doctest::Approx(0.5));

    const auto only_hot = recall_by_frequency({inst({"hot"}, {"hot"})}, counts, 1);
    REQUIRE(only_hot.size() == 1);
    CHECK(only_hot[0].label == ">=100");
    CHECK_THROWS_AS(recall_by_frequency(xs, counts, 1, {10, 5}), std::invalid_argument);
}

TEST_CASE("buckets recombine to the global recall") {
    std::mt19937_64 rng(3);
    std::unordered_map<std::string, std::size_t> counts;
    for (int i = 0; i < 30; ++i) counts["m" + std::to_string(i)] = rng() % 300;
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<EvalInstance> xs;
        for (int j = 0, n = 1 + static_cast<int>(rng() % 40); j < n; ++j) {
            std::vector<std::string> ranked, gold;
            for (int r = 0, m = static_cast<int>(rng() % 6); r < m; ++r) ranked.push_back("m" + std::to_string(rng() % 35));
            for (int g = 0, m = 1 + static_cast<int>(rng() % 2); g < m; ++g) gold.push_back("m" + std::to_string(rng() % 35));
            xs.push_back(inst(ranked, gold, 1 + rng() % 14));
        }
        const std::size_t k = 1 + rng() % 5;
        const double global = recall_at_k(xs, k);
        for (const auto& table : {recall_by_frequency(xs, counts, k), recall_by_turn(xs, k)}) {
            double hits = 0.0;
            std::size_t total = 0;
            for (const auto& b : table) {
                CHECK(b.count > 0);
                hits += b.recall * static_cast<double>(b.count);
                total += b.count;
            }
            CHECK(total == xs.size());
            CHECK(hits / static_cast<double>(total) == doctest::Approx(global).epsilon(1e-12));
        }
    }
}

TEST_CASE("turn buckets") {
    const auto b = recall_by_turn({inst({"a"}, {"a"}, 2), inst({"a"}, {"b"}, 6), inst({"a"}, {"a"}, 10), inst({"a"}, {"a"}, 11)}, 1);
    REQUIRE(b.size() == 3);
    CHECK(b[0].label == "1-5");
    CHECK(b[1].label == "6-10");
    CHECK(b[1].recall == doctest::Approx(0.5));
    CHECK(b[2].label == "11+");
}

TEST_CASE("report and transcript files") {
    std::vector<EvalInstance> xs{inst({"m1"}, {"m1"}), inst({}, {})};
    xs[0].generated_tokens = words("try @m1 now");
    xs[0].reference_tokens = words("try @m1");
    xs[0].generated_text = "try Heat now";
    xs[1].generated_tokens = words("hello");
    xs[1].reference_tokens = words("hello there");
    const auto m = compute_metrics(xs, {{"m1", 3}});
    CHECK(m.recall.at("R@1") == 1.0);
    CHECK(m.item_ratio == doctest::Approx(50.0));
    CHECK(m.instances == 2);
    CHECK(m.recall_instances == 1);
    CHECK(m.by_frequency.at(30).front().label == "<5");
    CHECK(m.to_text().find("R@10") != std::string::npos);
    CHECK(m.to_json().find("\"dist\"") != std::string::npos);
    CHECK_THROWS_AS(compute_metrics({}), std::invalid_argument);

    const auto path = std::filesystem::temp_directory_path() / "recindial_test_transcript.jsonl";
    save_transcript(path, xs);
    const auto back = load_transcript(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].items == xs[0].items);
    CHECK(back[0].generated_tokens == xs[0].generated_tokens);
    CHECK(back[0].generated_text == xs[0].generated_text);
    CHECK(back[1].gold_items.empty());

    {
        std::ofstream out(path, std::ios::app);
        out << "{broken\n";
    }
    try {
        load_transcript(path);
        FAIL("expected an error");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find(":3") != std::string::npos);
    }
}

TEST_CASE("recall never decreases with k") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<EvalInstance> xs;
        for (int j = 0, n = 1 + static_cast<int>(rng() % 20); j < n; ++j) {
            std::vector<std::string> ranked;
            for (int r = 0, m = static_cast<int>(rng() % 8); r < m; ++r) ranked.push_back("m" + std::to_string(rng() % 10));
            xs.push_back(inst(ranked, {"m" + std::to_string(rng() % 10)}));
        }
        double prev = 0.0;
        for (std::size_t k = 1; k <= 10; ++k) {
            const double r = recall_at_k(xs, k);
            CHECK(r >= prev);
            prev = r;
        }
    }
}
