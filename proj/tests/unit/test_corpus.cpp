#include <doctest.h>

#include <filesystem>
#include <set>
#include <sstream>

#include "checks.hpp"
#include "recindial/corpus.hpp"
#include "recindial/text.hpp"

using namespace recindial;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("recindial_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

TextDialogue sample_dialogue() {
    TextDialogue d;
    d.id = "d1";
    d.turns.push_back({Speaker::seeker, "I like scary movies like Alien.", {{"Alien", "m1", 25, 30}}});
    d.turns.push_back({Speaker::recommender, "Try Heat or Alien!", {{"Heat", "m2", 4, 8}, {"Alien", "m1", 12, 17}}});
    d.turns.push_back({Speaker::seeker, "thanks", {}});
    d.turns.push_back({Speaker::recommender, "bye", {}});
    return d;
}

}  // namespace

TEST_CASE("vocabulary layout: 3 items and 5 base tokens") {
    const Vocabulary v = checks::tiny_vocab();
    CHECK(v.general_size() == 9);
    CHECK(v.size() == 13);
    CHECK(v.rec_end() == 9);
    CHECK(v.item_token("m1") == 10);
    CHECK(v.item_token("m3") == 12);
    CHECK(v.token(0) == "[PAD]");
    CHECK(v.token(3) == "[RecS]");
    CHECK(v.item_partition_size() == 4);
    CHECK(v.item_count() == 3);
    CHECK(v.is_general(v.rec_start()));
    CHECK_FALSE(v.is_general(v.rec_end()));
    CHECK_FALSE(v.is_item(v.rec_end()));
    CHECK(v.is_item(11));
    CHECK(v.item_id(11) == "m2");
    CHECK(v.unk().has_value());
    CHECK(v.lookup_word("zebra") == *v.unk());
    CHECK(v.partition_index(v.rec_end()) == 0);
    CHECK(v.from_partition_index(2) == 11);
}

TEST_CASE("vocabulary rejects duplicates and survives a round trip") {
    const std::vector<std::string> dup_items{"m1", "m1"}, base{"a"};
    CHECK_THROWS_AS(Vocabulary::build(dup_items, base), std::invalid_argument);
    const std::vector<std::string> items{"m1"}, bad_base{"[SEP]"};
    CHECK_THROWS_AS(Vocabulary::build(items, bad_base), std::invalid_argument);

    const auto dir = temp_dir("vocab");
    const Vocabulary v = checks::tiny_vocab();
    v.save(dir / "vocab.txt");
    const Vocabulary w = Vocabulary::load(dir / "vocab.txt");
    CHECK(w.tokens() == v.tokens());
    CHECK(w.general_size() == v.general_size());
    CHECK(w.hash() == v.hash());
}

TEST_CASE("without [UNK] an unknown word is a data error") {
    const std::vector<std::string> items{"m1"}, base{"a"};
    const Vocabulary v = Vocabulary::build(items, base);
    CHECK_THROWS_AS(v.lookup_word("b"), DataError);
}

TEST_CASE("text tokenizer") {
    CHECK(tokenize_text("Hello, World!") == std::vector<std::string>{"hello", ",", "world", "!"});
    CHECK(join_words({"hi", ",", "there", "!"}) == "hi, there!");
    CHECK(tokenize_text("   ").empty());
}

TEST_CASE("tokenize, mark and unmark") {
    const TextDialogue d = sample_dialogue();
    const auto base = select_base_tokens(count_words({d}));
    CHECK(base.front() == "[UNK]");
    const std::vector<std::string> items{"m1", "m2"};
    const Vocabulary v = Vocabulary::build(items, base);

    const Dialogue t = tokenize_dialogue(d, v);
    REQUIRE(t.size() == 4);
    const auto& r = t.utterances[1];
    REQUIRE(r.item_spans.size() == 2);
    CHECK(r.tokens[r.item_spans[0].start] == v.item_token("m2"));
    CHECK(r.words[r.item_spans[0].start] == "@m2");

    const Utterance m = mark_items(r, v);
    CHECK(m.tokens.size() == r.tokens.size() + 4);
    int depth = 0;
    for (std::size_t i = 0; i < m.tokens.size(); ++i) {
        if (m.tokens[i] == v.rec_start()) {
            CHECK(v.is_item(m.tokens[i + 1]));
            CHECK(m.tokens[i + 2] == v.rec_end());
            ++depth;
        }
    }
    CHECK(depth == 2);
    const Utterance again = mark_items(m, v);
    CHECK(again.tokens == m.tokens);
    CHECK(unmark_items(m, v).tokens == r.tokens);

    Utterance broken = r;
    broken.item_spans[0].start = 0;
    CHECK_THROWS_AS(mark_items(broken, v), DataError);
}

TEST_CASE("pairs: one per recommender turn with accumulated entities") {
    const TextDialogue d = sample_dialogue();
    const std::vector<std::string> items{"m1", "m2"};
    const Vocabulary v = Vocabulary::build(items, select_base_tokens(count_words({d})));
    const LinkMap links = LinkMap::parse(R"({"items": {"m1": "alien_e", "m2": "heat_e"}, "surfaces": {"scary movies": "horror"}})");
    const KnowledgeGraph kg({"alien_e", "heat_e", "horror"}, {"r"}, {});
    const EntityLinker linker(links, kg.entity_index());

    const auto pairs = build_pairs({mark_items(tokenize_dialogue(d, v), v)}, v, linker);
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[0].turn_index == 2);
    CHECK(pairs[1].turn_index == 4);
    CHECK(pairs[0].gold_items == std::vector<std::string>{"m2", "m1"});
    CHECK(pairs[0].entity_set == std::vector<EntityId>{2, 0});
    // The recommender turn adds heat_e; alien_e is not repeated.
    CHECK(pairs[1].entity_set == std::vector<EntityId>{2, 0, 1});
    CHECK(pairs[0].response.back() == v.eos());
    CHECK(std::count(pairs[1].context.begin(), pairs[1].context.end(), v.sep()) == 2);
    CHECK(pairs[0].pair_id() == "d1#2");

    const auto cut = build_pairs({mark_items(tokenize_dialogue(d, v), v)}, v, linker, PairOptions{3});
    CHECK(cut[1].context.size() == 3);
    CHECK(cut[1].context.back() == pairs[1].context.back());
}

TEST_CASE("entity set keeps first appearance without duplicates") {
    const LinkMap links = LinkMap::parse(R"({"items": {}, "surfaces": {"e1": "E1", "e2": "E2", "new york": "NY"}})");
    const KnowledgeGraph kg({"E1", "E2", "NY", "YORK"}, {"r"}, {});
    const EntityLinker linker(links, kg.entity_index());
    std::vector<EntityId> set;
    linker.accumulate({"e1", "e2", "e1"}, set);
    CHECK(set == std::vector<EntityId>{0, 1});
    CHECK(linker.link_words({"in", "new", "york", "e2"}) == std::vector<EntityId>{2, 1});
    CHECK_FALSE(linker.item_entity("zzz").has_value());
}

TEST_CASE("link map accepts the flat form and drops unknown entities") {
    const LinkMap flat = LinkMap::parse(R"({"m1": "A", "m2": "missing"})");
    const KnowledgeGraph kg({"A"}, {"r"}, {});
    const EntityLinker linker(flat, kg.entity_index());
    CHECK(linker.item_entity("m1") == 0);
    CHECK_FALSE(linker.item_entity("m2").has_value());
}

TEST_CASE("dialogue split sizes") {
    auto ids = [](std::size_t n) {
        std::vector<std::string> v;
        for (std::size_t i = 0; i < n; ++i) v.push_back("d" + std::to_string(i));
        return v;
    };
    const auto s10 = split_dialogue_ids(ids(10), 1);
    CHECK(s10.train.size() == 8);
    CHECK(s10.valid.size() == 1);
    CHECK(s10.test.size() == 1);
    const auto s100 = split_dialogue_ids(ids(100), 1);
    CHECK(s100.train.size() == 80);
    CHECK(s100.valid.size() == 10);
    CHECK(s100.test.size() == 10);
    CHECK_THROWS_AS(split_dialogue_ids(ids(9), 1), std::invalid_argument);

    // Deterministic and a partition of the ids.
    const auto again = split_dialogue_ids(ids(100), 1);
    CHECK(again.train == s100.train);
    std::set<std::string> all(s100.train.begin(), s100.train.end());
    all.insert(s100.valid.begin(), s100.valid.end());
    all.insert(s100.test.begin(), s100.test.end());
    CHECK(all.size() == 100);
    CHECK(split_dialogue_ids(ids(100), 2).train != s100.train);
}

TEST_CASE("ReDial records") {
    std::istringstream in(
        R"x({"conversationId": 7, "initiatorWorkerId": 1, "movieMentions": {"111": "Alien (1979)"}, "messages": [)x"
        R"x({"senderWorkerId": 1, "text": "I liked @111"}, {"senderWorkerId": 2, "text": "Then @111 or @999"}]})x"
        "\n\n");
    const auto c = parse_redial_lines(in);
    REQUIRE(c.dialogues.size() == 1);
    const auto& d = c.dialogues[0];
    CHECK(d.id == "7");
    CHECK(d.turns[0].speaker == Speaker::seeker);
    CHECK(d.turns[1].speaker == Speaker::recommender);
    CHECK(d.turns[0].text == "I liked Alien (1979)");
    REQUIRE(d.turns[0].items.size() == 1);
    CHECK(d.turns[0].text.substr(d.turns[0].items[0].char_start, 12) == "Alien (1979)");
    CHECK(d.turns[1].text == "Then Alien (1979) or @999");
    CHECK(c.warnings.size() == 1);
    CHECK(c.catalog.name("111") == "Alien (1979)");

    std::istringstream bad("{\"initiatorWorkerId\": 1, \"messages\": []}\nnot json\n");
    try {
        parse_redial_lines(bad);
        FAIL("expected a data error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("line 1") != std::string::npos);
    }
}

TEST_CASE("normalized corpus round trip") {
    const auto dir = temp_dir("normalized");
    save_normalized(dir / "c.jsonl", {sample_dialogue()});
    const auto c = load_normalized(dir / "c.jsonl");
    REQUIRE(c.dialogues.size() == 1);
    CHECK(c.dialogues[0].turns[1].items.size() == 2);
    CHECK(c.dialogues[0].turns[1].text == "Try Heat or Alien!");
    CHECK(c.catalog.name("m2") == "Heat");

    std::istringstream bad(R"({"id": "x", "turns": [{"speaker": "seeker", "text": "ab", "items": [{"surface": "ab", "item_id": "1", "char_start": 0, "char_end": 9}]}]})");
    CHECK_THROWS_AS(parse_normalized_lines(bad), DataError);
}

TEST_CASE("pair files round trip") {
    const TextDialogue d = sample_dialogue();
    const std::vector<std::string> items{"m1", "m2"};
    const Vocabulary v = Vocabulary::build(items, select_base_tokens(count_words({d})));
    const LinkMap links = LinkMap::parse(R"({"m1": "alien_e"})");
    const KnowledgeGraph kg({"alien_e"}, {"r"}, {});
    const auto pairs = build_pairs({mark_items(tokenize_dialogue(d, v), v)}, v, EntityLinker(links, kg.entity_index()));
    const auto dir = temp_dir("pairs");
    save_pairs(dir / "p.jsonl", pairs, v, kg.entity_names());
    const auto back = load_pairs(dir / "p.jsonl", v, kg.entity_index());
    REQUIRE(back.size() == pairs.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].context == pairs[i].context);
        CHECK(back[i].response == pairs[i].response);
        CHECK(back[i].gold_items == pairs[i].gold_items);
        CHECK(back[i].entity_set == pairs[i].entity_set);
        CHECK(back[i].turn_index == pairs[i].turn_index);
    }
}

TEST_CASE("marker stripping and mention counts") {
    const Vocabulary v = checks::tiny_vocab();
    const std::vector<TokenId> t{5, v.rec_start(), 10, v.rec_end(), v.eos()};
    CHECK(strip_markers(t, v) == std::vector<TokenId>{5, 10, v.eos()});

    const TextDialogue d = sample_dialogue();
    const std::vector<std::string> items{"m1", "m2"};
    const Vocabulary w = Vocabulary::build(items, select_base_tokens(count_words({d})));
    const auto counts = count_item_mentions({tokenize_dialogue(d, w)});
    CHECK(counts.at("m1") == 2);
    CHECK(counts.at("m2") == 1);
}
