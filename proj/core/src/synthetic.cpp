#include "recindial/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <regex>

#include <json.hpp>

namespace recindial {

using nlohmann::json;

namespace {

const char* const kTitles[5][4] = {
    {"The Hollow Door", "Night Harvest", "Bleak Hour", "Crimson Attic"},
    {"Lucky Pickles", "Two Left Feet", "Office Goats", "Party Cousins"},
    {"Quiet River", "Letters Home", "The Long Winter", "Broken Frames"},
    {"Steel Thunder", "Rapid Fire", "Zero Hour Run", "Iron Pursuit"},
    {"Paris Mornings", "Summer Promise", "Moonlit Harbor", "Second Chances"},
};
const int kYears[4] = {1962, 1985, 1996, 2019};

const std::vector<std::vector<std::string>> kGenreWords = {
    {"horror", "scary", "spooky"},
    {"comedy", "funny", "hilarious"},
    {"drama", "serious", "emotional"},
    {"action", "explosive", "thrilling"},
    {"romance", "romantic", "sweet"},
};
const std::vector<std::vector<std::string>> kEraWords = {
    {"old", "classic", "vintage"},
    {"eighties", "retro"},
    {"nineties", "90s"},
    {"new", "recent", "modern"},
};
const std::vector<std::string> kGenreNames = {"horror", "comedy", "drama", "action", "romance"};
const std::vector<std::string> kEraNames = {"old", "eighties", "nineties", "new"};
const std::vector<std::string> kActors = {"alex stone", "maria lopez", "ken watanabe jr", "lily park",
                                          "omar haddad", "june carter", "victor hale", "nina brooks",
                                          "sam ortega", "claire dunn", "theo marsh"};

std::string item_id_of(std::size_t g, std::size_t e) { return std::to_string(1001 + g * 4 + e); }

class TurnBuilder {
public:
    explicit TurnBuilder(Speaker s) { turn_.speaker = s; }
    TurnBuilder& text(const std::string& s) {
        turn_.text += s;
        return *this;
    }
    TurnBuilder& item(const std::string& id, const std::string& name) {
        ItemMention m;
        m.item_id = id;
        m.surface = name;
        m.char_start = turn_.text.size();
        turn_.text += name;
        m.char_end = turn_.text.size();
        turn_.items.push_back(std::move(m));
        return *this;
    }
    TextTurn done() { return std::move(turn_); }

private:
    TextTurn turn_;
};

template <class T>
const T& pick(const std::vector<T>& v, std::mt19937_64& rng) {
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

bool chance(double p, std::mt19937_64& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; }

std::vector<double> zipf(std::size_t n, double s) {
    std::vector<double> w;
    for (std::size_t i = 0; i < n; ++i) w.push_back(1.0 / std::pow(static_cast<double>(i + 1), s));
    return w;
}

}  // namespace

const std::string& SyntheticWorld::rule_item(std::size_t genre, std::size_t era) const {
    return catalog.ids().at(genre * eras() + era);
}

SyntheticWorld make_synthetic_world() {
    SyntheticWorld w;
    w.genre_words = kGenreWords;
    w.era_words = kEraWords;
    w.actor_names = kActors;

    std::vector<std::string> entities;
    for (std::size_t g = 0; g < 5; ++g) {
        for (std::size_t e = 0; e < 4; ++e) {
            const std::string id = item_id_of(g, e);
            w.catalog.add(id, std::string(kTitles[g][e]) + " (" + std::to_string(kYears[e]) + ")");
            entities.push_back("item:" + id);
            w.links.items[id] = "item:" + id;
        }
    }
    for (std::size_t g = 0; g < 5; ++g) {
        entities.push_back("genre:" + kGenreNames[g]);
        for (const auto& s : kGenreWords[g]) w.links.surfaces[s] = "genre:" + kGenreNames[g];
    }
    for (std::size_t e = 0; e < 4; ++e) {
        entities.push_back("era:" + kEraNames[e]);
        for (const auto& s : kEraWords[e]) w.links.surfaces[s] = "era:" + kEraNames[e];
    }
    for (const auto& a : kActors) {
        const std::string name = "actor:" + std::regex_replace(a, std::regex(" "), "_");
        entities.push_back(name);
        w.links.surfaces[a] = name;
    }
    const std::vector<std::string> relations = {"has_genre", "genre_of", "from_era", "era_of", "stars", "starred_in"};
    auto idx = [&](const std::string& n) {
        return static_cast<EntityId>(std::find(entities.begin(), entities.end(), n) - entities.begin());
    };
    std::vector<Triple> triples;
    for (std::size_t g = 0; g < 5; ++g) {
        for (std::size_t e = 0; e < 4; ++e) {
            const EntityId item = idx("item:" + item_id_of(g, e));
            const EntityId genre = idx("genre:" + kGenreNames[g]);
            const EntityId era = idx("era:" + kEraNames[e]);
            const std::size_t i = g * 4 + e;
            const EntityId actor = idx("actor:" + std::regex_replace(kActors[i % kActors.size()], std::regex(" "), "_"));
            triples.push_back({item, 0, genre});
            triples.push_back({genre, 1, item});
            triples.push_back({item, 2, era});
            triples.push_back({era, 3, item});
            triples.push_back({item, 4, actor});
            triples.push_back({actor, 5, item});
        }
    }
    w.graph = KnowledgeGraph(entities, relations, triples);
    return w;
}

std::vector<TextDialogue> generate_synthetic_dialogues(const SyntheticWorld& world, const SyntheticOptions& options) {
    std::mt19937_64 rng(options.seed);
    const auto gz = zipf(world.genres(), options.skew);
    const auto ez = zipf(world.eras(), options.skew);
    std::discrete_distribution<std::size_t> genre_dist(gz.begin(), gz.end());
    std::discrete_distribution<std::size_t> era_dist(ez.begin(), ez.end());
    const auto& ids = world.catalog.ids();
    auto item_name = [&](const std::string& id) { return world.catalog.name(id); };

    std::vector<TextDialogue> out;
    for (std::size_t n = 0; n < options.dialogues; ++n) {
        TextDialogue d;
        d.id = "syn" + std::to_string(n + 1);
        const std::size_t g = genre_dist(rng);
        const std::size_t e = era_dist(rng);
        auto gw = [&] { return pick(world.genre_words[g], rng); };
        auto ew = [&] { return pick(world.era_words[e], rng); };
        bool know_g = false, know_e = false;

        // Opening.
        const int opening = std::uniform_int_distribution<int>(0, 3)(rng);
        TurnBuilder open(Speaker::seeker);
        open.text(pick(std::vector<std::string>{"hi", "hello", "hey"}, rng) + " ! ");
        if (opening == 0) {
            open.text("i am looking for a movie .");
        } else if (opening == 1) {
            open.text("i really like " + gw() + " movies .");
            know_g = true;
        } else if (opening == 2) {
            open.text("can you suggest something " + ew() + " ?");
            know_e = true;
        } else {
            open.text("i want a " + ew() + " " + gw() + " film .");
            know_g = know_e = true;
        }
        d.turns.push_back(open.done());
        if (chance(0.3, rng)) {
            d.turns.push_back(TurnBuilder(Speaker::recommender).text("sure , tell me more about what you like .").done());
            TurnBuilder extra(Speaker::seeker);
            if (chance(0.5, rng)) {
                extra.text("i like movies with " + pick(world.actor_names, rng) + " .");
            } else {
                std::size_t other = std::uniform_int_distribution<std::size_t>(0, ids.size() - 1)(rng);
                if (ids[other] == world.rule_item(g, e)) other = (other + 1) % ids.size();
                extra.text("i watched ").item(ids[other], item_name(ids[other])).text(" last week .");
            }
            d.turns.push_back(extra.done());
        }

        // Ask until genre and era are known.
        while (!know_g || !know_e) {
            const bool ask_genre = !know_g && (know_e || chance(0.5, rng));
            if (ask_genre) {
                d.turns.push_back(TurnBuilder(Speaker::recommender)
                                      .text(pick(std::vector<std::string>{"what kind of movies do you like ?",
                                                                          "which genre do you enjoy ?",
                                                                          "what genre are you in the mood for ?"},
                                                 rng))
                                      .done());
                d.turns.push_back(TurnBuilder(Speaker::seeker)
                                      .text(pick(std::vector<std::string>{"i love " + gw() + " ones .",
                                                                          gw() + " please .",
                                                                          "something " + gw() + " would be nice ."},
                                                 rng))
                                      .done());
                know_g = true;
            } else {
                d.turns.push_back(TurnBuilder(Speaker::recommender)
                                      .text(pick(std::vector<std::string>{"do you prefer old or new movies ?",
                                                                          "from which era ?",
                                                                          "any preference on the decade ?"},
                                                 rng))
                                      .done());
                d.turns.push_back(TurnBuilder(Speaker::seeker)
                                      .text(pick(std::vector<std::string>{ew() + " ones .", "i like " + ew() + " movies .",
                                                                          "maybe something " + ew() + " ."},
                                                 rng))
                                      .done());
                know_e = true;
            }
        }

        // Recommendation, then closing.
        const std::string& rec = world.rule_item(g, e);
        TurnBuilder r(Speaker::recommender);
        switch (std::uniform_int_distribution<int>(0, 2)(rng)) {
            case 0: r.text("have you seen ").item(rec, item_name(rec)).text(" ?"); break;
            case 1: r.text("you should watch ").item(rec, item_name(rec)).text(" !"); break;
            default: r.text("i recommend ").item(rec, item_name(rec)).text(" , it is great ."); break;
        }
        d.turns.push_back(r.done());
        d.turns.push_back(TurnBuilder(Speaker::seeker)
                              .text(pick(std::vector<std::string>{"no , i have not . thanks !", "sounds good , thank you .",
                                                                  "great , i will watch it ."},
                                         rng))
                              .done());
        d.turns.push_back(TurnBuilder(Speaker::recommender)
                              .text(pick(std::vector<std::string>{"you are welcome , enjoy !", "have fun , bye !"}, rng))
                              .done());
        out.push_back(std::move(d));
    }
    return out;
}

void save_redial(const std::filesystem::path& path, const std::vector<TextDialogue>& dialogues,
                 const ItemCatalog& catalog) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write ReDial file: " + path.string());
    std::size_t message_id = 1;
    for (const auto& d : dialogues) {
        json messages = json::array();
        json mentions = json::object();
        for (const auto& t : d.turns) {
            std::string text;
            std::size_t last = 0;
            for (const auto& m : t.items) {
                text.append(t.text, last, m.char_start - last);
                text += "@" + m.item_id;
                last = m.char_end;
                mentions[m.item_id] = catalog.contains(m.item_id) ? catalog.name(m.item_id) : m.surface;
            }
            text.append(t.text, last, std::string::npos);
            messages.push_back({{"messageId", message_id++}, {"text", text},
                                {"senderWorkerId", t.speaker == Speaker::seeker ? 1 : 2}});
        }
        out << json{{"conversationId", d.id}, {"initiatorWorkerId", 1}, {"respondentWorkerId", 2},
                    {"messages", messages}, {"movieMentions", mentions}}
                   .dump()
            << '\n';
    }
}

void write_synthetic_bundle(const std::filesystem::path& dir, const SyntheticWorld& world,
                            const std::vector<TextDialogue>& dialogues) {
    std::filesystem::create_directories(dir);
    save_normalized(dir / "dialogues.jsonl", dialogues);
    save_redial(dir / "redial.jsonl", dialogues, world.catalog);
    world.catalog.save(dir / "items.tsv");
    world.links.save(dir / "links.json");
    world.graph.save(dir / "triples.tsv", dir / "entities.txt");
}

}  // namespace recindial
