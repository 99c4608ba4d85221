#include "recindial/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <regex>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "recindial/text.hpp"

namespace recindial {

using nlohmann::json;

std::string_view speaker_name(Speaker s) { return s == Speaker::seeker ? "seeker" : "recommender"; }

Speaker parse_speaker(std::string_view s) {
    if (s == "seeker") return Speaker::seeker;
    if (s == "recommender") return Speaker::recommender;
    throw DataError("unknown speaker: " + std::string(s));
}

// ---------------------------------------------------------------------------

bool ItemCatalog::add(const std::string& id, const std::string& name) {
    if (index_.count(id)) return false;
    index_.emplace(id, ids_.size());
    ids_.push_back(id);
    names_.push_back(name);
    return true;
}

const std::string& ItemCatalog::name(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw DataError("unknown item id: " + id);
    return names_[it->second];
}

ItemCatalog ItemCatalog::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open item catalog: " + path.string());
    ItemCatalog cat;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected id<TAB>name");
        if (!cat.add(line.substr(0, tab), line.substr(tab + 1))) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": duplicate item id");
        }
    }
    return cat;
}

void ItemCatalog::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write item catalog: " + path.string());
    for (std::size_t i = 0; i < ids_.size(); ++i) out << ids_[i] << '\t' << names_[i] << '\n';
}

// ---------------------------------------------------------------------------
// ReDial

namespace {

std::string json_id_string(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    throw DataError("expected string or integer id");
}

TextDialogue parse_redial_record(const json& rec, ItemCatalog& catalog, std::vector<std::string>& warnings,
                                 std::size_t lineno) {
    if (!rec.is_object()) throw DataError("record is not an object");
    TextDialogue d;
    d.id = rec.contains("conversationId") ? json_id_string(rec.at("conversationId")) : std::to_string(lineno);
    const std::string initiator = json_id_string(rec.at("initiatorWorkerId"));

    std::unordered_map<std::string, std::string> mentions;
    if (rec.contains("movieMentions")) {
        const auto& mm = rec.at("movieMentions");
        if (mm.is_object()) {
            for (auto it = mm.begin(); it != mm.end(); ++it) {
                if (it.value().is_string()) mentions.emplace(it.key(), it.value().get<std::string>());
            }
        } else if (!mm.is_array() && !mm.is_null()) {
            throw DataError("movieMentions must be an object");
        }
    }

    static const std::regex marker(R"(@(\d+))");
    const auto& messages = rec.at("messages");
    if (!messages.is_array()) throw DataError("messages must be an array");
    for (const auto& msg : messages) {
        TextTurn turn;
        turn.speaker = json_id_string(msg.at("senderWorkerId")) == initiator ? Speaker::seeker : Speaker::recommender;
        const std::string text = msg.at("text").get<std::string>();
        std::size_t last = 0;
        for (auto it = std::sregex_iterator(text.begin(), text.end(), marker); it != std::sregex_iterator(); ++it) {
            const auto& m = *it;
            const std::string id = m[1].str();
            turn.text.append(text, last, static_cast<std::size_t>(m.position(0)) - last);
            last = static_cast<std::size_t>(m.position(0) + m.length(0));
            auto found = mentions.find(id);
            if (found == mentions.end()) {
                warnings.push_back("line " + std::to_string(lineno) + ": unknown item @" + id);
                turn.text += m.str(0);
                continue;
            }
            catalog.add(id, found->second);
            ItemMention im;
            im.surface = found->second;
            im.item_id = id;
            im.char_start = turn.text.size();
            turn.text += found->second;
            im.char_end = turn.text.size();
            turn.items.push_back(std::move(im));
        }
        turn.text.append(text, last, std::string::npos);
        d.turns.push_back(std::move(turn));
    }
    if (d.turns.empty()) throw DataError("dialogue has no messages");
    return d;
}

}  // namespace

LoadedCorpus parse_redial_lines(std::istream& in) {
    LoadedCorpus out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.dialogues.push_back(parse_redial_record(json::parse(line), out.catalog, out.warnings, lineno));
        } catch (const std::exception& e) {
            throw DataError("ReDial line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

LoadedCorpus load_redial(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open ReDial file: " + path.string());
    return parse_redial_lines(in);
}

LoadedCorpus parse_normalized_lines(std::istream& in) {
    LoadedCorpus out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json rec = json::parse(line);
            TextDialogue d;
            d.id = json_id_string(rec.at("id"));
            for (const auto& t : rec.at("turns")) {
                TextTurn turn;
                turn.speaker = parse_speaker(t.at("speaker").get<std::string>());
                turn.text = t.at("text").get<std::string>();
                if (t.contains("items")) {
                    for (const auto& it : t.at("items")) {
                        ItemMention m;
                        m.surface = it.at("surface").get<std::string>();
                        m.item_id = json_id_string(it.at("item_id"));
                        m.char_start = it.at("char_start").get<std::size_t>();
                        m.char_end = it.at("char_end").get<std::size_t>();
                        if (m.char_start > m.char_end || m.char_end > turn.text.size()) {
                            throw DataError("item span out of range");
                        }
                        out.catalog.add(m.item_id, m.surface);
                        turn.items.push_back(std::move(m));
                    }
                }
                d.turns.push_back(std::move(turn));
            }
            if (d.turns.empty()) throw DataError("dialogue has no turns");
            out.dialogues.push_back(std::move(d));
        } catch (const std::exception& e) {
            throw DataError("normalized corpus line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

LoadedCorpus load_normalized(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open corpus file: " + path.string());
    return parse_normalized_lines(in);
}

void save_normalized(const std::filesystem::path& path, const std::vector<TextDialogue>& dialogues) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write corpus file: " + path.string());
    for (const auto& d : dialogues) {
        json turns = json::array();
        for (const auto& t : d.turns) {
            json items = json::array();
            for (const auto& m : t.items) {
                items.push_back({{"surface", m.surface}, {"item_id", m.item_id},
                                 {"char_start", m.char_start}, {"char_end", m.char_end}});
            }
            turns.push_back({{"speaker", speaker_name(t.speaker)}, {"text", t.text}, {"items", items}});
        }
        out << json{{"id", d.id}, {"turns", turns}}.dump() << '\n';
    }
}

// ---------------------------------------------------------------------------
// Tokenization and marking

namespace {

template <class F>
void for_each_segment(const TextTurn& turn, F&& on_text, auto&& on_item) {
    std::vector<const ItemMention*> ordered;
    for (const auto& m : turn.items) ordered.push_back(&m);
    std::sort(ordered.begin(), ordered.end(),
              [](const ItemMention* a, const ItemMention* b) { return a->char_start < b->char_start; });
    std::size_t pos = 0;
    for (const ItemMention* m : ordered) {
        if (m->char_start < pos || m->char_end > turn.text.size()) throw DataError("overlapping or out-of-range item spans");
        on_text(std::string_view(turn.text).substr(pos, m->char_start - pos));
        on_item(*m);
        pos = m->char_end;
    }
    on_text(std::string_view(turn.text).substr(pos));
}

}  // namespace

std::map<std::string, std::size_t> count_words(const std::vector<TextDialogue>& dialogues) {
    std::map<std::string, std::size_t> counts;
    for (const auto& d : dialogues) {
        for (const auto& t : d.turns) {
            for_each_segment(
                t, [&](std::string_view s) { for (auto& w : tokenize_text(s)) ++counts[w]; },
                [&](const ItemMention&) {});
        }
    }
    return counts;
}

std::vector<std::string> select_base_tokens(const std::map<std::string, std::size_t>& counts, std::size_t min_count) {
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (const auto& [w, c] : counts) {
        if (c < min_count || w.empty() || w.front() == '@' || w.front() == '[') continue;
        kept.emplace_back(w, c);
    }
    std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> out{std::string(kUnkToken)};
    for (auto& [w, c] : kept) out.push_back(w);
    return out;
}

Dialogue tokenize_dialogue(const TextDialogue& dialogue, const Vocabulary& vocab) {
    Dialogue d;
    d.id = dialogue.id;
    for (const auto& t : dialogue.turns) {
        Utterance u;
        u.speaker = t.speaker;
        u.raw_text = t.text;
        auto push_words = [&](std::string_view s) {
            for (auto& w : tokenize_text(s)) {
                u.tokens.push_back(vocab.lookup_word(w));
                u.words.push_back(std::move(w));
            }
        };
        for_each_segment(t, push_words, [&](const ItemMention& m) {
            if (auto id = vocab.find_item(m.item_id)) {
                u.item_spans.push_back({u.tokens.size(), m.item_id});
                u.tokens.push_back(*id);
                u.words.push_back(item_token_string(m.item_id));
            } else {
                push_words(m.surface);
            }
        });
        d.utterances.push_back(std::move(u));
    }
    return d;
}

Utterance mark_items(const Utterance& utterance, const Vocabulary& vocab) {
    Utterance out = utterance;
    out.tokens.clear();
    out.words.clear();
    out.item_spans.clear();
    std::size_t next_span = 0;
    const auto& toks = utterance.tokens;
    for (std::size_t i = 0; i < toks.size(); ++i) {
        const bool is_span = next_span < utterance.item_spans.size() && utterance.item_spans[next_span].start == i;
        if (!is_span) {
            out.tokens.push_back(toks[i]);
            out.words.push_back(i < utterance.words.size() ? utterance.words[i] : vocab.token(toks[i]));
            continue;
        }
        const auto& span = utterance.item_spans[next_span++];
        if (!vocab.is_item(toks[i])) {
            throw DataError("item span at position " + std::to_string(i) + " does not point at an item token");
        }
        const bool wrapped = i > 0 && toks[i - 1] == vocab.rec_start() && i + 1 < toks.size() &&
                             toks[i + 1] == vocab.rec_end();
        if (!wrapped) {
            out.tokens.push_back(vocab.rec_start());
            out.words.emplace_back(kRecStartToken);
        }
        out.item_spans.push_back({out.tokens.size(), span.item_id});
        out.tokens.push_back(toks[i]);
        out.words.push_back(i < utterance.words.size() ? utterance.words[i] : vocab.token(toks[i]));
        if (!wrapped) {
            out.tokens.push_back(vocab.rec_end());
            out.words.emplace_back(kRecEndToken);
        }
    }
    if (next_span != utterance.item_spans.size()) throw DataError("item spans are unordered or out of range");
    return out;
}

Dialogue mark_items(const Dialogue& dialogue, const Vocabulary& vocab) {
    Dialogue out{dialogue.id, {}};
    out.utterances.reserve(dialogue.utterances.size());
    for (const auto& u : dialogue.utterances) out.utterances.push_back(mark_items(u, vocab));
    return out;
}

Utterance unmark_items(const Utterance& utterance, const Vocabulary& vocab) {
    Utterance out = utterance;
    out.tokens.clear();
    out.words.clear();
    out.item_spans.clear();
    std::size_t next_span = 0;
    for (std::size_t i = 0; i < utterance.tokens.size(); ++i) {
        const TokenId t = utterance.tokens[i];
        if (t == vocab.rec_start() || t == vocab.rec_end()) continue;
        if (next_span < utterance.item_spans.size() && utterance.item_spans[next_span].start == i) {
            out.item_spans.push_back({out.tokens.size(), utterance.item_spans[next_span++].item_id});
        }
        out.tokens.push_back(t);
        out.words.push_back(i < utterance.words.size() ? utterance.words[i] : vocab.token(t));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Entity linking

LinkMap LinkMap::parse(std::string_view json_text) {
    const json j = json::parse(json_text);
    if (!j.is_object()) throw DataError("link map must be a JSON object");
    LinkMap lm;
    auto read_obj = [](const json& o, std::unordered_map<std::string, std::string>& dst) {
        if (!o.is_object()) throw DataError("link map section must be an object");
        for (auto it = o.begin(); it != o.end(); ++it) dst[it.key()] = json_id_string(it.value());
    };
    const bool sectioned = (j.contains("items") && j.at("items").is_object()) ||
                           (j.contains("surfaces") && j.at("surfaces").is_object());
    if (sectioned) {
        if (j.contains("items")) read_obj(j.at("items"), lm.items);
        if (j.contains("surfaces")) {
            std::unordered_map<std::string, std::string> raw;
            read_obj(j.at("surfaces"), raw);
            for (auto& [k, v] : raw) lm.surfaces[to_lower(k)] = v;
        }
    } else {
        read_obj(j, lm.items);
    }
    return lm;
}

LinkMap LinkMap::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open link map: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse(ss.str());
    } catch (const json::exception& e) {
        throw DataError("link map " + path.string() + ": " + e.what());
    }
}

void LinkMap::save(const std::filesystem::path& path) const {
    std::map<std::string, std::string> it(items.begin(), items.end());
    std::map<std::string, std::string> sf(surfaces.begin(), surfaces.end());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write link map: " + path.string());
    out << json{{"items", it}, {"surfaces", sf}}.dump(1) << '\n';
}

EntityLinker::EntityLinker(const LinkMap& links, const std::unordered_map<std::string, EntityId>& entity_index) {
    for (const auto& [item, ent] : links.items) {
        if (auto it = entity_index.find(ent); it != entity_index.end()) items_.emplace(item, it->second);
    }
    for (const auto& [surface, ent] : links.surfaces) {
        auto it = entity_index.find(ent);
        if (it == entity_index.end()) continue;
        const auto words = tokenize_text(surface);
        if (words.empty()) continue;
        std::string key;
        for (const auto& w : words) key += (key.empty() ? "" : " ") + w;
        surfaces_.emplace(std::move(key), it->second);
        max_surface_words_ = std::max(max_surface_words_, words.size());
    }
}

std::optional<EntityId> EntityLinker::item_entity(std::string_view item_id) const {
    if (auto it = items_.find(std::string(item_id)); it != items_.end()) return it->second;
    return std::nullopt;
}

std::vector<EntityId> EntityLinker::link_words(const std::vector<std::string>& words) const {
    std::vector<EntityId> out;
    for (std::size_t i = 0; i < words.size();) {
        const auto& w = words[i];
        if (!w.empty() && w.front() == '@') {
            if (auto e = item_entity(std::string_view(w).substr(1))) out.push_back(*e);
            ++i;
            continue;
        }
        std::size_t matched = 0;
        for (std::size_t len = std::min(max_surface_words_, words.size() - i); len >= 1 && !matched; --len) {
            std::string key = words[i];
            for (std::size_t k = 1; k < len; ++k) key += " " + words[i + k];
            if (auto it = surfaces_.find(key); it != surfaces_.end()) {
                out.push_back(it->second);
                matched = len;
            }
        }
        i += matched ? matched : 1;
    }
    return out;
}

void EntityLinker::accumulate(const std::vector<std::string>& words, std::vector<EntityId>& entity_set) const {
    for (EntityId e : link_words(words)) {
        if (std::find(entity_set.begin(), entity_set.end(), e) == entity_set.end()) entity_set.push_back(e);
    }
}

// ---------------------------------------------------------------------------
// Pairs

std::vector<ContextResponsePair> build_pairs(const std::vector<Dialogue>& dialogues, const Vocabulary& vocab,
                                             const EntityLinker& linker, const PairOptions& options) {
    std::vector<ContextResponsePair> pairs;
    for (const auto& d : dialogues) {
        std::vector<TokenId> context;
        std::vector<EntityId> entities;
        for (std::size_t i = 0; i < d.utterances.size(); ++i) {
            const Utterance& u = d.utterances[i];
            if (u.speaker == Speaker::recommender) {
                ContextResponsePair p;
                p.dialogue_id = d.id;
                p.turn_index = i + 1;
                const std::size_t keep = std::min(context.size(), options.max_context_tokens);
                p.context.assign(context.end() - static_cast<std::ptrdiff_t>(keep), context.end());
                p.response = u.tokens;
                p.response.push_back(vocab.eos());
                for (const auto& s : u.item_spans) {
                    if (std::find(p.gold_items.begin(), p.gold_items.end(), s.item_id) == p.gold_items.end()) {
                        p.gold_items.push_back(s.item_id);
                    }
                }
                p.entity_set = entities;
                pairs.push_back(std::move(p));
            }
            if (!context.empty()) context.push_back(vocab.sep());
            context.insert(context.end(), u.tokens.begin(), u.tokens.end());
            linker.accumulate(u.words, entities);
        }
    }
    return pairs;
}

std::vector<TokenId> strip_markers(const std::vector<TokenId>& tokens, const Vocabulary& vocab) {
    std::vector<TokenId> out;
    out.reserve(tokens.size());
    for (TokenId t : tokens) {
        if (t != vocab.rec_start() && t != vocab.rec_end()) out.push_back(t);
    }
    return out;
}

void strip_markers(std::vector<ContextResponsePair>& pairs, const Vocabulary& vocab) {
    for (auto& p : pairs) {
        p.context = strip_markers(p.context, vocab);
        p.response = strip_markers(p.response, vocab);
    }
}

std::vector<TokenId> generation_prefix(const std::vector<TokenId>& context, const Vocabulary& vocab) {
    std::vector<TokenId> out = context;
    out.push_back(vocab.sep());
    return out;
}

std::vector<TokenId> model_input(const ContextResponsePair& pair, const Vocabulary& vocab) {
    auto out = generation_prefix(pair.context, vocab);
    out.insert(out.end(), pair.response.begin(), pair.response.end());
    return out;
}

DatasetSplit split_dialogue_ids(std::vector<std::string> ids, std::uint64_t seed) {
    if (ids.size() < 10) throw std::invalid_argument("split_dataset: need at least 10 dialogues");
    std::mt19937_64 rng(seed);
    // Fisher-Yates with an explicit draw so the permutation does not depend on the library's shuffle.
    for (std::size_t i = ids.size() - 1; i > 0; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
        std::swap(ids[i], ids[j]);
    }
    const std::size_t n = ids.size();
    const std::size_t n_train = n * 8 / 10;
    const std::size_t n_valid = n / 10;
    DatasetSplit s;
    s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.valid.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                   ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
    s.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), ids.end());
    return s;
}

PairSplit apply_split(const std::vector<ContextResponsePair>& pairs, const DatasetSplit& split) {
    std::unordered_map<std::string, int> where;
    for (const auto& id : split.train) where[id] = 0;
    for (const auto& id : split.valid) where[id] = 1;
    for (const auto& id : split.test) where[id] = 2;
    PairSplit out;
    for (const auto& p : pairs) {
        auto it = where.find(p.dialogue_id);
        if (it == where.end()) continue;
        (it->second == 0 ? out.train : it->second == 1 ? out.valid : out.test).push_back(p);
    }
    return out;
}

PairSplit split_dataset(const std::vector<ContextResponsePair>& pairs, std::uint64_t seed) {
    std::vector<std::string> ids;
    std::unordered_set<std::string> seen;
    for (const auto& p : pairs) {
        if (seen.insert(p.dialogue_id).second) ids.push_back(p.dialogue_id);
    }
    return apply_split(pairs, split_dialogue_ids(std::move(ids), seed));
}

void save_pairs(const std::filesystem::path& path, const std::vector<ContextResponsePair>& pairs,
                const Vocabulary& vocab, const std::vector<std::string>& entity_names) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write pair file: " + path.string());
    auto strs = [&](const std::vector<TokenId>& ts) {
        std::vector<std::string> s;
        s.reserve(ts.size());
        for (TokenId t : ts) s.push_back(vocab.token(t));
        return s;
    };
    for (const auto& p : pairs) {
        std::vector<std::string> ents;
        for (EntityId e : p.entity_set) ents.push_back(entity_names.at(static_cast<std::size_t>(e)));
        out << json{{"pair_id", p.pair_id()},
                    {"dialogue_id", p.dialogue_id},
                    {"turn_index", p.turn_index},
                    {"context", strs(p.context)},
                    {"response", strs(p.response)},
                    {"gold_items", p.gold_items},
                    {"entity_set", ents}}
                   .dump()
            << '\n';
    }
}

std::vector<ContextResponsePair> load_pairs(const std::filesystem::path& path, const Vocabulary& vocab,
                                            const std::unordered_map<std::string, EntityId>& entity_index) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open pair file: " + path.string());
    std::vector<ContextResponsePair> pairs;
    std::string line;
    std::size_t lineno = 0;
    auto ids = [&](const json& arr) {
        std::vector<TokenId> out;
        for (const auto& s : arr) {
            auto id = vocab.find(s.get<std::string>());
            if (!id) throw DataError("token not in vocabulary: " + s.get<std::string>());
            out.push_back(*id);
        }
        return out;
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            ContextResponsePair p;
            p.dialogue_id = j.at("dialogue_id").get<std::string>();
            p.turn_index = j.at("turn_index").get<std::size_t>();
            p.context = ids(j.at("context"));
            p.response = ids(j.at("response"));
            p.gold_items = j.at("gold_items").get<std::vector<std::string>>();
            for (const auto& e : j.at("entity_set")) {
                auto it = entity_index.find(e.get<std::string>());
                if (it == entity_index.end()) throw DataError("entity not in graph: " + e.get<std::string>());
                p.entity_set.push_back(it->second);
            }
            pairs.push_back(std::move(p));
        } catch (const std::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return pairs;
}

std::unordered_map<std::string, std::size_t> count_item_mentions(const std::vector<Dialogue>& dialogues) {
    std::unordered_map<std::string, std::size_t> counts;
    for (const auto& d : dialogues)
        for (const auto& u : d.utterances)
            for (const auto& s : u.item_spans) ++counts[s.item_id];
    return counts;
}

}  // namespace recindial
