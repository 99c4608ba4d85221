#include "recindial/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "recindial/text.hpp"

namespace recindial {

using nlohmann::json;

PreparedData prepare_data(const std::vector<TextDialogue>& dialogues, const ItemCatalog& catalog, KnowledgeGraph graph,
                          LinkMap links, std::uint64_t split_seed, std::size_t min_count,
                          std::size_t max_context_tokens) {
    std::vector<std::string> ids;
    for (const auto& d : dialogues) ids.push_back(d.id);
    if (std::set<std::string>(ids.begin(), ids.end()).size() != ids.size()) throw DataError("duplicate dialogue ids");
    const DatasetSplit split = split_dialogue_ids(ids, split_seed);
    const std::set<std::string> train_ids(split.train.begin(), split.train.end());

    std::vector<TextDialogue> train_text;
    for (const auto& d : dialogues)
        if (train_ids.count(d.id)) train_text.push_back(d);

    PreparedData data;
    const auto base = select_base_tokens(count_words(train_text), min_count);
    data.vocab = Vocabulary::build(catalog.ids(), base);
    data.graph = std::move(graph);
    data.links = std::move(links);
    data.catalog = catalog;

    std::vector<Dialogue> marked;
    std::vector<Dialogue> train_tokens;
    for (const auto& d : dialogues) {
        Dialogue t = tokenize_dialogue(d, data.vocab);
        if (train_ids.count(d.id)) train_tokens.push_back(t);
        marked.push_back(mark_items(t, data.vocab));
    }
    const auto pairs = build_pairs(marked, data.vocab, data.linker(), PairOptions{max_context_tokens});
    data.pairs = apply_split(pairs, split);
    data.train_item_counts = count_item_mentions(train_tokens);
    return data;
}

PreparedData prepare_data(const PreprocessInputs& in) {
    LoadedCorpus corpus = in.format == CorpusFormat::redial ? load_redial(in.corpus) : load_normalized(in.corpus);
    ItemCatalog catalog;
    if (!in.items.empty()) catalog = ItemCatalog::load(in.items);
    for (const auto& id : corpus.catalog.ids()) catalog.add(id, corpus.catalog.name(id));
    auto data = prepare_data(corpus.dialogues, catalog, KnowledgeGraph::load(in.triples, in.entities),
                             LinkMap::load(in.links), in.split_seed, in.min_count, in.max_context_tokens);
    data.warnings = std::move(corpus.warnings);
    return data;
}

void save_prepared(const std::filesystem::path& dir, const PreparedData& data) {
    std::filesystem::create_directories(dir);
    data.vocab.save(dir / "vocab.txt");
    data.catalog.save(dir / "items.tsv");
    data.graph.save(dir / "triples.tsv", dir / "entities.txt");
    data.links.save(dir / "links.json");
    save_pairs(dir / "train.jsonl", data.pairs.train, data.vocab, data.graph.entity_names());
    save_pairs(dir / "valid.jsonl", data.pairs.valid, data.vocab, data.graph.entity_names());
    save_pairs(dir / "test.jsonl", data.pairs.test, data.vocab, data.graph.entity_names());
    std::ofstream out(dir / "item_counts.json");
    if (!out) throw std::runtime_error("cannot write " + (dir / "item_counts.json").string());
    out << json(std::map<std::string, std::size_t>(data.train_item_counts.begin(), data.train_item_counts.end())).dump(1)
        << '\n';
}

PreparedData load_prepared(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw std::runtime_error("data directory not found: " + dir.string());
    PreparedData data;
    data.vocab = Vocabulary::load(dir / "vocab.txt");
    data.catalog = ItemCatalog::load(dir / "items.tsv");
    data.graph = KnowledgeGraph::load(dir / "triples.tsv", dir / "entities.txt");
    data.links = LinkMap::load(dir / "links.json");
    const auto& index = data.graph.entity_index();
    data.pairs.train = load_pairs(dir / "train.jsonl", data.vocab, index);
    data.pairs.valid = load_pairs(dir / "valid.jsonl", data.vocab, index);
    data.pairs.test = load_pairs(dir / "test.jsonl", data.vocab, index);
    std::ifstream in(dir / "item_counts.json");
    if (!in) throw std::runtime_error("cannot open " + (dir / "item_counts.json").string());
    const json j = json::parse(in);
    for (auto it = j.begin(); it != j.end(); ++it) data.train_item_counts[it.key()] = it.value().get<std::size_t>();
    return data;
}

const std::vector<ContextResponsePair>& split_pairs(const PreparedData& data, const std::string& split) {
    if (split == "train") return data.pairs.train;
    if (split == "valid") return data.pairs.valid;
    if (split == "test") return data.pairs.test;
    throw std::invalid_argument("unknown split: " + split + " (expected train, valid or test)");
}

// ---------------------------------------------------------------------------

namespace {

template <class F>
void for_keys(const json& j, const char* section, F&& f) {
    if (!j.is_object()) throw std::invalid_argument(std::string("config section ") + section + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!f(it.key(), it.value())) {
            throw std::invalid_argument(std::string("unknown key in config section ") + section + ": " + it.key());
        }
    }
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json_text(std::string_view text) {
    const json j = json::parse(text);
    ExperimentConfig c;
    for_keys(j, "<root>", [&](const std::string& section, const json& v) {
        if (section == "model") {
            for_keys(v, "model", [&](const std::string& k, const json& x) {
                if (k == "layers") c.model.layers = x;
                else if (k == "heads") c.model.heads = x;
                else if (k == "width") c.model.width = x;
                else if (k == "ff_width") c.model.ff_width = x;
                else if (k == "max_position") c.model.max_position = x;
                else if (k == "dropout") c.model.dropout = x;
                else if (k == "seed") c.model.seed = x;
                else return false;
                return true;
            });
        } else if (section == "kg") {
            for_keys(v, "kg", [&](const std::string& k, const json& x) {
                if (k == "dim") c.kg.dim = x;
                else if (k == "attn_dim") c.kg.attn_dim = x;
                else if (k == "layers") c.kg.layers = x;
                else return false;
                return true;
            });
        } else if (section == "training") {
            c.training = TrainConfig::from_json_text(v.dump());
        } else if (section == "variant") {
            for_keys(v, "variant", [&](const std::string& k, const json& x) {
                if (k == "vocab_pointer") c.variant.vocab_pointer = x;
                else if (k == "knowledge") c.variant.knowledge = x;
                else return false;
                return true;
            });
        } else if (section == "decode") {
            for_keys(v, "decode", [&](const std::string& k, const json& x) {
                if (k == "beam_width") c.decode.beam_width = x;
                else if (k == "top_k") c.decode.top_k = x;
                else if (k == "max_steps") c.decode.max_steps = x;
                else if (k == "length_penalty") c.decode.length_penalty = x;
                else return false;
                return true;
            });
        } else {
            return false;
        }
        return true;
    });
    return c;
}

ExperimentConfig ExperimentConfig::from_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

std::string ExperimentConfig::to_json_text() const {
    return json{{"model",
                 {{"layers", model.layers}, {"heads", model.heads}, {"width", model.width},
                  {"ff_width", model.ff_width}, {"max_position", model.max_position}, {"dropout", model.dropout},
                  {"seed", model.seed}}},
                {"kg", {{"dim", kg.dim}, {"attn_dim", kg.attn_dim}, {"layers", kg.layers}}},
                {"training", json::parse(training.to_json_text())},
                {"variant", {{"vocab_pointer", variant.vocab_pointer}, {"knowledge", variant.knowledge}}},
                {"decode",
                 {{"beam_width", decode.beam_width}, {"top_k", decode.top_k}, {"max_steps", decode.max_steps},
                  {"length_penalty", decode.length_penalty}}}}
        .dump(2);
}

// ---------------------------------------------------------------------------

namespace {

std::vector<ContextResponsePair> model_pairs(const RecModel& model, const Vocabulary& vocab,
                                             std::span<const ContextResponsePair> pairs) {
    std::vector<ContextResponsePair> out;
    for (const auto& p : pairs) {
        // context, [SEP], response minus its last token
        if (p.context.size() + p.response.size() > model.config.max_position) continue;
        out.push_back(p);
    }
    if (!model.variant.vocab_pointer) strip_markers(out, vocab);
    return out;
}

}  // namespace

RecModel train_model(const PreparedData& data, const ExperimentConfig& config, TrainReport* report,
                     const EpochCallback& on_epoch) {
    RecModel model = RecModel::create(config.model, config.variant, config.kg, data.vocab, data.graph);
    const auto train_pairs = model_pairs(model, data.vocab, data.pairs.train);
    const auto valid_pairs = model_pairs(model, data.vocab, data.pairs.valid);
    auto r = train(model, data.vocab, data.graph, data.linker(), train_pairs, valid_pairs, config.training, on_epoch);
    r.skipped_pairs = (data.pairs.train.size() - train_pairs.size()) + (data.pairs.valid.size() - valid_pairs.size());
    if (report) *report = std::move(r);
    return model;
}

double model_perplexity(const RecModel& model, const PreparedData& data, std::span<const ContextResponsePair> pairs) {
    const auto usable = model_pairs(model, data.vocab, pairs);
    return evaluate_loss(model, data.vocab, data.graph, data.linker(), usable).ppl;
}

std::vector<std::string> response_words(std::span<const TokenId> tokens, const Vocabulary& vocab) {
    std::vector<std::string> out;
    for (TokenId t : tokens) {
        if (t == vocab.rec_start() || t == vocab.rec_end() || t == vocab.pad() || t == vocab.sep()) continue;
        if (t == vocab.eos()) break;
        out.push_back(vocab.is_item(t) ? item_token_string(vocab.item_id(t)) : vocab.token(t));
    }
    return out;
}

std::string render_response(std::span<const TokenId> tokens, const Vocabulary& vocab, const ItemCatalog& catalog,
                            std::vector<RenderedMention>* mentions) {
    std::vector<std::string> words;
    for (TokenId t : tokens) {
        if (t == vocab.rec_start() || t == vocab.rec_end() || t == vocab.pad() || t == vocab.sep()) continue;
        if (t == vocab.eos()) break;
        if (!vocab.is_item(t)) {
            words.push_back(vocab.token(t));
            continue;
        }
        const std::string id = vocab.item_id(t);
        const std::string name = catalog.contains(id) ? catalog.name(id) : id;
        words.push_back(name);
        if (mentions) {
            const std::size_t end = join_words(words).size();
            mentions->push_back({id, name, end - name.size(), end});
        }
    }
    return join_words(words);
}

std::vector<EvalInstance> generate_transcript(const RecModel& model, const PreparedData& data,
                                              std::span<const ContextResponsePair> pairs, DecodeOptions options) {
    const Recommender rec(model, data.vocab, data.graph);
    std::vector<EvalInstance> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        const auto result = rec.recommend(p.context, p.entity_set, options);
        EvalInstance e;
        e.pair_id = p.pair_id();
        e.turn_index = p.turn_index;
        e.generated_tokens = response_words(result.response_tokens, data.vocab);
        e.generated_text = render_response(result.response_tokens, data.vocab, data.catalog);
        for (const auto& it : result.items) e.items.emplace_back(it.item_id, it.prob);
        e.gold_items = p.gold_items;
        e.reference_tokens = response_words(p.response, data.vocab);
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace recindial
