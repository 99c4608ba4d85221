#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "recindial/corpus.hpp"
#include "recindial/evalsuite.hpp"
#include "recindial/kgraph.hpp"
#include "recindial/model.hpp"
#include "recindial/training.hpp"

namespace recindial {

enum class CorpusFormat { redial, normalized };

struct PreprocessInputs {
    std::filesystem::path corpus;
    CorpusFormat format = CorpusFormat::redial;
    std::filesystem::path triples;
    std::filesystem::path entities;  // optional entity list fixing ids
    std::filesystem::path links;
    std::filesystem::path items;     // optional catalog; merged with names found in the corpus
    std::uint64_t split_seed = 7;
    std::size_t min_count = 1;
    std::size_t max_context_tokens = 256;
};

/// Everything training and evaluation need, as written by `preprocess`.
struct PreparedData {
    Vocabulary vocab;
    KnowledgeGraph graph;
    LinkMap links;
    ItemCatalog catalog;
    PairSplit pairs;
    std::unordered_map<std::string, std::size_t> train_item_counts;
    std::vector<std::string> warnings;

    EntityLinker linker() const { return EntityLinker(links, graph.entity_index()); }
};

PreparedData prepare_data(const PreprocessInputs& inputs);
/// Same, from dialogues already in memory.
PreparedData prepare_data(const std::vector<TextDialogue>& dialogues, const ItemCatalog& catalog, KnowledgeGraph graph,
                          LinkMap links, std::uint64_t split_seed, std::size_t min_count = 1,
                          std::size_t max_context_tokens = 256);

/// Files: vocab.txt, items.tsv, entities.txt, triples.tsv, links.json, {train,valid,test}.jsonl,
/// item_counts.json.
void save_prepared(const std::filesystem::path& dir, const PreparedData& data);
PreparedData load_prepared(const std::filesystem::path& dir);

const std::vector<ContextResponsePair>& split_pairs(const PreparedData& data, const std::string& split);

/// One JSON document with sections "model", "kg", "training", "variant" and "decode". Missing
/// sections and keys keep their defaults; unknown keys are rejected.
struct ExperimentConfig {
    ModelConfig model;
    KGShape kg;
    TrainConfig training;
    Variant variant;
    DecodeOptions decode;

    static ExperimentConfig from_json_file(const std::filesystem::path& path);
    static ExperimentConfig from_json_text(std::string_view text);
    std::string to_json_text() const;
};

/// Creates and trains a model. Without the vocabulary pointer, [RecS]/[RecE] are stripped from the pairs.
RecModel train_model(const PreparedData& data, const ExperimentConfig& config, TrainReport* report = nullptr,
                     const EpochCallback& on_epoch = {});

/// Masked perplexity of the model on a pair set, with the model's knowledge bias.
double model_perplexity(const RecModel& model, const PreparedData& data, std::span<const ContextResponsePair> pairs);

/// Item token strings are "@id"; markers and [EOS] are dropped.
std::vector<std::string> response_words(std::span<const TokenId> tokens, const Vocabulary& vocab);

struct RenderedMention {
    std::string id;
    std::string name;
    std::size_t char_start = 0;  // byte offsets into the rendered text
    std::size_t char_end = 0;
};

/// Display text: item tokens become catalog names, control tokens are dropped.
std::string render_response(std::span<const TokenId> tokens, const Vocabulary& vocab, const ItemCatalog& catalog,
                            std::vector<RenderedMention>* mentions = nullptr);

/// Decodes every pair and records the transcript instance.
std::vector<EvalInstance> generate_transcript(const RecModel& model, const PreparedData& data,
                                              std::span<const ContextResponsePair> pairs, DecodeOptions options);

}  // namespace recindial
