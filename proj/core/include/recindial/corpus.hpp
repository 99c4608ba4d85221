#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "recindial/vocabulary.hpp"

namespace recindial {

enum class Speaker { seeker, recommender };

std::string_view speaker_name(Speaker s);
Speaker parse_speaker(std::string_view s);

// ---------------------------------------------------------------------------
// Text-level (normalized) corpus: the on-disk fixture format.

struct ItemMention {
    std::string surface;
    std::string item_id;
    std::size_t char_start = 0;  // byte offsets into the turn text, end exclusive
    std::size_t char_end = 0;
};

struct TextTurn {
    Speaker speaker = Speaker::seeker;
    std::string text;
    std::vector<ItemMention> items;
};

struct TextDialogue {
    std::string id;
    std::vector<TextTurn> turns;
};

/// Ordered item catalog: id -> display name.
class ItemCatalog {
public:
    /// Returns false (and keeps the first name) when the id already exists.
    bool add(const std::string& id, const std::string& name);
    bool contains(const std::string& id) const { return index_.count(id) != 0; }
    const std::string& name(const std::string& id) const;
    const std::vector<std::string>& ids() const noexcept { return ids_; }
    std::size_t size() const noexcept { return ids_.size(); }

    static ItemCatalog load(const std::filesystem::path& path);  // tsv: id \t name
    void save(const std::filesystem::path& path) const;

private:
    std::vector<std::string> ids_;
    std::vector<std::string> names_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct LoadedCorpus {
    std::vector<TextDialogue> dialogues;
    ItemCatalog catalog;
    std::vector<std::string> warnings;
};

/// Reads ReDial line-delimited JSON. "@<id>" markers become item mentions whose surface is the
/// movie name; markers whose id is missing from movieMentions stay as plain text with a warning.
/// Throws DataError naming the line number on malformed records.
LoadedCorpus load_redial(const std::filesystem::path& path);
LoadedCorpus parse_redial_lines(std::istream& in);

/// Reads the normalized line-delimited corpus. Item names default to their first surface form.
LoadedCorpus load_normalized(const std::filesystem::path& path);
LoadedCorpus parse_normalized_lines(std::istream& in);
void save_normalized(const std::filesystem::path& path, const std::vector<TextDialogue>& dialogues);

// ---------------------------------------------------------------------------
// Token-level corpus.

struct ItemSpan {
    std::size_t start = 0;  // index of the item token in Utterance::tokens
    std::string item_id;
};

struct Utterance {
    Speaker speaker = Speaker::seeker;
    std::vector<TokenId> tokens;
    std::vector<ItemSpan> item_spans;
    std::string raw_text;
    /// Lowercased word per token position; item positions hold the item token string.
    std::vector<std::string> words;
};

struct Dialogue {
    std::string id;
    std::vector<Utterance> utterances;
    std::size_t size() const noexcept { return utterances.size(); }
};

/// Words that feed vocabulary construction: all non-item words of the given dialogues.
std::map<std::string, std::size_t> count_words(const std::vector<TextDialogue>& dialogues);

/// Base token list: [UNK] followed by words with count >= min_count, most frequent first, ties by spelling.
std::vector<std::string> select_base_tokens(const std::map<std::string, std::size_t>& counts,
                                            std::size_t min_count = 1);

/// Converts a text dialogue to token ids. Each mention becomes exactly one item token; mentions whose
/// item is not in the vocabulary are tokenized as plain words.
Dialogue tokenize_dialogue(const TextDialogue& dialogue, const Vocabulary& vocab);

/// Wraps every item token w as [RecS] w [RecE]. Already-wrapped items are left alone.
/// Throws DataError when a span does not point at a V_R token.
Utterance mark_items(const Utterance& utterance, const Vocabulary& vocab);
Dialogue mark_items(const Dialogue& dialogue, const Vocabulary& vocab);
/// Inverse of mark_items.
Utterance unmark_items(const Utterance& utterance, const Vocabulary& vocab);

// ---------------------------------------------------------------------------
// Entity linking against precomputed link maps.

using EntityId = std::int32_t;

/// item id -> entity name and surface form -> entity name.
struct LinkMap {
    std::unordered_map<std::string, std::string> items;
    std::unordered_map<std::string, std::string> surfaces;

    /// Accepts a flat object (item id -> entity) or {"items": {...}, "surfaces": {...}}.
    static LinkMap load(const std::filesystem::path& path);
    static LinkMap parse(std::string_view json_text);
    void save(const std::filesystem::path& path) const;
};

/// Resolves item ids and surface forms to dense KG entity ids. Links to entities outside the
/// graph are dropped at construction.
class EntityLinker {
public:
    EntityLinker() = default;
    EntityLinker(const LinkMap& links, const std::unordered_map<std::string, EntityId>& entity_index);

    std::optional<EntityId> item_entity(std::string_view item_id) const;

    /// Entities mentioned in a word sequence, left to right, longest surface match first.
    /// Item token strings ("@id") resolve through the item links.
    std::vector<EntityId> link_words(const std::vector<std::string>& words) const;

    /// Appends newly seen entities of `words` to `entity_set`, keeping first-appearance order.
    void accumulate(const std::vector<std::string>& words, std::vector<EntityId>& entity_set) const;

private:
    std::unordered_map<std::string, EntityId> items_;
    std::unordered_map<std::string, EntityId> surfaces_;  // key: words joined by single spaces
    std::size_t max_surface_words_ = 0;
};

// ---------------------------------------------------------------------------
// Context/response pairs.

struct ContextResponsePair {
    std::string dialogue_id;
    std::size_t turn_index = 1;  // 1-based utterance position of the response in its dialogue
    std::vector<TokenId> context;
    std::vector<TokenId> response;  // marked, [EOS]-terminated
    std::vector<std::string> gold_items;
    std::vector<EntityId> entity_set;

    std::string pair_id() const { return dialogue_id + "#" + std::to_string(turn_index); }
};

struct PairOptions {
    std::size_t max_context_tokens = 256;
};

/// One pair per recommender utterance; the context is all preceding utterances joined by [SEP],
/// truncated from the left. Dialogues must already be item-marked.
std::vector<ContextResponsePair> build_pairs(const std::vector<Dialogue>& dialogues, const Vocabulary& vocab,
                                             const EntityLinker& linker, const PairOptions& options = {});

/// Removes [RecS]/[RecE] so items appear as plain tokens (the model variant without the vocabulary pointer).
std::vector<TokenId> strip_markers(const std::vector<TokenId>& tokens, const Vocabulary& vocab);
void strip_markers(std::vector<ContextResponsePair>& pairs, const Vocabulary& vocab);

/// Model input for a pair: context, [SEP], then the response.
std::vector<TokenId> model_input(const ContextResponsePair& pair, const Vocabulary& vocab);
std::vector<TokenId> generation_prefix(const std::vector<TokenId>& context, const Vocabulary& vocab);

struct DatasetSplit {
    std::vector<std::string> train, valid, test;  // dialogue ids
};

/// Dialogue-level 80/10/10 split, deterministic under `seed`. Throws std::invalid_argument for
/// fewer than 10 dialogues.
DatasetSplit split_dialogue_ids(std::vector<std::string> ids, std::uint64_t seed);

struct PairSplit {
    std::vector<ContextResponsePair> train, valid, test;
};
PairSplit split_dataset(const std::vector<ContextResponsePair>& pairs, std::uint64_t seed);
PairSplit apply_split(const std::vector<ContextResponsePair>& pairs, const DatasetSplit& split);

/// Pair files are line-delimited JSON with tokens stored as strings and entities by name.
void save_pairs(const std::filesystem::path& path, const std::vector<ContextResponsePair>& pairs,
                const Vocabulary& vocab, const std::vector<std::string>& entity_names);
std::vector<ContextResponsePair> load_pairs(const std::filesystem::path& path, const Vocabulary& vocab,
                                            const std::unordered_map<std::string, EntityId>& entity_index);

/// Item mention counts over a set of dialogues (every utterance, every mention).
std::unordered_map<std::string, std::size_t> count_item_mentions(const std::vector<Dialogue>& dialogues);

}  // namespace recindial
