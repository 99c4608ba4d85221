#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "recindial/corpus.hpp"
#include "recindial/kgraph.hpp"

namespace recindial {

/// Toy movie domain: 20 items on a 5 genre x 4 era grid, 11 actors, 40 graph entities in total.
/// Genre and era words have synonyms that the link map resolves to the same entity.
struct SyntheticWorld {
    ItemCatalog catalog;
    LinkMap links;
    KnowledgeGraph graph;
    std::vector<std::vector<std::string>> genre_words;  // [genre] synonyms
    std::vector<std::vector<std::string>> era_words;    // [era] synonyms
    std::vector<std::string> actor_names;

    std::size_t genres() const noexcept { return genre_words.size(); }
    std::size_t eras() const noexcept { return era_words.size(); }
    /// The item a recommender suggests once genre and era are known.
    const std::string& rule_item(std::size_t genre, std::size_t era) const;
};

SyntheticWorld make_synthetic_world();

struct SyntheticOptions {
    std::size_t dialogues = 600;
    std::uint64_t seed = 11;
    /// Zipf exponent over genres and eras; larger values make some items much rarer.
    double skew = 1.0;
};

/// Dialogues in which the recommender asks until genre and era are known, then suggests
/// rule_item(genre, era) and closes. Deterministic under the seed.
std::vector<TextDialogue> generate_synthetic_dialogues(const SyntheticWorld& world, const SyntheticOptions& options);

/// ReDial line-delimited JSON: "@id" markers in message text plus movieMentions.
void save_redial(const std::filesystem::path& path, const std::vector<TextDialogue>& dialogues,
                 const ItemCatalog& catalog);

/// Writes dialogues.jsonl (normalized), redial.jsonl, items.tsv, links.json, triples.tsv and entities.txt.
void write_synthetic_bundle(const std::filesystem::path& dir, const SyntheticWorld& world,
                            const std::vector<TextDialogue>& dialogues);

}  // namespace recindial
