#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "recindial/kgraph.hpp"
#include "recindial/seqmodel.hpp"
#include "recindial/vpdecode.hpp"

namespace recindial {

/// Ablation switches. Both on is the full model.
struct Variant {
    bool vocab_pointer = true;
    bool knowledge = true;
};

/// Language model plus knowledge path: everything a checkpoint holds.
struct RecModel {
    ModelConfig config;
    Variant variant;
    KGShape kg_shape;
    TransformerLM lm;
    KGParams kg;
    std::uint64_t vocab_hash = 0;

    static RecModel create(const ModelConfig& config, const Variant& variant, const KGShape& kg_shape,
                           const Vocabulary& vocab, const KnowledgeGraph& graph);

    /// All trainable tensors; the knowledge tensors only when the variant uses them.
    TensorList trainable();
    TensorList all_tensors();
};

/// Binary checkpoint, little-endian:
///   magic "RECINDCK", u32 version (1), u64 header length, UTF-8 JSON header,
///   u64 tensor count, then per tensor: u32 name length, name bytes, u64 rows, u64 cols, rows*cols f64.
/// The header carries the model config, variant, KG shape, vocabulary hash and graph sizes.
void save_checkpoint(const std::filesystem::path& path, RecModel& model);
RecModel load_checkpoint(const std::filesystem::path& path);
std::uint64_t file_hash(const std::filesystem::path& path);

/// Frozen model ready for decoding: the graph encoding is computed once.
class Recommender {
public:
    Recommender(const RecModel& model, const Vocabulary& vocab, const KnowledgeGraph& graph);

    const Vocabulary& vocab() const noexcept { return *vocab_; }
    const RecModel& model() const noexcept { return *model_; }
    const Matrix& entity_states() const noexcept { return H_; }

    /// b_u for a context entity set; empty when the variant has no knowledge path.
    std::vector<double> bias(std::span<const EntityId> entities) const;

    RecommendationResult recommend(const std::vector<TokenId>& context, std::span<const EntityId> entities,
                                   DecodeOptions options) const;

private:
    const RecModel* model_;
    const Vocabulary* vocab_;
    Matrix H_;
};

}  // namespace recindial
