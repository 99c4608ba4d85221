#pragma once

#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "recindial/corpus.hpp"
#include "recindial/tensor.hpp"

namespace recindial {

using RelationId = std::int32_t;

struct Triple {
    EntityId head = 0;
    RelationId relation = 0;
    EntityId tail = 0;
};

/// Item-oriented knowledge graph. A triple (e1, r, e2) makes e1 an in-neighbor of e2 under r.
class KnowledgeGraph {
public:
    KnowledgeGraph() = default;
    /// Entities and relations named by their decimal index.
    KnowledgeGraph(std::size_t entity_count, std::size_t relation_count, std::vector<Triple> triples);
    KnowledgeGraph(std::vector<std::string> entity_names, std::vector<std::string> relation_names,
                   std::vector<Triple> triples);

    /// Tab-separated head, relation, tail per line. When `entity_list` is given its order fixes the dense
    /// ids (one name per line) and triples may only reference listed entities; otherwise ids follow
    /// first appearance.
    static KnowledgeGraph load(const std::filesystem::path& triples_path,
                               const std::filesystem::path& entity_list = {});
    void save(const std::filesystem::path& triples_path, const std::filesystem::path& entity_list) const;

    std::size_t entity_count() const noexcept { return entity_names_.size(); }
    std::size_t relation_count() const noexcept { return relation_names_.size(); }
    const std::vector<Triple>& triples() const noexcept { return triples_; }
    const std::vector<std::string>& entity_names() const noexcept { return entity_names_; }
    const std::vector<std::string>& relation_names() const noexcept { return relation_names_; }
    const std::unordered_map<std::string, EntityId>& entity_index() const noexcept { return entity_index_; }

    /// E_e^r
    std::span<const EntityId> in_neighbors(EntityId e, RelationId r) const;

private:
    void build_index();

    std::vector<std::string> entity_names_;
    std::vector<std::string> relation_names_;
    std::vector<Triple> triples_;
    std::unordered_map<std::string, EntityId> entity_index_;
    std::vector<std::vector<EntityId>> neighbors_;  // [e * R + r]
};

struct KGShape {
    std::size_t dim = 128;        // d_E
    std::size_t attn_dim = 64;    // d_a
    std::size_t layers = 1;       // L
};

/// Learnable parameters of the knowledge path.
struct KGParams {
    Matrix base;                                 // |E| x d_E, h^(0)
    std::vector<std::vector<Matrix>> relation;   // [layer][relation] d_E x d_E
    std::vector<Matrix> self;                    // [layer] d_E x d_E
    Matrix attn_w1;                              // d_a x d_E
    Matrix attn_w2;                              // 1 x d_a
    Matrix bias_map;                             // |E| x |V_R|

    static KGParams init(const KnowledgeGraph& kg, const KGShape& shape, std::size_t item_partition_size,
                         std::mt19937_64& rng);
    /// Same shapes, all zero.
    KGParams zeros_like() const;

    std::size_t layers() const noexcept { return self.size(); }
    std::size_t dim() const noexcept { return base.cols(); }
    std::size_t attn_dim() const noexcept { return attn_w1.rows(); }

    TensorList tensors();
    void validate(const KnowledgeGraph& kg) const;
};

/// Per-layer activations kept for the backward pass.
struct RgcnCache {
    std::vector<Matrix> inputs;  // h^(l), l = 0..L-1
    std::vector<Matrix> pre;     // pre-activation of layer l
};

/// h^(l+1) = act(sum_r sum_{e' in E_e^r} W_r h_e' / |E_e^r| + W h_e); rectifier on hidden layers, identity
/// on the last. Throws std::invalid_argument on dimension mismatch.
Matrix rgcn_forward(const KnowledgeGraph& kg, const KGParams& params, RgcnCache* cache = nullptr);
/// Accumulates gradients of base, relation and self matrices given dL/dH.
void rgcn_backward(const KnowledgeGraph& kg, const KGParams& params, const RgcnCache& cache, const Matrix& d_out,
                   KGParams& grads);

struct UserEncoding {
    std::vector<double> attention;          // alpha_u over T_u
    std::vector<double> vector;             // t_u
    std::vector<double> bias;               // b_u over V_R (filled by knowledge_bias)
    std::vector<std::vector<double>> hidden;  // tanh(W_a1 h_i) per entity, for backward
};

/// Self-attention pooling of the context entities. Requires a non-empty entity set.
UserEncoding attend_user(std::span<const EntityId> entities, const Matrix& H, const KGParams& params);
void attend_user_backward(std::span<const EntityId> entities, const Matrix& H, const KGParams& params,
                          const UserEncoding& enc, std::span<const double> d_vector, Matrix& dH, KGParams& grads);

/// b_u = t_u H^T M_b.
std::vector<double> bias_from_vector(std::span<const double> user_vector, const Matrix& H, const KGParams& params);
/// Accumulates dt_u, dH and dM_b from dL/db_u.
void bias_backward(std::span<const double> user_vector, const Matrix& H, const KGParams& params,
                   std::span<const double> d_bias, std::span<double> d_vector, Matrix& dH, KGParams& grads);

/// Attention + bias; the zero vector when the entity set is empty.
std::vector<double> knowledge_bias(std::span<const EntityId> entities, const Matrix& H, const KGParams& params);

/// t_u H^T
std::vector<double> entity_scores(std::span<const double> user_vector, const Matrix& H);

/// -log softmax(t_u H^T)_gold.
double kg_loss(std::span<const EntityId> entities, const Matrix& H, const KGParams& params, EntityId gold);
/// Loss from a precomputed t_u; accumulates dt_u and dH.
double kg_loss_backward(std::span<const double> user_vector, const Matrix& H, EntityId gold,
                        std::span<double> d_vector, Matrix& dH, double weight = 1.0);

/// Entities by descending t_u H^T score; ties broken by ascending id.
std::vector<EntityId> rank_entities(std::span<const EntityId> entities, const Matrix& H, const KGParams& params);
std::vector<EntityId> rank_by_scores(std::span<const double> scores);

}  // namespace recindial
