// Small fixtures and gradient-check drivers shared by the unit tests and the acceptance binary.
#pragma once

#include <random>
#include <string>
#include <vector>

#include "recindial/kgraph.hpp"
#include "recindial/model.hpp"
#include "recindial/pipeline.hpp"
#include "recindial/seqmodel.hpp"
#include "recindial/synthetic.hpp"
#include "recindial/training.hpp"

namespace checks {

using namespace recindial;

/// Three items and five base tokens: general ids 0-8, [RecE] 9, items 10-12.
inline Vocabulary tiny_vocab() {
    const std::vector<std::string> items{"m1", "m2", "m3"};
    const std::vector<std::string> base{"[UNK]", "a", "b", "c", "d"};
    return Vocabulary::build(items, base);
}

/// 4 entities, 2 relations.
inline KnowledgeGraph tiny_graph() {
    return KnowledgeGraph(4, 2, {{0, 0, 1}, {1, 0, 2}, {2, 1, 3}, {3, 1, 0}, {0, 1, 2}, {1, 1, 2}});
}

/// kg_loss through attention and the R-GCN, against central differences.
inline GradCheckResult kg_grad_check(std::uint64_t seed, std::size_t layers, std::size_t dim = 4) {
    const KnowledgeGraph kg = tiny_graph();
    std::mt19937_64 rng(seed);
    KGParams p = KGParams::init(kg, KGShape{dim, 3, layers}, 4, rng);
    const std::vector<EntityId> entities{0, 2, 3};
    const EntityId gold = 1;

    KGParams g = p.zeros_like();
    RgcnCache cache;
    const Matrix H = rgcn_forward(kg, p, &cache);
    const UserEncoding enc = attend_user(entities, H, p);
    std::vector<double> d_vec(dim, 0.0);
    Matrix dH(H.rows(), H.cols());
    kg_loss_backward(enc.vector, H, gold, d_vec, dH);
    attend_user_backward(entities, H, p, enc, d_vec, dH, g);
    rgcn_backward(kg, p, cache, dH, g);

    auto loss = [&] { return kg_loss(entities, rgcn_forward(kg, p), p, gold); };
    return grad_check(loss, p.tensors(), g.tensors());
}

inline ContextResponsePair tiny_pair(const Vocabulary& v) {
    ContextResponsePair pair;
    pair.dialogue_id = "d";
    pair.context = {5, 6, 1, 7};
    pair.response = {5, v.rec_start(), 11, v.rec_end(), 8, v.eos()};
    return pair;
}

/// gen_loss on a 2-layer width-8 transformer; the knowledge bias is checked as a parameter too.
inline GradCheckResult gen_grad_check(std::uint64_t seed, bool vocab_pointer = true) {
    const Vocabulary v = tiny_vocab();
    ModelConfig cfg;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.width = 8;
    cfg.ff_width = 16;
    cfg.max_position = 16;
    cfg.general_size = v.general_size();
    cfg.item_partition_size = v.item_partition_size();
    std::mt19937_64 rng(seed);
    TransformerLM lm(cfg, rng);
    // Larger embeddings than the default init keep the check away from a flat loss surface.
    for (auto& t : lm.params().tensors())
        for (double& x : t.value->flat()) x *= 3.0;
    ContextResponsePair pair = tiny_pair(v);
    if (!vocab_pointer) pair.response = strip_markers(pair.response, v);

    Matrix bias(1, v.item_partition_size());
    std::normal_distribution<double> nd(0.0, 1.0);
    for (double& b : bias.flat()) b = nd(rng);

    LMParams g = lm.params().zeros_like();
    Matrix d_bias(1, bias.cols());
    const LossOptions opt{vocab_pointer, 1.0};
    gen_loss_backward(lm, v, pair, bias.flat(), opt, g, d_bias.flat());

    TensorList params = lm.params().tensors();
    TensorList grads = g.tensors();
    params.push_back({"bias", &bias});
    grads.push_back({"bias", &d_bias});
    auto loss = [&] { return gen_loss(lm, v, pair, bias.flat(), opt); };
    return grad_check(loss, params, grads);
}

/// Prepared synthetic data: `dialogues` toy conversations split 80/10/10.
inline PreparedData synthetic_data(std::size_t dialogues, std::uint64_t seed = 11, double skew = 1.0) {
    const SyntheticWorld world = make_synthetic_world();
    const auto text = generate_synthetic_dialogues(world, SyntheticOptions{dialogues, seed, skew});
    return prepare_data(text, world.catalog, world.graph, world.links, 7);
}

/// A model small enough to train in well under a second per epoch on a few hundred pairs.
inline ExperimentConfig small_experiment() {
    ExperimentConfig c;
    c.model.layers = 1;
    c.model.heads = 2;
    c.model.width = 16;
    c.model.ff_width = 32;
    c.model.max_position = 128;
    c.model.seed = 3;
    c.kg = KGShape{8, 4, 1};
    c.training.learning_rate = 3e-3;
    c.training.batch_size = 8;
    c.training.epochs = 1;
    c.training.warmup_steps = 5;
    c.training.seed = 5;
    c.decode.beam_width = 3;
    c.decode.max_steps = 20;
    return c;
}

}  // namespace checks
