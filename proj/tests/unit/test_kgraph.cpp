#include <doctest.h>

#include <cmath>

#include "checks.hpp"
#include "oracles.hpp"
#include "recindial/kgraph.hpp"

using namespace recindial;

namespace {

KnowledgeGraph random_graph(std::mt19937_64& rng, std::size_t entities, std::size_t relations, std::size_t triples) {
    std::vector<Triple> t;
    for (std::size_t i = 0; i < triples; ++i) {
        t.push_back({static_cast<EntityId>(rng() % entities), static_cast<RelationId>(rng() % relations),
                     static_cast<EntityId>(rng() % entities)});
    }
    return KnowledgeGraph(entities, relations, std::move(t));
}

}  // namespace

TEST_CASE("R-GCN matches the dense adjacency oracle") {
    std::mt19937_64 rng(17);
    for (std::size_t layers = 1; layers <= 3; ++layers) {
        for (int trial = 0; trial < 10; ++trial) {
            const std::size_t n = 2 + rng() % 10, r = 1 + rng() % 4;
            const auto kg = random_graph(rng, n, r, rng() % (3 * n));
            const auto p = KGParams::init(kg, KGShape{5, 3, layers}, 3, rng);
            CHECK(oracle::max_abs_diff(rgcn_forward(kg, p), oracle::dense_rgcn(kg, p)) < 1e-10);
        }
    }
}

TEST_CASE("in-neighbors follow head to tail") {
    const auto kg = checks::tiny_graph();
    const auto n = kg.in_neighbors(2, 1);
    CHECK(std::vector<EntityId>(n.begin(), n.end()) == std::vector<EntityId>{0, 1});
    CHECK(kg.in_neighbors(0, 0).empty());
    CHECK_THROWS_AS(KnowledgeGraph(2, 1, {{0, 0, 5}}), DataError);
}

TEST_CASE("isolated entities keep only the self term") {
    std::mt19937_64 rng(2);
    const KnowledgeGraph kg(3, 1, {});
    const auto p = KGParams::init(kg, KGShape{4, 2, 1}, 2, rng);
    const Matrix H = rgcn_forward(kg, p);
    CHECK(oracle::max_abs_diff(H, oracle::naive_matmul(p.base, p.self[0].transposed())) < 1e-12);
}

TEST_CASE("knowledge bias worked example") {
    KGParams p;
    p.bias_map = Matrix(2, 2, std::vector<double>{1, 2, 3, 4});
    const std::vector<double> t{1.0, 0.0};
    const auto b = bias_from_vector(t, Matrix::identity(2), p);
    CHECK(b == std::vector<double>{1.0, 2.0});
}

TEST_CASE("attention pooling matches the scalar oracle") {
    std::mt19937_64 rng(8);
    const auto kg = checks::tiny_graph();
    const auto p = KGParams::init(kg, KGShape{4, 3, 1}, 4, rng);
    const Matrix H = rgcn_forward(kg, p);
    const std::vector<EntityId> ents{3, 1};
    const auto enc = attend_user(ents, H, p);

    std::vector<double> z;
    for (EntityId e : ents) {
        double s = 0.0;
        for (std::size_t a = 0; a < p.attn_dim(); ++a) {
            double pre = 0.0;
            for (std::size_t j = 0; j < p.dim(); ++j) pre += p.attn_w1(a, j) * H(e, j);
            s += p.attn_w2(0, a) * std::tanh(pre);
        }
        z.push_back(s);
    }
    const auto alpha = oracle::softmax(z);
    for (std::size_t i = 0; i < ents.size(); ++i) CHECK(enc.attention[i] == doctest::Approx(alpha[i]).epsilon(1e-12));
    for (std::size_t j = 0; j < p.dim(); ++j) {
        const double want = alpha[0] * H(3, j) + alpha[1] * H(1, j);
        CHECK(enc.vector[j] == doctest::Approx(want).epsilon(1e-12));
    }

    std::vector<double> manual(p.bias_map.cols(), 0.0);
    for (std::size_t e = 0; e < H.rows(); ++e) {
        const double s = dot(enc.vector, H.row(e));
        for (std::size_t r = 0; r < manual.size(); ++r) manual[r] += s * p.bias_map(e, r);
    }
    const auto b = knowledge_bias(ents, H, p);
    for (std::size_t r = 0; r < manual.size(); ++r) CHECK(b[r] == doctest::Approx(manual[r]).epsilon(1e-12));
}

TEST_CASE("empty entity set gives a zero bias and no attention") {
    std::mt19937_64 rng(1);
    const auto kg = checks::tiny_graph();
    const auto p = KGParams::init(kg, KGShape{4, 3, 1}, 4, rng);
    const Matrix H = rgcn_forward(kg, p);
    const auto b = knowledge_bias({}, H, p);
    CHECK(b.size() == 4);
    for (double x : b) CHECK(x == 0.0);
    CHECK_THROWS_AS(attend_user({}, H, p), std::invalid_argument);
}

TEST_CASE("kg loss with equal scores is log of the entity count") {
    std::mt19937_64 rng(4);
    const auto kg = checks::tiny_graph();
    const auto p = KGParams::init(kg, KGShape{3, 2, 1}, 2, rng);
    const Matrix H(4, 3, 0.5);
    const std::vector<EntityId> ents{0, 1};
    for (EntityId gold = 0; gold < 4; ++gold) CHECK(kg_loss(ents, H, p, gold) == doctest::Approx(std::log(4.0)));
    CHECK_THROWS_AS(kg_loss(ents, H, p, 9), std::invalid_argument);
}

TEST_CASE("entity ranking breaks ties by ascending id") {
    const std::vector<double> s{1.0, 2.0, 2.0, 0.0, 2.0};
    CHECK(rank_by_scores(s) == std::vector<EntityId>{1, 2, 4, 0, 3});
}

TEST_CASE("knowledge path gradients") {
    for (std::size_t layers : {1u, 2u}) {
        const auto r = checks::kg_grad_check(11 + layers, layers);
        INFO("worst " << r.worst_tensor << "[" << r.worst_index << "] analytic " << r.worst_analytic << " numeric "
                      << r.worst_numeric);
        CHECK(r.max_rel_error < 1e-4);
        CHECK(r.checked > 0);
    }
}

TEST_CASE("bias path gradients") {
    std::mt19937_64 rng(21);
    const auto kg = checks::tiny_graph();
    KGParams p = KGParams::init(kg, KGShape{4, 3, 2}, 3, rng);
    fill_normal(p.bias_map, rng, 1.0);
    const std::vector<EntityId> ents{1, 3};
    const std::vector<double> w{0.3, -1.2, 0.7};  // L = w . b_u

    KGParams g = p.zeros_like();
    RgcnCache cache;
    const Matrix H = rgcn_forward(kg, p, &cache);
    const auto enc = attend_user(ents, H, p);
    std::vector<double> d_vec(p.dim(), 0.0);
    Matrix dH(H.rows(), H.cols());
    bias_backward(enc.vector, H, p, w, d_vec, dH, g);
    attend_user_backward(ents, H, p, enc, d_vec, dH, g);
    rgcn_backward(kg, p, cache, dH, g);

    auto loss = [&] {
        const auto b = knowledge_bias(ents, rgcn_forward(kg, p), p);
        return dot(b, w);
    };
    const auto r = grad_check(loss, p.tensors(), g.tensors());
    CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("parameter validation") {
    std::mt19937_64 rng(1);
    const auto kg = checks::tiny_graph();
    auto p = KGParams::init(kg, KGShape{4, 3, 1}, 2, rng);
    CHECK_NOTHROW(p.validate(kg));
    p.base = Matrix(3, 4);
    CHECK_THROWS_AS(p.validate(kg), std::invalid_argument);
    CHECK_THROWS_AS(KGParams::init(kg, KGShape{0, 3, 1}, 2, rng), std::invalid_argument);
}
