#include "recindial/kgraph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace recindial {

KnowledgeGraph::KnowledgeGraph(std::size_t entity_count, std::size_t relation_count, std::vector<Triple> triples)
    : triples_(std::move(triples)) {
    for (std::size_t i = 0; i < entity_count; ++i) entity_names_.push_back(std::to_string(i));
    for (std::size_t i = 0; i < relation_count; ++i) relation_names_.push_back(std::to_string(i));
    build_index();
}

KnowledgeGraph::KnowledgeGraph(std::vector<std::string> entity_names, std::vector<std::string> relation_names,
                               std::vector<Triple> triples)
    : entity_names_(std::move(entity_names)), relation_names_(std::move(relation_names)), triples_(std::move(triples)) {
    build_index();
}

void KnowledgeGraph::build_index() {
    entity_index_.clear();
    for (std::size_t i = 0; i < entity_names_.size(); ++i) {
        if (!entity_index_.emplace(entity_names_[i], static_cast<EntityId>(i)).second) {
            throw DataError("duplicate entity name: " + entity_names_[i]);
        }
    }
    const std::size_t E = entity_names_.size(), R = relation_names_.size();
    neighbors_.assign(E * R, {});
    for (const auto& t : triples_) {
        if (t.head < 0 || t.tail < 0 || static_cast<std::size_t>(t.head) >= E || static_cast<std::size_t>(t.tail) >= E ||
            t.relation < 0 || static_cast<std::size_t>(t.relation) >= R) {
            throw DataError("triple references an unknown entity or relation");
        }
        neighbors_[static_cast<std::size_t>(t.tail) * R + static_cast<std::size_t>(t.relation)].push_back(t.head);
    }
}

std::span<const EntityId> KnowledgeGraph::in_neighbors(EntityId e, RelationId r) const {
    return neighbors_.at(static_cast<std::size_t>(e) * relation_count() + static_cast<std::size_t>(r));
}

KnowledgeGraph KnowledgeGraph::load(const std::filesystem::path& triples_path,
                                    const std::filesystem::path& entity_list) {
    std::vector<std::string> entities;
    std::unordered_map<std::string, EntityId> eidx;
    const bool fixed = !entity_list.empty();
    if (fixed) {
        std::ifstream in(entity_list);
        if (!in) throw std::runtime_error("cannot open entity list: " + entity_list.string());
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            eidx.emplace(line, static_cast<EntityId>(entities.size()));
            entities.push_back(line);
        }
    }
    std::ifstream in(triples_path);
    if (!in) throw std::runtime_error("cannot open triples file: " + triples_path.string());
    std::vector<std::string> relations;
    std::unordered_map<std::string, RelationId> ridx;
    std::vector<Triple> triples;
    std::string line;
    std::size_t lineno = 0;
    auto entity = [&](const std::string& name) -> EntityId {
        if (auto it = eidx.find(name); it != eidx.end()) return it->second;
        if (fixed) {
            throw DataError(triples_path.string() + ":" + std::to_string(lineno) + ": entity not in list: " + name);
        }
        const auto id = static_cast<EntityId>(entities.size());
        eidx.emplace(name, id);
        entities.push_back(name);
        return id;
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line.front() == '#') continue;
        std::istringstream ls(line);
        std::string h, r, t;
        if (!std::getline(ls, h, '\t') || !std::getline(ls, r, '\t') || !std::getline(ls, t, '\t')) {
            throw DataError(triples_path.string() + ":" + std::to_string(lineno) + ": expected head<TAB>relation<TAB>tail");
        }
        if (!t.empty() && t.back() == '\r') t.pop_back();
        RelationId rid;
        if (auto it = ridx.find(r); it != ridx.end()) {
            rid = it->second;
        } else {
            rid = static_cast<RelationId>(relations.size());
            ridx.emplace(r, rid);
            relations.push_back(r);
        }
        const EntityId hid = entity(h);
        triples.push_back({hid, rid, entity(t)});
    }
    return KnowledgeGraph(std::move(entities), std::move(relations), std::move(triples));
}

void KnowledgeGraph::save(const std::filesystem::path& triples_path, const std::filesystem::path& entity_list) const {
    std::ofstream t(triples_path);
    if (!t) throw std::runtime_error("cannot write triples: " + triples_path.string());
    for (const auto& tr : triples_) {
        t << entity_names_[static_cast<std::size_t>(tr.head)] << '\t'
          << relation_names_[static_cast<std::size_t>(tr.relation)] << '\t'
          << entity_names_[static_cast<std::size_t>(tr.tail)] << '\n';
    }
    std::ofstream e(entity_list);
    if (!e) throw std::runtime_error("cannot write entity list: " + entity_list.string());
    for (const auto& n : entity_names_) e << n << '\n';
}

// ---------------------------------------------------------------------------

KGParams KGParams::init(const KnowledgeGraph& kg, const KGShape& shape, std::size_t item_partition_size,
                        std::mt19937_64& rng) {
    if (shape.layers < 1 || shape.dim == 0 || shape.attn_dim == 0) {
        throw std::invalid_argument("KGParams: layers >= 1 and positive dimensions required");
    }
    const double s = 1.0 / std::sqrt(static_cast<double>(shape.dim));
    KGParams p;
    p.base = Matrix(kg.entity_count(), shape.dim);
    fill_normal(p.base, rng, 1.0);
    for (std::size_t l = 0; l < shape.layers; ++l) {
        std::vector<Matrix> rel;
        for (std::size_t r = 0; r < kg.relation_count(); ++r) {
            Matrix w(shape.dim, shape.dim);
            fill_normal(w, rng, s);
            rel.push_back(std::move(w));
        }
        p.relation.push_back(std::move(rel));
        Matrix w(shape.dim, shape.dim);
        fill_normal(w, rng, s);
        p.self.push_back(std::move(w));
    }
    p.attn_w1 = Matrix(shape.attn_dim, shape.dim);
    fill_normal(p.attn_w1, rng, s);
    p.attn_w2 = Matrix(1, shape.attn_dim);
    fill_normal(p.attn_w2, rng, 1.0 / std::sqrt(static_cast<double>(shape.attn_dim)));
    p.bias_map = Matrix(kg.entity_count(), item_partition_size);
    fill_normal(p.bias_map, rng, 0.01);
    return p;
}

KGParams KGParams::zeros_like() const {
    KGParams z;
    z.base = Matrix(base.rows(), base.cols());
    for (const auto& layer : relation) {
        std::vector<Matrix> rel;
        for (const auto& w : layer) rel.emplace_back(w.rows(), w.cols());
        z.relation.push_back(std::move(rel));
    }
    for (const auto& w : self) z.self.emplace_back(w.rows(), w.cols());
    z.attn_w1 = Matrix(attn_w1.rows(), attn_w1.cols());
    z.attn_w2 = Matrix(attn_w2.rows(), attn_w2.cols());
    z.bias_map = Matrix(bias_map.rows(), bias_map.cols());
    return z;
}

TensorList KGParams::tensors() {
    TensorList out;
    out.push_back({"kg.base", &base});
    for (std::size_t l = 0; l < relation.size(); ++l) {
        for (std::size_t r = 0; r < relation[l].size(); ++r) {
            out.push_back({"kg.layer" + std::to_string(l) + ".rel" + std::to_string(r), &relation[l][r]});
        }
        out.push_back({"kg.layer" + std::to_string(l) + ".self", &self[l]});
    }
    out.push_back({"kg.attn_w1", &attn_w1});
    out.push_back({"kg.attn_w2", &attn_w2});
    out.push_back({"kg.bias_map", &bias_map});
    return out;
}

void KGParams::validate(const KnowledgeGraph& kg) const {
    const std::size_t d = dim();
    auto fail = [](const std::string& what) { throw std::invalid_argument("KGParams dimension mismatch: " + what); };
    if (layers() < 1) fail("no layers");
    if (base.rows() != kg.entity_count()) fail("base rows != |E|");
    if (relation.size() != layers()) fail("relation layer count");
    for (std::size_t l = 0; l < layers(); ++l) {
        if (relation[l].size() != kg.relation_count()) fail("relation count");
        for (const auto& w : relation[l])
            if (w.rows() != d || w.cols() != d) fail("relation matrix shape");
        if (self[l].rows() != d || self[l].cols() != d) fail("self matrix shape");
    }
    if (attn_w1.cols() != d || attn_w2.rows() != 1 || attn_w2.cols() != attn_w1.rows()) fail("attention shapes");
    if (bias_map.rows() != kg.entity_count()) fail("bias map rows != |E|");
}

// ---------------------------------------------------------------------------

namespace {

/// Mean of in-neighbor rows under relation r.
Matrix aggregate(const KnowledgeGraph& kg, RelationId r, const Matrix& X) {
    Matrix out(X.rows(), X.cols());
    for (std::size_t e = 0; e < X.rows(); ++e) {
        const auto nb = kg.in_neighbors(static_cast<EntityId>(e), r);
        if (nb.empty()) continue;
        const double inv = 1.0 / static_cast<double>(nb.size());
        for (EntityId n : nb) axpy(inv, X.row(static_cast<std::size_t>(n)), out.row(e));
    }
    return out;
}

}  // namespace

Matrix rgcn_forward(const KnowledgeGraph& kg, const KGParams& params, RgcnCache* cache) {
    params.validate(kg);
    Matrix X = params.base;
    if (cache) {
        cache->inputs.clear();
        cache->pre.clear();
    }
    const std::size_t L = params.layers();
    for (std::size_t l = 0; l < L; ++l) {
        Matrix pre;
        matmul_nt(X, params.self[l], pre);
        for (std::size_t r = 0; r < kg.relation_count(); ++r) {
            matmul_nt_acc(aggregate(kg, static_cast<RelationId>(r), X), params.relation[l][r], pre);
        }
        Matrix out = pre;
        if (l + 1 < L) {
            for (double& v : out.flat()) v = std::max(v, 0.0);
        }
        if (cache) {
            cache->inputs.push_back(std::move(X));
            cache->pre.push_back(std::move(pre));
        }
        X = std::move(out);
    }
    return X;
}

void rgcn_backward(const KnowledgeGraph& kg, const KGParams& params, const RgcnCache& cache, const Matrix& d_out,
                   KGParams& grads) {
    const std::size_t L = params.layers();
    Matrix d = d_out;
    for (std::size_t li = L; li-- > 0;) {
        const Matrix& X = cache.inputs[li];
        if (li + 1 < L) {
            const auto pre = cache.pre[li].flat();
            auto dd = d.flat();
            for (std::size_t i = 0; i < dd.size(); ++i)
                if (pre[i] <= 0.0) dd[i] = 0.0;
        }
        Matrix dX(X.rows(), X.cols());
        matmul_tn_acc(d, X, grads.self[li]);
        matmul_acc(d, params.self[li], dX);
        for (std::size_t r = 0; r < kg.relation_count(); ++r) {
            const auto rid = static_cast<RelationId>(r);
            matmul_tn_acc(d, aggregate(kg, rid, X), grads.relation[li][r]);
            Matrix dM(X.rows(), X.cols());
            matmul_acc(d, params.relation[li][r], dM);
            for (std::size_t e = 0; e < X.rows(); ++e) {
                const auto nb = kg.in_neighbors(static_cast<EntityId>(e), rid);
                if (nb.empty()) continue;
                const double inv = 1.0 / static_cast<double>(nb.size());
                for (EntityId n : nb) axpy(inv, dM.row(e), dX.row(static_cast<std::size_t>(n)));
            }
        }
        d = std::move(dX);
    }
    grads.base += d;
}

// ---------------------------------------------------------------------------

UserEncoding attend_user(std::span<const EntityId> entities, const Matrix& H, const KGParams& params) {
    if (entities.empty()) throw std::invalid_argument("attend_user: empty entity set");
    const std::size_t n = entities.size(), d = H.cols(), da = params.attn_dim();
    UserEncoding enc;
    enc.attention.resize(n);
    enc.hidden.assign(n, std::vector<double>(da));
    for (std::size_t i = 0; i < n; ++i) {
        const auto h = H.row(static_cast<std::size_t>(entities[i]));
        double z = 0.0;
        for (std::size_t a = 0; a < da; ++a) {
            const double t = std::tanh(dot(params.attn_w1.row(a), h));
            enc.hidden[i][a] = t;
            z += params.attn_w2(0, a) * t;
        }
        enc.attention[i] = z;
    }
    softmax_inplace(enc.attention);
    enc.vector.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) axpy(enc.attention[i], H.row(static_cast<std::size_t>(entities[i])), enc.vector);
    return enc;
}

void attend_user_backward(std::span<const EntityId> entities, const Matrix& H, const KGParams& params,
                          const UserEncoding& enc, std::span<const double> d_vector, Matrix& dH, KGParams& grads) {
    const std::size_t n = entities.size(), da = params.attn_dim();
    std::vector<double> d_alpha(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = static_cast<std::size_t>(entities[i]);
        d_alpha[i] = dot(d_vector, H.row(row));
        axpy(enc.attention[i], d_vector, dH.row(row));
    }
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += enc.attention[i] * d_alpha[i];
    std::vector<double> d_pre(da);
    for (std::size_t i = 0; i < n; ++i) {
        const double dz = enc.attention[i] * (d_alpha[i] - mean);
        if (dz == 0.0) continue;
        const auto row = static_cast<std::size_t>(entities[i]);
        const auto h = H.row(row);
        for (std::size_t a = 0; a < da; ++a) {
            const double t = enc.hidden[i][a];
            grads.attn_w2(0, a) += dz * t;
            d_pre[a] = dz * params.attn_w2(0, a) * (1.0 - t * t);
            axpy(d_pre[a], h, grads.attn_w1.row(a));
            axpy(d_pre[a], params.attn_w1.row(a), dH.row(row));
        }
    }
}

std::vector<double> entity_scores(std::span<const double> user_vector, const Matrix& H) {
    std::vector<double> s(H.rows());
    for (std::size_t e = 0; e < H.rows(); ++e) s[e] = dot(user_vector, H.row(e));
    return s;
}

std::vector<double> bias_from_vector(std::span<const double> user_vector, const Matrix& H, const KGParams& params) {
    const auto s = entity_scores(user_vector, H);
    std::vector<double> b(params.bias_map.cols(), 0.0);
    for (std::size_t e = 0; e < s.size(); ++e) axpy(s[e], params.bias_map.row(e), b);
    return b;
}

void bias_backward(std::span<const double> user_vector, const Matrix& H, const KGParams& params,
                   std::span<const double> d_bias, std::span<double> d_vector, Matrix& dH, KGParams& grads) {
    const auto s = entity_scores(user_vector, H);
    for (std::size_t e = 0; e < H.rows(); ++e) {
        axpy(s[e], d_bias, grads.bias_map.row(e));
        const double ds = dot(params.bias_map.row(e), d_bias);
        if (ds == 0.0) continue;
        axpy(ds, H.row(e), d_vector);
        axpy(ds, user_vector, dH.row(e));
    }
}

std::vector<double> knowledge_bias(std::span<const EntityId> entities, const Matrix& H, const KGParams& params) {
    if (entities.empty()) return std::vector<double>(params.bias_map.cols(), 0.0);
    return bias_from_vector(attend_user(entities, H, params).vector, H, params);
}

double kg_loss_backward(std::span<const double> user_vector, const Matrix& H, EntityId gold,
                        std::span<double> d_vector, Matrix& dH, double weight) {
    auto p = entity_scores(user_vector, H);
    const auto g = static_cast<std::size_t>(gold);
    if (g >= p.size()) throw std::invalid_argument("kg_loss: gold entity out of range");
    auto logp = p;
    log_softmax_inplace(logp);
    const double loss = -logp[g];
    for (std::size_t e = 0; e < p.size(); ++e) {
        const double ds = weight * (std::exp(logp[e]) - (e == g ? 1.0 : 0.0));
        if (ds == 0.0) continue;
        axpy(ds, H.row(e), d_vector);
        axpy(ds, user_vector, dH.row(e));
    }
    return loss;
}

double kg_loss(std::span<const EntityId> entities, const Matrix& H, const KGParams& params, EntityId gold) {
    const auto enc = attend_user(entities, H, params);
    auto logp = entity_scores(enc.vector, H);
    if (static_cast<std::size_t>(gold) >= logp.size() || gold < 0) {
        throw std::invalid_argument("kg_loss: gold entity out of range");
    }
    log_softmax_inplace(logp);
    return -logp[static_cast<std::size_t>(gold)];
}

std::vector<EntityId> rank_by_scores(std::span<const double> scores) {
    std::vector<EntityId> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](EntityId a, EntityId b) {
        return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
    });
    return order;
}

std::vector<EntityId> rank_entities(std::span<const EntityId> entities, const Matrix& H, const KGParams& params) {
    const auto enc = attend_user(entities, H, params);
    return rank_by_scores(entity_scores(enc.vector, H));
}

}  // namespace recindial
