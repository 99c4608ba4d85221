#include "recindial/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace recindial {

using nlohmann::json;

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0) || batch_size == 0 || grad_accum == 0 || epochs == 0) {
        throw std::invalid_argument("TrainConfig: learning rate, batch size, accumulation and epochs must be positive");
    }
    if (gen_weight < 0.0 || kg_weight < 0.0) throw std::invalid_argument("TrainConfig: loss weights must be non-negative");
}

TrainConfig TrainConfig::from_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

TrainConfig TrainConfig::from_json_text(std::string_view text) {
    const json j = json::parse(text);
    if (!j.is_object()) throw std::invalid_argument("training config must be a JSON object");
    TrainConfig c;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const auto& k = it.key();
        const auto& v = it.value();
        if (k == "learning_rate") c.learning_rate = v;
        else if (k == "batch_size") c.batch_size = v;
        else if (k == "grad_accum") c.grad_accum = v;
        else if (k == "warmup_steps") c.warmup_steps = v;
        else if (k == "epochs") c.epochs = v;
        else if (k == "seed") c.seed = v;
        else if (k == "gen_weight") c.gen_weight = v;
        else if (k == "kg_weight") c.kg_weight = v;
        else if (k == "clip_norm") c.clip_norm = v;
        else if (k == "beta1") c.beta1 = v;
        else if (k == "beta2") c.beta2 = v;
        else if (k == "adam_eps") c.adam_eps = v;
        else if (k == "restore_best") c.restore_best = v;
        else throw std::invalid_argument("unknown training config key: " + k);
    }
    c.validate();
    return c;
}

std::string TrainConfig::to_json_text() const {
    return json{{"learning_rate", learning_rate}, {"batch_size", batch_size}, {"grad_accum", grad_accum},
                {"warmup_steps", warmup_steps},   {"epochs", epochs},         {"seed", seed},
                {"gen_weight", gen_weight},       {"kg_weight", kg_weight},   {"clip_norm", clip_norm},
                {"beta1", beta1},                 {"beta2", beta2},           {"adam_eps", adam_eps},
                {"restore_best", restore_best}}
        .dump();
}

std::string TrainReport::to_json() const {
    json ep = json::array();
    for (const auto& e : epochs) {
        ep.push_back({{"epoch", e.epoch}, {"train_gen", e.train_gen}, {"train_kg", e.train_kg},
                      {"train_ppl", e.train_ppl}, {"valid_gen", e.valid_gen}, {"valid_kg", e.valid_kg},
                      {"valid_ppl", e.valid_ppl}, {"optimizer_steps", e.optimizer_steps}});
    }
    return json{{"epochs", ep}, {"best_epoch", best_epoch}, {"best_valid_ppl", best_valid_ppl},
                {"skipped_pairs", skipped_pairs}}.dump(2);
}

// ---------------------------------------------------------------------------

std::vector<EntityId> kg_targets(const ContextResponsePair& pair, const EntityLinker& linker) {
    std::vector<EntityId> out;
    if (pair.entity_set.empty()) return out;
    for (const auto& item : pair.gold_items) {
        if (auto e = linker.item_entity(item)) out.push_back(*e);
    }
    return out;
}

ModelGrads ModelGrads::zeros_for(const RecModel& model) {
    return ModelGrads{model.lm.params().zeros_like(), model.kg.zeros_like()};
}

void ModelGrads::set_zero() {
    for (auto& t : lm.tensors()) t.value->set_zero();
    for (auto& t : kg.tensors()) t.value->set_zero();
}

TensorList ModelGrads::tensors(const Variant& variant) {
    TensorList out = lm.tensors();
    if (variant.knowledge) {
        auto k = kg.tensors();
        out.insert(out.end(), k.begin(), k.end());
    }
    return out;
}

namespace {

BatchLoss batch_loss_impl(const RecModel& model, const Vocabulary& vocab, const KnowledgeGraph& graph,
                          const EntityLinker& linker, std::span<const ContextResponsePair* const> batch,
                          double gen_weight, double kg_weight, ModelGrads* grads, double grad_scale,
                          std::mt19937_64* dropout_rng) {
    BatchLoss out;
    const bool use_kg = model.variant.knowledge;
    Matrix H;
    RgcnCache cache;
    Matrix dH;
    if (use_kg) {
        H = rgcn_forward(graph, model.kg, grads ? &cache : nullptr);
        if (grads) dH = Matrix(H.rows(), H.cols());
    }
    const LossOptions gen_opts{model.variant.vocab_pointer, gen_weight * grad_scale};
    for (const ContextResponsePair* pair : batch) {
        out.tokens += response_token_count(*pair, vocab);
        const bool has_user = use_kg && !pair->entity_set.empty();
        UserEncoding enc;
        std::vector<double> bias;
        if (use_kg) {
            bias.assign(vocab.item_partition_size(), 0.0);
            if (has_user) {
                enc = attend_user(pair->entity_set, H, model.kg);
                bias = bias_from_vector(enc.vector, H, model.kg);
            }
        }
        const auto targets = has_user ? kg_targets(*pair, linker) : std::vector<EntityId>{};
        out.kg_instances += targets.size();
        if (!grads) {
            out.gen += gen_loss(model.lm, vocab, *pair, bias, gen_opts);
            for (EntityId g : targets) {
                auto s = entity_scores(enc.vector, H);
                log_softmax_inplace(s);
                out.kg -= s[static_cast<std::size_t>(g)];
            }
            continue;
        }
        std::vector<double> d_bias(use_kg ? vocab.item_partition_size() : 0, 0.0);
        out.gen += gen_loss_backward(model.lm, vocab, *pair, bias, gen_opts, grads->lm, d_bias, dropout_rng);
        if (!has_user) continue;
        std::vector<double> d_vec(H.cols(), 0.0);
        bias_backward(enc.vector, H, model.kg, d_bias, d_vec, dH, grads->kg);
        for (EntityId g : targets) out.kg += kg_loss_backward(enc.vector, H, g, d_vec, dH, kg_weight * grad_scale);
        attend_user_backward(pair->entity_set, H, model.kg, enc, d_vec, dH, grads->kg);
    }
    if (grads && use_kg) rgcn_backward(graph, model.kg, cache, dH, grads->kg);
    return out;
}

double global_norm(const TensorList& ts) {
    double s = 0.0;
    for (const auto& t : ts)
        for (double v : t.value->flat()) s += v * v;
    return std::sqrt(s);
}

}  // namespace

BatchLoss batch_loss(const RecModel& model, const Vocabulary& vocab, const KnowledgeGraph& graph,
                     const EntityLinker& linker, std::span<const ContextResponsePair> batch, double gen_weight,
                     double kg_weight, ModelGrads* grads, double grad_scale, std::mt19937_64* dropout_rng) {
    std::vector<const ContextResponsePair*> ptrs;
    for (const auto& p : batch) ptrs.push_back(&p);
    return batch_loss_impl(model, vocab, graph, linker, ptrs, gen_weight, kg_weight, grads, grad_scale, dropout_rng);
}

// ---------------------------------------------------------------------------

AdamOptimizer::AdamOptimizer(TensorList params, const TrainConfig& config) : params_(std::move(params)), cfg_(config) {
    for (const auto& p : params_) {
        m_.emplace_back(p.value->rows(), p.value->cols());
        v_.emplace_back(p.value->rows(), p.value->cols());
    }
}

double AdamOptimizer::step(const TensorList& grads) {
    if (grads.size() != params_.size()) throw std::invalid_argument("AdamOptimizer: gradient list mismatch");
    ++t_;
    double lr = cfg_.learning_rate;
    if (cfg_.warmup_steps > 0) lr *= std::min(1.0, static_cast<double>(t_) / static_cast<double>(cfg_.warmup_steps));
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    double clip = 1.0;
    if (cfg_.clip_norm > 0.0) {
        const double n = global_norm(grads);
        if (n > cfg_.clip_norm) clip = cfg_.clip_norm / n;
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto p = params_[i].value->flat();
        const auto g = grads[i].value->flat();
        auto m = m_[i].flat();
        auto v = v_[i].flat();
        if (g.size() != p.size()) throw std::invalid_argument("AdamOptimizer: shape mismatch in " + params_[i].name);
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double gj = g[j] * clip;
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
            p[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.adam_eps);
        }
    }
    return lr;
}

// ---------------------------------------------------------------------------

EvalLoss evaluate_loss(const RecModel& model, const Vocabulary& vocab, const KnowledgeGraph& graph,
                       const EntityLinker& linker, std::span<const ContextResponsePair> pairs) {
    if (pairs.empty()) throw std::invalid_argument("evaluate_loss: empty pair set");
    const auto l = batch_loss(model, vocab, graph, linker, pairs, 1.0, 1.0);
    EvalLoss e;
    e.gen_per_token = l.gen / static_cast<double>(l.tokens);
    e.kg_per_instance = l.kg_instances ? l.kg / static_cast<double>(l.kg_instances) : 0.0;
    e.ppl = std::exp(e.gen_per_token);
    return e;
}

TrainReport train(RecModel& model, const Vocabulary& vocab, const KnowledgeGraph& graph, const EntityLinker& linker,
                  std::span<const ContextResponsePair> train_pairs, std::span<const ContextResponsePair> valid_pairs,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    if (train_pairs.empty()) throw std::invalid_argument("train: no training pairs");
    std::mt19937_64 order_rng(config.seed);
    std::mt19937_64 dropout_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    ModelGrads grads = ModelGrads::zeros_for(model);
    AdamOptimizer opt(model.trainable(), config);
    TensorList grad_list = grads.tensors(model.variant);

    std::vector<std::size_t> order(train_pairs.size());
    std::iota(order.begin(), order.end(), 0);
    TrainReport report;
    std::vector<Matrix> best;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        for (std::size_t i = order.size() - 1; i > 0; --i) {
            std::swap(order[i], order[static_cast<std::size_t>(order_rng() % (i + 1))]);
        }
        EpochStats st;
        st.epoch = epoch;
        double gen_sum = 0.0, kg_sum = 0.0;
        std::size_t tokens = 0, kg_n = 0, accum = 0;
        const std::size_t n_batches = (order.size() + config.batch_size - 1) / config.batch_size;
        for (std::size_t b = 0; b < n_batches; ++b) {
            std::vector<const ContextResponsePair*> batch;
            for (std::size_t i = b * config.batch_size; i < std::min(order.size(), (b + 1) * config.batch_size); ++i) {
                batch.push_back(&train_pairs[order[i]]);
            }
            const std::size_t group = std::min(config.grad_accum, n_batches - (b / config.grad_accum) * config.grad_accum);
            const double scale = 1.0 / static_cast<double>(batch.size() * group);
            BatchLoss l;
            try {
                l = batch_loss_impl(model, vocab, graph, linker, batch, config.gen_weight, config.kg_weight, &grads, scale,
                                    &dropout_rng);
            } catch (const std::domain_error& e) {
                std::ostringstream msg;
                msg << "non-finite activations at epoch " << epoch << " batch " << b << " (" << e.what()
                    << ", optimizer step " << opt.steps() << ")";
                throw TrainingDiverged(msg.str());
            }
            if (!std::isfinite(l.gen) || !std::isfinite(l.kg)) {
                std::ostringstream msg;
                msg << "non-finite loss at epoch " << epoch << " batch " << b << " (gen=" << l.gen << ", kg=" << l.kg
                    << ", optimizer step " << opt.steps() << ")";
                throw TrainingDiverged(msg.str());
            }
            gen_sum += l.gen;
            kg_sum += l.kg;
            tokens += l.tokens;
            kg_n += l.kg_instances;
            if (++accum == group) {
                opt.step(grad_list);
                grads.set_zero();
                accum = 0;
            }
        }
        st.optimizer_steps = opt.steps();
        st.train_gen = gen_sum / static_cast<double>(tokens);
        st.train_kg = kg_n ? kg_sum / static_cast<double>(kg_n) : 0.0;
        st.train_ppl = std::exp(st.train_gen);
        if (!valid_pairs.empty()) {
            const auto v = evaluate_loss(model, vocab, graph, linker, valid_pairs);
            st.valid_gen = v.gen_per_token;
            st.valid_kg = v.kg_per_instance;
            st.valid_ppl = v.ppl;
        } else {
            st.valid_gen = st.train_gen;
            st.valid_kg = st.train_kg;
            st.valid_ppl = st.train_ppl;
        }
        report.epochs.push_back(st);
        if (report.best_epoch == 0 || st.valid_ppl < report.best_valid_ppl) {
            report.best_epoch = epoch;
            report.best_valid_ppl = st.valid_ppl;
            if (config.restore_best) {
                best.clear();
                for (const auto& t : model.trainable()) best.push_back(*t.value);
            }
        }
        if (on_epoch) on_epoch(st);
    }
    if (config.restore_best && !best.empty()) {
        auto ts = model.trainable();
        for (std::size_t i = 0; i < ts.size(); ++i) *ts[i].value = best[i];
    }
    return report;
}

// ---------------------------------------------------------------------------

GradCheckResult grad_check(const std::function<double()>& loss, const TensorList& params, const TensorList& analytic,
                           double eps, double floor) {
    if (params.size() != analytic.size()) throw std::invalid_argument("grad_check: tensor list mismatch");
    GradCheckResult r;
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto p = params[t].value->flat();
        const auto a = analytic[t].value->flat();
        if (p.size() != a.size()) throw std::invalid_argument("grad_check: shape mismatch in " + params[t].name);
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double orig = p[i];
            auto at = [&](double x) {
                p[i] = x;
                return loss();
            };
            const double d1 = at(orig + eps) - at(orig - eps);
            const double d2 = at(orig + 2.0 * eps) - at(orig - 2.0 * eps);
            p[i] = orig;
            const double num = (8.0 * d1 - d2) / (12.0 * eps);
            const double denom = std::max({std::abs(a[i]), std::abs(num), floor});
            const double rel = std::abs(a[i] - num) / denom;
            ++r.checked;
            if (rel > r.max_rel_error || r.worst_tensor.empty()) {
                r.max_rel_error = std::max(rel, r.max_rel_error);
                if (rel >= r.max_rel_error) {
                    r.worst_tensor = params[t].name;
                    r.worst_index = i;
                    r.worst_analytic = a[i];
                    r.worst_numeric = num;
                }
            }
        }
    }
    return r;
}

}  // namespace recindial
