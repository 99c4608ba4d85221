#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "recindial/corpus.hpp"
#include "recindial/kgraph.hpp"
#include "recindial/model.hpp"

namespace recindial {

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t batch_size = 16;
    std::size_t grad_accum = 1;
    std::size_t warmup_steps = 50;
    std::size_t epochs = 3;
    std::uint64_t seed = 7;
    double gen_weight = 1.0;
    double kg_weight = 1.0;
    double clip_norm = 1.0;  // global gradient norm; 0 disables
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    bool restore_best = true;  // reload the parameters of the best validation epoch at the end

    void validate() const;
    /// Keys as in the struct; unknown keys are rejected.
    static TrainConfig from_json_file(const std::filesystem::path& path);
    static TrainConfig from_json_text(std::string_view text);
    std::string to_json_text() const;
};

struct EpochStats {
    std::size_t epoch = 0;
    double train_gen = 0.0;   // masked NLL per response token
    double train_kg = 0.0;    // NLL per knowledge instance
    double train_ppl = 0.0;
    double valid_gen = 0.0;
    double valid_kg = 0.0;
    double valid_ppl = 0.0;
    std::size_t optimizer_steps = 0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    std::size_t best_epoch = 0;
    double best_valid_ppl = 0.0;
    std::size_t skipped_pairs = 0;  // pairs longer than the model's position limit

    std::string to_json() const;
};

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Knowledge-loss instances of a pair: one gold entity per gold item linked into the graph, and only
/// when the context entity set is non-empty.
std::vector<EntityId> kg_targets(const ContextResponsePair& pair, const EntityLinker& linker);

struct BatchLoss {
    double gen = 0.0;            // summed over response tokens
    double kg = 0.0;             // summed over knowledge instances
    std::size_t tokens = 0;
    std::size_t kg_instances = 0;
    double joint(double gen_weight = 1.0, double kg_weight = 1.0) const { return gen_weight * gen + kg_weight * kg; }
};

/// Gradient buffers matching a RecModel.
struct ModelGrads {
    LMParams lm;
    KGParams kg;

    static ModelGrads zeros_for(const RecModel& model);
    void set_zero();
    /// Same order as RecModel::trainable.
    TensorList tensors(const Variant& variant);
};

/// Joint objective over a batch. With `grads`, gradients of gen_weight*L_gen + kg_weight*L_kg, scaled by
/// `grad_scale`, are accumulated.
BatchLoss batch_loss(const RecModel& model, const Vocabulary& vocab, const KnowledgeGraph& graph,
                     const EntityLinker& linker, std::span<const ContextResponsePair> batch, double gen_weight,
                     double kg_weight, ModelGrads* grads = nullptr, double grad_scale = 1.0,
                     std::mt19937_64* dropout_rng = nullptr);

/// Adam with linear warm-up.
class AdamOptimizer {
public:
    AdamOptimizer(TensorList params, const TrainConfig& config);
    /// Applies one update from `grads` (same order and shapes as the parameters). Returns the learning rate used.
    double step(const TensorList& grads);
    std::size_t steps() const noexcept { return t_; }

private:
    TensorList params_;
    std::vector<Matrix> m_, v_;
    TrainConfig cfg_;
    std::size_t t_ = 0;
};

struct EvalLoss {
    double gen_per_token = 0.0;
    double kg_per_instance = 0.0;
    double ppl = 0.0;
};
EvalLoss evaluate_loss(const RecModel& model, const Vocabulary& vocab, const KnowledgeGraph& graph,
                       const EntityLinker& linker, std::span<const ContextResponsePair> pairs);

using EpochCallback = std::function<void(const EpochStats&)>;

/// Joint end-to-end training. Deterministic under config.seed. Throws TrainingDiverged on a non-finite loss.
TrainReport train(RecModel& model, const Vocabulary& vocab, const KnowledgeGraph& graph, const EntityLinker& linker,
                  std::span<const ContextResponsePair> train_pairs, std::span<const ContextResponsePair> valid_pairs,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_tensor;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t checked = 0;
};

/// Fourth-order central differences (8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h against analytic
/// gradients, entry by entry.
/// Relative error is |a - n| / max(|a|, |n|, floor). `loss` must read the tensors in `params`.
GradCheckResult grad_check(const std::function<double()>& loss, const TensorList& params, const TensorList& analytic,
                           double eps = 1e-4, double floor = 1e-6);

}  // namespace recindial
