#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "recindial/corpus.hpp"
#include "recindial/tensor.hpp"
#include "recindial/vocabulary.hpp"

namespace recindial {

struct ModelConfig {
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t width = 128;
    std::size_t ff_width = 512;
    std::size_t max_position = 336;
    std::size_t general_size = 0;         // |V_G|
    std::size_t item_partition_size = 0;  // |V_R|
    double dropout = 0.0;
    std::uint64_t seed = 1;

    std::size_t vocab_size() const noexcept { return general_size + item_partition_size; }
    /// Throws std::invalid_argument when the configuration is unusable.
    void validate() const;
};

/// Produces pre-mask, pre-bias logits over V for the next position after a prefix.
class ScoringCursor {
public:
    virtual ~ScoringCursor() = default;
    virtual std::span<const double> logits() const = 0;
    virtual void push(TokenId token) = 0;
    virtual std::unique_ptr<ScoringCursor> clone() const = 0;
    virtual std::size_t length() const = 0;
};

/// Language-model interface used by the decoder. Implementations must be deterministic for a fixed
/// prefix. An external pretrained model can be plugged in by implementing `score`.
class LogitScorer {
public:
    virtual ~LogitScorer() = default;
    virtual std::size_t vocab_size() const = 0;
    virtual std::vector<double> score(std::span<const TokenId> prefix) const = 0;
    /// Longest prefix the scorer accepts; generation stops before exceeding it.
    virtual std::size_t max_length() const { return static_cast<std::size_t>(-1); }
    /// Incremental scoring. The default re-scores the whole prefix on every push.
    virtual std::unique_ptr<ScoringCursor> start(std::span<const TokenId> prefix) const;
};

struct LayerParams {
    Matrix ln1_g, ln1_b;
    Matrix w_qkv, b_qkv;   // d x 3d, 1 x 3d
    Matrix w_out, b_out;   // d x d
    Matrix ln2_g, ln2_b;
    Matrix w_fc, b_fc;     // d x ff
    Matrix w_proj, b_proj; // ff x d
};

struct LMParams {
    Matrix tok_emb;  // |V| x d; also the output projection
    Matrix pos_emb;  // max_position x d
    std::vector<LayerParams> layers;
    Matrix lnf_g, lnf_b;

    LMParams zeros_like() const;
    TensorList tensors();
};

struct LayerCache {
    Matrix x_in;
    Matrix ln1_hat;
    std::vector<double> ln1_rstd;
    Matrix a;
    Matrix qkv;
    std::vector<Matrix> probs;  // per head, T x T (upper triangle zero)
    Matrix y;
    Matrix attn_drop;
    Matrix x_mid;
    Matrix ln2_hat;
    std::vector<double> ln2_rstd;
    Matrix m;
    Matrix fc_pre;
    Matrix fc_act;
    Matrix mlp_drop;
};

struct ForwardCache {
    std::vector<TokenId> tokens;
    Matrix emb_drop;
    std::vector<LayerCache> layers;
    Matrix lnf_hat;
    std::vector<double> lnf_rstd;
    Matrix hidden;  // final normalized hidden states h_L
};

/// Small pre-norm decoder-only transformer with tied input/output embeddings.
class TransformerLM final : public LogitScorer {
public:
    TransformerLM(const ModelConfig& config, std::mt19937_64& rng);
    TransformerLM(const ModelConfig& config, LMParams params);

    const ModelConfig& config() const noexcept { return config_; }
    const LMParams& params() const noexcept { return params_; }
    LMParams& params() noexcept { return params_; }

    std::size_t vocab_size() const override { return config_.vocab_size(); }
    std::size_t max_length() const override { return config_.max_position; }
    std::vector<double> score(std::span<const TokenId> prefix) const override;
    std::unique_ptr<ScoringCursor> start(std::span<const TokenId> prefix) const override;

    /// Logits for every position (T x |V|). Throws std::length_error past max_position.
    Matrix forward_logits(std::span<const TokenId> tokens) const;

    /// Final hidden states (T x d). With a cache the activations needed for backward are kept; with a
    /// dropout generator, dropout is applied at the configured rate.
    Matrix forward_hidden(std::span<const TokenId> tokens, ForwardCache* cache = nullptr,
                          std::mt19937_64* dropout_rng = nullptr) const;
    /// Accumulates parameter gradients given dL/dh_L (T x d). Gradients through the tied output
    /// projection must be added to grads.tok_emb by the caller.
    void backward_hidden(const ForwardCache& cache, const Matrix& d_hidden, LMParams& grads) const;

private:
    friend class TransformerCursor;
    ModelConfig config_;
    LMParams params_;
};

/// Vocabulary-pointer state machine over the gold or generated token stream.
struct PointerState {
    bool in_slot = false;  // I_vp
};

/// Additive mask over V: 0 on the partition selected by I_vp, -infinity elsewhere.
std::vector<double> step_mask(bool in_slot, const Vocabulary& vocab);

struct LossOptions {
    bool vocab_pointer = true;  // apply the partition mask
    double weight = 1.0;        // gradient scale
};

/// Masked next-token distribution: logits + bias on V_R + mask, softmaxed. `logits` has |V| entries,
/// `bias` has |V_R| entries or is empty.
std::vector<double> masked_distribution(std::span<const double> logits, std::span<const double> bias, bool in_slot,
                                        const Vocabulary& vocab, bool vocab_pointer = true);

/// Checks [RecS]/[RecE] balance of a response and returns I_vp before each position.
/// Throws DataError on unbalanced markers or tokens outside their partition.
std::vector<bool> gold_pointer_states(std::span<const TokenId> response, const Vocabulary& vocab,
                                      bool vocab_pointer = true);

/// Teacher-forced generation loss: sum over response tokens of -log p(w_i), with the pointer mask
/// driven by the gold markers and the knowledge bias added to V_R logits. Context tokens carry no loss.
double gen_loss(const LogitScorer& model, const Vocabulary& vocab, const ContextResponsePair& pair,
                std::span<const double> bias, const LossOptions& options = {});

/// Same loss for the built-in model, accumulating parameter gradients and dL/db_u.
double gen_loss_backward(const TransformerLM& model, const Vocabulary& vocab, const ContextResponsePair& pair,
                         std::span<const double> bias, const LossOptions& options, LMParams& grads,
                         std::span<double> d_bias, std::mt19937_64* dropout_rng = nullptr);

/// Scored response-token count (the [EOS] included, padding excluded).
std::size_t response_token_count(const ContextResponsePair& pair, const Vocabulary& vocab);

using BiasProvider = std::function<std::vector<double>(const ContextResponsePair&)>;

/// exp(total masked NLL / total response tokens). Throws std::invalid_argument on an empty set.
double perplexity(const LogitScorer& model, const Vocabulary& vocab, std::span<const ContextResponsePair> pairs,
                  const BiasProvider& bias = {}, const LossOptions& options = {});

}  // namespace recindial
