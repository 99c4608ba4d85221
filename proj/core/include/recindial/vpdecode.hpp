#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "recindial/seqmodel.hpp"
#include "recindial/vocabulary.hpp"

namespace recindial {

/// A decoder tried to emit a token outside the active vocabulary partition.
class AutomatonViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

struct SlotDistribution {
    std::size_t position = 0;       // index in `emitted` of the token drawn from this distribution
    std::vector<double> probs;      // over V_R, [RecE] at index 0
};

struct GenerationState {
    bool in_slot = false;  // I_vp
    std::vector<TokenId> emitted;
    std::vector<SlotDistribution> slots;
    std::size_t step = 0;
    std::size_t max_steps = 64;  // N_max
    bool finished = false;
    bool truncated_slot = false;  // an open slot was closed implicitly at N_max
};

/// Applies one emitted token to the pointer automaton. [RecS] opens a slot, [RecE] closes it, [EOS]
/// finishes. With `vocab_pointer` set, a token outside the active partition throws AutomatonViolation.
GenerationState advance(GenerationState state, TokenId token, const Vocabulary& vocab, bool vocab_pointer = true);

struct BeamHypothesis {
    GenerationState state;
    double log_prob = 0.0;
    bool finished = false;
    double score = 0.0;  // length-normalized log_prob
};

struct RankedItem {
    std::string item_id;
    double prob = 0.0;
};

struct RecommendationResult {
    std::vector<TokenId> response_tokens;  // emitted tokens without the trailing [EOS]
    std::vector<RankedItem> items;
    bool truncated_slot = false;
    double log_prob = 0.0;
};

struct DecodeOptions {
    std::size_t max_steps = 64;     // N_max
    std::size_t beam_width = 10;
    double length_penalty = 1.0;    // score = log_prob / length^penalty
    std::size_t top_k = 10;
    bool vocab_pointer = true;      // false decodes over the whole vocabulary (ablation)
};

/// Next-step log-probabilities: log softmax(logits + bias on V_R + mask).
std::vector<double> next_log_probs(std::span<const double> logits, std::span<const double> bias,
                                   const GenerationState& state, const Vocabulary& vocab, bool vocab_pointer);

/// Greedy vocabulary-pointer decoding. Ties pick the smallest token id.
BeamHypothesis greedy_decode(std::span<const TokenId> prefix, const LogitScorer& scorer, std::span<const double> bias,
                              const Vocabulary& vocab, const DecodeOptions& options);

/// Beam search over masked, biased log-probabilities. Returns finished hypotheses best first; equal
/// scores are ordered by their token sequences lexicographically.
std::vector<BeamHypothesis> beam_generate(std::span<const TokenId> prefix, const LogitScorer& scorer,
                                          std::span<const double> bias, const Vocabulary& vocab,
                                          const DecodeOptions& options);

/// Top-k items from the first slot distribution, [RecE] excluded, highest probability first
/// (ties by token id). Empty when the response opened no slot.
std::vector<RankedItem> extract_topk_items(const GenerationState& state, std::size_t k, const Vocabulary& vocab);

RecommendationResult to_result(const GenerationState& state, double log_prob, std::size_t k, const Vocabulary& vocab);

RecommendationResult greedy_generate(std::span<const TokenId> prefix, const LogitScorer& scorer,
                                     std::span<const double> bias, const Vocabulary& vocab,
                                     const DecodeOptions& options);

/// Beam search and top-k extraction from the best hypothesis.
RecommendationResult recommend(std::span<const TokenId> prefix, const LogitScorer& scorer, std::span<const double> bias,
                               const Vocabulary& vocab, const DecodeOptions& options);

}  // namespace recindial
