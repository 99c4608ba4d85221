#include "recindial/vpdecode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace recindial {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Whether the distribution of the current step should be captured as an item-slot distribution when
/// `token` is chosen: the step right after [RecS], or (without the pointer) any step emitting an item.
bool captures(const GenerationState& s, TokenId token, const Vocabulary& vocab, bool vocab_pointer) {
    const bool after_open = !s.emitted.empty() && s.emitted.back() == vocab.rec_start();
    if (after_open) return true;
    return !vocab_pointer && vocab.is_item(token);
}

SlotDistribution slot_from_log_probs(std::span<const double> log_probs, std::size_t position, const Vocabulary& vocab) {
    SlotDistribution slot;
    slot.position = position;
    const std::size_t g = vocab.general_size();
    slot.probs.resize(vocab.item_partition_size());
    double sum = 0.0;
    for (std::size_t i = 0; i < slot.probs.size(); ++i) {
        slot.probs[i] = std::exp(log_probs[g + i]);
        sum += slot.probs[i];
    }
    if (sum > 0.0) {
        for (double& p : slot.probs) p /= sum;
    }
    return slot;
}

void finish(GenerationState& s, const Vocabulary& vocab) {
    s.finished = true;
    if (s.in_slot) {
        s.emitted.push_back(vocab.rec_end());
        s.in_slot = false;
        s.truncated_slot = true;
    }
}

bool at_limit(const GenerationState& s, std::size_t prefix_len, const LogitScorer& scorer) {
    return s.step >= s.max_steps || prefix_len + s.emitted.size() >= scorer.max_length();
}

GenerationState emit(const GenerationState& s, TokenId token, std::span<const double> log_probs, const Vocabulary& vocab,
                     bool vocab_pointer) {
    const bool capture = captures(s, token, vocab, vocab_pointer);
    GenerationState next = advance(s, token, vocab, vocab_pointer);
    if (capture) next.slots.push_back(slot_from_log_probs(log_probs, next.emitted.size() - 1, vocab));
    return next;
}

double normalized(double log_prob, std::size_t length, double penalty) {
    return log_prob / std::pow(static_cast<double>(std::max<std::size_t>(length, 1)), penalty);
}

}  // namespace

GenerationState advance(GenerationState state, TokenId token, const Vocabulary& vocab, bool vocab_pointer) {
    if (state.finished) throw AutomatonViolation("advance: generation already finished");
    if (!vocab.valid(token)) throw AutomatonViolation("advance: token id out of range");
    if (vocab_pointer && vocab.is_general(token) == state.in_slot) {
        throw AutomatonViolation("advance: token " + vocab.token(token) + " is outside the active partition");
    }
    state.emitted.push_back(token);
    ++state.step;
    if (token == vocab.rec_start()) {
        state.in_slot = true;
    } else if (token == vocab.rec_end()) {
        state.in_slot = false;
    } else if (token == vocab.eos()) {
        state.finished = true;
    }
    return state;
}

std::vector<double> next_log_probs(std::span<const double> logits, std::span<const double> bias,
                                   const GenerationState& state, const Vocabulary& vocab, bool vocab_pointer) {
    auto lp = masked_distribution(logits, bias, state.in_slot, vocab, vocab_pointer);
    for (double& p : lp) p = p > 0.0 ? std::log(p) : kNegInf;
    return lp;
}

BeamHypothesis greedy_decode(std::span<const TokenId> prefix, const LogitScorer& scorer, std::span<const double> bias,
                             const Vocabulary& vocab, const DecodeOptions& options) {
    BeamHypothesis out;
    GenerationState& s = out.state;
    s.max_steps = options.max_steps;
    if (at_limit(s, prefix.size(), scorer)) {
        s.finished = out.finished = true;
        return out;
    }
    auto cursor = scorer.start(prefix);
    while (true) {
        const auto lp = next_log_probs(cursor->logits(), bias, s, vocab, options.vocab_pointer);
        TokenId best = -1;
        for (std::size_t v = 0; v < lp.size(); ++v) {
            if (lp[v] == kNegInf) continue;
            if (best < 0 || lp[v] > lp[static_cast<std::size_t>(best)]) best = static_cast<TokenId>(v);
        }
        s = emit(s, best, lp, vocab, options.vocab_pointer);
        out.log_prob += lp[static_cast<std::size_t>(best)];
        if (s.finished) break;
        if (at_limit(s, prefix.size(), scorer)) {
            finish(s, vocab);
            break;
        }
        cursor->push(best);
    }
    out.finished = true;
    out.score = normalized(out.log_prob, s.emitted.size(), options.length_penalty);
    return out;
}

std::vector<BeamHypothesis> beam_generate(std::span<const TokenId> prefix, const LogitScorer& scorer,
                                          std::span<const double> bias, const Vocabulary& vocab,
                                          const DecodeOptions& options) {
    const std::size_t width = std::max<std::size_t>(options.beam_width, 1);
    struct Live {
        BeamHypothesis hyp;
        std::unique_ptr<ScoringCursor> cursor;
    };
    std::vector<BeamHypothesis> pool;
    std::vector<Live> alive;
    {
        BeamHypothesis root;
        root.state.max_steps = options.max_steps;
        if (at_limit(root.state, prefix.size(), scorer)) {
            root.finished = root.state.finished = true;
            return {root};
        }
        alive.push_back({std::move(root), scorer.start(prefix)});
    }

    struct Candidate {
        std::size_t parent;
        TokenId token;
        double log_prob;
    };
    auto lex_less = [&](const Candidate& a, const Candidate& b) {
        const auto& ea = alive[a.parent].hyp.state.emitted;
        const auto& eb = alive[b.parent].hyp.state.emitted;
        const std::size_t n = std::min(ea.size(), eb.size());
        for (std::size_t i = 0; i < n; ++i)
            if (ea[i] != eb[i]) return ea[i] < eb[i];
        if (ea.size() != eb.size()) return ea.size() < eb.size();
        return a.token < b.token;
    };

    while (!alive.empty()) {
        std::vector<Candidate> cands;
        std::vector<std::vector<double>> step_lp(alive.size());
        for (std::size_t h = 0; h < alive.size(); ++h) {
            step_lp[h] = next_log_probs(alive[h].cursor->logits(), bias, alive[h].hyp.state, vocab, options.vocab_pointer);
            for (std::size_t v = 0; v < step_lp[h].size(); ++v) {
                if (step_lp[h][v] == kNegInf) continue;
                cands.push_back({h, static_cast<TokenId>(v), alive[h].hyp.log_prob + step_lp[h][v]});
            }
        }
        const std::size_t keep = std::min(width, cands.size());
        std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                          [&](const Candidate& a, const Candidate& b) {
                              if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                              return lex_less(a, b);
                          });
        std::vector<Live> next;
        for (std::size_t c = 0; c < keep; ++c) {
            const Candidate& cand = cands[c];
            Live& parent = alive[cand.parent];
            BeamHypothesis child;
            child.state = emit(parent.hyp.state, cand.token, step_lp[cand.parent], vocab, options.vocab_pointer);
            child.log_prob = cand.log_prob;
            if (!child.state.finished && at_limit(child.state, prefix.size(), scorer)) finish(child.state, vocab);
            if (child.state.finished) {
                child.finished = true;
                child.score = normalized(child.log_prob, child.state.emitted.size(), options.length_penalty);
                pool.push_back(std::move(child));
                continue;
            }
            auto cursor = parent.cursor->clone();
            cursor->push(cand.token);
            next.push_back({std::move(child), std::move(cursor)});
        }
        alive = std::move(next);
    }

    std::stable_sort(pool.begin(), pool.end(), [](const BeamHypothesis& a, const BeamHypothesis& b) {
        if (a.score != b.score) return a.score > b.score;
        return std::lexicographical_compare(a.state.emitted.begin(), a.state.emitted.end(), b.state.emitted.begin(),
                                            b.state.emitted.end());
    });
    return pool;
}

std::vector<RankedItem> extract_topk_items(const GenerationState& state, std::size_t k, const Vocabulary& vocab) {
    if (state.slots.empty() || k == 0) return {};
    const auto& probs = state.slots.front().probs;
    std::vector<std::size_t> idx;
    for (std::size_t i = 1; i < probs.size(); ++i) idx.push_back(i);
    const std::size_t n = std::min(k, idx.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (probs[a] != probs[b]) return probs[a] > probs[b];
                          return a < b;
                      });
    std::vector<RankedItem> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back({vocab.item_id(vocab.from_partition_index(idx[i])), probs[idx[i]]});
    }
    return out;
}

RecommendationResult to_result(const GenerationState& state, double log_prob, std::size_t k, const Vocabulary& vocab) {
    RecommendationResult r;
    r.response_tokens = state.emitted;
    if (!r.response_tokens.empty() && r.response_tokens.back() == vocab.eos()) r.response_tokens.pop_back();
    r.items = extract_topk_items(state, k, vocab);
    r.truncated_slot = state.truncated_slot;
    r.log_prob = log_prob;
    return r;
}

RecommendationResult greedy_generate(std::span<const TokenId> prefix, const LogitScorer& scorer,
                                     std::span<const double> bias, const Vocabulary& vocab,
                                     const DecodeOptions& options) {
    const auto h = greedy_decode(prefix, scorer, bias, vocab, options);
    return to_result(h.state, h.log_prob, options.top_k, vocab);
}

RecommendationResult recommend(std::span<const TokenId> prefix, const LogitScorer& scorer, std::span<const double> bias,
                               const Vocabulary& vocab, const DecodeOptions& options) {
    const auto beams = beam_generate(prefix, scorer, bias, vocab, options);
    if (beams.empty()) return {};
    return to_result(beams.front().state, beams.front().log_prob, options.top_k, vocab);
}

}  // namespace recindial
