#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace recindial {

/// One generated response with its ranked items, as written to a transcript.
struct EvalInstance {
    std::string pair_id;
    std::size_t turn_index = 1;
    std::string generated_text;
    std::vector<std::string> generated_tokens;  // item tokens as "@id"; no markers
    std::vector<std::pair<std::string, double>> items;  // ranked (item id, probability)
    std::vector<std::string> gold_items;
    std::vector<std::string> reference_tokens;
};

/// Share of instances with gold items whose top-k list contains any gold item.
/// Throws std::invalid_argument when no instance has gold items.
double recall_at_k(const std::vector<EvalInstance>& instances, std::size_t k);

/// Sentence level: per response, distinct n-grams / tokens (0 when shorter than n); mean over responses.
double distinct_n(const std::vector<std::vector<std::string>>& responses, std::size_t n);

/// Sentence BLEU with uniform weights up to `max_n`, brevity penalty and a single reference.
/// Zero when the hypothesis is empty or shares no unigram with the reference; other zero
/// precisions are floored at `smoothing` / count.
double bleu(const std::vector<std::string>& hypothesis, const std::vector<std::string>& reference,
            std::size_t max_n = 2, double smoothing = 0.1);

/// LCS-based F-measure with beta = 1.2 on lowercased tokens.
double rouge_l(const std::vector<std::string>& hypothesis, const std::vector<std::string>& reference,
               double beta = 1.2);

/// Percentage of responses with at least one item token, or with `token_ratio` the percentage of
/// generated tokens that are items.
double item_ratio(const std::vector<std::vector<std::string>>& responses, bool token_ratio = false);

bool is_item_word(const std::string& token);

struct BucketRecall {
    std::string label;
    std::size_t count = 0;
    double recall = 0.0;
};

/// Item frequency buckets over training mentions. `edges` are the lower bounds of buckets 2..n; the first
/// bucket takes everything below edges[0], unseen items included. An instance falls into the bucket of
/// its rarest gold item. Empty buckets are omitted.
std::vector<BucketRecall> recall_by_frequency(const std::vector<EvalInstance>& instances,
                                              const std::unordered_map<std::string, std::size_t>& train_counts,
                                              std::size_t k, const std::vector<std::size_t>& edges = {5, 10, 100});
/// Turn-index buckets: 1-5, 6-10, 11+. Empty buckets are omitted.
std::vector<BucketRecall> recall_by_turn(const std::vector<EvalInstance>& instances, std::size_t k);

struct MetricsReport {
    std::map<std::string, double> recall;  // "R@1", "R@10", "R@50"
    double dist2 = 0.0, dist3 = 0.0, dist4 = 0.0;
    double bleu2 = 0.0, bleu4 = 0.0;
    double rouge_l = 0.0;
    double item_ratio = 0.0;
    std::size_t instances = 0;
    std::size_t recall_instances = 0;
    std::map<std::size_t, std::vector<BucketRecall>> by_frequency;  // keyed by k (30, 50)
    std::map<std::size_t, std::vector<BucketRecall>> by_turn;
    std::optional<double> perplexity;

    std::string to_text() const;
    std::string to_json() const;
};

MetricsReport compute_metrics(const std::vector<EvalInstance>& instances,
                              const std::unordered_map<std::string, std::size_t>& train_counts = {});

void save_transcript(const std::filesystem::path& path, const std::vector<EvalInstance>& instances);
std::vector<EvalInstance> load_transcript(const std::filesystem::path& path);

}  // namespace recindial
