#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "recindial/corpus.hpp"
#include "recindial/kgraph.hpp"
#include "recindial/model.hpp"
#include "recindial/pipeline.hpp"

namespace recindial {

struct DecodeSettings {
    std::size_t top_k = 10;
    std::size_t beam_width = 10;
    std::size_t max_steps = 64;
    double length_penalty = 1.0;

    DecodeOptions options() const;
};

struct SuggestedItem {
    std::string id;
    std::string name;
    double prob = 0.0;
};

struct ChatTurn {
    std::string user_text;
    std::string response;
    std::vector<SuggestedItem> items;  // ranked, at most k
    std::vector<RenderedMention> mentions;
    std::size_t turn_index = 0;        // 1-based position of the response in the session history
    double latency_ms = 0.0;
};

class SessionNotFound : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Frozen model with everything needed to answer a message. Safe to share across threads.
class InferenceEngine {
public:
    InferenceEngine(RecModel model, Vocabulary vocab, KnowledgeGraph graph, LinkMap links, ItemCatalog catalog,
                    PairOptions pair_options = {});
    InferenceEngine(const InferenceEngine&) = delete;
    InferenceEngine& operator=(const InferenceEngine&) = delete;

    const Vocabulary& vocab() const noexcept { return vocab_; }
    const ItemCatalog& catalog() const noexcept { return catalog_; }
    const EntityLinker& linker() const noexcept { return linker_; }
    const Recommender& recommender() const noexcept { return *recommender_; }
    const PairOptions& pair_options() const noexcept { return pair_options_; }

    /// Tokenizes a user message; catalog names found in the text (case-insensitive) become item tokens.
    Utterance encode_message(const std::string& text, Speaker speaker = Speaker::seeker) const;
    /// Response text with item tokens replaced by catalog names and markers dropped.
    std::string render(const std::vector<TokenId>& tokens, std::vector<RenderedMention>* mentions = nullptr) const;

private:
    RecModel model_;
    Vocabulary vocab_;
    KnowledgeGraph graph_;
    ItemCatalog catalog_;
    EntityLinker linker_;
    PairOptions pair_options_;
    std::unique_ptr<Recommender> recommender_;
};

struct Session {
    std::string id;
    std::vector<Utterance> history;  // append-only
    std::vector<EntityId> entity_set;  // T_u, first-appearance order, grows monotonically
    std::chrono::steady_clock::time_point created;
    std::chrono::steady_clock::time_point last_used;
    DecodeSettings settings;
    std::mutex mutex;
};

/// Appends the seeker message, grows T_u, decodes the reply and appends it. The oldest context
/// tokens are dropped once the context budget is exceeded. `k` overrides the session's top-k.
ChatTurn handle_message(Session& session, const std::string& text, const InferenceEngine& engine,
                        std::optional<std::size_t> k = std::nullopt);

/// In-memory session table with idle expiry.
class SessionStore {
public:
    explicit SessionStore(std::chrono::seconds idle_timeout = std::chrono::minutes(30), std::uint64_t seed = 0);

    std::shared_ptr<Session> create(const DecodeSettings& settings);
    /// Throws SessionNotFound for unknown or expired ids.
    std::shared_ptr<Session> get(const std::string& id);
    bool erase(const std::string& id);
    /// Drops sessions idle for longer than the timeout; returns how many were removed.
    std::size_t expire(std::chrono::steady_clock::time_point now = std::chrono::steady_clock::now());
    std::size_t size() const;

private:
    struct Entry {
        std::shared_ptr<Session> session;
        std::chrono::steady_clock::time_point last_used;
    };
    mutable std::mutex mutex_;
    std::map<std::string, Entry> sessions_;
    std::chrono::seconds idle_timeout_;
    std::uint64_t counter_ = 0;
    std::uint64_t seed_;
};

}  // namespace recindial
