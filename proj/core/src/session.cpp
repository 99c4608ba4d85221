#include "recindial/session.hpp"

#include <algorithm>
#include <cctype>
#include <iomanip>
#include <sstream>

#include "recindial/text.hpp"

namespace recindial {

DecodeOptions DecodeSettings::options() const {
    DecodeOptions o;
    o.top_k = top_k;
    o.beam_width = beam_width;
    o.max_steps = max_steps;
    o.length_penalty = length_penalty;
    return o;
}

InferenceEngine::InferenceEngine(RecModel model, Vocabulary vocab, KnowledgeGraph graph, LinkMap links,
                                 ItemCatalog catalog, PairOptions pair_options)
    : model_(std::move(model)),
      vocab_(std::move(vocab)),
      graph_(std::move(graph)),
      catalog_(std::move(catalog)),
      linker_(links, graph_.entity_index()),
      pair_options_(pair_options),
      recommender_(std::make_unique<Recommender>(model_, vocab_, graph_)) {}

namespace {

bool boundary(const std::string& s, std::size_t pos) {
    return pos == 0 || pos >= s.size() || !std::isalnum(static_cast<unsigned char>(s[pos]));
}

}  // namespace

Utterance InferenceEngine::encode_message(const std::string& text, Speaker speaker) const {
    const std::string lower = to_lower(text);
    std::vector<std::pair<std::string, std::string>> names;  // lowercased name, id
    for (const auto& id : catalog_.ids()) {
        if (vocab_.find_item(id)) names.emplace_back(to_lower(catalog_.name(id)), id);
    }
    TextTurn turn;
    turn.speaker = speaker;
    turn.text = text;
    for (std::size_t i = 0; i < lower.size();) {
        const std::pair<std::string, std::string>* best = nullptr;
        if (i == 0 || !std::isalnum(static_cast<unsigned char>(lower[i - 1]))) {
            for (const auto& n : names) {
                if (n.first.empty() || lower.compare(i, n.first.size(), n.first) != 0) continue;
                if (!boundary(lower, i + n.first.size())) continue;
                if (!best || n.first.size() > best->first.size()) best = &n;
            }
        }
        if (!best) {
            ++i;
            continue;
        }
        turn.items.push_back({text.substr(i, best->first.size()), best->second, i, i + best->first.size()});
        i += best->first.size();
    }
    TextDialogue d;
    d.turns.push_back(std::move(turn));
    return mark_items(tokenize_dialogue(d, vocab_).utterances.front(), vocab_);
}

std::string InferenceEngine::render(const std::vector<TokenId>& tokens, std::vector<RenderedMention>* mentions) const {
    return render_response(tokens, vocab_, catalog_, mentions);
}

ChatTurn handle_message(Session& session, const std::string& text, const InferenceEngine& engine,
                        std::optional<std::size_t> k) {
    const auto t0 = std::chrono::steady_clock::now();
    std::lock_guard lock(session.mutex);
    const auto& vocab = engine.vocab();

    Utterance user = engine.encode_message(text, Speaker::seeker);
    engine.linker().accumulate(user.words, session.entity_set);
    session.history.push_back(std::move(user));

    std::vector<TokenId> context;
    for (const auto& u : session.history) {
        if (!context.empty()) context.push_back(vocab.sep());
        context.insert(context.end(), u.tokens.begin(), u.tokens.end());
    }
    const std::size_t budget = engine.pair_options().max_context_tokens;
    if (context.size() > budget) context.erase(context.begin(), context.end() - static_cast<std::ptrdiff_t>(budget));

    DecodeSettings settings = session.settings;
    if (k) settings.top_k = *k;
    const auto result = engine.recommender().recommend(context, session.entity_set, settings.options());

    ChatTurn turn;
    turn.user_text = text;
    turn.response = engine.render(result.response_tokens, &turn.mentions);
    for (const auto& item : result.items) {
        const std::string name = engine.catalog().contains(item.item_id) ? engine.catalog().name(item.item_id) : item.item_id;
        turn.items.push_back({item.item_id, name, item.prob});
    }

    Utterance reply;
    reply.speaker = Speaker::recommender;
    reply.raw_text = turn.response;
    for (std::size_t i = 0; i < result.response_tokens.size(); ++i) {
        const TokenId t = result.response_tokens[i];
        reply.tokens.push_back(t);
        reply.words.push_back(vocab.is_item(t) ? item_token_string(vocab.item_id(t)) : vocab.token(t));
        if (vocab.is_item(t)) reply.item_spans.push_back({i, vocab.item_id(t)});
    }
    engine.linker().accumulate(reply.words, session.entity_set);
    session.history.push_back(std::move(reply));
    turn.turn_index = session.history.size();
    session.last_used = std::chrono::steady_clock::now();
    turn.latency_ms = std::chrono::duration<double, std::milli>(session.last_used - t0).count();
    return turn;
}

// ---------------------------------------------------------------------------

SessionStore::SessionStore(std::chrono::seconds idle_timeout, std::uint64_t seed)
    : idle_timeout_(idle_timeout), seed_(seed) {}

std::shared_ptr<Session> SessionStore::create(const DecodeSettings& settings) {
    auto s = std::make_shared<Session>();
    s->settings = settings;
    s->created = s->last_used = std::chrono::steady_clock::now();
    std::lock_guard lock(mutex_);
    std::ostringstream id;
    const std::uint64_t n = ++counter_;
    id << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(std::to_string(n), seed_ ^ 0xcbf29ce484222325ULL)
       << "-" << n;
    s->id = id.str();
    sessions_.emplace(s->id, Entry{s, s->created});
    return s;
}

std::shared_ptr<Session> SessionStore::get(const std::string& id) {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw SessionNotFound("unknown session: " + id);
    const auto now = std::chrono::steady_clock::now();
    if (now - it->second.last_used > idle_timeout_) {
        sessions_.erase(it);
        throw SessionNotFound("session expired: " + id);
    }
    it->second.last_used = now;
    return it->second.session;
}

bool SessionStore::erase(const std::string& id) {
    std::lock_guard lock(mutex_);
    return sessions_.erase(id) > 0;
}

std::size_t SessionStore::expire(std::chrono::steady_clock::time_point now) {
    std::lock_guard lock(mutex_);
    return static_cast<std::size_t>(
        std::erase_if(sessions_, [&](const auto& kv) { return now - kv.second.last_used > idle_timeout_; }));
}

std::size_t SessionStore::size() const {
    std::lock_guard lock(mutex_);
    return sessions_.size();
}

}  // namespace recindial
