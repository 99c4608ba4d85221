#include "recindial/service.hpp"

#include <algorithm>

#include <httplib.h>
#include <json.hpp>

namespace recindial {

using nlohmann::json;

namespace {

ApiReply error_reply(int status, const std::string& message) { return {status, json{{"error", message}}.dump()}; }

class SlotGuard {
public:
    explicit SlotGuard(std::counting_semaphore<64>& s) : s_(s) { s_.acquire(); }
    ~SlotGuard() { s_.release(); }
    SlotGuard(const SlotGuard&) = delete;
    SlotGuard& operator=(const SlotGuard&) = delete;

private:
    std::counting_semaphore<64>& s_;
};

}  // namespace

ChatApi::ChatApi(const InferenceEngine& engine, const ServiceOptions& options)
    : engine_(&engine),
      options_(options),
      store_(options.idle_timeout),
      slots_(static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(options.inference_slots, 1, 64))) {}

ApiReply ChatApi::create_session(const std::string& body) {
    DecodeSettings settings = options_.defaults;
    if (!body.empty()) {
        const json j = json::parse(body, nullptr, false);
        if (j.is_discarded() || !j.is_object()) return error_reply(400, "body must be a JSON object");
        try {
            settings.top_k = j.value("k", settings.top_k);
            settings.beam_width = j.value("beam_width", settings.beam_width);
            settings.max_steps = j.value("nmax", settings.max_steps);
        } catch (const json::exception& e) {
            return error_reply(400, e.what());
        }
    }
    if (settings.top_k == 0 || settings.beam_width == 0 || settings.max_steps == 0) {
        return error_reply(400, "k, beam_width and nmax must be positive");
    }
    store_.expire();
    const auto s = store_.create(settings);
    return {200, json{{"session_id", s->id}}.dump()};
}

ApiReply ChatApi::chat(const std::string& body) {
    const json j = json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) return error_reply(400, "body must be a JSON object");
    if (!j.contains("session_id") || !j["session_id"].is_string()) return error_reply(400, "missing session_id");
    if (!j.contains("message") || !j["message"].is_string()) return error_reply(400, "missing message");
    std::optional<std::size_t> k;
    if (j.contains("k")) {
        if (!j["k"].is_number_unsigned() || j["k"].get<std::size_t>() == 0) return error_reply(400, "k must be a positive integer");
        k = j["k"].get<std::size_t>();
    }
    std::shared_ptr<Session> session;
    try {
        session = store_.get(j["session_id"].get<std::string>());
    } catch (const SessionNotFound& e) {
        return error_reply(404, e.what());
    }
    ChatTurn turn;
    try {
        SlotGuard guard(slots_);
        turn = handle_message(*session, j["message"].get<std::string>(), *engine_, k);
    } catch (const std::exception& e) {
        return error_reply(500, e.what());
    }
    json items = json::array();
    for (const auto& it : turn.items) items.push_back({{"id", it.id}, {"name", it.name}, {"prob", it.prob}});
    json mentions = json::array();
    for (const auto& m : turn.mentions) {
        mentions.push_back({{"id", m.id}, {"name", m.name}, {"start", m.char_start}, {"end", m.char_end}});
    }
    return {200, json{{"response", turn.response},
                      {"items", items},
                      {"mentions", mentions},
                      {"turn_index", turn.turn_index},
                      {"latency_ms", turn.latency_ms}}
                     .dump()};
}

ApiReply ChatApi::health() const {
    return {200, json{{"status", "ok"}, {"checkpoint_hash", options_.checkpoint_hash}}.dump()};
}

ApiReply ChatApi::delete_session(const std::string& id) {
    if (!store_.erase(id)) return error_reply(404, "unknown session: " + id);
    return {200, json{{"deleted", id}}.dump()};
}

// ---------------------------------------------------------------------------

struct ChatServer::Impl {
    httplib::Server server;
};

ChatServer::ChatServer(const InferenceEngine& engine, ServiceOptions options)
    : impl_(std::make_unique<Impl>()), api_(std::make_unique<ChatApi>(engine, options)), options_(std::move(options)) {
    auto& svr = impl_->server;
    const std::size_t threads = std::max<std::size_t>(options_.http_threads, 1);
    svr.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    auto send = [](httplib::Response& res, const ApiReply& r) {
        res.status = r.status;
        res.set_content(r.body, "application/json");
    };
    svr.Post("/session", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, api_->create_session(req.body));
    });
    svr.Post("/chat", [this, send](const httplib::Request& req, httplib::Response& res) { send(res, api_->chat(req.body)); });
    svr.Get("/health", [this, send](const httplib::Request&, httplib::Response& res) { send(res, api_->health()); });
    svr.Delete(R"(/session/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, api_->delete_session(req.matches[1]));
    });
}

ChatServer::~ChatServer() { stop(); }

bool ChatServer::listen() { return impl_->server.listen(options_.host, options_.port); }

int ChatServer::bind_any_port() { return impl_->server.bind_to_any_port(options_.host); }

bool ChatServer::serve() { return impl_->server.listen_after_bind(); }

void ChatServer::stop() {
    if (impl_) impl_->server.stop();
}

bool ChatServer::running() const { return impl_->server.is_running(); }

}  // namespace recindial
