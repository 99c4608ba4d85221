#pragma once

#include <chrono>
#include <memory>
#include <semaphore>
#include <string>

#include "recindial/session.hpp"

namespace recindial {

struct ServiceOptions {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::size_t http_threads = 4;
    std::size_t inference_slots = 2;  // concurrent decodes over the frozen model
    std::chrono::seconds idle_timeout = std::chrono::minutes(30);
    DecodeSettings defaults;
    std::string checkpoint_hash;
};

struct ApiReply {
    int status = 200;
    std::string body;  // JSON
};

/// Transport-independent JSON API; the HTTP server routes to these.
class ChatApi {
public:
    ChatApi(const InferenceEngine& engine, const ServiceOptions& options);

    ApiReply create_session(const std::string& body);  // POST /session
    ApiReply chat(const std::string& body);            // POST /chat
    ApiReply health() const;                           // GET /health
    ApiReply delete_session(const std::string& id);    // DELETE /session/{id}

    SessionStore& sessions() noexcept { return store_; }

private:
    const InferenceEngine* engine_;
    ServiceOptions options_;
    SessionStore store_;
    std::counting_semaphore<64> slots_;
};

/// Blocks serving HTTP until stop() is called from another thread or a signal handler.
class ChatServer {
public:
    ChatServer(const InferenceEngine& engine, ServiceOptions options);
    ~ChatServer();

    /// Binds and serves; returns false when the address cannot be bound.
    bool listen();
    /// Binds to an ephemeral port and returns it; call serve() afterwards.
    int bind_any_port();
    bool serve();
    void stop();
    bool running() const;

    ChatApi& api() noexcept { return *api_; }

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    std::unique_ptr<ChatApi> api_;
    ServiceOptions options_;
};

}  // namespace recindial
