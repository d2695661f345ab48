#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>

#include "segvae/core/types.hpp"
#include "segvae/model/networks.hpp"
#include "json.hpp"

namespace segvae::service {

struct Response {
    int status = 200;
    nlohmann::json body;
};

// Raised by handlers; rendered as {"code", "message"} with the given status.
class ServiceError : public std::runtime_error {
public:
    ServiceError(int status, std::string code, const std::string& message)
        : std::runtime_error(message), status_(status), code_(std::move(code)) {}
    int status() const { return status_; }
    const std::string& code() const { return code_; }

private:
    int status_;
    std::string code_;
};

struct ServiceOptions {
    std::chrono::seconds idle_timeout{30 * 60};
    std::size_t max_sessions = 1024;
    std::function<std::chrono::steady_clock::time_point()> clock = [] { return std::chrono::steady_clock::now(); };
};

class Service {
public:
    Service(std::shared_ptr<const model::SegVae> model, ServiceOptions options = {});

    // Routes one request; never throws.
    Response handle(const std::string& method, const std::string& path, const std::string& body) const;

    Response catalog() const;
    Response sample(const nlohmann::json& request) const;
    Response create_session(const nlohmann::json& request) const;
    Response edit(const nlohmann::json& request) const;
    Response get_session(const std::string& id) const;
    Response export_session(const std::string& id) const;

    std::size_t session_count() const;

private:
    struct Session {
        std::mutex mutex;
        core::SemanticMap map;
        core::LabelSet labels;
        std::uint64_t last_seed = 0;
        int edits = 0;
        std::chrono::steady_clock::time_point last_used;
    };

    std::shared_ptr<Session> find(const std::string& id) const;
    void expire_idle() const;
    nlohmann::json session_body(const std::string& id, const Session& s) const;
    core::LabelSet parse_labels(const nlohmann::json& names) const;
    nlohmann::json label_names(const core::LabelSet& labels) const;

    std::shared_ptr<const model::SegVae> model_;
    ServiceOptions options_;
    mutable std::mutex sessions_mutex_;
    mutable std::map<std::string, std::shared_ptr<Session>> sessions_;
};

// HTTP front end over Service::handle.
class HttpServer {
public:
    explicit HttpServer(const Service& service);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    // Port 0 picks a free port. Returns the bound port; throws if binding fails.
    int bind(const std::string& host, int port);
    // Blocks until stop() is called from another thread.
    void listen();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Blocks serving HTTP until the process is stopped. Throws if the address
// cannot be bound.
void serve(const Service& service, const std::string& host, int port);

}  // namespace segvae::service
