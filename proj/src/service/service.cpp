#include "segvae/service/service.hpp"

#include <sodium.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "httplib.h"
#include "segvae/core/ops.hpp"
#include "segvae/data/dataset.hpp"
#include "segvae/editing/edit.hpp"
#include "segvae/model/forward.hpp"
#include "segvae/service/wire.hpp"
#include "segvae/util/rng.hpp"

namespace segvae::service {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ServiceError bad_request(const std::string& message) { return ServiceError(400, "bad_request", message); }

std::string random_id() {
    if (sodium_init() < 0) throw std::runtime_error("libsodium failed to initialise");
    unsigned char raw[16];
    randombytes_buf(raw, sizeof raw);
    char hex[sizeof raw * 2 + 1];
    sodium_bin2hex(hex, sizeof hex, raw, sizeof raw);
    return hex;
}

std::uint64_t read_seed(const json& request) {
    if (!request.contains("seed")) throw bad_request("missing field: seed");
    const json& seed = request.at("seed");
    if (!seed.is_number_integer() || (!seed.is_number_unsigned() && seed.get<std::int64_t>() < 0)) {
        throw bad_request("seed must be a non-negative integer");
    }
    return seed.get<std::uint64_t>();
}

const json& field(const json& request, const char* name) {
    if (!request.is_object() || !request.contains(name)) throw bad_request(std::string("missing field: ") + name);
    return request.at(name);
}

std::vector<std::uint8_t> slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Service::Service(std::shared_ptr<const model::SegVae> model, ServiceOptions options)
    : model_(std::move(model)), options_(std::move(options)) {
    if (!model_) throw std::invalid_argument("service needs a model");
}

core::LabelSet Service::parse_labels(const json& names) const {
    const auto& catalog = model_->config().catalog;
    if (!names.is_array()) throw bad_request("labels must be an array of class names");
    core::LabelSet labels(catalog.size());
    for (const auto& n : names) {
        if (!n.is_string()) throw bad_request("labels must be an array of class names");
        const auto k = catalog.find(n.get<std::string>());
        if (!k) throw bad_request("unknown class: " + n.get<std::string>());
        labels.set(*k);
    }
    return labels;
}

json Service::label_names(const core::LabelSet& labels) const {
    json out = json::array();
    for (int k : labels.members()) out.push_back(model_->config().catalog.name(k));
    return out;
}

Response Service::catalog() const {
    const auto& cfg = model_->config();
    json palette = json::array();
    for (const auto& c : cfg.catalog.palette()) palette.push_back({c.r, c.g, c.b});
    json order = json::array();
    for (int k : cfg.order.sequence()) order.push_back(cfg.catalog.name(k));
    return {200,
            {{"classes", cfg.catalog.names()}, {"palette", palette}, {"height", cfg.height}, {"width", cfg.width},
             {"variant", model::to_string(cfg.variant)}, {"order", order}}};
}

Response Service::sample(const json& request) const {
    const auto labels = parse_labels(field(request, "labels"));
    const std::uint64_t seed = read_seed(request);
    std::optional<core::GenerationOrder> order;
    if (request.contains("order")) {
        const auto& catalog = model_->config().catalog;
        std::vector<int> seq;
        try {
            for (const auto& n : request.at("order")) seq.push_back(catalog.index_of(n.get<std::string>()));
            order = core::GenerationOrder(seq);
        } catch (const std::exception& e) {
            throw bad_request(std::string("invalid order: ") + e.what());
        }
    }
    Rng rng(seed);
    const auto map = model::generate(*model_, labels, rng, order);
    const auto& cfg = model_->config();
    return {200, {{"seed", seed}, {"labels", label_names(labels)},
                  {"map", encode_map(map, cfg.catalog, order ? *order : cfg.order)}}};
}

Response Service::create_session(const json& request) const {
    const auto& cfg = model_->config();
    auto session = std::make_shared<Session>();
    if (request.contains("map")) {
        core::SemanticMap map;
        try {
            map = decode_map(request.at("map"), cfg.catalog);
        } catch (const std::exception& e) {
            throw bad_request(std::string("invalid map payload: ") + e.what());
        }
        const auto report = core::validate_semantic_map(map, cfg.catalog, core::Resolution{cfg.height, cfg.width});
        if (!report.ok()) throw bad_request("uploaded map is invalid: " + report.issues.front().message);
        session->labels = map.extract_label_set();
        session->map = std::move(map);
        session->last_seed = request.contains("seed") ? read_seed(request) : 0;
    } else {
        session->labels = parse_labels(field(request, "labels"));
        session->last_seed = read_seed(request);
        Rng rng(session->last_seed);
        session->map = model::generate(*model_, session->labels, rng);
        // A class the model rendered empty is not part of the session's map.
        session->labels = session->map.extract_label_set();
    }
    session->last_used = options_.clock();

    expire_idle();
    std::string id;
    {
        std::lock_guard lock(sessions_mutex_);
        if (sessions_.size() >= options_.max_sessions) {
            throw ServiceError(503, "too_many_sessions", "session limit reached");
        }
        do {
            id = random_id();
        } while (sessions_.count(id));
        sessions_.emplace(id, session);
    }
    return {201, session_body(id, *session)};
}

Response Service::edit(const json& request) const {
    const std::string id = field(request, "session").get<std::string>();
    const std::string kind_name = field(request, "kind").get<std::string>();
    const std::string target_name = field(request, "target").get<std::string>();
    const std::uint64_t seed = read_seed(request);
    const auto& catalog = model_->config().catalog;

    editing::EditRequest req;
    try {
        req.kind = editing::parse_edit_kind(kind_name);
    } catch (const std::invalid_argument& e) {
        throw bad_request(e.what());
    }
    const auto target = catalog.find(target_name);
    if (!target) throw bad_request("unknown class: " + target_name);
    req.target = *target;
    req.seed = seed;

    const auto session = find(id);
    std::lock_guard lock(session->mutex);
    req.map = session->map;
    req.labels = session->labels;
    editing::EditResult result;
    try {
        result = editing::apply_edit(*model_, req);
    } catch (const editing::EditConflict& e) {
        throw ServiceError(409, "conflict", e.what());
    }
    session->map = std::move(result.map);
    session->labels = result.labels;
    session->last_seed = seed;
    ++session->edits;
    session->last_used = options_.clock();
    json body = session_body(id, *session);
    body["kind"] = editing::to_string(req.kind);
    body["target"] = target_name;
    return {200, body};
}

Response Service::get_session(const std::string& id) const {
    const auto session = find(id);
    std::lock_guard lock(session->mutex);
    session->last_used = options_.clock();
    return {200, session_body(id, *session)};
}

Response Service::export_session(const std::string& id) const {
    const auto session = find(id);
    const auto& cfg = model_->config();
    data::Dataset ds(cfg.catalog, core::Resolution{cfg.height, cfg.width});
    std::uint64_t seed = 0;
    {
        std::lock_guard lock(session->mutex);
        session->last_used = options_.clock();
        ds.add(session->map, id);
        seed = session->last_seed;
    }
    const fs::path dir = fs::temp_directory_path() / ("segvae-export-" + random_id());
    json files = json::object();
    json manifest;
    try {
        data::export_dataset(ds, dir.string());
        for (const auto& entry : fs::directory_iterator(dir)) {
            const std::string name = entry.path().filename().string();
            if (name == "manifest.json") {
                std::ifstream in(entry.path());
                manifest = json::parse(in);
            } else {
                files[name] = base64_encode(slurp(entry.path()));
            }
        }
    } catch (...) {
        fs::remove_all(dir);
        throw;
    }
    fs::remove_all(dir);
    return {200, {{"session", id}, {"seed", seed}, {"manifest", manifest}, {"files", files}}};
}

json Service::session_body(const std::string& id, const Session& s) const {
    const auto& cfg = model_->config();
    return {{"session", id},
            {"seed", s.last_seed},
            {"labels", label_names(s.labels)},
            {"edits", s.edits},
            {"catalog", cfg.catalog.names()},
            {"map", encode_map(s.map, cfg.catalog, cfg.order)}};
}

std::shared_ptr<Service::Session> Service::find(const std::string& id) const {
    expire_idle();
    std::lock_guard lock(sessions_mutex_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw ServiceError(404, "not_found", "unknown or expired session: " + id);
    return it->second;
}

void Service::expire_idle() const {
    const auto now = options_.clock();
    std::lock_guard lock(sessions_mutex_);
    for (auto it = sessions_.begin(); it != sessions_.end();) {
        std::unique_lock session_lock(it->second->mutex, std::try_to_lock);
        // A session in use is not idle.
        if (session_lock.owns_lock() && now - it->second->last_used > options_.idle_timeout) {
            session_lock.unlock();
            it = sessions_.erase(it);
        } else {
            ++it;
        }
    }
}

std::size_t Service::session_count() const {
    expire_idle();
    std::lock_guard lock(sessions_mutex_);
    return sessions_.size();
}

Response Service::handle(const std::string& method, const std::string& path, const std::string& body) const {
    try {
        auto parse = [&] {
            try {
                return json::parse(body);
            } catch (const json::parse_error& e) {
                throw bad_request(std::string("request body is not valid JSON: ") + e.what());
            }
        };
        const std::string session_prefix = "/session/";
        if (path == "/catalog") {
            if (method != "GET") throw ServiceError(405, "method_not_allowed", "use GET /catalog");
            return catalog();
        }
        if (path == "/sample") {
            if (method != "POST") throw ServiceError(405, "method_not_allowed", "use POST /sample");
            return sample(parse());
        }
        if (path == "/session") {
            if (method != "POST") throw ServiceError(405, "method_not_allowed", "use POST /session");
            return create_session(parse());
        }
        if (path == "/edit") {
            if (method != "POST") throw ServiceError(405, "method_not_allowed", "use POST /edit");
            return edit(parse());
        }
        if (path.rfind(session_prefix, 0) == 0) {
            if (method != "GET") throw ServiceError(405, "method_not_allowed", "sessions are read with GET");
            std::string rest = path.substr(session_prefix.size());
            const std::string export_suffix = "/export";
            if (rest.size() > export_suffix.size() &&
                rest.compare(rest.size() - export_suffix.size(), export_suffix.size(), export_suffix) == 0) {
                return export_session(rest.substr(0, rest.size() - export_suffix.size()));
            }
            if (!rest.empty() && rest.find('/') == std::string::npos) return get_session(rest);
        }
        throw ServiceError(404, "not_found", "no route for " + method + " " + path);
    } catch (const ServiceError& e) {
        return {e.status(), {{"code", e.code()}, {"message", e.what()}}};
    } catch (const json::exception& e) {
        return {400, {{"code", "bad_request"}, {"message", std::string("malformed request: ") + e.what()}}};
    } catch (const std::invalid_argument& e) {
        return {400, {{"code", "bad_request"}, {"message", e.what()}}};
    } catch (const std::exception& e) {
        return {500, {{"code", "internal"}, {"message", e.what()}}};
    }
}

struct HttpServer::Impl {
    httplib::Server server;
};

HttpServer::HttpServer(const Service& service) : impl_(std::make_unique<Impl>()) {
    auto route = [&service](const httplib::Request& req, httplib::Response& res) {
        const Response r = service.handle(req.method, req.path, req.body);
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    };
    impl_->server.Get(R"(/.*)", route);
    impl_->server.Post(R"(/.*)", route);
    // No SO_REUSEPORT: a second server on a taken port must fail to bind.
    impl_->server.set_socket_options([](socket_t sock) {
        int yes = 1;
        setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
}

HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
    const int bound = port == 0 ? impl_->server.bind_to_any_port(host)
                                : (impl_->server.bind_to_port(host, port) ? port : -1);
    if (bound <= 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    return bound;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() { impl_->server.stop(); }

void serve(const Service& service, const std::string& host, int port) {
    HttpServer server(service);
    server.bind(host, port);
    server.listen();
}

}  // namespace segvae::service
