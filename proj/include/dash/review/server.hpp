#pragma once

#include "dash/review/review.hpp"

#include <httplib.h>

#include <memory>
#include <thread>

namespace dash {

/// HTTP front of a ReviewService:
///
///   GET  /api/next?labeler=L[&object=O]   200 task | 204 none
///   POST /api/verdict {labeler, task_id, verdict}
///   GET  /api/progress
///   GET  /api/image/<content_hash>        raw image bytes
///
/// Label errors map to 4xx: unknown labeler 403, unknown task 404,
/// resubmission 409, malformed verdict 400.
inline void install_review_routes(httplib::Server& server, ReviewService& service, const ImageCache& cache) {
    auto json_reply = [](httplib::Response& res, int status, const Json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    };

    server.Get("/api/next", [&service, json_reply](const httplib::Request& req, httplib::Response& res) {
        const std::string labeler = req.get_param_value("labeler");
        if (!service.registered(labeler)) return json_reply(res, 403, Json{{"error", "unknown labeler"}});
        const auto task = service.next_task(labeler, req.get_param_value("object"));
        if (!task) {
            res.status = 204;
            return;
        }
        json_reply(res, 200, *task);
    });

    server.Post("/api/verdict", [&service, json_reply](const httplib::Request& req, httplib::Response& res) {
        Json body;
        try {
            body = Json::parse(req.body);
        } catch (const Json::exception&) {
            return json_reply(res, 400, Json{{"error", "body is not JSON"}});
        }
        const std::string labeler = body.value("labeler", std::string{});
        const std::string task_id = body.value("task_id", std::string{});
        const std::string verdict = body.value("verdict", std::string{});
        if (!service.registered(labeler)) return json_reply(res, 403, Json{{"error", "unknown labeler"}});
        try {
            parse_verdict(verdict);
        } catch (const LabelError& e) {
            return json_reply(res, 400, Json{{"error", e.what()}});
        }
        try {
            service.submit(labeler, task_id, verdict);
        } catch (const LabelError& e) {
            const bool unknown = std::string_view(e.what()).rfind("unknown task", 0) == 0;
            return json_reply(res, unknown ? 404 : 409, Json{{"error", e.what()}});
        }
        json_reply(res, 200, Json{{"accepted", true}, {"task_id", task_id}});
    });

    server.Get("/api/progress", [&service, json_reply](const httplib::Request&, httplib::Response& res) {
        json_reply(res, 200, progress_to_json(service.progress()));
    });

    server.Get(R"(/api/image/([0-9a-f]{64}))", [&service, &cache](const httplib::Request& req, httplib::Response& res) {
        const std::string hash = req.matches[1];
        if (!service.has_image(hash) || !cache.contains(hash)) {
            res.status = 404;
            return;
        }
        const Bytes b = cache.bytes(hash);
        res.set_content(std::string(b.begin(), b.end()), "image/x-portable-anymap");
    });
}

/// Runs the review server on a background thread; stops on destruction.
class ReviewServer {
public:
    ReviewServer(ReviewService& service, const ImageCache& cache) { install_review_routes(server_, service, cache); }
    ReviewServer(const ReviewServer&) = delete;
    ReviewServer& operator=(const ReviewServer&) = delete;
    ~ReviewServer() { stop(); }

    /// Binds to `host:port` (0 picks a free port) and returns the port.
    int start(const std::string& host = "127.0.0.1", int port = 0) {
        port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
        if (port_ < 0) throw Error("cannot bind review server to " + host + ":" + std::to_string(port));
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        return port_;
    }

    /// Serves on the calling thread until stopped.
    void run(const std::string& host, int port) {
        if (!server_.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
    }

    void stop() {
        server_.stop();
        if (thread_.joinable()) thread_.join();
    }

    int port() const noexcept { return port_; }

private:
    httplib::Server server_;
    std::thread thread_;
    int port_ = -1;
};

} // namespace dash
