#pragma once

#include "dash/adapters/interfaces.hpp"
#include "dash/core/hash.hpp"

#include <httplib.h>

#include <cmath>
#include <memory>
#include <mutex>
#include <string>

namespace dash {

/// JSON-over-HTTP transport shared by the remote adapters. An endpoint is
/// "http://host:port[/prefix]"; every call POSTs a JSON body to prefix + path.
/// Unreachable servers, non-200 statuses and malformed bodies all surface as
/// TransportError so callers can retry them.
class RemoteEndpoint {
public:
    explicit RemoteEndpoint(const std::string& endpoint, double timeout_s = 60.0) : endpoint_(endpoint) {
        const auto scheme = endpoint.find("://");
        if (scheme == std::string::npos) throw ConfigError("endpoint '" + endpoint + "' lacks a scheme");
        const auto slash = endpoint.find('/', scheme + 3);
        base_ = endpoint.substr(0, slash);
        prefix_ = slash == std::string::npos ? "" : endpoint.substr(slash);
        while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
        timeout_s_ = timeout_s;
    }

    const std::string& endpoint() const noexcept { return endpoint_; }

    Json post(const std::string& path, const Json& body) const {
        httplib::Client client(base_);
        const auto secs = static_cast<time_t>(timeout_s_);
        client.set_connection_timeout(secs, 0);
        client.set_read_timeout(secs, 0);
        auto res = client.Post(prefix_ + path, body.dump(), "application/json");
        if (!res) throw TransportError("POST " + endpoint_ + path + " failed: " + httplib::to_string(res.error()));
        if (res->status != 200)
            throw TransportError("POST " + endpoint_ + path + " returned HTTP " + std::to_string(res->status));
        try {
            return Json::parse(res->body);
        } catch (const Json::exception& e) {
            throw TransportError("malformed reply from " + endpoint_ + path + ": " + e.what());
        }
    }

private:
    std::string endpoint_;
    std::string base_;
    std::string prefix_;
    double timeout_s_ = 60.0;
};

namespace detail {

template <class T>
T field(const Json& j, const char* key, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end()) throw TransportError(where + ": reply lacks '" + key + "'");
    try {
        return it->template get<T>();
    } catch (const Json::exception&) {
        throw TransportError(where + ": field '" + std::string(key) + "' has the wrong type");
    }
}

inline std::string image_b64(const Image& img) { return base64_encode(encode_pnm(img)); }

} // namespace detail

/// POST /ask {image, prompt} -> {text[, p_yes_token, p_no_token]}
class RemoteVlm final : public VlmAdapter {
public:
    RemoteVlm(std::string model_id, const std::string& endpoint, std::size_t concurrency = 4)
        : id_(std::move(model_id)), ep_(endpoint), concurrency_(concurrency) {}

    const std::string& model_id() const override { return id_; }
    VlmCapabilities capabilities() const override { return {true, true, false}; }
    std::size_t max_concurrency() const override { return concurrency_; }

    VlmReply ask(const Image& image, const std::string& prompt) override {
        const Json r = ep_.post("/ask", Json{{"model_id", id_}, {"image", detail::image_b64(image)}, {"prompt", prompt}});
        VlmReply out;
        out.text = detail::field<std::string>(r, "text", id_);
        if (r.contains("p_yes_token") && !r["p_yes_token"].is_null()) out.p_yes_token = detail::field<double>(r, "p_yes_token", id_);
        if (r.contains("p_no_token") && !r["p_no_token"].is_null()) out.p_no_token = detail::field<double>(r, "p_no_token", id_);
        return out;
    }

private:
    std::string id_;
    RemoteEndpoint ep_;
    std::size_t concurrency_;
};

/// POST /propose {image, object} -> {scores: [..]}
class RemoteDetector final : public DetectorAdapter {
public:
    RemoteDetector(std::string model_id, const std::string& endpoint, std::size_t concurrency = 4)
        : id_(std::move(model_id)), ep_(endpoint), concurrency_(concurrency) {}

    const std::string& model_id() const override { return id_; }
    DetectorCapabilities capabilities() const override { return {true, false}; }
    std::size_t max_concurrency() const override { return concurrency_; }

    std::vector<double> propose(const Image& image, const std::string& object) override {
        const Json r = ep_.post("/propose", Json{{"model_id", id_}, {"image", detail::image_b64(image)}, {"object", object}});
        return detail::field<std::vector<double>>(r, "scores", id_);
    }

private:
    std::string id_;
    RemoteEndpoint ep_;
    std::size_t concurrency_;
};

/// POST /embed_image {image} and /embed_text {text} -> {embedding: [..]}
class RemoteEmbedder final : public EmbedderAdapter {
public:
    RemoteEmbedder(std::string model_id, const std::string& endpoint, std::size_t dim, std::size_t concurrency = 4)
        : id_(std::move(model_id)), ep_(endpoint), dim_(dim), concurrency_(concurrency) {}

    const std::string& model_id() const override { return id_; }
    std::size_t dim() const override { return dim_; }
    std::size_t max_concurrency() const override { return concurrency_; }

    Vector embed_image(const Image& image) override {
        return checked(ep_.post("/embed_image", Json{{"model_id", id_}, {"image", detail::image_b64(image)}}));
    }
    Vector embed_text(const std::string& text) override {
        return checked(ep_.post("/embed_text", Json{{"model_id", id_}, {"text", text}}));
    }

private:
    Vector checked(const Json& r) const {
        auto v = detail::field<Vector>(r, "embedding", id_);
        if (v.size() != dim_) throw DimensionError(id_ + " returned " + std::to_string(v.size()) + " dims, expected " + std::to_string(dim_));
        return v;
    }

    std::string id_;
    RemoteEndpoint ep_;
    std::size_t dim_;
    std::size_t concurrency_;
};

/// POST /embed {image} -> {embedding}. Similarity is clamp(cosine, 0, 1),
/// computed locally.
class RemotePerceptual final : public PerceptualAdapter {
public:
    RemotePerceptual(std::string model_id, const std::string& endpoint, std::size_t concurrency = 4)
        : id_(std::move(model_id)), ep_(endpoint), concurrency_(concurrency) {}

    const std::string& model_id() const override { return id_; }
    std::size_t max_concurrency() const override { return concurrency_; }

    Vector embed(const Image& image) override {
        return detail::field<Vector>(ep_.post("/embed", Json{{"model_id", id_}, {"image", detail::image_b64(image)}}),
                                     "embedding", id_);
    }

    double similarity(std::span<const double> a, std::span<const double> b) const override {
        if (a.size() != b.size()) throw DimensionError("perceptual embeddings differ in size");
        double ab = 0, aa = 0, bb = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            ab += a[i] * b[i];
            aa += a[i] * a[i];
            bb += b[i] * b[i];
        }
        if (aa == 0 || bb == 0) return 0.0;
        return std::clamp(ab / std::sqrt(aa * bb), 0.0, 1.0);
    }

private:
    std::string id_;
    RemoteEndpoint ep_;
    std::size_t concurrency_;
};

/// POST /chat {messages: [{role, content}]} -> {text}
class RemoteLlm final : public LlmAdapter {
public:
    RemoteLlm(std::string model_id, const std::string& endpoint, std::size_t concurrency = 2)
        : id_(std::move(model_id)), ep_(endpoint), concurrency_(concurrency) {}

    const std::string& model_id() const override { return id_; }
    std::size_t max_concurrency() const override { return concurrency_; }

    std::string chat(const std::vector<ChatMessage>& messages) override {
        Json msgs = Json::array();
        for (const auto& m : messages) msgs.push_back(Json{{"role", m.role}, {"content", m.content}});
        return detail::field<std::string>(ep_.post("/chat", Json{{"model_id", id_}, {"messages", msgs}}), "text", id_);
    }

private:
    std::string id_;
    RemoteEndpoint ep_;
    std::size_t concurrency_;
};

} // namespace dash
