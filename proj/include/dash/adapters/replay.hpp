#pragma once

#include "dash/adapters/interfaces.hpp"
#include "dash/core/hash.hpp"
#include "dash/core/image.hpp"
#include "dash/core/image_cache.hpp"

#include <fstream>
#include <map>
#include <string>
#include <utility>

namespace dash {

/// VLM that answers from recorded verdicts keyed by (content hash of the
/// encoded image, full prompt). Verdict files hold one JSON object per line:
/// {"model_id", "content_hash", "prompt", "reply"}; lines for other models
/// are ignored.
class ReplayVlm final : public VlmAdapter {
public:
    explicit ReplayVlm(std::string model_id) : id_(std::move(model_id)) {}

    static ReplayVlm from_file(const fs::path& path, const std::string& model_id) {
        ReplayVlm vlm(model_id);
        vlm.load(path);
        return vlm;
    }

    void load(const fs::path& path) {
        std::ifstream in(path);
        if (!in) throw Error("cannot open verdict file " + path.string());
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const Json j = Json::parse(line);
            if (j.value("model_id", id_) != id_) continue;
            add(j.at("content_hash").get<std::string>(), j.at("prompt").get<std::string>(), j.at("reply").get<std::string>());
        }
    }

    void add(std::string content_hash, std::string prompt, std::string reply) {
        auto key = std::pair{std::move(content_hash), std::move(prompt)};
        if (!replies_.emplace(std::move(key), std::move(reply)).second) throw Error("duplicate replay verdict");
    }

    std::size_t size() const noexcept { return replies_.size(); }

    const std::string& model_id() const override { return id_; }
    VlmCapabilities capabilities() const override { return {true, false, false}; }
    std::size_t max_concurrency() const override { return 64; }

    VlmReply ask(const Image& image, const std::string& prompt) override {
        const std::string hash = sha256_hex(encode_pnm(image));
        auto it = replies_.find({hash, prompt});
        if (it == replies_.end()) throw Error("no recorded verdict for image " + hash.substr(0, 12) + " and prompt '" + prompt + "'");
        return VlmReply{it->second, std::nullopt, std::nullopt};
    }

private:
    std::string id_;
    std::map<std::pair<std::string, std::string>, std::string> replies_;
};

/// Deterministic tiny raster used by the replay fixtures: four 16-bit gray
/// samples spelling out `tag` and `index`.
inline Bytes replay_fixture_image(std::uint16_t tag, std::uint32_t index) {
    Image img{4, 1, 1, 65535, {}};
    const std::uint16_t q[4] = {tag, static_cast<std::uint16_t>(index >> 16), static_cast<std::uint16_t>(index & 0xffff),
                                static_cast<std::uint16_t>(0x5a5a)};
    for (auto v : q) img.data.push_back(static_cast<double>(v) / 65535.0);
    return encode_pnm(img);
}

} // namespace dash
