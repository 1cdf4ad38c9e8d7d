#pragma once

#include "dash/adapters/interfaces.hpp"
#include "dash/adapters/prompt_bank.hpp"
#include "dash/core/image_cache.hpp"
#include "dash/core/types.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <condition_variable>
#include <random>
#include <mutex>
#include <string>
#include <string_view>

namespace dash {

/// First reply token, case-insensitive: "yes"/"no" (optionally followed by
/// punctuation) map to the answer, anything else is invalid.
inline Answer parse_answer(std::string_view reply) {
    std::size_t i = 0;
    while (i < reply.size() && !std::isalnum(static_cast<unsigned char>(reply[i]))) ++i;
    std::string token;
    while (i < reply.size() && std::isalpha(static_cast<unsigned char>(reply[i])))
        token.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(reply[i++]))));
    if (token == "yes") return Answer::yes;
    if (token == "no") return Answer::no;
    return Answer::invalid;
}

/// Bounds concurrent calls into one adapter.
class ConcurrencyGate {
public:
    explicit ConcurrencyGate(std::size_t limit) : limit_(std::max<std::size_t>(1, limit)) {}

    class Permit {
    public:
        explicit Permit(ConcurrencyGate& g) : gate_(&g) { gate_->acquire(); }
        Permit(const Permit&) = delete;
        Permit& operator=(const Permit&) = delete;
        ~Permit() { gate_->release(); }

    private:
        ConcurrencyGate* gate_;
    };

    Permit permit() { return Permit(*this); }
    std::size_t limit() const noexcept { return limit_; }
    std::size_t peak() const {
        std::lock_guard lock(mutex_);
        return peak_;
    }

private:
    void acquire() {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return active_ < limit_; });
        ++active_;
        peak_ = std::max(peak_, active_);
    }

    void release() {
        {
            std::lock_guard lock(mutex_);
            --active_;
        }
        cv_.notify_one();
    }

    std::size_t limit_;
    std::size_t active_ = 0;
    std::size_t peak_ = 0;
    mutable std::mutex mutex_;
    std::condition_variable cv_;
};

/// Runs `fn`, retrying up to `retries` extra times on TransportError.
template <class Fn>
auto with_retries(int retries, Fn&& fn) -> decltype(fn()) {
    for (int attempt = 0;; ++attempt) {
        try {
            return fn();
        } catch (const TransportError&) {
            if (attempt >= retries) throw;
        }
    }
}

inline void check_probability(double p, std::string_view what) {
    if (!(p >= 0.0 && p <= 1.0)) throw TransportError(std::string(what) + " outside [0,1]: " + std::to_string(p));
}

/// Asks the standard-form yes/no question about `object`. The reply is parsed
/// from its first token; yes-probability is recorded both raw and
/// renormalized over {yes, no} when the adapter exposes token probabilities.
inline Evaluation ask_yes_no(VlmAdapter& vlm, const Image& image, const ObjectSpec& object, const PromptBank& bank,
                             std::string_view template_id) {
    Evaluation ev;
    ev.model_id = vlm.model_id();
    ev.template_id = std::string(template_id);
    ev.prompt = bank.full_prompt(template_id, object.name);
    const VlmReply reply = vlm.ask(image, ev.prompt);
    ev.reply = reply.text;
    ev.answer = parse_answer(reply.text);
    if (reply.p_yes_token) {
        const double py = *reply.p_yes_token;
        check_probability(py, "yes-token probability");
        ev.p_yes_raw = py;
        if (reply.p_no_token) {
            const double pn = *reply.p_no_token;
            check_probability(pn, "no-token probability");
            ev.p_yes = (py + pn) > 0.0 ? py / (py + pn) : 0.0;
        } else {
            ev.p_yes = py;
        }
    }
    return ev;
}

/// Max over region confidences; 0 when the detector proposes nothing.
inline double max_region_score(std::span<const double> regions) {
    double best = 0.0;
    for (double r : regions) {
        check_probability(r, "detector confidence");
        best = std::max(best, r);
    }
    return best;
}

inline double detect(DetectorAdapter& det, const Image& image, const ObjectSpec& object) {
    if (object.name.empty()) throw Error("detect: object name must be non-empty");
    return max_region_score(det.propose(image, object.name));
}

/// Gaussian latent of dimension `dim` from a seed. Box-Muller over the
/// mt19937_64 stream, so the same seed yields the same latent everywhere.
inline Vector sample_latent(std::size_t dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto uniform = [&] { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; };
    Vector z(dim);
    for (std::size_t i = 0; i < dim; i += 2) {
        const double r = std::sqrt(-2.0 * std::log(uniform()));
        const double theta = 2.0 * 3.14159265358979323846 * uniform();
        z[i] = r * std::cos(theta);
        if (i + 1 < dim) z[i + 1] = r * std::sin(theta);
    }
    return z;
}

struct GeneratedImage {
    Tensor tensor;
    Image image;
    ImageRecord record;
};

/// Renders `c` and registers the result in the image cache.
inline GeneratedImage generate(GeneratorAdapter& gen, const Conditioning& c, ImageCache& cache,
                               const std::string& parent_id = {}) {
    gen.check(c);
    GeneratedImage out;
    out.tensor = gen.render(c);
    out.image = tensor_to_image(out.tensor);
    const Bytes bytes = encode_pnm(out.image);
    out.record = cache.put(bytes, "generated:" + gen.model_id(), Lineage{Stage::generated, parent_id});
    return out;
}

} // namespace dash
