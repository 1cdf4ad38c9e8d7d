#pragma once

#include "dash/core/errors.hpp"
#include "dash/core/image.hpp"
#include "dash/core/types.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace dash {

/// Pre-clamp image in feature space ([-1, 1] nominal). Differentiable adapters
/// take and return gradients with respect to `values`.
struct Tensor {
    int width = 0;
    int height = 0;
    int channels = 1;
    Vector values;
};

inline Image tensor_to_image(const Tensor& t) { return image_from_features(t.values, t.width, t.height, t.channels); }

inline Tensor image_to_tensor(const Image& img) { return Tensor{img.width, img.height, img.channels, image_features(img)}; }

/// Probability plus its gradient with respect to the input tensor values.
struct ProbabilityGrad {
    double p = 0.0;
    Vector grad;
};

struct VlmCapabilities {
    bool answer_only = true;
    bool yes_probability = false;
    bool differentiable = false;

    void validate() const {
        if (differentiable && !yes_probability) throw ConfigError("differentiable VLM must expose yes-probability");
    }
};

/// Free-text reply plus, when available, first-position token probabilities
/// of the affirmative and negative answer tokens.
struct VlmReply {
    std::string text;
    std::optional<double> p_yes_token;
    std::optional<double> p_no_token;
};

class VlmAdapter {
public:
    virtual ~VlmAdapter() = default;

    virtual const std::string& model_id() const = 0;
    virtual VlmCapabilities capabilities() const = 0;
    virtual std::size_t max_concurrency() const { return 1; }

    virtual VlmReply ask(const Image& image, const std::string& prompt) = 0;

    /// Renormalized yes-probability and its gradient. Only for differentiable adapters.
    virtual ProbabilityGrad yes_probability_grad(const Tensor&, const std::string&) {
        throw Error("VLM '" + model_id() + "' is not differentiable");
    }

    /// Renormalized yes-probability without the gradient.
    virtual double yes_probability(const Tensor& t, const std::string& prompt) { return yes_probability_grad(t, prompt).p; }
};

struct DetectorCapabilities {
    bool score_only = true;
    bool differentiable = false;
};

class DetectorAdapter {
public:
    virtual ~DetectorAdapter() = default;

    virtual const std::string& model_id() const = 0;
    virtual DetectorCapabilities capabilities() const = 0;
    virtual std::size_t max_concurrency() const { return 1; }

    /// Confidence of every proposed region for `object`. May be empty.
    virtual std::vector<double> propose(const Image& image, const std::string& object) = 0;

    /// Per-region confidences with gradients. Only for differentiable adapters.
    virtual std::vector<ProbabilityGrad> propose_grad(const Tensor&, const std::string&) {
        throw Error("detector '" + model_id() + "' is not differentiable");
    }

    std::vector<double> propose_tensor(const Tensor& t, const std::string& object) {
        std::vector<double> out;
        for (const auto& r : propose_grad(t, object)) out.push_back(r.p);
        return out;
    }
};

/// The variables that fully determine a generated image: a Gaussian latent
/// plus one encoding per prompt encoder.
struct Conditioning {
    Vector latent;
    std::vector<Vector> text;
    std::string init_prompt_id;

    std::size_t parameter_count() const {
        std::size_t n = latent.size();
        for (const auto& t : text) n += t.size();
        return n;
    }
};

/// Flatten conditioning into [latent, text_0, text_1, ...].
inline Vector flatten(const Conditioning& c) {
    Vector out(c.latent);
    for (const auto& t : c.text) out.insert(out.end(), t.begin(), t.end());
    return out;
}

/// Inverse of flatten using `shape` for the block sizes.
inline Conditioning unflatten(std::span<const double> flat, const Conditioning& shape) {
    if (flat.size() != shape.parameter_count()) throw DimensionError("flat conditioning size mismatch");
    Conditioning c;
    c.init_prompt_id = shape.init_prompt_id;
    auto it = flat.begin();
    c.latent.assign(it, it + static_cast<std::ptrdiff_t>(shape.latent.size()));
    it += static_cast<std::ptrdiff_t>(shape.latent.size());
    for (const auto& t : shape.text) {
        c.text.emplace_back(it, it + static_cast<std::ptrdiff_t>(t.size()));
        it += static_cast<std::ptrdiff_t>(t.size());
    }
    return c;
}

struct GeneratorSpec {
    std::size_t latent_dim = 0;
    std::vector<std::size_t> text_dims;
    int width = 0;
    int height = 0;
    int channels = 1;
    bool deterministic = true;
    bool differentiable = false;
};

class GeneratorAdapter {
public:
    virtual ~GeneratorAdapter() = default;

    virtual const std::string& model_id() const = 0;
    virtual const GeneratorSpec& spec() const = 0;
    virtual std::size_t max_concurrency() const { return 1; }

    /// One encoding per prompt encoder, matching spec().text_dims.
    virtual std::vector<Vector> encode_prompt(const std::string& text) = 0;

    virtual Tensor render(const Conditioning& c) = 0;

    /// Vector-Jacobian product: gradient of a scalar with respect to the
    /// conditioning, given its gradient with respect to the rendered tensor.
    virtual Conditioning vjp(const Conditioning&, std::span<const double>) {
        throw Error("generator '" + model_id() + "' is not differentiable");
    }

    void check(const Conditioning& c) const {
        const auto& s = spec();
        if (c.latent.size() != s.latent_dim)
            throw DimensionError("latent has " + std::to_string(c.latent.size()) + " dims, generator expects " +
                                 std::to_string(s.latent_dim));
        if (c.text.size() != s.text_dims.size())
            throw DimensionError("expected " + std::to_string(s.text_dims.size()) + " text conditionings, got " +
                                 std::to_string(c.text.size()));
        for (std::size_t i = 0; i < c.text.size(); ++i)
            if (c.text[i].size() != s.text_dims[i])
                throw DimensionError("text conditioning " + std::to_string(i) + " has wrong dimension");
    }
};

class EmbedderAdapter {
public:
    virtual ~EmbedderAdapter() = default;

    virtual const std::string& model_id() const = 0;
    virtual std::size_t dim() const = 0;
    virtual std::size_t max_concurrency() const { return 1; }

    /// Unit-norm embeddings in a shared image/text space.
    virtual Vector embed_image(const Image& image) = 0;
    virtual Vector embed_text(const std::string& text) = 0;
};

/// Perceptual similarity in [0, 1], symmetric in its arguments.
class PerceptualAdapter {
public:
    virtual ~PerceptualAdapter() = default;

    virtual const std::string& model_id() const = 0;
    virtual std::size_t max_concurrency() const { return 1; }

    virtual Vector embed(const Image& image) = 0;
    virtual double similarity(std::span<const double> a, std::span<const double> b) const = 0;
};

struct ChatMessage {
    std::string role;  // "system" | "user" | "assistant"
    std::string content;
};

class LlmAdapter {
public:
    virtual ~LlmAdapter() = default;

    virtual const std::string& model_id() const = 0;
    virtual std::size_t max_concurrency() const { return 1; }

    virtual std::string chat(const std::vector<ChatMessage>& messages) = 0;
};

} // namespace dash
