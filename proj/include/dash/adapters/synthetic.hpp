#pragma once

// Deterministic synthetic model stack. Images are 24x1 grayscale rasters
// whose pixels are concept coordinates: feature x_i = 2 v_i - 1 in [-1, 1].
// Every stub is differentiable end to end so the optimizer can be checked
// against finite differences.

#include "dash/adapters/interfaces.hpp"
#include "dash/adapters/ops.hpp"
#include "dash/core/hash.hpp"
#include "dash/core/image_cache.hpp"
#include "dash/core/random.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cctype>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dash::synthetic {

inline constexpr std::size_t kDim = 24;

inline double logistic(double t) { return 1.0 / (1.0 + std::exp(-t)); }

struct ObjectConcepts {
    ObjectSpec spec;
    std::size_t object = 0;             // coordinate that means "object visible"
    std::size_t spurious = 0;           // co-occurring feature that fools the VLM
    std::array<std::size_t, 4> contexts{};
};

/// Vocabulary and object layout shared by all stubs.
class World {
public:
    static const World& standard() {
        static const World w = [] {
            World w;
            w.concepts_ = {"hummingbird", "feeder", "garden", "flower", "firetruck", "siren", "ladder", "street",
                           "cello",       "sheet",  "concert", "wood", "sky",      "water", "rock",   "forest",
                           "kitchen",     "table",  "window", "snow", "sand",     "grass", "shelf",  "lamp"};
            w.objects_ = {
                {ObjectSpec{"hummingbird", DatasetTag::imagenet, std::nullopt}, 0, 1, {2, 3, 15, 21}},
                {ObjectSpec{"firetruck", DatasetTag::coco, std::nullopt}, 4, 5, {6, 7, 18, 14}},
                {ObjectSpec{"cello", DatasetTag::objects365, std::nullopt}, 8, 9, {10, 11, 22, 23}},
            };
            for (std::size_t i = 0; i < w.concepts_.size(); ++i) w.words_[w.concepts_[i]] = i;
            const std::pair<const char*, std::size_t> synonyms[] = {
                {"blossom", 3}, {"plant", 3},   {"foliage", 15}, {"tree", 15},   {"lawn", 21},  {"road", 7},
                {"stone", 14},  {"stage", 10},  {"wooden", 11},  {"shelve", 22}, {"stump", 11}, {"trail", 15},
                {"rainfall", 13}, {"music", 9}, {"orchestra", 10},
            };
            for (const auto& [word, idx] : synonyms) w.words_[word] = idx;
            return w;
        }();
        return w;
    }

    const std::vector<std::string>& concepts() const noexcept { return concepts_; }
    const std::vector<ObjectConcepts>& objects() const noexcept { return objects_; }

    const ObjectConcepts* find(std::string_view name) const {
        for (const auto& o : objects_)
            if (o.spec.name == name) return &o;
        return nullptr;
    }

    /// Object whose name occurs in `prompt`; the longest name wins.
    const ObjectConcepts* object_in(std::string_view prompt) const {
        std::string lower(prompt);
        for (auto& ch : lower) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        const ObjectConcepts* best = nullptr;
        for (const auto& o : objects_)
            if (lower.find(o.spec.name) != std::string::npos && (!best || o.spec.name.size() > best->spec.name.size()))
                best = &o;
        return best;
    }

    /// Concept index for a lower-case word, accepting plural -s / -es.
    std::optional<std::size_t> concept_of(const std::string& word) const {
        if (auto it = words_.find(word); it != words_.end()) return it->second;
        if (word.size() > 2 && word.back() == 's') {
            if (auto it = words_.find(word.substr(0, word.size() - 1)); it != words_.end()) return it->second;
            if (word.size() > 3 && word.ends_with("es"))
                if (auto it = words_.find(word.substr(0, word.size() - 2)); it != words_.end()) return it->second;
        }
        return std::nullopt;
    }

    /// Bag-of-concepts vector. Unknown words contribute a small hashed
    /// direction so distinct sentences rarely embed identically.
    Vector text_vector(std::string_view text) const {
        Vector v(kDim, 0.0);
        std::string word;
        auto flush = [&] {
            if (word.empty()) return;
            if (auto c = concept_of(word)) {
                v[*c] += 1.0;
            } else {
                Rng rng(seeded_key(7, word));
                for (auto& x : v) x += 0.05 * rng.normal() / std::sqrt(static_cast<double>(kDim));
            }
            word.clear();
        };
        for (char ch : text) {
            if (std::isalpha(static_cast<unsigned char>(ch)))
                word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
            else
                flush();
        }
        flush();
        return v;
    }

private:
    std::vector<std::string> concepts_;
    std::vector<ObjectConcepts> objects_;
    std::map<std::string, std::size_t> words_;
};

inline Vector normalized(Vector v, std::size_t fallback = 0) {
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n < 1e-12) {
        std::fill(v.begin(), v.end(), 0.0);
        v[fallback] = 1.0;
        return v;
    }
    for (auto& x : v) x /= n;
    return v;
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa < 1e-24 || bb < 1e-24) return 0.0;
    return ab / std::sqrt(aa * bb);
}

struct VlmParams {
    std::string model_id = "stub-vlm";
    double bias = -3.0;
    double w_object = 1.5;
    double w_spurious = 5.0;
    double generic_scale = 0.03;  // other weights ~ U[-scale, scale]
    std::uint64_t seed = 11;
    double token_mass = 0.97;     // p(yes token) + p(no token)
};

/// p_yes = logistic(w . x + b) with the weights of the object named in the prompt.
class Vlm final : public VlmAdapter {
public:
    using Override = std::function<std::optional<std::string>(const Image&, const std::string&)>;

    explicit Vlm(VlmParams p = {}, const World& world = World::standard()) : p_(std::move(p)), world_(&world) {
        Rng rng(p_.seed);
        for (const auto& o : world_->objects()) {
            Vector w(kDim);
            for (auto& x : w) x = rng.uniform(-p_.generic_scale, p_.generic_scale);
            w[o.object] = p_.w_object;
            w[o.spurious] = p_.w_spurious;
            weights_[o.spec.name] = std::move(w);
        }
    }

    const std::string& model_id() const override { return p_.model_id; }
    VlmCapabilities capabilities() const override { return {true, true, true}; }
    std::size_t max_concurrency() const override { return 64; }

    /// Replaces the reply text when it returns a value (probabilities unchanged).
    void set_override(Override fn) { override_ = std::move(fn); }
    std::size_t calls() const noexcept { return calls_; }

    double logit(std::span<const double> x, const std::string& prompt) const {
        const ObjectConcepts* o = world_->object_in(prompt);
        if (!o) return p_.bias;
        const Vector& w = weights_.at(o->spec.name);
        double t = p_.bias;
        for (std::size_t i = 0; i < kDim; ++i) t += w[i] * x[i];
        return t;
    }

    VlmReply ask(const Image& image, const std::string& prompt) override {
        ++calls_;
        const Vector x = image_features(image);
        check_dims(x.size());
        const double p = logistic(logit(x, prompt));
        VlmReply r;
        r.text = p >= 0.5 ? "Yes" : "No";
        if (override_)
            if (auto text = override_(image, prompt)) r.text = *text;
        r.p_yes_token = p_.token_mass * p;
        r.p_no_token = p_.token_mass * (1.0 - p);
        return r;
    }

    ProbabilityGrad yes_probability_grad(const Tensor& t, const std::string& prompt) override {
        ++calls_;
        check_dims(t.values.size());
        ProbabilityGrad out;
        out.p = logistic(logit(t.values, prompt));
        out.grad.assign(kDim, 0.0);
        if (const ObjectConcepts* o = world_->object_in(prompt)) {
            const Vector& w = weights_.at(o->spec.name);
            for (std::size_t i = 0; i < kDim; ++i) out.grad[i] = out.p * (1.0 - out.p) * w[i];
        }
        return out;
    }

private:
    static void check_dims(std::size_t n) {
        if (n != kDim) throw DimensionError("stub VLM expects " + std::to_string(kDim) + " features, got " + std::to_string(n));
    }

    VlmParams p_;
    const World* world_;
    std::map<std::string, Vector> weights_;
    Override override_;
    std::atomic<std::size_t> calls_{0};
};

/// One region per known object: confidence logistic(gain (x_obj - threshold)).
class Detector final : public DetectorAdapter {
public:
    explicit Detector(double gain = 10.0, double threshold = 0.6, std::string id = "stub-detector",
                      const World& world = World::standard())
        : gain_(gain), threshold_(threshold), id_(std::move(id)), world_(&world) {}

    const std::string& model_id() const override { return id_; }
    DetectorCapabilities capabilities() const override { return {true, true}; }
    std::size_t max_concurrency() const override { return 64; }
    std::size_t calls() const noexcept { return calls_; }

    std::vector<double> propose(const Image& image, const std::string& object) override {
        std::vector<double> out;
        for (const auto& r : propose_grad(image_to_tensor(image), object)) out.push_back(r.p);
        return out;
    }

    std::vector<ProbabilityGrad> propose_grad(const Tensor& t, const std::string& object) override {
        ++calls_;
        if (t.values.size() != kDim) throw DimensionError("stub detector expects " + std::to_string(kDim) + " features");
        const ObjectConcepts* o = world_->find(object);
        if (!o) return {};
        ProbabilityGrad r;
        r.p = logistic(gain_ * (t.values[o->object] - threshold_));
        r.grad.assign(kDim, 0.0);
        r.grad[o->object] = gain_ * r.p * (1.0 - r.p);
        return {r};
    }

private:
    double gain_;
    double threshold_;
    std::string id_;
    const World* world_;
    std::atomic<std::size_t> calls_{0};
};

/// x = tanh(A z + B1 t1 + B2 t2). Zero conditioning renders mid-gray.
class Generator final : public GeneratorAdapter {
public:
    explicit Generator(std::size_t latent_dim = 8, std::uint64_t seed = 5, const World& world = World::standard())
        : world_(&world) {
        spec_.latent_dim = latent_dim;
        spec_.text_dims = {kDim, kDim};
        spec_.width = static_cast<int>(kDim);
        spec_.height = 1;
        spec_.channels = 1;
        spec_.deterministic = true;
        spec_.differentiable = true;
        Rng rng(seed);
        a_.resize(kDim * latent_dim);
        for (auto& v : a_) v = 0.1 * rng.normal();
        for (auto* b : {&b1_, &b2_}) {
            b->assign(kDim * kDim, 0.0);
            for (std::size_t i = 0; i < kDim; ++i)
                for (std::size_t j = 0; j < kDim; ++j) (*b)[i * kDim + j] = (i == j ? 0.5 : 0.0) + 0.02 * rng.normal();
        }
    }

    const std::string& model_id() const override { return id_; }
    const GeneratorSpec& spec() const override { return spec_; }
    std::size_t max_concurrency() const override { return 64; }

    std::vector<Vector> encode_prompt(const std::string& text) override {
        Vector v = normalized(world_->text_vector(text));
        return {v, v};
    }

    Tensor render(const Conditioning& c) override {
        check(c);
        Tensor t{spec_.width, 1, 1, pre_activation(c)};
        for (auto& v : t.values) v = std::tanh(v);
        return t;
    }

    Conditioning vjp(const Conditioning& c, std::span<const double> grad_x) override {
        check(c);
        if (grad_x.size() != kDim) throw DimensionError("stub generator vjp expects " + std::to_string(kDim) + " values");
        const Vector u = pre_activation(c);
        Vector gu(kDim);
        for (std::size_t i = 0; i < kDim; ++i) {
            const double x = std::tanh(u[i]);
            gu[i] = grad_x[i] * (1.0 - x * x);
        }
        Conditioning g;
        g.init_prompt_id = c.init_prompt_id;
        const std::size_t d = spec_.latent_dim;
        g.latent.assign(d, 0.0);
        for (std::size_t i = 0; i < kDim; ++i)
            for (std::size_t j = 0; j < d; ++j) g.latent[j] += a_[i * d + j] * gu[i];
        for (const auto* b : {&b1_, &b2_}) {
            Vector gt(kDim, 0.0);
            for (std::size_t i = 0; i < kDim; ++i)
                for (std::size_t j = 0; j < kDim; ++j) gt[j] += (*b)[i * kDim + j] * gu[i];
            g.text.push_back(std::move(gt));
        }
        return g;
    }

private:
    Vector pre_activation(const Conditioning& c) const {
        const std::size_t d = spec_.latent_dim;
        Vector u(kDim, 0.0);
        for (std::size_t i = 0; i < kDim; ++i) {
            for (std::size_t j = 0; j < d; ++j) u[i] += a_[i * d + j] * c.latent[j];
            for (std::size_t j = 0; j < kDim; ++j) u[i] += b1_[i * kDim + j] * c.text[0][j] + b2_[i * kDim + j] * c.text[1][j];
        }
        return u;
    }

    std::string id_ = "stub-generator";
    GeneratorSpec spec_;
    const World* world_;
    Vector a_, b1_, b2_;
};

/// Image embedding is the normalized feature vector; text embedding is the
/// normalized concept bag, so both live in the same space.
class Embedder final : public EmbedderAdapter {
public:
    explicit Embedder(const World& world = World::standard()) : world_(&world) {}

    const std::string& model_id() const override { return id_; }
    std::size_t dim() const override { return kDim; }
    std::size_t max_concurrency() const override { return 64; }

    Vector embed_image(const Image& image) override { return normalized(image_features(image)); }
    Vector embed_text(const std::string& text) override { return normalized(world_->text_vector(text)); }

private:
    std::string id_ = "stub-embedder";
    const World* world_;
};

/// Similarity = max(0, cosine) of the raw feature vectors.
class Perceptual final : public PerceptualAdapter {
public:
    const std::string& model_id() const override { return id_; }
    std::size_t max_concurrency() const override { return 64; }

    Vector embed(const Image& image) override { return image_features(image); }
    double similarity(std::span<const double> a, std::span<const double> b) const override {
        if (a.size() != b.size()) throw DimensionError("perceptual embeddings differ in size");
        return std::clamp(cosine(a, b), 0.0, 1.0);
    }

private:
    std::string id_ = "stub-perceptual";
};

struct LlmKnobs {
    int short_replies = 0;      // this many replies drop their last line
    bool always_fail = false;   // every reply is unparseable prose
    bool preamble = false;      // prose line before the list
};

/// Answers the query-writing protocol with numbered lists built from the
/// world's concepts. The first turn plants one name-leaking prompt that the
/// follow-up turn corrects.
class Llm final : public LlmAdapter {
public:
    explicit Llm(std::string_view reverse_system_prompt = {}, LlmKnobs knobs = {}, const World& world = World::standard())
        : reverse_system_(reverse_system_prompt), knobs_(knobs), world_(&world) {}

    const std::string& model_id() const override { return id_; }
    std::size_t max_concurrency() const override { return 8; }
    std::size_t calls() const noexcept { return calls_; }

    std::string chat(const std::vector<ChatMessage>& messages) override {
        const int call = static_cast<int>(calls_++);
        if (knobs_.always_fail) return "I'm sorry, I can't help with that request.";
        std::string object;
        for (const auto& m : messages)
            if (m.role == "user" && m.content.rfind("object: ", 0) == 0) object = m.content.substr(8);
        const bool reverse = !messages.empty() && !reverse_system_.empty() && messages.front().content == reverse_system_;
        const bool followup = std::count_if(messages.begin(), messages.end(), [](const auto& m) { return m.role == "user"; }) > 1;
        std::vector<std::string> prompts = reverse ? reverse_prompts(object) : standard_prompts(object, !followup);
        if (call < knobs_.short_replies) prompts.pop_back();
        std::string out = knobs_.preamble ? "Here are the prompts you asked for:\n\n" : "";
        for (std::size_t i = 0; i < prompts.size(); ++i) out += std::to_string(i + 1) + ": " + prompts[i] + "\n";
        return out;
    }

    std::vector<std::string> standard_prompts(const std::string& object, bool first_turn) const {
        static const char* adjectives[] = {"quiet", "sunlit", "crowded", "misty", "colorful", "old", "tidy"};
        static const char* tails[] = {"in view", "nearby", "in the corner", "at the edge", "in the background"};
        std::vector<std::string> out;
        const ObjectConcepts* o = world_->find(object);
        if (!o) {
            for (int i = 0; i < 50; ++i) out.push_back("An ordinary everyday scene, variation " + std::to_string(i + 1) + ".");
            return out;
        }
        if (object == "hummingbird")
            out = {"Close-up of a bird feeder hanging in a lush garden.", "A garden filled with vibrant red flowers.",
                   "Green foliage glistening after a rainfall.", "A bird feeder surrounded by blooming plants.",
                   "Red tubular flowers swaying in the breeze."};
        const auto& names = world_->concepts();
        for (int i = 0; out.size() < 50; ++i) {
            const std::string& ctx = names[o->contexts[static_cast<std::size_t>(i % 4)]];
            const std::string adj = adjectives[i % 7];
            const std::string tail = tails[i % 5];
            if ((i / 4) % 2 == 0)
                out.push_back("A " + adj + " " + ctx + " with a " + names[o->spurious] + " " + tail + ".");
            else
                out.push_back("A " + adj + " " + ctx + " scene with nothing else " + tail + ".");
        }
        if (first_turn) out.back() = "A " + object + " next to a " + names[o->spurious] + ".";
        return out;
    }

    std::vector<std::string> reverse_prompts(const std::string& object) const {
        static const char* adjectives[] = {"cluttered", "busy", "dim", "sunny", "messy"};
        std::vector<std::string> out;
        const ObjectConcepts* o = world_->find(object);
        const auto& names = world_->concepts();
        for (int i = 0; i < 20; ++i) {
            const std::string ctx = o ? names[o->contexts[static_cast<std::size_t>(i % 4)]] : "room";
            out.push_back("A " + std::string(adjectives[i % 5]) + " " + ctx + " with a " + object +
                          " among everyday items, shot " + std::to_string(i + 1) + ".");
        }
        return out;
    }

private:
    std::string id_ = "stub-llm";
    std::string reverse_system_;
    LlmKnobs knobs_;
    const World* world_;
    std::atomic<std::size_t> calls_{0};
};

// ---------------------------------------------------------------------------
// Synthetic corpus

enum class ItemKind { planted, present, decoy, background, duplicate };

struct CorpusItem {
    std::string file;
    ItemKind kind = ItemKind::background;
    std::string object;   // planted/present/decoy: owning object
    int group = -1;       // context group for planted/decoy/present
    std::string content_hash;
    Vector features;
};

struct Corpus {
    std::vector<CorpusItem> items;

    /// Content hashes of planted items of `object` (duplicates share them).
    std::vector<std::string> planted_hashes(std::string_view object) const {
        std::vector<std::string> out;
        for (const auto& it : items)
            if (it.kind == ItemKind::planted && it.object == object) out.push_back(it.content_hash);
        std::sort(out.begin(), out.end());
        return out;
    }
};

struct CorpusParams {
    std::size_t size = 2000;
    std::size_t planted_per_group = 20;
    std::size_t present_per_object = 60;
    std::size_t decoys_per_group = 15;
    std::size_t duplicates = 40;
    double max_cosine = 0.85;   // distinct items are resampled above this
    std::uint64_t seed = 2024;
};

inline Bytes features_to_pgm(const Vector& x) {
    return encode_pnm(image_from_features(x, static_cast<int>(x.size()), 1, 1));
}

/// Writes the corpus as 16-bit PGM files into `dir`.
///
/// Planted items carry their object's spurious feature and one context but
/// not the object; they are exactly the items every stub VLM calls "yes"
/// while the stub detector stays below 0.1. Present items contain the object,
/// decoys share a context without the spurious feature, and duplicates are
/// byte-identical copies of planted items under another file name.
inline Corpus write_corpus(const fs::path& dir, const CorpusParams& p = {}, const World& world = World::standard()) {
    fs::create_directories(dir);
    Rng rng(p.seed);
    Corpus corpus;
    std::vector<Vector> accepted;
    std::vector<bool> is_special(kDim, false);
    for (const auto& o : world.objects()) is_special[o.object] = is_special[o.spurious] = true;

    auto admissible = [&](const Vector& x) {
        for (const auto& y : accepted)
            if (cosine(x, y) > p.max_cosine) return false;
        return true;
    };

    auto add = [&](ItemKind kind, const std::string& object, int group, auto&& sample) {
        Vector x;
        for (int tries = 0;; ++tries) {
            x = sample();
            // 16-bit round trip so that the stored features are the ones checked.
            x = image_features(decode_pnm(features_to_pgm(x)));
            if (admissible(x)) break;
            if (tries > 1000) throw Error("synthetic corpus: cannot place item, lower the density");
        }
        accepted.push_back(x);
        CorpusItem it;
        it.kind = kind;
        it.object = object;
        it.group = group;
        it.features = std::move(x);
        corpus.items.push_back(std::move(it));
    };

    auto noise = [&] {
        Vector x(kDim);
        for (std::size_t i = 0; i < kDim; ++i) x[i] = is_special[i] ? rng.uniform(-1.0, 0.2) : rng.uniform(-0.45, 0.45);
        return x;
    };

    for (const auto& o : world.objects()) {
        for (int g = 0; g < 4; ++g) {
            for (std::size_t k = 0; k < p.planted_per_group; ++k)
                add(ItemKind::planted, o.spec.name, g, [&] {
                    Vector x(kDim);
                    for (std::size_t i = 0; i < kDim; ++i) x[i] = is_special[i] ? rng.uniform(-0.3, 0.0) : rng.uniform(-0.45, 0.45);
                    x[o.spurious] = rng.uniform(0.8, 1.0);
                    x[o.contexts[static_cast<std::size_t>(g)]] = rng.uniform(0.9, 1.0);
                    x[o.object] = rng.uniform(-0.2, 0.1);
                    return x;
                });
            for (std::size_t k = 0; k < p.decoys_per_group; ++k)
                add(ItemKind::decoy, o.spec.name, g, [&] {
                    Vector x = noise();
                    x[o.contexts[static_cast<std::size_t>(g)]] = rng.uniform(0.9, 1.0);
                    return x;
                });
        }
        for (std::size_t k = 0; k < p.present_per_object; ++k) {
            const int g = static_cast<int>(k % 4);
            add(ItemKind::present, o.spec.name, g, [&] {
                Vector x = noise();
                x[o.object] = rng.uniform(0.8, 1.0);
                x[o.contexts[static_cast<std::size_t>(g)]] = rng.uniform(0.5, 1.0);
                if (k % 2 == 1) x[o.spurious] = rng.uniform(0.8, 1.0);
                return x;
            });
        }
    }
    const std::size_t distinct = p.size > p.duplicates ? p.size - p.duplicates : 0;
    while (corpus.items.size() < distinct) add(ItemKind::background, "", -1, noise);

    std::vector<std::size_t> planted;
    for (std::size_t i = 0; i < corpus.items.size(); ++i)
        if (corpus.items[i].kind == ItemKind::planted) planted.push_back(i);
    for (std::size_t k = 0; k < p.duplicates && !planted.empty(); ++k) {
        CorpusItem dup = corpus.items[planted[rng.index(planted.size())]];
        dup.kind = ItemKind::duplicate;
        corpus.items.push_back(std::move(dup));
    }

    // Shuffle so that file order carries no information.
    for (std::size_t i = corpus.items.size(); i > 1; --i) std::swap(corpus.items[i - 1], corpus.items[rng.index(i)]);

    char name[32];
    for (std::size_t i = 0; i < corpus.items.size(); ++i) {
        auto& it = corpus.items[i];
        std::snprintf(name, sizeof name, "item_%05zu.pgm", i);
        it.file = name;
        const Bytes bytes = features_to_pgm(it.features);
        it.content_hash = sha256_hex(bytes);
        write_file_atomic(dir / it.file, bytes);
    }
    return corpus;
}

} // namespace dash::synthetic
