#pragma once

#include "dash/adapters/interfaces.hpp"
#include "dash/adapters/ops.hpp"
#include "dash/adapters/prompt_bank.hpp"
#include "dash/core/image_cache.hpp"
#include "dash/core/types.hpp"
#include "dash/core/worker_pool.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace dash {

struct Neighbor {
    std::string item_id;
    std::string uri;
    double similarity = 0.0;
};

/// kNN index over unit-norm embeddings. Results are sorted by descending
/// similarity.
class IndexAdapter {
public:
    virtual ~IndexAdapter() = default;

    virtual const std::string& index_id() const = 0;
    virtual std::size_t size() const = 0;
    virtual std::size_t dim() const = 0;

    /// Up to ceil(k * overfetch) neighbors of `embedding`.
    virtual std::vector<Neighbor> query(std::span<const double> embedding, std::size_t k, double overfetch) const = 0;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("dot: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline Vector l2_normalize(Vector v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n == 0.0) throw DimensionError("cannot normalize a zero vector");
    for (auto& x : v) x /= n;
    return v;
}

inline bool is_image_file(const fs::path& p) {
    const auto ext = p.extension().string();
    return ext == ".pgm" || ext == ".ppm" || ext == ".pnm";
}

/// Brute-force index for desk-scale corpora. Ties in similarity are ordered
/// by item id so rankings are reproducible.
class FlatIndex final : public IndexAdapter {
public:
    explicit FlatIndex(std::string id = "flat") : id_(std::move(id)) {}

    /// Indexes every netpbm file under `dir` (sorted by path) with `embedder`.
    static FlatIndex build(const fs::path& dir, EmbedderAdapter& embedder, std::string id = "flat") {
        FlatIndex index(std::move(id));
        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(dir))
            if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            const Image img = decode_pnm(read_file_bytes(f));
            index.add(fs::relative(f, dir).string(), fs::absolute(f).string(), embedder.embed_image(img));
        }
        return index;
    }

    void add(std::string item_id, std::string uri, Vector embedding) {
        if (dim_ == 0) dim_ = embedding.size();
        if (embedding.size() != dim_) throw DimensionError("index embedding dimension mismatch");
        items_.push_back({std::move(item_id), std::move(uri), l2_normalize(std::move(embedding))});
    }

    const std::string& index_id() const override { return id_; }
    std::size_t size() const override { return items_.size(); }
    std::size_t dim() const override { return dim_; }

    std::vector<Neighbor> query(std::span<const double> embedding, std::size_t k, double overfetch) const override {
        if (embedding.size() != dim_) throw DimensionError("query embedding has wrong dimension");
        const auto want = std::min(items_.size(), static_cast<std::size_t>(std::ceil(static_cast<double>(k) * std::max(1.0, overfetch))));
        std::vector<std::pair<double, std::size_t>> scored(items_.size());
        for (std::size_t i = 0; i < items_.size(); ++i) scored[i] = {dot(items_[i].embedding, embedding), i};
        auto better = [&](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return items_[a.second].id < items_[b.second].id;
        };
        std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(want), scored.end(), better);
        std::vector<Neighbor> out;
        out.reserve(want);
        for (std::size_t i = 0; i < want; ++i) {
            const auto& it = items_[scored[i].second];
            out.push_back({it.id, it.uri, std::clamp(scored[i].first, -1.0, 1.0)});
        }
        return out;
    }

private:
    struct Item {
        std::string id;
        std::string uri;
        Vector embedding;
    };
    std::string id_;
    std::size_t dim_ = 0;
    std::vector<Item> items_;
};

class ImageFetcher {
public:
    virtual ~ImageFetcher() = default;
    /// Raw bytes behind `uri`; TransportError when unreachable.
    virtual Bytes fetch(const std::string& uri) = 0;
};

/// Local paths and file:// URIs.
class FileFetcher final : public ImageFetcher {
public:
    Bytes fetch(const std::string& uri) override {
        std::string path = uri.rfind("file://", 0) == 0 ? uri.substr(7) : uri;
        std::error_code ec;
        if (!fs::is_regular_file(path, ec)) throw TransportError("unreachable: " + uri);
        return read_file_bytes(path);
    }
};

// -- dedup ----------------------------------------------------------------------

struct DedupResult {
    static constexpr std::size_t kSeed = std::numeric_limits<std::size_t>::max();

    std::vector<std::size_t> retained;                       // indices, rank order
    std::vector<std::pair<std::size_t, std::size_t>> dropped;  // (candidate, blocker or kSeed)
};

/// Greedy scan in rank order: a candidate is dropped iff its similarity to an
/// already retained candidate, or to `seed`, exceeds `threshold`. Stops once
/// `limit` candidates are retained.
inline DedupResult dedup(const std::vector<Vector>& candidates, const PerceptualAdapter& perceptual,
                         double threshold = 0.9, const Vector* seed = nullptr,
                         std::size_t limit = std::numeric_limits<std::size_t>::max()) {
    DedupResult r;
    for (std::size_t i = 0; i < candidates.size() && r.retained.size() < limit; ++i) {
        if (seed && perceptual.similarity(candidates[i], *seed) > threshold) {
            r.dropped.emplace_back(i, DedupResult::kSeed);
            continue;
        }
        bool dup = false;
        for (std::size_t j : r.retained)
            if (perceptual.similarity(candidates[i], candidates[j]) > threshold) {
                r.dropped.emplace_back(i, j);
                dup = true;
                break;
            }
        if (!dup) r.retained.push_back(i);
    }
    return r;
}

// -- filter policy ------------------------------------------------------------------

enum class FilterMode { hallucination, reverse };

inline std::string_view to_string(FilterMode m) { return m == FilterMode::hallucination ? "hallucination" : "reverse"; }

inline FilterMode parse_filter_mode(std::string_view s) {
    if (s == "hallucination") return FilterMode::hallucination;
    if (s == "reverse") return FilterMode::reverse;
    throw ConfigError("mode must be 'hallucination' or 'reverse', got '" + std::string(s) + "'");
}

/// Hallucination: keep iff p_det <= det_reject and the VLM says yes.
/// Reverse: keep iff p_det >= det_accept and the VLM says no.
struct FilterPolicy {
    FilterMode mode = FilterMode::hallucination;
    double det_reject = 0.1;
    double det_accept = 0.5;

    void validate() const {
        if (!(det_reject > 0 && det_reject < 1) || !(det_accept > 0 && det_accept < 1))
            throw ConfigError("filter thresholds must lie in (0, 1)");
    }

    /// Whether the detector alone already rejects the image.
    bool detector_passes(double p_det) const {
        return mode == FilterMode::hallucination ? p_det <= det_reject : p_det >= det_accept;
    }

    bool keep(double p_det, std::optional<Answer> answer) const {
        if (!detector_passes(p_det) || !answer) return false;
        return mode == FilterMode::hallucination ? *answer == Answer::yes : *answer == Answer::no;
    }

    bool keep(const Evaluation& e) const { return e.p_det && keep(*e.p_det, e.answer); }
};

// -- retrieval -------------------------------------------------------------------

struct RetrievalConfig {
    std::size_t k_explore = 20;
    std::size_t k_exploit = 50;
    double overfetch = 3.0;
    double dedup_threshold = 0.9;
    int download_retries = 2;
    std::string template_id = std::string(kStandardTemplate);

    void validate() const {
        if (k_explore == 0 || k_exploit == 0) throw ConfigError("retrieval k must be positive");
        if (overfetch < 1.0) throw ConfigError("retrieval overfetch must be >= 1");
        if (!(dedup_threshold > 0 && dedup_threshold <= 1)) throw ConfigError("dedup threshold must lie in (0, 1]");
        if (download_retries < 0) throw ConfigError("download_retries must be >= 0");
    }
};

struct RetrievalStats {
    std::size_t batches = 0;
    std::size_t neighbors = 0;
    std::size_t candidates = 0;          // evaluated after dedup
    std::size_t skipped_downloads = 0;
    std::size_t decode_failures = 0;
    std::size_t near_duplicates = 0;
    std::size_t cross_batch_duplicates = 0;
    std::size_t detector_rejects = 0;
    std::size_t vlm_answers = 0;
    std::size_t survivors = 0;

    RetrievalStats& operator+=(const RetrievalStats& o) {
        batches += o.batches;
        neighbors += o.neighbors;
        candidates += o.candidates;
        skipped_downloads += o.skipped_downloads;
        decode_failures += o.decode_failures;
        near_duplicates += o.near_duplicates;
        cross_batch_duplicates += o.cross_batch_duplicates;
        detector_rejects += o.detector_rejects;
        vlm_answers += o.vlm_answers;
        survivors += o.survivors;
        return *this;
    }
};

inline void to_json(Json& j, const RetrievalStats& s) {
    j = Json{{"batches", s.batches},
             {"neighbors", s.neighbors},
             {"candidates", s.candidates},
             {"skipped_downloads", s.skipped_downloads},
             {"decode_failures", s.decode_failures},
             {"near_duplicates", s.near_duplicates},
             {"cross_batch_duplicates", s.cross_batch_duplicates},
             {"detector_rejects", s.detector_rejects},
             {"vlm_answers", s.vlm_answers},
             {"survivors", s.survivors}};
}

struct RetrievalResult {
    std::vector<ImageRecord> survivors;   // pass the filter, unique by content hash
    std::vector<ImageRecord> candidates;  // every evaluated record, survivors included
    RetrievalStats stats;
};

struct RetrievalContext {
    IndexAdapter& index;
    ImageFetcher& fetcher;
    ImageCache& cache;
    EmbedderAdapter& embedder;
    PerceptualAdapter& perceptual;
    DetectorAdapter& detector;
    VlmAdapter& vlm;
    FilterPolicy policy{};
    RetrievalConfig config{};
    WorkerPool* pool = nullptr;
    const PromptBank* bank = nullptr;
};

/// Exploration and exploitation over one index with one set of filters.
/// Evaluations are cached by (object, content hash) for the lifetime of the
/// retriever, so an image seen twice is scored once.
class Retriever {
public:
    explicit Retriever(RetrievalContext ctx)
        : ctx_(ctx), det_gate_(ctx.detector.max_concurrency()), vlm_gate_(ctx.vlm.max_concurrency()),
          fetch_gate_(std::max<std::size_t>(1, ctx.pool ? ctx.pool->size() : 1)) {
        ctx_.policy.validate();
        ctx_.config.validate();
        if (ctx_.index.dim() != 0 && ctx_.index.dim() != ctx_.embedder.dim())
            throw DimensionError("index and embedder dimensions differ");
    }

    const RetrievalContext& context() const noexcept { return ctx_; }
    std::size_t peak_vlm_concurrency() const { return vlm_gate_.peak(); }
    std::size_t peak_detector_concurrency() const { return det_gate_.peak(); }

    /// k_explore neighbors per query. Survivors are unique by content hash;
    /// the first occurrence (query order, then rank) wins.
    RetrievalResult explore(const std::vector<Query>& queries) {
        for (const auto& q : queries)
            if (q.embedding.size() != ctx_.embedder.dim()) throw DimensionError("query '" + q.id + "' is not embedded");
        auto batches = parallel_map(ctx_.pool, queries.size(), [&](std::size_t i) {
            const auto& q = queries[i];
            return batch(q.object.name, q.embedding, ctx_.config.k_explore, nullptr, {Stage::exploration, q.id});
        });
        RetrievalResult out;
        std::set<std::string> seen;
        for (auto& b : batches) {
            out.stats += b.stats;
            for (auto& r : b.survivors) {
                if (!seen.insert(r.content_hash).second) {
                    ++out.stats.cross_batch_duplicates;
                    continue;
                }
                out.survivors.push_back(r);
            }
            std::move(b.candidates.begin(), b.candidates.end(), std::back_inserter(out.candidates));
        }
        out.stats.survivors = out.survivors.size();
        return out;
    }

    /// k_exploit neighbors of every success, retrieved with its image
    /// embedding and deduplicated against it. An image found from several
    /// successes is kept once, under the parent it is most similar to.
    RetrievalResult exploit(const std::vector<ImageRecord>& successes) {
        for (const auto& s : successes)
            if (s.embedding.size() != ctx_.embedder.dim() || s.perceptual_embedding.empty())
                throw DimensionError("success '" + s.id + "' lacks embeddings");
        auto batches = parallel_map(ctx_.pool, successes.size(), [&](std::size_t i) {
            const auto& s = successes[i];
            return batch(s.object, s.embedding, ctx_.config.k_exploit, &s.perceptual_embedding,
                         {Stage::exploitation, s.id});
        });
        RetrievalResult out;
        std::map<std::string, std::size_t> where;
        for (auto& b : batches) {
            out.stats += b.stats;
            for (auto& r : b.survivors) {
                auto [it, fresh] = where.emplace(r.content_hash, out.survivors.size());
                if (fresh) {
                    out.survivors.push_back(r);
                    continue;
                }
                ++out.stats.cross_batch_duplicates;
                auto& kept = out.survivors[it->second];
                if (r.retrieval_similarity.value_or(-2) > kept.retrieval_similarity.value_or(-2)) {
                    kept.lineage = r.lineage;
                    kept.retrieval_similarity = r.retrieval_similarity;
                }
            }
            std::move(b.candidates.begin(), b.candidates.end(), std::back_inserter(out.candidates));
        }
        out.stats.survivors = out.survivors.size();
        return out;
    }

    /// One retrieval batch: fetch, dedup in rank order, then evaluate.
    RetrievalResult batch(const std::string& object, std::span<const double> embedding, std::size_t k,
                          const Vector* seed, const Lineage& lineage) {
        RetrievalResult out;
        out.stats.batches = 1;
        const auto neighbors = ctx_.index.query(embedding, k, ctx_.config.overfetch);
        out.stats.neighbors = neighbors.size();

        struct Fetched {
            bool ok = false;
            bool decode_failed = false;
            ImageRecord record;
        };
        auto fetched = parallel_map(ctx_.pool, neighbors.size(), [&](std::size_t i) {
            Fetched f;
            const auto& n = neighbors[i];
            Bytes bytes;
            try {
                auto permit = fetch_gate_.permit();
                bytes = with_retries(ctx_.config.download_retries, [&] { return ctx_.fetcher.fetch(n.uri); });
            } catch (const TransportError&) {
                return f;
            }
            try {
                f.record = ctx_.cache.put(bytes, n.uri, lineage);
                const Image img = decode_pnm(bytes);
                f.record.lineage = lineage;
                f.record.uri = n.uri;
                f.record.object = object;
                f.record.retrieval_similarity = n.similarity;
                f.record.embedding = ctx_.embedder.embed_image(img);
                f.record.perceptual_embedding = ctx_.perceptual.embed(img);
                f.ok = true;
            } catch (const DecodeError&) {
                f.decode_failed = true;
            }
            return f;
        });

        std::vector<std::size_t> usable;
        std::vector<Vector> embeddings;
        for (std::size_t i = 0; i < fetched.size(); ++i) {
            if (fetched[i].ok) {
                usable.push_back(i);
                embeddings.push_back(fetched[i].record.perceptual_embedding);
            } else if (fetched[i].decode_failed) {
                ++out.stats.decode_failures;
            } else {
                ++out.stats.skipped_downloads;
            }
        }
        const DedupResult d = dedup(embeddings, ctx_.perceptual, ctx_.config.dedup_threshold, seed, k);
        // Only candidates the scan actually reached count as near-duplicates.
        out.stats.near_duplicates = d.dropped.size();

        std::vector<ImageRecord> chosen;
        for (std::size_t idx : d.retained) chosen.push_back(std::move(fetched[usable[idx]].record));
        auto evaluated = parallel_map(ctx_.pool, chosen.size(), [&](std::size_t i) { return evaluate(chosen[i]); });
        for (std::size_t i = 0; i < chosen.size(); ++i) {
            auto& rec = chosen[i];
            const Evaluation& ev = evaluated[i];
            if (ev.answer) ++out.stats.vlm_answers;
            if (!ctx_.policy.detector_passes(*ev.p_det)) ++out.stats.detector_rejects;
            rec.evaluations = {ev};
            if (ctx_.policy.keep(ev)) out.survivors.push_back(rec);
            out.candidates.push_back(std::move(rec));
        }
        out.stats.candidates = out.candidates.size();
        out.stats.survivors = out.survivors.size();
        return out;
    }

private:
    /// Detector first; the VLM is consulted only if the detector passes.
    Evaluation evaluate(const ImageRecord& rec) {
        const std::string key = rec.object + '\n' + rec.content_hash;
        {
            std::lock_guard lock(cache_mutex_);
            if (auto it = eval_cache_.find(key); it != eval_cache_.end()) return it->second;
        }
        const Image img = ctx_.cache.load(rec.content_hash);
        const ObjectSpec object{rec.object, DatasetTag::coco, std::nullopt};
        const PromptBank& bank = ctx_.bank ? *ctx_.bank : PromptBank::builtin();
        Evaluation ev;
        ev.model_id = ctx_.vlm.model_id();
        ev.template_id = ctx_.config.template_id;
        ev.prompt = bank.full_prompt(ctx_.config.template_id, rec.object);
        ev.detector_id = ctx_.detector.model_id();
        {
            auto permit = det_gate_.permit();
            ev.p_det = with_retries(ctx_.config.download_retries, [&] { return detect(ctx_.detector, img, object); });
        }
        if (ctx_.policy.detector_passes(*ev.p_det)) {
            auto permit = vlm_gate_.permit();
            Evaluation answer = with_retries(ctx_.config.download_retries, [&] {
                return ask_yes_no(ctx_.vlm, img, object, bank, ctx_.config.template_id);
            });
            ev.reply = answer.reply;
            ev.answer = answer.answer;
            ev.p_yes = answer.p_yes;
            ev.p_yes_raw = answer.p_yes_raw;
        }
        std::lock_guard lock(cache_mutex_);
        eval_cache_.emplace(key, ev);
        return ev;
    }

    RetrievalContext ctx_;
    ConcurrencyGate det_gate_;
    ConcurrencyGate vlm_gate_;
    ConcurrencyGate fetch_gate_;
    std::mutex cache_mutex_;
    std::unordered_map<std::string, Evaluation> eval_cache_;
};

} // namespace dash
