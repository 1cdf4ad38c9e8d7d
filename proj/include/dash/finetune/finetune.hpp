#pragma once

#include "dash/adapters/prompt_bank.hpp"
#include "dash/analysis/analysis.hpp"
#include "dash/benchmark/benchmark.hpp"
#include "dash/core/hash.hpp"
#include "dash/core/types.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace dash {

struct FinetuneConfig {
    std::size_t negatives_per_object = 200;
    std::size_t positives_per_object = 400;
    std::vector<std::string> holdout_vlms;
    std::uint64_t seed = 0;

    void validate() const {
        if (negatives_per_object == 0 || positives_per_object == 0) throw ConfigError("finetune counts must be positive");
        if (holdout_vlms.size() != 2) throw ConfigError("finetune export needs exactly two holdout VLMs");
    }
};

inline void to_json(Json& j, const FinetuneConfig& c) {
    j = Json{{"negatives_per_object", c.negatives_per_object},
             {"positives_per_object", c.positives_per_object},
             {"holdout_vlms", c.holdout_vlms},
             {"seed", c.seed}};
}

inline void from_json(const Json& j, FinetuneConfig& c) {
    c = FinetuneConfig{};
    c.negatives_per_object = j.value("negatives_per_object", c.negatives_per_object);
    c.positives_per_object = j.value("positives_per_object", c.positives_per_object);
    c.holdout_vlms = j.value("holdout_vlms", c.holdout_vlms);
    c.seed = j.value("seed", c.seed);
}

struct ValidationSplit {
    std::map<std::string, std::string> validation;            // object -> held-out cluster id
    std::map<std::string, std::vector<std::string>> train;    // object -> record ids
    std::set<std::string> validation_members;
    std::vector<std::string> empty_train;                      // single-cluster objects
    std::vector<std::string> excluded;                         // objects without clusters
};

/// Holds out the largest cluster of every object (ties: smallest id); the
/// members of all other clusters form the train pool.
inline ValidationSplit split_validation(const std::map<std::string, std::vector<Cluster>>& clusters) {
    ValidationSplit s;
    for (const auto& [object, cs] : clusters) {
        if (cs.empty()) {
            s.excluded.push_back(object);
            continue;
        }
        const Cluster* held = &cs.front();
        for (const auto& c : cs)
            if (c.size() > held->size() || (c.size() == held->size() && c.id < held->id)) held = &c;
        s.validation[object] = held->id;
        s.validation_members.insert(held->members.begin(), held->members.end());
        auto& pool = s.train[object];
        for (const auto& c : cs)
            if (&c != held) pool.insert(pool.end(), c.members.begin(), c.members.end());
        std::sort(pool.begin(), pool.end());
        pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
        if (pool.empty()) s.empty_train.push_back(object);
    }
    return s;
}

inline void to_json(Json& j, const ValidationSplit& s) {
    j = Json{{"validation", s.validation},
             {"train", s.train},
             {"empty_train", s.empty_train},
             {"excluded", s.excluded}};
}

struct FinetuneCounts {
    std::size_t negatives = 0;
    std::size_t positives = 0;
    std::size_t negative_supply = 0;
    std::size_t positive_supply = 0;
};

struct FinetuneExport {
    Json header;
    std::vector<Json> rows;
    std::map<std::string, FinetuneCounts> counts;

    std::string text() const {
        std::string out = header.dump() + "\n";
        for (const auto& r : rows) out += r.dump() + "\n";
        return out;
    }
};

inline std::string digest_of(const std::set<std::string>& items) {
    std::string joined;
    for (const auto& s : items) joined += s + "\n";
    return sha256_hex(joined);
}

/// Seeded sample of up to `n` hashes: order by seeded_key(seed, object/hash).
inline std::vector<std::string> seeded_sample(const std::set<std::string>& hashes, const std::string& object,
                                              std::uint64_t seed, std::size_t n) {
    std::vector<std::pair<std::uint64_t, std::string>> keyed;
    for (const auto& h : hashes) keyed.emplace_back(seeded_key(seed, object + "\n" + h), h);
    std::sort(keyed.begin(), keyed.end());
    std::vector<std::string> out;
    for (std::size_t i = 0; i < keyed.size() && i < n; ++i) out.push_back(keyed[i].second);
    return out;
}

/// Per object: up to `negatives_per_object` pool records on which both holdout
/// VLMs answer no (target "No") and up to `positives_per_object` positives
/// (target "Yes"). Benchmark images and validation members never enter.
/// Pools are merged by content hash before sampling.
inline FinetuneExport export_dataset(const std::map<std::string, std::vector<ImageRecord>>& pool,
                                     const std::vector<PositiveItem>& positives,
                                     const std::set<std::string>& benchmark_hashes,
                                     const std::set<std::string>& validation_hashes, const FinetuneConfig& cfg,
                                     const PromptBank& bank = PromptBank::builtin()) {
    cfg.validate();
    FinetuneExport ex;
    ex.header = Json{{"kind", "header"},
                     {"config", cfg},
                     {"template", std::string(kStandardTemplate)},
                     {"prompt_bank_version", bank.version()},
                     {"benchmark_exclusion_digest", digest_of(benchmark_hashes)},
                     {"validation_exclusion_digest", digest_of(validation_hashes)}};

    std::map<std::string, std::map<std::string, std::string>> neg;  // object -> hash -> uri
    for (const auto& [object, records] : pool)
        for (const auto& r : records) {
            if (!answered_by_all(r, cfg.holdout_vlms, Answer::no)) continue;
            if (benchmark_hashes.count(r.content_hash) || validation_hashes.count(r.content_hash)) continue;
            neg[object].emplace(r.content_hash, r.uri);
        }
    std::map<std::string, std::map<std::string, std::string>> pos;
    for (const auto& p : positives)
        if (!benchmark_hashes.count(p.content_hash) && !validation_hashes.count(p.content_hash))
            pos[p.object].emplace(p.content_hash, p.uri);

    std::set<std::string> objects;
    for (const auto& [o, _] : neg) objects.insert(o);
    for (const auto& [o, _] : pos) objects.insert(o);

    auto emit = [&](const std::string& object, const std::map<std::string, std::string>& supply, std::size_t n,
                    const char* answer, const char* role) {
        std::set<std::string> hashes;
        for (const auto& [h, _] : supply) hashes.insert(h);
        const auto picked = seeded_sample(hashes, object + "\n" + role, cfg.seed, n);
        for (const auto& h : picked)
            ex.rows.push_back(Json{{"image", h},
                                   {"uri", supply.at(h)},
                                   {"object", object},
                                   {"question", bank.full_prompt(kStandardTemplate, object)},
                                   {"answer", answer}});
        return picked.size();
    };

    for (const auto& object : objects) {
        auto& c = ex.counts[object];
        const auto& n = neg[object];
        const auto& p = pos[object];
        c.negative_supply = n.size();
        c.positive_supply = p.size();
        c.negatives = emit(object, n, cfg.negatives_per_object, "No", "negative");
        c.positives = emit(object, p, cfg.positives_per_object, "Yes", "positive");
    }
    Json counts = Json::object();
    for (const auto& [o, c] : ex.counts)
        counts[o] = Json{{"negatives", c.negatives}, {"positives", c.positives},
                         {"negative_supply", c.negative_supply}, {"positive_supply", c.positive_supply}};
    ex.header["counts"] = counts;
    return ex;
}

} // namespace dash
