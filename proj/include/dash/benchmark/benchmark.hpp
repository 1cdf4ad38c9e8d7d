#pragma once

#include "dash/adapters/interfaces.hpp"
#include "dash/adapters/ops.hpp"
#include "dash/analysis/analysis.hpp"
#include "dash/benchmark/labels.hpp"
#include "dash/core/image_cache.hpp"
#include "dash/core/types.hpp"
#include "dash/core/worker_pool.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace dash {

enum class GroundTruth { present, absent };
enum class Provenance { mined_negative, ingested_positive };

inline std::string_view to_string(GroundTruth g) { return g == GroundTruth::present ? "present" : "absent"; }
inline std::string_view to_string(Provenance p) {
    return p == Provenance::mined_negative ? "mined-negative" : "ingested-positive";
}

struct BenchmarkItem {
    std::string image_id;
    std::string content_hash;
    std::string uri;
    ObjectSpec object;
    GroundTruth ground_truth = GroundTruth::absent;
    Provenance provenance = Provenance::mined_negative;
};

inline void to_json(Json& j, const BenchmarkItem& b) {
    j = Json{{"image_id", b.image_id},
             {"content_hash", b.content_hash},
             {"uri", b.uri},
             {"object", b.object},
             {"ground_truth", std::string(to_string(b.ground_truth))},
             {"provenance", std::string(to_string(b.provenance))}};
}

inline void from_json(const Json& j, BenchmarkItem& b) {
    b.image_id = j.value("image_id", std::string{});
    j.at("content_hash").get_to(b.content_hash);
    b.uri = j.value("uri", std::string{});
    j.at("object").get_to(b.object);
    const auto gt = j.at("ground_truth").get<std::string>();
    if (gt != "present" && gt != "absent") throw Error("ground_truth must be present or absent, got '" + gt + "'");
    b.ground_truth = gt == "present" ? GroundTruth::present : GroundTruth::absent;
    const auto pv = j.value("provenance", std::string("mined-negative"));
    b.provenance = pv == "ingested-positive" ? Provenance::ingested_positive : Provenance::mined_negative;
}

struct BenchmarkCaps {
    std::size_t min_per_object = 3;
    std::size_t max_per_object = 50;

    void validate() const {
        if (min_per_object == 0 || min_per_object > max_per_object)
            throw ConfigError("benchmark caps need 0 < min <= max");
    }
};

struct BenchmarkExclusion {
    std::string object;
    std::string reason;
};

struct Benchmark {
    std::vector<BenchmarkItem> items;  // per object: negatives then positives, each in hash order
    std::vector<BenchmarkExclusion> excluded;
    std::size_t negatives = 0;
    std::size_t positives = 0;

    std::set<std::string> negative_hashes() const {
        std::set<std::string> out;
        for (const auto& i : items)
            if (i.ground_truth == GroundTruth::absent) out.insert(i.content_hash);
        return out;
    }
};

/// True when every model in `vlm_ids` has a recorded "yes" on `r`.
inline bool answered_by_all(const ImageRecord& r, const std::vector<std::string>& vlm_ids, Answer answer) {
    for (const auto& id : vlm_ids) {
        const Evaluation* e = find_evaluation(r, id);
        if (!e || e->answer != answer) return false;
    }
    return true;
}

/// Positive is usable when pre-verified or confirmed by at least one labeler.
inline bool positive_verified(const PositiveItem& p, const ConsensusTable& labels) {
    if (p.verified) return true;
    auto it = labels.find({p.object, p.content_hash});
    if (it == labels.end()) return false;
    for (const auto& [_, v] : it->second.verdicts)
        if (v == Verdict::yes) return true;
    return false;
}

/// Negatives: mined records on which both holdout VLMs answer yes and both
/// labelers say no. Per object, fewer than `min` negatives drops the object,
/// more than `max` truncates in content-hash order. Each object is paired with
/// the same number of verified positives, or excluded if there are too few.
inline Benchmark build_benchmark(const std::map<std::string, std::vector<ImageRecord>>& records,
                                 const std::vector<ObjectSpec>& objects, const std::vector<std::string>& holdout_vlms,
                                 const ConsensusTable& labels, const std::vector<PositiveItem>& positives,
                                 const BenchmarkCaps& caps = {}) {
    caps.validate();
    if (holdout_vlms.size() != 2) throw ConfigError("benchmark needs exactly two holdout VLMs");
    std::map<std::string, std::vector<const PositiveItem*>> pos_by_object;
    for (const auto& p : positives)
        if (positive_verified(p, labels)) pos_by_object[p.object].push_back(&p);

    Benchmark b;
    for (const auto& spec : objects) {
        std::map<std::string, const ImageRecord*> negatives;  // by content hash
        if (auto it = records.find(spec.name); it != records.end()) {
            for (const auto& r : it->second) {
                if (!answered_by_all(r, holdout_vlms, Answer::yes)) continue;
                auto lab = labels.find({spec.name, r.content_hash});
                if (lab == labels.end() || lab->second.status != Consensus::eligible) continue;
                negatives.emplace(r.content_hash, &r);
            }
        }
        if (negatives.size() < caps.min_per_object) {
            b.excluded.push_back({spec.name, std::to_string(negatives.size()) + " eligible negatives, need " +
                                                 std::to_string(caps.min_per_object)});
            continue;
        }
        const std::size_t n = std::min(negatives.size(), caps.max_per_object);

        std::map<std::string, const PositiveItem*> pos;
        for (const auto* p : pos_by_object[spec.name])
            if (!negatives.count(p->content_hash)) pos.emplace(p->content_hash, p);
        if (pos.size() < n) {
            b.excluded.push_back({spec.name, "insufficient positives: " + std::to_string(pos.size()) + " verified, need " +
                                                 std::to_string(n)});
            continue;
        }
        auto neg_it = negatives.begin();
        for (std::size_t i = 0; i < n; ++i, ++neg_it) {
            const ImageRecord& r = *neg_it->second;
            b.items.push_back({r.id, r.content_hash, r.uri, spec, GroundTruth::absent, Provenance::mined_negative});
        }
        auto pos_it = pos.begin();
        for (std::size_t i = 0; i < n; ++i, ++pos_it) {
            const PositiveItem& p = *pos_it->second;
            b.items.push_back({image_id_for(p.content_hash), p.content_hash, p.uri, spec, GroundTruth::present,
                               Provenance::ingested_positive});
        }
        b.negatives += n;
        b.positives += n;
    }
    return b;
}

// -- manifest ---------------------------------------------------------------------------

inline void write_benchmark_manifest(const fs::path& path, const std::vector<BenchmarkItem>& items) {
    std::string text;
    for (const auto& i : items) text += Json(i).dump() + "\n";
    write_file_atomic(path, text);
}

inline std::vector<BenchmarkItem> read_benchmark_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open benchmark manifest " + path.string());
    std::vector<BenchmarkItem> out;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(Json::parse(line).get<BenchmarkItem>());
    return out;
}

// -- existence QA ------------------------------------------------------------------------

struct QaCounts {
    AnswerCounts absent;   // replies on items whose object is absent
    AnswerCounts present;  // replies on items whose object is present
};

struct QaMetrics {
    std::size_t items = 0;
    std::size_t valid = 0;
    double valid_rate = 0.0;
    std::optional<double> accuracy;  // over valid replies
    std::optional<double> tnr;
    std::optional<double> tpr;
    std::optional<double> hm;
    bool single_class = false;
    QaCounts counts;
};

/// Harmonic mean of two rates; 0 when both are 0.
inline double harmonic_mean(double a, double b) { return a + b > 0.0 ? 2.0 * a * b / (a + b) : 0.0; }

inline QaMetrics qa_metrics(const QaCounts& c) {
    QaMetrics m;
    m.counts = c;
    m.items = c.absent.total() + c.present.total();
    m.valid = c.absent.valid() + c.present.valid();
    m.valid_rate = m.items ? static_cast<double>(m.valid) / static_cast<double>(m.items) : 0.0;
    if (m.valid) m.accuracy = static_cast<double>(c.absent.no + c.present.yes) / static_cast<double>(m.valid);
    if (c.absent.valid()) m.tnr = static_cast<double>(c.absent.no) / static_cast<double>(c.absent.valid());
    if (c.present.valid()) m.tpr = static_cast<double>(c.present.yes) / static_cast<double>(c.present.valid());
    if (m.tnr && m.tpr) m.hm = harmonic_mean(*m.tnr, *m.tpr);
    m.single_class = !(m.tnr && m.tpr);
    return m;
}

inline QaCounts count_qa(const std::vector<BenchmarkItem>& items, const std::vector<Evaluation>& evals) {
    if (items.size() != evals.size()) throw Error("one evaluation per benchmark item expected");
    QaCounts c;
    for (std::size_t i = 0; i < items.size(); ++i) {
        auto& bucket = items[i].ground_truth == GroundTruth::absent ? c.absent : c.present;
        bucket.add(evals[i].answer.value_or(Answer::invalid));
    }
    return c;
}

inline QaMetrics eval_existence_qa(VlmAdapter& model, const std::vector<BenchmarkItem>& items, const ImageCache& cache,
                                   std::string_view template_id = kStandardTemplate,
                                   const PromptBank& bank = PromptBank::builtin(), WorkerPool* pool = nullptr) {
    if (items.empty()) throw Error("existence QA needs at least one item");
    std::vector<AskItem> ask;
    for (const auto& i : items) ask.push_back({i.content_hash, i.object.name});
    return qa_metrics(count_qa(items, evaluate_items(model, ask, cache, bank, template_id, pool)));
}

inline void to_json(Json& j, const QaMetrics& m) {
    auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
    j = Json{{"items", m.items},
             {"valid", m.valid},
             {"valid_rate", m.valid_rate},
             {"accuracy", opt(m.accuracy)},
             {"tnr", opt(m.tnr)},
             {"tpr", opt(m.tpr)},
             {"hm", opt(m.hm)},
             {"single_class", m.single_class},
             {"absent", m.counts.absent},
             {"present", m.counts.present}};
}

} // namespace dash
