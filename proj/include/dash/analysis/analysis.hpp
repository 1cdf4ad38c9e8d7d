#pragma once

#include "dash/adapters/interfaces.hpp"
#include "dash/adapters/ops.hpp"
#include "dash/adapters/prompt_bank.hpp"
#include "dash/core/image_cache.hpp"
#include "dash/core/types.hpp"
#include "dash/core/worker_pool.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace dash {

struct AnswerCounts {
    std::size_t yes = 0;
    std::size_t no = 0;
    std::size_t invalid = 0;

    void add(Answer a) {
        switch (a) {
            case Answer::yes: ++yes; break;
            case Answer::no: ++no; break;
            case Answer::invalid: ++invalid; break;
        }
    }
    std::size_t valid() const noexcept { return yes + no; }
    std::size_t total() const noexcept { return yes + no + invalid; }

    /// yes / valid; absent when nothing valid was answered.
    std::optional<double> yes_rate() const {
        if (valid() == 0) return std::nullopt;
        return static_cast<double>(yes) / static_cast<double>(valid());
    }
    double invalid_fraction() const { return total() ? static_cast<double>(invalid) / static_cast<double>(total()) : 0.0; }
};

inline void to_json(Json& j, const AnswerCounts& c) {
    j = Json{{"yes", c.yes}, {"no", c.no}, {"invalid", c.invalid}};
}

/// Asks `template_id` about every (image, object) pair and tallies the answers.
struct AskItem {
    std::string content_hash;
    std::string object;
};

inline std::vector<Evaluation> evaluate_items(VlmAdapter& vlm, const std::vector<AskItem>& items, const ImageCache& cache,
                                              const PromptBank& bank, std::string_view template_id,
                                              WorkerPool* pool = nullptr, int retries = 2) {
    ConcurrencyGate gate(vlm.max_concurrency());
    return parallel_map(pool, items.size(), [&](std::size_t i) {
        const Image img = cache.load(items[i].content_hash);
        const ObjectSpec obj{items[i].object, DatasetTag::coco, std::nullopt};
        auto permit = gate.permit();
        return with_retries(retries, [&] { return ask_yes_no(vlm, img, obj, bank, template_id); });
    });
}

inline AnswerCounts count_answers(const std::vector<Evaluation>& evals) {
    AnswerCounts c;
    for (const auto& e : evals) c.add(e.answer.value_or(Answer::invalid));
    return c;
}

inline std::vector<AskItem> ask_items(const std::vector<ImageRecord>& records) {
    std::vector<AskItem> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back({r.content_hash, r.object});
    return out;
}

// -- transfer ---------------------------------------------------------------------

struct TransferReport {
    std::string source_run;
    std::string target_model;
    std::size_t n_images = 0;
    AnswerCounts counts;
    std::optional<double> rate;  // yes / (n_images - invalid)
    bool unreliable = false;     // more than half the replies invalid
};

inline TransferReport make_transfer_report(std::string source_run, std::string target, const AnswerCounts& c) {
    TransferReport r;
    r.source_run = std::move(source_run);
    r.target_model = std::move(target);
    r.n_images = c.total();
    r.counts = c;
    r.rate = c.yes_rate();
    r.unreliable = c.total() > 0 && 2 * c.invalid > c.total();
    return r;
}

inline void to_json(Json& j, const TransferReport& r) {
    j = Json{{"source_run", r.source_run}, {"target_model", r.target_model}, {"n_images", r.n_images},
             {"yes_count", r.counts.yes},  {"no_count", r.counts.no},        {"invalid_count", r.counts.invalid},
             {"transfer_rate", r.rate ? Json(*r.rate) : Json(nullptr)},      {"unreliable", r.unreliable}};
}

/// Fraction of mined images on which `target` also answers yes, over valid replies.
inline TransferReport transfer_rate(const std::vector<ImageRecord>& records, VlmAdapter& target, const ImageCache& cache,
                                    const std::string& source_run = {}, const PromptBank& bank = PromptBank::builtin(),
                                    WorkerPool* pool = nullptr) {
    const auto evals = evaluate_items(target, ask_items(records), cache, bank, kStandardTemplate, pool);
    return make_transfer_report(source_run, target.model_id(), count_answers(evals));
}

// -- TPR on verified positives ----------------------------------------------------------

struct PositiveItem {
    std::string content_hash;
    std::string object;
    DatasetTag dataset = DatasetTag::coco;
    std::string uri;
    bool verified = false;  // pre-verified; otherwise needs a labeler "yes"
};

inline void to_json(Json& j, const PositiveItem& p) {
    j = Json{{"content_hash", p.content_hash}, {"object", p.object}, {"dataset", p.dataset}};
    if (!p.uri.empty()) j["uri"] = p.uri;
    if (p.verified) j["verified"] = true;
}

inline void from_json(const Json& j, PositiveItem& p) {
    j.at("content_hash").get_to(p.content_hash);
    j.at("object").get_to(p.object);
    p.dataset = j.value("dataset", DatasetTag::coco);
    p.uri = j.value("uri", std::string{});
    p.verified = j.value("verified", false);
}

struct TprIcoReport {
    std::map<DatasetTag, AnswerCounts> per_dataset;
    std::map<DatasetTag, double> tpr;
    std::optional<double> macro;
    std::vector<DatasetTag> missing;            // of imagenet/coco/objects365
    std::vector<std::string> excluded_objects;  // no valid positives
    bool partial() const { return !missing.empty(); }
};

inline void to_json(Json& j, const TprIcoReport& r) {
    j = Json::object();
    for (const auto& [d, t] : r.tpr) j["tpr"][std::string(to_string(d))] = t;
    for (const auto& [d, c] : r.per_dataset) j["counts"][std::string(to_string(d))] = c;
    j["macro"] = r.macro ? Json(*r.macro) : Json(nullptr);
    j["missing"] = r.missing;
    j["excluded_objects"] = r.excluded_objects;
    j["partial"] = r.partial();
}

/// TPR per dataset and their macro average from per-item evaluations.
inline TprIcoReport tpr_ico_from(const std::vector<PositiveItem>& items, const std::vector<Evaluation>& evals) {
    TprIcoReport r;
    std::map<std::string, AnswerCounts> per_object;
    for (std::size_t i = 0; i < items.size(); ++i) per_object[items[i].object].add(evals[i].answer.value_or(Answer::invalid));
    for (const auto& [obj, c] : per_object)
        if (c.valid() == 0) r.excluded_objects.push_back(obj);
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (per_object[items[i].object].valid() == 0) continue;
        r.per_dataset[items[i].dataset].add(evals[i].answer.value_or(Answer::invalid));
    }
    double sum = 0.0;
    std::size_t n = 0;
    for (DatasetTag d : {DatasetTag::imagenet, DatasetTag::coco, DatasetTag::objects365}) {
        auto it = r.per_dataset.find(d);
        if (it == r.per_dataset.end() || !it->second.yes_rate()) {
            r.missing.push_back(d);
            continue;
        }
        r.tpr[d] = *it->second.yes_rate();
        sum += r.tpr[d];
        ++n;
    }
    if (n) r.macro = sum / static_cast<double>(n);
    return r;
}

inline TprIcoReport tpr_ico(const std::vector<PositiveItem>& positives, VlmAdapter& model, const ImageCache& cache,
                            const PromptBank& bank = PromptBank::builtin(), WorkerPool* pool = nullptr) {
    std::vector<AskItem> items;
    for (const auto& p : positives) items.push_back({p.content_hash, p.object});
    return tpr_ico_from(positives, evaluate_items(model, items, cache, bank, kStandardTemplate, pool));
}

// -- prompt suite -----------------------------------------------------------------------

/// Template ids of the transfer suite: every template except the mining question.
inline std::vector<std::string> prompt_suite_ids(const PromptBank& bank = PromptBank::builtin()) {
    std::vector<std::string> out;
    for (const auto& id : bank.ids())
        if (id != kStandardTemplate) out.push_back(id);
    return out;
}

struct TemplateRate {
    std::string template_id;
    std::string question;
    AnswerCounts counts;
    std::optional<double> rate;
};

struct PromptSuiteReport {
    std::string model_id;
    std::vector<TemplateRate> rates;
    double mean = 0.0;
    double std = 0.0;  // sample (n - 1)
    double population_std = 0.0;
};

inline double mean_of(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double population_std(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    const double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size()));
}

/// Sample standard deviation (n - 1); 0 for fewer than two values.
inline double sample_std(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

inline void to_json(Json& j, const PromptSuiteReport& r) {
    j = Json{{"model_id", r.model_id}, {"mean", r.mean}, {"std", r.std}, {"population_std", r.population_std}, {"templates", Json::array()}};
    for (const auto& t : r.rates)
        j["templates"].push_back(Json{{"template_id", t.template_id},
                                      {"question", t.question},
                                      {"counts", t.counts},
                                      {"rate", t.rate ? Json(*t.rate) : Json(nullptr)}});
}

/// One evaluation pass per template; mean and sample std over template rates.
inline PromptSuiteReport prompt_transfer(const std::vector<ImageRecord>& records, VlmAdapter& model,
                                         const ImageCache& cache, const std::vector<std::string>& suite,
                                         const PromptBank& bank = PromptBank::builtin(), WorkerPool* pool = nullptr) {
    if (suite.empty()) throw ConfigError("prompt suite is empty");
    PromptSuiteReport r;
    r.model_id = model.model_id();
    const auto items = ask_items(records);
    std::vector<double> rates;
    for (const auto& id : suite) {
        TemplateRate t;
        t.template_id = id;
        t.question = bank.template_text(id);
        t.counts = count_answers(evaluate_items(model, items, cache, bank, id, pool));
        t.rate = t.counts.yes_rate();
        if (t.rate) rates.push_back(*t.rate);
        r.rates.push_back(std::move(t));
    }
    r.mean = mean_of(rates);
    r.std = sample_std(rates);
    r.population_std = population_std(rates);
    return r;
}

// -- min query distance ----------------------------------------------------------------

struct Histogram {
    double lo = 0.0;
    double hi = 2.0;
    std::vector<std::size_t> counts;
    std::vector<double> values;  // raw, one per record

    double bin_width() const { return (hi - lo) / static_cast<double>(counts.size()); }
};

inline void to_json(Json& j, const Histogram& h) {
    j = Json{{"lo", h.lo}, {"hi", h.hi}, {"counts", h.counts}, {"values", h.values}};
}

inline Histogram make_histogram(std::vector<double> values, std::size_t bins = 40, double lo = 0.0, double hi = 2.0) {
    if (bins == 0 || !(hi > lo)) throw ConfigError("histogram needs bins > 0 and hi > lo");
    Histogram h{lo, hi, std::vector<std::size_t>(bins, 0), std::move(values)};
    for (double v : h.values) {
        auto b = static_cast<long>(std::floor((v - lo) / h.bin_width()));
        b = std::clamp<long>(b, 0, static_cast<long>(bins) - 1);
        ++h.counts[static_cast<std::size_t>(b)];
    }
    return h;
}

/// Per record, min over text queries of (1 - <record, query>).
inline Histogram min_query_distance(const std::vector<ImageRecord>& records, const std::vector<Query>& text_queries,
                                    std::size_t bins = 40) {
    std::vector<double> values;
    values.reserve(records.size());
    for (const auto& r : records) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : text_queries) {
            if (q.embedding.size() != r.embedding.size()) throw DimensionError("record and query embeddings differ in size");
            double s = 0.0;
            for (std::size_t i = 0; i < q.embedding.size(); ++i) s += q.embedding[i] * r.embedding[i];
            best = std::min(best, 1.0 - s);
        }
        if (std::isfinite(best)) values.push_back(best);
    }
    return make_histogram(std::move(values), bins);
}

// -- frequency splits -------------------------------------------------------------------

struct SplitAverage {
    std::size_t objects = 0;
    double mean_images = 0.0;
};

/// Mean per-object success total by frequency split. Splits with no object are absent.
inline std::map<FrequencySplit, SplitAverage> frequency_report(const std::map<std::string, std::size_t>& totals,
                                                               const std::vector<ObjectSpec>& objects) {
    std::map<FrequencySplit, std::vector<double>> groups;
    for (const auto& o : objects) {
        if (!o.split) continue;
        auto it = totals.find(o.name);
        groups[*o.split].push_back(it == totals.end() ? 0.0 : static_cast<double>(it->second));
    }
    std::map<FrequencySplit, SplitAverage> out;
    for (const auto& [s, v] : groups) out[s] = {v.size(), mean_of(v)};
    return out;
}

inline std::map<FrequencySplit, SplitAverage> frequency_report(const std::map<std::string, std::vector<Cluster>>& clusters,
                                                               const std::vector<ObjectSpec>& objects) {
    std::map<std::string, std::size_t> totals;
    for (const auto& [obj, cs] : clusters)
        for (const auto& c : cs) totals[obj] += c.size();
    return frequency_report(totals, objects);
}

inline void to_json(Json& j, const std::map<FrequencySplit, SplitAverage>& r) {
    j = Json::object();
    for (const auto& [s, a] : r) j[std::string(to_string(s))] = Json{{"objects", a.objects}, {"mean_images", a.mean_images}};
}

// -- run summary --------------------------------------------------------------------------

/// Images are counted through clusters, so
/// avg_images_per_cluster * total_clusters == total_images.
struct RunSummary {
    std::size_t objects = 0;
    std::size_t total_images = 0;
    std::size_t total_clusters = 0;
    double avg_clusters_per_object = 0.0;
    double avg_images_per_cluster = 0.0;
};

inline RunSummary summarize(const std::map<std::string, std::vector<Cluster>>& clusters_by_object) {
    RunSummary s;
    s.objects = clusters_by_object.size();
    for (const auto& [_, cs] : clusters_by_object) {
        s.total_clusters += cs.size();
        for (const auto& c : cs) s.total_images += c.size();
    }
    if (s.objects) s.avg_clusters_per_object = static_cast<double>(s.total_clusters) / static_cast<double>(s.objects);
    if (s.total_clusters) s.avg_images_per_cluster = static_cast<double>(s.total_images) / static_cast<double>(s.total_clusters);
    return s;
}

inline void to_json(Json& j, const RunSummary& s) {
    j = Json{{"objects", s.objects},
             {"total_images", s.total_images},
             {"total_clusters", s.total_clusters},
             {"avg_clusters_per_object", s.avg_clusters_per_object},
             {"avg_images_per_cluster", s.avg_images_per_cluster}};
}

/// Whitespace-aligned columns.
inline std::string format_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> w(header.size(), 0);
    for (std::size_t c = 0; c < header.size(); ++c) w[c] = header[c].size();
    for (const auto& r : rows)
        for (std::size_t c = 0; c < r.size() && c < w.size(); ++c) w[c] = std::max(w[c], r[c].size());
    auto line = [&](const std::vector<std::string>& cells) {
        std::string s;
        for (std::size_t c = 0; c < w.size(); ++c) {
            const std::string cell = c < cells.size() ? cells[c] : "";
            s += cell;
            if (c + 1 < w.size()) s += std::string(w[c] - cell.size() + 2, ' ');
        }
        while (!s.empty() && s.back() == ' ') s.pop_back();
        return s + "\n";
    };
    std::string out = line(header);
    for (const auto& r : rows) out += line(r);
    return out;
}

inline std::string fmt3(std::optional<double> v) {
    if (!v) return "-";
    char b[32];
    std::snprintf(b, sizeof b, "%.3f", *v);
    return b;
}

} // namespace dash
