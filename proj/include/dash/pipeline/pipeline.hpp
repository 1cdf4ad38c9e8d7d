#pragma once

#include "dash/analysis/analysis.hpp"
#include "dash/benchmark/benchmark.hpp"
#include "dash/cluster/cluster.hpp"
#include "dash/core/run_store.hpp"
#include "dash/core/worker_pool.hpp"
#include "dash/finetune/finetune.hpp"
#include "dash/opt/optimize.hpp"
#include "dash/pipeline/config.hpp"
#include "dash/pipeline/log.hpp"
#include "dash/query/protocol.hpp"
#include "dash/retrieval/retrieval.hpp"

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace dash {

inline constexpr std::array<std::string_view, 9> kStages = {"gen-queries", "opt-queries", "explore",
                                                           "exploit",     "cluster",     "analyze",
                                                           "build-bench", "eval-bench",  "export-finetune"};

inline bool is_stage(std::string_view s) { return std::find(kStages.begin(), kStages.end(), s) != kStages.end(); }

/// Upstream stages that must be complete before `stage` runs.
inline std::vector<std::string> stage_dependencies(std::string_view stage, bool optimize) {
    if (stage == "gen-queries" || stage == "eval-bench") return {};
    if (stage == "opt-queries") return {"gen-queries"};
    if (stage == "explore") return optimize ? std::vector<std::string>{"gen-queries", "opt-queries"}
                                            : std::vector<std::string>{"gen-queries"};
    if (stage == "exploit") return {"explore"};
    if (stage == "cluster") return {"exploit"};
    if (stage == "analyze" || stage == "build-bench") return {"cluster"};
    if (stage == "export-finetune") return {"cluster", "build-bench"};
    throw ConfigError("unknown stage '" + std::string(stage) + "'");
}

/// Stages of a full run in execution order.
inline std::vector<std::string> stage_plan(bool optimize) {
    std::vector<std::string> out;
    for (auto s : kStages) {
        if (s == "eval-bench") continue;
        if (s == "opt-queries" && !optimize) continue;
        out.emplace_back(s);
    }
    return out;
}

struct StageOutcome {
    std::string stage;
    bool skipped = false;  // already complete
    Json info = Json::object();
};

/// Runs the stages of one run over one config. Every stage persists its
/// outputs through the RunStore and marks itself complete; a completed stage
/// is a no-op on re-run.
class Pipeline {
public:
    Pipeline(RunConfig cfg, AdapterSet& adapters, const std::string& run_id, Logger& log = Logger::null())
        : cfg_(std::move(cfg)), a_(adapters), store_(cfg_.runs_dir, run_id), cache_(cfg_.cache_dir),
          pool_(cfg_.workers), log_(log) {
        cfg_.validate();
        store_.bind_config(cfg_.snapshot());
    }

    RunStore& store() { return store_; }
    ImageCache& cache() { return cache_; }
    const RunConfig& config() const { return cfg_; }
    WorkerPool& pool() { return pool_; }

    /// Restricts per-object stages to these objects (all when empty).
    void set_object_filter(std::set<std::string> names) {
        for (const auto& n : names)
            if (!find_object(n)) throw ConfigError("object '" + n + "' is not in the config");
        filter_ = std::move(names);
    }

    void set_benchmark_manifest(fs::path p) { manifest_override_ = std::move(p); }

    StageOutcome run_stage(const std::string& stage) {
        if (!is_stage(stage)) throw ConfigError("unknown stage '" + stage + "'");
        StageOutcome out{stage};
        if (store_.stage_complete(stage)) {
            out.skipped = true;
            log_.info("stage_skipped", {{"stage", stage}, {"reason", "complete"}});
            return out;
        }
        for (const auto& dep : stage_dependencies(stage, cfg_.optimize))
            if (!store_.stage_complete(dep)) throw DependencyError(stage, dep);
        log_.info("stage_start", {{"stage", stage}, {"run_id", store_.run_id()}});
        store_.begin_stage(stage, stage);
        if (stage == "gen-queries") out.info = gen_queries();
        else if (stage == "opt-queries") out.info = opt_queries();
        else if (stage == "explore") out.info = explore();
        else if (stage == "exploit") out.info = exploit();
        else if (stage == "cluster") out.info = cluster();
        else if (stage == "analyze") out.info = analyze();
        else if (stage == "build-bench") out.info = build_bench();
        else if (stage == "eval-bench") out.info = eval_bench();
        else out.info = export_finetune();
        for (auto it = out.info.begin(); it != out.info.end(); ++it) store_.set_stage_info(stage, it.key(), it.value());
        if (all_objects_done(stage)) store_.mark_stage_complete(stage);
        log_.info("stage_done", {{"stage", stage}, {"complete", store_.stage_complete(stage)}});
        return out;
    }

    std::vector<StageOutcome> run_all() {
        std::vector<StageOutcome> out;
        for (const auto& s : stage_plan(cfg_.optimize)) out.push_back(run_stage(s));
        return out;
    }

    // -- record access shared with the CLI ----------------------------------------------

    std::vector<Query> queries(const std::string& object) const {
        auto q = store_.read_records<Query>("gen-queries", object, "queries");
        if (cfg_.optimize && store_.stage_complete("opt-queries")) {
            auto o = store_.read_records<Query>("opt-queries", object, "queries");
            q.insert(q.end(), o.begin(), o.end());
        }
        return q;
    }

    /// Exploration plus exploitation survivors, unique by content hash.
    std::vector<ImageRecord> survivors(const std::string& object) const {
        std::vector<ImageRecord> out;
        std::set<std::string> seen;
        for (const char* st : {"explore", "exploit"})
            for (auto& r : store_.read_records<ImageRecord>(st, object))
                if (seen.insert(r.content_hash).second) out.push_back(std::move(r));
        return out;
    }

    std::map<std::string, std::vector<Cluster>> clusters(bool include_dropped = false) const {
        std::map<std::string, std::vector<Cluster>> out;
        for (const auto& o : cfg_.objects) {
            auto& v = out[o.name];
            v = store_.read_records<Cluster>("cluster", o.name, "clusters");
            if (include_dropped) {
                auto d = store_.read_records<Cluster>("cluster", o.name, "dropped");
                v.insert(v.end(), d.begin(), d.end());
            }
        }
        return out;
    }

    fs::path benchmark_manifest_path() const { return store_.stage_dir("build-bench") / "benchmark.jsonl"; }

    std::vector<PositiveItem> positives() const {
        std::vector<PositiveItem> out;
        if (cfg_.positives_file.empty()) return out;
        std::ifstream in(cfg_.positives_file);
        if (!in) throw ConfigError("cannot open positives manifest " + cfg_.positives_file.string());
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) out.push_back(Json::parse(line).get<PositiveItem>());
        return out;
    }

    /// Makes sure an image is in the cache, fetching it from `uri` otherwise.
    void ensure_cached(const std::string& content_hash, const std::string& uri) {
        if (cache_.contains(content_hash)) return;
        FileFetcher fetcher;
        const auto rec = cache_.put(fetcher.fetch(uri), uri, Lineage{Stage::ingest, "manifest"});
        if (rec.content_hash != content_hash)
            throw Error("image at " + uri + " does not match content hash " + content_hash.substr(0, 12));
    }

    /// Every survivor with the holdout VLMs' answers appended.
    std::map<std::string, std::vector<ImageRecord>> holdout_records() {
        std::map<std::string, std::vector<ImageRecord>> out;
        for (const auto& o : cfg_.objects) {
            auto recs = survivors(o.name);
            for (auto& h : a_.holdout) {
                const auto evals = evaluate_items(*h, ask_items(recs), cache_, PromptBank::builtin(),
                                                  kStandardTemplate, &pool_);
                for (std::size_t i = 0; i < recs.size(); ++i) recs[i].evaluations.push_back(evals[i]);
            }
            out[o.name] = std::move(recs);
        }
        return out;
    }

    /// Survivors on which both holdout VLMs answer yes: the images labelers
    /// must judge before they can become benchmark negatives.
    std::vector<std::pair<std::string, ImageRecord>> review_candidates() {
        if (!store_.stage_complete("cluster")) throw DependencyError("review", "cluster");
        std::vector<std::pair<std::string, ImageRecord>> out;
        for (auto& [object, rs] : holdout_records())
            for (auto& r : rs)
                if (answered_by_all(r, cfg_.holdout_ids(), Answer::yes)) out.emplace_back(object, std::move(r));
        return out;
    }

private:
    const ObjectSpec* find_object(const std::string& name) const {
        for (const auto& o : cfg_.objects)
            if (o.name == name) return &o;
        return nullptr;
    }

    std::vector<const ObjectSpec*> selected() const {
        std::vector<const ObjectSpec*> out;
        for (const auto& o : cfg_.objects)
            if (filter_.empty() || filter_.count(o.name)) out.push_back(&o);
        return out;
    }

    static bool per_object(std::string_view stage) {
        return stage == "gen-queries" || stage == "opt-queries" || stage == "explore" || stage == "exploit" ||
               stage == "cluster";
    }

    bool all_objects_done(const std::string& stage) const {
        if (!per_object(stage)) return true;
        for (const auto& o : cfg_.objects)
            if (!store_.object_complete(stage, o.name)) return false;
        return true;
    }

    /// Runs `fn` for each selected object not yet complete in `stage`.
    template <class Fn>
    void for_objects(const std::string& stage, Fn&& fn) {
        const auto objs = selected();
        std::size_t done = 0;
        for (const auto* o : objs) {
            ++done;
            if (store_.object_complete(stage, o->name)) continue;
            store_.reset_object(stage, o->name);
            const std::size_t n = fn(*o);
            store_.mark_object_complete(stage, o->name, n);
            log_.info("object_done", {{"stage", stage}, {"object", o->name}, {"records", n}, {"done", done},
                                      {"total", objs.size()}});
        }
    }

    FlatIndex& index() {
        if (!index_) {
            if (cfg_.index_dir.empty()) throw ConfigError("config has no index.dir");
            if (!fs::is_directory(cfg_.index_dir)) throw ConfigError("index dir " + cfg_.index_dir.string() + " does not exist");
            index_ = std::make_unique<FlatIndex>(FlatIndex::build(cfg_.index_dir, *a_.embedder, cfg_.index_id));
            store_.declare_embedding_dim(index_->dim());
            log_.info("index_built", {{"items", index_->size()}, {"dim", index_->dim()}});
        }
        return *index_;
    }

    Retriever& retriever() {
        if (!retriever_)
            retriever_ = std::make_unique<Retriever>(RetrievalContext{index(), fetcher_, cache_, *a_.embedder,
                                                                      *a_.perceptual, *a_.detector, *a_.vlm,
                                                                      cfg_.policy, cfg_.retrieval, &pool_, nullptr});
        return *retriever_;
    }

    PromptProtocol protocol() const {
        return cfg_.policy.mode == FilterMode::reverse ? PromptProtocol::reverse() : PromptProtocol::standard();
    }

    // -- stages ----------------------------------------------------------------------------

    Json gen_queries() {
        Json failed = Json::array();
        Json leaks = Json::object();
        for_objects("gen-queries", [&](const ObjectSpec& o) {
            const auto res = generate_text_queries(*a_.llm, *a_.embedder, o, protocol());
            std::vector<Json> transcript;
            for (const auto& t : res.transcript) transcript.push_back(Json{{"reply", t}});
            store_.append_json("gen-queries", o.name, transcript, "transcript");
            if (res.failed) {
                failed.push_back(Json{{"object", o.name}, {"error", res.error}, {"attempts", res.attempts}});
                log_.warn("queries_failed", {{"object", o.name}, {"error", res.error}});
            }
            std::size_t n_leaks = 0;
            for (const auto& q : res.queries) n_leaks += q.leaks_name;
            if (n_leaks) leaks[o.name] = n_leaks;
            return store_.append_records("gen-queries", o.name, res.queries, "queries");
        });
        return Json{{"failed_objects", failed}, {"leaking_queries", leaks}};
    }

    Json opt_queries() {
        if (!a_.generator) throw ConfigError("opt-queries needs a generator adapter");
        OptAdapters ad{*a_.vlm, *a_.detector, *a_.generator};
        std::size_t failures = 0;
        for_objects("opt-queries", [&](const ObjectSpec& o) {
            std::vector<Query> init;
            for (auto& q : store_.read_records<Query>("gen-queries", o.name, "queries"))
                if (!q.leaks_name) init.push_back(std::move(q));
            auto results = parallel_map(&pool_, init.size(), [&](std::size_t i) {
                return optimize_query(ad, init[i], cfg_.opt, &cache_, a_.embedder.get());
            });
            std::vector<Query> out;
            std::vector<Json> traj;
            for (auto& r : results) {
                if (r.failed) {
                    ++failures;
                    log_.warn("optimization_failed", {{"object", o.name}, {"error", r.error}});
                    continue;
                }
                traj.push_back(Json{{"query", r.query.id}, {"trajectory", r.trajectory}});
                out.push_back(std::move(r.query));
            }
            store_.append_json("opt-queries", o.name, traj, "trajectories");
            return store_.append_records("opt-queries", o.name, out, "queries");
        });
        return Json{{"failed_optimizations", failures}};
    }

    Json explore() {
        RetrievalStats total;
        for_objects("explore", [&](const ObjectSpec& o) {
            std::vector<Query> qs;
            for (auto& q : queries(o.name))
                if (!q.leaks_name) qs.push_back(std::move(q));
            auto res = retriever().explore(qs);
            total += res.stats;
            store_.append_json("explore", o.name, std::vector<Json>{Json(res.stats)}, "stats");
            return store_.append_records("explore", o.name, res.survivors);
        });
        return Json{{"stats", total}};
    }

    Json exploit() {
        RetrievalStats total;
        for_objects("exploit", [&](const ObjectSpec& o) {
            const auto seeds = store_.read_records<ImageRecord>("explore", o.name);
            auto res = retriever().exploit(seeds);
            total += res.stats;
            store_.append_json("exploit", o.name, std::vector<Json>{Json(res.stats)}, "stats");
            return store_.append_records("exploit", o.name, res.survivors);
        });
        return Json{{"stats", total}};
    }

    Json cluster() {
        std::size_t kept = 0, dropped = 0;
        for_objects("cluster", [&](const ObjectSpec& o) {
            const auto seeds = store_.read_records<ImageRecord>("explore", o.name);
            const auto members = store_.read_records<ImageRecord>("exploit", o.name);
            std::set<std::string> parents;
            for (const auto& s : seeds) parents.insert(s.id);
            const auto pre = precluster(members, &parents);
            const auto dist = DistanceTable::from_perceptual(perceptual_embeddings(members), *a_.perceptual);
            auto merged = merge_clusters(pre, dist, cfg_.merge);
            kept += merged.clusters.size();
            dropped += merged.dropped.size();
            std::map<std::string, const ImageRecord*> by_id;
            for (const auto& m : members) by_id[m.id] = &m;
            for (const auto& c : merged.clusters) {
                std::vector<Image> imgs;
                for (const auto& id : c.members) imgs.push_back(cache_.load(by_id.at(id)->content_hash));
                const fs::path sheet = store_.stage_dir("cluster") / "sheets" / (object_file_stem(c.id) + ".pgm");
                write_file_atomic(sheet, encode_pnm(contact_sheet(imgs)));
            }
            std::vector<Json> steps;
            for (const auto& s : merged.steps)
                steps.push_back(Json{{"left", s.left}, {"right", s.right}, {"distance", s.distance}});
            store_.append_json("cluster", o.name, steps, "steps");
            store_.append_records("cluster", o.name, merged.dropped, "dropped");
            return store_.append_records("cluster", o.name, merged.clusters, "clusters");
        });
        return Json{{"clusters", kept}, {"dropped", dropped}};
    }

    Json analyze() {
        const auto cl = clusters();
        Json report;
        report["summary"] = summarize(cl);
        report["frequency"] = frequency_report(cl, cfg_.objects);

        std::vector<ImageRecord> all;
        std::vector<double> distances;
        for (const auto& o : cfg_.objects) {
            auto recs = survivors(o.name);
            std::vector<Query> text;
            for (auto& q : store_.read_records<Query>("gen-queries", o.name, "queries"))
                if (q.kind == QueryKind::text) text.push_back(std::move(q));
            if (!text.empty() && !recs.empty()) {
                const auto h = min_query_distance(recs, text);
                distances.insert(distances.end(), h.values.begin(), h.values.end());
            }
            all.insert(all.end(), recs.begin(), recs.end());
        }
        report["min_query_distance"] = make_histogram(distances);

        const std::string run = store_.run_id();
        Json transfers = Json::array();
        std::vector<std::vector<std::string>> rows;
        auto add_transfer = [&](VlmAdapter& v) {
            const auto t = transfer_rate(all, v, cache_, run, PromptBank::builtin(), &pool_);
            transfers.push_back(t);
            rows.push_back({t.target_model, std::to_string(t.n_images), std::to_string(t.counts.invalid), fmt3(t.rate),
                            t.unreliable ? "unreliable" : ""});
        };
        for (auto& v : a_.holdout) add_transfer(*v);
        for (auto& v : a_.transfer) add_transfer(*v);
        report["transfer"] = transfers;

        std::string text = "run " + run + "\n\n";
        const RunSummary s = summarize(cl);
        text += format_table({"objects", "images", "clusters", "clusters/object", "images/cluster"},
                             {{std::to_string(s.objects), std::to_string(s.total_images), std::to_string(s.total_clusters),
                               fmt3(s.avg_clusters_per_object), fmt3(s.avg_images_per_cluster)}});
        if (!rows.empty()) text += "\n" + format_table({"target", "images", "invalid", "transfer", ""}, rows);

        if (!all.empty()) {
            const auto suite = prompt_transfer(all, *a_.vlm, cache_, prompt_suite_ids(), PromptBank::builtin(), &pool_);
            report["prompt_suite"] = suite;
            std::vector<std::vector<std::string>> prow;
            for (const auto& t : suite.rates) prow.push_back({t.template_id, fmt3(t.rate), t.question});
            prow.push_back({"mean", fmt3(suite.mean), ""});
            prow.push_back({"std", fmt3(suite.std), ""});
            text += "\n" + format_table({"template", "rate", "question"}, prow);
        }
        const auto pos = positives();
        if (!pos.empty()) {
            for (const auto& p : pos) ensure_cached(p.content_hash, p.uri);
            report["tpr_ico"] = tpr_ico(pos, *a_.vlm, cache_, PromptBank::builtin(), &pool_);
        }
        write_file_atomic(store_.stage_dir("analyze") / "report.json", report.dump(2) + "\n");
        write_file_atomic(store_.stage_dir("analyze") / "report.txt", text);
        return Json{{"summary", report["summary"]}};
    }

    Json build_bench() {
        if (a_.holdout.size() != 2) throw ConfigError("build-bench needs exactly two holdout VLMs");
        const auto recs = holdout_records();
        std::vector<Json> candidates;
        for (const auto& [object, rs] : recs) {
            store_.append_records("build-bench", object, rs, "holdout");
            for (const auto& r : rs)
                if (answered_by_all(r, cfg_.holdout_ids(), Answer::yes))
                    candidates.push_back(Json{{"object", object}, {"content_hash", r.content_hash}, {"uri", r.uri}});
        }
        std::string cand_text;
        for (const auto& c : candidates) cand_text += c.dump() + "\n";
        write_file_atomic(store_.stage_dir("build-bench") / "review_candidates.jsonl", cand_text);

        ConsensusTable labels;
        if (!cfg_.labels_file.empty()) labels = LabelStore(cfg_.labels_file).consensus();
        const auto pos = positives();
        const Benchmark b = build_benchmark(recs, cfg_.objects, cfg_.holdout_ids(), labels, pos, cfg_.caps);
        for (const auto& i : b.items)
            if (i.provenance == Provenance::ingested_positive) ensure_cached(i.content_hash, i.uri);
        write_benchmark_manifest(benchmark_manifest_path(), b.items);
        Json excluded = Json::array();
        for (const auto& e : b.excluded) {
            excluded.push_back(Json{{"object", e.object}, {"reason", e.reason}});
            log_.warn("object_excluded", {{"stage", "build-bench"}, {"object", e.object}, {"reason", e.reason}});
        }
        return Json{{"candidates", candidates.size()}, {"negatives", b.negatives}, {"positives", b.positives},
                    {"items", b.items.size()}, {"excluded", excluded}};
    }

    Json eval_bench() {
        const fs::path manifest = manifest_override_.empty() ? benchmark_manifest_path() : manifest_override_;
        if (!fs::exists(manifest)) throw DependencyError("eval-bench", "benchmark manifest " + manifest.string());
        const auto items = read_benchmark_manifest(manifest);
        for (const auto& i : items) ensure_cached(i.content_hash, i.uri);
        Json results = Json::object();
        std::vector<std::vector<std::string>> rows;
        auto eval = [&](VlmAdapter& v) {
            const auto m = eval_existence_qa(v, items, cache_, kStandardTemplate, PromptBank::builtin(), &pool_);
            results[v.model_id()] = m;
            rows.push_back({v.model_id(), fmt3(m.accuracy), fmt3(m.tnr), fmt3(m.tpr), fmt3(m.hm), fmt3(m.valid_rate)});
        };
        eval(*a_.vlm);
        for (auto& v : a_.transfer) eval(*v);
        write_file_atomic(store_.stage_dir("eval-bench") / "report.json", results.dump(2) + "\n");
        write_file_atomic(store_.stage_dir("eval-bench") / "report.txt",
                          format_table({"model", "accuracy", "tnr", "tpr", "hm", "valid"}, rows));
        return Json{{"items", items.size()}, {"models", rows.size()}};
    }

    Json export_finetune() {
        const auto split = split_validation(clusters(true));
        std::map<std::string, std::vector<ImageRecord>> pool;
        std::set<std::string> validation_hashes;
        for (const auto& o : cfg_.objects) {
            std::map<std::string, ImageRecord> by_id;
            for (auto& r : store_.read_records<ImageRecord>("build-bench", o.name, "holdout")) by_id.emplace(r.id, std::move(r));
            auto it = split.train.find(o.name);
            if (it != split.train.end())
                for (const auto& id : it->second)
                    if (auto r = by_id.find(id); r != by_id.end()) pool[o.name].push_back(r->second);
            for (const auto& id : split.validation_members)
                if (auto r = by_id.find(id); r != by_id.end()) validation_hashes.insert(r->second.content_hash);
        }
        std::set<std::string> bench_hashes;
        if (fs::exists(benchmark_manifest_path()))
            for (const auto& i : read_benchmark_manifest(benchmark_manifest_path())) bench_hashes.insert(i.content_hash);
        FinetuneConfig fc = cfg_.finetune;
        const auto ex = export_dataset(pool, positives(), bench_hashes, validation_hashes, fc);
        write_file_atomic(store_.stage_dir("export-finetune") / "finetune.jsonl", ex.text());
        write_file_atomic(store_.stage_dir("export-finetune") / "split.json", Json(split).dump(2) + "\n");
        for (const auto& o : split.empty_train)
            log_.warn("empty_train_pool", {{"stage", "export-finetune"}, {"object", o}});
        return Json{{"rows", ex.rows.size()}, {"counts", ex.header["counts"]}};
    }

    RunConfig cfg_;
    AdapterSet& a_;
    RunStore store_;
    ImageCache cache_;
    WorkerPool pool_;
    Logger& log_;
    FileFetcher fetcher_;
    std::set<std::string> filter_;
    fs::path manifest_override_;
    std::unique_ptr<FlatIndex> index_;
    std::unique_ptr<Retriever> retriever_;
};

} // namespace dash
