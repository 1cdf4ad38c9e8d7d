// Acceptance checks. One PASS/FAIL line per criterion; exit status 1 if any fails.

#include "dash/pipeline/pipeline.hpp"
#include "dash/pipeline/stub_workspace.hpp"
#include "dash/review/review.hpp"

#include "support.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>

using namespace dash;
using dash::testing::TempDir;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    std::string name;
    double time_limit_s;
    std::function<Outcome()> run;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// -- metric replay: harmonic mean ------------------------------------------------------

struct PublishedRow {
    const char* model;
    double tnr, tpr, hm;
    bool input_rounding_only;  // published HM is only consistent within rounding of TNR/TPR
};

// Existence-QA scores (TNR, TPR, HM) as published for the benchmark, in percent.
const PublishedRow kHmRows[] = {
    {"PaliGemma-3B", 26.4, 97.7, 41.6, false},      {"LN Vicuna", 10.4, 96.9, 18.7, true},
    {"LN Mistral", 30.1, 93.4, 45.5, false},        {"LN Llama", 37.0, 93.4, 53.0, false},
    {"Llava-OneVision", 60.2, 90.1, 72.2, false},   {"PaliGemma-2-3B", 40.9, 96.8, 57.5, false},
    {"PaliGemma-2-10B", 48.0, 91.6, 63.0, false},   {"Ovis2-1B", 35.1, 94.0, 51.1, false},
    {"Ovis2-2B", 27.3, 96.1, 42.5, false},          {"Ovis2-4B", 31.0, 98.6, 47.2, false},
    {"Ovis2-8B", 44.8, 98.0, 61.5, false},          {"InternVL2.5-8B", 47.2, 96.2, 63.3, false},
    {"InternVL2.5-26B", 57.3, 97.8, 72.2, true},    {"InternVL2.5-38B", 54.8, 97.6, 70.2, false},
    {"InternVL2.5-78B", 50.3, 97.8, 66.5, true},    {"InternVL2.5-8B-MPO", 42.3, 96.4, 58.8, false},
    {"InternVL2.5-26B-MPO", 54.8, 97.4, 70.1, false}, {"GPT-4o-mini", 77.0, 95.7, 85.3, false},
};

/// Counts over 1000 absent and 1000 present items reproducing a TNR/TPR pair.
QaCounts counts_for(double tnr, double tpr) {
    QaCounts c;
    const auto no = static_cast<std::size_t>(std::lround(tnr * 1000.0));
    const auto yes = static_cast<std::size_t>(std::lround(tpr * 1000.0));
    c.absent.no = no;
    c.absent.yes = 1000 - no;
    c.present.yes = yes;
    c.present.no = 1000 - yes;
    return c;
}

Outcome hm_replay() {
    Outcome o;
    // PaliGemma row end to end through eval_existence_qa on recorded replies.
    TempDir tmp("acc-hm");
    ImageCache cache(tmp / "cache");
    ReplayVlm vlm("paligemma-3b");
    std::vector<BenchmarkItem> items;
    const ObjectSpec obj{"hummingbird", DatasetTag::imagenet, std::nullopt};
    const std::string prompt = PromptBank::builtin().full_prompt(kStandardTemplate, obj.name);
    for (std::uint32_t i = 0; i < 2000; ++i) {
        const auto rec = cache.put(replay_fixture_image(9, i), "replay", {Stage::ingest, "replay"});
        const bool absent = i < 1000;
        const std::uint32_t k = absent ? i : i - 1000;
        const bool say_yes = absent ? k >= 264 : k < 977;
        vlm.add(rec.content_hash, prompt, say_yes ? "Yes" : "No");
        items.push_back({rec.id, rec.content_hash, rec.uri, obj, absent ? GroundTruth::absent : GroundTruth::present,
                         absent ? Provenance::mined_negative : Provenance::ingested_positive});
    }
    const QaMetrics m = eval_existence_qa(vlm, items, cache);
    bool ok = m.hm && std::fabs(*m.hm - 0.416) <= 0.0005 && m.tnr && *m.tnr == 0.264 && m.tpr && *m.tpr == 0.977;
    std::ostringstream d;
    d << "PaliGemma-3B HM " << fmt("%.5f", m.hm.value_or(-1));

    std::size_t strict = 0, rounding = 0, bad = 0;
    for (const auto& r : kHmRows) {
        const QaMetrics q = qa_metrics(counts_for(r.tnr / 100, r.tpr / 100));
        const double want = r.hm / 100;
        if (!r.input_rounding_only) {
            if (q.hm && std::fabs(*q.hm - want) <= 0.0005) {
                ++strict;
            } else {
                ++bad;
                d << "; " << r.model << " got " << fmt("%.5f", q.hm.value_or(-1));
            }
        } else {
            // HM is increasing in both arguments: bound it over the rounding box of the inputs.
            const double lo = harmonic_mean(r.tnr / 100 - 0.0005, r.tpr / 100 - 0.0005);
            const double hi = harmonic_mean(r.tnr / 100 + 0.0005, r.tpr / 100 + 0.0005);
            if (want >= lo - 0.0005 && want <= hi + 0.0005) {
                ++rounding;
            } else {
                ++bad;
                d << "; " << r.model << " outside [" << fmt("%.4f", lo) << ", " << fmt("%.4f", hi) << "]";
            }
        }
    }
    ok = ok && bad == 0 && strict >= 4;
    d << "; " << strict << " rows within 0.0005, " << rounding << " within input rounding";
    o.pass = ok;
    o.detail = d.str();
    return o;
}

// -- metric replay: prompt suite ----------------------------------------------------------

Outcome prompt_suite_replay() {
    // Published yes-rates of PaliGemma on its own text-query images, per template.
    const std::vector<std::pair<std::string, double>> published = {
        {"seen", 0.861}, {"have", 0.890},     {"show", 0.860},    {"contain", 0.857},
        {"include", 0.824}, {"depicted", 0.851}, {"present", 0.787}, {"there", 0.717},
        {"shown", 0.670}, {"visible", 0.467},  {"in", 0.348}};
    TempDir tmp("acc-suite");
    ImageCache cache(tmp / "cache");
    auto records = testing::put_replay_images(cache, 1, 1025, "hummingbird");
    auto vlm = ReplayVlm::from_file(testing::fixture_dir() / "replay" / "prompt_suite.jsonl", "paligemma-3b");
    const auto r = prompt_transfer(records, vlm, cache, prompt_suite_ids());

    Outcome o;
    std::ostringstream d;
    bool ok = r.rates.size() == published.size();
    for (std::size_t i = 0; ok && i < published.size(); ++i) {
        const auto& t = r.rates[i];
        if (t.template_id != published[i].first || !t.rate || *t.rate != published[i].second) {
            ok = false;
            d << t.template_id << " rate " << fmt("%.4f", t.rate.value_or(-1)) << " != " << published[i].second << "; ";
        }
    }
    ok = ok && std::fabs(r.mean - 0.739) <= 0.001 && std::fabs(r.std - 0.179) <= 0.001;
    d << r.rates.size() << " templates exact, mean " << fmt("%.4f", r.mean) << ", std " << fmt("%.4f", r.std);
    o.pass = ok;
    o.detail = d.str();
    return o;
}

// -- losses --------------------------------------------------------------------------------

Outcome loss_checks() {
    const double ln2 = 0.693147;
    bool ok = std::fabs(vlm_loss(0.5) - ln2) <= 1e-6 && std::fabs(det_loss(0.5) - ln2) <= 1e-6 && det_loss(0.04) == 0.0;
    OptConfig cfg;
    cfg.regularizer_weight = 0.0;
    Conditioning c;
    c.latent = {0.3, -1.2, 2.0};
    std::size_t checked = 0;
    for (double py : {0.01, 0.2, 0.5, 0.93}) {
        for (double pd : {0.0, 0.049, 0.05, 0.3, 0.97}) {
            const auto t = total_loss(py, pd, c, cfg);
            ok = ok && t.total == vlm_loss(py) + det_loss(pd) && t.reg == 0.0;
            ++checked;
        }
    }
    return {ok, "vlm_loss(0.5)=" + fmt("%.6f", vlm_loss(0.5)) + ", det_loss(0.5)=" + fmt("%.6f", det_loss(0.5)) +
                    ", det_loss(0.04)=" + fmt("%g", det_loss(0.04)) + ", additivity on " + std::to_string(checked) +
                    " pairs"};
}

// -- gradient oracle --------------------------------------------------------------------------

Outcome gradient_oracle() {
    synthetic::Vlm vlm;
    synthetic::Detector det;
    synthetic::Llm llm;
    Rng rng(99);
    const OptConfig cfg;
    const auto& objects = synthetic::World::standard().objects();
    double worst = 0.0;
    std::size_t det_active = 0, n = 0;
    while (n < 100) {
        const std::size_t d = 1 + n % 16;
        synthetic::Generator gen(d, 100 + n);
        OptAdapters a{vlm, det, gen};
        const auto& object = objects[n % objects.size()].spec.name;
        const auto prompts = llm.standard_prompts(object, true);
        Conditioning c;
        c.latent.resize(d);
        for (auto& v : c.latent) v = rng.normal() * rng.uniform(0.5, 1.5);
        c.text = gen.encode_prompt(prompts[rng.index(prompts.size())]);
        for (auto& t : c.text)
            for (auto& v : t) v += 0.3 * rng.normal();
        const std::string prompt = PromptBank::builtin().full_prompt(kStandardTemplate, object);
        const Objective base = evaluate_objective(a, c, prompt, object, cfg);
        // the detector term switches on at the floor; keep finite differences off the switch
        if (std::fabs(base.p_det - cfg.det_floor) < 1e-3) continue;
        det_active += base.p_det >= cfg.det_floor;

        const Vector analytic = flatten(base.grad);
        Vector theta = flatten(c);
        Vector numeric(theta.size());
        const double h = 1e-5;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double keep = theta[i];
            theta[i] = keep + h;
            const double fp = evaluate_objective(a, unflatten(theta, c), prompt, object, cfg, false).loss.total;
            theta[i] = keep - h;
            const double fm = evaluate_objective(a, unflatten(theta, c), prompt, object, cfg, false).loss.total;
            theta[i] = keep;
            numeric[i] = (fp - fm) / (2 * h);
        }
        double diff = 0, na = 0, nn = 0;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
            na += analytic[i] * analytic[i];
            nn += numeric[i] * numeric[i];
        }
        const double rel = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-300});
        worst = std::max(worst, rel);
        ++n;
    }
    return {worst < 1e-4, "100 conditionings, latent dims 1..16, detector term active in " + std::to_string(det_active) +
                              ", worst relative error " + fmt("%.2e", worst)};
}

// -- optimization ---------------------------------------------------------------------------

Outcome optimization_behavior() {
    synthetic::Vlm vlm;
    synthetic::Detector det;
    synthetic::Generator gen;
    synthetic::Llm llm;
    OptAdapters a{vlm, det, gen};
    std::size_t instances = 0, fooled = 0, monotone = 0;
    for (const auto& o : synthetic::World::standard().objects()) {
        const auto prompts = llm.standard_prompts(o.spec.name, false);
        for (std::size_t i = 0; i < prompts.size(); ++i) {
            Query q;
            q.id = o.spec.name + "/llm/" + std::to_string(i);
            q.object = o.spec;
            q.payload = prompts[i];
            OptConfig cfg;
            cfg.seed = i;
            const auto r = optimize_query(a, q, cfg);
            if (r.failed) return {false, "optimization failed: " + r.error};
            const auto& init = r.trajectory.entries.front();
            if (init.p_yes >= 0.1) continue;
            ++instances;
            const auto& best = r.trajectory.best();
            fooled += best.p_yes >= 0.5 && best.p_det < 0.05;
            monotone += best.total <= init.total;
        }
    }
    const bool ok = instances >= 20 && fooled * 10 >= instances * 9 && monotone == instances;
    return {ok, std::to_string(instances) + " instances with initial p_yes < 0.1, " + std::to_string(fooled) +
                    " reach p_yes >= 0.5 with p_det < 0.05, best <= initial in " + std::to_string(monotone)};
}

// -- clustering oracle ------------------------------------------------------------------------

struct RefCluster {
    std::vector<std::string> members, seeds;
};

/// Straightforward average linkage: recompute every pairwise mean from scratch each round.
MergeResult reference_merge(std::vector<RefCluster> cs, const std::map<std::pair<std::string, std::string>, double>& d,
                            double max_distance, std::size_t min_size, const std::string& object) {
    MergeResult out;
    auto dist = [&](const std::string& a, const std::string& b) { return d.at(a < b ? std::pair{a, b} : std::pair{b, a}); };
    while (cs.size() > 1) {
        double best = 0;
        std::pair<std::string, std::string> best_key;
        std::size_t bi = 0, bj = 0;
        bool found = false;
        for (std::size_t i = 0; i < cs.size(); ++i)
            for (std::size_t j = i + 1; j < cs.size(); ++j) {
                double s = 0;
                for (const auto& x : cs[i].members)
                    for (const auto& y : cs[j].members) s += dist(x, y);
                const double avg = s / static_cast<double>(cs[i].members.size() * cs[j].members.size());
                auto key = std::minmax(cs[i].members.front(), cs[j].members.front());
                const std::pair<std::string, std::string> k{key.first, key.second};
                if (!found || avg < best || (avg == best && k < best_key)) {
                    found = true;
                    best = avg;
                    best_key = k;
                    bi = i;
                    bj = j;
                }
            }
        if (best > max_distance) break;
        out.steps.push_back({best_key.first, best_key.second, best});
        RefCluster merged;
        merged.members = cs[bi].members;
        merged.members.insert(merged.members.end(), cs[bj].members.begin(), cs[bj].members.end());
        std::sort(merged.members.begin(), merged.members.end());
        std::set<std::string> seeds(cs[bi].seeds.begin(), cs[bi].seeds.end());
        seeds.insert(cs[bj].seeds.begin(), cs[bj].seeds.end());
        merged.seeds.assign(seeds.begin(), seeds.end());
        cs.erase(cs.begin() + static_cast<std::ptrdiff_t>(bj));
        cs[bi] = std::move(merged);
    }
    for (auto& c : cs) {
        Cluster k;
        k.object = object;
        k.members = c.members;
        k.seeds = c.seeds;
        (k.size() >= min_size ? out.clusters : out.dropped).push_back(std::move(k));
    }
    auto order = [](std::vector<Cluster>& v, const std::string& prefix) {
        std::sort(v.begin(), v.end(), [](const Cluster& a, const Cluster& b) {
            return a.size() != b.size() ? a.size() > b.size() : a.members.front() < b.members.front();
        });
        char buf[16];
        for (std::size_t i = 0; i < v.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%03zu", i);
            v[i].id = prefix + buf;
        }
    };
    order(out.clusters, object + "/c");
    order(out.dropped, object + "/small");
    return out;
}

bool same_clusters(const std::vector<Cluster>& a, const std::vector<Cluster>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].id != b[i].id || a[i].members != b[i].members || a[i].seeds != b[i].seeds || a[i].object != b[i].object)
            return false;
    return true;
}

Outcome clustering_oracle() {
    Rng rng(7);
    std::size_t matched = 0, merges = 0, ties = 0;
    for (int inst = 0; inst < 200; ++inst) {
        // Distances on a dyadic grid keep every sum exact, so ties are genuine ties.
        const double grid = inst % 2 == 0 ? 8.0 : 1024.0;
        const std::size_t n_pre = 1 + rng.index(8);
        std::vector<Cluster> pre;
        std::vector<RefCluster> ref;
        std::vector<std::string> ids;
        std::set<std::string> used;
        for (std::size_t p = 0; p < n_pre; ++p) {
            Cluster c;
            c.object = "obj";
            c.id = "pre/s" + std::to_string(p);
            c.seeds = {"s" + std::to_string(p)};
            const std::size_t m = 1 + rng.index(3);
            for (std::size_t k = 0; k < m; ++k) {
                std::string id;
                do id = "m" + std::to_string(rng.index(1000)); while (!used.insert(id).second);
                c.members.push_back(id);
                ids.push_back(id);
            }
            std::sort(c.members.begin(), c.members.end());
            ref.push_back({c.members, c.seeds});
            pre.push_back(std::move(c));
        }
        const std::size_t n = ids.size();
        std::vector<double> matrix(n * n, 0.0);
        std::map<std::pair<std::string, std::string>, double> d;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                const double v = static_cast<double>(rng.index(static_cast<std::size_t>(1.5 * grid) + 1)) / grid;
                matrix[i * n + j] = matrix[j * n + i] = v;
                d[std::minmax(ids[i], ids[j])] = v;
            }
        MergeConfig cfg;
        cfg.max_merge_distance = static_cast<double>(rng.index(static_cast<std::size_t>(grid) + 1)) / grid;
        cfg.min_cluster_size = 1 + rng.index(6);
        const auto got = merge_clusters(pre, DistanceTable::from_matrix(ids, matrix), cfg);
        const auto want = reference_merge(ref, d, cfg.max_merge_distance, cfg.min_cluster_size, "obj");

        bool same = same_clusters(got.clusters, want.clusters) && same_clusters(got.dropped, want.dropped) &&
                    got.steps.size() == want.steps.size();
        for (std::size_t s = 0; same && s < got.steps.size(); ++s) {
            auto gk = std::minmax(got.steps[s].left, got.steps[s].right);
            same = gk.first == want.steps[s].left && gk.second == want.steps[s].right &&
                   got.steps[s].distance == want.steps[s].distance;
            if (s + 1 < got.steps.size() && got.steps[s].distance == got.steps[s + 1].distance) ++ties;
        }
        merges += got.steps.size();
        matched += same;
    }
    return {matched == 200, std::to_string(matched) + "/200 instances identical (" + std::to_string(merges) +
                                " merges, " + std::to_string(ties) + " equal-distance consecutive merges)"};
}

// -- dedup ----------------------------------------------------------------------------------------

Outcome dedup_property() {
    synthetic::Perceptual perceptual;
    Rng rng(13);
    const double thr = 0.9;
    std::size_t violations = 0, dropped = 0, retained = 0;
    for (int b = 0; b < 200; ++b) {
        const std::size_t n = 5 + rng.index(40);
        std::vector<Vector> bases;
        std::vector<Vector> cand;
        for (std::size_t i = 0; i < n; ++i) {
            Vector v(8);
            if (!bases.empty() && rng.uniform() < 0.5) {
                v = bases[rng.index(bases.size())];
                const double s = rng.uniform(0.05, 0.6);
                for (auto& x : v) x += s * rng.normal();
            } else {
                for (auto& x : v) x = rng.normal();
                bases.push_back(v);
            }
            cand.push_back(std::move(v));
        }
        const bool with_seed = b % 3 == 0;
        const Vector seed = cand[rng.index(n)];
        const std::size_t limit = b % 4 == 0 ? 1 + rng.index(n) : std::numeric_limits<std::size_t>::max();
        const auto r = dedup(cand, perceptual, thr, with_seed ? &seed : nullptr, limit);
        retained += r.retained.size();
        dropped += r.dropped.size();

        for (std::size_t i = 0; i < r.retained.size(); ++i) {
            if (i > 0 && r.retained[i] <= r.retained[i - 1]) ++violations;
            if (with_seed && perceptual.similarity(cand[r.retained[i]], seed) > thr) ++violations;
            for (std::size_t j = i + 1; j < r.retained.size(); ++j)
                if (perceptual.similarity(cand[r.retained[i]], cand[r.retained[j]]) > thr) ++violations;
        }
        // processed candidates form a prefix; each is retained or dropped by an earlier retained one (or the seed)
        std::set<std::size_t> kept(r.retained.begin(), r.retained.end());
        std::set<std::size_t> seen = kept;
        for (const auto& [i, by] : r.dropped) {
            if (!seen.insert(i).second) ++violations;
            if (by == DedupResult::kSeed) {
                if (!with_seed || perceptual.similarity(cand[i], seed) <= thr) ++violations;
            } else if (!kept.count(by) || by >= i || perceptual.similarity(cand[i], cand[by]) <= thr) {
                ++violations;
            }
        }
        const std::size_t processed = seen.size();
        if (processed && *seen.rbegin() != processed - 1) ++violations;
        if (processed < n && r.retained.size() != limit) ++violations;
    }
    return {violations == 0, "200 batches, " + std::to_string(retained) + " retained, " + std::to_string(dropped) +
                                 " dropped, " + std::to_string(violations) + " violations"};
}

// -- end to end ---------------------------------------------------------------------------------

/// Two labelers judge every review candidate; labeler b disagrees on every 7th.
void simulate_labels(Pipeline& p) {
    LabelStore store(p.config().labels_file);
    ReviewService service(store, {"a", "b"});
    for (const auto& [object, r] : p.review_candidates()) service.add_task(object, r.content_hash);
    std::size_t k = 0;
    for (const std::string labeler : {"a", "b"}) {
        k = 0;
        while (auto t = service.next_task(labeler)) {
            const bool disagree = labeler == "b" && k % 7 == 3;
            service.submit(labeler, t->task_id, disagree ? "yes" : "no", "2026-01-01T00:00:00Z");
            ++k;
        }
    }
}

struct E2eRun {
    std::map<std::string, Bytes> runs, cache;
    std::map<std::string, std::set<std::string>> survivors;
    std::size_t clusters = 0;
    bool all_complete = true;
    std::size_t bad_survivors = 0;
    std::string vlm_id;
};

E2eRun run_e2e(const StubWorkspace& ws) {
    E2eRun out;
    auto cfg = load_run_config(ws.config);
    auto adapters = make_adapters(cfg);
    out.vlm_id = adapters.vlm->model_id();
    const double det_reject = cfg.policy.det_reject;
    Pipeline p(cfg, adapters, "acceptance");
    for (const auto& s : stage_plan(p.config().optimize)) {
        if (s == "build-bench") simulate_labels(p);
        p.run_stage(s);
    }
    p.run_stage("eval-bench");
    for (auto s : kStages) out.all_complete = out.all_complete && p.store().stage_complete(s);
    for (const auto& o : p.config().objects) {
        for (const auto& r : p.survivors(o.name)) {
            out.survivors[o.name].insert(r.content_hash);
            const Evaluation* e = find_evaluation(r, out.vlm_id);
            if (!e || e->answer != Answer::yes || !e->p_det || *e->p_det > det_reject || *e->p_det > 0.1)
                ++out.bad_survivors;
        }
    }
    for (const auto& [_, cs] : p.clusters()) out.clusters += cs.size();
    out.runs = testing::snapshot_tree(cfg.runs_dir);
    out.cache = testing::snapshot_tree(cfg.cache_dir);
    return out;
}

Outcome end_to_end() {
    TempDir tmp("acc-e2e");
    synthetic::CorpusParams params;
    params.size = 2000;
    const auto ws = write_stub_workspace(tmp.path(), params);
    const auto first = run_e2e(ws);
    fs::remove_all(ws.dir / "runs");
    fs::remove_all(ws.dir / "cache");
    const auto second = run_e2e(ws);

    std::size_t mismatched_objects = 0, planted = 0, survivors = 0;
    for (const auto& o : synthetic::World::standard().objects()) {
        const auto want = ws.corpus.planted_hashes(o.spec.name);
        const std::set<std::string> want_set(want.begin(), want.end());
        planted += want_set.size();
        auto it = first.survivors.find(o.spec.name);
        const auto got = it == first.survivors.end() ? std::set<std::string>{} : it->second;
        survivors += got.size();
        mismatched_objects += got != want_set;
    }
    const bool identical = first.runs == second.runs && first.cache == second.cache;
    const bool ok = first.all_complete && first.bad_survivors == 0 && mismatched_objects == 0 && first.clusters >= 1 &&
                    identical;
    std::ostringstream d;
    d << ws.corpus.items.size() << " images; all stages complete: " << (first.all_complete ? "yes" : "no") << "; "
      << survivors << " survivors vs " << planted << " planted, " << mismatched_objects << " objects differ, "
      << first.bad_survivors << " violate the filter; " << first.clusters << " clusters; re-run "
      << (identical ? "byte-identical" : "differs") << " (" << first.runs.size() + first.cache.size() << " files)";
    return {ok, d.str()};
}

// -- benchmark construction -----------------------------------------------------------------------

Evaluation answer_eval(const std::string& model, Answer a) {
    Evaluation e;
    e.model_id = model;
    e.template_id = std::string(kStandardTemplate);
    e.answer = a;
    e.reply = a == Answer::yes ? "Yes" : "No";
    return e;
}

std::string fake_hash(const std::string& tag, std::size_t i) { return sha256_hex(tag + "#" + std::to_string(i)); }

ImageRecord fake_record(const std::string& object, const std::string& hash, Answer h1, Answer h2) {
    ImageRecord r;
    r.content_hash = hash;
    r.id = image_id_for(hash);
    r.object = object;
    r.uri = "file:///corpus/" + hash.substr(0, 8);
    r.lineage = {Stage::exploitation, "seed"};
    r.evaluations = {answer_eval("holdout-a", h1), answer_eval("holdout-b", h2)};
    return r;
}

Outcome benchmark_construction() {
    Rng rng(21);
    const std::vector<std::string> holdouts = {"holdout-a", "holdout-b"};
    // object -> number of mined candidates, verified positives
    const std::vector<std::tuple<std::string, std::size_t, std::size_t>> plan = {
        {"hummingbird", 120, 200}, {"firetruck", 25, 200}, {"cello", 4, 200}, {"kite", 30, 6}, {"violin", 2, 50}};
    std::map<std::string, std::vector<ImageRecord>> records;
    std::vector<LabelVerdict> verdicts;
    std::vector<PositiveItem> positives;
    std::vector<ObjectSpec> objects;
    std::map<std::pair<std::string, std::string>, std::vector<Verdict>> raw;
    const Verdict choices[] = {Verdict::no, Verdict::no, Verdict::no, Verdict::yes, Verdict::ambiguous};
    for (const auto& [object, n, npos] : plan) {
        objects.push_back({object, DatasetTag::coco, std::nullopt});
        for (std::size_t i = 0; i < n; ++i) {
            const std::string h = fake_hash(object, i);
            const Answer a = rng.uniform() < 0.85 ? Answer::yes : Answer::no;
            const Answer b = rng.uniform() < 0.85 ? Answer::yes : Answer::no;
            records[object].push_back(fake_record(object, h, a, b));
            const std::size_t judged = object == "cello" ? 2 : rng.index(3);  // 0, 1 or 2 labelers
            for (std::size_t l = 0; l < judged; ++l) {
                const Verdict v = object == "cello" ? Verdict::no : choices[rng.index(5)];
                verdicts.push_back({object, h, l == 0 ? "a" : "b", v, "2026-01-01T00:00:00Z"});
                raw[{object, h}].push_back(v);
            }
            if (object == "cello") {  // every candidate survives both filters, a fixed 3 of 4 via holdouts
                records[object].back().evaluations = {answer_eval("holdout-a", i < 3 ? Answer::yes : Answer::no),
                                                      answer_eval("holdout-b", Answer::yes)};
            }
        }
        for (std::size_t i = 0; i < npos; ++i)
            positives.push_back({fake_hash(object + "+", i), object, DatasetTag::coco, "file:///pos", i % 5 != 4});
    }
    const auto table = ingest_labels(verdicts);
    const Benchmark b = build_benchmark(records, objects, holdouts, table, positives);

    std::ostringstream d;
    bool ok = true;
    std::map<std::string, std::size_t> neg, pos;
    for (const auto& item : b.items) {
        (item.ground_truth == GroundTruth::absent ? neg : pos)[item.object.name]++;
        if (item.ground_truth != GroundTruth::absent) continue;
        // consensus recomputed from the raw verdict list: exactly two labelers, both "no"
        const auto& v = raw[{item.object.name, item.content_hash}];
        const bool both_no = v.size() == 2 && v[0] == Verdict::no && v[1] == Verdict::no;
        const ImageRecord* rec = nullptr;
        for (const auto& r : records[item.object.name])
            if (r.content_hash == item.content_hash) rec = &r;
        if (!both_no || !rec || !answered_by_all(*rec, holdouts, Answer::yes)) {
            ok = false;
            d << "ineligible negative " << item.content_hash.substr(0, 8) << "; ";
        }
    }
    for (const auto& [object, n] : neg) {
        if (n < 3 || n > 50 || pos[object] != n) {
            ok = false;
            d << object << " has " << n << " negatives / " << pos[object] << " positives; ";
        }
    }
    // every object with >= 3 eligible negatives and enough positives is present
    for (const auto& [object, n, npos] : plan) {
        std::size_t eligible = 0;
        for (const auto& r : records[object]) {
            const auto& v = raw[{object, r.content_hash}];
            eligible += answered_by_all(r, holdouts, Answer::yes) && v.size() == 2 && v[0] == Verdict::no &&
                        v[1] == Verdict::no;
        }
        std::size_t verified = 0;
        for (const auto& p : positives) verified += p.object == object && p.verified;
        const bool expect = eligible >= 3 && verified >= std::min<std::size_t>(eligible, 50);
        if (expect != (neg.count(object) > 0)) {
            ok = false;
            d << object << " inclusion wrong (" << eligible << " eligible); ";
        }
    }

    // fine-tune export over the same images: no benchmark image may appear
    std::map<std::string, std::vector<ImageRecord>> pool = records;
    for (const auto& item : b.items)  // the same bytes mined again under another object, answered no by both
        if (item.ground_truth == GroundTruth::absent)
            pool["kite"].push_back(fake_record("kite", item.content_hash, Answer::no, Answer::no));
    std::set<std::string> bench_hashes;
    for (const auto& i : b.items) bench_hashes.insert(i.content_hash);
    FinetuneConfig fc;
    fc.holdout_vlms = holdouts;
    const auto ex = export_dataset(pool, positives, bench_hashes, {}, fc);
    std::size_t overlap = 0;
    for (const auto& row : ex.rows) overlap += bench_hashes.count(row["image"].get<std::string>());
    ok = ok && overlap == 0 && b.negatives > 0 && !ex.rows.empty();
    d << b.negatives << " negatives, " << b.positives << " positives over " << neg.size() << " objects, "
      << b.excluded.size() << " excluded; benchmark and fine-tune overlap " << overlap << " of " << ex.rows.size()
      << " rows";
    return {ok, d.str()};
}

// -- fine-tune export ----------------------------------------------------------------------------------

Outcome finetune_export() {
    const std::vector<std::string> holdouts = {"holdout-a", "holdout-b"};
    std::map<std::string, std::vector<Cluster>> clusters;
    std::map<std::string, std::vector<ImageRecord>> by_object;
    std::vector<PositiveItem> positives;
    for (const std::string object : {"hummingbird", "firetruck", "cello"}) {
        // cluster 0 is the largest and becomes the validation cluster
        const std::size_t sizes[] = {120, 110, 100, 90};
        std::size_t k = 0;
        for (std::size_t c = 0; c < 4; ++c) {
            Cluster cl;
            cl.object = object;
            cl.id = object + "/c00" + std::to_string(c);
            for (std::size_t i = 0; i < sizes[c]; ++i, ++k) {
                const std::string h = fake_hash(object + "/ft", k);
                by_object[object].push_back(fake_record(object, h, Answer::no, k % 9 == 0 ? Answer::yes : Answer::no));
                cl.members.push_back(by_object[object].back().id);
            }
            std::sort(cl.members.begin(), cl.members.end());
            clusters[object].push_back(std::move(cl));
        }
        for (std::size_t i = 0; i < 500; ++i)
            positives.push_back({fake_hash(object + "/pos", i), object, DatasetTag::coco, "file:///pos", true});
    }
    const auto split = split_validation(clusters);
    std::map<std::string, std::vector<ImageRecord>> pool;
    std::set<std::string> validation_hashes;
    for (auto& [object, recs] : by_object) {
        const auto& train = split.train.at(object);
        for (const auto& r : recs) {
            if (split.validation_members.count(r.id)) validation_hashes.insert(r.content_hash);
            if (std::binary_search(train.begin(), train.end(), r.id)) pool[object].push_back(r);
        }
        // validation images leaking into the train pool must still be excluded
        for (const auto& r : recs)
            if (split.validation_members.count(r.id)) pool[object].push_back(r);
    }
    FinetuneConfig fc;
    fc.holdout_vlms = holdouts;
    fc.seed = 5;
    const auto a = export_dataset(pool, positives, {}, validation_hashes, fc);
    const auto b = export_dataset(pool, positives, {}, validation_hashes, fc);
    TempDir tmp("acc-ft");
    write_file_atomic(tmp / "a.jsonl", a.text());
    write_file_atomic(tmp / "b.jsonl", b.text());
    const bool identical = read_file_bytes(tmp / "a.jsonl") == read_file_bytes(tmp / "b.jsonl");

    bool counts_ok = a.counts.size() == 3;
    for (const auto& [object, c] : a.counts) counts_ok = counts_ok && c.negatives == 200 && c.positives == 400;
    std::size_t leaked = 0, validation_eligible = 0;
    std::set<std::string> exported;
    for (const auto& row : a.rows) exported.insert(row["image"].get<std::string>());
    for (const auto& h : validation_hashes) leaked += exported.count(h);
    for (const auto& [object, recs] : pool)
        for (const auto& r : recs)
            validation_eligible += validation_hashes.count(r.content_hash) && answered_by_all(r, holdouts, Answer::no);
    fc.seed = 6;
    const bool seed_matters = export_dataset(pool, positives, {}, validation_hashes, fc).text() != a.text();

    const bool ok = counts_ok && identical && leaked == 0 && validation_eligible > 0 && seed_matters;
    std::ostringstream d;
    d << "counts 200/400 for " << a.counts.size() << " objects: " << (counts_ok ? "yes" : "no") << "; two runs "
      << (identical ? "byte-identical" : "differ") << "; validation images exported " << leaked << " (of "
      << validation_eligible << " eligible in the pool)";
    return {ok, d.str()};
}

} // namespace

int main() {
    const std::vector<Criterion> criteria = {
        {"metric-replay-hm", 1, hm_replay},
        {"metric-replay-prompt-suite", 1, prompt_suite_replay},
        {"loss-unit-checks", 1, loss_checks},
        {"gradient-oracle", 10, gradient_oracle},
        {"optimization-behavior", 30, optimization_behavior},
        {"clustering-oracle", 30, clustering_oracle},
        {"dedup-property", 10, dedup_property},
        {"end-to-end-synthetic-run", 300, end_to_end},
        {"benchmark-construction", 10, benchmark_construction},
        {"finetune-export", 10, finetune_export},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = secs < c.time_limit_s;
        const bool pass = o.pass && in_time;
        failures += !pass;
        std::printf("%s %-28s %s [%.2fs, limit %.0fs%s]\n", pass ? "PASS" : "FAIL", c.name.c_str(), o.detail.c_str(), secs,
                    c.time_limit_s, in_time ? "" : ", too slow");
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
