#include "dash/benchmark/benchmark.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

using namespace dash;
using dash::testing::TempDir;

namespace {

std::string hash_of(const std::string& tag, int i) { return sha256_hex(std::string_view(tag + std::to_string(i))); }

ImageRecord mined(const std::string& object, int i, Answer h1, Answer h2) {
    ImageRecord r;
    r.content_hash = hash_of(object, i);
    r.id = image_id_for(r.content_hash);
    r.object = object;
    r.uri = "file:///" + std::to_string(i);
    for (auto [id, a] : {std::pair{"h1", h1}, std::pair{"h2", h2}}) {
        Evaluation e;
        e.model_id = id;
        e.answer = a;
        r.evaluations.push_back(e);
    }
    return r;
}

LabelVerdict verdict(const std::string& object, const std::string& hash, const std::string& who, Verdict v) {
    return {object, hash, who, v, "2024-01-01T00:00:00Z"};
}

} // namespace

TEST(Consensus, EligibleOnlyOnUnanimousNo) {
    EXPECT_EQ(consensus_of({{"a", Verdict::no}, {"b", Verdict::no}}), Consensus::eligible);
    EXPECT_EQ(consensus_of({{"a", Verdict::no}}), Consensus::pending);
    EXPECT_EQ(consensus_of({{"a", Verdict::yes}}), Consensus::ineligible);
    EXPECT_EQ(consensus_of({{"a", Verdict::no}, {"b", Verdict::ambiguous}}), Consensus::ineligible);
    EXPECT_EQ(consensus_of({}), Consensus::pending);
    EXPECT_EQ(consensus_of({{"a", Verdict::no}}, 1), Consensus::eligible);
}

TEST(Consensus, IngestRejectsSecondVerdictBySameLabeler) {
    const auto t = ingest_labels({verdict("cat", "h", "a", Verdict::no), verdict("cat", "h", "b", Verdict::no),
                                  verdict("dog", "h", "a", Verdict::yes)});
    EXPECT_EQ(t.at({"cat", "h"}).status, Consensus::eligible);
    EXPECT_EQ(t.at({"dog", "h"}).status, Consensus::ineligible);
    EXPECT_THROW(ingest_labels({verdict("cat", "h", "a", Verdict::no), verdict("cat", "h", "a", Verdict::yes)}),
                 LabelError);
    EXPECT_THROW(parse_verdict("nope"), LabelError);
}

TEST(LabelStore, PersistsAppendOnlyAndStaysImmutable) {
    TempDir tmp;
    const auto path = tmp / "labels" / "log.jsonl";
    {
        LabelStore s(path);
        s.submit(verdict("cat", "h1", "a", Verdict::no));
        s.submit({"cat", "h1", "b", Verdict::no, ""});
        EXPECT_THROW(s.submit(verdict("cat", "h1", "a", Verdict::yes)), LabelError);
        EXPECT_EQ(s.size(), 2u);
        EXPECT_FALSE(s.verdicts()[1].timestamp.empty());
    }
    LabelStore s(path);
    EXPECT_EQ(s.size(), 2u);
    EXPECT_TRUE(s.has("cat", "h1", "b"));
    EXPECT_THROW(s.submit(verdict("cat", "h1", "b", Verdict::yes)), LabelError);
    EXPECT_EQ(s.consensus().at({"cat", "h1"}).status, Consensus::eligible);
    EXPECT_EQ(consensus_to_json(s.consensus())[0]["status"], "eligible");
}

TEST(BuildBenchmark, NegativesNeedBothHoldoutsAndBothLabelers) {
    std::map<std::string, std::vector<ImageRecord>> recs;
    std::vector<LabelVerdict> log;
    for (int i = 0; i < 8; ++i) {
        const Answer h2 = i == 0 ? Answer::no : Answer::yes;  // 0: one holdout disagrees
        recs["cat"].push_back(mined("cat", i, Answer::yes, h2));
        log.push_back(verdict("cat", hash_of("cat", i), "a", i == 1 ? Verdict::yes : Verdict::no));  // 1: labeler sees a cat
        if (i != 2) log.push_back(verdict("cat", hash_of("cat", i), "b", Verdict::no));              // 2: pending
    }
    std::vector<PositiveItem> pos;
    for (int i = 0; i < 6; ++i) pos.push_back({hash_of("catpos", i), "cat", DatasetTag::coco, "p" + std::to_string(i), true});
    pos.push_back({hash_of("catpos", 99), "cat", DatasetTag::coco, "unverified", false});
    const auto labels = ingest_labels(log);

    const auto b = build_benchmark(recs, {ObjectSpec{"cat"}}, {"h1", "h2"}, labels, pos, BenchmarkCaps{3, 4});
    EXPECT_EQ(b.negatives, 4u);
    EXPECT_EQ(b.positives, 4u);
    ASSERT_EQ(b.items.size(), 8u);
    std::set<std::string> expected_pool;
    for (int i = 3; i < 8; ++i) expected_pool.insert(hash_of("cat", i));
    for (const auto& h : b.negative_hashes()) EXPECT_TRUE(expected_pool.count(h)) << h;
    // negatives first, hash ordered
    for (std::size_t i = 0; i + 1 < 4; ++i) EXPECT_LT(b.items[i].content_hash, b.items[i + 1].content_hash);
    for (std::size_t i = 4; i < 8; ++i) {
        EXPECT_EQ(b.items[i].ground_truth, GroundTruth::present);
        EXPECT_EQ(b.items[i].provenance, Provenance::ingested_positive);
        EXPECT_NE(b.items[i].uri, "unverified");
    }
}

TEST(BuildBenchmark, ExcludesObjectsBelowMinimumOrWithoutPositives) {
    std::map<std::string, std::vector<ImageRecord>> recs;
    std::vector<LabelVerdict> log;
    for (const std::string obj : {"few", "nopos"})
        for (int i = 0; i < (obj == "few" ? 2 : 3); ++i) {
            recs[obj].push_back(mined(obj, i, Answer::yes, Answer::yes));
            log.push_back(verdict(obj, hash_of(obj, i), "a", Verdict::no));
            log.push_back(verdict(obj, hash_of(obj, i), "b", Verdict::no));
        }
    std::vector<PositiveItem> pos{{hash_of("p", 0), "nopos", DatasetTag::coco, "", true}};
    // a positive labeled "yes" by one labeler counts as verified
    log.push_back(verdict("nopos", hash_of("p", 1), "a", Verdict::yes));
    pos.push_back({hash_of("p", 1), "nopos", DatasetTag::coco, "", false});
    const auto b = build_benchmark(recs, {ObjectSpec{"few"}, ObjectSpec{"nopos"}, ObjectSpec{"absent"}}, {"h1", "h2"},
                                   ingest_labels(log), pos);
    EXPECT_TRUE(b.items.empty());
    ASSERT_EQ(b.excluded.size(), 3u);
    EXPECT_EQ(b.excluded[1].object, "nopos");
    EXPECT_NE(b.excluded[1].reason.find("2 verified"), std::string::npos);
    EXPECT_THROW(build_benchmark(recs, {}, {"h1"}, {}, {}), ConfigError);
    EXPECT_THROW(build_benchmark(recs, {}, {"h1", "h2"}, {}, {}, BenchmarkCaps{0, 1}), ConfigError);
}

TEST(Manifest, RoundTripsAndValidatesGroundTruth) {
    TempDir tmp;
    std::vector<BenchmarkItem> items{{"id1", "h1", "u1", ObjectSpec{"cat"}, GroundTruth::absent, Provenance::mined_negative},
                                     {"id2", "h2", "u2", ObjectSpec{"cat"}, GroundTruth::present, Provenance::ingested_positive}};
    write_benchmark_manifest(tmp / "m.jsonl", items);
    const auto back = read_benchmark_manifest(tmp / "m.jsonl");
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(Json(back[1]), Json(items[1]));
    EXPECT_THROW((Json{{"content_hash", "h"}, {"object", {{"name", "x"}}}, {"ground_truth", "maybe"}}.get<BenchmarkItem>()),
                 Error);
    EXPECT_THROW(read_benchmark_manifest(tmp / "missing.jsonl"), Error);
}

TEST(QaMetrics, AccuracyRatesAndHarmonicMean) {
    QaCounts c;
    c.absent = {2, 6, 2};   // yes, no, invalid
    c.present = {9, 1, 0};
    const auto m = qa_metrics(c);
    EXPECT_EQ(m.items, 20u);
    EXPECT_EQ(m.valid, 18u);
    EXPECT_DOUBLE_EQ(m.valid_rate, 0.9);
    EXPECT_DOUBLE_EQ(*m.accuracy, 15.0 / 18.0);
    EXPECT_DOUBLE_EQ(*m.tnr, 0.75);
    EXPECT_DOUBLE_EQ(*m.tpr, 0.9);
    EXPECT_DOUBLE_EQ(*m.hm, 2 * 0.75 * 0.9 / 1.65);
    EXPECT_FALSE(m.single_class);
}

TEST(QaMetrics, SingleClassAndDegenerateCases) {
    QaCounts c;
    c.absent = {0, 3, 0};
    const auto m = qa_metrics(c);
    EXPECT_TRUE(m.single_class);
    EXPECT_FALSE(m.hm.has_value());
    EXPECT_TRUE(Json(m)["hm"].is_null());
    EXPECT_EQ(harmonic_mean(0, 0), 0.0);
    EXPECT_EQ(harmonic_mean(1, 0), 0.0);
    EXPECT_THROW(count_qa({BenchmarkItem{}}, {}), Error);
}
