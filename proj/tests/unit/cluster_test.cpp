#include "dash/adapters/synthetic.hpp"
#include "dash/cluster/cluster.hpp"

#include <gtest/gtest.h>

using namespace dash;

namespace {

ImageRecord child(const std::string& id, const std::string& parent) {
    ImageRecord r;
    r.id = id;
    r.object = "cat";
    r.lineage = {Stage::exploitation, parent};
    return r;
}

// 1-D points; distance |x - y|.
DistanceTable line_table(const std::map<std::string, double>& pts) {
    std::vector<std::string> ids;
    std::vector<double> xs;
    for (const auto& [id, x] : pts) {
        ids.push_back(id);
        xs.push_back(x);
    }
    std::vector<double> m(ids.size() * ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < ids.size(); ++j) m[i * ids.size() + j] = std::abs(xs[i] - xs[j]);
    return DistanceTable::from_matrix(ids, m);
}

Cluster pre(std::vector<std::string> members, std::string seed) {
    Cluster c;
    c.object = "cat";
    c.members = std::move(members);
    c.seeds = {std::move(seed)};
    return c;
}

} // namespace

TEST(Precluster, GroupsByParentAndDedupsMembers) {
    const auto cs = precluster({child("b", "s2"), child("a", "s1"), child("c", "s1"), child("a", "s1")});
    ASSERT_EQ(cs.size(), 2u);
    EXPECT_EQ(cs[0].members, (std::vector<std::string>{"a", "c"}));
    EXPECT_EQ(cs[0].seeds, std::vector<std::string>{"s1"});
    EXPECT_EQ(cs[1].members, std::vector<std::string>{"b"});
    EXPECT_EQ(cs[0].object, "cat");
}

TEST(Precluster, LineageErrors) {
    EXPECT_THROW(precluster({child("a", "")}), LineageError);
    const std::set<std::string> known{"s1"};
    EXPECT_THROW(precluster({child("a", "s1"), child("b", "s9")}, &known), LineageError);
    EXPECT_NO_THROW(precluster({child("a", "s1")}, &known));
}

TEST(DistanceTable, FromEmbeddingsAndPerceptual) {
    const std::map<std::string, Vector> e{{"a", {1, 0}}, {"b", {0, 1}}, {"c", {-1, 0}}};
    const auto t = DistanceTable::from_embeddings(e);
    EXPECT_DOUBLE_EQ(t("a", "b"), 1.0);
    EXPECT_DOUBLE_EQ(t("a", "c"), 2.0);
    EXPECT_DOUBLE_EQ(t("c", "c"), 0.0);
    synthetic::Perceptual p;
    const auto q = DistanceTable::from_perceptual(e, p);
    EXPECT_DOUBLE_EQ(q("a", "c"), 1.0);  // similarity clamps at 0
    EXPECT_THROW(t.index("zz"), LineageError);
    EXPECT_THROW(DistanceTable::from_matrix({"a"}, {0, 1}), DimensionError);
}

TEST(Merge, AverageLinkageUsesAllMemberPairs) {
    // A={0,1}, B={2}, C={10}: avg(A,B)=1.5, avg(B,C)=8
    const auto t = line_table({{"a0", 0}, {"a1", 1}, {"b", 2}, {"c", 10}});
    MergeConfig cfg{1.5, 1};
    const auto r = merge_clusters({pre({"a0", "a1"}, "sa"), pre({"b"}, "sb"), pre({"c"}, "sc")}, t, cfg);
    ASSERT_EQ(r.steps.size(), 1u);
    EXPECT_EQ(r.steps[0].left, "a0");
    EXPECT_EQ(r.steps[0].right, "b");
    EXPECT_DOUBLE_EQ(r.steps[0].distance, 1.5);
    ASSERT_EQ(r.clusters.size(), 2u);
    EXPECT_EQ(r.clusters[0].members, (std::vector<std::string>{"a0", "a1", "b"}));
    EXPECT_EQ(r.clusters[0].seeds, (std::vector<std::string>{"sa", "sb"}));
    EXPECT_EQ(r.clusters[0].id, "cat/c000");
    EXPECT_EQ(r.clusters[1].id, "cat/c001");
}

TEST(Merge, ThresholdIsInclusiveAndStopsMerging) {
    const auto t = line_table({{"a", 0}, {"b", 0.5}, {"c", 1.25}});
    const auto r = merge_clusters({pre({"a"}, "1"), pre({"b"}, "2"), pre({"c"}, "3")}, t, MergeConfig{0.5, 1});
    EXPECT_EQ(r.steps.size(), 1u);
    const auto all = merge_clusters({pre({"a"}, "1"), pre({"b"}, "2"), pre({"c"}, "3")}, t, MergeConfig{1.0, 1});
    ASSERT_EQ(all.steps.size(), 2u);
    EXPECT_DOUBLE_EQ(all.steps[1].distance, 1.0);  // {a,b} to c: (1.25 + 0.75) / 2
    EXPECT_EQ(all.clusters.size(), 1u);
}

TEST(Merge, TiesGoToLexicographicallySmallestPair) {
    const auto t = line_table({{"a", 0}, {"b", 1}, {"c", 2}, {"d", 3}});
    const auto r = merge_clusters({pre({"c"}, "3"), pre({"d"}, "4"), pre({"a"}, "1"), pre({"b"}, "2")}, t,
                                  MergeConfig{1.0, 1});
    ASSERT_GE(r.steps.size(), 2u);
    EXPECT_EQ(r.steps[0].left, "a");
    EXPECT_EQ(r.steps[0].right, "b");
    EXPECT_EQ(r.steps[1].left, "c");
    EXPECT_EQ(r.steps[1].right, "d");
}

TEST(Merge, SmallClustersAreDroppedNotLost) {
    const auto t = line_table({{"a", 0}, {"b", 0.1}, {"c", 0.2}, {"z", 50}});
    const auto r = merge_clusters({pre({"a", "b"}, "1"), pre({"c"}, "2"), pre({"z"}, "3")}, t, MergeConfig{0.6, 3});
    ASSERT_EQ(r.clusters.size(), 1u);
    ASSERT_EQ(r.dropped.size(), 1u);
    EXPECT_EQ(r.dropped[0].members, std::vector<std::string>{"z"});
    EXPECT_EQ(r.dropped[0].id, "cat/small000");
}

TEST(Merge, RejectsMembersInTwoPreclusters) {
    const auto t = line_table({{"a", 0}, {"b", 1}});
    EXPECT_THROW(merge_clusters({pre({"a"}, "1"), pre({"a", "b"}, "2")}, t), LineageError);
    EXPECT_THROW(merge_clusters({pre({"a"}, "1")}, t, MergeConfig{3.0, 1}), ConfigError);
}

TEST(Merge, ResultDoesNotDependOnInputOrder) {
    const auto t = line_table({{"a", 0}, {"b", 0.3}, {"c", 0.5}, {"d", 1.4}, {"e", 1.5}, {"f", 4}});
    std::vector<Cluster> ps{pre({"a"}, "1"), pre({"b", "c"}, "2"), pre({"d"}, "3"), pre({"e"}, "4"), pre({"f"}, "5")};
    const auto ref = merge_clusters(ps, t, MergeConfig{0.6, 1});
    std::reverse(ps.begin(), ps.end());
    const auto rev = merge_clusters(ps, t, MergeConfig{0.6, 1});
    ASSERT_EQ(ref.clusters.size(), rev.clusters.size());
    for (std::size_t i = 0; i < ref.clusters.size(); ++i) {
        EXPECT_EQ(ref.clusters[i].members, rev.clusters[i].members);
        EXPECT_EQ(ref.clusters[i].id, rev.clusters[i].id);
    }
}

TEST(ContactSheet, TilesScaledCells) {
    const Image a{2, 1, 1, 255, {0.0, 1.0}};
    const Image sheet = contact_sheet({a, a, a}, 2, 2, 1);
    EXPECT_EQ(sheet.channels, 1);
    EXPECT_EQ(sheet.width, 2 * (2 * 2) + 3 * 1);
    EXPECT_EQ(sheet.height, 2 * (1 * 2) + 3 * 1);
}
