#include "huntloop/attackdb.hpp"

#include <gtest/gtest.h>

#include <functional>
#include <map>
#include <random>
#include <set>
#include <vector>

#include "huntloop/error.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace huntloop::attackdb {
namespace {

using testing::d;
using testing::g1;
using testing::h;
using testing::mx;
using testing::r;
using testing::brute_force_affinity;

TEST(AttackDbIngest, EmptyBundleIsIdentity) {
  auto res = ingest_bundle(Json{{"type", "bundle"}, {"objects", Json::array()}}, AttackGraph{});
  EXPECT_TRUE(res.graph->empty());
  EXPECT_EQ(res.report.nodes_added, 0);
  EXPECT_EQ(res.report.edges_added, 0);
  EXPECT_EQ(res.report.nodes_merged, 0);
  EXPECT_EQ(res.report.rejected, 0);
}

TEST(AttackDbIngest, FixtureG1CountsMatchManifest) {
  const Json manifest = testing::load_fixture("g1_manifest.json");
  const auto& g = *g1();
  EXPECT_EQ(g.nodes().size(), 8u);
  EXPECT_EQ(static_cast<int>(g.nodes().size()), manifest["nodes"].get<int>());
  EXPECT_EQ(static_cast<int>(g.edges().size()), manifest["edges"].get<int>());
  ObservableSet keys;
  for (const auto& [o, ids] : g.observable_index()) keys.insert(o);
  EXPECT_EQ(keys, (ObservableSet{h(1), h(2), h(3), r(1), r(2), mx(1), d(1), d(2)}));
}

TEST(AttackDbIngest, IncompatibleRelationshipRejectedRestIngested) {
  Json bundle = testing::load_fixture("g1_bundle.json");
  bundle["objects"].push_back(
      {{"type", "relationship"}, {"relationship_type", "indicates"}, {"source_ref", "M1"}, {"target_ref", "TQ1"}});
  auto res = ingest_bundle(bundle, AttackGraph{});
  EXPECT_EQ(res.report.rejected, 1);
  ASSERT_EQ(res.report.rejections.size(), 1u);
  EXPECT_EQ(res.report.rejections[0].reason, "incompatible-relationship-kind");
  EXPECT_EQ(res.graph->nodes().size(), 8u);
  EXPECT_EQ(res.graph->edges().size(), 7u);
}

TEST(AttackDbIngest, DanglingReferenceRejected) {
  Json bundle = testing::load_fixture("g1_bundle.json");
  bundle["objects"].push_back(
      {{"type", "relationship"}, {"relationship_type", "uses"}, {"source_ref", "M1"}, {"target_ref", "TQ9"}});
  auto res = ingest_bundle(bundle, AttackGraph{});
  EXPECT_EQ(res.report.rejected, 1);
  EXPECT_EQ(res.report.rejections[0].reason, "dangling-reference");
}

TEST(AttackDbIngest, MalformedDocumentThrows) {
  try {
    ingest_bundle_text("{not json", AttackGraph{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "malformed-document");
  }
  EXPECT_THROW(ingest_bundle(Json{{"type", "report"}}, AttackGraph{}), Error);
}

TEST(AttackDbIngest, IndicatorWithoutPatternRejected) {
  Json bundle{{"type", "bundle"}, {"objects", {{{"type", "indicator"}, {"id", "I9"}, {"pattern", ""}}}}};
  auto res = ingest_bundle(bundle, AttackGraph{});
  EXPECT_EQ(res.report.rejected, 1);
  EXPECT_TRUE(res.graph->empty());
}

TEST(AttackDbIngest, MergeIsLastWriterWinsOnProps) {
  Json bundle = testing::load_fixture("g1_bundle.json");
  bundle["objects"].push_back({{"type", "malware"}, {"id", "M1"}, {"name", "Renamed"}, {"family", "x"}});
  auto res = ingest_bundle(bundle, AttackGraph{});
  EXPECT_EQ(res.report.nodes_merged, 1);
  EXPECT_EQ(res.graph->find("M1")->name, "Renamed");
  EXPECT_EQ(res.graph->find("M1")->props.at("family"), "x");
}

TEST(AttackDbIngest, KindConflictRejected) {
  Json bundle = testing::load_fixture("g1_bundle.json");
  bundle["objects"].push_back({{"type", "tool"}, {"id", "M1"}});
  auto res = ingest_bundle(bundle, AttackGraph{});
  EXPECT_EQ(res.report.rejected, 1);
  EXPECT_EQ(res.graph->find("M1")->kind, SdoKind::kMalware);
}

TEST(AttackDbIngest, TrustedSourcesFilter) {
  Json bundle = testing::load_fixture("g1_bundle.json");
  bundle["x_source"] = "feed-a";
  bundle["objects"].push_back({{"type", "malware"}, {"id", "M7"}, {"x_source", "unknown-feed"}});
  IngestConfig cfg;
  cfg.trusted_sources = std::set<std::string>{"feed-a"};
  auto res = ingest_bundle(bundle, AttackGraph{}, cfg);
  EXPECT_EQ(res.report.rejected, 1);
  EXPECT_EQ(res.report.rejections[0].reason, "untrusted-source");
  EXPECT_EQ(res.graph->nodes().size(), 8u);
}

TEST(AttackDbIngest, ObservablesNormalizeAndDeduplicate) {
  Json bundle{{"type", "bundle"},
              {"objects",
               {{{"type", "observed-data"},
                 {"id", "OD"},
                 {"observables",
                  {{{"type", "registry-key"}, {"value", "HKCU\\Run\\X"}},
                   {{"type", "registry-key"}, {"value", "hkcu\\run\\x"}},
                   {{"type", "file-path"}, {"value", "C:\\Temp\\A.DLL"}},
                   {{"type", "url"}, {"value", "HTTP://Evil.COM/Path/A"}}}}}}}};
  auto res = ingest_bundle(bundle, AttackGraph{});
  const auto& od = *res.graph->find("OD");
  EXPECT_EQ(od.observables.size(), 3u);
  EXPECT_TRUE(od.observables.count(Observable(ObservableType::kFilePath, "c:/temp/a.dll")));
  EXPECT_EQ(Observable(ObservableType::kUrl, "HTTP://Evil.COM/Path/A").value(), "http://evil.com/Path/A");
}

TEST(AttackDbQueries, IoaOf) {
  EXPECT_EQ(ioa_of(*g1(), "M1"), (std::set<std::string>{"TQ1", "TQ2"}));
  EXPECT_EQ(ioa_of(*g1(), "M2"), (std::set<std::string>{"TQ2"}));
  auto lonely = ingest_bundle(Json{{"type", "bundle"}, {"objects", {{{"type", "malware"}, {"id", "M9"}}}}},
                              AttackGraph{});
  EXPECT_TRUE(ioa_of(*lonely.graph, "M9").empty());
}

TEST(AttackDbQueries, IoaOfErrors) {
  try {
    ioa_of(*g1(), "nope");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "unknown-id");
  }
  try {
    ioa_of(*g1(), "TQ1");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "wrong-kind");
  }
}

TEST(AttackDbQueries, AffinityOnG1) {
  EXPECT_EQ(affinity(*g1(), r(1), "TQ1"), 2);
  EXPECT_EQ(affinity(*g1(), d(1), "TQ2"), 2);
  EXPECT_EQ(affinity(*g1(), Observable(ObservableType::kDomain, "absent"), "TQ1"), 0);
  try {
    affinity(*g1(), r(1), "TQ9");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "unknown-technique");
  }
}

TEST(AttackDbQueries, ObservablesOf) {
  EXPECT_EQ(observables_of(*g1(), "M1"), (ObservableSet{h(1), h(2), r(1), mx(1), d(1), d(2)}));
  EXPECT_EQ(observables_of(*g1(), "M1", true), (ObservableSet{h(1)}));
  EXPECT_TRUE(observables_of(*g1(), "M2", true).empty());
  EXPECT_THROW(observables_of(*g1(), "missing"), Error);
}

TEST(AttackDbQueries, CandidatesFor) {
  auto c = candidates_for(*g1(), {r(1)});
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c.at("M1"), (ObservableSet{r(1)}));
  auto c2 = candidates_for(*g1(), {d(1)});
  EXPECT_EQ(c2.size(), 2u);
  EXPECT_EQ(c2.at("M1"), (ObservableSet{d(1)}));
  EXPECT_EQ(c2.at("M2"), (ObservableSet{d(1)}));
  EXPECT_TRUE(candidates_for(*g1(), {}).empty());
}

TEST(AttackDbQueries, NeighborsDepthLimited) {
  Json n = neighbors(*g1(), "M1", 1);
  std::set<std::string> ids;
  for (const auto& x : n["nodes"]) ids.insert(x["id"].get<std::string>());
  EXPECT_EQ(ids, (std::set<std::string>{"M1", "TQ1", "TQ2", "I1", "OD1", "OD2"}));
}

TEST(AttackDbProperties, IndexConsistency) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 50; ++i) {
    auto g = ingest_bundle(testing::random_bundle(rng, 50), AttackGraph{}).graph;
    EXPECT_EQ(derive_observable_index(g->nodes()), g->observable_index());
    EXPECT_EQ(derive_kind_index(g->nodes()), g->kind_index());
    AttackGraph rebuilt(g->nodes(), g->edges());
    EXPECT_EQ(rebuilt.observable_index(), g->observable_index());
  }
}

TEST(AttackDbProperties, AffinityMatchesBruteForce) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 30; ++i) {
    const Json bundle = testing::random_bundle(rng, 50);
    auto g = ingest_bundle(bundle, AttackGraph{}).graph;
    for (const auto& [o, ids] : g->observable_index())
      for (const auto& t : g->of_kind(SdoKind::kAttackPattern))
        ASSERT_EQ(affinity(*g, o, t), brute_force_affinity(bundle, o, t));
  }
}

TEST(AttackDbProperties, IngestionIsIdempotent) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    const Json bundle = testing::random_bundle(rng, 40);
    auto once = ingest_bundle(bundle, AttackGraph{}).graph;
    auto twice = ingest_bundle(bundle, *once);
    EXPECT_EQ(twice.graph->nodes(), once->nodes());
    EXPECT_EQ(twice.graph->edges(), once->edges());
    EXPECT_EQ(twice.report.nodes_added, 0);
    EXPECT_EQ(twice.report.edges_added, 0);
  }
}

TEST(AttackDbProperties, AffinityMonotoneUnderIngestion) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 20; ++i) {
    auto base = ingest_bundle(testing::random_bundle(rng, 30), AttackGraph{}).graph;
    auto grown = ingest_bundle(testing::random_bundle(rng, 30), *base).graph;
    for (const auto& [o, ids] : base->observable_index())
      for (const auto& t : base->of_kind(SdoKind::kAttackPattern))
        EXPECT_LE(affinity(*base, o, t), affinity(*grown, o, t));
  }
}

TEST(AttackDbProperties, IoaSubsetOfTechniques) {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 20; ++i) {
    auto g = ingest_bundle(testing::random_bundle(rng, 50), AttackGraph{}).graph;
    const auto& techniques = g->of_kind(SdoKind::kAttackPattern);
    for (const auto& m : g->of_kind(SdoKind::kMalware))
      for (const auto& t : ioa_of(*g, m)) EXPECT_TRUE(techniques.count(t));
  }
}

TEST(AttackDbSnapshot, RoundTripsThroughBundleFile) {
  const std::string path = ::testing::TempDir() + "/g1_snapshot.json";
  save_snapshot(*g1(), path);
  auto loaded = load_snapshot(path);
  EXPECT_EQ(loaded->nodes(), g1()->nodes());
  EXPECT_EQ(loaded->edges(), g1()->edges());
}

TEST(AttackDbSnapshot, GraphStorePublishesAtomically) {
  GraphStore store;
  auto before = store.current();
  store.publish(g1());
  EXPECT_TRUE(before->empty());
  EXPECT_EQ(store.current()->nodes().size(), 8u);
}

}  // namespace
}  // namespace huntloop::attackdb
