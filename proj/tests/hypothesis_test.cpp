#include "huntloop/hypothesis.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "huntloop/error.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace huntloop::hypothesis {
namespace {

using testing::d;
using testing::g1;
using testing::h;
using testing::mx;
using testing::r;
using testing::brute_jaccard;

std::vector<Sighting> sightings(const ObservableSet& obs) {
  std::vector<Sighting> out;
  for (const auto& o : obs) out.push_back(Sighting{o, "H01", 0, SightingSource::kExternalAlert});
  return out;
}

TEST(Hypothesis, GenerateFromRegistrySighting) {
  auto res = generate(*g1(), sightings({r(1)}), 5);
  ASSERT_EQ(res.hypotheses.size(), 1u);
  const auto& hy = res.hypotheses[0];
  EXPECT_EQ(hy.suspect, "M1");
  EXPECT_EQ(hy.ioa, (std::set<std::string>{"TQ1", "TQ2"}));
  EXPECT_EQ(hy.sighted, ObservableSet{r(1)});
  EXPECT_EQ(hy.expected_unsighted, (ObservableSet{h(1), h(2), mx(1), d(1), d(2)}));
  check_invariants(*g1(), hy);
}

TEST(Hypothesis, GenerateFromSharedDomain) {
  auto res = generate(*g1(), sightings({d(1)}), 2);
  ASSERT_EQ(res.hypotheses.size(), 2u);
  EXPECT_EQ(res.hypotheses[0].suspect, "M2");
  EXPECT_EQ(res.hypotheses[1].suspect, "M1");
  EXPECT_EQ(generate(*g1(), sightings({d(1)}), 1).hypotheses.size(), 1u);
}

TEST(Hypothesis, GenerateEdgeCases) {
  EXPECT_TRUE(generate(*g1(), {}, 3).hypotheses.empty());
  auto empty = generate(attackdb::AttackGraph{}, sightings({d(1)}), 3);
  EXPECT_TRUE(empty.empty_graph);
  EXPECT_TRUE(empty.hypotheses.empty());
  EXPECT_THROW(generate(*g1(), sightings({d(1)}), 0), Error);
}

TEST(Hypothesis, JaccardExamples) {
  EXPECT_DOUBLE_EQ(jaccard_similarity({h(1), h(2)}, {h(1), h(2)}), 1.0);
  EXPECT_DOUBLE_EQ(jaccard_similarity({h(1)}, {h(2)}), 0.0);
  EXPECT_DOUBLE_EQ(jaccard_similarity({h(1), h(2), r(1)}, {r(1), d(1)}), 0.25);
  EXPECT_DOUBLE_EQ(jaccard_similarity({}, {}), 1.0);
}

TEST(Hypothesis, JaccardMatchesBruteForce) {
  std::mt19937_64 rng(1000);
  for (int i = 0; i < 1000; ++i) {
    ObservableSet a, b;
    std::vector<std::string> va, vb;
    const int na = static_cast<int>(rng() % 8), nb = static_cast<int>(rng() % 8);
    for (int j = 0; j < na; ++j) {
      const int v = static_cast<int>(rng() % 10);
      a.insert(d(v));
      va.push_back("d" + std::to_string(v));
    }
    for (int j = 0; j < nb; ++j) {
      const int v = static_cast<int>(rng() % 10);
      b.insert(d(v));
      vb.push_back("d" + std::to_string(v));
    }
    const double j = jaccard_similarity(a, b);
    ASSERT_EQ(j, brute_jaccard(va, vb));
    ASSERT_EQ(j, jaccard_similarity(b, a));
    ASSERT_GE(j, 0.0);
    ASSERT_LE(j, 1.0);
    if (!a.empty() && !b.empty()) {
      ASSERT_EQ(j == 1.0, a == b);
      bool disjoint = std::none_of(a.begin(), a.end(), [&](const Observable& o) { return b.count(o); });
      ASSERT_EQ(j == 0.0, disjoint);
    }
  }
}

TEST(Hypothesis, SupportExamples) {
  Hypothesis hy;
  EXPECT_DOUBLE_EQ(support(hy, {}), 0.0);
  hy.sighted = {h(1)};
  EXPECT_DOUBLE_EQ(support(hy, {}), 1.0);
  hy.sighted = {r(1), d(1)};
  EXPECT_DOUBLE_EQ(support(hy, {}), 1.3);
  WeightTable bad;
  bad.network = 0;
  EXPECT_THROW(support(hy, bad), Error);
}

TEST(Hypothesis, RankExamples) {
  auto hyps = generate(*g1(), sightings({d(1)}), 5).hypotheses;
  auto ranked = rank(hyps, {d(1)});
  ASSERT_EQ(ranked.size(), 2u);
  EXPECT_EQ(ranked[0].suspect, "M2");
  EXPECT_DOUBLE_EQ(ranked[0].jaccard, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(ranked[1].jaccard, 1.0 / 6.0);

  auto full = rank(hyps, {h(1), h(2), r(1), mx(1), d(1), d(2)});
  EXPECT_EQ(full[0].suspect, "M1");
  EXPECT_DOUBLE_EQ(full[0].jaccard, 1.0);
}

TEST(Hypothesis, RankTieBreaksBySuspect) {
  Hypothesis a, b;
  a.id = "x";
  a.suspect = "Mb";
  b.id = "y";
  b.suspect = "Ma";
  auto ranked = rank({a, b}, {d(1)});
  EXPECT_EQ(ranked[0].suspect, "Ma");
}

TEST(Hypothesis, RefutationExamples) {
  Hypothesis hy;
  hy.support = 2.0;
  hy.status = Status::kTesting;
  auto same = apply_refutation_signal(hy, {}, {});
  EXPECT_EQ(same, hy);

  auto none = apply_refutation_signal(hy, {h(1), h(2)}, {});
  EXPECT_DOUBLE_EQ(none.support, 0.0);
  EXPECT_EQ(none.status, Status::kDemoted);

  auto half = apply_refutation_signal(hy, {h(1), h(2)}, {h(1)});
  EXPECT_DOUBLE_EQ(half.support, 1.0);
  EXPECT_EQ(half.status, Status::kTesting);

  hy.pinned = true;
  EXPECT_EQ(apply_refutation_signal(hy, {h(1)}, {}).status, Status::kTesting);
  EXPECT_THROW(apply_refutation_signal(hy, {h(1)}, {h(2)}), Error);
}

TEST(Hypothesis, Lifecycle) {
  EXPECT_TRUE(legal_transition(Status::kProposed, Status::kApproved));
  EXPECT_TRUE(legal_transition(Status::kApproved, Status::kTesting));
  EXPECT_TRUE(legal_transition(Status::kTesting, Status::kConfirmed));
  EXPECT_TRUE(legal_transition(Status::kTesting, Status::kProposed));
  EXPECT_TRUE(legal_transition(Status::kProposed, Status::kStale));
  EXPECT_FALSE(legal_transition(Status::kProposed, Status::kConfirmed));
  EXPECT_FALSE(legal_transition(Status::kConfirmed, Status::kTesting));
  EXPECT_TRUE(is_terminal(Status::kDemoted));
  EXPECT_FALSE(is_terminal(Status::kTesting));
}

TEST(Hypothesis, CoverageOnG1) {
  const auto all = attackdb::observables_of(*g1(), "M1");
  auto partial = weighted_coverage(all, {h(1), r(1)}, {});
  EXPECT_DOUBLE_EQ(partial.total_weight, 4.6);
  EXPECT_DOUBLE_EQ(partial.covered_weight, 1.5);
  EXPECT_FALSE(meets_confirmation(partial, {}));
  auto most = weighted_coverage(all, {h(1), h(2), r(1), mx(1)}, {});
  EXPECT_NEAR(most.fraction(), 3.0 / 4.6, 1e-12);
  EXPECT_TRUE(meets_confirmation(most, {}));
  // Enough weight but a single class is not a confirmation.
  auto hashes = weighted_coverage({h(1), h(2), d(1)}, {h(1), h(2)}, {});
  EXPECT_GE(hashes.fraction(), 0.5);
  EXPECT_FALSE(meets_confirmation(hashes, {}));
}

TEST(Hypothesis, JsonRoundTrip) {
  auto hy = generate(*g1(), sightings({r(1)}), 1).hypotheses[0];
  hy.pinned = true;
  hy.unresolved = {d(77)};
  hy.provenance = Provenance::kAnalystAugmented;
  EXPECT_EQ(Hypothesis::from_json(hy.to_json()), hy);
  Sighting s{d(1), "H02", 4, SightingSource::kPolicy};
  EXPECT_EQ(Json(s).get<Sighting>(), s);
}

// Random graphs and sighting sets shared by the properties below.
struct World {
  attackdb::GraphPtr graph;
  ObservableSet pool;
};

World random_world(std::mt19937_64& rng) {
  World w;
  w.graph = attackdb::ingest_bundle(testing::random_bundle(rng, 30), attackdb::AttackGraph{}).graph;
  for (const auto& [o, ids] : w.graph->observable_index()) w.pool.insert(o);
  w.pool.insert(d(999));  // never in any graph
  return w;
}

ObservableSet pick(std::mt19937_64& rng, const ObservableSet& pool, int n) {
  std::vector<Observable> v(pool.begin(), pool.end());
  ObservableSet out;
  for (int i = 0; i < n && !v.empty(); ++i) out.insert(v[rng() % v.size()]);
  return out;
}

TEST(Hypothesis, GenerationSoundness) {
  std::mt19937_64 rng(77);
  for (int round = 0; round < 100; ++round) {
    auto w = random_world(rng);
    const auto seen = pick(rng, w.pool, 1 + static_cast<int>(rng() % 4));
    auto res = generate(*w.graph, sightings(seen), 1000);
    std::set<std::string> suspects;
    for (const auto& hy : res.hypotheses) {
      check_invariants(*w.graph, hy);
      ObservableSet expect;
      for (const auto& o : attackdb::observables_of(*w.graph, hy.suspect))
        if (seen.count(o)) expect.insert(o);
      EXPECT_EQ(hy.sighted, expect);
      EXPECT_FALSE(hy.sighted.empty());
      suspects.insert(hy.suspect);
    }
    // Every malware sharing an observable with the sightings is proposed.
    for (const auto& m : w.graph->of_kind(attackdb::SdoKind::kMalware)) {
      const auto obs = attackdb::observables_of(*w.graph, m);
      const bool overlaps = std::any_of(obs.begin(), obs.end(), [&](const Observable& o) { return seen.count(o); });
      EXPECT_EQ(suspects.count(m) > 0, overlaps) << m;
    }
  }
}

TEST(Hypothesis, ScaleArgmaxInvariance) {
  std::mt19937_64 rng(5);
  for (int round = 0; round < 100; ++round) {
    auto w = random_world(rng);
    const auto seen = pick(rng, w.pool, 3);
    const double c = 0.1 + static_cast<double>(rng() % 100) / 10.0;
    const WeightTable base;
    auto a = generate(*w.graph, sightings(seen), 1000, base).hypotheses;
    auto b = generate(*w.graph, sightings(seen), 1000, base.scaled(c)).hypotheses;
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].suspect, b[i].suspect);
      EXPECT_NEAR(b[i].support, c * a[i].support, 1e-9);
    }
  }
}

TEST(Hypothesis, RankIsPermutationInvariant) {
  std::mt19937_64 rng(9);
  for (int round = 0; round < 100; ++round) {
    auto w = random_world(rng);
    const auto seen = pick(rng, w.pool, 3);
    auto hyps = generate(*w.graph, sightings(seen), 1000).hypotheses;
    const auto evidence = pick(rng, w.pool, 4);
    auto expect = rank(hyps, evidence);
    std::shuffle(hyps.begin(), hyps.end(), rng);
    EXPECT_EQ(rank(hyps, evidence), expect);
  }
}

TEST(Hypothesis, RankIoasOnG1) {
  auto scores = rank_ioas(*g1(), {d(1)});
  ASSERT_EQ(scores.size(), 2u);
  // d1 reaches TQ2 through both malware and TQ1 through M1 only.
  EXPECT_EQ(scores[0].technique, "TQ2");
  EXPECT_EQ(scores[0].affinity, 2);
  EXPECT_EQ(scores[1].affinity, 1);
}

TEST(Hypothesis, IoaHypothesisExpectsEverything) {
  auto hy = ioa_hypothesis(*g1(), "M2", {d(1)}, {});
  EXPECT_EQ(hy.sighted, ObservableSet{d(1)});
  EXPECT_EQ(hy.expected_unsighted, (ObservableSet{h(3), r(2)}));
  check_invariants(*g1(), hy);
}

}  // namespace
}  // namespace huntloop::hypothesis
