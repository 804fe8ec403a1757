#include "huntloop/evidence_store.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "huntloop/error.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace huntloop::evidence {
namespace {

using testing::d;
using testing::r;
using testing::EventCorpus;
using testing::oracle_match;

Event ev(std::string host, Channel ch, std::vector<Observable> obs, Tick t = 0) {
  Event e;
  e.host = std::move(host);
  e.channel = ch;
  e.time = t;
  e.observables = std::move(obs);
  return e;
}

TEST(EvidenceStore, IngestAssignsMonotoneSeq) {
  EvidenceStore store;
  EXPECT_EQ(store.ingest(ev("H1", Channel::kRegistry, {r(1)})), 1);
  EXPECT_EQ(store.ingest(ev("H1", Channel::kRegistry, {r(1)})), 2);
}

TEST(EvidenceStore, IngestRejectsMissingHost) {
  EvidenceStore store;
  try {
    store.ingest(ev("", Channel::kDns, {d(1)}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "invalid-event");
  }
}

TEST(EvidenceStore, SearchExamples) {
  EvidenceStore store;
  EXPECT_TRUE(store.search(Query{{pred::ChannelIs{Channel::kDns}}}).empty());
  store.ingest(ev("H1", Channel::kRegistry, {r(1)}));
  store.ingest(ev("H2", Channel::kDns, {d(1)}));
  auto hits = store.search(Query{{pred::ChannelIs{Channel::kRegistry}}});
  ASSERT_EQ(hits.size(), 1u);
  EXPECT_EQ(hits[0].seq, 1);
  EXPECT_TRUE(store.search(Query{{pred::Host{"H1"}, pred::Value{"d1"}}}).empty());
}

TEST(EvidenceStore, EmptyQueryIsInvalid) {
  EvidenceStore store;
  EXPECT_THROW(store.search(Query{}), Error);
  EXPECT_THROW(store.search(Query{{pred::TimeRange{5, 1}}}), Error);
}

TEST(EvidenceStore, QueryJsonRoundTrip) {
  EventCorpus c(7);
  for (int i = 0; i < 200; ++i) {
    Query q = c.query();
    Query back = Query::from_json(q.to_json());
    EXPECT_EQ(back.to_json(), q.to_json());
  }
  EXPECT_THROW(Query::from_json(Json{{"conjuncts", {{{"kind", "bogus"}}}}}), Error);
}

TEST(EvidenceStore, SearchMatchesLinearScanOracle) {
  EventCorpus c(42);
  EvidenceStore store;
  std::vector<Event> all;
  for (int i = 0; i < 10000; ++i) {
    Event e = c.event();
    e.seq = store.ingest(e);
    all.push_back(e);
  }
  for (int i = 0; i < 300; ++i) {
    Query q = c.query();
    std::vector<Seq> expect;
    for (const auto& e : all)
      if (oracle_match(q, e)) expect.push_back(e.seq);
    std::vector<Seq> got;
    for (const auto& e : store.search(q)) got.push_back(e.seq);
    ASSERT_EQ(got, expect) << q.to_json().dump();
  }
}

TEST(EvidenceStore, AlertFiresOnFutureEvidence) {
  EvidenceStore store;
  std::vector<AlertNotification> got;
  store.set_dispatcher([&](const AlertNotification& n) {
    got.push_back(n);
    return true;
  });
  store.register_alert(Query::observable_on(Channel::kDns, d(1)), 1, {"C1", "on_lead"});
  store.ingest(ev("H1", Channel::kDns, {d(1)}, 1));
  auto fired = store.tick(1);
  ASSERT_EQ(fired.size(), 1u);
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(got[0].matched.size(), 1u);
  EXPECT_EQ(got[0].handler, (HandlerAddress{"C1", "on_lead"}));
}

TEST(EvidenceStore, HistoryFlag) {
  EvidenceStore store;
  store.ingest(ev("H1", Channel::kDns, {d(1)}));
  store.register_alert(Query::observable_on(Channel::kDns, d(1)), 1, {"C1", "x"}, false);
  EXPECT_TRUE(store.tick(1).empty());

  EvidenceStore store2;
  store2.ingest(ev("H1", Channel::kDns, {d(1)}));
  store2.register_alert(Query::observable_on(Channel::kDns, d(1)), 1, {"C1", "x"}, true);
  auto fired = store2.tick(1);
  ASSERT_EQ(fired.size(), 1u);
  EXPECT_EQ(fired[0].matched.size(), 1u);
}

TEST(EvidenceStore, TickExamples) {
  EvidenceStore store;
  EXPECT_TRUE(store.tick(1).empty());
  auto id = store.register_alert(Query{{pred::ChannelIs{Channel::kRegistry}}}, 1, {"C", "h"});
  store.ingest(ev("H1", Channel::kDns, {d(1)}));
  EXPECT_TRUE(store.tick(2).empty());
  EXPECT_EQ(store.rule(id)->watermark, 1);
  for (int i = 0; i < 3; ++i) store.ingest(ev("H1", Channel::kRegistry, {r(i)}));
  auto fired = store.tick(3);
  ASSERT_EQ(fired.size(), 1u);
  EXPECT_EQ(fired[0].matched.size(), 3u);
  EXPECT_THROW(store.tick(2), Error);
}

TEST(EvidenceStore, IntervalGatesEvaluation) {
  EvidenceStore store;
  store.register_alert(Query{{pred::ChannelIs{Channel::kDns}}}, 5, {"C", "h"});
  store.ingest(ev("H1", Channel::kDns, {d(1)}));
  EXPECT_TRUE(store.tick(4).empty());
  EXPECT_EQ(store.tick(5).size(), 1u);
  EXPECT_THROW(store.register_alert(Query{{pred::ChannelIs{Channel::kDns}}}, 0, {"C", "h"}), Error);
}

TEST(EvidenceStore, ParkedNotificationsAreRetried) {
  EvidenceStore store;
  bool accept = false;
  int delivered = 0;
  store.set_dispatcher([&](const AlertNotification&) {
    if (accept) ++delivered;
    return accept;
  });
  store.register_alert(Query{{pred::ChannelIs{Channel::kDns}}}, 1, {"C", "h"});
  store.ingest(ev("H1", Channel::kDns, {d(1)}));
  store.tick(1);
  EXPECT_EQ(store.parked(), 1u);
  store.tick(2);
  EXPECT_EQ(store.parked(), 1u);
  accept = true;
  store.tick(3);
  EXPECT_EQ(store.parked(), 0u);
  EXPECT_EQ(delivered, 1);
}

TEST(EvidenceStore, UnregisterContainer) {
  EvidenceStore store;
  store.register_alert(Query{{pred::ChannelIs{Channel::kDns}}}, 1, {"C1", "a"});
  store.register_alert(Query{{pred::ChannelIs{Channel::kDns}}}, 1, {"C1", "b"});
  auto keep = store.register_alert(Query{{pred::ChannelIs{Channel::kDns}}}, 1, {"C2", "a"});
  EXPECT_EQ(store.unregister_container("C1"), 2);
  ASSERT_EQ(store.rules().size(), 1u);
  EXPECT_EQ(store.rules()[0].id, keep);
  EXPECT_TRUE(store.unregister_alert(keep));
  EXPECT_FALSE(store.unregister_alert(keep));
}

// Random interleavings of ingest, register and tick. Every matching event
// past a rule's registration watermark lands in exactly one notification.
TEST(EvidenceStore, NoSkipDeliveryAndWatermarkMonotone) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    EventCorpus c(seed);
    EvidenceStore store;
    std::map<std::string, std::map<Seq, int>> seen;
    std::map<std::string, Seq> registered_at;
    std::map<std::string, Seq> last_watermark;
    store.set_dispatcher([&](const AlertNotification& n) {
      EXPECT_FALSE(n.matched.empty());
      const auto rule = store.rule(n.rule_id);
      for (const auto& e : n.matched) {
        EXPECT_TRUE(rule->query.matches(e));
        ++seen[n.rule_id][e.seq];
      }
      return true;
    });
    Tick now = 0;
    for (int step = 0; step < 400; ++step) {
      const auto op = c.rng() % 10;
      if (op < 6) {
        store.ingest(c.event());
      } else if (op < 7) {
        auto id = store.register_alert(c.query(), 1 + static_cast<Tick>(c.rng() % 3), {"C", "h"});
        registered_at[id] = store.max_seq();
      } else {
        now += static_cast<Tick>(c.rng() % 3);
        store.tick(now);
        for (const auto& rule : store.rules()) {
          EXPECT_GE(rule.watermark, last_watermark[rule.id]);
          last_watermark[rule.id] = rule.watermark;
        }
      }
    }
    // Drain: every rule becomes due.
    store.tick(now + 10);
    for (const auto& rule : store.rules()) {
      for (const auto& e : store.events()) {
        const int count = seen[rule.id].count(e.seq) ? seen[rule.id][e.seq] : 0;
        if (e.seq > registered_at[rule.id] && rule.query.matches(e))
          EXPECT_EQ(count, 1) << "rule " << rule.id << " seq " << e.seq;
        else
          EXPECT_EQ(count, 0);
      }
    }
  }
}

TEST(EvidenceStore, LogReplayAndTornLine) {
  const auto path = (std::filesystem::temp_directory_path() / "huntloop_evlog_test.jsonl").string();
  std::remove(path.c_str());
  {
    EvidenceStore store(path);
    store.ingest(ev("H1", Channel::kRegistry, {r(1)}, 3));
    store.ingest(ev("H2", Channel::kDns, {d(1)}, 4));
  }
  {
    std::ofstream out(path, std::ios::app);
    out << "{\"seq\": 3, \"host\": \"H";
  }
  EvidenceStore replayed(path);
  ASSERT_EQ(replayed.size(), 2u);
  EXPECT_EQ(replayed.events()[1].host, "H2");
  EXPECT_EQ(replayed.events()[1].time, 4);
  std::remove(path.c_str());
}

TEST(EvidenceStore, EventJsonRoundTrip) {
  Event e = ev("H1", Channel::kFile, {r(1), d(2)}, 9);
  e.seq = 4;
  e.attrs["op"] = "write";
  EXPECT_EQ(Json(e).get<Event>(), e);
  EXPECT_THROW(Json({{"time", 1}, {"channel", "dns"}}).get<Event>(), Error);
}

}  // namespace
}  // namespace huntloop::evidence
