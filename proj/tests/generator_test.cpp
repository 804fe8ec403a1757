#include "huntloop/generator.hpp"

#include <gtest/gtest.h>

#include <random>

#include "huntloop/error.hpp"
#include "test_support.hpp"

namespace huntloop::generator {
namespace {

using hypothesis::Hypothesis;
using testing::d;
using testing::g1;
using testing::h;
using testing::mx;
using testing::r;
using workflow::Selector;
using workflow::StepKind;

Hypothesis m1_hypothesis() {
  auto result = hypothesis::generate(*g1(), {{r(1), "H01", 0, hypothesis::SightingSource::kExternalAlert}}, 5);
  for (auto& hyp : result.hypotheses)
    if (hyp.suspect == "M1") return hyp;
  ADD_FAILURE() << "no M1 hypothesis";
  return {};
}

// Observables a workflow actually touches, read back from its steps.
struct Referenced {
  ObservableSet monitored;
  ObservableSet alerted;
  ObservableSet tasked;
};

ObservableType monitored_type(fleet::MonitorKind k) {
  switch (k) {
    case fleet::MonitorKind::kRegistryAccess:
      return ObservableType::kRegistryKey;
    case fleet::MonitorKind::kDnsQuery:
      return ObservableType::kDomain;
    case fleet::MonitorKind::kProcessStart:
      return ObservableType::kProcessName;
    case fleet::MonitorKind::kFileOpen:
      return ObservableType::kFilePath;
  }
  return ObservableType::kEmail;
}

Referenced referenced(const Workflow& w) {
  Referenced out;
  for (const auto& [id, s] : w.steps) {
    if (s.kind == StepKind::kDeployPolicy) {
      for (const auto& m : s.policy.monitors) out.monitored.insert(Observable(monitored_type(m.kind), m.pattern.text));
    } else if (s.kind == StepKind::kDefineAlert) {
      std::optional<ObservableType> type;
      std::optional<std::string> value;
      for (const auto& p : s.query.conjuncts) {
        if (auto* t = std::get_if<evidence::pred::Otype>(&p)) type = t->type;
        if (auto* v = std::get_if<evidence::pred::Value>(&p)) value = v->value;
      }
      if (type && value) out.alerted.insert(Observable(*type, *value));
    } else if (s.kind == StepKind::kRunTask) {
      out.tasked.insert(s.task.targets.begin(), s.task.targets.end());
    }
  }
  return out;
}

TEST(Generate, M1StagedStructure) {
  const Hypothesis hyp = m1_hypothesis();
  ASSERT_EQ(hyp.sighted, ObservableSet{r(1)});
  auto [w, report] = generate_workflow(hyp, *g1(), {}, 200, 10);

  EXPECT_TRUE(workflow::validate(w).empty());
  EXPECT_FALSE(report.forensic_first);
  EXPECT_EQ(report.monitored, (ObservableSet{r(1), d(1), d(2)}));
  EXPECT_EQ(report.collected, (ObservableSet{h(1), h(2), mx(1)}));
  EXPECT_TRUE(report.dropped.empty());

  // Stage 1: three policies and three lead alerts, nothing else.
  ASSERT_EQ(w.entry.size(), 6u);
  int policies = 0, alerts = 0;
  for (const auto& id : w.entry) {
    const auto& s = w.steps.at(id);
    policies += s.kind == StepKind::kDeployPolicy;
    alerts += s.kind == StepKind::kDefineAlert;
    if (s.kind == StepKind::kDefineAlert) EXPECT_EQ(s.handler, "on_lead");
    if (s.kind == StepKind::kDeployPolicy) EXPECT_EQ(s.targets.kind, Selector::kAllHosts);
  }
  EXPECT_EQ(policies, 3);
  EXPECT_EQ(alerts, 3);

  // Stage 2: file-search{h1,h2} then mutex-scan{mx1} on alerting hosts.
  ASSERT_EQ(w.handlers.at("on_lead"), std::vector<std::string>{"scan-file-search"});
  const auto& fs = w.steps.at("scan-file-search");
  EXPECT_EQ(fs.task.targets, (ObservableSet{h(1), h(2)}));
  EXPECT_EQ(fs.targets.kind, Selector::kHostsFromAlert);
  EXPECT_EQ(fs.targets.max_hosts, 5);
  ASSERT_EQ(fs.next, std::vector<std::string>{"scan-mutex-scan"});
  const auto& ms = w.steps.at("scan-mutex-scan");
  EXPECT_EQ(ms.task.targets, ObservableSet{mx(1)});
  ASSERT_EQ(ms.next, std::vector<std::string>{"decide"});

  // Stage 3.
  EXPECT_EQ(w.steps.at("decide").kind, StepKind::kVerdict);
  EXPECT_EQ(w.steps.at("decide").claim, workflow::Claim::kAuto);
  EXPECT_EQ(w.handlers.at("deadline"), std::vector<std::string>{"decide"});

  // 3 x (10 + 1) + 20 x 5 + 5 x 5
  EXPECT_EQ(report.estimated_cost, 158);
  EXPECT_EQ(w.report["estimated_cost"], 158);
}

TEST(Generate, HashOnlyHypothesisIsForensicFirst) {
  Hypothesis hyp;
  hyp.id = "HY9";
  hyp.suspect = "M1";
  hyp.expected_unsighted = {h(1), h(2)};
  auto [w, report] = generate_workflow(hyp, *g1(), {}, 500, 10);
  EXPECT_TRUE(workflow::validate(w).empty());
  EXPECT_TRUE(report.forensic_first);
  EXPECT_TRUE(report.expensive);
  EXPECT_EQ(report.note, "nothing-monitorable");
  EXPECT_TRUE(w.handlers.empty());
  ASSERT_EQ(w.entry, std::vector<std::string>{"scan-file-search"});
  EXPECT_EQ(w.steps.at("scan-file-search").targets.kind, Selector::kAllHosts);
  EXPECT_EQ(report.estimated_cost, 200);
}

TEST(Generate, HashOnlyModeDropsBehavioralObservables) {
  GeneratorConfig config;
  config.hash_only = true;
  auto [w, report] = generate_workflow(m1_hypothesis(), *g1(), config, 500, 10);
  EXPECT_TRUE(report.forensic_first);
  EXPECT_EQ(report.collected, (ObservableSet{h(1), h(2)}));
  ASSERT_EQ(report.dropped.size(), 4u);
  for (const auto& dr : report.dropped) EXPECT_EQ(dr.reason, "hash-only");
  EXPECT_EQ(report.note, "");
}

TEST(Generate, BudgetTooSmall) {
  const Hypothesis hyp = m1_hypothesis();
  try {
    generate_workflow(hyp, *g1(), {}, 1, 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "budget-too-small");
  }
  EXPECT_THROW(generate_workflow(hyp, *g1(), {}, 11, 10), Error);
  auto [w, report] = generate_workflow(hyp, *g1(), {}, 12, 10);
  EXPECT_EQ(report.monitored.size(), 1u);
  EXPECT_LE(report.estimated_cost, 12);
}

TEST(Generate, TightBudgetDropsLowestWeightGroupFirst) {
  // Stage 1 takes 3 x 11 = 33 of 130; 0.7 x 130 = 91 leaves room for the
  // file-search wave (100) only when the cap is lowered.
  GeneratorConfig config;
  config.fan_out_cap = 3;
  auto [w, report] = generate_workflow(m1_hypothesis(), *g1(), config, 130, 10);
  EXPECT_EQ(report.collected, (ObservableSet{h(1), h(2), mx(1)}));
  config.fan_out_cap = 4;
  auto [w2, report2] = generate_workflow(m1_hypothesis(), *g1(), config, 130, 10);
  EXPECT_EQ(report2.collected, (ObservableSet{h(1), h(2)}));
  ASSERT_EQ(report2.dropped.size(), 1u);
  EXPECT_EQ(report2.dropped[0].observable, mx(1));
  EXPECT_EQ(report2.dropped[0].reason, "budget");
}

TEST(Generate, EmailHasNoCollector) {
  Hypothesis hyp;
  hyp.id = "HY1";
  hyp.suspect = "M1";
  hyp.expected_unsighted = {d(1), Observable(ObservableType::kEmail, "a@b.c")};
  auto [w, report] = generate_workflow(hyp, *g1(), {}, 200, 4);
  ASSERT_EQ(report.dropped.size(), 1u);
  EXPECT_EQ(report.dropped[0].reason, "no-collector");
}

workflow::Workflow priced_workflow() {
  return workflow::Workflow::from_json(Json::parse(R"({
    "id": "priced", "entry": ["watch", "lead"],
    "handlers": {"go": ["scan"]},
    "steps": {
      "watch": {"kind": "deploy-policy", "targets": {"selector": "all-hosts"},
                "policy": {"id": "p", "monitors": [{"kind": "dns-query", "pattern": "d1"}]}},
      "lead": {"kind": "define-alert", "query": {"conjuncts": [{"kind": "value", "value": "d1"}]},
               "handler": "go"},
      "scan": {"kind": "run-task", "targets": {"selector": "hosts-from-alert"},
               "task": {"id": "t", "scan": "file-search",
                        "targets": [{"type": "file-hash-sha256", "value": "h1"}]},
               "next": ["end"]},
      "end": {"kind": "verdict", "claim": "demote"}
    }})"));
}

TEST(EstimateCost, Examples) {
  workflow::Workflow verdict_only;
  verdict_only.id = "v";
  verdict_only.entry = {"end"};
  verdict_only.steps["end"].id = "end";
  EXPECT_EQ(estimate_cost(verdict_only, {}, 10, 5), 0);

  EXPECT_EQ(estimate_cost(priced_workflow(), {}, 10, 2), 10 + 1 + 40);
  EXPECT_EQ(estimate_cost(priced_workflow(), {}, 10, 1), 31);
  // Fan-out never exceeds the fleet.
  EXPECT_EQ(estimate_cost(priced_workflow(), {}, 1, 5), 1 + 1 + 20);
}

TEST(EstimateCost, InvalidWorkflow) {
  workflow::Workflow w = priced_workflow();
  w.entry.clear();
  try {
    estimate_cost(w, {}, 10, 5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "invalid-workflow");
  }
}

TEST(Config, JsonRoundTripAndValidation) {
  GeneratorConfig c;
  c.fan_out_cap = 3;
  c.lead_fraction = 0.2;
  c.eligibility.monitorable.erase(ObservableType::kFilePath);
  EXPECT_EQ(GeneratorConfig::from_json(c.to_json()).to_json(), c.to_json());
  for (Json bad : {Json{{"lead_fraction", 0.0}}, Json{{"lead_fraction", 0.6}, {"forensic_fraction", 0.6}},
                   Json{{"fan_out_cap", 0}}, Json{{"eligibility", {{"monitorable", {"mutex"}}}}}}) {
    EXPECT_THROW(GeneratorConfig::from_json(bad), Error) << bad.dump();
  }
}

// Random hypotheses over every observable type, random fleets and budgets.
struct RandomCase {
  Hypothesis hyp;
  Cost budget;
  int fleet;
  GeneratorConfig config;
};

RandomCase random_case(std::mt19937_64& rng) {
  RandomCase c;
  c.hyp.id = "HY" + std::to_string(rng() % 1000);
  c.hyp.suspect = "M1";
  const int n = 1 + static_cast<int>(rng() % 9);
  for (int i = 0; i < n; ++i) {
    const auto t = kAllObservableTypes[rng() % std::size(kAllObservableTypes)];
    Observable o(t, "x" + std::to_string(rng() % 20));
    if (rng() % 3 == 0)
      c.hyp.sighted.insert(o);
    else if (!c.hyp.sighted.count(o))
      c.hyp.expected_unsighted.insert(o);
  }
  c.fleet = 1 + static_cast<int>(rng() % 20);
  c.config.fan_out_cap = 1 + static_cast<int>(rng() % 6);
  c.config.hash_only = rng() % 10 == 0;
  const Cost unit = c.config.costs.policy_deploy * c.fleet + c.config.costs.alert_rule;
  c.budget = unit + 1 + static_cast<Cost>(rng() % 400);
  return c;
}

TEST(GenerateProperty, RandomizedSuite) {
  std::mt19937_64 rng(20261015);
  int staged = 0;
  for (int i = 0; i < 200; ++i) {
    const RandomCase c = random_case(rng);
    SCOPED_TRACE(c.hyp.to_json().dump() + " budget " + std::to_string(c.budget));
    auto [w, report] = generate_workflow(c.hyp, *g1(), c.config, c.budget, c.fleet);

    // Validity.
    EXPECT_TRUE(workflow::validate(w).empty());
    EXPECT_TRUE(workflow::validate(w.to_json()).empty());

    // Budget admissibility, recomputed from the workflow.
    EXPECT_LE(estimate_cost(w, c.config.costs, c.fleet, c.config.fan_out_cap), c.budget);

    // Coverage: referenced and dropped partition the hypothesis observables.
    const Referenced ref = referenced(w);
    EXPECT_EQ(ref.monitored, ref.alerted);
    ObservableSet touched = ref.monitored;
    touched.insert(ref.tasked.begin(), ref.tasked.end());
    ObservableSet accounted = touched;
    for (const auto& dr : report.dropped) {
      EXPECT_FALSE(touched.count(dr.observable)) << dr.observable.pattern();
      EXPECT_TRUE(accounted.insert(dr.observable).second) << "dropped twice";
    }
    EXPECT_EQ(accounted, c.hyp.observables());
    EXPECT_EQ(ref.monitored, report.monitored);
    EXPECT_EQ(ref.tasked, report.collected);

    // Stage ordering: staged workflows reach no run-task from entry.
    if (report.forensic_first) {
      EXPECT_TRUE(report.expensive);
      continue;
    }
    ++staged;
    for (const auto& id : workflow::reachable(w, w.entry))
      EXPECT_NE(w.steps.at(id).kind, StepKind::kRunTask) << id;
    for (const auto& id : w.entry) {
      const auto k = w.steps.at(id).kind;
      EXPECT_TRUE(k == StepKind::kDeployPolicy || k == StepKind::kDefineAlert);
    }
  }
  EXPECT_GT(staged, 100);
}

}  // namespace
}  // namespace huntloop::generator
