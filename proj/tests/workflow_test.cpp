#include <gtest/gtest.h>

#include <memory>
#include <random>

#include "huntloop/container.hpp"
#include "huntloop/error.hpp"
#include "huntloop/mediator.hpp"
#include "huntloop/workflow.hpp"
#include "test_support.hpp"

namespace huntloop::workflow {
namespace {

using evidence::Channel;
using fleet::Activity;
using fleet::ActivityKind;
using testing::d;
using testing::h;
using testing::load_fixture;
using testing::mx;
using testing::r;

bool has_code(const std::vector<ValidationError>& errors, const std::string& code) {
  for (const auto& e : errors)
    if (e.code == code) return true;
  return false;
}

// Fleet, store and mediator wired the way the orchestrator wires them.
struct Rig {
  std::unique_ptr<fleet::Fleet> fleet;
  evidence::EvidenceStore store;
  FleetMediator mediator;
  std::map<std::string, std::unique_ptr<Container>> containers;
  Tick now = 0;

  explicit Rig(int hosts) : fleet(fleet::Fleet::blank(hosts)), mediator(*fleet, store) {
    fleet->set_sink([this](const evidence::Event& e) { store.ingest(e); });
    store.set_dispatcher([this](const evidence::AlertNotification& n) {
      auto it = containers.find(n.handler.container);
      if (it == containers.end()) return false;
      it->second->on_alert(n, now);
      return true;
    });
  }

  Container& launch(const std::string& id, Workflow w, ContainerOptions o = {}) {
    auto c = std::make_unique<Container>(id, std::move(w), mediator, o);
    auto& ref = *c;
    containers[id] = std::move(c);
    ref.start(now);
    return ref;
  }

  void advance(Tick t) {
    now = t;
    fleet->advance_to(t);
    store.tick(t);
    for (auto& [id, c] : containers) c->run(t);
  }

  void act(const std::string& host, ActivityKind k, Observable o, std::optional<Observable> hash = {}) {
    fleet->simulate_activity(host, Activity{k, std::move(o), std::move(hash), ""});
  }

  std::vector<std::string> calls(const std::string& container) const {
    std::vector<std::string> out;
    for (const auto& e : mediator.audit(container))
      if (e.direction == "out") out.push_back(e.call);
    return out;
  }
};

Workflow minimal() { return Workflow::from_json(load_fixture("workflows/minimal.json")); }
Workflow m1_staged() { return Workflow::from_json(load_fixture("workflows/m1_staged.json")); }

TEST(Validate, CanonicalFixturesAreValid) {
  EXPECT_TRUE(validate(load_fixture("workflows/minimal.json")).empty());
  EXPECT_TRUE(validate(load_fixture("workflows/m1_staged.json")).empty());
}

TEST(Validate, UnknownStepRefInHandler) {
  Json doc = load_fixture("workflows/minimal.json");
  doc["handlers"]["on_lead"] = {"nowhere"};
  auto errors = validate(doc);
  ASSERT_EQ(errors.size(), 1u);
  EXPECT_EQ(errors[0].code, "unknown-step-ref");
}

TEST(Validate, NonterminalVerdict) {
  Json doc = load_fixture("workflows/minimal.json");
  doc["steps"]["decide"]["next"] = {"watch"};
  auto errors = validate(doc);
  ASSERT_EQ(errors.size(), 1u);
  EXPECT_EQ(errors[0].code, "nonterminal-verdict");
}

TEST(Validate, OnlyWhitelistedStepKinds) {
  for (const char* kind : {"exec", "shell", "python", "http-get", ""}) {
    Json doc = load_fixture("workflows/minimal.json");
    doc["steps"]["decide"] = {{"kind", kind}, {"command", "rm -rf /"}};
    EXPECT_TRUE(has_code(validate(doc), "unknown-step-kind")) << kind;
    EXPECT_THROW(Workflow::from_json(doc), Error);
  }
}

TEST(Validate, StructuralDefects) {
  Workflow w = minimal();
  w.entry.clear();
  w.budget = 0;
  w.max_transitions = 0;
  auto errors = validate(w);
  EXPECT_TRUE(has_code(errors, "empty-entry"));
  EXPECT_TRUE(has_code(errors, "non-positive-budget"));
  EXPECT_TRUE(has_code(errors, "non-positive-max-transitions"));

  w = minimal();
  w.steps["watch"].handler = "nobody";
  EXPECT_TRUE(has_code(validate(w), "unknown-handler"));

  w = minimal();
  w.deadline = 10;
  EXPECT_TRUE(has_code(validate(w), "missing-deadline-handler"));

  w = m1_staged();
  w.entry.push_back("scan-hashes");
  EXPECT_TRUE(has_code(validate(w), "unbound-alert-target"));

  w = minimal();
  w.steps["watch"].interval = 0;
  EXPECT_TRUE(has_code(validate(w), "invalid-interval"));
}

TEST(Validate, JsonRoundTrip) {
  Workflow w = m1_staged();
  EXPECT_EQ(Workflow::from_json(w.to_json()).to_json(), w.to_json());
}

TEST(Container, StartsAndRunsEntryInOrder) {
  Rig rig(3);
  auto& c = rig.launch("C1", m1_staged());
  EXPECT_EQ(c.state().status, ContainerStatus::kRunning);
  EXPECT_EQ(c.state().executed,
            (std::vector<std::string>{"watch-r1", "watch-d1", "watch-d2", "lead-r1", "lead-d1", "lead-d2"}));
  EXPECT_EQ(c.state().cost_charged, 3 * 3 + 3);
  EXPECT_EQ(rig.fleet->deployments().size(), 9u);
  EXPECT_EQ(c.state().searched, (ObservableSet{r(1), d(1), d(2)}));
}

TEST(Container, EntryOverBudgetIssuesNothing) {
  Rig rig(10);
  Workflow w = m1_staged();
  w.budget = 5;  // first deploy needs 10
  auto& c = rig.launch("C1", w);
  EXPECT_EQ(c.state().status, ContainerStatus::kBudgetExhausted);
  EXPECT_TRUE(rig.fleet->ledger().empty());
  EXPECT_EQ(c.state().cost_charged, 0);
}

TEST(Container, InvalidWorkflowRefused) {
  Rig rig(1);
  Workflow w = minimal();
  w.entry.clear();
  Container c("C1", w, rig.mediator);
  EXPECT_THROW(c.start(0), Error);
}

TEST(Container, InstancesAreIsolated) {
  Rig rig(2);
  auto& a = rig.launch("C1", minimal());
  auto& b = rig.launch("C2", minimal());
  EXPECT_NE(a.id(), b.id());
  a.cancel(0);
  EXPECT_EQ(a.state().status, ContainerStatus::kCancelled);
  EXPECT_EQ(b.state().status, ContainerStatus::kRunning);
  ASSERT_EQ(rig.store.rules().size(), 1u);
  EXPECT_EQ(rig.store.rules()[0].handler.container, "C2");
}

TEST(Container, DefineAlertBindsHandlerAddress) {
  Rig rig(1);
  auto& c = rig.launch("C1", minimal());
  ASSERT_EQ(c.state().rules.size(), 1u);
  auto rule = rig.store.rule(c.state().rules[0]);
  ASSERT_TRUE(rule);
  EXPECT_EQ(rule->handler, (evidence::HandlerAddress{"C1", "on_lead"}));
  EXPECT_EQ(rule->interval, 1);
}

TEST(Container, ConfirmVerdictNotifiesThroughMediator) {
  Rig rig(1);
  std::vector<std::pair<std::string, VerdictNotice>> verdicts;
  rig.mediator.set_verdict_sink([&](const std::string& c, const VerdictNotice& v) { verdicts.emplace_back(c, v); });
  auto& c = rig.launch("C1", minimal());
  rig.store.ingest(evidence::Event{0, "H01", 0, Channel::kDns, {d(1)}, {}});
  rig.advance(1);
  EXPECT_EQ(c.state().status, ContainerStatus::kConfirmed);
  ASSERT_EQ(verdicts.size(), 1u);
  EXPECT_EQ(verdicts[0].first, "C1");
  EXPECT_EQ(verdicts[0].second.rationale, "lead seen: 1 findings");
  EXPECT_EQ(rig.calls("C1"), (std::vector<std::string>{"register_alert", "notify_verdict", "release"}));
  EXPECT_TRUE(rig.store.rules().empty());
}

TEST(Container, LeadOnOneHostScansOnlyThatHost) {
  Rig rig(4);
  auto& c = rig.launch("C1", m1_staged());
  rig.act("H02", ActivityKind::kCreateFile, Observable(ObservableType::kFilePath, "c:/m/a.exe"), h(1));
  rig.act("H02", ActivityKind::kAcquireMutex, mx(1));
  rig.act("H03", ActivityKind::kCreateFile, Observable(ObservableType::kFilePath, "c:/m/a.exe"), h(1));
  rig.advance(1);
  rig.act("H02", ActivityKind::kAccessRegistry, r(1));
  rig.act("H02", ActivityKind::kDnsQuery, d(1));
  for (Tick t = 2; t <= 12 && !c.terminal(); ++t) rig.advance(t);

  std::set<std::string> scanned;
  for (const auto& e : rig.mediator.audit("C1"))
    if (e.call == "run_task")
      for (const auto& host : e.args["hosts"]) scanned.insert(host.get<std::string>());
  EXPECT_EQ(scanned, std::set<std::string>{"H02"});
  EXPECT_EQ(c.state().status, ContainerStatus::kConfirmed);
  // h1 on H03 is never seen: only H02 alerted.
  for (const auto& f : c.state().findings) EXPECT_EQ(f.host, "H02");
  // Lead at tick 5, file-search (20) takes 2 ticks, then mutex-scan (5) 1.
  EXPECT_EQ(c.state().ended, 8);
}

TEST(Container, DuplicateDeliveryIsNoOp) {
  Rig rig(2);
  Workflow w = m1_staged();
  auto& c = rig.launch("C1", w);
  evidence::Event e{1, "H01", 0, Channel::kDns, {d(1)}, {{"policy", "m1-staged/d1"}}};
  evidence::AlertNotification n{c.state().rules[1], {"C1", "on_lead"}, {e}, 0};
  c.on_alert(n, 0);
  const Json after_first = c.state().to_json();
  c.on_alert(n, 0);
  EXPECT_EQ(c.state().to_json(), after_first);
}

TEST(Container, UnknownHandler) {
  Rig rig(1);
  auto& c = rig.launch("C1", minimal());
  evidence::AlertNotification n{"R1", {"C1", "nope"}, {evidence::Event{1, "H01", 0, Channel::kDns, {}, {}}}, 0};
  EXPECT_THROW(c.on_alert(n, 0), Error);
}

// Handler that re-registers its own alert: a loop only max_transitions stops.
Workflow looping(int max_transitions) {
  Workflow w = minimal();
  w.max_transitions = max_transitions;
  w.budget = 1000;
  w.handlers["on_lead"] = {"watch"};
  return w;
}

TEST(Container, TransitionLimitStopsLoops) {
  Rig rig(1);
  auto& c = rig.launch("C1", looping(3));
  for (Tick t = 1; t <= 20 && !c.terminal(); ++t) {
    rig.store.ingest(evidence::Event{0, "H01", t, Channel::kDns, {d(1)}, {}});
    rig.advance(t);
  }
  EXPECT_EQ(c.state().status, ContainerStatus::kTransitionLimit);
  EXPECT_EQ(c.state().transitions_used, 3);
}

TEST(Container, RunTaskOverRemainingBudget) {
  Rig rig(2);
  Workflow w = m1_staged();
  w.budget = 3 * 2 + 3 + 10;  // stage 1 fits, a 20-unit file-search does not
  auto& c = rig.launch("C1", w);
  rig.act("H01", ActivityKind::kDnsQuery, d(2));
  for (Tick t = 1; t <= 6 && !c.terminal(); ++t) rig.advance(t);
  EXPECT_EQ(c.state().status, ContainerStatus::kBudgetExhausted);
  EXPECT_LE(c.state().cost_charged, w.budget);
  for (const auto& e : rig.fleet->ledger()) EXPECT_NE(e.op, "file-search");
}

TEST(Container, DeadlineDrivesVerdict) {
  Rig rig(2);
  auto& c = rig.launch("C1", m1_staged());
  for (Tick t = 1; t <= 40 && !c.terminal(); ++t) rig.advance(t);
  EXPECT_EQ(c.state().status, ContainerStatus::kDemoted);
  EXPECT_EQ(c.state().ended, 40);
  EXPECT_TRUE(rig.fleet->deployments().empty());
}

TEST(Container, StalledWorkflowFails) {
  Rig rig(1);
  Workflow w;
  w.id = "stall";
  w.entry = {"p"};
  w.steps["p"].id = "p";
  w.steps["p"].kind = StepKind::kDeployPolicy;
  w.steps["p"].policy = fleet::PolicySpec{"P", {{fleet::MonitorKind::kDnsQuery, {"d1"}, Channel::kDns}}};
  auto& c = rig.launch("C1", w);
  EXPECT_EQ(c.state().status, ContainerStatus::kFailed);
}

class FlakyMediator final : public Mediator {
 public:
  explicit FlakyMediator(Mediator& inner, int failures) : inner_(inner), failures_(failures) {}
  std::vector<std::string> hosts(const std::string& c) override { return inner_.hosts(c); }
  void deploy_policy(const std::string& c, const std::vector<std::string>& h, const fleet::PolicySpec& p) override {
    inner_.deploy_policy(c, h, p);
  }
  std::vector<evidence::Event> run_task(const std::string& c, const std::vector<std::string>& h,
                                        const fleet::TaskSpec& t) override {
    return inner_.run_task(c, h, t);
  }
  std::string register_alert(const std::string& c, const evidence::Query& q, Tick i, const std::string& h,
                             bool hist) override {
    if (failures_-- > 0) throw std::runtime_error("store unavailable");
    return inner_.register_alert(c, q, i, h, hist);
  }
  void notify_verdict(const std::string& c, const VerdictNotice& v) override { inner_.notify_verdict(c, v); }
  void release(const std::string& c) override { inner_.release(c); }
  void record_input(const std::string& c, Tick t, const std::string& call, const Json& a) override {
    inner_.record_input(c, t, call, a);
  }

 private:
  Mediator& inner_;
  int failures_;
};

TEST(Container, MediatorFailureRetriedThenFailed) {
  Rig rig(1);
  FlakyMediator transient(rig.mediator, 2);
  Container ok("C1", minimal(), transient);
  ok.start(0);
  EXPECT_EQ(ok.state().status, ContainerStatus::kRunning);

  FlakyMediator broken(rig.mediator, 100);
  Container bad("C2", minimal(), broken);
  bad.start(0);
  EXPECT_EQ(bad.state().status, ContainerStatus::kFailed);
}

TEST(Container, ReleasedContainerIsRevoked) {
  Rig rig(1);
  auto& c = rig.launch("C1", minimal());
  c.cancel(0);
  EXPECT_TRUE(rig.mediator.revoked("C1"));
  EXPECT_THROW(rig.mediator.hosts("C1"), Error);
}

TEST(Container, ReplayReproducesTerminalState) {
  Rig rig(4);
  auto& c = rig.launch("C1", m1_staged());
  rig.act("H03", ActivityKind::kCreateFile, Observable(ObservableType::kFilePath, "c:/m/a.exe"), h(2));
  rig.advance(2);
  rig.act("H03", ActivityKind::kDnsQuery, d(2));
  rig.act("H01", ActivityKind::kAccessRegistry, r(1));
  for (Tick t = 3; t <= 20 && !c.terminal(); ++t) rig.advance(t);
  ASSERT_TRUE(c.terminal());

  // Round-trip the audit through JSON as a persisted log would.
  std::vector<AuditEntry> audit;
  for (const auto& e : rig.mediator.audit()) audit.push_back(AuditEntry::from_json(e.to_json()));
  const ContainerState replayed = replay_container("C1", m1_staged(), audit);
  EXPECT_EQ(replayed.to_json(), c.state().to_json());
}

TEST(Audit, LogLinesCarryDigests) {
  Rig rig(1);
  rig.launch("C1", minimal());
  auto audit = rig.mediator.audit("C1");
  ASSERT_FALSE(audit.empty());
  Json line = audit[0].log_line();
  EXPECT_EQ(line["container"], "C1");
  EXPECT_EQ(line["args_digest"].get<std::string>().size(), 64u);
  EXPECT_EQ(digest(Json::object()), "44136fa355b3678a1146ad16f7e8649e94fb4fc21fe77e8310c060f61caaff8a");
}

}  // namespace
}  // namespace huntloop::workflow
