#pragma once

// WF-Container: a serial interpreter for one workflow. Every external
// effect goes through the Mediator it was given; the container holds no
// other handle on the fleet, the evidence store or the C&C.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "huntloop/evidence_store.hpp"
#include "huntloop/fleet.hpp"
#include "huntloop/hypothesis.hpp"
#include "huntloop/workflow.hpp"

namespace huntloop::workflow {

struct VerdictNotice {
  Claim claim = Claim::kDemote;  // never kAuto once issued
  std::string rationale;
  double coverage = 0.0;

  Json to_json() const;
  static VerdictNotice from_json(const Json& j);
};

class Mediator {
 public:
  virtual ~Mediator() = default;

  virtual std::vector<std::string> hosts(const std::string& container) = 0;
  virtual void deploy_policy(const std::string& container, const std::vector<std::string>& hosts,
                             const fleet::PolicySpec& policy) = 0;
  virtual std::vector<evidence::Event> run_task(const std::string& container,
                                                const std::vector<std::string>& hosts,
                                                const fleet::TaskSpec& task) = 0;
  virtual std::string register_alert(const std::string& container, const evidence::Query& query,
                                     Tick interval, const std::string& handler,
                                     bool include_history) = 0;
  virtual void notify_verdict(const std::string& container, const VerdictNotice& verdict) = 0;
  // Revokes the container's policies and alert rules. Later calls from
  // the container are refused.
  virtual void release(const std::string& container) = 0;

  // Inbound traffic (start, alerts, clock) recorded for replay.
  virtual void record_input(const std::string& container, Tick tick, const std::string& call,
                            const Json& args) = 0;
};

enum class ContainerStatus {
  kRunning,
  kConfirmed,
  kDemoted,
  kBudgetExhausted,
  kTransitionLimit,
  kFailed,
  kCancelled,
};

std::string_view to_string(ContainerStatus s);
std::optional<ContainerStatus> parse_container_status(std::string_view s);

struct ContainerOptions {
  fleet::CostModel costs;
  hypothesis::WeightTable weights;
  hypothesis::Thresholds thresholds;
  int fan_out_cap = 5;  // hosts-from-alert cap when a step sets none
  int mediator_retries = 2;
};

struct ContainerState {
  std::string id;
  std::string workflow_id;
  ContainerStatus status = ContainerStatus::kRunning;
  std::vector<std::string> pending;  // queued step ids, in execution order
  int transitions_used = 0;
  Cost cost_charged = 0;
  Cost budget = 0;
  std::vector<hypothesis::Sighting> findings;
  ObservableSet searched;  // monitored or scanned observables
  std::vector<std::string> rules;
  std::optional<VerdictNotice> verdict;
  std::string reason;  // why a non-verdict terminal status was reached
  Tick started = 0;
  std::optional<Tick> ended;
  std::vector<std::string> executed;  // step ids in execution order

  ObservableSet found() const;
  Json to_json() const;
};

class Container {
 public:
  Container(std::string id, Workflow w, Mediator& mediator, ContainerOptions options = {});

  // Throws Error("invalid-workflow").
  void start(Tick now);
  // Throws Error("unknown-handler"). Duplicate deliveries and deliveries to
  // a terminal container are no-ops.
  void on_alert(const evidence::AlertNotification& n, Tick now);
  // Runs ready steps and the deadline. Returns true when anything changed.
  bool run(Tick now);
  void cancel(Tick now, const std::string& reason = "cancelled");

  bool terminal() const { return state_.status != ContainerStatus::kRunning; }
  const ContainerState& state() const { return state_; }
  const Workflow& workflow() const { return workflow_; }
  const std::string& id() const { return state_.id; }

 private:
  struct Item {
    std::string step;
    Tick ready_at = 0;
    std::int64_t order = 0;
    std::vector<std::string> alert_hosts;
  };

  void enqueue(const std::string& step, Tick ready_at, const std::vector<std::string>& alert_hosts);
  void enqueue_next(const Step& s, Tick ready_at, const std::vector<std::string>& alert_hosts);
  void fire_handler(const std::string& name, const std::vector<std::string>& hosts, Tick now);
  void execute(const Item& item, Tick now);
  bool charge(Cost cost, Tick now);
  std::vector<std::string> resolve(const Step& s, const std::vector<std::string>& alert_hosts);
  void finish(ContainerStatus status, Tick now, const std::string& reason = "");
  void add_finding(const Observable& o, const std::string& host, Tick tick,
                   hypothesis::SightingSource source);
  void sync_pending();

  template <class F>
  auto mediated(F&& f) -> decltype(f());

  Workflow workflow_;
  Mediator& mediator_;
  ContainerOptions options_;
  ContainerState state_;
  std::vector<Item> queue_;
  std::int64_t next_order_ = 0;
  Tick busy_until_ = 0;
  bool deadline_fired_ = false;
  bool started_ = false;
  std::set<std::pair<std::string, evidence::Seq>> delivered_;
  std::map<std::string, std::set<std::string>> scanned_;  // step -> hosts
  std::set<std::pair<Observable, std::string>> finding_keys_;
};

}  // namespace huntloop::workflow
