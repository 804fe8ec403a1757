#pragma once

// Compiles a hypothesis into a staged hunting workflow: cheap on-access
// monitoring for leads, targeted forensic tasks on alerting hosts, verdict.

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "huntloop/attackdb.hpp"
#include "huntloop/hypothesis.hpp"
#include "huntloop/workflow.hpp"

namespace huntloop::generator {

using fleet::Cost;
using workflow::Tick;
using workflow::Workflow;

struct Eligibility {
  // Observable types that can be watched by an on-access policy.
  std::set<ObservableType> monitorable{ObservableType::kRegistryKey, ObservableType::kDomain,
                                       ObservableType::kProcessName, ObservableType::kFilePath};
  // Observable types some forensic scan can collect.
  std::set<ObservableType> forensic{ObservableType::kFileHashSha256, ObservableType::kFileHashMd5,
                                    ObservableType::kMutex,          ObservableType::kIp,
                                    ObservableType::kUrl,            ObservableType::kRegistryKey,
                                    ObservableType::kDomain,         ObservableType::kProcessName,
                                    ObservableType::kFilePath};

  Json to_json() const;
  static Eligibility from_json(const Json& j);
};

struct GeneratorConfig {
  fleet::CostModel costs;
  Eligibility eligibility;
  hypothesis::Thresholds thresholds;
  double lead_fraction = 0.3;
  double forensic_fraction = 0.7;
  int fan_out_cap = 5;
  Tick alert_interval = 5;
  Tick deadline = 40;
  int max_transitions = 32;
  // Skip stage 1 and scan every host (forensic-first).
  bool forensic_first = false;
  // Forensic-first over file hashes only.
  bool hash_only = false;

  void validate() const;  // throws Error("invalid-config")
  Json to_json() const;
  static GeneratorConfig from_json(const Json& j);  // missing fields keep defaults
};

struct Dropped {
  Observable observable;
  std::string reason;  // budget, hash-only, no-collector, ineligible
};

struct GenerationReport {
  std::string hypothesis;
  ObservableSet monitored;  // stage-1 policies and alerts
  ObservableSet collected;  // run-task targets
  std::vector<Dropped> dropped;
  Cost estimated_cost = 0;
  Cost budget = 0;
  bool forensic_first = false;
  bool expensive = false;
  std::string note;  // "nothing-monitorable" when forensic-first was forced by the hypothesis

  Json to_json() const;
};

struct Generated {
  Workflow workflow;
  GenerationReport report;
};

// Throws Error("budget-too-small") when `budget` does not exceed one
// all-host policy plus one alert rule. The workflow id defaults to
// "wf-<hypothesis id>".
Generated generate_workflow(const hypothesis::Hypothesis& h, const attackdb::AttackGraph& g,
                            const GeneratorConfig& config, Cost budget, int fleet_size,
                            const std::string& workflow_id = "");

// Worst-case cost: every priced step once, all-hosts steps over the whole
// fleet, hosts-from-alert tasks over min(fleet, max_hosts or fan-out cap).
// Throws Error("invalid-workflow").
Cost estimate_cost(const Workflow& w, const fleet::CostModel& costs, int fleet_size, int fan_out_cap);

// The forensic scan that collects an observable type; none for email.
std::optional<fleet::ScanKind> scan_for(ObservableType t);

}  // namespace huntloop::generator
