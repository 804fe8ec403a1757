#pragma once

// Workflow documents: a closed instruction set of four step kinds wired
// together by `next` edges and alert handlers.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "huntloop/evidence_store.hpp"
#include "huntloop/fleet.hpp"
#include "huntloop/json_io.hpp"
#include "huntloop/observable.hpp"

namespace huntloop::workflow {

using evidence::Tick;
using fleet::Cost;

// Handler fired once when a workflow's deadline elapses.
inline constexpr const char* kDeadlineHandler = "deadline";

enum class StepKind { kDeployPolicy, kRunTask, kDefineAlert, kVerdict };
enum class Selector { kAllHosts, kHostsFromAlert, kExplicit };
enum class Claim { kConfirm, kDemote, kAuto };

std::string_view to_string(StepKind k);
std::optional<StepKind> parse_step_kind(std::string_view s);
std::string_view to_string(Selector s);
std::optional<Selector> parse_selector(std::string_view s);
std::string_view to_string(Claim c);
std::optional<Claim> parse_claim(std::string_view s);

struct TargetSelector {
  Selector kind = Selector::kAllHosts;
  std::vector<std::string> hosts;  // explicit only
  int max_hosts = 0;  // hosts-from-alert cap across firings; 0 = container default

  bool operator==(const TargetSelector&) const = default;
};

struct Step {
  std::string id;
  StepKind kind = StepKind::kVerdict;
  std::vector<std::string> next;

  // deploy-policy / run-task
  TargetSelector targets;
  fleet::PolicySpec policy;
  fleet::TaskSpec task;
  Tick delay = 0;  // run-task: ticks after the step becomes ready

  // define-alert
  evidence::Query query;
  Tick interval = 5;
  std::string handler;
  bool include_history = false;

  // verdict
  Claim claim = Claim::kAuto;
  std::string rationale;  // {claim}, {coverage} and {findings} are substituted

  Json to_json() const;
};

struct Workflow {
  std::string id;
  std::optional<std::string> hypothesis;
  std::map<std::string, Step> steps;
  std::vector<std::string> entry;
  std::map<std::string, std::vector<std::string>> handlers;
  Cost budget = 200;
  int max_transitions = 32;
  std::optional<Tick> deadline;  // ticks after start
  // Hypothesis observables, used by auto verdicts.
  ObservableSet expect;
  ObservableSet sighted;
  Json report = Json::object();  // generation report, opaque here

  Json to_json() const;
  // Throws Error("invalid-workflow") listing every defect.
  static Workflow from_json(const Json& j);
};

struct ValidationError {
  std::string code;  // unknown-step-ref, nonterminal-verdict, ...
  std::string where;
  std::string message;

  bool operator==(const ValidationError&) const = default;
};

std::vector<ValidationError> validate(const Workflow& w);
// Document-level validation, including parse defects such as unknown
// step kinds.
std::vector<ValidationError> validate(const Json& doc);

Json to_json(const std::vector<ValidationError>& errors);

// Step ids reachable from `roots` over next edges (roots included).
std::set<std::string> reachable(const Workflow& w, const std::vector<std::string>& roots);

}  // namespace huntloop::workflow
