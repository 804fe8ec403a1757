#include "huntloop/workflow.hpp"

#include <array>
#include <deque>

#include "huntloop/error.hpp"

namespace huntloop::workflow {

namespace {

constexpr std::array<std::pair<StepKind, std::string_view>, 4> kStepKinds{{
    {StepKind::kDeployPolicy, "deploy-policy"},
    {StepKind::kRunTask, "run-task"},
    {StepKind::kDefineAlert, "define-alert"},
    {StepKind::kVerdict, "verdict"},
}};

constexpr std::array<std::pair<Selector, std::string_view>, 3> kSelectors{{
    {Selector::kAllHosts, "all-hosts"},
    {Selector::kHostsFromAlert, "hosts-from-alert"},
    {Selector::kExplicit, "explicit"},
}};

constexpr std::array<std::pair<Claim, std::string_view>, 3> kClaims{{
    {Claim::kConfirm, "confirm"},
    {Claim::kDemote, "demote"},
    {Claim::kAuto, "auto"},
}};

template <class E, std::size_t N>
std::string_view name_of(const std::array<std::pair<E, std::string_view>, N>& table, E e) {
  for (const auto& [k, n] : table)
    if (k == e) return n;
  return "unknown";
}

template <class E, std::size_t N>
std::optional<E> parse_of(const std::array<std::pair<E, std::string_view>, N>& table, std::string_view s) {
  for (const auto& [k, n] : table)
    if (n == s) return k;
  return std::nullopt;
}

Json selector_json(const TargetSelector& t) {
  Json j{{"selector", std::string(to_string(t.kind))}};
  if (t.kind == Selector::kExplicit) j["hosts"] = t.hosts;
  if (t.max_hosts > 0) j["max_hosts"] = t.max_hosts;
  return j;
}

// Collects parse defects instead of throwing so a document can report
// every problem at once.
class Parser {
 public:
  std::vector<ValidationError> errors;

  void fail(std::string code, std::string where, std::string message) {
    errors.push_back({std::move(code), std::move(where), std::move(message)});
  }

  template <class F>
  void guard(const std::string& where, F&& f) {
    try {
      f();
    } catch (const Error& e) {
      fail("invalid-spec", where, e.what());
    } catch (const Json::exception& e) {
      fail("malformed-step", where, e.what());
    }
  }

  TargetSelector selector(const Json& j, const std::string& where) {
    TargetSelector t;
    if (!j.is_object()) {
      fail("malformed-step", where, "targets must be an object");
      return t;
    }
    auto kind = parse_selector(j.value("selector", ""));
    if (!kind) {
      fail("unknown-selector", where, "targets.selector must be all-hosts, hosts-from-alert or explicit");
      return t;
    }
    t.kind = *kind;
    guard(where, [&] {
      t.hosts = j.value("hosts", std::vector<std::string>{});
      t.max_hosts = j.value("max_hosts", 0);
    });
    return t;
  }

  Step step(const std::string& id, const Json& j) {
    Step s;
    s.id = id;
    const std::string where = "steps." + id;
    if (!j.is_object()) {
      fail("malformed-step", where, "step must be an object");
      return s;
    }
    const std::string kind_name = j.value("kind", "");
    auto kind = parse_step_kind(kind_name);
    if (!kind) {
      fail("unknown-step-kind", where, "step kind '" + kind_name + "' is not allowed");
      return s;
    }
    s.kind = *kind;
    guard(where, [&] { s.next = j.value("next", std::vector<std::string>{}); });
    switch (s.kind) {
      case StepKind::kDeployPolicy:
        s.targets = selector(j.value("targets", Json{{"selector", "all-hosts"}}), where);
        guard(where, [&] { s.policy = fleet::PolicySpec::from_json(require(j, "policy", "deploy-policy")); });
        break;
      case StepKind::kRunTask:
        s.targets = selector(j.value("targets", Json{{"selector", "all-hosts"}}), where);
        guard(where, [&] {
          s.task = fleet::TaskSpec::from_json(require(j, "task", "run-task"));
          s.delay = j.value("delay", Tick{0});
        });
        break;
      case StepKind::kDefineAlert:
        guard(where, [&] {
          s.query = evidence::Query::from_json(require(j, "query", "define-alert"));
          s.interval = j.value("interval", Tick{5});
          s.handler = require(j, "handler", "define-alert").get<std::string>();
          s.include_history = j.value("include_history", false);
        });
        break;
      case StepKind::kVerdict: {
        const std::string claim = j.value("claim", "auto");
        if (auto c = parse_claim(claim)) {
          s.claim = *c;
        } else {
          fail("unknown-claim", where, "verdict claim must be confirm, demote or auto");
        }
        guard(where, [&] { s.rationale = j.value("rationale", ""); });
        break;
      }
    }
    return s;
  }

  Workflow workflow(const Json& j) {
    Workflow w;
    if (!j.is_object()) {
      fail("malformed-document", "", "workflow must be an object");
      return w;
    }
    guard("", [&] {
      w.id = j.value("id", "");
      if (j.contains("hypothesis") && !j["hypothesis"].is_null())
        w.hypothesis = j["hypothesis"].get<std::string>();
      w.entry = j.value("entry", std::vector<std::string>{});
      w.handlers = j.value("handlers", std::map<std::string, std::vector<std::string>>{});
      w.budget = j.value("budget", Cost{200});
      w.max_transitions = j.value("max_transitions", 32);
      if (j.contains("deadline") && !j["deadline"].is_null()) w.deadline = j["deadline"].get<Tick>();
      w.expect = observables_from_json(j.value("expect", Json::array()));
      w.sighted = observables_from_json(j.value("sighted", Json::array()));
      w.report = j.value("report", Json::object());
    });
    const Json steps = j.value("steps", Json::object());
    if (!steps.is_object()) {
      fail("malformed-document", "steps", "steps must be an object keyed by step id");
      return w;
    }
    for (const auto& [id, body] : steps.items()) w.steps.emplace(id, step(id, body));
    return w;
  }
};

}  // namespace

std::string_view to_string(StepKind k) { return name_of(kStepKinds, k); }
std::optional<StepKind> parse_step_kind(std::string_view s) { return parse_of(kStepKinds, s); }
std::string_view to_string(Selector s) { return name_of(kSelectors, s); }
std::optional<Selector> parse_selector(std::string_view s) { return parse_of(kSelectors, s); }
std::string_view to_string(Claim c) { return name_of(kClaims, c); }
std::optional<Claim> parse_claim(std::string_view s) { return parse_of(kClaims, s); }

Json Step::to_json() const {
  Json j{{"kind", std::string(workflow::to_string(kind))}, {"next", next}};
  switch (kind) {
    case StepKind::kDeployPolicy:
      j["targets"] = selector_json(targets);
      j["policy"] = policy.to_json();
      break;
    case StepKind::kRunTask:
      j["targets"] = selector_json(targets);
      j["task"] = task.to_json();
      if (delay) j["delay"] = delay;
      break;
    case StepKind::kDefineAlert:
      j["query"] = query.to_json();
      j["interval"] = interval;
      j["handler"] = handler;
      if (include_history) j["include_history"] = true;
      break;
    case StepKind::kVerdict:
      j["claim"] = std::string(workflow::to_string(claim));
      if (!rationale.empty()) j["rationale"] = rationale;
      break;
  }
  return j;
}

Json Workflow::to_json() const {
  Json steps_j = Json::object();
  for (const auto& [id, s] : steps) steps_j[id] = s.to_json();
  Json j{{"id", id},
         {"steps", steps_j},
         {"entry", entry},
         {"handlers", handlers},
         {"budget", budget},
         {"max_transitions", max_transitions}};
  if (hypothesis) j["hypothesis"] = *hypothesis;
  if (deadline) j["deadline"] = *deadline;
  if (!expect.empty()) j["expect"] = observables_to_json(expect);
  if (!sighted.empty()) j["sighted"] = observables_to_json(sighted);
  if (!report.empty()) j["report"] = report;
  return j;
}

Workflow Workflow::from_json(const Json& j) {
  Parser p;
  Workflow w = p.workflow(j);
  auto errors = p.errors;
  if (errors.empty()) errors = validate(w);
  if (!errors.empty()) {
    std::string msg;
    for (const auto& e : errors) msg += (msg.empty() ? "" : "; ") + e.code + " at " + e.where + ": " + e.message;
    throw Error("invalid-workflow", msg);
  }
  return w;
}

std::set<std::string> reachable(const Workflow& w, const std::vector<std::string>& roots) {
  std::set<std::string> seen;
  std::deque<std::string> queue(roots.begin(), roots.end());
  while (!queue.empty()) {
    const std::string id = queue.front();
    queue.pop_front();
    if (!seen.insert(id).second) continue;
    auto it = w.steps.find(id);
    if (it == w.steps.end()) continue;
    for (const auto& n : it->second.next) queue.push_back(n);
  }
  return seen;
}

std::vector<ValidationError> validate(const Workflow& w) {
  std::vector<ValidationError> out;
  auto fail = [&](std::string code, std::string where, std::string message) {
    out.push_back({std::move(code), std::move(where), std::move(message)});
  };
  auto check_ref = [&](const std::string& ref, const std::string& where) {
    if (!w.steps.count(ref)) fail("unknown-step-ref", where, "no step '" + ref + "'");
  };

  if (w.entry.empty()) fail("empty-entry", "entry", "workflow needs at least one entry step");
  for (const auto& e : w.entry) check_ref(e, "entry");
  for (const auto& [name, ids] : w.handlers)
    for (const auto& id : ids) check_ref(id, "handlers." + name);
  if (w.budget <= 0) fail("non-positive-budget", "budget", "budget must be > 0");
  if (w.max_transitions <= 0)
    fail("non-positive-max-transitions", "max_transitions", "max_transitions must be > 0");
  if (w.deadline) {
    if (*w.deadline <= 0) fail("non-positive-deadline", "deadline", "deadline must be > 0");
    if (!w.handlers.count(kDeadlineHandler))
      fail("missing-deadline-handler", "handlers", "a deadline needs a 'deadline' handler");
  }

  for (const auto& [id, s] : w.steps) {
    const std::string where = "steps." + id;
    for (const auto& n : s.next) check_ref(n, where + ".next");
    auto guard = [&](auto&& f) {
      try {
        f();
      } catch (const Error& e) {
        fail("invalid-spec", where, e.what());
      }
    };
    switch (s.kind) {
      case StepKind::kDeployPolicy:
        guard([&] { s.policy.validate(); });
        break;
      case StepKind::kRunTask:
        guard([&] { s.task.validate(); });
        if (s.delay < 0) fail("invalid-schedule", where, "delay must be >= 0");
        break;
      case StepKind::kDefineAlert:
        guard([&] { s.query.validate(); });
        if (s.interval < 1) fail("invalid-interval", where, "alert interval must be >= 1");
        if (!w.handlers.count(s.handler))
          fail("unknown-handler", where, "handler '" + s.handler + "' is not defined");
        break;
      case StepKind::kVerdict:
        if (!s.next.empty()) fail("nonterminal-verdict", where, "verdict steps must have no successors");
        break;
    }
    if (s.kind == StepKind::kDeployPolicy || s.kind == StepKind::kRunTask) {
      if (s.targets.kind == Selector::kExplicit && s.targets.hosts.empty())
        fail("empty-targets", where, "explicit selector needs hosts");
      if (s.targets.max_hosts < 0) fail("invalid-targets", where, "max_hosts must be >= 0");
    }
  }

  // hosts-from-alert needs a notification, so it cannot run from entry or
  // from the deadline handler.
  std::vector<std::string> unbound = w.entry;
  if (auto it = w.handlers.find(kDeadlineHandler); it != w.handlers.end())
    unbound.insert(unbound.end(), it->second.begin(), it->second.end());
  for (const auto& id : reachable(w, unbound)) {
    auto it = w.steps.find(id);
    if (it == w.steps.end()) continue;
    const Step& s = it->second;
    if ((s.kind == StepKind::kDeployPolicy || s.kind == StepKind::kRunTask) &&
        s.targets.kind == Selector::kHostsFromAlert)
      fail("unbound-alert-target", "steps." + id, "hosts-from-alert step runs without an alert");
  }
  return out;
}

std::vector<ValidationError> validate(const Json& doc) {
  Parser p;
  Workflow w = p.workflow(doc);
  auto errors = p.errors;
  for (auto& e : validate(w)) errors.push_back(std::move(e));
  return errors;
}

Json to_json(const std::vector<ValidationError>& errors) {
  Json out = Json::array();
  for (const auto& e : errors) out.push_back({{"code", e.code}, {"where", e.where}, {"message", e.message}});
  return out;
}

}  // namespace huntloop::workflow
