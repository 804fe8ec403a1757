#include "huntloop/generator.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "huntloop/error.hpp"

namespace huntloop::generator {

namespace {

using fleet::ScanKind;
using workflow::Claim;
using workflow::Selector;
using workflow::Step;
using workflow::StepKind;

std::optional<fleet::MonitorKind> monitor_for(ObservableType t) {
  switch (t) {
    case ObservableType::kRegistryKey:
      return fleet::MonitorKind::kRegistryAccess;
    case ObservableType::kDomain:
      return fleet::MonitorKind::kDnsQuery;
    case ObservableType::kProcessName:
      return fleet::MonitorKind::kProcessStart;
    case ObservableType::kFilePath:
      return fleet::MonitorKind::kFileOpen;
    default:
      return std::nullopt;
  }
}

Json types_to_json(const std::set<ObservableType>& types) {
  Json out = Json::array();
  for (auto t : types) out.push_back(std::string(to_string(t)));
  return out;
}

std::set<ObservableType> types_from_json(const Json& j) {
  std::set<ObservableType> out;
  for (const auto& v : j) {
    auto t = parse_observable_type(v.get<std::string>());
    if (!t) throw Error("invalid-config", "unknown observable type " + v.get<std::string>());
    out.insert(*t);
  }
  return out;
}

struct Group {
  ScanKind scan;
  ObservableSet targets;
  double weight = 0.0;
  int indicative = 0;
};

// Stage-2 groups, heaviest evidence first.
std::vector<Group> group_by_scan(const ObservableSet& obs, const ObservableSet& indicative,
                                 const hypothesis::WeightTable& weights) {
  std::map<ScanKind, Group> groups;
  for (const auto& o : obs) {
    const ScanKind k = *scan_for(o.type());
    auto [it, _] = groups.try_emplace(k, Group{k, {}, 0.0, 0});
    it->second.targets.insert(o);
    it->second.weight += weights.weight(o.type());
    it->second.indicative += indicative.count(o) ? 1 : 0;
  }
  std::vector<Group> out;
  for (auto& [k, g] : groups) out.push_back(std::move(g));
  std::stable_sort(out.begin(), out.end(), [](const Group& a, const Group& b) {
    if (a.weight != b.weight) return a.weight > b.weight;
    return a.indicative > b.indicative;
  });
  return out;
}

Cost floor_fraction(double f, Cost budget) { return static_cast<Cost>(std::floor(f * static_cast<double>(budget))); }

Step verdict_step() {
  Step s;
  s.id = "decide";
  s.kind = StepKind::kVerdict;
  s.claim = Claim::kAuto;
  s.rationale = "{claim}: weighted coverage {coverage} from {findings} findings";
  return s;
}

// Chains scan steps in order, the last one feeding the verdict. Returns
// the first step id of the chain.
std::string add_scan_chain(Workflow& w, const std::vector<Group>& groups, Selector selector, int max_hosts) {
  std::string next = "decide";
  for (auto it = groups.rbegin(); it != groups.rend(); ++it) {
    Step s;
    s.id = "scan-" + std::string(fleet::to_string(it->scan));
    s.kind = StepKind::kRunTask;
    s.targets.kind = selector;
    s.targets.max_hosts = selector == Selector::kHostsFromAlert ? max_hosts : 0;
    s.task.id = w.id + "/" + s.id;
    s.task.scan = it->scan;
    s.task.targets = it->targets;
    s.next = {next};
    next = s.id;
    w.steps[s.id] = std::move(s);
  }
  return next;
}

}  // namespace

std::optional<ScanKind> scan_for(ObservableType t) {
  switch (t) {
    case ObservableType::kFileHashSha256:
    case ObservableType::kFileHashMd5:
    case ObservableType::kFilePath:
      return ScanKind::kFileSearch;
    case ObservableType::kRegistryKey:
      return ScanKind::kRegistryScan;
    case ObservableType::kProcessName:
      return ScanKind::kProcessList;
    case ObservableType::kMutex:
      return ScanKind::kMutexScan;
    case ObservableType::kIp:
    case ObservableType::kDomain:
    case ObservableType::kUrl:
      return ScanKind::kNetlogScan;
    case ObservableType::kEmail:
      return std::nullopt;
  }
  return std::nullopt;
}

Json Eligibility::to_json() const {
  return Json{{"monitorable", types_to_json(monitorable)}, {"forensic", types_to_json(forensic)}};
}

Eligibility Eligibility::from_json(const Json& j) {
  Eligibility e;
  if (j.contains("monitorable")) e.monitorable = types_from_json(j["monitorable"]);
  if (j.contains("forensic")) e.forensic = types_from_json(j["forensic"]);
  return e;
}

void GeneratorConfig::validate() const {
  costs.validate();
  auto in_unit = [](double f) { return f > 0.0 && f < 1.0; };
  if (!in_unit(lead_fraction) || !in_unit(forensic_fraction) || lead_fraction + forensic_fraction > 1.0 + 1e-9)
    throw Error("invalid-config", "stage fractions must lie in (0,1) and sum to at most 1");
  if (fan_out_cap < 1) throw Error("invalid-config", "fan_out_cap must be at least 1");
  if (alert_interval < 1) throw Error("invalid-config", "alert_interval must be at least 1");
  if (deadline < 1) throw Error("invalid-config", "deadline must be at least 1");
  if (max_transitions < 1) throw Error("invalid-config", "max_transitions must be at least 1");
  for (auto t : eligibility.monitorable)
    if (!monitor_for(t)) throw Error("invalid-config", "no on-access monitor for " + std::string(to_string(t)));
  for (auto t : eligibility.forensic)
    if (!scan_for(t)) throw Error("invalid-config", "no forensic scan for " + std::string(to_string(t)));
}

Json GeneratorConfig::to_json() const {
  return Json{{"costs", costs.to_json()},
              {"eligibility", eligibility.to_json()},
              {"thresholds", thresholds.to_json()},
              {"lead_fraction", lead_fraction},
              {"forensic_fraction", forensic_fraction},
              {"fan_out_cap", fan_out_cap},
              {"alert_interval", alert_interval},
              {"deadline", deadline},
              {"max_transitions", max_transitions},
              {"forensic_first", forensic_first},
              {"hash_only", hash_only}};
}

GeneratorConfig GeneratorConfig::from_json(const Json& j) {
  GeneratorConfig c;
  if (j.contains("costs")) c.costs = fleet::CostModel::from_json(j["costs"]);
  if (j.contains("eligibility")) c.eligibility = Eligibility::from_json(j["eligibility"]);
  if (j.contains("thresholds")) c.thresholds = hypothesis::Thresholds::from_json(j["thresholds"]);
  c.lead_fraction = j.value("lead_fraction", c.lead_fraction);
  c.forensic_fraction = j.value("forensic_fraction", c.forensic_fraction);
  c.fan_out_cap = j.value("fan_out_cap", c.fan_out_cap);
  c.alert_interval = j.value("alert_interval", c.alert_interval);
  c.deadline = j.value("deadline", c.deadline);
  c.max_transitions = j.value("max_transitions", c.max_transitions);
  c.forensic_first = j.value("forensic_first", c.forensic_first);
  c.hash_only = j.value("hash_only", c.hash_only);
  c.validate();
  return c;
}

Json GenerationReport::to_json() const {
  Json dropped_json = Json::array();
  for (const auto& d : dropped) {
    Json o;
    huntloop::to_json(o, d.observable);
    dropped_json.push_back(Json{{"observable", o}, {"reason", d.reason}});
  }
  Json j{{"hypothesis", hypothesis},
         {"monitored", observables_to_json(monitored)},
         {"collected", observables_to_json(collected)},
         {"dropped", dropped_json},
         {"estimated_cost", estimated_cost},
         {"budget", budget},
         {"forensic_first", forensic_first},
         {"expensive", expensive}};
  if (!note.empty()) j["note"] = note;
  return j;
}

Generated generate_workflow(const hypothesis::Hypothesis& h, const attackdb::AttackGraph& g,
                            const GeneratorConfig& config, Cost budget, int fleet_size,
                            const std::string& workflow_id) {
  config.validate();
  if (fleet_size < 1) throw Error("invalid-argument", "fleet size must be at least 1");
  const fleet::CostModel& cm = config.costs;
  const Cost monitor_unit = cm.policy_deploy * fleet_size + cm.alert_rule;
  if (budget <= monitor_unit)
    throw Error("budget-too-small",
                "budget " + std::to_string(budget) + " does not exceed one monitor and alert (" +
                    std::to_string(monitor_unit) + ")");

  hypothesis::WeightTable weights;
  const ObservableSet all = h.observables();
  const ObservableSet indicative =
      g.find(h.suspect) ? attackdb::observables_of(g, h.suspect, true) : ObservableSet{};

  Generated out;
  Workflow& w = out.workflow;
  GenerationReport& report = out.report;
  w.id = workflow_id.empty() ? "wf-" + h.id : workflow_id;
  w.hypothesis = h.id;
  w.budget = budget;
  w.max_transitions = config.max_transitions;
  w.expect = all;
  w.sighted = h.sighted;
  report.hypothesis = h.id;
  report.budget = budget;

  auto drop = [&](const Observable& o, std::string reason) { report.dropped.push_back({o, std::move(reason)}); };
  auto collectable = [&](const Observable& o) {
    return config.eligibility.forensic.count(o.type()) > 0 && scan_for(o.type());
  };
  auto unusable_reason = [&](const Observable& o) {
    return scan_for(o.type()) || monitor_for(o.type()) ? "ineligible" : "no-collector";
  };

  std::vector<Observable> monitorable;
  if (!config.forensic_first && !config.hash_only)
    for (const auto& o : all)
      if (config.eligibility.monitorable.count(o.type())) monitorable.push_back(o);
  // Unsighted observables first: a lead on them is new evidence.
  std::stable_sort(monitorable.begin(), monitorable.end(), [&](const Observable& a, const Observable& b) {
    const bool sa = h.sighted.count(a) > 0, sb = h.sighted.count(b) > 0;
    if (sa != sb) return !sa;
    return weights.weight(a.type()) > weights.weight(b.type());
  });

  ObservableSet forensic;
  if (monitorable.empty()) {
    report.forensic_first = true;
    report.expensive = true;
    if (!config.forensic_first && !config.hash_only) report.note = "nothing-monitorable";
    for (const auto& o : all) {
      if (config.hash_only && !is_hash(o.type()))
        drop(o, "hash-only");
      else if (collectable(o))
        forensic.insert(o);
      else
        drop(o, unusable_reason(o));
    }
    Cost used = 0;
    std::vector<Group> kept;
    for (auto& grp : group_by_scan(forensic, indicative, weights)) {
      const Cost c = cm.task_cost(grp.scan) * fleet_size;
      if (used + c <= budget) {
        used += c;
        report.collected.insert(grp.targets.begin(), grp.targets.end());
        kept.push_back(std::move(grp));
      } else {
        for (const auto& o : grp.targets) drop(o, "budget");
      }
    }
    w.steps["decide"] = verdict_step();
    w.entry = {add_scan_chain(w, kept, Selector::kAllHosts, 0)};
  } else {
    const Cost lead_allowance = std::max(floor_fraction(config.lead_fraction, budget), monitor_unit);
    Cost used = 0;
    int n = 0;
    std::vector<std::string> watches, leads;
    for (const auto& o : monitorable) {
      if (used + monitor_unit > lead_allowance) {
        if (collectable(o))
          forensic.insert(o);
        else
          drop(o, "budget");
        continue;
      }
      used += monitor_unit;
      ++n;
      Step watch;
      watch.id = "watch-" + std::to_string(n);
      watch.kind = StepKind::kDeployPolicy;
      watch.targets.kind = Selector::kAllHosts;
      const auto kind = *monitor_for(o.type());
      watch.policy = fleet::PolicySpec{w.id + "/" + watch.id, {{kind, {o.value()}, fleet::default_channel(kind)}}};

      Step lead;
      lead.id = "lead-" + std::to_string(n);
      lead.kind = StepKind::kDefineAlert;
      lead.query = evidence::Query::observable_on(fleet::default_channel(kind), o);
      lead.query.conjuncts.push_back(evidence::pred::AttrEquals{"policy", watch.policy.id});
      lead.interval = config.alert_interval;
      lead.handler = "on_lead";

      watches.push_back(watch.id);
      leads.push_back(lead.id);
      w.steps[watch.id] = std::move(watch);
      w.steps[lead.id] = std::move(lead);
      report.monitored.insert(o);
    }
    w.entry = watches;
    w.entry.insert(w.entry.end(), leads.begin(), leads.end());

    for (const auto& o : all) {
      if (config.eligibility.monitorable.count(o.type())) continue;
      if (collectable(o))
        forensic.insert(o);
      else
        drop(o, unusable_reason(o));
    }

    const int wave = std::min(fleet_size, config.fan_out_cap);
    const Cost forensic_allowance = std::min(budget - used, floor_fraction(config.forensic_fraction, budget));
    Cost spent = 0;
    std::vector<Group> kept;
    for (auto& grp : group_by_scan(forensic, indicative, weights)) {
      const Cost c = cm.task_cost(grp.scan) * wave;
      if (spent + c <= forensic_allowance) {
        spent += c;
        report.collected.insert(grp.targets.begin(), grp.targets.end());
        kept.push_back(std::move(grp));
      } else {
        for (const auto& o : grp.targets) drop(o, "budget");
      }
    }
    w.steps["decide"] = verdict_step();
    w.handlers["on_lead"] = {add_scan_chain(w, kept, Selector::kHostsFromAlert, wave)};
    w.handlers[workflow::kDeadlineHandler] = {"decide"};
    w.deadline = config.deadline;
  }

  std::sort(report.dropped.begin(), report.dropped.end(),
            [](const Dropped& a, const Dropped& b) { return a.observable < b.observable; });
  report.estimated_cost = estimate_cost(w, cm, fleet_size, config.fan_out_cap);
  w.report = report.to_json();
  w.report["thresholds"] = config.thresholds.to_json();
  return out;
}

Cost estimate_cost(const Workflow& w, const fleet::CostModel& costs, int fleet_size, int fan_out_cap) {
  const auto errors = workflow::validate(w);
  if (!errors.empty()) throw Error("invalid-workflow", workflow::to_json(errors).dump());
  auto host_count = [&](const workflow::TargetSelector& t) -> Cost {
    switch (t.kind) {
      case Selector::kAllHosts:
        return fleet_size;
      case Selector::kExplicit:
        return static_cast<Cost>(t.hosts.size());
      case Selector::kHostsFromAlert:
        return std::min(fleet_size, t.max_hosts > 0 ? t.max_hosts : fan_out_cap);
    }
    return 0;
  };
  Cost total = 0;
  for (const auto& [id, s] : w.steps) {
    switch (s.kind) {
      case StepKind::kDeployPolicy:
        total += costs.policy_deploy * host_count(s.targets);
        break;
      case StepKind::kRunTask:
        total += (s.task.cost > 0 ? s.task.cost : costs.task_cost(s.task.scan)) * host_count(s.targets);
        break;
      case StepKind::kDefineAlert:
        total += costs.alert_rule;
        break;
      case StepKind::kVerdict:
        break;
    }
  }
  return total;
}

}  // namespace huntloop::generator
