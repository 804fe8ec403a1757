#include "huntloop/container.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <tuple>

#include "huntloop/error.hpp"

namespace huntloop::workflow {

namespace {

constexpr std::array<std::pair<ContainerStatus, std::string_view>, 7> kStatuses{{
    {ContainerStatus::kRunning, "running"},
    {ContainerStatus::kConfirmed, "confirmed"},
    {ContainerStatus::kDemoted, "demoted"},
    {ContainerStatus::kBudgetExhausted, "budget-exhausted"},
    {ContainerStatus::kTransitionLimit, "transition-limit"},
    {ContainerStatus::kFailed, "failed"},
    {ContainerStatus::kCancelled, "cancelled"},
}};

struct MediatorFailure {
  std::string what;
};

std::optional<ObservableType> monitored_type(fleet::MonitorKind k) {
  switch (k) {
    case fleet::MonitorKind::kFileOpen: return ObservableType::kFilePath;
    case fleet::MonitorKind::kRegistryAccess: return ObservableType::kRegistryKey;
    case fleet::MonitorKind::kProcessStart: return ObservableType::kProcessName;
    case fleet::MonitorKind::kDnsQuery: return ObservableType::kDomain;
  }
  return std::nullopt;
}

std::string format_coverage(double c) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", c);
  return buf;
}

void replace_all(std::string& s, const std::string& from, const std::string& to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
    s.replace(pos, from.size(), to);
}

}  // namespace

std::string_view to_string(ContainerStatus s) {
  for (const auto& [k, n] : kStatuses)
    if (k == s) return n;
  return "unknown";
}

std::optional<ContainerStatus> parse_container_status(std::string_view s) {
  for (const auto& [k, n] : kStatuses)
    if (n == s) return k;
  return std::nullopt;
}

Json VerdictNotice::to_json() const {
  return Json{{"claim", std::string(workflow::to_string(claim))}, {"rationale", rationale}, {"coverage", coverage}};
}

VerdictNotice VerdictNotice::from_json(const Json& j) {
  VerdictNotice v;
  auto c = parse_claim(j.value("claim", ""));
  if (!c || *c == Claim::kAuto) throw Error("malformed-document", "verdict claim must be confirm or demote");
  v.claim = *c;
  v.rationale = j.value("rationale", "");
  v.coverage = j.value("coverage", 0.0);
  return v;
}

ObservableSet ContainerState::found() const {
  ObservableSet out;
  for (const auto& f : findings) out.insert(f.observable);
  return out;
}

Json ContainerState::to_json() const {
  Json j{{"id", id},
         {"workflow", workflow_id},
         {"status", std::string(workflow::to_string(status))},
         {"pending", pending},
         {"transitions_used", transitions_used},
         {"cost_charged", cost_charged},
         {"budget", budget},
         {"findings", findings},
         {"searched", observables_to_json(searched)},
         {"rules", rules},
         {"started", started},
         {"executed", executed}};
  j["verdict"] = verdict ? verdict->to_json() : Json();
  j["ended"] = ended ? Json(*ended) : Json();
  if (!reason.empty()) j["reason"] = reason;
  return j;
}

Container::Container(std::string id, Workflow w, Mediator& mediator, ContainerOptions options)
    : workflow_(std::move(w)), mediator_(mediator), options_(std::move(options)) {
  state_.id = std::move(id);
  state_.workflow_id = workflow_.id;
  state_.budget = workflow_.budget;
}

template <class F>
auto Container::mediated(F&& f) -> decltype(f()) {
  for (int attempt = 0;; ++attempt) {
    try {
      return f();
    } catch (const Error& e) {
      if (e.code() == "revoked" || attempt >= options_.mediator_retries) throw MediatorFailure{e.what()};
    } catch (const std::exception& e) {
      if (attempt >= options_.mediator_retries) throw MediatorFailure{e.what()};
    }
  }
}

void Container::start(Tick now) {
  if (started_) return;
  if (auto errors = validate(workflow_); !errors.empty())
    throw Error("invalid-workflow", errors.front().code + " at " + errors.front().where);
  started_ = true;
  state_.started = now;
  mediator_.record_input(state_.id, now, "start", Json::object());
  for (const auto& id : workflow_.entry) enqueue(id, now, {});
  run(now);
}

void Container::enqueue(const std::string& step, Tick ready_at, const std::vector<std::string>& alert_hosts) {
  const Step& s = workflow_.steps.at(step);
  if (s.kind == StepKind::kRunTask) ready_at += s.delay;
  queue_.push_back(Item{step, ready_at, next_order_++, alert_hosts});
  sync_pending();
}

void Container::enqueue_next(const Step& s, Tick ready_at, const std::vector<std::string>& alert_hosts) {
  for (const auto& n : s.next) enqueue(n, ready_at, alert_hosts);
}

void Container::sync_pending() {
  std::vector<const Item*> sorted;
  for (const auto& it : queue_) sorted.push_back(&it);
  std::sort(sorted.begin(), sorted.end(), [](const Item* a, const Item* b) {
    return std::tie(a->ready_at, a->order) < std::tie(b->ready_at, b->order);
  });
  state_.pending.clear();
  for (const auto* it : sorted) state_.pending.push_back(it->step);
}

void Container::fire_handler(const std::string& name, const std::vector<std::string>& hosts, Tick now) {
  if (state_.transitions_used >= workflow_.max_transitions) {
    finish(ContainerStatus::kTransitionLimit, now, "handler '" + name + "' fired past max_transitions");
    return;
  }
  ++state_.transitions_used;
  for (const auto& id : workflow_.handlers.at(name)) enqueue(id, now, hosts);
}

void Container::on_alert(const evidence::AlertNotification& n, Tick now) {
  if (terminal()) return;
  if (!workflow_.handlers.count(n.handler.handler))
    throw Error("unknown-handler", "workflow " + workflow_.id + " has no handler '" + n.handler.handler + "'");
  if (!delivered_.emplace(n.rule_id, n.max_seq()).second) return;
  mediator_.record_input(state_.id, now, "alert", n.to_json());
  std::set<std::string> hosts;
  for (const auto& e : n.matched) {
    hosts.insert(e.host);
    for (const auto& o : e.observables) add_finding(o, e.host, e.time, hypothesis::SightingSource::kPolicy);
  }
  fire_handler(n.handler.handler, {hosts.begin(), hosts.end()}, now);
  run(now);
}

bool Container::run(Tick now) {
  if (!started_ || terminal()) return false;
  bool changed = false;
  if (workflow_.deadline && !deadline_fired_ && now >= state_.started + *workflow_.deadline) {
    deadline_fired_ = true;
    changed = true;
    fire_handler(kDeadlineHandler, {}, now);
  }
  while (!terminal() && busy_until_ <= now) {
    auto next = std::min_element(queue_.begin(), queue_.end(), [](const Item& a, const Item& b) {
      return std::tie(a.ready_at, a.order) < std::tie(b.ready_at, b.order);
    });
    if (next == queue_.end() || next->ready_at > now) break;
    const Item item = *next;
    queue_.erase(next);
    sync_pending();
    changed = true;
    try {
      execute(item, now);
    } catch (const MediatorFailure& f) {
      finish(ContainerStatus::kFailed, now, "mediator failure: " + f.what);
    }
  }
  // Nothing left that could ever wake this container.
  if (!terminal() && queue_.empty() && busy_until_ <= now && state_.rules.empty() &&
      (!workflow_.deadline || deadline_fired_)) {
    finish(ContainerStatus::kFailed, now, "no verdict reachable");
    changed = true;
  }
  if (changed) mediator_.record_input(state_.id, now, "run", Json::object());
  return changed;
}

void Container::cancel(Tick now, const std::string& reason) {
  if (terminal()) return;
  mediator_.record_input(state_.id, now, "cancel", Json{{"reason", reason}});
  finish(ContainerStatus::kCancelled, now, reason);
}

bool Container::charge(Cost cost, Tick now) {
  if (state_.cost_charged + cost > workflow_.budget) {
    finish(ContainerStatus::kBudgetExhausted, now,
           "step needs " + std::to_string(cost) + " with " +
               std::to_string(workflow_.budget - state_.cost_charged) + " left");
    return false;
  }
  state_.cost_charged += cost;
  return true;
}

std::vector<std::string> Container::resolve(const Step& s, const std::vector<std::string>& alert_hosts) {
  switch (s.targets.kind) {
    case Selector::kAllHosts:
      return mediated([&] { return mediator_.hosts(state_.id); });
    case Selector::kExplicit:
      return s.targets.hosts;
    case Selector::kHostsFromAlert: {
      const int cap = s.targets.max_hosts > 0 ? s.targets.max_hosts : options_.fan_out_cap;
      auto& done = scanned_[s.id];
      std::vector<std::string> out;
      for (const auto& h : alert_hosts) {
        if (static_cast<int>(done.size() + out.size()) >= cap) break;
        if (!done.count(h)) out.push_back(h);
      }
      return out;
    }
  }
  return {};
}

void Container::add_finding(const Observable& o, const std::string& host, Tick tick,
                            hypothesis::SightingSource source) {
  if (!finding_keys_.emplace(o, host).second) return;
  state_.findings.push_back(hypothesis::Sighting{o, host, tick, source});
}

void Container::execute(const Item& item, Tick now) {
  const Step& s = workflow_.steps.at(item.step);
  switch (s.kind) {
    case StepKind::kDeployPolicy: {
      const auto hosts = resolve(s, item.alert_hosts);
      if (!hosts.empty()) {
        if (!charge(options_.costs.policy_deploy * static_cast<Cost>(hosts.size()), now)) return;
        mediated([&] { mediator_.deploy_policy(state_.id, hosts, s.policy); });
        for (const auto& m : s.policy.monitors)
          if (auto t = monitored_type(m.kind); t && !m.pattern.is_prefix())
            state_.searched.insert(Observable(*t, m.pattern.text));
      }
      state_.executed.push_back(s.id);
      enqueue_next(s, now, item.alert_hosts);
      break;
    }
    case StepKind::kRunTask: {
      const auto hosts = resolve(s, item.alert_hosts);
      Tick done = now;
      if (!hosts.empty()) {
        const Cost per_host = s.task.cost > 0 ? s.task.cost : options_.costs.task_cost(s.task.scan);
        const Cost cost = per_host * static_cast<Cost>(hosts.size());
        if (!charge(cost, now)) return;
        const auto events = mediated([&] { return mediator_.run_task(state_.id, hosts, s.task); });
        for (const auto& e : events)
          for (const auto& o : e.observables)
            if (s.task.targets.count(o)) add_finding(o, e.host, e.time, hypothesis::SightingSource::kTask);
        state_.searched.insert(s.task.targets.begin(), s.task.targets.end());
        scanned_[s.id].insert(hosts.begin(), hosts.end());
        done = now + options_.costs.task_duration(cost);
        busy_until_ = std::max(busy_until_, done);
      }
      state_.executed.push_back(s.id);
      enqueue_next(s, done, item.alert_hosts);
      break;
    }
    case StepKind::kDefineAlert: {
      if (!charge(options_.costs.alert_rule, now)) return;
      state_.rules.push_back(mediated([&] {
        return mediator_.register_alert(state_.id, s.query, s.interval, s.handler, s.include_history);
      }));
      state_.executed.push_back(s.id);
      enqueue_next(s, now, item.alert_hosts);
      break;
    }
    case StepKind::kVerdict: {
      ObservableSet evidence = state_.found();
      evidence.insert(workflow_.sighted.begin(), workflow_.sighted.end());
      const auto cov = hypothesis::weighted_coverage(workflow_.expect, evidence, options_.weights);
      VerdictNotice v;
      v.coverage = cov.fraction();
      v.claim = s.claim;
      if (v.claim == Claim::kAuto)
        v.claim = hypothesis::meets_confirmation(cov, options_.thresholds) ? Claim::kConfirm : Claim::kDemote;
      v.rationale = s.rationale.empty() ? "{claim}: weighted coverage {coverage} from {findings} findings"
                                        : s.rationale;
      replace_all(v.rationale, "{claim}", std::string(workflow::to_string(v.claim)));
      replace_all(v.rationale, "{coverage}", format_coverage(v.coverage));
      replace_all(v.rationale, "{findings}", std::to_string(state_.findings.size()));
      state_.executed.push_back(s.id);
      state_.verdict = v;
      mediated([&] { mediator_.notify_verdict(state_.id, v); });
      finish(v.claim == Claim::kConfirm ? ContainerStatus::kConfirmed : ContainerStatus::kDemoted, now);
      break;
    }
  }
}

void Container::finish(ContainerStatus status, Tick now, const std::string& reason) {
  if (terminal()) return;
  state_.status = status;
  state_.ended = now;
  state_.reason = reason;
  queue_.clear();
  sync_pending();
  try {
    mediator_.release(state_.id);
  } catch (const std::exception&) {
    // Already revoked.
  }
}

}  // namespace huntloop::workflow
