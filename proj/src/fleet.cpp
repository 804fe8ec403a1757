#include "huntloop/fleet.hpp"

#include <algorithm>
#include <array>
#include <cstdio>

#include "huntloop/error.hpp"

namespace huntloop::fleet {

namespace {

constexpr std::array<std::pair<ScanKind, std::string_view>, 5> kScanNames{{
    {ScanKind::kFileSearch, "file-search"},
    {ScanKind::kRegistryScan, "registry-scan"},
    {ScanKind::kProcessList, "process-list"},
    {ScanKind::kMutexScan, "mutex-scan"},
    {ScanKind::kNetlogScan, "netlog-scan"},
}};

constexpr std::array<std::pair<MonitorKind, std::string_view>, 4> kMonitorNames{{
    {MonitorKind::kFileOpen, "file-open"},
    {MonitorKind::kRegistryAccess, "registry-access"},
    {MonitorKind::kProcessStart, "process-start"},
    {MonitorKind::kDnsQuery, "dns-query"},
}};

constexpr std::array<std::pair<ActivityKind, std::string_view>, 8> kActivityNames{{
    {ActivityKind::kCreateFile, "create-file"},
    {ActivityKind::kTouchFile, "touch-file"},
    {ActivityKind::kSetRegistry, "set-registry"},
    {ActivityKind::kAccessRegistry, "access-registry"},
    {ActivityKind::kStartProcess, "start-process"},
    {ActivityKind::kAcquireMutex, "acquire-mutex"},
    {ActivityKind::kDnsQuery, "dns-query"},
    {ActivityKind::kConnectIp, "connect-ip"},
}};

template <class Table, class Key>
std::string_view name_of(const Table& table, Key key) {
  for (const auto& [k, name] : table)
    if (k == key) return name;
  return "unknown";
}

template <class Key, class Table>
std::optional<Key> key_of(const Table& table, std::string_view s) {
  for (const auto& [k, name] : table)
    if (name == s) return k;
  return std::nullopt;
}

bool target_type_ok(ScanKind scan, ObservableType t) {
  switch (scan) {
    case ScanKind::kFileSearch:
      return is_hash(t) || t == ObservableType::kFilePath;
    case ScanKind::kRegistryScan:
      return t == ObservableType::kRegistryKey;
    case ScanKind::kProcessList:
      return t == ObservableType::kProcessName;
    case ScanKind::kMutexScan:
      return t == ObservableType::kMutex;
    case ScanKind::kNetlogScan:
      return weight_class(t) == WeightClass::kNetwork;
  }
  return false;
}

std::optional<ObservableType> subject_type(MonitorKind k) {
  switch (k) {
    case MonitorKind::kFileOpen:
      return ObservableType::kFilePath;
    case MonitorKind::kRegistryAccess:
      return ObservableType::kRegistryKey;
    case MonitorKind::kProcessStart:
      return ObservableType::kProcessName;
    case MonitorKind::kDnsQuery:
      return ObservableType::kDomain;
  }
  return std::nullopt;
}

std::optional<MonitorKind> monitor_for(ActivityKind k) {
  switch (k) {
    case ActivityKind::kCreateFile:
    case ActivityKind::kTouchFile:
      return MonitorKind::kFileOpen;
    case ActivityKind::kSetRegistry:
    case ActivityKind::kAccessRegistry:
      return MonitorKind::kRegistryAccess;
    case ActivityKind::kStartProcess:
      return MonitorKind::kProcessStart;
    case ActivityKind::kDnsQuery:
      return MonitorKind::kDnsQuery;
    default:
      return std::nullopt;
  }
}

std::optional<ObservableType> expected_subject(ActivityKind k) {
  if (auto m = monitor_for(k)) return subject_type(*m);
  if (k == ActivityKind::kAcquireMutex) return ObservableType::kMutex;
  return std::nullopt;  // connect-ip: any network value
}

}  // namespace

std::string_view to_string(ScanKind k) { return name_of(kScanNames, k); }
std::optional<ScanKind> parse_scan_kind(std::string_view s) { return key_of<ScanKind>(kScanNames, s); }
std::string_view to_string(MonitorKind k) { return name_of(kMonitorNames, k); }
std::optional<MonitorKind> parse_monitor_kind(std::string_view s) {
  return key_of<MonitorKind>(kMonitorNames, s);
}
std::string_view to_string(ActivityKind k) { return name_of(kActivityNames, k); }
std::optional<ActivityKind> parse_activity_kind(std::string_view s) {
  return key_of<ActivityKind>(kActivityNames, s);
}

Channel default_channel(MonitorKind k) {
  switch (k) {
    case MonitorKind::kFileOpen:
      return Channel::kFile;
    case MonitorKind::kRegistryAccess:
      return Channel::kRegistry;
    case MonitorKind::kProcessStart:
      return Channel::kProcess;
    case MonitorKind::kDnsQuery:
      return Channel::kDns;
  }
  return Channel::kFile;
}

Cost CostModel::task_cost(ScanKind k) const {
  switch (k) {
    case ScanKind::kFileSearch:
      return file_search;
    case ScanKind::kRegistryScan:
      return registry_scan;
    case ScanKind::kProcessList:
      return process_list;
    case ScanKind::kMutexScan:
      return mutex_scan;
    case ScanKind::kNetlogScan:
      return netlog_scan;
  }
  return 0;
}

Tick CostModel::task_duration(Cost wave_cost) const {
  if (wave_cost <= 0) return 0;
  return (wave_cost + forensic_throughput - 1) / forensic_throughput;
}

void CostModel::validate() const {
  for (Cost c : {policy_deploy, alert_rule, file_search, registry_scan, process_list, mutex_scan,
                 netlog_scan, forensic_throughput})
    if (c <= 0) throw Error("invalid-config", "cost model values must be positive");
}

Json CostModel::to_json() const {
  return Json{{"policy_deploy", policy_deploy}, {"alert_rule", alert_rule},
              {"file_search", file_search},     {"registry_scan", registry_scan},
              {"process_list", process_list},   {"mutex_scan", mutex_scan},
              {"netlog_scan", netlog_scan},     {"forensic_throughput", forensic_throughput}};
}

CostModel CostModel::from_json(const Json& j) {
  CostModel m;
  if (j.is_null()) return m;
  m.policy_deploy = j.value("policy_deploy", m.policy_deploy);
  m.alert_rule = j.value("alert_rule", m.alert_rule);
  m.file_search = j.value("file_search", m.file_search);
  m.registry_scan = j.value("registry_scan", m.registry_scan);
  m.process_list = j.value("process_list", m.process_list);
  m.mutex_scan = j.value("mutex_scan", m.mutex_scan);
  m.netlog_scan = j.value("netlog_scan", m.netlog_scan);
  m.forensic_throughput = j.value("forensic_throughput", m.forensic_throughput);
  m.validate();
  return m;
}

bool Pattern::matches(std::string_view value) const {
  if (is_prefix()) {
    const std::string_view prefix(text.data(), text.size() - 1);
    return value.substr(0, prefix.size()) == prefix;
  }
  return value == text;
}

void PolicySpec::validate() const {
  if (monitors.empty()) throw Error("malformed-policy", "policy " + id + " has no monitors");
  for (const auto& m : monitors) {
    if (m.pattern.text.empty() || m.pattern.text == "*")
      throw Error("malformed-policy", "policy " + id + " has an empty pattern");
    // '*' is only legal as the final prefix marker.
    if (m.pattern.text.find('*') < m.pattern.text.size() - 1)
      throw Error("malformed-policy", "only literal or prefix patterns are supported");
  }
}

Json PolicySpec::to_json() const {
  Json mons = Json::array();
  for (const auto& m : monitors)
    mons.push_back({{"kind", std::string(to_string(m.kind))},
                    {"pattern", m.pattern.text},
                    {"channel", std::string(evidence::to_string(m.channel))}});
  return Json{{"id", id}, {"monitors", mons}};
}

PolicySpec PolicySpec::from_json(const Json& j) {
  if (!j.is_object() || !j.contains("monitors") || !j["monitors"].is_array())
    throw Error("malformed-policy", "policy needs a monitors array");
  PolicySpec p;
  p.id = j.value("id", "");
  for (const auto& m : j["monitors"]) {
    auto kind = parse_monitor_kind(m.value("kind", ""));
    if (!kind) throw Error("malformed-policy", "unknown monitor kind");
    Monitor mon{*kind, Pattern{m.value("pattern", "")}, default_channel(*kind)};
    if (m.contains("channel")) {
      auto ch = evidence::parse_channel(m.value("channel", ""));
      if (!ch) throw Error("malformed-policy", "unknown emit channel");
      mon.channel = *ch;
    }
    // Patterns compare against normalized values.
    if (!mon.pattern.text.empty() && mon.pattern.text != "*") {
      const bool prefix = mon.pattern.is_prefix();
      std::string body = prefix ? mon.pattern.text.substr(0, mon.pattern.text.size() - 1)
                                : mon.pattern.text;
      try {
        body = normalize_value(*subject_type(*kind), body);
      } catch (const Error&) {
        throw Error("malformed-policy", "empty pattern");
      }
      mon.pattern.text = prefix ? body + "*" : body;
    }
    p.monitors.push_back(std::move(mon));
  }
  p.validate();
  return p;
}

void TaskSpec::validate() const {
  if (targets.empty()) throw Error("malformed-task", "task " + id + " has no scan targets");
  for (const auto& t : targets)
    if (!target_type_ok(scan, t.type()))
      throw Error("malformed-task", "task " + id + ": " + std::string(to_string(t.type())) +
                                        " is not a valid " + std::string(to_string(scan)) +
                                        " target");
  if (cost < 0) throw Error("malformed-task", "task cost must be positive");
  if (from && to && *from > *to) throw Error("malformed-task", "netlog range from > to");
}

Json TaskSpec::to_json() const {
  Json j{{"id", id}, {"scan", std::string(to_string(scan))}, {"targets", observables_to_json(targets)}};
  if (from) j["from"] = *from;
  if (to) j["to"] = *to;
  if (cost) j["cost"] = cost;
  return j;
}

TaskSpec TaskSpec::from_json(const Json& j) {
  if (!j.is_object()) throw Error("malformed-task", "task must be an object");
  TaskSpec t;
  t.id = j.value("id", "");
  auto scan = parse_scan_kind(j.value("scan", ""));
  if (!scan) throw Error("malformed-task", "unknown scan kind");
  t.scan = *scan;
  try {
    t.targets = observables_from_json(j.value("targets", Json::array()));
  } catch (const Error& e) {
    throw Error("malformed-task", e.what());
  }
  if (j.contains("from")) t.from = j["from"].get<Tick>();
  if (j.contains("to")) t.to = j["to"].get<Tick>();
  t.cost = j.value("cost", Cost{0});
  t.validate();
  return t;
}

Json Activity::to_json() const {
  Json j{{"kind", std::string(to_string(kind))}, {"subject", subject}};
  if (hash) j["hash"] = *hash;
  if (!data.empty()) j["data"] = data;
  return j;
}

Activity Activity::from_json(const Json& j) {
  auto kind = parse_activity_kind(j.value("kind", ""));
  if (!kind) throw Error("invalid-activity", "unknown activity kind");
  Activity a;
  a.kind = *kind;
  a.subject = require(j, "subject", "activity").get<Observable>();
  if (j.contains("hash")) a.hash = j["hash"].get<Observable>();
  a.data = j.value("data", "");
  if (auto want = expected_subject(a.kind); want && a.subject.type() != *want)
    throw Error("invalid-activity", std::string(to_string(a.kind)) + " needs a " +
                                        std::string(huntloop::to_string(*want)) + " subject");
  if (a.kind == ActivityKind::kConnectIp && weight_class(a.subject.type()) != WeightClass::kNetwork)
    throw Error("invalid-activity", "connect-ip needs a network subject");
  return a;
}

Json HostState::to_json() const {
  Json files_j = Json::array();
  for (const auto& [path, f] : files) {
    Json e{{"path", path}, {"created", f.created}};
    if (f.hash) e["hash"] = *f.hash;
    files_j.push_back(std::move(e));
  }
  Json net = Json::array();
  for (const auto& n : netlog)
    net.push_back({{"tick", n.tick}, {"value", n.value}, {"direction", n.direction}});
  return Json{{"id", id},           {"files", files_j},     {"registry", registry},
              {"processes", processes}, {"mutexes", mutexes}, {"netlog", net},
              {"clock", clock}};
}

HostState HostState::from_json(const Json& j) {
  HostState h;
  h.id = require(j, "id", "host").get<std::string>();
  if (h.id.empty()) throw Error("malformed-document", "host id is empty");
  for (const auto& f : j.value("files", Json::array())) {
    FileEntry entry;
    if (f.contains("hash")) entry.hash = f["hash"].get<Observable>();
    entry.created = f.value("created", Tick{0});
    h.files[normalize_value(ObservableType::kFilePath, require(f, "path", "file").get<std::string>())] =
        entry;
  }
  const Json registry = j.value("registry", Json::object());
  for (const auto& [k, v] : registry.items())
    h.registry[normalize_value(ObservableType::kRegistryKey, k)] = v.is_string() ? v.get<std::string>() : v.dump();
  for (const auto& p : j.value("processes", Json::array()))
    h.processes.insert(normalize_value(ObservableType::kProcessName, p.get<std::string>()));
  for (const auto& m : j.value("mutexes", Json::array()))
    h.mutexes.insert(normalize_value(ObservableType::kMutex, m.get<std::string>()));
  for (const auto& n : j.value("netlog", Json::array()))
    h.netlog.push_back({n.value("tick", Tick{0}), require(n, "value", "netlog").get<Observable>(),
                        n.value("direction", "out")});
  std::stable_sort(h.netlog.begin(), h.netlog.end(),
                   [](const NetlogEntry& a, const NetlogEntry& b) { return a.tick < b.tick; });
  h.clock = j.value("clock", Tick{0});
  return h;
}

Fleet::Fleet(std::vector<HostState> hosts, CostModel costs) : costs_(costs) {
  costs_.validate();
  for (auto& h : hosts) {
    if (hosts_.count(h.id)) throw Error("malformed-document", "duplicate host id " + h.id);
    auto s = std::make_unique<Slot>();
    const std::string id = h.id;
    s->state = std::move(h);
    hosts_.emplace(id, std::move(s));
  }
}

std::unique_ptr<Fleet> Fleet::from_json(const Json& j, CostModel costs) {
  std::vector<HostState> hosts;
  const Json& list = require(j, "hosts", "fleet");
  if (!list.is_array()) throw Error("malformed-document", "fleet.hosts must be an array");
  for (const auto& h : list) hosts.push_back(HostState::from_json(h));
  return std::make_unique<Fleet>(std::move(hosts), costs);
}

std::unique_ptr<Fleet> Fleet::blank(int host_count, CostModel costs) {
  std::vector<HostState> hosts;
  for (int i = 1; i <= host_count; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "H%02d", i);
    hosts.push_back(HostState{buf, {}, {}, {}, {}, {}, 0});
  }
  return std::make_unique<Fleet>(std::move(hosts), costs);
}

void Fleet::set_sink(std::function<void(const Event&)> sink) { sink_ = std::move(sink); }

Fleet::Slot& Fleet::slot(const std::string& host) {
  auto it = hosts_.find(host);
  if (it == hosts_.end()) throw Error("unknown-host", "no host " + host);
  return *it->second;
}

const Fleet::Slot& Fleet::slot(const std::string& host) const {
  auto it = hosts_.find(host);
  if (it == hosts_.end()) throw Error("unknown-host", "no host " + host);
  return *it->second;
}

void Fleet::charge(Tick tick, const std::string& host, std::string op, Cost cost) {
  std::lock_guard lock(ledger_mu_);
  ledger_.push_back({tick, host, std::move(op), cost});
}

void Fleet::emit(const std::vector<Event>& events) {
  if (!sink_) return;
  for (const auto& e : events) sink_(e);
}

void Fleet::advance_to(Tick now) {
  Tick prev;
  {
    std::lock_guard lock(clock_mu_);
    if (now < now_) throw Error("tick-regression", "fleet clock went backwards");
    prev = now_;
    now_ = now;
  }
  for (auto& [id, s] : hosts_) {
    std::lock_guard lock(s->mu);
    s->state.clock = now;
  }
  if (sampling_period_ > 0)
    for (Tick t = (prev / sampling_period_ + 1) * sampling_period_; t <= now; t += sampling_period_)
      sample(t);
}

Tick Fleet::now() const {
  std::lock_guard lock(clock_mu_);
  return now_;
}

void Fleet::sample(Tick now) {
  // Load is the cost each host absorbed during the last period, which
  // includes the hunt's own commands.
  const auto load = cost_report(now - sampling_period_ + 1, now);
  std::vector<Event> out;
  for (const auto& [id, s] : hosts_) {
    std::size_t files;
    {
      std::lock_guard lock(s->mu);
      files = s->state.files.size();
    }
    const double l = static_cast<double>(load.at(id)) / static_cast<double>(sampling_period_);
    const std::pair<const char*, double> metrics[] = {
        {"cpu", 2.0 + l}, {"mem", 30.0 + 0.1 * static_cast<double>(files)}, {"io", 0.5 * l}};
    for (const auto& [metric, value] : metrics) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.3f", value);
      out.push_back(Event{0, id, now, Channel::kMeasurement, {}, {{"metric", metric}, {"value", buf}}});
    }
  }
  emit(out);
}

std::string Fleet::deploy_policy(const std::string& host, const PolicySpec& policy,
                                 const std::string& owner) {
  Slot& s = slot(host);
  policy.validate();
  std::string id;
  Tick tick;
  {
    std::lock_guard lock(ledger_mu_);
    id = "D" + std::to_string(next_deployment_++);
  }
  {
    std::lock_guard lock(s.mu);
    tick = s.state.clock;
    s.deployments.push_back({id, host, owner, policy, tick});
  }
  charge(tick, host, "deploy-policy", costs_.policy_deploy);
  return id;
}

int Fleet::revoke_owner(const std::string& owner) {
  int removed = 0;
  for (auto& [id, s] : hosts_) {
    std::lock_guard lock(s->mu);
    auto& d = s->deployments;
    const auto before = d.size();
    d.erase(std::remove_if(d.begin(), d.end(), [&](const Deployment& x) { return x.owner == owner; }),
            d.end());
    removed += static_cast<int>(before - d.size());
  }
  return removed;
}

std::vector<Event> Fleet::run_task(const std::string& host, const TaskSpec& task) {
  Slot& s = slot(host);
  task.validate();
  const Cost cost = task.cost > 0 ? task.cost : costs_.task_cost(task.scan);
  std::vector<Event> out;
  Tick tick;
  {
    std::lock_guard lock(s.mu);
    const HostState& st = s.state;
    tick = st.clock;
    auto result = [&](std::vector<Observable> found, std::map<std::string, std::string> extra) {
      extra["task"] = task.id;
      extra["scan"] = std::string(to_string(task.scan));
      out.push_back(Event{0, host, tick, Channel::kTaskResult, std::move(found), std::move(extra)});
    };
    switch (task.scan) {
      case ScanKind::kFileSearch:
        for (const auto& [path, f] : st.files) {
          std::vector<Observable> found;
          Observable as_path(ObservableType::kFilePath, path);
          if (task.targets.count(as_path)) found.push_back(as_path);
          if (f.hash && task.targets.count(*f.hash)) found.push_back(*f.hash);
          if (!found.empty()) result(std::move(found), {{"path", path}});
        }
        break;
      case ScanKind::kRegistryScan:
        for (const auto& t : task.targets)
          if (auto it = st.registry.find(t.value()); it != st.registry.end())
            result({t}, {{"data", it->second}});
        break;
      case ScanKind::kProcessList:
        for (const auto& t : task.targets)
          if (st.processes.count(t.value())) result({t}, {});
        break;
      case ScanKind::kMutexScan:
        for (const auto& t : task.targets)
          if (st.mutexes.count(t.value())) result({t}, {});
        break;
      case ScanKind::kNetlogScan:
        for (const auto& t : task.targets) {
          std::int64_t hits = 0;
          Tick first = 0;
          for (const auto& n : st.netlog) {
            if (n.value != t) continue;
            if (task.from && n.tick < *task.from) continue;
            if (task.to && n.tick > *task.to) continue;
            if (hits++ == 0) first = n.tick;
          }
          if (hits > 0)
            result({t}, {{"first_seen", std::to_string(first)}, {"hits", std::to_string(hits)}});
        }
        break;
    }
  }
  charge(tick, host, std::string(to_string(task.scan)), cost);
  emit(out);
  return out;
}

std::vector<Event> Fleet::simulate_activity(const std::string& host, const Activity& action) {
  Slot& s = slot(host);
  std::vector<Event> out;
  {
    std::lock_guard lock(s.mu);
    HostState& st = s.state;
    const std::string& v = action.subject.value();
    switch (action.kind) {
      case ActivityKind::kCreateFile:
        st.files[v] = FileEntry{action.hash, st.clock};
        break;
      case ActivityKind::kTouchFile:
        st.files.try_emplace(v, FileEntry{std::nullopt, st.clock});
        break;
      case ActivityKind::kSetRegistry:
        st.registry[v] = action.data;
        break;
      case ActivityKind::kAccessRegistry:
        break;
      case ActivityKind::kStartProcess:
        st.processes.insert(v);
        break;
      case ActivityKind::kAcquireMutex:
        st.mutexes.insert(v);
        break;
      case ActivityKind::kDnsQuery:
      case ActivityKind::kConnectIp:
        st.netlog.push_back({st.clock, action.subject, "out"});
        break;
    }
    if (const auto monitor = monitor_for(action.kind)) {
      for (const auto& d : s.deployments) {
        for (const auto& m : d.policy.monitors) {
          if (m.kind != *monitor || !m.pattern.matches(v)) continue;
          std::vector<Observable> obs{action.subject};
          if (action.kind == ActivityKind::kCreateFile && action.hash) obs.push_back(*action.hash);
          if (action.kind == ActivityKind::kTouchFile) {
            auto it = st.files.find(v);
            if (it != st.files.end() && it->second.hash) obs.push_back(*it->second.hash);
          }
          out.push_back(Event{0, host, st.clock, m.channel, std::move(obs),
                              {{"policy", d.policy.id},
                               {"deployment", d.id},
                               {"activity", std::string(to_string(action.kind))}}});
          break;  // one event per deployment
        }
      }
    }
  }
  emit(out);
  return out;
}

std::map<std::string, Cost> Fleet::cost_report(Tick from, Tick to) const {
  std::map<std::string, Cost> out;
  for (const auto& [id, s] : hosts_) out[id] = 0;
  std::lock_guard lock(ledger_mu_);
  for (const auto& e : ledger_)
    if (e.tick >= from && e.tick <= to) out[e.host] += e.cost;
  return out;
}

std::vector<LedgerEntry> Fleet::ledger() const {
  std::lock_guard lock(ledger_mu_);
  return ledger_;
}

Cost Fleet::total_cost() const {
  std::lock_guard lock(ledger_mu_);
  Cost total = 0;
  for (const auto& e : ledger_) total += e.cost;
  return total;
}

std::vector<std::string> Fleet::host_ids() const {
  std::vector<std::string> out;
  for (const auto& [id, s] : hosts_) out.push_back(id);
  return out;
}

HostState Fleet::host_state(const std::string& host) const {
  const Slot& s = slot(host);
  std::lock_guard lock(s.mu);
  return s.state;
}

std::vector<Deployment> Fleet::deployments() const {
  std::vector<Deployment> out;
  for (const auto& [id, s] : hosts_) {
    std::lock_guard lock(s->mu);
    out.insert(out.end(), s->deployments.begin(), s->deployments.end());
  }
  return out;
}

}  // namespace huntloop::fleet
