#pragma once

// Simulated endpoint fleet. Each host is a serial state machine holding
// synthetic artifacts; policies watch future activity, tasks inspect the
// state as it is now.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "huntloop/evidence_store.hpp"
#include "huntloop/json_io.hpp"
#include "huntloop/observable.hpp"

namespace huntloop::fleet {

using evidence::Channel;
using evidence::Event;
using evidence::Tick;
using Cost = std::int64_t;

enum class ScanKind { kFileSearch, kRegistryScan, kProcessList, kMutexScan, kNetlogScan };

std::string_view to_string(ScanKind k);
std::optional<ScanKind> parse_scan_kind(std::string_view s);

struct CostModel {
  Cost policy_deploy = 1;  // per host
  Cost alert_rule = 1;
  Cost file_search = 20;  // per host, likewise below
  Cost registry_scan = 10;
  Cost process_list = 5;
  Cost mutex_scan = 5;
  Cost netlog_scan = 10;
  // Fleet-wide forensic scan throughput in cost units per tick. A task
  // wave costing C completes ceil(C / throughput) ticks after it starts.
  Cost forensic_throughput = 10;

  Cost task_cost(ScanKind k) const;
  Tick task_duration(Cost wave_cost) const;
  void validate() const;  // throws Error("invalid-config")

  Json to_json() const;
  static CostModel from_json(const Json& j);  // missing fields keep defaults
};

enum class MonitorKind { kFileOpen, kRegistryAccess, kProcessStart, kDnsQuery };

std::string_view to_string(MonitorKind k);
std::optional<MonitorKind> parse_monitor_kind(std::string_view s);
Channel default_channel(MonitorKind k);

// Literal or prefix pattern over normalized values; "abc*" is a prefix.
struct Pattern {
  std::string text;

  bool is_prefix() const { return !text.empty() && text.back() == '*'; }
  bool matches(std::string_view value) const;
};

struct Monitor {
  MonitorKind kind = MonitorKind::kFileOpen;
  Pattern pattern;
  Channel channel = Channel::kFile;
};

struct PolicySpec {
  std::string id;
  std::vector<Monitor> monitors;

  void validate() const;  // throws Error("malformed-policy")
  Json to_json() const;
  static PolicySpec from_json(const Json& j);
};

struct TaskSpec {
  std::string id;
  ScanKind scan = ScanKind::kFileSearch;
  // Typed targets: hashes/paths, registry keys, process names, mutexes,
  // or network values for netlog scans.
  ObservableSet targets;
  std::optional<Tick> from;  // netlog-scan time range, inclusive
  std::optional<Tick> to;
  Cost cost = 0;  // 0 = price from the cost model

  void validate() const;  // throws Error("malformed-task")
  Json to_json() const;
  static TaskSpec from_json(const Json& j);
};

enum class ActivityKind {
  kCreateFile,
  kTouchFile,
  kSetRegistry,
  kAccessRegistry,
  kStartProcess,
  kAcquireMutex,
  kDnsQuery,
  kConnectIp,
};

std::string_view to_string(ActivityKind k);
std::optional<ActivityKind> parse_activity_kind(std::string_view s);

struct Activity {
  ActivityKind kind = ActivityKind::kTouchFile;
  Observable subject;  // path, key, process, mutex, domain or network value
  std::optional<Observable> hash;  // create-file content hash
  std::string data;  // set-registry value

  Json to_json() const;
  static Activity from_json(const Json& j);
};

struct FileEntry {
  std::optional<Observable> hash;
  Tick created = 0;
  bool operator==(const FileEntry&) const = default;
};

struct NetlogEntry {
  Tick tick = 0;
  Observable value;
  std::string direction = "out";
  bool operator==(const NetlogEntry&) const = default;
};

struct HostState {
  std::string id;
  std::map<std::string, FileEntry> files;  // normalized path -> entry
  std::map<std::string, std::string> registry;
  std::set<std::string> processes;
  std::set<std::string> mutexes;
  std::vector<NetlogEntry> netlog;  // time-ordered
  Tick clock = 0;

  bool operator==(const HostState&) const = default;
  Json to_json() const;
  static HostState from_json(const Json& j);
};

struct LedgerEntry {
  Tick tick = 0;
  std::string host;
  std::string op;
  Cost cost = 0;
};

struct Deployment {
  std::string id;
  std::string host;
  std::string owner;
  PolicySpec policy;
  Tick deployed_at = 0;
};

class Fleet {
 public:
  explicit Fleet(std::vector<HostState> hosts, CostModel costs = {});

  // Fleet definition file: {"hosts": [HostState...]}.
  static std::unique_ptr<Fleet> from_json(const Json& j, CostModel costs = {});
  // Hosts "H01".."Hnn" with empty state.
  static std::unique_ptr<Fleet> blank(int host_count, CostModel costs = {});

  Fleet(const Fleet&) = delete;
  Fleet& operator=(const Fleet&) = delete;

  // Every emitted event is also handed to the sink (normally the
  // evidence store's ingest).
  void set_sink(std::function<void(const Event&)> sink);
  // 0 disables measurements.
  void set_sampling_period(Tick period) { sampling_period_ = period; }

  void advance_to(Tick now);
  Tick now() const;

  // Throws unknown-host, malformed-policy.
  std::string deploy_policy(const std::string& host, const PolicySpec& policy,
                            const std::string& owner = "");
  // Removes deployments owned by `owner`; returns the count removed.
  int revoke_owner(const std::string& owner);

  // Throws unknown-host, malformed-task.
  std::vector<Event> run_task(const std::string& host, const TaskSpec& task);

  // Throws unknown-host.
  std::vector<Event> simulate_activity(const std::string& host, const Activity& action);

  // Inclusive window; every host appears, idle hosts with 0.
  std::map<std::string, Cost> cost_report(Tick from, Tick to) const;
  std::vector<LedgerEntry> ledger() const;
  Cost total_cost() const;

  bool has_host(const std::string& host) const { return hosts_.count(host) > 0; }
  std::vector<std::string> host_ids() const;
  std::size_t size() const { return hosts_.size(); }
  HostState host_state(const std::string& host) const;
  std::vector<Deployment> deployments() const;
  const CostModel& costs() const { return costs_; }

 private:
  struct Slot {
    mutable std::mutex mu;
    HostState state;
    std::vector<Deployment> deployments;
  };

  Slot& slot(const std::string& host);
  const Slot& slot(const std::string& host) const;
  void charge(Tick tick, const std::string& host, std::string op, Cost cost);
  void emit(const std::vector<Event>& events);
  void sample(Tick now);

  CostModel costs_;
  std::map<std::string, std::unique_ptr<Slot>> hosts_;
  Tick sampling_period_ = 0;

  mutable std::mutex clock_mu_;
  Tick now_ = 0;

  mutable std::mutex ledger_mu_;
  std::vector<LedgerEntry> ledger_;
  std::int64_t next_deployment_ = 1;

  std::function<void(const Event&)> sink_;
};

}  // namespace huntloop::fleet
