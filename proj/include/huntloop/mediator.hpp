#pragma once

// Mediated API surface handed to workflow containers, with an audit log of
// every call, and a replay mediator that re-drives a container from it.

#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "huntloop/container.hpp"
#include "huntloop/evidence_store.hpp"
#include "huntloop/fleet.hpp"

namespace huntloop::workflow {

struct AuditEntry {
  std::int64_t seq = 0;
  std::string container;
  Tick tick = 0;
  std::string direction;  // "out" for mediator calls, "in" for inputs
  std::string call;
  Json args;
  Json result;

  // The JSON Lines form: container id, tick, call and digests.
  Json log_line() const;
  Json to_json() const;
  static AuditEntry from_json(const Json& j);
};

// Hex SHA-256 of the compact JSON dump.
std::string digest(const Json& j);

class FleetMediator final : public Mediator {
 public:
  using VerdictSink = std::function<void(const std::string& container, const VerdictNotice&)>;

  FleetMediator(fleet::Fleet& fleet, evidence::EvidenceStore& store,
                std::optional<std::string> audit_path = std::nullopt);

  void set_verdict_sink(VerdictSink sink);

  std::vector<std::string> hosts(const std::string& container) override;
  void deploy_policy(const std::string& container, const std::vector<std::string>& hosts,
                     const fleet::PolicySpec& policy) override;
  std::vector<evidence::Event> run_task(const std::string& container,
                                        const std::vector<std::string>& hosts,
                                        const fleet::TaskSpec& task) override;
  std::string register_alert(const std::string& container, const evidence::Query& query, Tick interval,
                             const std::string& handler, bool include_history) override;
  void notify_verdict(const std::string& container, const VerdictNotice& verdict) override;
  void release(const std::string& container) override;
  void record_input(const std::string& container, Tick tick, const std::string& call,
                    const Json& args) override;

  std::vector<AuditEntry> audit(const std::optional<std::string>& container = std::nullopt) const;
  bool revoked(const std::string& container) const;

 private:
  void check(const std::string& container) const;
  void record(const std::string& container, std::string direction, std::string call, Json args, Json result);

  fleet::Fleet& fleet_;
  evidence::EvidenceStore& store_;
  std::optional<std::string> audit_path_;
  VerdictSink verdict_sink_;

  mutable std::mutex mu_;
  std::vector<AuditEntry> audit_;
  std::set<std::string> revoked_;
};

// Serves a container's recorded outbound results in order. A call that
// does not match the recording throws Error("replay-divergence").
class ReplayMediator final : public Mediator {
 public:
  ReplayMediator(const std::string& container, const std::vector<AuditEntry>& audit);

  std::vector<std::string> hosts(const std::string& container) override;
  void deploy_policy(const std::string& container, const std::vector<std::string>& hosts,
                     const fleet::PolicySpec& policy) override;
  std::vector<evidence::Event> run_task(const std::string& container,
                                        const std::vector<std::string>& hosts,
                                        const fleet::TaskSpec& task) override;
  std::string register_alert(const std::string& container, const evidence::Query& query, Tick interval,
                             const std::string& handler, bool include_history) override;
  void notify_verdict(const std::string& container, const VerdictNotice& verdict) override;
  void release(const std::string& container) override;
  void record_input(const std::string&, Tick, const std::string&, const Json&) override {}

  bool exhausted() const { return outbound_.empty(); }

 private:
  Json expect(const std::string& call, const Json& args);

  std::deque<AuditEntry> outbound_;
};

// Rebuilds a container's terminal state from its audit trail.
ContainerState replay_container(const std::string& container, const Workflow& w,
                                const std::vector<AuditEntry>& audit, ContainerOptions options = {});

}  // namespace huntloop::workflow
