#include "huntloop/mediator.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <fstream>

#include "huntloop/error.hpp"

namespace huntloop::workflow {

std::string digest(const Json& j) {
  const std::string text = j.dump();
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(text.data(), text.size(), md, &len, EVP_sha256(), nullptr);
  std::string out;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    out += buf;
  }
  return out;
}

Json AuditEntry::log_line() const {
  return Json{{"seq", seq},           {"container", container},   {"tick", tick},
              {"direction", direction}, {"call", call},           {"args_digest", digest(args)},
              {"result_digest", digest(result)}};
}

Json AuditEntry::to_json() const {
  Json j = log_line();
  j["args"] = args;
  j["result"] = result;
  return j;
}

AuditEntry AuditEntry::from_json(const Json& j) {
  AuditEntry e;
  e.seq = j.value("seq", std::int64_t{0});
  e.container = require(j, "container", "audit entry").get<std::string>();
  e.tick = j.value("tick", Tick{0});
  e.direction = j.value("direction", "out");
  e.call = require(j, "call", "audit entry").get<std::string>();
  e.args = j.value("args", Json());
  e.result = j.value("result", Json());
  return e;
}

FleetMediator::FleetMediator(fleet::Fleet& fleet, evidence::EvidenceStore& store,
                             std::optional<std::string> audit_path)
    : fleet_(fleet), store_(store), audit_path_(std::move(audit_path)) {}

void FleetMediator::set_verdict_sink(VerdictSink sink) {
  std::lock_guard lock(mu_);
  verdict_sink_ = std::move(sink);
}

void FleetMediator::check(const std::string& container) const {
  std::lock_guard lock(mu_);
  if (revoked_.count(container)) throw Error("revoked", "container " + container + " has been released");
}

void FleetMediator::record(const std::string& container, std::string direction, std::string call, Json args,
                           Json result) {
  std::lock_guard lock(mu_);
  AuditEntry e{static_cast<std::int64_t>(audit_.size()) + 1, container, fleet_.now(), std::move(direction),
               std::move(call), std::move(args), std::move(result)};
  if (audit_path_) {
    std::ofstream out(*audit_path_, std::ios::app);
    out << e.log_line().dump() << '\n';
  }
  audit_.push_back(std::move(e));
}

std::vector<std::string> FleetMediator::hosts(const std::string& container) {
  check(container);
  auto ids = fleet_.host_ids();
  record(container, "out", "hosts", Json::object(), ids);
  return ids;
}

void FleetMediator::deploy_policy(const std::string& container, const std::vector<std::string>& hosts,
                                  const fleet::PolicySpec& policy) {
  check(container);
  Json ids = Json::array();
  for (const auto& h : hosts) ids.push_back(fleet_.deploy_policy(h, policy, container));
  record(container, "out", "deploy_policy", Json{{"hosts", hosts}, {"policy", policy.to_json()}}, ids);
}

std::vector<evidence::Event> FleetMediator::run_task(const std::string& container,
                                                     const std::vector<std::string>& hosts,
                                                     const fleet::TaskSpec& task) {
  check(container);
  std::vector<evidence::Event> out;
  for (const auto& h : hosts) {
    auto events = fleet_.run_task(h, task);
    out.insert(out.end(), events.begin(), events.end());
  }
  record(container, "out", "run_task", Json{{"hosts", hosts}, {"task", task.to_json()}}, out);
  return out;
}

std::string FleetMediator::register_alert(const std::string& container, const evidence::Query& query,
                                          Tick interval, const std::string& handler, bool include_history) {
  check(container);
  auto id = store_.register_alert(query, interval, {container, handler}, include_history);
  record(container, "out", "register_alert",
         Json{{"query", query.to_json()},
              {"interval", interval},
              {"handler", handler},
              {"include_history", include_history}},
         id);
  return id;
}

void FleetMediator::notify_verdict(const std::string& container, const VerdictNotice& verdict) {
  check(container);
  VerdictSink sink;
  {
    std::lock_guard lock(mu_);
    sink = verdict_sink_;
  }
  record(container, "out", "notify_verdict", verdict.to_json(), Json());
  if (sink) sink(container, verdict);
}

void FleetMediator::release(const std::string& container) {
  {
    std::lock_guard lock(mu_);
    if (!revoked_.insert(container).second) return;
  }
  const int policies = fleet_.revoke_owner(container);
  const int rules = store_.unregister_container(container);
  record(container, "out", "release", Json::object(), Json{{"policies", policies}, {"rules", rules}});
}

void FleetMediator::record_input(const std::string& container, Tick tick, const std::string& call,
                                 const Json& args) {
  std::lock_guard lock(mu_);
  AuditEntry e{static_cast<std::int64_t>(audit_.size()) + 1, container, tick, "in", call, args, Json()};
  if (audit_path_) {
    std::ofstream out(*audit_path_, std::ios::app);
    out << e.log_line().dump() << '\n';
  }
  audit_.push_back(std::move(e));
}

std::vector<AuditEntry> FleetMediator::audit(const std::optional<std::string>& container) const {
  std::lock_guard lock(mu_);
  if (!container) return audit_;
  std::vector<AuditEntry> out;
  for (const auto& e : audit_)
    if (e.container == *container) out.push_back(e);
  return out;
}

bool FleetMediator::revoked(const std::string& container) const {
  std::lock_guard lock(mu_);
  return revoked_.count(container) > 0;
}

ReplayMediator::ReplayMediator(const std::string& container, const std::vector<AuditEntry>& audit) {
  for (const auto& e : audit)
    if (e.container == container && e.direction == "out") outbound_.push_back(e);
}

Json ReplayMediator::expect(const std::string& call, const Json& args) {
  if (outbound_.empty()) throw Error("replay-divergence", "unexpected " + call + " past end of recording");
  AuditEntry e = outbound_.front();
  outbound_.pop_front();
  if (e.call != call || digest(e.args) != digest(args))
    throw Error("replay-divergence", "expected " + e.call + ", got " + call);
  return e.result;
}

std::vector<std::string> ReplayMediator::hosts(const std::string&) {
  return expect("hosts", Json::object()).get<std::vector<std::string>>();
}

void ReplayMediator::deploy_policy(const std::string&, const std::vector<std::string>& hosts,
                                   const fleet::PolicySpec& policy) {
  expect("deploy_policy", Json{{"hosts", hosts}, {"policy", policy.to_json()}});
}

std::vector<evidence::Event> ReplayMediator::run_task(const std::string&, const std::vector<std::string>& hosts,
                                                      const fleet::TaskSpec& task) {
  return expect("run_task", Json{{"hosts", hosts}, {"task", task.to_json()}}).get<std::vector<evidence::Event>>();
}

std::string ReplayMediator::register_alert(const std::string&, const evidence::Query& query, Tick interval,
                                           const std::string& handler, bool include_history) {
  return expect("register_alert", Json{{"query", query.to_json()},
                                       {"interval", interval},
                                       {"handler", handler},
                                       {"include_history", include_history}})
      .get<std::string>();
}

void ReplayMediator::notify_verdict(const std::string&, const VerdictNotice& verdict) {
  expect("notify_verdict", verdict.to_json());
}

void ReplayMediator::release(const std::string&) {
  if (!outbound_.empty() && outbound_.front().call == "release") outbound_.pop_front();
}

ContainerState replay_container(const std::string& container, const Workflow& w,
                                const std::vector<AuditEntry>& audit, ContainerOptions options) {
  ReplayMediator mediator(container, audit);
  Container c(container, w, mediator, std::move(options));
  for (const auto& e : audit) {
    if (e.container != container || e.direction != "in") continue;
    if (e.call == "start") {
      c.start(e.tick);
    } else if (e.call == "alert") {
      c.on_alert(evidence::AlertNotification::from_json(e.args), e.tick);
    } else if (e.call == "run") {
      c.run(e.tick);
    } else if (e.call == "cancel") {
      c.cancel(e.tick, e.args.value("reason", "cancelled"));
    }
  }
  return c.state();
}

}  // namespace huntloop::workflow
