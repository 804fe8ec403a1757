#pragma once

// Mini-SIEM: event log, indexed conjunctive search, and scheduled alert
// rules evaluated on virtual (tick) time.

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <variant>
#include <vector>

#include "huntloop/json_io.hpp"
#include "huntloop/observable.hpp"

namespace huntloop::evidence {

using Tick = std::int64_t;
using Seq = std::int64_t;

enum class Channel { kProcess, kFile, kRegistry, kNetwork, kDns, kTaskResult, kMeasurement };

std::string_view to_string(Channel c);
std::optional<Channel> parse_channel(std::string_view s);

struct Event {
  Seq seq = 0;
  std::string host;
  Tick time = 0;
  Channel channel = Channel::kProcess;
  std::vector<Observable> observables;
  std::map<std::string, std::string> attrs;

  bool operator==(const Event&) const = default;
};

void to_json(Json& j, const Event& e);
void from_json(const Json& j, Event& e);

namespace pred {
struct Host { std::string host; };
struct ChannelIs { Channel channel; };
struct TimeRange { Tick from; Tick to; };  // inclusive
struct Otype { ObservableType type; };
struct Value { std::string value; };
struct AttrEquals { std::string key; std::string value; };
struct AttrPrefix { std::string key; std::string prefix; };
struct ValueIn { std::set<std::string> values; };
}  // namespace pred

using Predicate = std::variant<pred::Host, pred::ChannelIs, pred::TimeRange, pred::Otype,
                               pred::Value, pred::AttrEquals, pred::AttrPrefix, pred::ValueIn>;

bool matches(const Predicate& p, const Event& e);

struct Query {
  std::vector<Predicate> conjuncts;

  // Throws Error("invalid-query").
  void validate() const;
  bool matches(const Event& e) const;

  Json to_json() const;
  static Query from_json(const Json& j);  // throws invalid-query

  // Convenience for the common "this observable on this channel" lead.
  static Query observable_on(Channel channel, const Observable& o);
};

struct HandlerAddress {
  std::string container;
  std::string handler;

  auto operator<=>(const HandlerAddress&) const = default;
};

struct AlertRule {
  std::string id;
  Query query;
  Tick interval = 1;
  HandlerAddress handler;
  Seq watermark = 0;
  Tick last_eval = 0;
};

struct AlertNotification {
  std::string rule_id;
  HandlerAddress handler;
  std::vector<Event> matched;
  Tick fired_at = 0;

  Seq max_seq() const { return matched.empty() ? 0 : matched.back().seq; }
  Json to_json() const;
  static AlertNotification from_json(const Json& j);
};

// Returns false when the handler cannot take the notification right now;
// the store parks it and retries on the next tick.
using Dispatcher = std::function<bool(const AlertNotification&)>;

class EvidenceStore {
 public:
  // With a log path, existing events are replayed from the file and new
  // events are appended to it (JSON Lines).
  explicit EvidenceStore(std::optional<std::string> log_path = std::nullopt);

  EvidenceStore(const EvidenceStore&) = delete;
  EvidenceStore& operator=(const EvidenceStore&) = delete;

  // Assigns and returns the next seq. Throws Error("invalid-event").
  Seq ingest(Event event);

  // Events satisfying every conjunct, ordered by seq.
  std::vector<Event> search(const Query& q) const;

  // Throws Error("invalid-query") on a bad query or interval < 1.
  std::string register_alert(const Query& q, Tick interval, HandlerAddress handler,
                             bool include_history = false);
  bool unregister_alert(const std::string& rule_id);
  // Drops every rule bound to `container`; returns how many were removed.
  int unregister_container(const std::string& container);

  // Evaluates due rules, dispatches, and returns the notifications created
  // at this tick. Parked notifications are retried first.
  // Throws Error("tick-regression") when now < previous now.
  std::vector<AlertNotification> tick(Tick now);

  void set_dispatcher(Dispatcher d);

  Seq max_seq() const;
  Tick now() const;
  std::size_t size() const;
  std::vector<Event> events() const;
  std::optional<AlertRule> rule(const std::string& id) const;
  std::vector<AlertRule> rules() const;
  std::size_t parked() const;
  std::vector<AlertNotification> history() const;

 private:
  Seq append_locked(Event event);
  std::vector<Seq> candidates_locked(const Query& q) const;
  void deliver(std::vector<AlertNotification> batch);

  std::optional<std::string> log_path_;

  mutable std::shared_mutex events_mu_;
  std::vector<Event> events_;  // events_[seq - 1]
  std::map<std::string, std::vector<Seq>> by_host_;
  std::map<Channel, std::vector<Seq>> by_channel_;
  std::map<std::string, std::vector<Seq>> by_value_;

  mutable std::mutex rules_mu_;
  std::map<std::string, AlertRule> rules_;
  std::int64_t next_rule_ = 1;
  Tick now_ = 0;

  mutable std::mutex dispatch_mu_;
  Dispatcher dispatcher_;
  std::vector<AlertNotification> parked_;
  std::vector<AlertNotification> history_;
};

}  // namespace huntloop::evidence
