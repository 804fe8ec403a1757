#include "huntloop/evidence_store.hpp"

#include <algorithm>
#include <array>
#include <fstream>

#include "huntloop/error.hpp"

namespace huntloop::evidence {

namespace {

constexpr std::array<std::pair<Channel, std::string_view>, 7> kChannelNames{{
    {Channel::kProcess, "process"},
    {Channel::kFile, "file"},
    {Channel::kRegistry, "registry"},
    {Channel::kNetwork, "network"},
    {Channel::kDns, "dns"},
    {Channel::kTaskResult, "task-result"},
    {Channel::kMeasurement, "measurement"},
}};

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

Channel require_channel(const Json& j) {
  if (!j.is_string()) throw Error("invalid-query", "channel must be a string");
  auto c = parse_channel(j.get<std::string>());
  if (!c) throw Error("invalid-query", "unknown channel " + j.get<std::string>());
  return *c;
}

std::string require_string(const Json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string())
    throw Error("invalid-query", std::string("predicate needs string field '") + key + "'");
  return j[key].get<std::string>();
}

}  // namespace

std::string_view to_string(Channel c) {
  for (const auto& [ch, name] : kChannelNames)
    if (ch == c) return name;
  return "unknown";
}

std::optional<Channel> parse_channel(std::string_view s) {
  for (const auto& [ch, name] : kChannelNames)
    if (name == s) return ch;
  return std::nullopt;
}

void to_json(Json& j, const Event& e) {
  j = Json{{"seq", e.seq},
           {"host", e.host},
           {"time", e.time},
           {"channel", std::string(to_string(e.channel))},
           {"observables", e.observables},
           {"attrs", e.attrs}};
}

void from_json(const Json& j, Event& e) {
  if (!j.is_object()) throw Error("invalid-event", "event must be an object");
  try {
    e.seq = j.value("seq", Seq{0});
    if (!j.contains("host") || !j["host"].is_string())
      throw Error("invalid-event", "event needs a host");
    e.host = j["host"].get<std::string>();
    if (!j.contains("time") || !j["time"].is_number_integer())
      throw Error("invalid-event", "event needs an integer time");
    e.time = j["time"].get<Tick>();
    auto ch = parse_channel(j.value("channel", ""));
    if (!ch) throw Error("invalid-event", "event has an unknown channel");
    e.channel = *ch;
    e.observables.clear();
    for (const auto& o : j.value("observables", Json::array())) e.observables.push_back(o.get<Observable>());
    e.attrs = j.value("attrs", std::map<std::string, std::string>{});
  } catch (const Json::exception& ex) {
    throw Error("invalid-event", ex.what());
  } catch (const Error& ex) {
    if (ex.code() == "invalid-event") throw;
    throw Error("invalid-event", ex.what());
  }
}

bool matches(const Predicate& p, const Event& e) {
  return std::visit(
      Overloaded{
          [&](const pred::Host& h) { return e.host == h.host; },
          [&](const pred::ChannelIs& c) { return e.channel == c.channel; },
          [&](const pred::TimeRange& r) { return e.time >= r.from && e.time <= r.to; },
          [&](const pred::Otype& t) {
            return std::any_of(e.observables.begin(), e.observables.end(),
                               [&](const Observable& o) { return o.type() == t.type; });
          },
          [&](const pred::Value& v) {
            return std::any_of(e.observables.begin(), e.observables.end(),
                               [&](const Observable& o) { return o.value() == v.value; });
          },
          [&](const pred::AttrEquals& a) {
            auto it = e.attrs.find(a.key);
            return it != e.attrs.end() && it->second == a.value;
          },
          [&](const pred::AttrPrefix& a) {
            auto it = e.attrs.find(a.key);
            return it != e.attrs.end() && it->second.compare(0, a.prefix.size(), a.prefix) == 0;
          },
          [&](const pred::ValueIn& v) {
            return std::any_of(e.observables.begin(), e.observables.end(),
                               [&](const Observable& o) { return v.values.count(o.value()) > 0; });
          },
      },
      p);
}

void Query::validate() const {
  if (conjuncts.empty()) throw Error("invalid-query", "query needs at least one conjunct");
  for (const auto& p : conjuncts) {
    std::visit(Overloaded{
                   [](const pred::Host& h) {
                     if (h.host.empty()) throw Error("invalid-query", "empty host predicate");
                   },
                   [](const pred::TimeRange& r) {
                     if (r.from > r.to) throw Error("invalid-query", "time range from > to");
                   },
                   [](const pred::Value& v) {
                     if (v.value.empty()) throw Error("invalid-query", "empty value predicate");
                   },
                   [](const pred::AttrEquals& a) {
                     if (a.key.empty()) throw Error("invalid-query", "empty attr key");
                   },
                   [](const pred::AttrPrefix& a) {
                     if (a.key.empty()) throw Error("invalid-query", "empty attr key");
                   },
                   [](const pred::ValueIn& v) {
                     if (v.values.empty()) throw Error("invalid-query", "empty value-in set");
                   },
                   [](const auto&) {},
               },
               p);
  }
}

bool Query::matches(const Event& e) const {
  return std::all_of(conjuncts.begin(), conjuncts.end(),
                     [&](const Predicate& p) { return evidence::matches(p, e); });
}

Json Query::to_json() const {
  Json out = Json::array();
  for (const auto& p : conjuncts) {
    out.push_back(std::visit(
        Overloaded{
            [](const pred::Host& h) { return Json{{"kind", "host"}, {"value", h.host}}; },
            [](const pred::ChannelIs& c) {
              return Json{{"kind", "channel"}, {"value", std::string(to_string(c.channel))}};
            },
            [](const pred::TimeRange& r) {
              return Json{{"kind", "time-range"}, {"from", r.from}, {"to", r.to}};
            },
            [](const pred::Otype& t) {
              return Json{{"kind", "otype"}, {"value", std::string(to_string(t.type))}};
            },
            [](const pred::Value& v) { return Json{{"kind", "value"}, {"value", v.value}}; },
            [](const pred::AttrEquals& a) {
              return Json{{"kind", "attr-equals"}, {"key", a.key}, {"value", a.value}};
            },
            [](const pred::AttrPrefix& a) {
              return Json{{"kind", "attr-prefix"}, {"key", a.key}, {"value", a.prefix}};
            },
            [](const pred::ValueIn& v) { return Json{{"kind", "value-in"}, {"values", v.values}}; },
        },
        p));
  }
  return Json{{"conjuncts", out}};
}

Query Query::from_json(const Json& j) {
  if (!j.is_object() || !j.contains("conjuncts") || !j["conjuncts"].is_array())
    throw Error("invalid-query", "query must be {\"conjuncts\": [...]}");
  Query q;
  for (const auto& c : j["conjuncts"]) {
    if (!c.is_object()) throw Error("invalid-query", "conjunct must be an object");
    const std::string kind = require_string(c, "kind");
    if (kind == "host") {
      q.conjuncts.emplace_back(pred::Host{require_string(c, "value")});
    } else if (kind == "channel") {
      q.conjuncts.emplace_back(pred::ChannelIs{require_channel(c.value("value", Json{}))});
    } else if (kind == "time-range") {
      if (!c.contains("from") || !c.contains("to") || !c["from"].is_number_integer() ||
          !c["to"].is_number_integer())
        throw Error("invalid-query", "time-range needs integer from/to");
      q.conjuncts.emplace_back(pred::TimeRange{c["from"].get<Tick>(), c["to"].get<Tick>()});
    } else if (kind == "otype") {
      auto t = parse_observable_type(require_string(c, "value"));
      if (!t) throw Error("invalid-query", "unknown otype");
      q.conjuncts.emplace_back(pred::Otype{*t});
    } else if (kind == "value") {
      q.conjuncts.emplace_back(pred::Value{require_string(c, "value")});
    } else if (kind == "attr-equals") {
      q.conjuncts.emplace_back(pred::AttrEquals{require_string(c, "key"), require_string(c, "value")});
    } else if (kind == "attr-prefix") {
      q.conjuncts.emplace_back(pred::AttrPrefix{require_string(c, "key"), require_string(c, "value")});
    } else if (kind == "value-in") {
      if (!c.contains("values") || !c["values"].is_array())
        throw Error("invalid-query", "value-in needs a values array");
      pred::ValueIn v;
      for (const auto& x : c["values"]) {
        if (!x.is_string()) throw Error("invalid-query", "value-in values must be strings");
        v.values.insert(x.get<std::string>());
      }
      q.conjuncts.emplace_back(std::move(v));
    } else {
      throw Error("invalid-query", "unknown predicate kind " + kind);
    }
  }
  q.validate();
  return q;
}

Query Query::observable_on(Channel channel, const Observable& o) {
  return Query{{pred::ChannelIs{channel}, pred::Otype{o.type()}, pred::Value{o.value()}}};
}

Json AlertNotification::to_json() const {
  return Json{{"rule_id", rule_id},
              {"container", handler.container},
              {"handler", handler.handler},
              {"fired_at", fired_at},
              {"matched", matched}};
}

AlertNotification AlertNotification::from_json(const Json& j) {
  AlertNotification n;
  n.rule_id = require(j, "rule_id", "notification").get<std::string>();
  n.handler = {require(j, "container", "notification").get<std::string>(),
               require(j, "handler", "notification").get<std::string>()};
  n.fired_at = j.value("fired_at", Tick{0});
  n.matched = j.value("matched", std::vector<Event>{});
  return n;
}

EvidenceStore::EvidenceStore(std::optional<std::string> log_path) : log_path_(std::move(log_path)) {
  if (!log_path_) return;
  std::ifstream in(*log_path_);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Json j = Json::parse(line, nullptr, false);
    // A torn final line from a crash is ignored.
    if (j.is_discarded()) break;
    append_locked(j.get<Event>());
  }
}

Seq EvidenceStore::append_locked(Event event) {
  event.seq = static_cast<Seq>(events_.size()) + 1;
  const Seq seq = event.seq;
  by_host_[event.host].push_back(seq);
  by_channel_[event.channel].push_back(seq);
  std::set<std::string> values;
  for (const auto& o : event.observables) values.insert(o.value());
  for (const auto& v : values) by_value_[v].push_back(seq);
  events_.push_back(std::move(event));
  return seq;
}

Seq EvidenceStore::ingest(Event event) {
  if (event.host.empty()) throw Error("invalid-event", "event missing host");
  if (event.time < 0) throw Error("invalid-event", "event time must be >= 0");
  std::unique_lock lock(events_mu_);
  const Seq seq = append_locked(std::move(event));
  if (log_path_) {
    std::ofstream out(*log_path_, std::ios::app);
    out << Json(events_.back()).dump() << '\n';
  }
  return seq;
}

std::vector<Seq> EvidenceStore::candidates_locked(const Query& q) const {
  const std::vector<Seq>* best = nullptr;
  std::vector<Seq> merged;
  bool have_merged = false;
  static const std::vector<Seq> kNone;
  auto consider = [&](const std::vector<Seq>* list) {
    if (!best || list->size() < best->size()) best = list;
  };
  for (const auto& p : q.conjuncts) {
    if (auto* h = std::get_if<pred::Host>(&p)) {
      auto it = by_host_.find(h->host);
      consider(it == by_host_.end() ? &kNone : &it->second);
    } else if (auto* c = std::get_if<pred::ChannelIs>(&p)) {
      auto it = by_channel_.find(c->channel);
      consider(it == by_channel_.end() ? &kNone : &it->second);
    } else if (auto* v = std::get_if<pred::Value>(&p)) {
      auto it = by_value_.find(v->value);
      consider(it == by_value_.end() ? &kNone : &it->second);
    } else if (auto* vi = std::get_if<pred::ValueIn>(&p); vi && !have_merged) {
      for (const auto& value : vi->values)
        if (auto it = by_value_.find(value); it != by_value_.end())
          merged.insert(merged.end(), it->second.begin(), it->second.end());
      std::sort(merged.begin(), merged.end());
      merged.erase(std::unique(merged.begin(), merged.end()), merged.end());
      have_merged = true;
      consider(&merged);
    }
  }
  if (best) return *best;
  std::vector<Seq> all(events_.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<Seq>(i) + 1;
  return all;
}

std::vector<Event> EvidenceStore::search(const Query& q) const {
  q.validate();
  std::shared_lock lock(events_mu_);
  std::vector<Event> out;
  for (Seq seq : candidates_locked(q)) {
    const Event& e = events_[static_cast<std::size_t>(seq - 1)];
    if (q.matches(e)) out.push_back(e);
  }
  return out;
}

std::string EvidenceStore::register_alert(const Query& q, Tick interval, HandlerAddress handler,
                                          bool include_history) {
  q.validate();
  if (interval < 1) throw Error("invalid-query", "alert interval must be >= 1");
  const Seq watermark = include_history ? 0 : max_seq();
  std::lock_guard lock(rules_mu_);
  AlertRule rule{"R" + std::to_string(next_rule_++), q, interval, std::move(handler), watermark, now_};
  const std::string id = rule.id;
  rules_.emplace(id, std::move(rule));
  return id;
}

bool EvidenceStore::unregister_alert(const std::string& rule_id) {
  std::lock_guard lock(rules_mu_);
  return rules_.erase(rule_id) > 0;
}

int EvidenceStore::unregister_container(const std::string& container) {
  std::lock_guard lock(rules_mu_);
  int removed = 0;
  for (auto it = rules_.begin(); it != rules_.end();) {
    if (it->second.handler.container == container) {
      it = rules_.erase(it);
      ++removed;
    } else {
      ++it;
    }
  }
  return removed;
}

void EvidenceStore::set_dispatcher(Dispatcher d) {
  std::lock_guard lock(dispatch_mu_);
  dispatcher_ = std::move(d);
}

void EvidenceStore::deliver(std::vector<AlertNotification> batch) {
  Dispatcher dispatcher;
  {
    std::lock_guard lock(dispatch_mu_);
    dispatcher = dispatcher_;
  }
  std::vector<AlertNotification> failed;
  for (auto& n : batch) {
    // Dispatch runs unlocked: handlers may register new rules.
    if (!dispatcher || !dispatcher(n)) failed.push_back(std::move(n));
  }
  std::lock_guard lock(dispatch_mu_);
  for (auto& n : failed) parked_.push_back(std::move(n));
}

std::vector<AlertNotification> EvidenceStore::tick(Tick now) {
  std::vector<AlertNotification> retry;
  {
    std::lock_guard lock(dispatch_mu_);
    retry.swap(parked_);
  }
  std::vector<AlertNotification> fired;
  {
    std::lock_guard rules_lock(rules_mu_);
    if (now < now_) throw Error("tick-regression", "tick went backwards");
    now_ = now;
    std::shared_lock events_lock(events_mu_);
    const Seq head = static_cast<Seq>(events_.size());
    for (auto& [id, rule] : rules_) {
      if (now - rule.last_eval < rule.interval) continue;
      rule.last_eval = now;
      AlertNotification n{id, rule.handler, {}, now};
      for (Seq seq = rule.watermark + 1; seq <= head; ++seq) {
        const Event& e = events_[static_cast<std::size_t>(seq - 1)];
        if (rule.query.matches(e)) n.matched.push_back(e);
      }
      rule.watermark = std::max(rule.watermark, head);
      if (!n.matched.empty()) fired.push_back(std::move(n));
    }
  }
  {
    std::lock_guard lock(dispatch_mu_);
    history_.insert(history_.end(), fired.begin(), fired.end());
  }
  deliver(std::move(retry));
  deliver(fired);
  return fired;
}

Seq EvidenceStore::max_seq() const {
  std::shared_lock lock(events_mu_);
  return static_cast<Seq>(events_.size());
}

Tick EvidenceStore::now() const {
  std::lock_guard lock(rules_mu_);
  return now_;
}

std::size_t EvidenceStore::size() const {
  std::shared_lock lock(events_mu_);
  return events_.size();
}

std::vector<Event> EvidenceStore::events() const {
  std::shared_lock lock(events_mu_);
  return events_;
}

std::optional<AlertRule> EvidenceStore::rule(const std::string& id) const {
  std::lock_guard lock(rules_mu_);
  auto it = rules_.find(id);
  if (it == rules_.end()) return std::nullopt;
  return it->second;
}

std::vector<AlertRule> EvidenceStore::rules() const {
  std::lock_guard lock(rules_mu_);
  std::vector<AlertRule> out;
  for (const auto& [id, r] : rules_) out.push_back(r);
  return out;
}

std::size_t EvidenceStore::parked() const {
  std::lock_guard lock(dispatch_mu_);
  return parked_.size();
}

std::vector<AlertNotification> EvidenceStore::history() const {
  std::lock_guard lock(dispatch_mu_);
  return history_;
}

}  // namespace huntloop::evidence
