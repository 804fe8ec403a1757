#pragma once

// Independent reference implementations shared by the module tests and the
// acceptance suite. None of them touch the indexes or matchers they check.

#include <algorithm>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include "huntloop/evidence_store.hpp"
#include "huntloop/json_io.hpp"

namespace huntloop::testing {

// Jaccard over string vectors, computed by brute-force membership.
inline double brute_jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  auto has = [](const std::vector<std::string>& v, const std::string& x) {
    return std::find(v.begin(), v.end(), x) != v.end();
  };
  std::vector<std::string> uni;
  int inter = 0;
  for (const auto& x : a) {
    if (has(uni, x)) continue;
    uni.push_back(x);
    if (has(b, x)) ++inter;
  }
  for (const auto& x : b)
    if (!has(uni, x)) uni.push_back(x);
  if (uni.empty()) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni.size());
}

// Template-path enumeration over the raw bundle document:
// observable -> observed-data -part-of-> malware -uses-> technique.
inline std::int64_t brute_force_affinity(const Json& bundle, const Observable& obs, const std::string& technique) {
  std::map<std::string, std::string> kind;
  std::map<std::string, std::vector<Observable>> contains;
  std::vector<std::tuple<std::string, std::string, std::string>> edges;
  for (const auto& o : bundle["objects"]) {
    if (o["type"] == "relationship") {
      edges.emplace_back(o["relationship_type"], o["source_ref"], o["target_ref"]);
      continue;
    }
    kind[o["id"]] = o["type"];
    if (o["type"] == "observed-data")
      for (const auto& x : o["observables"]) contains[o["id"]].push_back(x.get<Observable>());
  }
  std::set<std::tuple<std::string, std::string, std::string>> unique(edges.begin(), edges.end());
  std::int64_t paths = 0;
  std::function<void(const std::string&, int)> dfs = [&](const std::string& node, int depth) {
    if (depth == 2) {
      for (const auto& [k, s, t] : unique)
        if (k == "uses" && s == node && t == technique) ++paths;
      return;
    }
    for (const auto& [k, s, t] : unique)
      if (k == "part-of" && s == node && kind[t] == "malware") dfs(t, depth + 1);
  };
  for (const auto& [od, list] : contains) {
    std::set<Observable> distinct(list.begin(), list.end());
    if (distinct.count(obs)) dfs(od, 1);
  }
  return paths;
}

// Naive event filter. Deliberately avoids Query::matches.
inline bool oracle_match(const evidence::Query& q, const evidence::Event& e) {
  namespace pred = evidence::pred;
  for (const auto& p : q.conjuncts) {
    bool ok = false;
    if (auto* h = std::get_if<pred::Host>(&p)) {
      ok = e.host == h->host;
    } else if (auto* c = std::get_if<pred::ChannelIs>(&p)) {
      ok = e.channel == c->channel;
    } else if (auto* tr = std::get_if<pred::TimeRange>(&p)) {
      ok = tr->from <= e.time && e.time <= tr->to;
    } else if (auto* ot = std::get_if<pred::Otype>(&p)) {
      for (const auto& o : e.observables) ok = ok || o.type() == ot->type;
    } else if (auto* v = std::get_if<pred::Value>(&p)) {
      for (const auto& o : e.observables) ok = ok || o.value() == v->value;
    } else if (auto* a = std::get_if<pred::AttrEquals>(&p)) {
      ok = e.attrs.count(a->key) && e.attrs.at(a->key) == a->value;
    } else if (auto* a = std::get_if<pred::AttrPrefix>(&p)) {
      ok = e.attrs.count(a->key) && e.attrs.at(a->key).rfind(a->prefix, 0) == 0;
    } else if (auto* vi = std::get_if<pred::ValueIn>(&p)) {
      for (const auto& o : e.observables) ok = ok || vi->values.count(o.value());
    }
    if (!ok) return false;
  }
  return true;
}

// Random events and queries over a small value pool so queries hit.
struct EventCorpus {
  std::mt19937_64 rng;
  explicit EventCorpus(std::uint64_t seed) : rng(seed) {}

  std::string host() { return "H" + std::to_string(rng() % 6); }
  evidence::Channel channel() { return static_cast<evidence::Channel>(rng() % 7); }
  std::string value() { return "v" + std::to_string(rng() % 30); }

  evidence::Event event() {
    evidence::Event e;
    e.host = host();
    e.channel = channel();
    e.time = static_cast<evidence::Tick>(rng() % 100);
    const int k = static_cast<int>(rng() % 3);
    for (int i = 0; i < k; ++i)
      e.observables.emplace_back(rng() % 2 ? ObservableType::kDomain : ObservableType::kMutex, value());
    if (rng() % 2) e.attrs["op"] = rng() % 2 ? "write" : "read";
    if (rng() % 3 == 0) e.attrs["path"] = "c:/dir" + std::to_string(rng() % 4) + "/f";
    return e;
  }

  evidence::Query query() {
    namespace pred = evidence::pred;
    evidence::Query q;
    const int k = 1 + static_cast<int>(rng() % 3);
    for (int i = 0; i < k; ++i) {
      switch (rng() % 8) {
        case 0: q.conjuncts.emplace_back(pred::Host{host()}); break;
        case 1: q.conjuncts.emplace_back(pred::ChannelIs{channel()}); break;
        case 2: {
          auto a = static_cast<evidence::Tick>(rng() % 100), b = static_cast<evidence::Tick>(rng() % 100);
          q.conjuncts.emplace_back(pred::TimeRange{std::min(a, b), std::max(a, b)});
          break;
        }
        case 3:
          q.conjuncts.emplace_back(pred::Otype{rng() % 2 ? ObservableType::kDomain : ObservableType::kMutex});
          break;
        case 4: q.conjuncts.emplace_back(pred::Value{value()}); break;
        case 5: q.conjuncts.emplace_back(pred::AttrEquals{"op", "write"}); break;
        case 6: q.conjuncts.emplace_back(pred::AttrPrefix{"path", "c:/dir" + std::to_string(rng() % 4)}); break;
        default: q.conjuncts.emplace_back(pred::ValueIn{{value(), value(), value()}}); break;
      }
    }
    return q;
  }
};

}  // namespace huntloop::testing
