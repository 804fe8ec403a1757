#include "huntloop/scenario.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "huntloop/error.hpp"
#include "huntloop/json_io.hpp"

namespace huntloop::scenario {

using fleet::Activity;
using fleet::ActivityKind;

namespace {

[[noreturn]] void bad_script(const std::string& msg) { throw Error("invalid-script", msg); }

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent generator per purpose so adding noise does not shift
// mutation draws.
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t id) { return std::mt19937_64(splitmix(seed ^ splitmix(id))); }

std::string hex(std::mt19937_64& rng, int words) {
  std::string out;
  char buf[17];
  for (int i = 0; i < words; ++i) {
    std::snprintf(buf, sizeof buf, "%016" PRIx64, static_cast<std::uint64_t>(rng()));
    out += buf;
  }
  return out;
}

std::optional<Activity> install_for(const Observable& o, const std::string& malware) {
  switch (o.type()) {
    case ObservableType::kFileHashSha256:
    case ObservableType::kFileHashMd5:
      return Activity{ActivityKind::kCreateFile,
                      Observable(ObservableType::kFilePath,
                                 "c:/programdata/" + malware + "/" + std::string(to_string(o.type())) + "/" +
                                     o.value().substr(0, 16) + ".bin"),
                      o, ""};
    case ObservableType::kFilePath:
      return Activity{ActivityKind::kCreateFile, o, std::nullopt, ""};
    case ObservableType::kRegistryKey:
      return Activity{ActivityKind::kSetRegistry, o, std::nullopt, "1"};
    case ObservableType::kMutex:
      return Activity{ActivityKind::kAcquireMutex, o, std::nullopt, ""};
    case ObservableType::kProcessName:
      return Activity{ActivityKind::kStartProcess, o, std::nullopt, ""};
    case ObservableType::kDomain:
      return Activity{ActivityKind::kDnsQuery, o, std::nullopt, ""};
    case ObservableType::kIp:
    case ObservableType::kUrl:
      return Activity{ActivityKind::kConnectIp, o, std::nullopt, ""};
    case ObservableType::kEmail:
      return std::nullopt;
  }
  return std::nullopt;
}

std::optional<Activity> beacon_for(const Observable& o) {
  switch (o.type()) {
    case ObservableType::kFilePath:
      return Activity{ActivityKind::kTouchFile, o, std::nullopt, ""};
    case ObservableType::kRegistryKey:
      return Activity{ActivityKind::kAccessRegistry, o, std::nullopt, ""};
    case ObservableType::kProcessName:
      return Activity{ActivityKind::kStartProcess, o, std::nullopt, ""};
    case ObservableType::kDomain:
      return Activity{ActivityKind::kDnsQuery, o, std::nullopt, ""};
    case ObservableType::kIp:
    case ObservableType::kUrl:
      return Activity{ActivityKind::kConnectIp, o, std::nullopt, ""};
    default:
      return std::nullopt;
  }
}

Json optional_json(const std::optional<Tick>& v) { return v ? Json(*v) : Json(nullptr); }
Json optional_json(const std::optional<int>& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace

double MutationTable::rate(ObservableType t) const {
  if (auto it = rates.find(std::string(to_string(t))); it != rates.end()) return it->second;
  if (auto it = rates.find(std::string(to_string(weight_class(t)))); it != rates.end()) return it->second;
  return 0.0;
}

void MutationTable::validate() const {
  for (const auto& [key, p] : rates) {
    if (!parse_observable_type(key) && !parse_weight_class(key)) bad_script("unknown mutation key " + key);
    if (!(p >= 0.0 && p <= 1.0)) bad_script("mutation rate for " + key + " outside [0,1]");
  }
}

MutationTable MutationTable::from_json(const Json& j) {
  if (!j.is_object()) bad_script("mutation must be an object");
  MutationTable m;
  for (const auto& [key, v] : j.items()) {
    if (!v.is_number()) bad_script("mutation rate for " + key + " must be a number");
    m.rates[key] = v.get<double>();
  }
  m.validate();
  return m;
}

MutationTable MutationTable::uniform(double p) {
  MutationTable m;
  for (const auto t : kAllObservableTypes) m.rates[std::string(to_string(t))] = p;
  return m;
}

MalwareProfile MalwareProfile::from_graph(const attackdb::AttackGraph& g, const std::string& malware,
                                          MutationTable mutation) {
  const auto* node = g.find(malware);
  if (!node || node->kind != attackdb::SdoKind::kMalware) throw Error("unknown-profile", "no malware " + malware);
  return MalwareProfile{malware, attackdb::observables_of(g, malware), std::move(mutation)};
}

Json PlantAction::to_json() const {
  Json j{{"original", original}, {"planted", planted}, {"mutated", original != planted}, {"install", install.to_json()}};
  if (beacon) j["beacon"] = beacon->to_json();
  return j;
}

Observable fresh_value(ObservableType t, std::mt19937_64& rng, const attackdb::AttackGraph& g,
                       const std::string& tag) {
  const auto& index = g.observable_index();
  for (;;) {
    std::string v;
    switch (t) {
      case ObservableType::kFileHashSha256:
        v = hex(rng, 4);
        break;
      case ObservableType::kFileHashMd5:
        v = hex(rng, 2);
        break;
      case ObservableType::kIp: {
        const auto x = rng();
        v = "10." + std::to_string((x >> 16) & 0xff) + "." + std::to_string((x >> 8) & 0xff) + "." +
            std::to_string(x & 0xff);
        break;
      }
      case ObservableType::kDomain:
        v = hex(rng, 1) + "." + tag + ".example";
        break;
      case ObservableType::kUrl:
        v = "http://" + hex(rng, 1) + "." + tag + ".example/p";
        break;
      case ObservableType::kFilePath:
        v = "c:/users/public/" + tag + "/" + hex(rng, 1) + ".bin";
        break;
      case ObservableType::kProcessName:
        v = tag + "-" + hex(rng, 1) + ".exe";
        break;
      case ObservableType::kRegistryKey:
        v = "hkcu/software/" + tag + "/" + hex(rng, 1);
        break;
      case ObservableType::kMutex:
        v = tag + "-mtx-" + hex(rng, 1);
        break;
      case ObservableType::kEmail:
        v = hex(rng, 1) + "@" + tag + ".example";
        break;
    }
    Observable o(t, v);
    if (!index.count(o)) return o;
  }
}

std::vector<PlantAction> mutate(const MalwareProfile& profile, const attackdb::AttackGraph& g,
                                std::uint64_t seed) {
  profile.mutation.validate();
  std::mt19937_64 rng(seed);
  std::mt19937_64 values(splitmix(seed));
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<PlantAction> out;
  for (const auto& o : profile.observables) {
    // One draw per observable, plantable or not, and fresh values come from
    // their own generator: a rate change never shifts other draws.
    const double draw = coin(rng);
    Observable planted = o;
    if (draw < profile.mutation.rate(o.type())) planted = fresh_value(o.type(), values, g, "mut");
    auto install = install_for(planted, profile.malware);
    if (!install) continue;
    out.push_back(PlantAction{o, planted, *install, beacon_for(planted)});
  }
  return out;
}

Json TimelineEntry::to_json() const {
  Json j{{"tick", tick}};
  switch (kind) {
    case Kind::kPlant:
      j["host"] = host;
      j["plant"] = malware;
      if (mutation) j["mutation"] = mutation->to_json();
      break;
    case Kind::kBenign:
      j["host"] = host;
      j["benign"] = benign->to_json();
      break;
    case Kind::kTrigger:
      if (trigger) {
        j["trigger"] = Json{{"sightings", trigger->sightings}};
      } else {
        j["trigger"] = Json{{"malware", malware}, {"observable", *observable}};
      }
      break;
  }
  return j;
}

TimelineEntry TimelineEntry::from_json(const Json& j) {
  if (!j.is_object()) bad_script("timeline entry must be an object");
  TimelineEntry e;
  try {
    e.tick = j.at("tick").get<Tick>();
    if (e.tick < 0) bad_script("negative timeline tick");
    const int forms = static_cast<int>(j.contains("plant")) + static_cast<int>(j.contains("benign")) +
                      static_cast<int>(j.contains("trigger"));
    if (forms != 1) bad_script("timeline entry needs exactly one of plant, benign, trigger");
    if (j.contains("plant")) {
      e.kind = Kind::kPlant;
      e.malware = j["plant"].get<std::string>();
      e.host = j.value("host", "*");
      if (j.contains("mutation")) e.mutation = MutationTable::from_json(j["mutation"]);
    } else if (j.contains("benign")) {
      e.kind = Kind::kBenign;
      e.host = j.value("host", "*");
      e.benign = Activity::from_json(j["benign"]);
    } else {
      e.kind = Kind::kTrigger;
      const Json& t = j["trigger"];
      if (t.contains("malware")) {
        e.malware = t["malware"].get<std::string>();
        e.observable = t.at("observable").get<Observable>();
      } else {
        e.trigger = cnc::Trigger::from_json(t);
      }
    }
  } catch (const Json::exception& ex) {
    bad_script(std::string("timeline entry: ") + ex.what());
  } catch (const Error& ex) {
    if (ex.code() == "invalid-script") throw;
    bad_script("timeline entry: " + std::string(ex.what()));
  }
  return e;
}

void ScenarioScript::validate() const {
  mutation.validate();
  if (!fleet && hosts < 1) bad_script("scenario needs at least one host");
  if (noise_rate < 0.0) bad_script("noise rate must be non-negative");
  if (beacon_period < 1) bad_script("beacon period must be positive");
  if (max_ticks < 1) bad_script("max_ticks must be positive");
  if (!config.is_object()) bad_script("config overlay must be an object");
  for (std::size_t i = 1; i < timeline.size(); ++i)
    if (timeline[i].tick < timeline[i - 1].tick) bad_script("timeline is not tick-ordered");
  for (const auto& e : timeline) {
    if (e.tick > max_ticks) bad_script("timeline entry past max_ticks");
    if (e.mutation) e.mutation->validate();
  }
}

Json ScenarioScript::to_json() const {
  Json j{{"name", name},
         {"seed", seed},
         {"mutation", mutation.to_json()},
         {"noise", {{"rate", noise_rate}}},
         {"beacon_period", beacon_period},
         {"max_ticks", max_ticks},
         {"ground_truth", ground_truth},
         {"config", config}};
  if (fleet) {
    j["fleet"] = *fleet;
  } else {
    j["hosts"] = hosts;
  }
  Json tl = Json::array();
  for (const auto& e : timeline) tl.push_back(e.to_json());
  j["timeline"] = tl;
  return j;
}

ScenarioScript ScenarioScript::from_json(const Json& j, const std::string& base_dir) {
  if (!j.is_object()) bad_script("scenario must be a JSON object");
  ScenarioScript s;
  try {
    s.name = j.value("name", "");
    s.seed = j.value("seed", std::uint64_t{0});
    s.hosts = j.value("hosts", s.hosts);
    if (j.contains("fleet")) {
      std::filesystem::path p = j["fleet"].get<std::string>();
      if (p.is_relative() && !base_dir.empty()) p = std::filesystem::path(base_dir) / p;
      s.fleet = p.string();
    }
    if (j.contains("mutation")) s.mutation = MutationTable::from_json(j["mutation"]);
    if (j.contains("noise")) s.noise_rate = j["noise"].value("rate", 0.0);
    s.beacon_period = j.value("beacon_period", s.beacon_period);
    s.max_ticks = j.value("max_ticks", s.max_ticks);
    for (const auto& e : j.value("timeline", Json::array())) s.timeline.push_back(TimelineEntry::from_json(e));
    if (j.contains("ground_truth")) s.ground_truth = j["ground_truth"].get<std::set<std::string>>();
    if (j.contains("config")) s.config = j["config"];
  } catch (const Json::exception& e) {
    bad_script(e.what());
  }
  s.validate();
  return s;
}

ScenarioScript ScenarioScript::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) bad_script("cannot read " + path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    bad_script(path + ": " + e.what());
  }
  return from_json(j, std::filesystem::path(path).parent_path().string());
}

Scores score(const std::set<std::string>& confirmed, const std::set<std::string>& planted) {
  std::size_t hit = 0;
  for (const auto& m : confirmed) hit += planted.count(m);
  Scores s;
  if (confirmed.empty()) {
    s.no_confirmations = true;
  } else {
    s.precision = static_cast<double>(hit) / static_cast<double>(confirmed.size());
  }
  s.recall = planted.empty() ? 1.0 : static_cast<double>(hit) / static_cast<double>(planted.size());
  return s;
}

Json EvalReport::to_json() const {
  Json ttc = Json::object();
  for (const auto& [m, t] : time_to_confirm) ttc[m] = optional_json(t);
  Json traj = Json::object();
  for (const auto& [m, points] : rank_trajectory) {
    Json list = Json::array();
    for (const auto& p : points) list.push_back({{"tick", p.tick}, {"rank", optional_json(p.rank)}});
    traj[m] = list;
  }
  Json fr = Json::object();
  for (const auto& [m, r] : final_rank) fr[m] = optional_json(r);
  Json hunt_list = Json::array();
  for (const auto& h : hunts) hunt_list.push_back(h.to_json());
  return Json{{"scenario", scenario},
              {"seed", seed},
              {"ticks", ticks},
              {"quiescent", quiescent},
              {"ground_truth", ground_truth},
              {"confirmed", confirmed},
              {"precision", scores.precision},
              {"recall", scores.recall},
              {"no_confirmations", scores.no_confirmations},
              {"time_to_confirm", ttc},
              {"rank_trajectory", traj},
              {"final_rank", fr},
              {"final_statuses", final_statuses},
              {"hunts", hunt_list},
              {"plants", plants},
              {"total_cost", total_cost}};
}

EvalReport evaluate(const cnc::HuntLoop& loop, const std::set<std::string>& ground_truth,
                    const std::map<std::string, Tick>& planted_at) {
  EvalReport r;
  r.ground_truth = ground_truth;
  std::map<std::string, std::string> suspect_of;
  for (const auto& h : loop.hypotheses()) {
    suspect_of[h.id] = h.suspect;
    if (h.status == hypothesis::Status::kConfirmed) r.confirmed.insert(h.suspect);
    r.final_statuses.push_back(Json{{"id", h.id},
                                    {"suspect", h.suspect},
                                    {"status", std::string(hypothesis::to_string(h.status))},
                                    {"jaccard", h.jaccard},
                                    {"support", h.support}});
  }
  r.scores = score(r.confirmed, ground_truth);
  r.hunts = loop.records();
  for (const auto& rec : r.hunts)
    r.total_cost += loop.workflow_view(rec.workflow).at("state").value("cost_charged", fleet::Cost{0});

  for (const auto& m : ground_truth) {
    std::optional<Tick> ttc;
    for (const auto& rec : r.hunts) {
      if (suspect_of[rec.hypothesis] != m || rec.outcome != "confirmed" || !rec.ended) continue;
      const auto p = planted_at.find(m);
      const Tick t = *rec.ended - (p == planted_at.end() ? 0 : p->second);
      if (!ttc || t < *ttc) ttc = t;
    }
    r.time_to_confirm[m] = ttc;

    std::vector<RankPoint> points;
    for (const auto& snap : loop.rankings()) {
      RankPoint p{snap.at("tick").get<Tick>(), std::nullopt};
      const auto& order = snap.at("order");
      for (std::size_t i = 0; i < order.size(); ++i)
        if (order[i] == m) {
          p.rank = static_cast<int>(i) + 1;
          break;
        }
      points.push_back(p);
    }
    r.final_rank[m] = points.empty() ? std::nullopt : points.back().rank;
    r.rank_trajectory[m] = std::move(points);
  }
  return r;
}

cnc::Config scenario_defaults() {
  cnc::Config c;
  c.loop.mode = cnc::LoopMode::kReactive;
  return c;
}

namespace {

struct Infection {
  std::string malware;
  std::string host;
  Tick since = 0;
  std::vector<PlantAction> actions;
};

class Runner {
 public:
  Runner(const ScenarioScript& script, attackdb::GraphPtr graph, const cnc::Config& base)
      : script_(script), graph_(std::move(graph)), hosts_rng_(stream(script.seed, 1)),
        noise_rng_(stream(script.seed, 2)) {
    Json merged = base.to_json();
    merged.merge_patch(script.config);
    cnc::Config config = cnc::Config::from_json(merged);
    // A scenario engine never shares files with a live one.
    config.fleet_path.reset();
    config.journal_path.reset();
    config.audit_path.reset();

    std::unique_ptr<fleet::Fleet> fleet;
    if (script.fleet) {
      std::ifstream in(*script.fleet);
      if (!in) bad_script("cannot read fleet " + *script.fleet);
      try {
        fleet = fleet::Fleet::from_json(Json::parse(in), config.costs);
      } catch (const Json::exception& e) {
        bad_script(*script.fleet + ": " + e.what());
      }
    } else {
      fleet = fleet::Fleet::blank(script.hosts, config.costs);
    }
    host_ids_ = fleet->host_ids();
    for (const auto& e : script.timeline) {
      if ((e.kind == TimelineEntry::Kind::kPlant || e.kind == TimelineEntry::Kind::kBenign) && e.host != "*" &&
          !fleet->has_host(e.host))
        bad_script("unknown host " + e.host);
      if (e.kind == TimelineEntry::Kind::kPlant) MalwareProfile::from_graph(*graph_, e.malware);
    }
    loop_ = std::make_unique<cnc::HuntLoop>(std::move(config), graph_, std::move(fleet));
  }

  EvalReport run() {
    const Tick last = script_.timeline.empty() ? 0 : script_.timeline.back().tick;
    const auto& lc = loop_->config().loop;
    const Tick settle = lc.mode == cnc::LoopMode::kReactive ? 1 : lc.proactive_interval + 1;
    std::size_t next = 0;
    Tick quiet = 0;
    Tick t = 0;
    bool quiescent = false;
    for (; t <= script_.max_ticks; ++t) {
      if (t > 0) loop_->advance(t);
      for (; next < script_.timeline.size() && script_.timeline[next].tick == t; ++next) apply(next);
      beacons(t);
      noise();
      if (t < last) continue;
      quiet = loop_->quiescent() ? quiet + 1 : 0;
      if (quiet >= settle) {
        quiescent = true;
        break;
      }
    }
    std::set<std::string> truth = script_.ground_truth;
    if (truth.empty())
      for (const auto& [m, tick] : planted_at_) truth.insert(m);
    EvalReport r = evaluate(*loop_, truth, planted_at_);
    r.scenario = script_.name;
    r.seed = script_.seed;
    r.ticks = std::min(t, script_.max_ticks);
    r.quiescent = quiescent;
    r.plants = plants_;
    return r;
  }

 private:
  std::string pick_host(const std::string& host) {
    if (host != "*") return host;
    std::uniform_int_distribution<std::size_t> d(0, host_ids_.size() - 1);
    return host_ids_[d(hosts_rng_)];
  }

  void apply(std::size_t index) {
    const TimelineEntry& e = script_.timeline[index];
    auto& fl = loop_->fleet();
    switch (e.kind) {
      case TimelineEntry::Kind::kPlant: {
        const auto profile =
            MalwareProfile::from_graph(*graph_, e.malware, e.mutation ? *e.mutation : script_.mutation);
        Infection inf{e.malware, pick_host(e.host), e.tick,
                      mutate(profile, *graph_, splitmix(script_.seed ^ splitmix(100 + index)))};
        Json actions = Json::array();
        for (const auto& a : inf.actions) {
          fl.simulate_activity(inf.host, a.install);
          actions.push_back(a.to_json());
        }
        plants_.push_back(Json{{"tick", e.tick}, {"host", inf.host}, {"malware", e.malware}, {"actions", actions}});
        planted_at_.try_emplace(e.malware, e.tick);
        infections_.push_back(std::move(inf));
        break;
      }
      case TimelineEntry::Kind::kBenign:
        fl.simulate_activity(pick_host(e.host), *e.benign);
        break;
      case TimelineEntry::Kind::kTrigger: {
        cnc::Trigger trig;
        if (e.trigger) {
          trig = *e.trigger;
          for (auto& s : trig.sightings) s.tick = e.tick;
        } else {
          trig.sightings.push_back(planted_sighting(e));
        }
        loop_->on_external_trigger(trig);
        break;
      }
    }
  }

  hypothesis::Sighting planted_sighting(const TimelineEntry& e) const {
    for (const auto& inf : infections_) {
      if (inf.malware != e.malware) continue;
      for (const auto& a : inf.actions)
        if (a.original == *e.observable)
          return hypothesis::Sighting{a.planted, inf.host, e.tick, hypothesis::SightingSource::kExternalAlert};
      bad_script(e.observable->pattern() + " is not planted for " + e.malware);
    }
    bad_script("trigger on " + e.malware + " before it is planted");
  }

  void beacons(Tick t) {
    for (const auto& inf : infections_) {
      if (t <= inf.since || (t - inf.since) % script_.beacon_period != 0) continue;
      for (const auto& a : inf.actions)
        if (a.beacon) loop_->fleet().simulate_activity(inf.host, *a.beacon);
    }
  }

  void noise() {
    if (script_.noise_rate <= 0.0) return;
    const double whole = std::floor(script_.noise_rate);
    int count = static_cast<int>(whole);
    if (std::uniform_real_distribution<double>(0.0, 1.0)(noise_rng_) < script_.noise_rate - whole) ++count;
    static constexpr ActivityKind kinds[] = {ActivityKind::kCreateFile,     ActivityKind::kTouchFile,
                                             ActivityKind::kSetRegistry,    ActivityKind::kAccessRegistry,
                                             ActivityKind::kStartProcess,   ActivityKind::kDnsQuery};
    for (int i = 0; i < count; ++i) {
      const std::string host = host_ids_[noise_rng_() % host_ids_.size()];
      const ActivityKind k = kinds[noise_rng_() % std::size(kinds)];
      Activity a{k, Observable{}, std::nullopt, ""};
      switch (k) {
        case ActivityKind::kCreateFile:
          a.subject = fresh_value(ObservableType::kFilePath, noise_rng_, *graph_, "benign");
          a.hash = fresh_value(ObservableType::kFileHashSha256, noise_rng_, *graph_, "benign");
          break;
        case ActivityKind::kTouchFile:
          a.subject = fresh_value(ObservableType::kFilePath, noise_rng_, *graph_, "benign");
          break;
        case ActivityKind::kSetRegistry:
        case ActivityKind::kAccessRegistry:
          a.subject = fresh_value(ObservableType::kRegistryKey, noise_rng_, *graph_, "benign");
          a.data = "0";
          break;
        case ActivityKind::kStartProcess:
          a.subject = fresh_value(ObservableType::kProcessName, noise_rng_, *graph_, "benign");
          break;
        default:
          a.subject = fresh_value(ObservableType::kDomain, noise_rng_, *graph_, "benign");
          break;
      }
      loop_->fleet().simulate_activity(host, a);
    }
  }

  const ScenarioScript& script_;
  attackdb::GraphPtr graph_;
  std::unique_ptr<cnc::HuntLoop> loop_;
  std::vector<std::string> host_ids_;
  std::mt19937_64 hosts_rng_;
  std::mt19937_64 noise_rng_;
  std::vector<Infection> infections_;
  std::map<std::string, Tick> planted_at_;
  Json plants_ = Json::array();
};

}  // namespace

EvalReport run_scenario(const ScenarioScript& script, attackdb::GraphPtr graph, const cnc::Config& base) {
  script.validate();
  if (!graph) bad_script("no graph loaded");
  return Runner(script, std::move(graph), base).run();
}

}  // namespace huntloop::scenario
