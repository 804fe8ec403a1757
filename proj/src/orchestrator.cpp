#include "huntloop/orchestrator.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "huntloop/error.hpp"

namespace huntloop::cnc {

namespace {

using hypothesis::Status;

constexpr std::pair<LoopMode, std::string_view> kModeNames[] = {
    {LoopMode::kReactive, "reactive"},
    {LoopMode::kProactive, "proactive"},
    {LoopMode::kBoth, "both"},
};

bool reactive(LoopMode m) { return m != LoopMode::kProactive; }
bool proactive(LoopMode m) { return m != LoopMode::kReactive; }

std::string snapshot_path(const std::string& journal) { return journal + ".snapshot"; }

ObservableSet intersect(const ObservableSet& a, const ObservableSet& b) {
  ObservableSet out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::inserter(out, out.end()));
  return out;
}

ObservableSet minus(const ObservableSet& a, const ObservableSet& b) {
  ObservableSet out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::inserter(out, out.end()));
  return out;
}

bool rank_before(const Hypothesis& a, const Hypothesis& b) {
  if (a.jaccard != b.jaccard) return a.jaccard > b.jaccard;
  if (a.support != b.support) return a.support > b.support;
  if (a.suspect != b.suspect) return a.suspect < b.suspect;
  return a.id < b.id;
}

std::int64_t id_number(const std::string& id, const std::string& prefix) {
  if (id.rfind(prefix, 0) != 0) return 0;
  try {
    return std::stoll(id.substr(prefix.size()));
  } catch (const std::exception&) {
    return 0;
  }
}

}  // namespace

std::string_view to_string(LoopMode m) {
  for (const auto& [k, name] : kModeNames)
    if (k == m) return name;
  return "unknown";
}

std::optional<LoopMode> parse_loop_mode(std::string_view s) {
  for (const auto& [k, name] : kModeNames)
    if (name == s) return k;
  return std::nullopt;
}

void LoopConfig::validate() const {
  if (top_k < 1) throw Error("invalid-config", "top_k must be at least 1");
  if (!(auto_approve_threshold >= 0.0 && auto_approve_threshold <= 1.0))
    throw Error("invalid-config", "auto_approve_threshold must lie in [0,1]");
  if (proactive_interval < 1) throw Error("invalid-config", "proactive_interval must be at least 1");
  if (proactive_budget < 0 || workflow_budget < 1) throw Error("invalid-config", "budgets must be positive");
}

Json LoopConfig::to_json() const {
  return Json{{"mode", std::string(to_string(mode))},
              {"top_k", top_k},
              {"auto_approve_threshold", auto_approve_threshold},
              {"proactive_interval", proactive_interval},
              {"proactive_budget", proactive_budget},
              {"workflow_budget", workflow_budget}};
}

LoopConfig LoopConfig::from_json(const Json& j) {
  LoopConfig c;
  if (j.contains("mode")) {
    auto m = parse_loop_mode(j["mode"].get<std::string>());
    if (!m) throw Error("invalid-config", "unknown loop mode " + j["mode"].dump());
    c.mode = *m;
  }
  c.top_k = j.value("top_k", c.top_k);
  c.auto_approve_threshold = j.value("auto_approve_threshold", c.auto_approve_threshold);
  c.proactive_interval = j.value("proactive_interval", c.proactive_interval);
  c.proactive_budget = j.value("proactive_budget", c.proactive_budget);
  c.workflow_budget = j.value("workflow_budget", c.workflow_budget);
  c.validate();
  return c;
}

void Config::validate() const {
  weights.validate();
  costs.validate();
  loop.validate();
  generator_config().validate();
  if (mediator_retries < 0) throw Error("invalid-config", "mediator_retries must be non-negative");
  if (snapshot_every < 0) throw Error("invalid-config", "snapshot_every must be non-negative");
}

Json Config::to_json() const {
  Json j{{"weights", weights.to_json()},       {"thresholds", thresholds.to_json()},
         {"costs", costs.to_json()},           {"generator", generator.to_json()},
         {"loop", loop.to_json()},             {"mediator_retries", mediator_retries},
         {"snapshot_every", snapshot_every}};
  if (fleet_path) j["fleet"] = *fleet_path;
  if (journal_path) j["journal"] = *journal_path;
  if (audit_path) j["audit"] = *audit_path;
  if (graph_path) j["graph"] = *graph_path;
  return j;
}

Config Config::from_json(const Json& j) {
  if (!j.is_object()) throw Error("invalid-config", "config must be a JSON object");
  Config c;
  try {
    if (j.contains("weights")) c.weights = hypothesis::WeightTable::from_json(j["weights"]);
    if (j.contains("thresholds")) c.thresholds = hypothesis::Thresholds::from_json(j["thresholds"]);
    if (j.contains("costs")) c.costs = fleet::CostModel::from_json(j["costs"]);
    if (j.contains("generator")) c.generator = generator::GeneratorConfig::from_json(j["generator"]);
    if (j.contains("loop")) c.loop = LoopConfig::from_json(j["loop"]);
    c.mediator_retries = j.value("mediator_retries", c.mediator_retries);
    c.snapshot_every = j.value("snapshot_every", c.snapshot_every);
    if (j.contains("fleet")) c.fleet_path = j["fleet"].get<std::string>();
    if (j.contains("journal")) c.journal_path = j["journal"].get<std::string>();
    if (j.contains("audit")) c.audit_path = j["audit"].get<std::string>();
    if (j.contains("graph")) c.graph_path = j["graph"].get<std::string>();
  } catch (const Json::exception& e) {
    throw Error("invalid-config", e.what());
  }
  c.validate();
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("invalid-config", "cannot read " + path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error("invalid-config", path + ": " + e.what());
  }
  Config c = from_json(j);
  // Relative file references are relative to the config file.
  const auto dir = std::filesystem::path(path).parent_path();
  for (auto* p : {&c.fleet_path, &c.journal_path, &c.audit_path, &c.graph_path})
    if (*p && std::filesystem::path(**p).is_relative()) *p = (dir / **p).string();
  return c;
}

generator::GeneratorConfig Config::generator_config() const {
  generator::GeneratorConfig g = generator;
  g.costs = costs;
  g.thresholds = thresholds;
  return g;
}

workflow::ContainerOptions Config::container_options() const {
  workflow::ContainerOptions o;
  o.costs = costs;
  o.weights = weights;
  o.thresholds = thresholds;
  o.fan_out_cap = generator.fan_out_cap;
  o.mediator_retries = mediator_retries;
  return o;
}

Trigger Trigger::from_json(const Json& j) {
  Trigger t;
  try {
    if (j.contains("sightings"))
      for (const auto& s : j["sightings"]) t.sightings.push_back(s.get<Sighting>());
    if (j.contains("events")) {
      for (const auto& ej : j["events"]) {
        const auto e = ej.get<evidence::Event>();
        for (const auto& o : e.observables)
          t.sightings.push_back(Sighting{o, e.host, e.time, hypothesis::SightingSource::kExternalAlert});
      }
    }
  } catch (const Json::exception& e) {
    throw Error("invalid-trigger", e.what());
  } catch (const Error& e) {
    throw Error("invalid-trigger", e.what());
  }
  return t;
}

Json HuntRecord::to_json() const {
  return Json{{"hypothesis", hypothesis},   {"workflow", workflow},
              {"started", started},         {"ended", ended ? Json(*ended) : Json()},
              {"status", status},           {"claim", claim},
              {"rationale", rationale},     {"coverage", coverage},
              {"adjudicated", adjudicated}, {"outcome", outcome}};
}

HuntRecord HuntRecord::from_json(const Json& j) {
  HuntRecord r;
  r.hypothesis = j.at("hypothesis").get<std::string>();
  r.workflow = j.at("workflow").get<std::string>();
  r.started = j.value("started", Tick{0});
  if (j.contains("ended") && !j["ended"].is_null()) r.ended = j["ended"].get<Tick>();
  r.status = j.value("status", "running");
  r.claim = j.value("claim", "");
  r.rationale = j.value("rationale", "");
  r.coverage = j.value("coverage", 0.0);
  r.adjudicated = j.value("adjudicated", false);
  r.outcome = j.value("outcome", "");
  return r;
}

Journal::Journal(std::string path) : path_(std::move(path)) { lines_ = read(path_).size(); }

void Journal::append(const Json& entry) {
  std::ofstream out(path_, std::ios::app);
  out << entry.dump() << '\n';
  out.flush();
  if (!out) throw Error("journal-write", "cannot append to " + path_);
  ++lines_;
}

std::vector<Json> Journal::read(const std::string& path) {
  std::vector<Json> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(Json::parse(line));
    } catch (const Json::exception&) {
      // Only a torn final line is tolerated.
      if (in.peek() != std::char_traits<char>::eof()) throw Error("corrupt-journal", "bad line in " + path);
    }
  }
  return out;
}

HuntLoop::HuntLoop(Config config, attackdb::GraphPtr graph, std::unique_ptr<fleet::Fleet> fleet)
    : config_(std::move(config)),
      graph_(std::move(graph)),
      fleet_(std::move(fleet)),
      mediator_(*fleet_, store_, config_.audit_path) {
  config_.validate();
  if (!graph_) graph_ = std::make_shared<const attackdb::AttackGraph>();
  fleet_->set_sink([this](const evidence::Event& e) { store_.ingest(e); });
  store_.set_dispatcher([this](const evidence::AlertNotification& n) {
    std::lock_guard lock(mu_);
    auto it = live_.find(n.handler.container);
    if (it == live_.end()) return false;
    it->second->on_alert(n, now_);
    return true;
  });
  if (config_.journal_path) {
    replay();
    journal_ = std::make_unique<Journal>(*config_.journal_path);
  }
}

HuntLoop::~HuntLoop() { store_.set_dispatcher(nullptr); }

void HuntLoop::replay() {
  const std::string& path = *config_.journal_path;
  std::size_t skip = 0;
  replaying_ = true;
  if (std::filesystem::exists(snapshot_path(path))) {
    std::ifstream in(snapshot_path(path));
    Json snap = Json::parse(in);
    skip = snap.value("journal_lines", std::size_t{0});
    apply(Json{{"op", "state"}, {"value", snap["state"]}});
  }
  const auto entries = Journal::read(path);
  for (std::size_t i = skip; i < entries.size(); ++i) apply(entries[i]);
  replaying_ = false;
}

void HuntLoop::snapshot() {
  const std::string path = snapshot_path(journal_->path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    out << Json{{"journal_lines", journal_->lines()}, {"state", state_json()}}.dump();
  }
  std::filesystem::rename(tmp, path);
}

void HuntLoop::commit(Json op) {
  apply(op);
  if (!journal_ || replaying_) return;
  journal_->append(op);
  if (config_.snapshot_every > 0 && journal_->lines() % static_cast<std::size_t>(config_.snapshot_every) == 0)
    snapshot();
}

void HuntLoop::apply(const Json& op) {
  const std::string kind = op.at("op").get<std::string>();
  if (kind == "hypothesis") {
    auto h = Hypothesis::from_json(op["value"]);
    hypotheses_[h.id] = std::move(h);
  } else if (kind == "record") {
    auto r = HuntRecord::from_json(op["value"]);
    records_[r.workflow] = std::move(r);
  } else if (kind == "container") {
    const std::string id = op["id"].get<std::string>();
    if (op.contains("workflow")) workflows_[id] = op["workflow"];
    container_states_[id] = op["state"];
  } else if (kind == "sightings") {
    for (const auto& s : op["value"]) sightings_.push_back(s.get<Sighting>());
  } else if (kind == "counters") {
    now_ = op["now"].get<Tick>();
    next_hypothesis_ = op["next_hypothesis"].get<std::int64_t>();
    next_workflow_ = op["next_workflow"].get<std::int64_t>();
    last_proactive_ = op["last_proactive"].get<Tick>();
  } else if (kind == "ranking") {
    rankings_.push_back(op["value"]);
  } else if (kind == "log") {
    log_.push_back(op["value"]);
  } else if (kind == "state") {
    const Json& s = op["value"];
    apply(Json{{"op", "counters"},
               {"now", s["now"]},
               {"next_hypothesis", s["next_hypothesis"]},
               {"next_workflow", s["next_workflow"]},
               {"last_proactive", s["last_proactive"]}});
    hypotheses_.clear();
    records_.clear();
    workflows_.clear();
    container_states_.clear();
    for (const auto& [id, h] : s["hypotheses"].items()) hypotheses_[id] = Hypothesis::from_json(h);
    for (const auto& [id, r] : s["records"].items()) records_[id] = HuntRecord::from_json(r);
    for (const auto& [id, w] : s["workflows"].items()) workflows_[id] = w;
    for (const auto& [id, c] : s["containers"].items()) container_states_[id] = c;
    sightings_ = s["sightings"].get<std::vector<Sighting>>();
    rankings_ = s["rankings"].get<std::vector<Json>>();
    log_ = s["log"].get<std::vector<Json>>();
  } else {
    throw Error("corrupt-journal", "unknown journal op " + kind);
  }
}

Json HuntLoop::state_json() const {
  std::lock_guard lock(mu_);
  Json hyps = Json::object(), recs = Json::object(), wfs = Json::object(), states = Json::object();
  for (const auto& [id, h] : hypotheses_) hyps[id] = h.to_json();
  for (const auto& [id, r] : records_) recs[id] = r.to_json();
  for (const auto& [id, w] : workflows_) wfs[id] = w;
  for (const auto& [id, s] : container_states_) states[id] = s;
  return Json{{"now", now_},
              {"next_hypothesis", next_hypothesis_},
              {"next_workflow", next_workflow_},
              {"last_proactive", last_proactive_},
              {"hypotheses", hyps},
              {"records", recs},
              {"workflows", wfs},
              {"containers", states},
              {"sightings", sightings_},
              {"rankings", rankings_},
              {"log", log_}};
}

void HuntLoop::put_hypothesis(const Hypothesis& h) { commit(Json{{"op", "hypothesis"}, {"value", h.to_json()}}); }

void HuntLoop::put_record(const HuntRecord& r) { commit(Json{{"op", "record"}, {"value", r.to_json()}}); }

void HuntLoop::put_container(const std::string& id, const Json& workflow, const Json& state) {
  Json op{{"op", "container"}, {"id", id}, {"state", state}};
  if (!workflow.is_null()) op["workflow"] = workflow;
  commit(std::move(op));
}

void HuntLoop::add_sightings(const std::vector<Sighting>& s) {
  std::set<Sighting> seen(sightings_.begin(), sightings_.end());
  Json fresh = Json::array();
  for (const auto& x : s)
    if (seen.insert(x).second) fresh.push_back(x);
  if (!fresh.empty()) commit(Json{{"op", "sightings"}, {"value", fresh}});
}

void HuntLoop::note(Json entry) {
  entry["tick"] = now_;
  commit(Json{{"op", "log"}, {"value", std::move(entry)}});
}

void HuntLoop::save_counters() {
  commit(Json{{"op", "counters"},
              {"now", now_},
              {"next_hypothesis", next_hypothesis_},
              {"next_workflow", next_workflow_},
              {"last_proactive", last_proactive_}});
}

void HuntLoop::rerank() {
  const ObservableSet ev = evidence();
  std::vector<Hypothesis> all;
  for (const auto& [id, h] : hypotheses_) all.push_back(h);
  all = hypothesis::rank(std::move(all), ev);
  Json order = Json::array();
  for (const auto& h : all) {
    order.push_back(h.suspect);
    if (hypotheses_.at(h.id).jaccard != h.jaccard) put_hypothesis(h);
  }
  commit(Json{{"op", "ranking"}, {"value", Json{{"tick", now_}, {"order", order}}}});
}

Hypothesis& HuntLoop::find_hypothesis(const std::string& id) {
  auto it = hypotheses_.find(id);
  if (it == hypotheses_.end()) throw Error("unknown-hypothesis", "no hypothesis " + id);
  return it->second;
}

std::optional<std::string> HuntLoop::live_hypothesis(const std::string& suspect) const {
  for (const auto& [id, h] : hypotheses_)
    if (h.suspect == suspect && !hypothesis::is_terminal(h.status)) return id;
  return std::nullopt;
}

// A suspect gets a new hypothesis when it has none, or when every earlier
// one was demoted or dismissed and the evidence for it has grown since.
bool HuntLoop::eligible_new(const std::string& suspect, const ObservableSet& sighted) const {
  for (const auto& [id, h] : hypotheses_) {
    if (h.suspect != suspect) continue;
    if (!hypothesis::is_terminal(h.status) || h.status == Status::kConfirmed) return false;
    if (std::includes(h.sighted.begin(), h.sighted.end(), sighted.begin(), sighted.end())) return false;
  }
  return true;
}

std::string HuntLoop::launch(Hypothesis& h) {
  for (const auto& [id, r] : records_)
    if (r.hypothesis == h.id && r.status == "running")
      throw Error("hypothesis-busy", "hypothesis " + h.id + " already has running workflow " + id);
  const std::string wid = "WF" + std::to_string(next_workflow_);
  auto generated = generator::generate_workflow(h, *graph_, config_.generator_config(), config_.loop.workflow_budget,
                                                static_cast<int>(fleet_->size()), wid);
  ++next_workflow_;
  auto c = std::make_unique<workflow::Container>(wid, generated.workflow, mediator_, config_.container_options());
  auto& ref = *c;
  live_[wid] = std::move(c);
  if (h.status == Status::kProposed) {
    h.status = Status::kApproved;
    put_hypothesis(h);
  }
  h.status = Status::kTesting;
  put_hypothesis(h);
  HuntRecord r;
  r.hypothesis = h.id;
  r.workflow = wid;
  r.started = now_;
  put_record(r);
  ref.start(now_);
  put_container(wid, generated.workflow.to_json(), ref.state().to_json());
  save_counters();
  return wid;
}

std::vector<Hypothesis> HuntLoop::on_external_trigger(const Trigger& trigger) {
  std::lock_guard lock(mu_);
  add_sightings(trigger.sightings);
  if (!reactive(config_.loop.mode) || trigger.sightings.empty()) return {};
  const auto generated = hypothesis::generate(*graph_, sightings_, config_.loop.top_k, config_.weights);
  const ObservableSet ev = evidence();
  std::vector<std::string> touched;
  for (const auto& gen : generated.hypotheses) {
    if (auto live = live_hypothesis(gen.suspect)) {
      Hypothesis h = hypotheses_.at(*live);
      if (h.status == Status::kTesting) continue;
      ObservableSet obs = gen.observables();
      if (h.provenance == hypothesis::Provenance::kAnalystAugmented) {
        const ObservableSet mine = h.observables();
        obs.insert(mine.begin(), mine.end());
      }
      h.sighted = intersect(obs, ev);
      h.expected_unsighted = minus(obs, h.sighted);
      h.ioa = gen.ioa;
      h.technique_affinity = gen.technique_affinity;
      h.support = hypothesis::support(h, config_.weights);
      h.jaccard = hypothesis::jaccard_similarity(h.observables(), ev);
      put_hypothesis(h);
      touched.push_back(h.id);
      continue;
    }
    if (!eligible_new(gen.suspect, gen.sighted)) continue;
    Hypothesis h = gen;
    h.id = "HY" + std::to_string(next_hypothesis_++);
    h.status = Status::kProposed;
    put_hypothesis(h);
    touched.push_back(h.id);
  }
  save_counters();
  for (const auto& id : touched) {
    Hypothesis& h = hypotheses_.at(id);
    if (h.status != Status::kProposed || h.jaccard < config_.loop.auto_approve_threshold) continue;
    Hypothesis copy = h;
    try {
      launch(copy);
    } catch (const Error& e) {
      note(Json{{"event", "launch-failed"}, {"hypothesis", id}, {"error", e.code()}, {"message", e.what()}});
    }
  }
  rerank();
  std::vector<Hypothesis> out;
  for (const auto& id : touched) out.push_back(hypotheses_.at(id));
  return out;
}

std::vector<std::string> HuntLoop::proactive_tick(Tick now) {
  std::lock_guard lock(mu_);
  return proactive_locked(now);
}

std::vector<std::string> HuntLoop::proactive_locked(Tick now) {
  if (!proactive(config_.loop.mode) || now - last_proactive_ < config_.loop.proactive_interval) return {};
  last_proactive_ = now;
  const ObservableSet ev = evidence();
  std::vector<Hypothesis> candidates;
  for (const auto& m : graph_->of_kind(attackdb::SdoKind::kMalware)) {
    Hypothesis h = hypothesis::ioa_hypothesis(*graph_, m, ev, config_.weights);
    if (h.observables().empty() || !eligible_new(m, h.sighted)) continue;
    candidates.push_back(std::move(h));
  }
  std::stable_sort(candidates.begin(), candidates.end(), rank_before);
  if (candidates.size() > static_cast<std::size_t>(config_.loop.top_k))
    candidates.resize(static_cast<std::size_t>(config_.loop.top_k));

  std::vector<std::string> launched;
  Cost remaining = config_.loop.proactive_budget;
  for (auto& h : candidates) {
    Cost estimate = 0;
    try {
      estimate = generator::generate_workflow(h, *graph_, config_.generator_config(), config_.loop.workflow_budget,
                                              static_cast<int>(fleet_->size()))
                     .report.estimated_cost;
    } catch (const Error& e) {
      note(Json{{"event", "proactive-skipped"}, {"suspect", h.suspect}, {"error", e.code()}});
      continue;
    }
    if (estimate > remaining) {
      note(Json{{"event", "proactive-truncated"},
                {"suspect", h.suspect},
                {"needed", estimate},
                {"remaining", remaining}});
      break;
    }
    remaining -= estimate;
    h.id = "HY" + std::to_string(next_hypothesis_++);
    h.status = Status::kProposed;
    put_hypothesis(h);
    launched.push_back(launch(h));
  }
  save_counters();
  if (!launched.empty()) rerank();
  return launched;
}

HuntRecord HuntLoop::adjudicate(const std::string& container_id) {
  std::lock_guard lock(mu_);
  return adjudicate_locked(container_id);
}

HuntRecord HuntLoop::adjudicate_locked(const std::string& container_id) {
  auto rit = records_.find(container_id);
  if (rit == records_.end()) throw Error("unknown-container", "no container " + container_id);
  HuntRecord r = rit->second;
  if (r.adjudicated) return r;
  auto lit = live_.find(container_id);
  if (lit == live_.end()) throw Error("container-orphaned", "container " + container_id + " has no interpreter");
  const workflow::Container& c = *lit->second;
  if (!c.terminal()) throw Error("container-running", "container " + container_id + " is still running");
  const workflow::ContainerState& s = c.state();

  r.status = std::string(workflow::to_string(s.status));
  r.ended = s.ended ? *s.ended : now_;
  if (s.verdict) {
    r.claim = std::string(workflow::to_string(s.verdict->claim));
    r.rationale = s.verdict->rationale;
  } else {
    r.rationale = s.reason;
  }

  std::vector<Sighting> found_sightings = s.findings;
  add_sightings(found_sightings);

  Hypothesis h = hypotheses_.at(r.hypothesis);
  if (h.status == Status::kTesting) {
    const ObservableSet obs = h.observables();
    const ObservableSet found = intersect(s.found(), obs);
    ObservableSet evidence_set = found;
    evidence_set.insert(h.sighted.begin(), h.sighted.end());
    const auto cov = hypothesis::weighted_coverage(obs, evidence_set, config_.weights);
    r.coverage = cov.fraction();
    if (hypothesis::meets_confirmation(cov, config_.thresholds)) {
      h.status = Status::kConfirmed;
    } else {
      const ObservableSet searched = intersect(s.searched, h.expected_unsighted);
      h = hypothesis::apply_refutation_signal(h, searched, intersect(found, searched), config_.thresholds);
      if (h.status != Status::kDemoted) h.status = Status::kProposed;
    }
    h.sighted.insert(found.begin(), found.end());
    h.expected_unsighted = minus(h.expected_unsighted, found);
    put_hypothesis(h);
  }
  r.adjudicated = true;
  r.outcome = std::string(hypothesis::to_string(hypotheses_.at(r.hypothesis).status));
  put_record(r);
  rerank();
  return r;
}

void HuntLoop::cancel_container(const std::string& workflow_id, const std::string& reason) {
  auto it = live_.find(workflow_id);
  if (it == live_.end()) return;
  it->second->cancel(now_, reason);
  HuntRecord r = records_.at(workflow_id);
  r.status = std::string(workflow::to_string(it->second->state().status));
  r.ended = now_;
  r.rationale = reason;
  r.adjudicated = true;
  put_container(workflow_id, Json(), it->second->state().to_json());
  live_.erase(it);
  r.outcome = std::string(hypothesis::to_string(hypotheses_.at(r.hypothesis).status));
  put_record(r);
}

Hypothesis HuntLoop::approve(const std::string& id) {
  std::lock_guard lock(mu_);
  Hypothesis h = find_hypothesis(id);
  if (hypothesis::is_terminal(h.status)) throw Error("terminal-hypothesis", id + " is " + std::string(to_string(h.status)));
  if (h.status != Status::kProposed)
    throw Error("illegal-transition", id + " is " + std::string(to_string(h.status)) + ", not proposed");
  launch(h);
  rerank();
  return hypotheses_.at(id);
}

Hypothesis HuntLoop::augment(const std::string& id, const ObservableSet& add, const ObservableSet& remove) {
  std::lock_guard lock(mu_);
  Hypothesis h = find_hypothesis(id);
  if (hypothesis::is_terminal(h.status)) throw Error("terminal-hypothesis", id + " is " + std::string(to_string(h.status)));
  const ObservableSet ev = evidence();
  for (const auto& o : remove) {
    h.sighted.erase(o);
    h.expected_unsighted.erase(o);
    h.unresolved.erase(o);
  }
  for (const auto& o : add) {
    if (ev.count(o))
      h.sighted.insert(o);
    else
      h.expected_unsighted.insert(o);
    if (!graph_->observable_index().count(o)) h.unresolved.insert(o);
  }
  h.provenance = hypothesis::Provenance::kAnalystAugmented;
  h.support = hypothesis::support(h, config_.weights);
  h.jaccard = hypothesis::jaccard_similarity(h.observables(), ev);
  put_hypothesis(h);
  if (h.status == Status::kTesting) {
    for (const auto& [wid, r] : records_)
      if (r.hypothesis == id && r.status == "running") {
        cancel_container(wid, "superseded by augmented hypothesis");
        break;
      }
    launch(h);
  }
  rerank();
  return hypotheses_.at(id);
}

Hypothesis HuntLoop::pin(const std::string& id) {
  std::lock_guard lock(mu_);
  Hypothesis h = find_hypothesis(id);
  if (hypothesis::is_terminal(h.status)) throw Error("terminal-hypothesis", id + " is " + std::string(to_string(h.status)));
  h.pinned = true;
  put_hypothesis(h);
  return h;
}

Hypothesis HuntLoop::dismiss(const std::string& id) {
  std::lock_guard lock(mu_);
  Hypothesis h = find_hypothesis(id);
  if (hypothesis::is_terminal(h.status)) throw Error("terminal-hypothesis", id + " is " + std::string(to_string(h.status)));
  h.status = Status::kStale;
  put_hypothesis(h);
  for (const auto& [wid, r] : records_)
    if (r.hypothesis == id && r.status == "running") {
      cancel_container(wid, "dismissed by analyst");
      break;
    }
  rerank();
  return hypotheses_.at(id);
}

void HuntLoop::sync_containers() {
  for (const auto& [id, c] : live_) {
    Json state = c->state().to_json();
    auto it = container_states_.find(id);
    if (it == container_states_.end() || it->second != state) put_container(id, Json(), state);
  }
}

void HuntLoop::advance(Tick now) {
  std::lock_guard lock(mu_);
  if (now < now_) throw Error("tick-regression", "tick " + std::to_string(now) + " is before " + std::to_string(now_));
  now_ = now;
  fleet_->advance_to(now);
  store_.tick(now);
  for (auto& [id, c] : live_) c->run(now);
  sync_containers();
  std::vector<std::string> finished;
  for (const auto& [id, c] : live_)
    if (c->terminal()) finished.push_back(id);
  for (const auto& id : finished) {
    adjudicate_locked(id);
    live_.erase(id);
  }
  proactive_locked(now);
  save_counters();
}

bool HuntLoop::quiescent() const {
  std::lock_guard lock(mu_);
  return live_.empty() && store_.parked() == 0;
}

std::vector<std::string> HuntLoop::recover_orphans() {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (auto [id, r] : records_) {
    if (r.status != "running" || live_.count(id)) continue;
    r.status = std::string(workflow::to_string(workflow::ContainerStatus::kCancelled));
    r.ended = now_;
    r.rationale = "orphaned by restart";
    r.adjudicated = true;
    Hypothesis h = hypotheses_.at(r.hypothesis);
    if (h.status == Status::kTesting) {
      h.status = Status::kProposed;
      put_hypothesis(h);
    }
    r.outcome = std::string(hypothesis::to_string(h.status));
    put_record(r);
    out.push_back(id);
  }
  return out;
}

std::vector<Hypothesis> HuntLoop::hypotheses(std::optional<Status> status) const {
  std::lock_guard lock(mu_);
  std::vector<Hypothesis> out;
  for (const auto& [id, h] : hypotheses_)
    if (!status || h.status == *status) out.push_back(h);
  std::stable_sort(out.begin(), out.end(), rank_before);
  return out;
}

std::optional<Hypothesis> HuntLoop::hypothesis(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = hypotheses_.find(id);
  if (it == hypotheses_.end()) return std::nullopt;
  return it->second;
}

std::vector<HuntRecord> HuntLoop::records() const {
  std::lock_guard lock(mu_);
  std::vector<HuntRecord> out;
  for (const auto& [id, r] : records_) out.push_back(r);
  std::sort(out.begin(), out.end(), [](const HuntRecord& a, const HuntRecord& b) {
    return id_number(a.workflow, "WF") < id_number(b.workflow, "WF");
  });
  return out;
}

std::optional<HuntRecord> HuntLoop::record(const std::string& workflow_id) const {
  std::lock_guard lock(mu_);
  auto it = records_.find(workflow_id);
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

Json HuntLoop::workflow_view(const std::string& workflow_id) const {
  std::lock_guard lock(mu_);
  auto it = workflows_.find(workflow_id);
  if (it == workflows_.end()) throw Error("unknown-workflow", "no workflow " + workflow_id);
  return Json{{"workflow", it->second},
              {"state", container_states_.at(workflow_id)},
              {"record", records_.at(workflow_id).to_json()}};
}

std::vector<workflow::AuditEntry> HuntLoop::audit(const std::string& workflow_id) const {
  std::lock_guard lock(mu_);
  if (!workflows_.count(workflow_id)) throw Error("unknown-workflow", "no workflow " + workflow_id);
  return mediator_.audit(workflow_id);
}

std::vector<evidence::AlertNotification> HuntLoop::alerts() const { return store_.history(); }

std::vector<evidence::Event> HuntLoop::search(const evidence::Query& q) const { return store_.search(q); }

Json HuntLoop::neighbors(const std::string& id, int depth) const { return attackdb::neighbors(*graph_, id, depth); }

std::vector<Sighting> HuntLoop::sightings() const {
  std::lock_guard lock(mu_);
  return sightings_;
}

ObservableSet HuntLoop::evidence() const {
  std::lock_guard lock(mu_);
  ObservableSet out;
  for (const auto& s : sightings_) out.insert(s.observable);
  return out;
}

std::vector<Json> HuntLoop::rankings() const {
  std::lock_guard lock(mu_);
  return rankings_;
}

std::vector<Json> HuntLoop::log() const {
  std::lock_guard lock(mu_);
  return log_;
}

Tick HuntLoop::now() const {
  std::lock_guard lock(mu_);
  return now_;
}

}  // namespace huntloop::cnc
