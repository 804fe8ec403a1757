#include "huntloop/hypothesis.hpp"

#include <algorithm>
#include <array>
#include <iterator>

#include "huntloop/error.hpp"

namespace huntloop::hypothesis {

namespace {

constexpr std::array<std::pair<Status, std::string_view>, 6> kStatusNames{{
    {Status::kProposed, "proposed"},
    {Status::kApproved, "approved"},
    {Status::kTesting, "testing"},
    {Status::kConfirmed, "confirmed"},
    {Status::kDemoted, "demoted"},
    {Status::kStale, "stale"},
}};

constexpr std::array<std::pair<SightingSource, std::string_view>, 4> kSourceNames{{
    {SightingSource::kPolicy, "policy"},
    {SightingSource::kTask, "task"},
    {SightingSource::kExternalAlert, "external-alert"},
    {SightingSource::kAnalyst, "analyst"},
}};

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

}  // namespace

std::string_view to_string(SightingSource s) {
  for (const auto& [k, n] : kSourceNames)
    if (k == s) return n;
  return "unknown";
}

std::optional<SightingSource> parse_sighting_source(std::string_view s) {
  for (const auto& [k, n] : kSourceNames)
    if (n == s) return k;
  return std::nullopt;
}

void to_json(Json& j, const Sighting& s) {
  j = Json{{"observable", s.observable},
           {"host", s.host},
           {"tick", s.tick},
           {"source", std::string(to_string(s.source))}};
}

void from_json(const Json& j, Sighting& s) {
  // Accepts {"observable": {...}, ...} or a flattened {"type","value",...}.
  s.observable = j.contains("observable") ? j["observable"].get<Observable>() : j.get<Observable>();
  s.host = j.value("host", "");
  s.tick = j.value("tick", Tick{0});
  if (s.tick < 0) throw Error("invalid-sighting", "sighting tick must be >= 0");
  auto src = parse_sighting_source(j.value("source", "external-alert"));
  if (!src) throw Error("invalid-sighting", "unknown sighting source");
  s.source = *src;
}

std::string_view to_string(Status s) {
  for (const auto& [k, n] : kStatusNames)
    if (k == s) return n;
  return "unknown";
}

std::optional<Status> parse_status(std::string_view s) {
  for (const auto& [k, n] : kStatusNames)
    if (n == s) return k;
  return std::nullopt;
}

std::string_view to_string(Provenance p) {
  return p == Provenance::kGenerated ? "generated" : "analyst-augmented";
}

bool legal_transition(Status from, Status to) {
  switch (from) {
    case Status::kProposed:
      return to == Status::kApproved || to == Status::kStale;
    case Status::kApproved:
      return to == Status::kTesting || to == Status::kStale;
    case Status::kTesting:
      return to == Status::kConfirmed || to == Status::kDemoted || to == Status::kStale ||
             to == Status::kProposed;
    default:
      return false;
  }
}

bool is_terminal(Status s) {
  return s == Status::kConfirmed || s == Status::kDemoted || s == Status::kStale;
}

ObservableSet Hypothesis::observables() const {
  ObservableSet out = sighted;
  out.insert(expected_unsighted.begin(), expected_unsighted.end());
  return out;
}

Json Hypothesis::to_json() const {
  return Json{{"id", id},
              {"suspect", suspect},
              {"ioa", ioa},
              {"sighted", observables_to_json(sighted)},
              {"expected_unsighted", observables_to_json(expected_unsighted)},
              {"support", support},
              {"jaccard", jaccard},
              {"status", std::string(to_string(status))},
              {"provenance", std::string(to_string(provenance))},
              {"pinned", pinned},
              {"unresolved", observables_to_json(unresolved)},
              {"technique_affinity", technique_affinity}};
}

Hypothesis Hypothesis::from_json(const Json& j) {
  Hypothesis h;
  h.id = require(j, "id", "hypothesis").get<std::string>();
  h.suspect = require(j, "suspect", "hypothesis").get<std::string>();
  h.ioa = j.value("ioa", std::set<std::string>{});
  h.sighted = observables_from_json(j.value("sighted", Json::array()));
  h.expected_unsighted = observables_from_json(j.value("expected_unsighted", Json::array()));
  h.support = j.value("support", 0.0);
  h.jaccard = j.value("jaccard", 0.0);
  auto st = parse_status(j.value("status", "proposed"));
  if (!st) throw Error("malformed-document", "unknown hypothesis status");
  h.status = *st;
  h.provenance = j.value("provenance", "generated") == "generated" ? Provenance::kGenerated
                                                                   : Provenance::kAnalystAugmented;
  h.pinned = j.value("pinned", false);
  h.unresolved = observables_from_json(j.value("unresolved", Json::array()));
  h.technique_affinity = j.value("technique_affinity", std::map<std::string, std::int64_t>{});
  return h;
}

double WeightTable::weight(WeightClass c) const {
  switch (c) {
    case WeightClass::kFileHash:
      return file_hash;
    case WeightClass::kNetwork:
      return network;
    case WeightClass::kHostArtifact:
      return host_artifact;
  }
  return 0.0;
}

double WeightTable::weight(ObservableType t) const { return weight(weight_class(t)); }

void WeightTable::validate() const {
  if (!(file_hash > 0) || !(network > 0) || !(host_artifact > 0))
    throw Error("non-positive-weight", "PoP weights must be positive");
}

WeightTable WeightTable::scaled(double c) const {
  return WeightTable{file_hash * c, network * c, host_artifact * c};
}

Json WeightTable::to_json() const {
  return Json{{"file-hash", file_hash}, {"network", network}, {"host-artifact", host_artifact}};
}

WeightTable WeightTable::from_json(const Json& j) {
  WeightTable w;
  if (j.is_null()) return w;
  w.file_hash = j.value("file-hash", w.file_hash);
  w.network = j.value("network", w.network);
  w.host_artifact = j.value("host-artifact", w.host_artifact);
  w.validate();
  return w;
}

Json Thresholds::to_json() const { return Json{{"theta_conf", theta_conf}, {"theta_ref", theta_ref}}; }

Thresholds Thresholds::from_json(const Json& j) {
  Thresholds t;
  if (j.is_null()) return t;
  t.theta_conf = j.value("theta_conf", t.theta_conf);
  t.theta_ref = j.value("theta_ref", t.theta_ref);
  if (t.theta_conf < 0 || t.theta_conf > 1 || t.theta_ref < 0 || t.theta_ref > 1)
    throw Error("invalid-config", "thresholds must lie in [0,1]");
  return t;
}

double jaccard_similarity(const ObservableSet& a, const ObservableSet& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t common = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++common;
      ++ia;
      ++ib;
    }
  }
  const std::size_t unioned = a.size() + b.size() - common;
  return static_cast<double>(common) / static_cast<double>(unioned);
}

double support(const Hypothesis& h, const WeightTable& weights) {
  weights.validate();
  double total = 0.0;
  for (const auto& o : h.sighted) total += weights.weight(o.type());
  return total;
}

Coverage weighted_coverage(const ObservableSet& hypothesis_observables,
                           const ObservableSet& evidence, const WeightTable& weights) {
  Coverage c;
  for (const auto& o : hypothesis_observables) {
    const double w = weights.weight(o.type());
    c.total_weight += w;
    if (evidence.count(o)) {
      c.covered_weight += w;
      c.classes.insert(weight_class(o.type()));
    }
  }
  return c;
}

bool meets_confirmation(const Coverage& c, const Thresholds& t) {
  return c.fraction() >= t.theta_conf && c.classes.size() >= 2;
}

std::vector<Hypothesis> AffinityRecommender::propose(const attackdb::AttackGraph& g,
                                                     const ObservableSet& sighted,
                                                     const WeightTable& weights) const {
  std::vector<Hypothesis> out;
  for (const auto& [suspect, matched] : attackdb::candidates_for(g, sighted)) {
    Hypothesis h;
    h.id = "hyp-" + suspect;
    h.suspect = suspect;
    h.ioa = attackdb::ioa_of(g, suspect);
    const ObservableSet all = attackdb::observables_of(g, suspect);
    h.sighted = matched;
    h.expected_unsighted = minus(all, matched);
    h.support = support(h, weights);
    for (const auto& t : h.ioa) {
      std::int64_t a = 0;
      for (const auto& o : h.sighted) a += attackdb::affinity(g, o, t);
      h.technique_affinity[t] = a;
    }
    out.push_back(std::move(h));
  }
  return out;
}

GenerateResult generate(const attackdb::AttackGraph& g, const std::vector<Sighting>& sightings,
                        int k, const WeightTable& weights, const GenerationStrategy& strategy) {
  if (k < 1) throw Error("invalid-argument", "k must be >= 1");
  weights.validate();
  GenerateResult result;
  if (g.empty()) {
    result.empty_graph = true;
    return result;
  }
  ObservableSet sighted;
  for (const auto& s : sightings) sighted.insert(s.observable);
  if (sighted.empty()) return result;
  auto ranked = rank(strategy.propose(g, sighted, weights), sighted);
  if (ranked.size() > static_cast<std::size_t>(k)) ranked.resize(static_cast<std::size_t>(k));
  result.hypotheses = std::move(ranked);
  return result;
}

std::vector<Hypothesis> rank(std::vector<Hypothesis> hypotheses, const ObservableSet& evidence) {
  for (auto& h : hypotheses) h.jaccard = jaccard_similarity(h.observables(), evidence);
  std::sort(hypotheses.begin(), hypotheses.end(), [](const Hypothesis& a, const Hypothesis& b) {
    if (a.jaccard != b.jaccard) return a.jaccard > b.jaccard;
    if (a.support != b.support) return a.support > b.support;
    if (a.suspect != b.suspect) return a.suspect < b.suspect;
    return a.id < b.id;
  });
  return hypotheses;
}

Hypothesis apply_refutation_signal(Hypothesis h, const ObservableSet& searched,
                                   const ObservableSet& found, const Thresholds& t) {
  if (!std::includes(searched.begin(), searched.end(), found.begin(), found.end()))
    throw Error("found-not-subset", "found observables must be a subset of searched");
  if (searched.empty()) return h;
  const double fraction =
      static_cast<double>(found.size()) / static_cast<double>(searched.size());
  h.support *= std::max(0.0, fraction);
  if (fraction < t.theta_ref && !h.pinned) h.status = Status::kDemoted;
  return h;
}

std::vector<IoaScore> rank_ioas(const attackdb::AttackGraph& g, const ObservableSet& evidence) {
  std::vector<IoaScore> out;
  for (const auto& t : g.of_kind(attackdb::SdoKind::kAttackPattern)) {
    IoaScore s{t, 0};
    for (const auto& o : evidence) s.affinity += attackdb::affinity(g, o, t);
    out.push_back(s);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const IoaScore& a, const IoaScore& b) { return a.affinity > b.affinity; });
  return out;
}

Hypothesis ioa_hypothesis(const attackdb::AttackGraph& g, const std::string& malware_id,
                          const ObservableSet& evidence, const WeightTable& weights) {
  Hypothesis h;
  h.id = "ioa-" + malware_id;
  h.suspect = malware_id;
  h.ioa = attackdb::ioa_of(g, malware_id);
  const ObservableSet all = attackdb::observables_of(g, malware_id);
  h.sighted = intersect(all, evidence);
  h.expected_unsighted = minus(all, h.sighted);
  h.support = support(h, weights);
  h.jaccard = jaccard_similarity(all, evidence);
  return h;
}

void check_invariants(const attackdb::AttackGraph& g, const Hypothesis& h) {
  auto fail = [&](const std::string& what) {
    throw Error("invariant-violation", "hypothesis " + h.id + ": " + what);
  };
  if (!intersect(h.sighted, h.expected_unsighted).empty()) fail("sighted and expected overlap");
  if (!(h.jaccard >= 0.0 && h.jaccard <= 1.0)) fail("jaccard out of [0,1]");
  if (h.provenance != Provenance::kGenerated) return;
  const ObservableSet all = attackdb::observables_of(g, h.suspect);
  const ObservableSet mine = h.observables();
  if (!std::includes(all.begin(), all.end(), mine.begin(), mine.end()))
    fail("observables not drawn from the suspect");
  if (h.ioa != attackdb::ioa_of(g, h.suspect)) fail("ioa differs from the suspect's techniques");
}

}  // namespace huntloop::hypothesis
