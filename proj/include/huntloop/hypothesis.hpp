#pragma once

// Attack hypothesis generation and ranking.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "huntloop/attackdb.hpp"
#include "huntloop/json_io.hpp"
#include "huntloop/observable.hpp"

namespace huntloop::hypothesis {

using Tick = std::int64_t;

enum class SightingSource { kPolicy, kTask, kExternalAlert, kAnalyst };

std::string_view to_string(SightingSource s);
std::optional<SightingSource> parse_sighting_source(std::string_view s);

struct Sighting {
  Observable observable;
  std::string host;
  Tick tick = 0;
  SightingSource source = SightingSource::kExternalAlert;

  auto operator<=>(const Sighting&) const = default;
};

void to_json(Json& j, const Sighting& s);
void from_json(const Json& j, Sighting& s);

enum class Status { kProposed, kApproved, kTesting, kConfirmed, kDemoted, kStale };
enum class Provenance { kGenerated, kAnalystAugmented };

std::string_view to_string(Status s);
std::optional<Status> parse_status(std::string_view s);
std::string_view to_string(Provenance p);

// The declared lifecycle:
//   proposed -> approved -> testing -> {confirmed, demoted, stale}
//   testing -> proposed      (inconclusive verdict, re-queued)
//   proposed|approved -> stale (dismissed)
bool legal_transition(Status from, Status to);
bool is_terminal(Status s);

struct Hypothesis {
  std::string id;
  std::string suspect;  // malware node id
  std::set<std::string> ioa;
  ObservableSet sighted;
  ObservableSet expected_unsighted;
  double support = 0.0;
  double jaccard = 0.0;
  Status status = Status::kProposed;
  Provenance provenance = Provenance::kGenerated;
  bool pinned = false;
  // Analyst-added observables the AttackDB does not know.
  ObservableSet unresolved;
  // Technique id -> summed template-path affinity from the sighted set.
  std::map<std::string, std::int64_t> technique_affinity;

  // sighted ∪ expected_unsighted: the set Jaccard and coverage run over.
  ObservableSet observables() const;

  bool operator==(const Hypothesis&) const = default;
  Json to_json() const;
  static Hypothesis from_json(const Json& j);
};

struct WeightTable {
  double file_hash = 1.0;
  double network = 0.8;  // ip, domain, url, email
  double host_artifact = 0.5;  // registry key, mutex, process name, file path

  double weight(ObservableType t) const;
  double weight(WeightClass c) const;
  void validate() const;  // throws Error("non-positive-weight")
  WeightTable scaled(double c) const;

  Json to_json() const;
  static WeightTable from_json(const Json& j);
};

struct Thresholds {
  double theta_conf = 0.5;
  double theta_ref = 0.1;

  Json to_json() const;
  static Thresholds from_json(const Json& j);
};

// |a ∩ b| / |a ∪ b|, and 1 when both are empty.
double jaccard_similarity(const ObservableSet& a, const ObservableSet& b);

// Sum of class weights over the sighted observables.
double support(const Hypothesis& h, const WeightTable& weights);

struct Coverage {
  double covered_weight = 0.0;
  double total_weight = 0.0;
  std::set<WeightClass> classes;  // classes with at least one covered observable

  double fraction() const { return total_weight > 0 ? covered_weight / total_weight : 0.0; }
};

Coverage weighted_coverage(const ObservableSet& hypothesis_observables,
                           const ObservableSet& evidence, const WeightTable& weights);

// θ_conf weighted coverage backed by at least two weight classes.
bool meets_confirmation(const Coverage& c, const Thresholds& t);

// Strategy seam for hypothesis proposal. Only the CTI recommender is
// shipped; plan-recognition strategies would plug in here.
class GenerationStrategy {
 public:
  virtual ~GenerationStrategy() = default;
  virtual std::vector<Hypothesis> propose(const attackdb::AttackGraph& g,
                                          const ObservableSet& sighted,
                                          const WeightTable& weights) const = 0;
};

class AffinityRecommender final : public GenerationStrategy {
 public:
  std::vector<Hypothesis> propose(const attackdb::AttackGraph& g, const ObservableSet& sighted,
                                  const WeightTable& weights) const override;
};

struct GenerateResult {
  std::vector<Hypothesis> hypotheses;
  bool empty_graph = false;
};

// One hypothesis per candidate malware, ranked against the sighted set and
// truncated to k. Throws Error("invalid-argument") when k < 1.
GenerateResult generate(const attackdb::AttackGraph& g, const std::vector<Sighting>& sightings,
                        int k, const WeightTable& weights = {},
                        const GenerationStrategy& strategy = AffinityRecommender{});

// Sorts by (jaccard desc, support desc, suspect asc, id asc) and refreshes
// every jaccard field against `evidence`.
std::vector<Hypothesis> rank(std::vector<Hypothesis> hypotheses, const ObservableSet& evidence);

// Scales support by |found| / |searched| and demotes (unless pinned) when
// that fraction is below θ_ref. Throws Error("found-not-subset").
Hypothesis apply_refutation_signal(Hypothesis h, const ObservableSet& searched,
                                   const ObservableSet& found, const Thresholds& t = {});

struct IoaScore {
  std::string technique;
  std::int64_t affinity = 0;
};

// Experimental: techniques ranked by summed affinity to the evidence.
std::vector<IoaScore> rank_ioas(const attackdb::AttackGraph& g, const ObservableSet& evidence);

// Raw IoA hypothesis for proactive hunting: every observable of the
// malware is expected, `evidence` ∩ observables counts as sighted.
Hypothesis ioa_hypothesis(const attackdb::AttackGraph& g, const std::string& malware_id,
                          const ObservableSet& evidence, const WeightTable& weights);

// Throws Error("invariant-violation") when a generated hypothesis breaks
// disjointness, the subset rule, IoA consistency or the jaccard bound.
void check_invariants(const attackdb::AttackGraph& g, const Hypothesis& h);

}  // namespace huntloop::hypothesis
