#pragma once

// Adversary emulation: plants malware artifacts from AttackDB profiles,
// mixes in benign noise, drives a HuntLoop over simulated time and scores
// the outcome against ground truth.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "huntloop/attackdb.hpp"
#include "huntloop/fleet.hpp"
#include "huntloop/orchestrator.hpp"

namespace huntloop::scenario {

using evidence::Tick;

// Per-otype replacement probability. Keys are otype names or weight class
// names ("file-hash", "network", "host-artifact"); an otype entry wins over
// its class. Missing types mutate with probability 0.
struct MutationTable {
  std::map<std::string, double> rates;

  double rate(ObservableType t) const;
  void validate() const;  // throws invalid-script
  Json to_json() const { return rates; }
  static MutationTable from_json(const Json& j);
  static MutationTable uniform(double p);
};

struct MalwareProfile {
  std::string malware;
  ObservableSet observables;
  MutationTable mutation;

  // Every observable of the malware. Throws unknown-profile.
  static MalwareProfile from_graph(const attackdb::AttackGraph& g, const std::string& malware,
                                   MutationTable mutation = {});
};

struct PlantAction {
  Observable original;
  Observable planted;  // differs from original when mutated
  fleet::Activity install;
  std::optional<fleet::Activity> beacon;  // repeated while the host is infected

  Json to_json() const;
};

// One action per plantable observable, in observable order. Email has no
// activity and is not planted.
std::vector<PlantAction> mutate(const MalwareProfile& profile, const attackdb::AttackGraph& g,
                                std::uint64_t seed);

// A random value of type `t` that is not an AttackDB observable. `tag`
// ends up in the value so mutated and benign values are told apart.
Observable fresh_value(ObservableType t, std::mt19937_64& rng, const attackdb::AttackGraph& g,
                       const std::string& tag);

struct TimelineEntry {
  enum class Kind { kPlant, kBenign, kTrigger };

  Tick tick = 0;
  Kind kind = Kind::kPlant;
  std::string host;  // "*" picks a host with the scenario generator
  std::string malware;  // plant, or trigger on a planted malware's host
  std::optional<MutationTable> mutation;  // plant override
  std::optional<fleet::Activity> benign;
  std::optional<Observable> observable;  // trigger on a planted malware
  std::optional<cnc::Trigger> trigger;  // literal trigger

  Json to_json() const;
  static TimelineEntry from_json(const Json& j);
};

struct ScenarioScript {
  std::string name;
  std::uint64_t seed = 0;
  int hosts = 10;  // used when no fleet file is given
  std::optional<std::string> fleet;  // fleet definition file
  MutationTable mutation;
  double noise_rate = 0.0;  // benign actions per tick, fleet-wide
  Tick beacon_period = 4;
  Tick max_ticks = 400;
  std::vector<TimelineEntry> timeline;
  std::set<std::string> ground_truth;  // defaults to the planted malware
  Json config = Json::object();  // merged over the base config

  void validate() const;  // throws invalid-script
  Json to_json() const;
  // Relative fleet paths resolve against `base_dir`. Throws invalid-script.
  static ScenarioScript from_json(const Json& j, const std::string& base_dir = "");
  static ScenarioScript load(const std::string& path);
};

struct Scores {
  double precision = 1.0;
  double recall = 1.0;
  bool no_confirmations = false;
};

// Zero confirmations report precision 1 with the flag set. An empty ground
// truth reports recall 1.
Scores score(const std::set<std::string>& confirmed, const std::set<std::string>& planted);

struct RankPoint {
  Tick tick = 0;
  std::optional<int> rank;  // 1-based; empty when the malware is unranked
};

struct EvalReport {
  std::string scenario;
  std::uint64_t seed = 0;
  Tick ticks = 0;
  bool quiescent = false;
  std::set<std::string> ground_truth;
  std::set<std::string> confirmed;
  Scores scores;
  std::map<std::string, std::optional<Tick>> time_to_confirm;
  std::map<std::string, std::vector<RankPoint>> rank_trajectory;
  std::map<std::string, std::optional<int>> final_rank;
  std::vector<Json> final_statuses;  // {id, suspect, status, jaccard}
  std::vector<cnc::HuntRecord> hunts;
  Json plants = Json::array();
  fleet::Cost total_cost = 0;  // charged by all hunt containers

  Json to_json() const;
};

// `planted_at` is the first plant tick per malware.
EvalReport evaluate(const cnc::HuntLoop& loop, const std::set<std::string>& ground_truth,
                    const std::map<std::string, Tick>& planted_at);

// Default base config for scenario runs: reactive loop, everything else at
// library defaults.
cnc::Config scenario_defaults();

// Builds a fresh fleet and loop, replays the timeline and advances until
// quiescent (or max_ticks). Throws invalid-script, unknown-profile.
EvalReport run_scenario(const ScenarioScript& script, attackdb::GraphPtr graph,
                        const cnc::Config& base = scenario_defaults());

}  // namespace huntloop::scenario
