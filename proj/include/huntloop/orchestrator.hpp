#pragma once

// Command and control: the hunting loop, hypothesis lifecycle, workflow
// containers and the JSON Lines journal they are persisted to.

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "huntloop/attackdb.hpp"
#include "huntloop/container.hpp"
#include "huntloop/evidence_store.hpp"
#include "huntloop/fleet.hpp"
#include "huntloop/generator.hpp"
#include "huntloop/hypothesis.hpp"
#include "huntloop/mediator.hpp"

namespace huntloop::cnc {

using evidence::Tick;
using fleet::Cost;
using hypothesis::Hypothesis;
using hypothesis::Sighting;

enum class LoopMode { kReactive, kProactive, kBoth };

std::string_view to_string(LoopMode m);
std::optional<LoopMode> parse_loop_mode(std::string_view s);

struct LoopConfig {
  LoopMode mode = LoopMode::kBoth;
  int top_k = 3;
  double auto_approve_threshold = 0.3;
  Tick proactive_interval = 20;
  Cost proactive_budget = 400;  // per proactive round
  Cost workflow_budget = 200;

  void validate() const;  // throws Error("invalid-config")
  Json to_json() const;
  static LoopConfig from_json(const Json& j);
};

struct Config {
  hypothesis::WeightTable weights;
  hypothesis::Thresholds thresholds;
  fleet::CostModel costs;
  generator::GeneratorConfig generator;  // costs and thresholds above win
  LoopConfig loop;
  int mediator_retries = 2;
  std::optional<std::string> fleet_path;
  std::optional<std::string> journal_path;
  int snapshot_every = 200;  // journal entries between snapshots; 0 = never
  std::optional<std::string> audit_path;
  std::optional<std::string> graph_path;  // bundle or graph snapshot

  void validate() const;
  Json to_json() const;
  // Missing fields keep defaults. Throws Error("invalid-config").
  static Config from_json(const Json& j);
  // Relative paths in the file resolve against its directory.
  static Config load(const std::string& path);

  generator::GeneratorConfig generator_config() const;
  workflow::ContainerOptions container_options() const;
};

struct Trigger {
  std::vector<Sighting> sightings;

  // {"sightings": [...]} or an alert {"events": [...]} whose observables
  // become external-alert sightings.
  static Trigger from_json(const Json& j);
};

struct HuntRecord {
  std::string hypothesis;
  std::string workflow;  // also the container id
  Tick started = 0;
  std::optional<Tick> ended;
  std::string status = "running";  // container status
  std::string claim;
  std::string rationale;
  double coverage = 0.0;
  bool adjudicated = false;
  std::string outcome;  // hypothesis status after adjudication

  bool operator==(const HuntRecord&) const = default;
  Json to_json() const;
  static HuntRecord from_json(const Json& j);
};

// Append-only JSON Lines file. A torn final line is ignored on read.
class Journal {
 public:
  explicit Journal(std::string path);

  void append(const Json& entry);
  std::size_t lines() const { return lines_; }
  const std::string& path() const { return path_; }

  static std::vector<Json> read(const std::string& path);

 private:
  std::string path_;
  std::size_t lines_ = 0;
};

class HuntLoop {
 public:
  // With a journal path in `config`, prior state is replayed from the
  // snapshot and journal before anything else happens.
  HuntLoop(Config config, attackdb::GraphPtr graph, std::unique_ptr<fleet::Fleet> fleet);
  ~HuntLoop();

  HuntLoop(const HuntLoop&) = delete;
  HuntLoop& operator=(const HuntLoop&) = delete;

  // Reactive entry point. Returns the hypotheses created or refreshed. The
  // sightings are kept as evidence even when the loop is proactive-only.
  std::vector<Hypothesis> on_external_trigger(const Trigger& trigger);
  // Returns the workflow ids launched this round.
  std::vector<std::string> proactive_tick(Tick now);
  // Throws unknown-container, container-running.
  HuntRecord adjudicate(const std::string& container_id);

  // Analyst actions. Throw unknown-hypothesis, terminal-hypothesis,
  // illegal-transition, and generator errors for approve.
  Hypothesis approve(const std::string& id);
  Hypothesis augment(const std::string& id, const ObservableSet& add, const ObservableSet& remove);
  Hypothesis pin(const std::string& id);
  Hypothesis dismiss(const std::string& id);

  // One loop iteration at `now`: fleet clock, alert delivery, container
  // steps, adjudication, proactive round. Throws tick-regression.
  void advance(Tick now);
  // No live containers and no parked alert notifications.
  bool quiescent() const;
  // Containers restored from the journal have no live interpreter. This
  // cancels them and returns their hypotheses to proposed.
  std::vector<std::string> recover_orphans();

  // Reads. Hypotheses come back in rank order.
  std::vector<Hypothesis> hypotheses(std::optional<hypothesis::Status> status = std::nullopt) const;
  std::optional<Hypothesis> hypothesis(const std::string& id) const;
  std::vector<HuntRecord> records() const;
  std::optional<HuntRecord> record(const std::string& workflow_id) const;
  // {"workflow", "state", "record"}; throws unknown-workflow.
  Json workflow_view(const std::string& workflow_id) const;
  std::vector<workflow::AuditEntry> audit(const std::string& workflow_id) const;
  std::vector<evidence::AlertNotification> alerts() const;
  std::vector<evidence::Event> search(const evidence::Query& q) const;
  Json neighbors(const std::string& id, int depth) const;
  std::vector<Sighting> sightings() const;
  ObservableSet evidence() const;
  // {"tick", "order": [suspect...]} after every re-rank.
  std::vector<Json> rankings() const;
  std::vector<Json> log() const;
  Tick now() const;

  // Everything the journal persists, as one document.
  Json state_json() const;

  fleet::Fleet& fleet() { return *fleet_; }
  evidence::EvidenceStore& store() { return store_; }
  const attackdb::AttackGraph& graph() const { return *graph_; }
  const Config& config() const { return config_; }

 private:
  void commit(Json op);
  void apply(const Json& op);
  void replay();
  void snapshot();

  void put_hypothesis(const Hypothesis& h);
  void put_record(const HuntRecord& r);
  void put_container(const std::string& id, const Json& workflow, const Json& state);
  void add_sightings(const std::vector<Sighting>& s);
  void note(Json entry);
  void rerank();
  void save_counters();

  Hypothesis& find_hypothesis(const std::string& id);
  bool eligible_new(const std::string& suspect, const ObservableSet& sighted) const;
  std::optional<std::string> live_hypothesis(const std::string& suspect) const;
  std::string launch(Hypothesis& h);
  void cancel_container(const std::string& workflow_id, const std::string& reason);
  HuntRecord adjudicate_locked(const std::string& container_id);
  std::vector<std::string> proactive_locked(Tick now);
  void sync_containers();

  Config config_;
  attackdb::GraphPtr graph_;
  std::unique_ptr<fleet::Fleet> fleet_;
  evidence::EvidenceStore store_;
  workflow::FleetMediator mediator_;
  std::unique_ptr<Journal> journal_;
  bool replaying_ = false;

  mutable std::recursive_mutex mu_;
  Tick now_ = 0;
  std::int64_t next_hypothesis_ = 1;
  std::int64_t next_workflow_ = 1;
  Tick last_proactive_ = 0;
  std::map<std::string, Hypothesis> hypotheses_;
  std::map<std::string, HuntRecord> records_;
  std::map<std::string, Json> workflows_;  // id -> workflow document
  std::map<std::string, Json> container_states_;
  std::map<std::string, std::unique_ptr<workflow::Container>> live_;
  std::vector<Sighting> sightings_;
  std::vector<Json> rankings_;
  std::vector<Json> log_;
};

}  // namespace huntloop::cnc
