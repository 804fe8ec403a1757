#pragma once

// AttackDB: the layered CTI knowledge graph.
//
// Graph snapshots are immutable. ingest_bundle() never touches its base
// snapshot; it builds a fresh one, so any number of readers may hold a
// shared_ptr<const AttackGraph> while ingestion runs.

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "huntloop/json_io.hpp"
#include "huntloop/observable.hpp"

namespace huntloop::attackdb {

enum class SdoKind {
  kTactic,
  kAttackPattern,
  kMalware,
  kTool,
  kCampaign,
  kIntrusionSet,
  kIndicator,
  kObservedData,
};

enum class RelKind { kUses, kIndicates, kAttributedTo, kPartOf, kContains };

// Pyramid-of-Pain layer, top (hardest for the attacker to change) first.
enum class PopLevel { kTechnique, kToolMalware, kIoc, kArtifact };

std::string_view to_string(SdoKind k);
std::string_view bundle_type(SdoKind k);  // "x-tactic", "attack-pattern", ...
std::optional<SdoKind> parse_bundle_type(std::string_view s);
std::string_view to_string(RelKind k);
std::optional<RelKind> parse_rel_kind(std::string_view s);
std::string_view to_string(PopLevel l);
PopLevel pop_level_of(SdoKind k);

// The fixed endpoint-kind compatibility table for relationships.
bool compatible(RelKind rel, SdoKind src, SdoKind dst);

struct SdoNode {
  std::string id;
  SdoKind kind = SdoKind::kAttackPattern;
  std::string name;
  // Indicators carry "pattern"; observed-data carries "indicative"
  // ("true"/"false"). Any other string attribute from the bundle is kept.
  std::map<std::string, std::string> props;
  // Observed-data only: the observables it contains.
  ObservableSet observables;

  bool indicative() const;
  bool operator==(const SdoNode&) const = default;
};

struct Relationship {
  std::string src;
  std::string dst;
  RelKind kind = RelKind::kUses;

  auto operator<=>(const Relationship&) const = default;
};

using ObservableIndex = std::map<Observable, std::set<std::string>>;
using KindIndex = std::map<SdoKind, std::set<std::string>>;

class AttackGraph {
 public:
  AttackGraph() = default;
  // Derives every index from `nodes` and `edges`. Callers are expected to
  // have validated edges (endpoints exist, kinds compatible).
  AttackGraph(std::map<std::string, SdoNode> nodes, std::set<Relationship> edges);

  const std::map<std::string, SdoNode>& nodes() const { return nodes_; }
  const std::set<Relationship>& edges() const { return edges_; }
  const ObservableIndex& observable_index() const { return observable_index_; }
  const KindIndex& kind_index() const { return kind_index_; }
  const std::map<std::string, PopLevel>& pop_levels() const { return pop_levels_; }

  const SdoNode* find(std::string_view id) const;
  const std::set<std::string>& of_kind(SdoKind k) const;
  bool empty() const { return nodes_.empty(); }

  // Targets of `kind` edges leaving `src` (sorted).
  const std::set<std::string>& out(const std::string& src, RelKind kind) const;
  // Sources of `kind` edges entering `dst` (sorted).
  const std::set<std::string>& in(const std::string& dst, RelKind kind) const;

  // Serializes as a bundle document that ingests back to an equal graph.
  Json to_bundle() const;

 private:
  std::map<std::string, SdoNode> nodes_;
  std::set<Relationship> edges_;
  ObservableIndex observable_index_;
  KindIndex kind_index_;
  std::map<std::string, PopLevel> pop_levels_;
  std::map<std::pair<std::string, RelKind>, std::set<std::string>> out_;
  std::map<std::pair<std::string, RelKind>, std::set<std::string>> in_;
};

using GraphPtr = std::shared_ptr<const AttackGraph>;

// Independent derivations used by the index-consistency invariant.
ObservableIndex derive_observable_index(const std::map<std::string, SdoNode>& nodes);
KindIndex derive_kind_index(const std::map<std::string, SdoNode>& nodes);

struct Rejection {
  std::string ref;  // object id, or "objects[i]" when the id is unusable
  std::string reason;  // malformed-object, dangling-reference, ...
  bool operator==(const Rejection&) const = default;
};

struct IngestReport {
  std::int64_t nodes_added = 0;
  std::int64_t nodes_merged = 0;
  std::int64_t edges_added = 0;
  std::int64_t edges_merged = 0;
  std::int64_t observables_added = 0;
  std::int64_t rejected = 0;
  std::vector<Rejection> rejections;

  Json to_json() const;
};

struct IngestConfig {
  // When set, objects whose "x_source" (or the bundle-level "x_source") is
  // not listed are rejected as untrusted-source.
  std::optional<std::set<std::string>> trusted_sources;
};

struct IngestResult {
  GraphPtr graph;
  IngestReport report;
};

// Throws Error("malformed-document") when the document is not a bundle.
// Per-object defects are rejected and reported; ingestion continues.
IngestResult ingest_bundle(const Json& bundle, const AttackGraph& base,
                           const IngestConfig& config = {});
IngestResult ingest_bundle_text(std::string_view text, const AttackGraph& base,
                                const IngestConfig& config = {});

// Attack-pattern ids reachable over one `uses` edge.
// Errors: unknown-id, wrong-kind.
std::set<std::string> ioa_of(const AttackGraph& g, const std::string& malware_id);

// Number of template paths
//   observable -contains-> observed-data -part-of-> malware -uses-> technique.
// Errors: unknown-technique.
std::int64_t affinity(const AttackGraph& g, const Observable& obs, const std::string& technique_id);

// With indicative_only, keeps observables that sit in an indicative
// observed-data node and are tagged by an indicator pattern that indicates
// the malware. Errors: unknown-id, wrong-kind.
ObservableSet observables_of(const AttackGraph& g, const std::string& malware_id,
                             bool indicative_only = false);

std::map<std::string, ObservableSet> candidates_for(const AttackGraph& g,
                                                    const ObservableSet& sighted);

// Undirected breadth-first neighborhood, used by the graph explorer.
// Errors: unknown-id.
Json neighbors(const AttackGraph& g, const std::string& id, int depth);

GraphPtr load_snapshot(const std::string& path);  // missing file -> empty graph
void save_snapshot(const AttackGraph& g, const std::string& path);

// Holds the currently published snapshot. Readers take a copy of the
// pointer; publish() swaps it atomically.
class GraphStore {
 public:
  explicit GraphStore(GraphPtr initial = std::make_shared<const AttackGraph>())
      : current_(std::move(initial)) {}

  GraphPtr current() const {
    std::lock_guard lock(mu_);
    return current_;
  }
  void publish(GraphPtr g) {
    std::lock_guard lock(mu_);
    current_ = std::move(g);
  }

 private:
  mutable std::mutex mu_;
  GraphPtr current_;
};

}  // namespace huntloop::attackdb
