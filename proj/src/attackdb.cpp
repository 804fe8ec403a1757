#include "huntloop/attackdb.hpp"

#include <array>
#include <cstdio>
#include <deque>
#include <fstream>
#include <sstream>
#include <utility>

#include "huntloop/error.hpp"

namespace huntloop::attackdb {

namespace {

constexpr std::array<std::pair<SdoKind, std::string_view>, 8> kKindNames{{
    {SdoKind::kTactic, "x-tactic"},
    {SdoKind::kAttackPattern, "attack-pattern"},
    {SdoKind::kMalware, "malware"},
    {SdoKind::kTool, "tool"},
    {SdoKind::kCampaign, "campaign"},
    {SdoKind::kIntrusionSet, "intrusion-set"},
    {SdoKind::kIndicator, "indicator"},
    {SdoKind::kObservedData, "observed-data"},
}};

constexpr std::array<std::pair<RelKind, std::string_view>, 5> kRelNames{{
    {RelKind::kUses, "uses"},
    {RelKind::kIndicates, "indicates"},
    {RelKind::kAttributedTo, "attributed-to"},
    {RelKind::kPartOf, "part-of"},
    {RelKind::kContains, "contains"},
}};

struct Compat {
  RelKind rel;
  SdoKind src;
  SdoKind dst;
};

constexpr Compat kCompatTable[] = {
    {RelKind::kUses, SdoKind::kMalware, SdoKind::kAttackPattern},
    {RelKind::kUses, SdoKind::kTool, SdoKind::kAttackPattern},
    {RelKind::kUses, SdoKind::kMalware, SdoKind::kTool},
    {RelKind::kUses, SdoKind::kCampaign, SdoKind::kAttackPattern},
    {RelKind::kUses, SdoKind::kCampaign, SdoKind::kMalware},
    {RelKind::kUses, SdoKind::kCampaign, SdoKind::kTool},
    {RelKind::kUses, SdoKind::kIntrusionSet, SdoKind::kAttackPattern},
    {RelKind::kUses, SdoKind::kIntrusionSet, SdoKind::kMalware},
    {RelKind::kUses, SdoKind::kIntrusionSet, SdoKind::kTool},
    {RelKind::kIndicates, SdoKind::kIndicator, SdoKind::kMalware},
    {RelKind::kIndicates, SdoKind::kIndicator, SdoKind::kTool},
    {RelKind::kIndicates, SdoKind::kIndicator, SdoKind::kAttackPattern},
    {RelKind::kIndicates, SdoKind::kIndicator, SdoKind::kCampaign},
    {RelKind::kIndicates, SdoKind::kIndicator, SdoKind::kIntrusionSet},
    {RelKind::kAttributedTo, SdoKind::kCampaign, SdoKind::kIntrusionSet},
    {RelKind::kPartOf, SdoKind::kMalware, SdoKind::kCampaign},
    {RelKind::kPartOf, SdoKind::kTool, SdoKind::kCampaign},
    {RelKind::kPartOf, SdoKind::kAttackPattern, SdoKind::kTactic},
    {RelKind::kPartOf, SdoKind::kObservedData, SdoKind::kMalware},
    {RelKind::kPartOf, SdoKind::kObservedData, SdoKind::kTool},
};

const std::set<std::string> kEmptyIds;

bool source_trusted(const IngestConfig& config, const Json& obj, const Json& bundle) {
  if (!config.trusted_sources) return true;
  const Json* source = nullptr;
  if (obj.contains("x_source")) source = &obj["x_source"];
  else if (bundle.contains("x_source")) source = &bundle["x_source"];
  return source && source->is_string() &&
         config.trusted_sources->count(source->get<std::string>()) > 0;
}

struct Ingester {
  const IngestConfig& config;
  std::map<std::string, SdoNode> nodes;
  std::set<Relationship> edges;
  IngestReport report;

  void reject(std::string ref, std::string reason) {
    ++report.rejected;
    report.rejections.push_back({std::move(ref), std::move(reason)});
  }

  // Returns nullopt (after recording the rejection) on a defective object.
  std::optional<SdoNode> parse_node(const Json& obj, SdoKind kind, const std::string& id) {
    SdoNode node;
    node.id = id;
    node.kind = kind;
    if (obj.contains("name")) {
      if (!obj["name"].is_string()) return reject(id, "malformed-object"), std::nullopt;
      node.name = obj["name"].get<std::string>();
    }
    for (const auto& [key, value] : obj.items()) {
      if (key == "type" || key == "id" || key == "name" || key == "observables" ||
          key == "pattern" || key == "x_indicative")
        continue;
      if (value.is_string()) node.props[key] = value.get<std::string>();
    }
    try {
      if (kind == SdoKind::kIndicator) {
        if (!obj.contains("pattern") || !obj["pattern"].is_string() ||
            obj["pattern"].get<std::string>().empty())
          return reject(id, "missing-pattern"), std::nullopt;
        // Validates "<otype>:<value>" and stores the normalized form.
        node.props["pattern"] = Observable::from_pattern(obj["pattern"].get<std::string>()).pattern();
      }
      if (kind == SdoKind::kObservedData) {
        bool indicative = false;
        if (obj.contains("x_indicative")) {
          if (!obj["x_indicative"].is_boolean()) return reject(id, "malformed-object"), std::nullopt;
          indicative = obj["x_indicative"].get<bool>();
        }
        node.props["indicative"] = indicative ? "true" : "false";
        node.observables = observables_from_json(obj.value("observables", Json::array()));
      }
    } catch (const Error&) {
      return reject(id, "invalid-observable"), std::nullopt;
    }
    return node;
  }

  void add_node(SdoNode node) {
    auto it = nodes.find(node.id);
    if (it == nodes.end()) {
      ++report.nodes_added;
      nodes.emplace(node.id, std::move(node));
      return;
    }
    SdoNode& existing = it->second;
    if (existing.kind != node.kind) return reject(node.id, "kind-conflict");
    ++report.nodes_merged;
    if (!node.name.empty()) existing.name = node.name;
    for (auto& [k, v] : node.props) existing.props[k] = v;
    existing.observables.insert(node.observables.begin(), node.observables.end());
  }

  void add_relationship(const Json& obj, const std::string& ref) {
    if (!obj.contains("relationship_type") || !obj.contains("source_ref") ||
        !obj.contains("target_ref") || !obj["relationship_type"].is_string() ||
        !obj["source_ref"].is_string() || !obj["target_ref"].is_string())
      return reject(ref, "malformed-object");
    const auto kind = parse_rel_kind(obj["relationship_type"].get<std::string>());
    if (!kind) return reject(ref, "incompatible-relationship-kind");
    Relationship rel{obj["source_ref"].get<std::string>(), obj["target_ref"].get<std::string>(),
                     *kind};
    const auto src = nodes.find(rel.src);
    const auto dst = nodes.find(rel.dst);
    if (src == nodes.end() || dst == nodes.end()) return reject(ref, "dangling-reference");
    if (!compatible(rel.kind, src->second.kind, dst->second.kind))
      return reject(ref, "incompatible-relationship-kind");
    if (edges.insert(std::move(rel)).second) ++report.edges_added;
    else ++report.edges_merged;
  }
};

}  // namespace

std::string_view to_string(SdoKind k) {
  if (k == SdoKind::kTactic) return "tactic";
  return bundle_type(k);
}

std::string_view bundle_type(SdoKind k) {
  for (const auto& [kind, name] : kKindNames)
    if (kind == k) return name;
  return "unknown";
}

std::optional<SdoKind> parse_bundle_type(std::string_view s) {
  for (const auto& [kind, name] : kKindNames)
    if (name == s) return kind;
  return std::nullopt;
}

std::string_view to_string(RelKind k) {
  for (const auto& [kind, name] : kRelNames)
    if (kind == k) return name;
  return "unknown";
}

std::optional<RelKind> parse_rel_kind(std::string_view s) {
  for (const auto& [kind, name] : kRelNames)
    if (name == s) return kind;
  return std::nullopt;
}

std::string_view to_string(PopLevel l) {
  switch (l) {
    case PopLevel::kTechnique:
      return "technique";
    case PopLevel::kToolMalware:
      return "tool-malware";
    case PopLevel::kIoc:
      return "ioc";
    case PopLevel::kArtifact:
      return "artifact";
  }
  return "unknown";
}

PopLevel pop_level_of(SdoKind k) {
  switch (k) {
    case SdoKind::kMalware:
    case SdoKind::kTool:
      return PopLevel::kToolMalware;
    case SdoKind::kIndicator:
      return PopLevel::kIoc;
    case SdoKind::kObservedData:
      return PopLevel::kArtifact;
    default:
      return PopLevel::kTechnique;
  }
}

bool compatible(RelKind rel, SdoKind src, SdoKind dst) {
  for (const auto& c : kCompatTable)
    if (c.rel == rel && c.src == src && c.dst == dst) return true;
  return false;
}

bool SdoNode::indicative() const {
  auto it = props.find("indicative");
  return it != props.end() && it->second == "true";
}

AttackGraph::AttackGraph(std::map<std::string, SdoNode> nodes, std::set<Relationship> edges)
    : nodes_(std::move(nodes)), edges_(std::move(edges)) {
  observable_index_ = derive_observable_index(nodes_);
  kind_index_ = derive_kind_index(nodes_);
  for (const auto& [id, node] : nodes_) pop_levels_[id] = pop_level_of(node.kind);
  for (const auto& e : edges_) {
    out_[{e.src, e.kind}].insert(e.dst);
    in_[{e.dst, e.kind}].insert(e.src);
  }
}

const SdoNode* AttackGraph::find(std::string_view id) const {
  auto it = nodes_.find(std::string(id));
  return it == nodes_.end() ? nullptr : &it->second;
}

const std::set<std::string>& AttackGraph::of_kind(SdoKind k) const {
  auto it = kind_index_.find(k);
  return it == kind_index_.end() ? kEmptyIds : it->second;
}

const std::set<std::string>& AttackGraph::out(const std::string& src, RelKind kind) const {
  auto it = out_.find({src, kind});
  return it == out_.end() ? kEmptyIds : it->second;
}

const std::set<std::string>& AttackGraph::in(const std::string& dst, RelKind kind) const {
  auto it = in_.find({dst, kind});
  return it == in_.end() ? kEmptyIds : it->second;
}

Json AttackGraph::to_bundle() const {
  Json objects = Json::array();
  for (const auto& [id, node] : nodes_) {
    Json obj{{"type", std::string(bundle_type(node.kind))}, {"id", id}};
    if (!node.name.empty()) obj["name"] = node.name;
    for (const auto& [k, v] : node.props) {
      if (k == "indicative") continue;
      obj[k] = v;
    }
    if (node.kind == SdoKind::kObservedData) {
      obj["x_indicative"] = node.indicative();
      obj["observables"] = observables_to_json(node.observables);
    }
    objects.push_back(std::move(obj));
  }
  for (const auto& e : edges_) {
    objects.push_back({{"type", "relationship"},
                       {"relationship_type", std::string(to_string(e.kind))},
                       {"source_ref", e.src},
                       {"target_ref", e.dst}});
  }
  return Json{{"type", "bundle"}, {"objects", std::move(objects)}};
}

ObservableIndex derive_observable_index(const std::map<std::string, SdoNode>& nodes) {
  ObservableIndex index;
  for (const auto& [id, node] : nodes)
    if (node.kind == SdoKind::kObservedData)
      for (const auto& o : node.observables) index[o].insert(id);
  return index;
}

KindIndex derive_kind_index(const std::map<std::string, SdoNode>& nodes) {
  KindIndex index;
  for (const auto& [id, node] : nodes) index[node.kind].insert(id);
  return index;
}

Json IngestReport::to_json() const {
  Json rej = Json::array();
  for (const auto& r : rejections) rej.push_back({{"ref", r.ref}, {"reason", r.reason}});
  return Json{{"nodes_added", nodes_added},     {"nodes_merged", nodes_merged},
              {"edges_added", edges_added},     {"edges_merged", edges_merged},
              {"observables_added", observables_added},
              {"rejected", rejected},           {"rejections", std::move(rej)}};
}

IngestResult ingest_bundle(const Json& bundle, const AttackGraph& base, const IngestConfig& config) {
  if (!bundle.is_object() || bundle.value("type", "") != "bundle")
    throw Error("malformed-document", "document is not a {\"type\":\"bundle\"} object");
  const Json& objects = require(bundle, "objects", "bundle");
  if (!objects.is_array()) throw Error("malformed-document", "bundle.objects must be an array");

  Ingester in{config, base.nodes(), base.edges(), {}};
  std::vector<std::pair<const Json*, std::string>> relationships;

  for (std::size_t i = 0; i < objects.size(); ++i) {
    const Json& obj = objects[i];
    const std::string fallback_ref = "objects[" + std::to_string(i) + "]";
    if (!obj.is_object() || !obj.contains("type") || !obj["type"].is_string()) {
      in.reject(fallback_ref, "malformed-object");
      continue;
    }
    const std::string type = obj["type"].get<std::string>();
    std::string ref = fallback_ref;
    if (obj.contains("id") && obj["id"].is_string() && !obj["id"].get<std::string>().empty())
      ref = obj["id"].get<std::string>();
    if (!source_trusted(config, obj, bundle)) {
      in.reject(ref, "untrusted-source");
      continue;
    }
    if (type == "relationship") {
      relationships.emplace_back(&obj, ref);
      continue;
    }
    const auto kind = parse_bundle_type(type);
    if (!kind) {
      in.reject(ref, "unsupported-type");
      continue;
    }
    if (ref == fallback_ref) {
      in.reject(ref, "malformed-object");
      continue;
    }
    if (auto node = in.parse_node(obj, *kind, ref)) in.add_node(std::move(*node));
  }
  // Relationships resolve after all nodes so forward references inside one
  // bundle are legal.
  for (const auto& [obj, ref] : relationships) in.add_relationship(*obj, ref);

  const std::size_t observables_before = base.observable_index().size();
  auto graph = std::make_shared<const AttackGraph>(std::move(in.nodes), std::move(in.edges));
  in.report.observables_added =
      static_cast<std::int64_t>(graph->observable_index().size() - observables_before);
  return {std::move(graph), std::move(in.report)};
}

IngestResult ingest_bundle_text(std::string_view text, const AttackGraph& base,
                                const IngestConfig& config) {
  Json doc = Json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded()) throw Error("malformed-document", "bundle is not valid JSON");
  return ingest_bundle(doc, base, config);
}

namespace {

const SdoNode& require_kind(const AttackGraph& g, const std::string& id, SdoKind kind,
                            const char* unknown_code) {
  const SdoNode* node = g.find(id);
  if (!node) throw Error(unknown_code, "no node with id " + id);
  if (node->kind != kind)
    throw Error("wrong-kind", id + " is a " + std::string(to_string(node->kind)) + ", expected " +
                                  std::string(to_string(kind)));
  return *node;
}

}  // namespace

std::set<std::string> ioa_of(const AttackGraph& g, const std::string& malware_id) {
  require_kind(g, malware_id, SdoKind::kMalware, "unknown-id");
  std::set<std::string> out;
  for (const auto& dst : g.out(malware_id, RelKind::kUses))
    if (g.find(dst)->kind == SdoKind::kAttackPattern) out.insert(dst);
  return out;
}

std::int64_t affinity(const AttackGraph& g, const Observable& obs, const std::string& technique_id) {
  require_kind(g, technique_id, SdoKind::kAttackPattern, "unknown-technique");
  auto it = g.observable_index().find(obs);
  if (it == g.observable_index().end()) return 0;
  const auto& users = g.in(technique_id, RelKind::kUses);
  std::int64_t paths = 0;
  for (const auto& od : it->second)
    for (const auto& owner : g.out(od, RelKind::kPartOf))
      if (g.find(owner)->kind == SdoKind::kMalware && users.count(owner)) ++paths;
  return paths;
}

ObservableSet observables_of(const AttackGraph& g, const std::string& malware_id,
                             bool indicative_only) {
  require_kind(g, malware_id, SdoKind::kMalware, "unknown-id");
  ObservableSet tagged;
  if (indicative_only) {
    for (const auto& ind : g.in(malware_id, RelKind::kIndicates))
      if (auto it = g.find(ind)->props.find("pattern"); it != g.find(ind)->props.end())
        tagged.insert(Observable::from_pattern(it->second));
  }
  ObservableSet out;
  for (const auto& od_id : g.in(malware_id, RelKind::kPartOf)) {
    const SdoNode* od = g.find(od_id);
    if (od->kind != SdoKind::kObservedData) continue;
    if (!indicative_only) {
      out.insert(od->observables.begin(), od->observables.end());
    } else if (od->indicative()) {
      for (const auto& o : od->observables)
        if (tagged.count(o)) out.insert(o);
    }
  }
  return out;
}

std::map<std::string, ObservableSet> candidates_for(const AttackGraph& g,
                                                    const ObservableSet& sighted) {
  std::map<std::string, ObservableSet> out;
  for (const auto& o : sighted) {
    auto it = g.observable_index().find(o);
    if (it == g.observable_index().end()) continue;
    for (const auto& od : it->second)
      for (const auto& owner : g.out(od, RelKind::kPartOf))
        if (g.find(owner)->kind == SdoKind::kMalware) out[owner].insert(o);
  }
  return out;
}

Json neighbors(const AttackGraph& g, const std::string& id, int depth) {
  if (!g.find(id)) throw Error("unknown-id", "no node with id " + id);
  std::map<std::string, int> dist{{id, 0}};
  std::deque<std::string> queue{id};
  std::set<Relationship> seen_edges;
  while (!queue.empty()) {
    const std::string cur = queue.front();
    queue.pop_front();
    const int d = dist[cur];
    if (d >= depth) continue;
    for (const auto& e : g.edges()) {
      if (e.src != cur && e.dst != cur) continue;
      seen_edges.insert(e);
      const std::string& other = e.src == cur ? e.dst : e.src;
      if (dist.emplace(other, d + 1).second) queue.push_back(other);
    }
  }
  Json nodes = Json::array();
  for (const auto& [nid, d] : dist) {
    const SdoNode& n = *g.find(nid);
    nodes.push_back({{"id", nid},
                     {"kind", std::string(to_string(n.kind))},
                     {"name", n.name},
                     {"pop_level", std::string(to_string(pop_level_of(n.kind)))},
                     {"distance", d}});
  }
  Json edges = Json::array();
  for (const auto& e : seen_edges)
    if (dist.count(e.src) && dist.count(e.dst))
      edges.push_back({{"src", e.src}, {"dst", e.dst}, {"kind", std::string(to_string(e.kind))}});
  return Json{{"root", id}, {"depth", depth}, {"nodes", nodes}, {"edges", edges}};
}

GraphPtr load_snapshot(const std::string& path) {
  std::ifstream in(path);
  if (!in) return std::make_shared<const AttackGraph>();
  std::stringstream buf;
  buf << in.rdbuf();
  return ingest_bundle_text(buf.str(), AttackGraph{}).graph;
}

void save_snapshot(const AttackGraph& g, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error("io-error", "cannot write " + tmp);
    out << g.to_bundle().dump(1) << '\n';
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw Error("io-error", "cannot publish snapshot " + path);
}

}  // namespace huntloop::attackdb
