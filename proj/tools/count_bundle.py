#!/usr/bin/env python3
"""Parse-and-count a STIX-subset bundle without using the C++ ingester.

Writes a manifest with the node and edge counts a correct ingestion of the
bundle (into an empty graph) must produce.

    tools/count_bundle.py fixtures/attack_fixture_bundle.json > manifest.json
"""

import json
import sys

NODE_TYPES = {
    "x-tactic", "attack-pattern", "malware", "tool", "campaign",
    "intrusion-set", "indicator", "observed-data",
}

OTYPES = {
    "file-hash-sha256", "file-hash-md5", "ip", "domain", "url", "file-path",
    "process-name", "registry-key", "mutex", "email",
}

ALLOWED = {
    ("uses", "malware", "attack-pattern"), ("uses", "tool", "attack-pattern"),
    ("uses", "malware", "tool"), ("uses", "campaign", "attack-pattern"),
    ("uses", "campaign", "malware"), ("uses", "campaign", "tool"),
    ("uses", "intrusion-set", "attack-pattern"), ("uses", "intrusion-set", "malware"),
    ("uses", "intrusion-set", "tool"),
    ("indicates", "indicator", "malware"), ("indicates", "indicator", "tool"),
    ("indicates", "indicator", "attack-pattern"), ("indicates", "indicator", "campaign"),
    ("indicates", "indicator", "intrusion-set"),
    ("attributed-to", "campaign", "intrusion-set"),
    ("part-of", "malware", "campaign"), ("part-of", "tool", "campaign"),
    ("part-of", "attack-pattern", "x-tactic"), ("part-of", "observed-data", "malware"),
    ("part-of", "observed-data", "tool"),
}


def norm(otype, value):
    value = value.strip()
    if otype == "url":
        rest = value
        head = ""
        if "://" in value:
            i = value.index("://") + 3
            head, rest = value[:i], value[i:]
        cut = len(rest)
        for ch in "/?#":
            j = rest.find(ch)
            if j != -1:
                cut = min(cut, j)
        return (head + rest[:cut]).lower() + rest[cut:]
    if otype == "file-path":
        return value.lower().replace("\\", "/")
    if otype == "domain":
        v = value.lower()
        while len(v) > 1 and v.endswith("."):
            v = v[:-1]
        return v
    return value.lower()


def valid_observable(o):
    return (isinstance(o, dict) and o.get("type") in OTYPES
            and isinstance(o.get("value"), str) and o["value"].strip() != "")


def main(path):
    with open(path) as f:
        doc = json.load(f)
    kinds = {}
    observables = {}
    rejected = 0
    rels = []
    for obj in doc["objects"]:
        t = obj.get("type")
        if t == "relationship":
            rels.append(obj)
            continue
        oid = obj.get("id")
        if t not in NODE_TYPES or not isinstance(oid, str) or not oid:
            rejected += 1
            continue
        if t == "indicator":
            pat = obj.get("pattern", "")
            otype, _, value = pat.partition(":")
            if otype.strip() not in OTYPES or not value.strip():
                rejected += 1
                continue
        obs = []
        if t == "observed-data":
            items = obj.get("observables", [])
            if not all(valid_observable(o) for o in items):
                rejected += 1
                continue
            obs = [(o["type"], norm(o["type"], o["value"])) for o in items]
        if oid in kinds and kinds[oid] != t:
            rejected += 1
            continue
        kinds[oid] = t
        observables.setdefault(oid, set()).update(obs)
    edges = set()
    for r in rels:
        key = (r.get("relationship_type"), r.get("source_ref"), r.get("target_ref"))
        src, dst = kinds.get(key[1]), kinds.get(key[2])
        if src is None or dst is None or (key[0], src, dst) not in ALLOWED:
            rejected += 1
            continue
        edges.add(key)
    by_kind = {}
    for t in kinds.values():
        by_kind[t] = by_kind.get(t, 0) + 1
    distinct = set()
    for s in observables.values():
        distinct |= s
    manifest = {
        "nodes": len(kinds),
        "edges": len(edges),
        "rejected": rejected,
        "distinct_observables": len(distinct),
        "nodes_by_type": dict(sorted(by_kind.items())),
    }
    json.dump(manifest, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main(sys.argv[1])
