#!/usr/bin/env python3
"""Generate the ATT&CK-shaped fixture bundle (deterministic).

Shape: tactics, techniques (part-of tactics), malware and tools using
techniques, campaigns and intrusion sets, indicator pulses and behavioral
observed-data. A handful of defects (duplicates, dangling references,
incompatible relationship kinds, malformed objects) exercise rejection.

    tools/make_attack_fixture.py > fixtures/attack_fixture_bundle.json
"""

import json
import random
import sys

rng = random.Random(20201)

TACTICS = ["initial-access", "execution", "persistence", "privilege-escalation",
           "defense-evasion", "credential-access", "discovery", "lateral-movement",
           "collection", "command-and-control", "exfiltration", "impact"]

objects = []
rels = []


def rel(kind, src, dst):
    rels.append({"type": "relationship", "relationship_type": kind,
                 "source_ref": src, "target_ref": dst})


for i, t in enumerate(TACTICS):
    objects.append({"type": "x-tactic", "id": f"x-mitre-tactic--{i:02d}", "name": t})

techniques = []
for i in range(60):
    tid = f"attack-pattern--T{1000 + i}"
    techniques.append(tid)
    objects.append({"type": "attack-pattern", "id": tid, "name": f"Technique T{1000 + i}"})
    for tac in rng.sample(range(len(TACTICS)), rng.randint(1, 2)):
        rel("part-of", tid, f"x-mitre-tactic--{tac:02d}")

malware = []
for i in range(20):
    mid = f"malware--M{i:03d}"
    malware.append(mid)
    objects.append({"type": "malware", "id": mid, "name": f"Family {i}"})
    for t in rng.sample(techniques, rng.randint(2, 8)):
        rel("uses", mid, t)

tools = []
for i in range(6):
    tid = f"tool--T{i:03d}"
    tools.append(tid)
    objects.append({"type": "tool", "id": tid, "name": f"Tool {i}"})
    for t in rng.sample(techniques, rng.randint(1, 4)):
        rel("uses", tid, t)

sets = []
for i in range(4):
    sid = f"intrusion-set--G{i:03d}"
    sets.append(sid)
    objects.append({"type": "intrusion-set", "id": sid, "name": f"Group {i}"})
    for m in rng.sample(malware, 3):
        rel("uses", sid, m)

for i in range(5):
    cid = f"campaign--C{i:03d}"
    objects.append({"type": "campaign", "id": cid, "name": f"Campaign {i}"})
    rel("attributed-to", cid, rng.choice(sets))
    for m in rng.sample(malware, 2):
        rel("part-of", m, cid)


def value(otype, n):
    if otype == "file-hash-sha256":
        return "%064x" % rng.getrandbits(256)
    if otype == "file-hash-md5":
        return "%032X" % rng.getrandbits(128)
    if otype == "ip":
        return "10.%d.%d.%d" % (rng.randrange(256), rng.randrange(256), rng.randrange(1, 255))
    if otype == "domain":
        return "C%d-update.Example.NET" % n
    if otype == "url":
        return "HTTP://Cdn%d.Example.COM/Payload/%d.bin" % (n, n)
    if otype == "file-path":
        return "C:\\Users\\Public\\Stage%d.DLL" % n
    if otype == "process-name":
        return "Svc%dHost.EXE" % n
    if otype == "registry-key":
        return "HKCU\\Software\\Microsoft\\Windows\\CurrentVersion\\Run\\Upd%d" % n
    if otype == "mutex":
        return "Global\\MTX_%d" % n
    return "ops%d@mail.example.org" % n


BEHAVIORAL = ["registry-key", "mutex", "process-name", "file-path", "domain"]
counter = 0
shared = []
for m in malware:
    # Indicator pulse: indicative observed-data plus an indicator pattern.
    counter += 1
    h = value("file-hash-sha256", counter)
    ip = value("ip", counter)
    od = f"observed-data--pulse-{m[-4:]}"
    objects.append({"type": "observed-data", "id": od, "x_indicative": True,
                    "observables": [{"type": "file-hash-sha256", "value": h},
                                    {"type": "ip", "value": ip}]})
    rel("part-of", od, m)
    ind = f"indicator--{m[-4:]}"
    objects.append({"type": "indicator", "id": ind, "pattern": f"file-hash-sha256:{h}"})
    rel("indicates", ind, m)
    # Behavioral enrichment from sandbox reports.
    for r in range(rng.randint(1, 3)):
        items = []
        for otype in rng.sample(BEHAVIORAL, 3):
            counter += 1
            items.append({"type": otype, "value": value(otype, counter)})
        if shared and rng.random() < 0.4:
            items.append(rng.choice(shared))
        shared.append(items[0])
        od = f"observed-data--beh-{m[-4:]}-{r}"
        objects.append({"type": "observed-data", "id": od, "observables": items})
        rel("part-of", od, m)

objects.extend(rels)

# Defects.
objects.append({"type": "malware", "id": "malware--M000", "name": "Family 0 (renamed)"})
objects.append(dict(rels[0]))
objects.append({"type": "relationship", "relationship_type": "uses",
                "source_ref": "malware--M001", "target_ref": "attack-pattern--T9999"})
objects.append({"type": "relationship", "relationship_type": "indicates",
                "source_ref": "malware--M002", "target_ref": techniques[0]})
objects.append({"type": "indicator", "id": "indicator--broken", "pattern": ""})
objects.append({"type": "course-of-action", "id": "course-of-action--1"})
objects.append({"type": "observed-data", "id": "observed-data--bad",
                "observables": [{"type": "sha1", "value": "abc"}]})

json.dump({"type": "bundle", "objects": objects}, sys.stdout, indent=1)
sys.stdout.write("\n")
