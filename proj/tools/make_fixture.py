#!/usr/bin/env python3
"""Writes the small synthetic staging corpus and internet map in data/fixture/.

Deterministic for a given --seed; the committed files were produced with the
defaults. The corpus is hand-shaped rather than measured: a 240-relay pool with
per-relay uptime, flag and bandwidth traits, 24 hourly snapshots (~150 relays
each), a few descriptors per relay (some relays have none), five days of
per-country user counts, and a 20-city map over the same countries.
"""

import argparse
import json
import math
import random
from pathlib import Path

COUNTRIES = ["us", "de", "fr", "nl", "gb", "ca", "se", "ru"]
CITY_COUNTRIES = ["us"] * 5 + ["de"] * 3 + ["fr"] * 2 + ["nl"] * 2 + ["gb"] * 2 + ["ca"] * 2 + ["se"] * 2 + ["ru"] * 2
USER_SHARE = {"us": 0.30, "de": 0.20, "fr": 0.10, "nl": 0.05, "gb": 0.10, "ca": 0.05, "se": 0.05, "ru": 0.15}


def relays(rnd, n):
    pool = []
    for k in range(n):
        cc = rnd.choices(COUNTRIES, weights=[5, 6, 3, 3, 2, 2, 2, 2])[0]
        pool.append({
            "fp": f"{k:04X}" + "".join(rnd.choice("0123456789ABCDEF") for _ in range(36)),
            "ip": f"10.{k // 250}.{k % 250}.{rnd.randint(1, 254)}",
            "cc": cc,
            "uptime": rnd.choice([0.3, 0.6, 0.8, 0.95, 1.0]),
            "guard_p": rnd.choice([0.0, 0.0, 0.5, 0.9, 1.0]),
            "exit_p": rnd.choice([0.0, 0.0, 0.0, 0.0, 0.8, 1.0]),
            "bw": math.exp(rnd.gauss(math.log(3e6), 1.0)),
        })
    return pool


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/fixture")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--relays", type=int, default=240)
    ap.add_argument("--snapshots", type=int, default=24)
    args = ap.parse_args()
    rnd = random.Random(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    pool = relays(rnd, args.relays)
    t0 = 1_700_000_000
    with open(out / "snapshots.jsonl", "w") as f:
        for h in range(args.snapshots):
            present = []
            for r in pool:
                if rnd.random() >= r["uptime"] * 0.78:
                    continue
                present.append({
                    "fp": r["fp"], "ip": r["ip"], "cc": r["cc"],
                    "guard": rnd.random() < r["guard_p"],
                    "exit": rnd.random() < r["exit_p"],
                    "weight": round(r["bw"] / 1000.0 * rnd.uniform(0.8, 1.2)),
                })
            f.write(json.dumps({"timestamp": t0 + 3600 * h, "relays": present}) + "\n")

    with open(out / "descriptors.jsonl", "w") as f:
        for r in pool:
            if rnd.random() < 0.04:
                continue  # never published a descriptor
            for _ in range(rnd.randint(1, 4)):
                obs = round(r["bw"] * rnd.uniform(0.6, 1.0))
                rate = round(r["bw"] * rnd.choice([0.5, 1.0, 2.0, 4.0]))
                f.write(json.dumps({"fp": r["fp"], "obs_bw": obs, "rate": rate, "burst": rate * 2}) + "\n")

    with open(out / "users.jsonl", "w") as f:
        for d in range(1, 6):
            for cc, share in USER_SHARE.items():
                f.write(json.dumps({"date": f"2023-11-0{d}", "cc": cc,
                                    "count": round(100000 * share * rnd.uniform(0.9, 1.1))}) + "\n")

    cities = [(f"c{i:02d}", cc) for i, cc in enumerate(CITY_COUNTRIES)]
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        '<graphml xmlns="http://graphml.graphdrawing.org/xmlns">',
        '  <key id="d0" for="node" attr.name="country_code" attr.type="string"/>',
        '  <key id="d1" for="node" attr.name="bandwidth_up" attr.type="double"/>',
        '  <key id="d2" for="node" attr.name="bandwidth_down" attr.type="double"/>',
        '  <key id="d3" for="edge" attr.name="latency" attr.type="double"/>',
        '  <key id="d4" for="edge" attr.name="packet_loss" attr.type="double"/>',
        '  <graph edgedefault="undirected">',
    ]
    for cid, cc in cities:
        bw = rnd.choice([1e9, 10e9])
        lines.append(f'    <node id="{cid}"><data key="d0">{cc.upper()}</data>'
                     f'<data key="d1">{bw:.0f}</data><data key="d2">{bw:.0f}</data></node>')
    region = {"us": 0, "ca": 0, "de": 1, "fr": 1, "nl": 1, "gb": 1, "se": 1, "ru": 2}
    for i, (a, ca) in enumerate(cities):
        for b, cb in cities[i:]:
            if a == b:
                lat = 1000
            elif ca == cb:
                lat = rnd.randint(3000, 15000)
            elif region[ca] == region[cb]:
                lat = rnd.randint(10000, 30000)
            else:
                lat = rnd.randint(40000, 90000)
            lines.append(f'    <edge source="{a}" target="{b}"><data key="d3">{lat}</data>'
                         f'<data key="d4">0.0</data></edge>')
    lines += ["  </graph>", "</graphml>", ""]
    (out / "map.graphml").write_text("\n".join(lines))


if __name__ == "__main__":
    main()
