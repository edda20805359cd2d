"""Run reports: what a simulation produced, written as a diffable directory.

Layout::

    summary.txt             human readable
    summary.csv             key,value
    scenario.json           the scenario echo (seed included)
    verdicts.json           invariant verdicts and violation lines
    ba.csv                  one row per (node, chain, height) agreement instance
    batches/node_<i>.log    batch_index,mode,hash;hash;...
    timestamps/node_<i>.csv compaction chain with consensus timestamps
    transcript.csv          every delivery (only when the scenario asks for it)
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .agreement import BOTTOM
from .crypto import Digest
from .netsim.runner import RunResult
from .netsim.scenario import Scenario, from_dict
from .timestamp import TIMESTAMP_HEADER

BA_HEADER = (
    "node", "chain", "height", "start", "decided_at", "rounds", "latency_lambda",
    "heal_round", "post_heal_rounds", "value",
)
VERDICTS = ("agreement", "finality", "liveness", "integrity", "order", "timestamp")


def _value(v) -> str:
    if v is None:
        return ""
    if v is BOTTOM:
        return "bottom"
    return v.hex() if isinstance(v, Digest) else str(v)


@dataclass
class RunReport:
    scenario: dict
    seed: int
    ba_rows: list = field(default_factory=list)
    batches: dict = field(default_factory=dict)  # node -> [line]
    timestamps: dict = field(default_factory=dict)  # node -> [row tuple]
    verdicts: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)
    equivocations: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    transcript: list = field(default_factory=list)
    wall_seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return all(self.verdicts.values())

    # -- construction

    @classmethod
    def from_result(cls, res: RunResult) -> "RunReport":
        sc = res.scenario
        lam = sc.lam
        rows = []
        for node in res.correct:
            for (chain, h), rec in sorted(node.records.items()):
                lat = "" if rec.decided_at is None else f"{(rec.decided_at - rec.start) / lam:.3f}"
                post = ""
                if rec.round is not None and rec.heal_round is not None:
                    post = rec.round - rec.heal_round + 1
                rows.append((
                    node.id, chain, h, rec.start, "" if rec.decided_at is None else rec.decided_at,
                    "" if rec.round is None else rec.round, lat,
                    "" if rec.heal_round is None else rec.heal_round, post, _value(rec.value),
                ))
        batches = {n.id: n.compaction.batch_lines() for n in res.correct}
        stamps = {
            n.id: [
                (e.position, e.block.hash.hex(), e.block.chain_id, e.block.block_timestamp, e.consensus_time)
                for e in n.compaction.entries
            ]
            for n in res.correct
        }
        kinds = {v.kind for v in res.violations}
        verdicts = {k: k not in kinds for k in VERDICTS}
        eq = sorted({x for n in res.correct for x in n.equivocations})
        decided = [r for r in rows if r[5] != ""]
        rounds = [r[5] for r in decided]
        summary = {
            "name": sc.name,
            "seed": sc.seed,
            "nodes": sc.nodes,
            "chains": sc.chains,
            "byzantine": len(res.byzantine_ids),
            "behavior": sc.adversary.behavior,
            "end_time": res.end_time,
            "events": res.events,
            "deliveries": res.deliveries,
            "instances_decided": len(decided),
            "max_rounds": max(rounds, default=0),
            "mean_rounds": f"{sum(rounds) / len(rounds):.4f}" if rounds else "",
            "max_latency_lambda": max((float(r[6]) for r in decided), default=0.0),
            "blocks_ordered_min": min((len(s) for s in stamps.values()), default=0),
            "equivocations": len(eq),
            "transcript_sha256": res.transcript_hash,
            "ok": all(verdicts.values()),
        }
        return cls(
            scenario=sc.to_dict(),
            seed=sc.seed,
            ba_rows=rows,
            batches=batches,
            timestamps=stamps,
            verdicts=verdicts,
            violations=[v.line() for v in res.violations],
            equivocations=[list(x) for x in eq],
            summary=summary,
            transcript=list(res.transcript),
            wall_seconds=res.wall_seconds,
        )

    # -- disk

    def write(self, out) -> Path:
        out = Path(out)
        (out / "batches").mkdir(parents=True, exist_ok=True)
        (out / "timestamps").mkdir(parents=True, exist_ok=True)
        (out / "scenario.json").write_text(json.dumps(self.scenario, indent=2) + "\n")
        (out / "verdicts.json").write_text(json.dumps(
            {"verdicts": self.verdicts, "violations": self.violations, "equivocations": self.equivocations},
            indent=2,
        ) + "\n")
        with open(out / "summary.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("key", "value"))
            for k, v in self.summary.items():
                w.writerow((k, v))
        with open(out / "ba.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(BA_HEADER)
            w.writerows(self.ba_rows)
        for node, lines in self.batches.items():
            (out / "batches" / f"node_{node}.log").write_text("".join(x + "\n" for x in lines))
        for node, rows in self.timestamps.items():
            with open(out / "timestamps" / f"node_{node}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(TIMESTAMP_HEADER)
                w.writerows(rows)
        if self.transcript:
            with open(out / "transcript.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(("time", "src", "dst", "kind", "digest"))
                w.writerows(self.transcript)
        (out / "summary.txt").write_text(self.render() + "\n")
        return out

    def render(self) -> str:
        s = self.summary
        lines = [
            f"scenario {s.get('name')} seed {self.seed}",
            f"nodes {s.get('nodes')} chains {s.get('chains')} byzantine {s.get('byzantine')} ({s.get('behavior')})",
            f"simulated time {s.get('end_time')}  events {s.get('events')}  deliveries {s.get('deliveries')}",
            f"agreement instances decided {s.get('instances_decided')}  max rounds {s.get('max_rounds')}"
            f"  mean rounds {s.get('mean_rounds')}  max latency {s.get('max_latency_lambda')} lambda",
            f"blocks ordered (min over nodes) {s.get('blocks_ordered_min')}  equivocations {s.get('equivocations')}",
            "verdicts: " + " ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in self.verdicts.items()),
        ]
        lines += [f"  {v}" for v in self.violations[:20]]
        lines.append(f"wall clock {self.wall_seconds:.2f}s")
        return "\n".join(lines)

    def digest(self) -> str:
        """Hash over everything except the wall-clock time."""
        h = hashlib.sha256()
        h.update(json.dumps(self.scenario, sort_keys=True).encode())
        h.update(json.dumps(self.summary, sort_keys=True, default=str).encode())
        for part in (self.ba_rows, self.equivocations, self.violations, self.transcript):
            h.update(repr(part).encode())
        for node in sorted(self.batches):
            h.update(repr((node, self.batches[node], self.timestamps.get(node))).encode())
        return h.hexdigest()


def read_batches(report_dir) -> dict[str, list[str]]:
    d = Path(report_dir) / "batches"
    return {p.stem: p.read_text().splitlines() for p in sorted(d.glob("node_*.log"))}


def read_timestamps(report_dir) -> dict[str, list[tuple]]:
    d = Path(report_dir) / "timestamps"
    out = {}
    for p in sorted(d.glob("node_*.csv")):
        with open(p, newline="") as fh:
            rows = list(csv.reader(fh))
        out[p.stem] = [tuple(r) for r in rows[1:]]
    return out


def read_scenario(report_dir) -> Scenario:
    return from_dict(json.loads((Path(report_dir) / "scenario.json").read_text()))


def read_transcript(report_dir) -> Optional[list[tuple]]:
    p = Path(report_dir) / "transcript.csv"
    if not p.exists():
        return None
    with open(p, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return [(int(t), int(s), int(d), k, g) for t, s, d, k, g in rows]


@dataclass
class Divergence:
    source: str
    index: int
    expected: str
    found: str

    def line(self) -> str:
        return f"{self.source}: first divergence at index {self.index}: expected {self.expected!r}, found {self.found!r}"


def compare_sequences(named: dict[str, list]) -> Optional[Divergence]:
    """First position where any sequence departs from the first one, over the common prefix."""
    if len(named) < 2:
        return None
    names = list(named)
    ref_name = names[0]
    ref = named[ref_name]
    k = min(len(v) for v in named.values())
    for i in range(k):
        for name in names[1:]:
            if named[name][i] != ref[i]:
                return Divergence(f"{name} vs {ref_name}", i, str(ref[i]), str(named[name][i]))
    return None


def order_check(report_dirs) -> Optional[Divergence]:
    batches, stamps = {}, {}
    for d in report_dirs:
        for node, lines in read_batches(d).items():
            batches[f"{d}/batches/{node}.log"] = lines
        for node, rows in read_timestamps(d).items():
            stamps[f"{d}/timestamps/{node}.csv"] = rows
    return compare_sequences(batches) or compare_sequences(stamps)
