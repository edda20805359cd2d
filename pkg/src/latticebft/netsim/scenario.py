"""Scenario files (JSON) and their validation.

Schema, all keys optional except ``nodes``::

    name                 str
    seed                 int                       default 0
    nodes                int                       population size
    chains               int                       default 1
    notary_size          int                       default nodes
    crs_size             int                       default min(nodes, 4)
    lambda               int                       delivery bound, default 1000
    delay                {"model": "constant"} | {"model": "uniform", "min": a, "max": b}
    reorder              bool                      delays uniform in [1, lambda]
    delta                number or "p/q"           proposal threshold, default 1
    phi                  int                       ordering threshold, default derived
    epoch_length         int                       heights per epoch, 0 = single epoch
    skew                 int                       max start offset at height 0
    partitions           [{"start", "end", "groups": [[ids], ...]}]
    adversary            {"nodes": [ids], "behavior": name, "corrupt_at": t, "script": name}
    horizon              {"height": h, "max_time": t}
    transactions         {"count": k, "start": t0, "interval": dt}
    max_block_txs        int                       default 256
    config_change        {"time": T, "chains": n2, "phi": p}
    compaction_notarization bool
    monotone_timestamps  bool                      clamp everywhere, not only at a boundary
    transcript           bool                      record every delivery
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Optional

BEHAVIORS = ("none", "silent", "equivocate_init", "delay_release", "leader_hog", "custom")


class ScenarioInvalid(ValueError):
    pass


@dataclass(frozen=True)
class PartitionSpec:
    start: int
    end: int
    groups: tuple[tuple[int, ...], ...]


@dataclass(frozen=True)
class AdversarySpec:
    nodes: tuple[int, ...] = ()
    behavior: str = "none"
    corrupt_at: int = 0
    script: Optional[str] = None


@dataclass(frozen=True)
class ConfigChangeSpec:
    time: int
    chains: int
    phi: Optional[int] = None


@dataclass(frozen=True)
class Scenario:
    nodes: int
    name: str = "unnamed"
    seed: int = 0
    chains: int = 1
    notary_size: Optional[int] = None
    crs_size: Optional[int] = None
    lam: int = 1000
    delay_model: str = "constant"
    delay_min: int = 0
    delay_max: int = 0
    reorder: bool = False
    delta: str = "1"
    phi: Optional[int] = None
    epoch_length: int = 0
    skew: int = 0
    partitions: tuple[PartitionSpec, ...] = ()
    adversary: AdversarySpec = field(default_factory=AdversarySpec)
    horizon_height: int = 5
    max_time: Optional[int] = None
    tx_count: int = 0
    tx_start: int = 0
    tx_interval: int = 1
    max_block_txs: int = 256
    config_change: Optional[ConfigChangeSpec] = None
    compaction_notarization: bool = False
    monotone_timestamps: bool = False
    transcript: bool = False

    @property
    def notary(self) -> int:
        return self.notary_size if self.notary_size is not None else self.nodes

    @property
    def crs(self) -> int:
        return self.crs_size if self.crs_size is not None else min(self.nodes, 4)

    @property
    def delta_fraction(self) -> Fraction:
        return Fraction(self.delta)

    @property
    def time_limit(self) -> int:
        if self.max_time is not None:
            return self.max_time
        heal = max((p.end for p in self.partitions), default=0)
        return heal + self.skew + (self.horizon_height + 10) * 60 * self.lam + self.tx_start + self.tx_count * self.tx_interval

    @property
    def all_chains(self) -> int:
        """Chains that exist at some point of the run."""
        return max(self.chains, self.config_change.chains if self.config_change else 0)

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=seed)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {
            "name": self.name,
            "seed": self.seed,
            "nodes": self.nodes,
            "chains": self.chains,
            "notary_size": self.notary,
            "crs_size": self.crs,
            "lambda": self.lam,
            "delay": {"model": self.delay_model}
            if self.delay_model == "constant"
            else {"model": self.delay_model, "min": self.delay_min, "max": self.delay_max},
            "reorder": self.reorder,
            "delta": self.delta,
            "phi": self.phi,
            "epoch_length": self.epoch_length,
            "skew": self.skew,
            "partitions": [
                {"start": p.start, "end": p.end, "groups": [list(g) for g in p.groups]}
                for p in self.partitions
            ],
            "adversary": {
                "nodes": list(self.adversary.nodes),
                "behavior": self.adversary.behavior,
                "corrupt_at": self.adversary.corrupt_at,
                "script": self.adversary.script,
            },
            "horizon": {"height": self.horizon_height, "max_time": self.max_time},
            "transactions": {"count": self.tx_count, "start": self.tx_start, "interval": self.tx_interval},
            "max_block_txs": self.max_block_txs,
            "config_change": asdict(self.config_change) if self.config_change else None,
            "compaction_notarization": self.compaction_notarization,
            "monotone_timestamps": self.monotone_timestamps,
            "transcript": self.transcript,
        }
        return d


def _int(d: dict, key: str, default=None, minimum: Optional[int] = None):
    v = d.get(key, default)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, int):
        raise ScenarioInvalid(f"{key} must be an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ScenarioInvalid(f"{key} must be >= {minimum}, got {v}")
    return v


_KNOWN = {
    "name", "seed", "nodes", "chains", "notary_size", "crs_size", "lambda", "delay", "reorder",
    "delta", "phi", "epoch_length", "skew", "partitions", "adversary", "horizon", "transactions",
    "max_block_txs", "config_change", "compaction_notarization", "monotone_timestamps", "transcript",
}


def from_dict(d: dict) -> Scenario:
    if not isinstance(d, dict):
        raise ScenarioInvalid("scenario must be a JSON object")
    unknown = set(d) - _KNOWN
    if unknown:
        raise ScenarioInvalid(f"unknown keys: {sorted(unknown)}")
    if "nodes" not in d:
        raise ScenarioInvalid("nodes is required")
    delay = d.get("delay") or {"model": "constant"}
    adv = d.get("adversary") or {}
    horizon = d.get("horizon") or {}
    txs = d.get("transactions") or {}
    cc = d.get("config_change")
    try:
        sc = Scenario(
            nodes=_int(d, "nodes", minimum=1),
            name=str(d.get("name", "unnamed")),
            seed=_int(d, "seed", 0, 0),
            chains=_int(d, "chains", 1, 1),
            notary_size=_int(d, "notary_size", None, 1),
            crs_size=_int(d, "crs_size", None, 1),
            lam=_int(d, "lambda", 1000, 1),
            delay_model=str(delay.get("model", "constant")),
            delay_min=_int(delay, "min", 0, 0),
            delay_max=_int(delay, "max", 0, 0),
            reorder=bool(d.get("reorder", False)),
            delta=str(d.get("delta", "1")),
            phi=_int(d, "phi", None, 1),
            epoch_length=_int(d, "epoch_length", 0, 0),
            skew=_int(d, "skew", 0, 0),
            partitions=tuple(
                PartitionSpec(
                    _int(p, "start", minimum=0),
                    _int(p, "end", minimum=0),
                    tuple(tuple(int(x) for x in g) for g in p.get("groups", ())),
                )
                for p in d.get("partitions") or ()
            ),
            adversary=AdversarySpec(
                nodes=tuple(int(x) for x in adv.get("nodes", ())),
                behavior=str(adv.get("behavior", "none")),
                corrupt_at=_int(adv, "corrupt_at", 0, 0),
                script=adv.get("script"),
            ),
            horizon_height=_int(horizon, "height", 5, 1),
            max_time=_int(horizon, "max_time", None, 1),
            tx_count=_int(txs, "count", 0, 0),
            tx_start=_int(txs, "start", 0, 0),
            tx_interval=_int(txs, "interval", 1, 0),
            max_block_txs=_int(d, "max_block_txs", 256, 0),
            config_change=ConfigChangeSpec(
                _int(cc, "time", minimum=0), _int(cc, "chains", minimum=1), _int(cc, "phi", None, 1)
            ) if cc else None,
            compaction_notarization=bool(d.get("compaction_notarization", False)),
            monotone_timestamps=bool(d.get("monotone_timestamps", False)),
            transcript=bool(d.get("transcript", False)),
        )
    except (TypeError, AttributeError, ValueError) as exc:
        if isinstance(exc, ScenarioInvalid):
            raise
        raise ScenarioInvalid(str(exc)) from exc
    validate(sc)
    return sc


def _check_phi(phi: Optional[int], n: int, what: str) -> None:
    if phi is not None and not (2 * phi > n and phi <= n):
        raise ScenarioInvalid(f"{what}: phi={phi} must satisfy n/2 < phi <= n for n={n}")


def validate(sc: Scenario) -> None:
    if sc.notary > sc.nodes:
        raise ScenarioInvalid(f"notary_size {sc.notary} exceeds population {sc.nodes}")
    if sc.crs > sc.nodes:
        raise ScenarioInvalid(f"crs_size {sc.crs} exceeds population {sc.nodes}")
    if sc.delay_model not in ("constant", "uniform"):
        raise ScenarioInvalid(f"unknown delay model {sc.delay_model!r}")
    if sc.delay_model == "uniform" and not (0 <= sc.delay_min <= sc.delay_max <= sc.lam):
        raise ScenarioInvalid("uniform delay needs 0 <= min <= max <= lambda")
    try:
        delta = sc.delta_fraction
    except (ValueError, ZeroDivisionError) as exc:
        raise ScenarioInvalid(f"bad delta {sc.delta!r}") from exc
    if not 0 < delta <= 1:
        raise ScenarioInvalid("delta must lie in (0, 1]")
    _check_phi(sc.phi, sc.chains, "ordering")
    for p in sc.partitions:
        if p.end <= p.start:
            raise ScenarioInvalid(f"partition window [{p.start}, {p.end}) is empty")
        members = [x for g in p.groups for x in g]
        if sorted(members) != list(range(sc.nodes)):
            raise ScenarioInvalid("partition groups must cover every node exactly once")
    adv = sc.adversary
    if adv.behavior not in BEHAVIORS:
        raise ScenarioInvalid(f"unknown adversary behavior {adv.behavior!r}")
    if adv.behavior == "custom" and not adv.script:
        raise ScenarioInvalid("custom adversary needs a script name")
    if any(not 0 <= x < sc.nodes for x in adv.nodes) or len(set(adv.nodes)) != len(adv.nodes):
        raise ScenarioInvalid("adversary nodes must be distinct node ids")
    if adv.behavior != "none" and not adv.nodes:
        raise ScenarioInvalid("adversary behavior given without byzantine nodes")
    if sc.config_change is not None:
        _check_phi(sc.config_change.phi, sc.config_change.chains, "config_change")
        if sc.epoch_length:
            raise ScenarioInvalid("config_change together with epoch_length is not supported")


def load(path) -> Scenario:
    p = Path(path)
    try:
        data = json.loads(p.read_text())
    except FileNotFoundError as exc:
        raise ScenarioInvalid(f"no such scenario file: {p}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioInvalid(f"{p}: {exc}") from exc
    return from_dict(data)


def dump(sc: Scenario, path) -> None:
    Path(path).write_text(json.dumps(sc.to_dict(), indent=2) + "\n")
