"""Drives every node of a scenario to its horizon and collects the results."""

from __future__ import annotations

import hashlib
import random
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Optional

from ..agreement import BOTTOM, BaMessage, Kind, compute_status
from ..chain import ConfigChange, RoundParams, notary_threshold, verify_notarization
from ..crs import CommitteeSizes, CrsValue, elect_committees, genesis_crs, next_crs
from ..crypto import Digest, GroupPublicKey, deal_group, derive_keypair, hash_parts
from .adversary import LeaderHogController, make_behavior
from .network import DelayModel, Network, Partition
from .node import KEEP_HEIGHTS, Node
from .scenario import Scenario


class HorizonExceeded(RuntimeError):
    """Correct nodes did not reach the horizon before the time limit (or the run went quiet)."""


class Registry:
    """Committees and dealt threshold keys per (epoch, CRS value)."""

    def __init__(self, seed: int, sc: Scenario):
        self.seed = seed
        self.sc = sc
        self.sizes = CommitteeSizes(sc.crs, sc.notary, sc.all_chains)
        self._configs: dict = {}
        self._groups: dict = {}

    def epoch_config(self, e: int, r: Digest):
        key = (e, r)
        cfg = self._configs.get(key)
        if cfg is None:
            cfg = elect_committees(CrsValue(e, r), range(self.sc.nodes), self.sizes)
            self._configs[key] = cfg
        return cfg

    def _group(self, key: tuple, label: str, members) -> tuple[GroupPublicKey, dict]:
        g = self._groups.get(key)
        if g is None:
            g = deal_group(self.seed, label, members, notary_threshold(len(members)))
            self._groups[key] = g
        return g

    def notary_group(self, e: int, r: Digest, chain_id: int):
        key = ("notary", e, r, chain_id)
        g = self._groups.get(key)
        if g is not None:
            return g
        cfg = self.epoch_config(e, r)
        return self._group(key, f"notary/{e}/{r.hex()}/{chain_id}", cfg.notary_set(chain_id))

    def crs_group(self, e: int, r: Digest):
        key = ("crs", e, r)
        g = self._groups.get(key)
        if g is not None:
            return g
        cfg = self.epoch_config(e, r)
        return self._group(key, f"crs/{e}/{r.hex()}", cfg.crs_committee)


@dataclass
class Violation:
    kind: str
    detail: str

    def line(self) -> str:
        return f"{self.kind}: {self.detail}"


@dataclass
class RunResult:
    scenario: Scenario
    nodes: list
    byzantine_ids: frozenset
    end_time: int
    events: int
    deliveries: int
    transcript: list
    transcript_hash: str
    violations: list = field(default_factory=list)
    wall_seconds: float = 0.0
    finished: bool = True

    @property
    def correct(self) -> list[Node]:
        return [n for n in self.nodes if n.id not in self.byzantine_ids]

    @property
    def ok(self) -> bool:
        return not self.violations


class World:
    def __init__(self, sc: Scenario):
        self.scenario = sc
        seed = sc.seed
        self.rng = random.Random(f"latticebft/{seed}")
        self.keypairs = [derive_keypair(seed, i) for i in range(sc.nodes)]
        self.public_keys = {i: kp.public_key for i, kp in enumerate(self.keypairs)}
        self.genesis = genesis_crs(seed)
        self.registry = Registry(seed, sc)
        cc = sc.config_change
        self.config_change = (
            ConfigChange(cc.time, RoundParams(sc.chains, sc.phi), RoundParams(cc.chains, cc.phi))
            if cc else None
        )
        if sc.reorder:
            delay = DelayModel(sc.lam, "uniform", 1, sc.lam)
        elif sc.delay_model == "uniform":
            delay = DelayModel(sc.lam, "uniform", sc.delay_min, sc.delay_max)
        else:
            delay = DelayModel(sc.lam)
        parts = [Partition(p.start, p.end, tuple(frozenset(g) for g in p.groups)) for p in sc.partitions]
        self.network = Network(sc.nodes, delay, random.Random(f"net/{seed}"), parts, record=sc.transcript)
        adv = sc.adversary
        self.byzantine_ids = frozenset(adv.nodes) if adv.behavior != "none" else frozenset()
        self.hog = LeaderHogController(self) if adv.behavior == "leader_hog" else None
        self.start_offset = [self.rng.randint(0, sc.skew) if sc.skew else 0 for _ in range(sc.nodes)]
        self.nodes = [
            Node(i, self, make_behavior(self, adv.behavior, adv.corrupt_at, adv.script) if i in self.byzantine_ids else None)
            for i in range(sc.nodes)
        ]
        self.correct = [n for n in self.nodes if n.id not in self.byzantine_ids]
        self.decisions: dict[tuple[int, int], dict[int, Any]] = {}
        self.finalized: dict[tuple[int, int], Digest] = {}
        self.violations: list[Violation] = []
        self._pruned = {j: 0 for j in range(sc.all_chains)}

    # -- hooks called by nodes --------------------------------------------------

    @staticmethod
    @lru_cache(maxsize=4096)
    def status(chain_id: int, height: int) -> bytes:
        return compute_status(0, chain_id, height)

    def crs_value(self, e: int, r: Digest) -> CrsValue:
        return CrsValue(e, r)

    def next_crs(self, e: int, r: Digest, group, valid) -> Digest:
        return next_crs(CrsValue(e, r), group, valid).value

    def on_emit(self, node: Node, body, now: int) -> None:
        if (
            self.hog is not None
            and isinstance(body, BaMessage)
            and body.kind is Kind.COM
            and node.id not in self.byzantine_ids
        ):
            self.hog.on_commit(node, body.chain_id, body.height, body.round, now)

    def on_ba_start(self, node: Node, chain_id: int, height: int, now: int) -> None:
        if self.hog is not None and node.id not in self.byzantine_ids:
            self.hog.on_start(node, chain_id, height, now)

    def on_decide(self, node: Node, chain_id: int, height: int, now: int) -> None:
        if node.id in self.byzantine_ids:
            return
        value = node.chains[chain_id].bas[height].state.decided
        seen = self.decisions.setdefault((chain_id, height), {})
        for other, v in seen.items():
            if v != value:
                self.violations.append(Violation(
                    "agreement",
                    f"chain {chain_id} height {height}: node {other} decided {_show(v)}, node {node.id} decided {_show(value)}",
                ))
                break
        seen[node.id] = value

    def on_finalize(self, node: Node, chain_id: int, height: int, now: int) -> None:
        if node.id in self.byzantine_ids:
            return
        h = node.chains[chain_id].blocks[height].hash
        prev = self.finalized.setdefault((chain_id, height), h)
        if prev != h:
            self.violations.append(Violation(
                "finality", f"chain {chain_id} height {height}: {prev.short()} vs {h.short()} at node {node.id}"
            ))

    def maybe_prune(self, chain_id: int, height: int) -> None:
        low = min(n.chains[chain_id].next_final for n in self.correct) - KEEP_HEIGHTS - 1
        while self._pruned[chain_id] <= low:
            self.network.prune((chain_id, self._pruned[chain_id]))
            self._pruned[chain_id] += 1

    # -- driving --------------------------------------------------------------

    def chain_done(self, node: Node, chain_id: int) -> bool:
        cs = node.chains[chain_id]
        if cs.halted:
            return True
        change = self.config_change
        if change is not None and chain_id >= change.old_round.chains and not node.compaction.boundary_reached:
            return False
        return cs.next_final >= self.scenario.horizon_height

    def done(self) -> bool:
        return all(self.chain_done(n, j) for n in self.correct for j in n.chains)

    def schedule_inputs(self) -> None:
        sc = self.scenario
        net = self.network
        for node in self.nodes:
            net.schedule(self.start_offset[node.id], node.id, ("boot",))
        for i in range(sc.tx_count):
            net.schedule(sc.tx_start + i * sc.tx_interval, -1, ("tx", hash_parts("tx", sc.seed, i)))
        if sc.partitions:
            net.schedule(max(p.end for p in sc.partitions), -1, ("heal",))
        if self.config_change is not None:
            # wake nodes when the boundary time passes so that idle proposers notice it
            net.schedule(self.config_change.effective_time + 1, -1, ("noop",))

    def dispatch(self, target: int, payload, now: int) -> None:
        kind = payload[0]
        if kind == "msg":
            self.nodes[target].deliver(payload[1], payload[2], now)
        elif kind == "tick":
            self.nodes[target].on_tick(payload[1], payload[2], now)
        elif kind == "boot":
            self.nodes[target].boot(now)
        elif kind == "tx":
            for node in self.nodes:
                node.on_tx(payload[1], now)
        elif kind == "heal":
            for node in self.nodes:
                node.on_heal(now)

    def run(self) -> RunResult:
        t0 = time.perf_counter()
        sc = self.scenario
        net = self.network
        self.schedule_inputs()
        limit = sc.time_limit
        events = 0
        finished = False
        while True:
            nxt = net.peek_time()
            if nxt is None or nxt > limit:
                break
            ev = net.pop()
            events += 1
            self.dispatch(ev.target, ev.payload, ev.time)
            if ev.payload[0] != "tx" and self.done():
                finished = True
                break
        if not finished and self.done():
            finished = True
        if not finished:
            lag = {
                n.id: {j: n.chains[j].next_final for j in n.chains} for n in self.correct
            }
            why = "no pending events" if net.peek_time() is None else f"time limit {limit}"
            self.violations.append(Violation("liveness", f"horizon {sc.horizon_height} not reached ({why}); next heights {lag}"))
        self.violations.extend(check_chain_integrity(self))
        self.violations.extend(check_order_agreement(self.correct))
        digest = hashlib.sha256()
        for rec in net.transcript:
            digest.update(repr(rec).encode())
        return RunResult(
            scenario=sc,
            nodes=self.nodes,
            byzantine_ids=self.byzantine_ids,
            end_time=net.now,
            events=events,
            deliveries=net.deliveries,
            transcript=list(net.transcript),
            transcript_hash=digest.hexdigest() if sc.transcript else "",
            violations=list(self.violations),
            wall_seconds=time.perf_counter() - t0,
            finished=finished,
        )


def _show(v) -> str:
    if v is BOTTOM:
        return "bottom"
    return v.short() if isinstance(v, Digest) else repr(v)


def check_chain_integrity(world: World) -> list[Violation]:
    """Every finalized block above height 0 carries a verifying notarization of its parent."""
    out = []
    for node in world.correct:
        for j, cs in node.chains.items():
            for h in sorted(cs.blocks):
                if h == 0:
                    continue
                block, parent = cs.blocks[h], cs.blocks.get(h - 1)
                group = node.notary_group(j, h - 1)[0]
                if parent is None or block.parent_hash != parent.hash or group is None:
                    out.append(Violation("integrity", f"node {node.id} chain {j} height {h}: parent missing"))
                    continue
                if block.parent_notarization is None or not verify_notarization(group, parent, block.parent_notarization):
                    out.append(Violation("integrity", f"node {node.id} chain {j} height {h}: bad parent notarization"))
    return out


def common_prefix_mismatch(seqs: list[list]) -> Optional[int]:
    """Index of the first divergence over the shared prefix, or None."""
    if not seqs:
        return None
    k = min(len(s) for s in seqs)
    for i in range(k):
        first = seqs[0][i]
        if any(s[i] != first for s in seqs[1:]):
            return i
    return None


def check_order_agreement(nodes: list[Node]) -> list[Violation]:
    out = []
    lines = [n.compaction.batch_lines() for n in nodes]
    i = common_prefix_mismatch(lines)
    if i is not None:
        out.append(Violation("order", f"batch {i} differs between correct nodes"))
    stamps = [n.compaction.timestamp_pairs() for n in nodes]
    i = common_prefix_mismatch(stamps)
    if i is not None:
        out.append(Violation("timestamp", f"entry {i} differs between correct nodes"))
    return out


def run(sc: Scenario, strict: bool = False) -> RunResult:
    """Simulate ``sc``.  With ``strict`` a liveness failure raises HorizonExceeded."""
    result = World(sc).run()
    if strict and not result.finished:
        raise HorizonExceeded(next(v.detail for v in result.violations if v.kind == "liveness"))
    return result
