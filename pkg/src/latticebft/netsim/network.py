"""Seeded event queue and gossip delivery."""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

from ..crypto import Digest

# at equal times messages are handled before timers
PRIO_MSG = 0
PRIO_TIMER = 1


@dataclass(frozen=True)
class Envelope:
    origin: int
    digest: Digest
    body: Any
    kind: str
    scope: Any = None  # (chain, height) for per-height traffic, used for pruning


@dataclass(frozen=True)
class Partition:
    start: int
    end: int
    groups: tuple[frozenset, ...]

    def group_of(self, node: int) -> Optional[int]:
        for i, g in enumerate(self.groups):
            if node in g:
                return i
        return None

    def separates(self, a: int, b: int) -> bool:
        return self.group_of(a) != self.group_of(b)


@dataclass
class DelayModel:
    lam: int
    kind: str = "constant"
    low: int = 0
    high: int = 0

    def sample(self, rng: random.Random) -> int:
        if self.kind == "constant":
            return self.lam
        return rng.randint(self.low, self.high)


@dataclass(order=True)
class Event:
    time: int
    prio: int
    seq: int
    target: int = field(compare=False)
    payload: Any = field(compare=False)


class Network:
    def __init__(
        self,
        n_nodes: int,
        delay: DelayModel,
        rng: random.Random,
        partitions: Sequence[Partition] = (),
        record: bool = False,
    ):
        self.n_nodes = n_nodes
        self.delay = delay
        self.rng = rng
        self.partitions = sorted(partitions, key=lambda p: p.start)
        self.queue: list[tuple] = []  # (time, prio, seq, target, payload) as in Event
        self.seq = 0
        self.now = 0
        # earliest scheduled (or actual) arrival per (digest, node), grouped by scope
        self.best: dict[Any, dict[tuple[Digest, int], int]] = {}
        self.full: dict[Any, set] = {}
        self.record = record
        self.transcript: list[tuple] = []
        self.deliveries = 0

    # -- scheduling

    def schedule(self, time: int, target: int, payload: Any, prio: int = PRIO_TIMER) -> None:
        if time < self.now:
            raise ValueError(f"event in the past: {time} < {self.now}")
        heapq.heappush(self.queue, (time, prio, self.seq, target, payload))
        self.seq += 1

    def pop(self) -> Optional[Event]:
        if not self.queue:
            return None
        ev = Event(*heapq.heappop(self.queue))
        self.now = ev.time
        return ev

    def peek_time(self) -> Optional[int]:
        return self.queue[0][0] if self.queue else None

    # -- delivery

    def arrival(self, src: int, dst: int, sent: int) -> int:
        t = sent + self.delay.sample(self.rng)
        for p in self.partitions:
            if p.start <= sent < p.end and p.separates(src, dst):
                t = max(t, p.end + self.delay.sample(self.rng))
        return t

    def mark_seen(self, env: Envelope, node: int, when: int) -> None:
        best = self.best.setdefault(env.scope, {})
        key = (env.digest, node)
        if best.get(key, when + 1) > when:
            best[key] = when

    def prune(self, scope: Any) -> None:
        self.best.pop(scope, None)
        self.full.pop(scope, None)

    def _offer(self, env: Envelope, src: int, dst: int, at: int) -> None:
        best = self.best.setdefault(env.scope, {})
        key = (env.digest, dst)
        prev = best.get(key)
        if prev is not None and prev <= at:
            return
        best[key] = at
        self.schedule(at, dst, ("msg", env, src), PRIO_MSG)

    def gossip(self, src: int, env: Envelope, now: int, exclude: Callable[[int], bool] = None) -> None:
        """Send ``env`` from ``src`` to every other node (dropping sends that cannot arrive earlier)."""
        self.mark_seen(env, src, now)
        digest = env.digest
        full = None
        if self.delay.kind == "constant":
            # once a message went to everyone at constant delay, no relay can arrive earlier
            full = self.full.setdefault(env.scope, set())
            if digest in full:
                return
        best = self.best.setdefault(env.scope, {})
        for dst in range(self.n_nodes):
            if dst == src or (exclude is not None and exclude(dst)):
                continue
            at = self.arrival(src, dst, now)
            prev = best.get((digest, dst))
            if prev is not None and prev <= at:
                continue
            best[(digest, dst)] = at
            self.schedule(at, dst, ("msg", env, src), PRIO_MSG)
        if full is not None and exclude is None and not self.partitioned(now):
            full.add(digest)

    def partitioned(self, now: int) -> bool:
        return any(p.start <= now < p.end for p in self.partitions)

    def send_at(self, src: int, dst: int, env: Envelope, at: int) -> None:
        """Adversarial delivery: the sender picks the arrival time."""
        self._offer(env, src, dst, max(at, self.now))

    def note_delivery(self, env: Envelope, src: int, dst: int) -> None:
        self.deliveries += 1
        if self.record:
            self.transcript.append((self.now, src, dst, env.kind, env.digest.hex()))
