"""Reference orderer that recomputes every potential from scratch.

It shares only the grade/precede arithmetic with the incremental path; the
reachability, candidate and AHV computations are done independently by
breadth-first search over the pending set.
"""

from __future__ import annotations

from collections import deque
from typing import Iterable, Optional, Sequence

from ..crypto import Digest
from ..lattice import Block
from .core import (
    INF,
    Criteria,
    DeliveryBatch,
    HeightEntry,
    Mode,
    NotCandidate,
    OrderingError,
    check_phi,
    count_less,
    default_phi,
    grade_from_count,
    precede_from_counts,
    sort_batch,
)


class NaiveView:
    """Potentials of one snapshot: a delivered set plus the pending blocks."""

    def __init__(
        self,
        pending: Iterable[Block],
        n: int,
        phi: Optional[int] = None,
        delivered: Iterable[Digest] = (),
    ):
        self.n = n
        self.phi = check_phi(n, default_phi(n) if phi is None else phi)
        self.delivered = set(delivered)
        self.pending = {b.hash: b for b in pending}
        self._build()

    def _build(self) -> None:
        self.min_pending: dict[int, Block] = {}
        for b in self.pending.values():
            if not 0 <= b.chain_id < self.n:
                raise OrderingError(f"chain {b.chain_id} outside [0, {self.n})")
            cur = self.min_pending.get(b.chain_id)
            if cur is None or b.height < cur.height:
                self.min_pending[b.chain_id] = b
        self.candidates = sorted(
            (
                b for b in self.min_pending.values()
                if all(r in self.delivered for r in b.acked_hashes)
            ),
            key=lambda b: b.chain_id,
        )
        children: dict[Digest, list[Digest]] = {}
        for b in self.pending.values():
            for r in b.acked_hashes:
                if r in self.pending:
                    children.setdefault(r, []).append(b.hash)
        self.ackers: dict[Digest, set[Digest]] = {}
        for c in self.candidates:
            seen = {c.hash}
            queue = deque([c.hash])
            while queue:
                for nxt in children.get(queue.popleft(), ()):
                    if nxt not in seen:
                        seen.add(nxt)
                        queue.append(nxt)
            self.ackers[c.hash] = seen
        self.global_ans: set[int] = set()
        for c in self.candidates:
            self.global_ans |= self.ans_of(c.hash)
        self.vectors = {c.hash: self._ahv(c.hash) for c in self.candidates}

    def _require(self, h: Digest) -> None:
        if h not in self.ackers:
            raise NotCandidate(h)

    def ans_of(self, h: Digest) -> set[int]:
        self._require(h)
        return {self.pending[x].chain_id for x in self.ackers[h]}

    def _ahv(self, h: Digest) -> tuple[HeightEntry, ...]:
        out: list[HeightEntry] = []
        for q in range(self.n):
            if q not in self.global_ans:
                out.append(None)
            elif self.min_pending[q].hash in self.ackers[h]:
                out.append(self.min_pending[q].height)
            else:
                out.append(INF)
        return tuple(out)

    def ahv_of(self, h: Digest) -> tuple[HeightEntry, ...]:
        self._require(h)
        return self.vectors[h]

    def ahv_count(self, h: Digest) -> int:
        return sum(1 for e in self.ahv_of(h) if e is not None and e != INF)

    def count(self, h1: Digest, h2: Digest) -> int:
        return count_less(self.ahv_of(h1), self.ahv_of(h2))

    def precede(self, h1: Digest, h2: Digest) -> int:
        return precede_from_counts(self.count(h1, h2), self.count(h2, h1), self.phi)

    def grade(self, h1: Digest, h2: Digest) -> Optional[int]:
        return grade_from_count(self.count(h1, h2), self.n, self.phi, len(self.global_ans))

    def preceding_set(self) -> set[Digest]:
        hashes = [c.hash for c in self.candidates]
        return {
            b for b in hashes
            if all(self.grade(o, b) == 0 for o in hashes if o != b)
        }

    def check_criteria(self) -> tuple[Criteria, set[Digest]]:
        preceding = self.preceding_set()
        if not preceding:
            return Criteria.NO_OUTPUT, preceding
        if len(self.global_ans) == self.n:
            return Criteria.NORMAL, preceding
        rest = [c.hash for c in self.candidates if c.hash not in preceding]
        if rest and all(any(self.grade(a, b) == 1 for a in preceding) for b in rest):
            return Criteria.EARLY, preceding
        return Criteria.NO_OUTPUT, preceding


def naive_order(
    arrivals: Sequence[Block],
    n: int,
    phi: Optional[int] = None,
    delivered: Iterable[Digest] = (),
) -> list[DeliveryBatch]:
    """Feed ``arrivals`` one at a time, recomputing everything after each one."""
    done = set(delivered)
    pending: dict[Digest, Block] = {}
    batches: list[DeliveryBatch] = []
    for block in arrivals:
        if any(r not in pending and r not in done for r in block.acked_hashes):
            raise OrderingError(f"{block.label()} arrived before its acked blocks")
        pending[block.hash] = block
        while True:
            view = NaiveView(pending.values(), n, phi, done)
            verdict, preceding = view.check_criteria()
            if verdict is Criteria.NO_OUTPUT:
                break
            mode = Mode.NORMAL if verdict is Criteria.NORMAL else Mode.EARLY
            batches.append(DeliveryBatch(sort_batch(preceding), mode, len(batches)))
            for h in preceding:
                del pending[h]
                done.add(h)
    return batches
