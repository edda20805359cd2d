"""Incremental total ordering over a growing lattice view.

Per arrival only the arriving block's chain coordinate of the AHV vectors can
change, so the pairwise count matrix is patched one coordinate at a time
(O(|C|) cells per changed vector entry).  Reachability to candidates is kept
as a bitmask per pending block, indexed by candidate chain.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional

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
    default_phi,
    grade_from_count,
    less,
    precede_from_counts,
    sort_batch,
)


@dataclass
class _Candidate:
    block: Block
    # first (= lowest) pending height per chain that reaches this candidate
    ackers: list
    ans: int = 0
    ahv: list = field(default_factory=list)


@dataclass
class OpCounters:
    reach: int = 0
    matrix: int = 0
    rebuild: int = 0
    scans: int = 0

    @property
    def total(self) -> int:
        return self.reach + self.matrix + self.rebuild + self.scans


class OrderingState:
    def __init__(self, n: int, phi: Optional[int] = None, delivered: Iterable[Digest] = ()):
        if n < 1:
            raise ValueError("need at least one chain")
        self.n = n
        self.phi = check_phi(n, default_phi(n) if phi is None else phi)
        self.delivered: set[Digest] = set(delivered)
        self.output: list[Digest] = []
        self.batches: list[DeliveryBatch] = []
        self.pending: dict[Digest, Block] = {}
        self.received: dict[Digest, Block] = {}
        self._chain_pending: list[deque[Digest]] = [deque() for _ in range(n)]
        self.gahv: list[Optional[int]] = [None] * n
        self._reach: dict[Digest, int] = {}
        self._children: dict[Digest, list[Digest]] = {}
        self._cands: dict[int, _Candidate] = {}
        self._ans_refs = [0] * n
        self._ans_size = 0
        # _count[(a, b)] = |{j : AHV(a)[j] < AHV(b)[j]}|, keyed by candidate chain ids
        self._count: dict[tuple[int, int], int] = {}
        self.ops = OpCounters()

    # -- queries -----------------------------------------------------------

    def delivered_block(self, h: Digest) -> Block:
        return self.received[h]

    @property
    def candidates(self) -> set[Digest]:
        return {c.block.hash for c in self._cands.values()}

    @property
    def global_ans(self) -> set[int]:
        return {q for q in range(self.n) if self._ans_refs[q]}

    def _cand(self, h: Digest) -> _Candidate:
        b = self.pending.get(h)
        if b is not None:
            c = self._cands.get(b.chain_id)
            if c is not None and c.block.hash == h:
                return c
        raise NotCandidate(h)

    def ans_of(self, h: Digest) -> set[int]:
        mask = self._cand(h).ans
        return {q for q in range(self.n) if mask >> q & 1}

    def ahv_of(self, h: Digest) -> tuple[HeightEntry, ...]:
        return tuple(self._cand(h).ahv)

    def ahv_count(self, h: Digest) -> int:
        return sum(1 for e in self._cand(h).ahv if e is not None and e != INF)

    def count(self, h1: Digest, h2: Digest) -> int:
        a, b = self._cand(h1).block.chain_id, self._cand(h2).block.chain_id
        return 0 if a == b else self._count[a, b]

    def precede(self, h1: Digest, h2: Digest) -> int:
        return precede_from_counts(self.count(h1, h2), self.count(h2, h1), self.phi)

    def grade(self, h1: Digest, h2: Digest) -> Optional[int]:
        return grade_from_count(self.count(h1, h2), self.n, self.phi, self._ans_size)

    def matrix(self) -> dict[tuple[Digest, Digest], int]:
        out = {}
        for (a, b), v in self._count.items():
            out[self._cands[a].block.hash, self._cands[b].block.hash] = v
        return out

    def preceding_set(self) -> set[Digest]:
        bound = self.phi - (self.n - self._ans_size)
        chains = list(self._cands)
        out = set()
        for b in chains:
            self.ops.scans += len(chains)
            if all(self._count[a, b] < bound for a in chains if a != b):
                out.add(self._cands[b].block.hash)
        return out

    def check_criteria(self) -> tuple[Criteria, set[Digest]]:
        preceding = self.preceding_set()
        if not preceding:
            return Criteria.NO_OUTPUT, preceding
        if self._ans_size == self.n:
            return Criteria.NORMAL, preceding
        in_a = [self.pending[h].chain_id for h in preceding]
        rest = [c for c in self._cands if self._cands[c].block.hash not in preceding]
        if not rest:
            return Criteria.NO_OUTPUT, preceding
        self.ops.scans += len(rest) * len(in_a)
        if all(any(self._count[a, b] > self.phi for a in in_a) for b in rest):
            return Criteria.EARLY, preceding
        return Criteria.NO_OUTPUT, preceding

    # -- AHV / matrix maintenance -----------------------------------------

    def _entry(self, c: _Candidate, q: int) -> HeightEntry:
        if not self._ans_refs[q]:
            return None
        k = c.ackers[q]
        return k if k is not None and k == self.gahv[q] else INF

    def _set_entry(self, chain: int, q: int, new: HeightEntry) -> None:
        c = self._cands[chain]
        old = c.ahv[q]
        if old == new and (old is None) == (new is None):
            return
        for o, oc in self._cands.items():
            if o == chain:
                continue
            v = oc.ahv[q]
            self._count[chain, o] += less(new, v) - less(old, v)
            self._count[o, chain] += less(v, new) - less(v, old)
            self.ops.matrix += 2
        c.ahv[q] = new

    def _add_ans(self, c: _Candidate, q: int) -> None:
        if not c.ans >> q & 1:
            c.ans |= 1 << q
            self._ans_refs[q] += 1
            if self._ans_refs[q] == 1:
                self._ans_size += 1

    def _drop_ans(self, c: _Candidate) -> None:
        for q in range(self.n):
            if c.ans >> q & 1:
                self._ans_refs[q] -= 1
                if self._ans_refs[q] == 0:
                    self._ans_size -= 1

    def _insert_candidate(self, c: _Candidate) -> None:
        chain = c.block.chain_id
        c.ahv = [self._entry(c, q) for q in range(self.n)]
        for o, oc in self._cands.items():
            self._count[chain, o] = sum(less(x, y) for x, y in zip(c.ahv, oc.ahv))
            self._count[o, chain] = sum(less(y, x) for x, y in zip(c.ahv, oc.ahv))
            self.ops.matrix += 2 * self.n
        self._cands[chain] = c

    def _refresh_coordinate(self, q: int) -> None:
        for chain, c in list(self._cands.items()):
            self._set_entry(chain, q, self._entry(c, q))

    # -- events -------------------------------------------------------------

    def receive_block(self, block: Block, deliver: bool = True) -> list[DeliveryBatch]:
        h = block.hash
        if h in self.pending or h in self.delivered:
            return []
        q = block.chain_id
        if not 0 <= q < self.n:
            raise OrderingError(f"chain {q} outside [0, {self.n})")
        refs = block.acked_hashes
        if any(r not in self.pending and r not in self.delivered for r in refs):
            raise OrderingError(f"{block.label()} arrived before its acked blocks")
        self.pending[h] = block
        self.received[h] = block
        self._chain_pending[q].append(h)
        if self.gahv[q] is None:
            self.gahv[q] = block.height

        mask = 0
        for r in refs:
            if r in self.pending:
                mask |= self._reach[r]
                self._children.setdefault(r, []).append(h)
            self.ops.reach += 1
        is_cand = q not in self._cands and all(r in self.delivered for r in refs)
        if is_cand:
            mask |= 1 << q
        self._reach[h] = mask

        touched = []
        m = mask
        while m:
            low = m & -m
            chain = low.bit_length() - 1
            m ^= low
            if chain == q and is_cand:
                continue
            c = self._cands[chain]
            if c.ackers[q] is None:
                c.ackers[q] = block.height
            self._add_ans(c, q)
            touched.append(chain)
            self.ops.reach += 1
        if is_cand:
            c = _Candidate(block, [None] * self.n)
            c.ackers[q] = block.height
            self._add_ans(c, q)
            self._insert_candidate(c)
        self._refresh_coordinate(q)
        return self.flush() if deliver else []

    def flush(self) -> list[DeliveryBatch]:
        """Run the delivery loop until no criterion holds."""
        out = []
        while True:
            verdict, preceding = self.check_criteria()
            if verdict is Criteria.NO_OUTPUT:
                return out
            mode = Mode.NORMAL if verdict is Criteria.NORMAL else Mode.EARLY
            out.append(self._deliver(preceding, mode))

    def _deliver(self, preceding: set[Digest], mode: Mode) -> DeliveryBatch:
        batch = DeliveryBatch(sort_batch(preceding), mode, len(self.batches))
        self.batches.append(batch)
        self.output.extend(batch.blocks)
        before = [r > 0 for r in self._ans_refs]
        changed = set()
        for h in preceding:
            b = self.pending.pop(h)
            chain = b.chain_id
            self.delivered.add(h)
            dq = self._chain_pending[chain]
            assert dq[0] == h
            dq.popleft()
            self.gahv[chain] = self.pending[dq[0]].height if dq else None
            changed.add(chain)
            c = self._cands.pop(chain)
            self._drop_ans(c)
            for o in self._cands:
                del self._count[chain, o], self._count[o, chain]
            self._walk(h, clear=1 << chain)
            del self._reach[h]
            self._children.pop(h, None)
        # new candidates: heads whose acks are now all delivered
        fresh = []
        for chain in range(self.n):
            dq = self._chain_pending[chain]
            if chain in self._cands or not dq:
                continue
            b = self.pending[dq[0]]
            self.ops.rebuild += 1
            if all(r in self.delivered for r in b.acked_hashes):
                c = _Candidate(b, [None] * self.n)
                for x in self._walk(b.hash, set_bit=1 << chain):
                    xb = self.pending[x]
                    cur = c.ackers[xb.chain_id]
                    if cur is None or xb.height < cur:
                        c.ackers[xb.chain_id] = xb.height
                    self._add_ans(c, xb.chain_id)
                fresh.append(c)
        for c in fresh:
            self._insert_candidate(c)
        # surviving vectors only move where GAHV or global ANS membership moved
        for q in range(self.n):
            if q in changed or before[q] != (self._ans_refs[q] > 0):
                self._refresh_coordinate(q)
        return batch

    def _walk(self, start: Digest, clear: int = 0, set_bit: int = 0) -> list[Digest]:
        """Visit ``start`` and every pending block reaching it; adjust bitmasks."""
        seen = {start}
        order = [start]
        queue = deque([start])
        while queue:
            x = queue.popleft()
            if x in self._reach:
                self._reach[x] = (self._reach[x] & ~clear) | set_bit
            self.ops.rebuild += 1
            for y in self._children.get(x, ()):
                if y not in seen and y in self.pending:
                    seen.add(y)
                    order.append(y)
                    queue.append(y)
        return order
