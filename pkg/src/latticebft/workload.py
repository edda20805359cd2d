"""Random lattices and arrival orders for ordering experiments."""

from __future__ import annotations

import random
from typing import Optional, Sequence

from .lattice import AckField, Block


class LatticeBuilder:
    """Appends well-formed blocks to an in-memory lattice."""

    def __init__(self, n: int, start_time: int = 0):
        self.n = n
        self.tips: list[Optional[Block]] = [None] * n
        self.frontier: list[dict[int, int]] = [{} for _ in range(n)]
        self.blocks: list[Block] = []
        self.clock = start_time

    def append(self, j: int, rng: Optional[random.Random] = None, ack_prob: float = 1.0) -> Block:
        parent = self.tips[j]
        seen = dict(self.frontier[j])
        acks = []
        for c in range(self.n):
            tip = self.tips[c]
            if c == j or tip is None or tip.height <= seen.get(c, -1):
                continue
            if rng is None or rng.random() < ack_prob:
                acks.append(AckField(c, tip.hash, tip.height))
        self.clock += 1 + (rng.randrange(3) if rng else 0)
        block = Block(
            chain_id=j,
            height=parent.height + 1 if parent else 0,
            proposer_id=j,
            parent_hash=parent.hash if parent else None,
            acks=tuple(acks),
            payload=(),
            block_timestamp=self.clock,
        )
        for a in acks:
            for c, h in self.frontier[a.block_proposer_id].items():
                seen[c] = max(seen.get(c, -1), h)
            seen[a.block_proposer_id] = a.block_height
        seen.pop(j, None)
        self.frontier[j] = seen
        self.tips[j] = block
        self.blocks.append(block)
        return block

    def pad(self, layers: int = 1) -> list[Block]:
        """Layers in which every chain acks every current tip."""
        out = []
        for _ in range(layers):
            out.extend(self.append(j) for j in range(self.n))
        return out


def random_lattice(
    n: int,
    n_blocks: int,
    rng: random.Random,
    ack_prob: float = 0.5,
    chain_weights: Optional[Sequence[float]] = None,
) -> list[Block]:
    """Grow a lattice one block at a time; returns blocks in creation order.

    Each new block on chain j acks, with probability ``ack_prob`` per foreign
    chain, that chain's current tip.
    """
    builder = LatticeBuilder(n)
    for _ in range(n_blocks):
        j = rng.choices(range(n), weights=chain_weights)[0] if chain_weights else rng.randrange(n)
        builder.append(j, rng, ack_prob)
    return builder.blocks


def random_arrival(blocks: Sequence[Block], rng: random.Random) -> list[Block]:
    """A uniformly chosen-at-each-step causal order of ``blocks``."""
    pool = {b.hash: b for b in blocks}
    missing = {h: sum(1 for r in b.acked_hashes if r in pool) for h, b in pool.items()}
    children: dict = {}
    for h, b in pool.items():
        for r in b.acked_hashes:
            if r in pool:
                children.setdefault(r, []).append(h)
    ready = sorted((h for h, k in missing.items() if k == 0), key=lambda h: h.value)
    out = []
    while ready:
        h = ready.pop(rng.randrange(len(ready)))
        out.append(pool[h])
        for c in children.get(h, ()):
            missing[c] -= 1
            if missing[c] == 0:
                ready.append(c)
    return out
