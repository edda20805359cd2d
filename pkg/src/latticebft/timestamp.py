"""Consensus timestamps for the ordered block sequence."""

from __future__ import annotations

from typing import Iterable, Mapping, Optional, Sequence

from .crypto import Digest
from .lattice import Block


class UnknownChain(ValueError):
    pass


def lower_median(values: Sequence[int]) -> int:
    s = sorted(values)
    return s[(len(s) - 1) // 2]


class TimestampVector:
    """Streaming median of the latest per-chain block timestamps."""

    def __init__(self, n: int, genesis: Sequence[int] | int = 0, monotone: bool = False):
        if n < 1:
            raise ValueError("need at least one chain")
        self.v = list(genesis) if not isinstance(genesis, int) else [genesis] * n
        if len(self.v) != n:
            raise ValueError("genesis vector length differs from chain count")
        self.monotone = monotone
        self.last: Optional[int] = None

    @property
    def n(self) -> int:
        return len(self.v)

    def push(self, block: Block) -> int:
        if not 0 <= block.chain_id < self.n:
            raise UnknownChain(block.chain_id)
        self.v[block.chain_id] = block.block_timestamp
        t = lower_median(self.v)
        if self.monotone and self.last is not None:
            t = max(self.last, t)
        self.last = t
        return t

    def resize(self, n: int, boundary_time: int) -> None:
        """Chains added at a configuration boundary start at the boundary time."""
        if n < self.n:
            self.v = self.v[:n]
        else:
            self.v.extend([boundary_time] * (n - self.n))


def consensus_timestamps(
    ordered: Iterable[Block],
    n: int,
    genesis: Sequence[int] | int = 0,
    monotone: bool = False,
) -> list[tuple[Block, int]]:
    tv = TimestampVector(n, genesis, monotone)
    return [(b, tv.push(b)) for b in ordered]


def verify_timestamp_agreement(outputs: Sequence[Sequence[tuple[Digest, int]]]) -> bool:
    """All nodes agree on the common prefix of their (block, time) sequences."""
    if not outputs:
        return True
    k = min(len(o) for o in outputs)
    first = list(outputs[0][:k])
    return all(list(o[:k]) == first for o in outputs[1:])


def timestamp_rows(stamped: Iterable[tuple[Block, int]], start_height: int = 0) -> list[tuple]:
    """Rows for the compaction-chain CSV."""
    return [
        (start_height + i, b.hash.hex(), b.chain_id, b.block_timestamp, t)
        for i, (b, t) in enumerate(stamped)
    ]


TIMESTAMP_HEADER = ("height", "block_hash", "chain_id", "block_timestamp", "consensus_timestamp")


def as_pairs(stamped: Iterable[tuple[Block, int]]) -> list[tuple[Digest, int]]:
    return [(b.hash, t) for b, t in stamped]


def genesis_vector(times: Mapping[int, int], n: int, default: int = 0) -> list[int]:
    return [times.get(j, default) for j in range(n)]
