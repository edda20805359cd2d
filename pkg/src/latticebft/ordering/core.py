"""Definitions shared by the incremental orderer and the reference oracle.

AHV entries are ``None`` (undefined: chain not yet seen), an ``int`` height, or
``math.inf`` (seen, but its lowest pending block does not ack the candidate).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

from ..crypto import Digest

INF = math.inf
HeightEntry = Union[None, int, float]


class OrderingError(Exception):
    pass


class NotCandidate(OrderingError, KeyError):
    pass


class Mode(enum.Enum):
    NORMAL = "normal"
    EARLY = "early"
    FLUSH = "flush"


class Criteria(enum.Enum):
    NO_OUTPUT = "none"
    NORMAL = "normal"
    EARLY = "early"


@dataclass(frozen=True)
class DeliveryBatch:
    blocks: tuple[Digest, ...]
    mode: Mode
    batch_index: int

    def log_line(self) -> str:
        return f"{self.batch_index},{self.mode.value},{';'.join(h.hex() for h in self.blocks)}"


def parse_batch_line(line: str) -> DeliveryBatch:
    idx, mode, hashes = line.strip().split(",", 2)
    blocks = tuple(Digest.from_hex(h) for h in hashes.split(";") if h)
    return DeliveryBatch(blocks, Mode(mode), int(idx))


def max_faulty_chains(n: int) -> int:
    return (n - 1) // 3


def default_phi(n: int) -> int:
    """2*f_max + 1, raised where needed so that phi > n/2 still holds."""
    if n < 1:
        raise ValueError("need at least one chain")
    return min(n, max(2 * max_faulty_chains(n) + 1, n // 2 + 1))


def check_phi(n: int, phi: int) -> int:
    if not 1 <= phi <= n:
        raise ValueError(f"phi={phi} outside [1, {n}]")
    return phi


def less(a: HeightEntry, b: HeightEntry) -> bool:
    return a is not None and b is not None and a < b


def count_less(v1: Sequence[HeightEntry], v2: Sequence[HeightEntry]) -> int:
    return sum(1 for a, b in zip(v1, v2) if less(a, b))


def grade_from_count(c: int, n: int, phi: int, global_ans_size: int) -> Optional[int]:
    """1 / 0 / None(undetermined) from the strictly-less count."""
    if c > phi:
        return 1
    if c < phi - (n - global_ans_size):
        return 0
    return None


def precede_from_counts(c12: int, c21: int, phi: int) -> int:
    if c12 > phi:
        return 1
    if c21 > phi:
        return -1
    return 0


def sort_batch(hashes: Iterable[Digest]) -> tuple[Digest, ...]:
    return tuple(sorted(hashes, key=lambda h: h.to_bytes()))
