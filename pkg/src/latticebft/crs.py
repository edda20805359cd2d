"""Per-epoch randomness chain and committee election."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, TypeVar

from .crypto import (
    Digest,
    GroupPublicKey,
    ShareSignature,
    combine,
    hash_bytes,
    hash_parts,
)

T = TypeVar("T")


class CommitteeTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class CrsValue:
    epoch_index: int
    value: Digest


@dataclass(frozen=True)
class CommitteeSizes:
    crs: int
    notary: int
    n_chains: int = 1


@dataclass(frozen=True)
class EpochConfig:
    epoch_index: int
    crs: Digest
    crs_committee: tuple[int, ...]
    notary_committees: tuple[tuple[int, ...], ...]
    node_set: tuple[int, ...]

    def notary_set(self, chain_id: int) -> tuple[int, ...]:
        return self.notary_committees[chain_id]


def genesis_crs(seed) -> CrsValue:
    return CrsValue(0, hash_parts("genesis-crs", seed))


def crs_message(current: CrsValue) -> bytes:
    """Bytes the CRS committee threshold-signs to derive the next value."""
    return current.value.to_bytes()


def next_crs(
    current: CrsValue,
    group: GroupPublicKey,
    shares: Iterable[ShareSignature],
    t: int | None = None,
) -> CrsValue:
    tsig = combine(group, crs_message(current), shares, t)
    return CrsValue(current.epoch_index + 1, hash_bytes(tsig.tag.to_bytes()))


def _uniform_index(seed: Digest, step: int, bound: int) -> int:
    """Uniform integer in [0, bound) from hash(seed || step), by rejection."""
    limit = (1 << 256) - ((1 << 256) % bound)
    attempt = 0
    while True:
        x = hash_parts(seed, step, attempt).value
        if x < limit:
            return x % bound
        attempt += 1


def fisher_yates_shuffle(seed: Digest, items: Sequence[T]) -> list[T]:
    if not items:
        raise ValueError("cannot shuffle an empty list")
    out = list(items)
    for k in range(len(out) - 1, 0, -1):
        j = _uniform_index(seed, k, k + 1)
        out[k], out[j] = out[j], out[k]
    return out


def crs_committee_seed(r: Digest) -> Digest:
    return hash_parts("committee/crs", r)


def notary_committee_seed(r: Digest, chain_id: int) -> Digest:
    return hash_parts("committee/notary", chain_id, r)


def elect_committees(r_next: CrsValue, node_set: Sequence[int], sizes: CommitteeSizes) -> EpochConfig:
    nodes = tuple(sorted(set(node_set)))
    if len(nodes) != len(node_set):
        raise ValueError("node_set contains duplicates")
    if sizes.crs > len(nodes) or sizes.notary > len(nodes):
        raise CommitteeTooLarge(
            f"committee sizes crs={sizes.crs} notary={sizes.notary} exceed {len(nodes)} nodes"
        )
    if sizes.crs < 1 or sizes.notary < 1:
        raise ValueError("committee sizes must be positive")
    r = r_next.value
    crs_committee = tuple(fisher_yates_shuffle(crs_committee_seed(r), nodes)[: sizes.crs])
    notaries = tuple(
        tuple(fisher_yates_shuffle(notary_committee_seed(r, j), nodes)[: sizes.notary])
        for j in range(sizes.n_chains)
    )
    return EpochConfig(r_next.epoch_index, r, crs_committee, notaries, nodes)
