"""Blocks, ack fields and one node's view of the blocklattice."""

from __future__ import annotations

import enum
import heapq
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional, Sequence

from .crypto import (
    Digest,
    GroupPublicKey,
    ThresholdSignature,
    encode_parts,
    hash_bytes,
    verify_threshold,
)

NO_PROPOSER = (1 << 64) - 1


class UnknownBlock(KeyError):
    pass


@dataclass(frozen=True)
class AckField:
    block_proposer_id: int  # the acked block's chain
    acked_block_hash: Digest
    block_height: int


@dataclass(frozen=True)
class CompactionNote:
    """Notarized compaction-chain entry carried in a later block."""

    position: int
    consensus_timestamp: int
    block_hash: Digest
    signature: ThresholdSignature


def _encode_tsig(sig: Optional[ThresholdSignature]) -> bytes:
    if sig is None:
        return encode_parts(b"")
    return encode_parts(sig.group_id, sig.message_digest, sig.tag)


@dataclass(frozen=True)
class Block:
    chain_id: int
    height: int
    proposer_id: int
    parent_hash: Optional[Digest]
    acks: tuple[AckField, ...]
    payload: tuple[Digest, ...]
    block_timestamp: int
    parent_notarization: Optional[ThresholdSignature] = None
    epoch: int = 0
    config_round: int = 0
    compaction_notes: tuple[CompactionNote, ...] = ()
    hash: Digest = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "hash", hash_bytes(self.encode()))

    def encode(self) -> bytes:
        acks = b"".join(
            encode_parts(a.block_proposer_id, a.acked_block_hash, a.block_height) for a in self.acks
        )
        notes = b"".join(
            encode_parts(n.position, n.consensus_timestamp, n.block_hash, _encode_tsig(n.signature))
            for n in self.compaction_notes
        )
        return encode_parts(
            "block/v1",
            self.chain_id,
            self.height,
            self.proposer_id,
            self.parent_hash.to_bytes() if self.parent_hash is not None else b"",
            encode_parts(len(self.acks)) + acks,
            encode_parts(len(self.payload)) + b"".join(d.to_bytes() for d in self.payload),
            self.block_timestamp,
            _encode_tsig(self.parent_notarization),
            self.epoch,
            self.config_round,
            encode_parts(len(self.compaction_notes)) + notes,
        )

    @property
    def acked_hashes(self) -> tuple[Digest, ...]:
        """Parent first, then acked blocks of other chains."""
        refs = tuple(a.acked_block_hash for a in self.acks)
        return refs if self.parent_hash is None else (self.parent_hash,) + refs

    @property
    def is_empty(self) -> bool:
        return self.proposer_id == NO_PROPOSER

    def label(self) -> str:
        return f"b[{self.chain_id},{self.height}]"


@lru_cache(maxsize=65536)
def notarization_message(chain_id: int, height: int, block_hash: Digest) -> bytes:
    return encode_parts("notarize", chain_id, height, block_hash)


def compaction_message(position: int, consensus_timestamp: int, block_hash: Digest) -> bytes:
    return encode_parts("compaction", position, consensus_timestamp, block_hash)


def empty_block(
    chain_id: int,
    height: int,
    epoch: int,
    parent: Optional[Block],
    parent_notarization: Optional[ThresholdSignature],
    genesis_time: int = 0,
    config_round: int = 0,
) -> Block:
    """The canonical block every node substitutes when agreement decides BOTTOM."""
    return Block(
        chain_id=chain_id,
        height=height,
        proposer_id=NO_PROPOSER,
        parent_hash=parent.hash if parent is not None else None,
        acks=(),
        payload=(),
        block_timestamp=(parent.block_timestamp + 1) if parent is not None else genesis_time,
        parent_notarization=parent_notarization,
        epoch=epoch,
        config_round=config_round,
    )


# -- validation -----------------------------------------------------------------


class Verdict(enum.Enum):
    ACCEPT = "accept"
    DEFER = "defer"
    REJECT = "reject"


@dataclass(frozen=True)
class ValidationResult:
    verdict: Verdict
    missing: tuple[Digest, ...] = ()
    reason: str = ""

    def __bool__(self) -> bool:
        return self.verdict is Verdict.ACCEPT


NotaryLookup = Callable[[int, int], Optional[GroupPublicKey]]


def check_structure(block: Block) -> Optional[str]:
    """Checks that need no other block; returns a reject reason or None."""
    if block.height < 0:
        return "negative height"
    if block.height == 0:
        if block.parent_hash is not None or block.parent_notarization is not None:
            return "genesis block with parent"
    elif block.parent_hash is None:
        return "height gap: missing parent"
    seen = set()
    for ack in block.acks:
        if ack.block_proposer_id == block.chain_id:
            return "ack of own chain"
        if ack.block_proposer_id in seen:
            return "duplicate ack chain"
        seen.add(ack.block_proposer_id)
    return None


class LatticeView:
    """Causally complete blocks held by one node.

    ``notary_lookup(chain, height)`` returns the group that notarizes the block at
    that height; when it is None notarizations are not checked.
    """

    def __init__(self, notary_lookup: Optional[NotaryLookup] = None):
        self.notary_lookup = notary_lookup
        self.blocks: dict[Digest, Block] = {}
        self.by_position: dict[tuple[int, int], Digest] = {}
        self.tips: dict[int, int] = {}
        self.delivered: set[Digest] = set()
        self.deferred: dict[Digest, Block] = {}
        self.waiting_on: dict[Digest, set[Digest]] = {}
        self.rejected: dict[Digest, str] = {}
        self._frontier: dict[Digest, dict[int, int]] = {}

    def __contains__(self, h: Digest) -> bool:
        return h in self.blocks

    def __len__(self) -> int:
        return len(self.blocks)

    def get(self, h: Digest) -> Block:
        try:
            return self.blocks[h]
        except KeyError:
            raise UnknownBlock(h) from None

    def block_at(self, chain_id: int, height: int) -> Optional[Block]:
        h = self.by_position.get((chain_id, height))
        return None if h is None else self.blocks[h]

    def latest(self, chain_id: int) -> Optional[Block]:
        tip = self.tips.get(chain_id)
        return None if tip is None else self.block_at(chain_id, tip)

    @property
    def pending(self) -> set[Digest]:
        return set(self.blocks) - self.delivered

    def mark_delivered(self, hashes: Iterable[Digest]) -> None:
        for h in hashes:
            if h not in self.blocks:
                raise UnknownBlock(h)
            self.delivered.add(h)

    def ack_frontier(self, h: Digest) -> dict[int, int]:
        """Highest acked height per foreign chain along this block's own chain."""
        return self._frontier[h]

    # -- validation

    def _contextual(self, block: Block) -> Optional[str]:
        if block.height > 0:
            parent = self.blocks[block.parent_hash]
            if parent.chain_id != block.chain_id or parent.height != block.height - 1:
                return "height gap: parent is not the previous block of this chain"
            if block.block_timestamp <= parent.block_timestamp:
                return "timestamp does not increase along the chain"
            if block.config_round < parent.config_round:
                return "configuration round regression"
            frontier = self._frontier[block.parent_hash]
        else:
            frontier = {}
        existing = self.by_position.get((block.chain_id, block.height))
        if existing is not None and existing != block.hash:
            return "conflicting block at this position"
        for ack in block.acks:
            target = self.blocks[ack.acked_block_hash]
            if target.chain_id != ack.block_proposer_id or target.height != ack.block_height:
                return "ack field does not match the acked block"
            if ack.block_height < frontier.get(ack.block_proposer_id, -1):
                return "ack regression"
        if block.height > 0 and self.notary_lookup is not None:
            group = self.notary_lookup(block.chain_id, block.height - 1)
            sig = block.parent_notarization
            if (
                group is None
                or sig is None
                or not verify_threshold(
                    group,
                    notarization_message(block.chain_id, block.height - 1, block.parent_hash),
                    sig,
                )
            ):
                return "bad notarization"
        return None

    def validate_block(self, block: Block) -> ValidationResult:
        reason = check_structure(block)
        if reason is not None:
            return ValidationResult(Verdict.REJECT, reason=reason)
        missing = tuple(h for h in block.acked_hashes if h not in self.blocks)
        if missing:
            return ValidationResult(Verdict.DEFER, missing=missing)
        reason = self._contextual(block)
        if reason is not None:
            return ValidationResult(Verdict.REJECT, reason=reason)
        return ValidationResult(Verdict.ACCEPT)

    # -- insertion

    def _store(self, block: Block) -> None:
        self.blocks[block.hash] = block
        self.by_position[(block.chain_id, block.height)] = block.hash
        self.tips[block.chain_id] = max(self.tips.get(block.chain_id, -1), block.height)
        frontier = dict(self._frontier[block.parent_hash]) if block.parent_hash else {}
        for ack in block.acks:
            if ack.block_height > frontier.get(ack.block_proposer_id, -1):
                frontier[ack.block_proposer_id] = ack.block_height
        self._frontier[block.hash] = frontier

    def insert_block(self, block: Block) -> list[Block]:
        """Store ``block`` or defer it; returns every block newly made causally complete.

        Released blocks come out in dependency order, ties broken by
        (height, chain_id, hash).  Re-inserting a known block is a no-op.
        """
        if block.hash in self.blocks or block.hash in self.deferred or block.hash in self.rejected:
            return []
        result = self.validate_block(block)
        if result.verdict is Verdict.REJECT:
            self.rejected[block.hash] = result.reason
            return []
        if result.verdict is Verdict.DEFER:
            self.deferred[block.hash] = block
            for h in result.missing:
                self.waiting_on.setdefault(h, set()).add(block.hash)
            return []
        released: list[Block] = []
        ready = [(block.height, block.chain_id, block.hash)]
        candidates = {block.hash: block}
        while ready:
            _, _, h = heapq.heappop(ready)
            b = candidates.pop(h)
            if b.hash in self.blocks:
                continue
            reason = self._contextual(b)
            if reason is not None:
                self.rejected[b.hash] = reason
                continue
            self._store(b)
            released.append(b)
            for w in sorted(self.waiting_on.pop(b.hash, ())):
                child = self.deferred.get(w)
                if child is None:
                    continue
                if all(x in self.blocks for x in child.acked_hashes):
                    del self.deferred[w]
                    candidates[w] = child
                    heapq.heappush(ready, (child.height, child.chain_id, child.hash))
        return released

    # -- reachability

    def indirect_ack(self, a: Digest, b: Digest) -> bool:
        """True when b is reachable from a through parent links and acks."""
        if a not in self.blocks:
            raise UnknownBlock(a)
        if b not in self.blocks:
            raise UnknownBlock(b)
        target = self.blocks[b]
        stack = [a]
        seen = {a}
        while stack:
            cur = self.blocks[stack.pop()]
            for ref in cur.acked_hashes:
                if ref == b:
                    return True
                if ref in seen:
                    continue
                seen.add(ref)
                nxt = self.blocks[ref]
                # a block cannot reach anything on its own chain above itself
                if nxt.chain_id == target.chain_id and nxt.height < target.height:
                    continue
                stack.append(ref)
        return False

    def snapshot(self) -> tuple:
        return (
            frozenset(self.blocks),
            tuple(sorted(self.tips.items())),
            frozenset(self.delivered),
            frozenset(self.deferred),
        )


# -- fixture format -------------------------------------------------------------
#
#   chain,height,proposer,timestamp,acks=chain:height;chain:height
#
# Blank lines and lines starting with '#' are ignored.  Parents are implicit.


def parse_fixture(text: str) -> list[Block]:
    blocks: list[Block] = []
    index: dict[tuple[int, int], Block] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 5 or not parts[4].startswith("acks="):
            raise ValueError(f"line {lineno}: expected chain,height,proposer,timestamp,acks=...")
        chain, height, proposer, ts = (int(p) for p in parts[:4])
        acks = []
        spec = parts[4][len("acks="):].strip()
        if spec:
            for item in spec.split(";"):
                c, hgt = (int(x) for x in item.split(":"))
                target = index.get((c, hgt))
                if target is None:
                    raise ValueError(f"line {lineno}: ack of unknown block {c}:{hgt}")
                acks.append(AckField(c, target.hash, hgt))
        parent = None
        if height > 0:
            parent = index.get((chain, height - 1))
            if parent is None:
                raise ValueError(f"line {lineno}: parent {chain}:{height - 1} not defined")
        block = Block(
            chain_id=chain,
            height=height,
            proposer_id=proposer,
            parent_hash=parent.hash if parent else None,
            acks=tuple(sorted(acks, key=lambda a: a.block_proposer_id)),
            payload=(),
            block_timestamp=ts,
        )
        index[(chain, height)] = block
        blocks.append(block)
    return blocks


def format_fixture(blocks: Sequence[Block]) -> str:
    lines = []
    for b in blocks:
        acks = ";".join(f"{a.block_proposer_id}:{a.block_height}" for a in b.acks)
        lines.append(f"{b.chain_id},{b.height},{b.proposer_id},{b.block_timestamp},acks={acks}")
    return "\n".join(lines) + "\n"


def iter_topological(blocks: Iterable[Block]) -> Iterator[Block]:
    """Blocks in a deterministic causal order (Kahn with (height, chain, hash) ties)."""
    pool = {b.hash: b for b in blocks}
    indeg = {h: sum(1 for r in b.acked_hashes if r in pool) for h, b in pool.items()}
    children: dict[Digest, list[Digest]] = {}
    for h, b in pool.items():
        for r in b.acked_hashes:
            if r in pool:
                children.setdefault(r, []).append(h)
    ready = [(b.height, b.chain_id, h) for h, b in pool.items() if indeg[h] == 0]
    heapq.heapify(ready)
    while ready:
        _, _, h = heapq.heappop(ready)
        yield pool[h]
        for c in children.get(h, ()):
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(ready, (pool[c].height, pool[c].chain_id, c))
