"""Per-chain block production, notarization and the compaction chain.

The pieces here are pure functions and small state objects; the simulator's
node process wires them to the network.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence

from .agreement import BOTTOM, SKIP, BaState, BaValue, compute_status, should_propose
from .crypto import (
    Digest,
    GroupPublicKey,
    SecretKey,
    ShareSecret,
    ShareSignature,
    ThresholdSignature,
    combine,
    share_sign,
    verify_threshold,
)
from .lattice import (
    AckField,
    Block,
    CompactionNote,
    LatticeView,
    compaction_message,
    empty_block,
    notarization_message,
)
from .ordering import DeliveryBatch, Mode, OrderingState
from .ordering.core import sort_batch
from .timestamp import TimestampVector


class MissingParentNotarization(ValueError):
    pass


class UnknownDecidedBlock(LookupError):
    pass


def max_faulty_members(k: int) -> int:
    return (k - 1) // 3


def notary_threshold(k: int) -> int:
    """Shares needed for a notarization by a committee of k members."""
    return max_faulty_members(k) + 1


def load_balancer_admit(tx_digest: Digest, chain_id: int, n_chains: int) -> bool:
    if not 0 <= chain_id < n_chains:
        raise ValueError(f"chain {chain_id} outside [0, {n_chains})")
    return tx_digest.value % n_chains == chain_id


@dataclass
class HeightContext:
    chain_id: int
    height: int
    epoch_index: int
    status: bytes = b""
    ba: Optional[BaState] = None
    proposal: Optional[Block] = None
    collected_shares: dict = field(default_factory=dict)  # hash -> {index: share}

    def __post_init__(self):
        if not self.status:
            self.status = compute_status(0, self.chain_id, self.height)

    def add_share(self, block_hash: Digest, share: ShareSignature) -> int:
        bucket = self.collected_shares.setdefault(block_hash, {})
        bucket.setdefault(share.share_index, share)
        return len(bucket)


@dataclass
class Mempool:
    """Transactions known to one node, in arrival order."""

    arrivals: dict = field(default_factory=dict)  # digest -> arrival time

    def add(self, tx: Digest, now: int) -> None:
        self.arrivals.setdefault(tx, now)

    def admitted(self, chain_id: int, n_chains: int, exclude: Iterable[Digest] = (), limit: Optional[int] = None):
        skip = set(exclude)
        out = []
        for tx in self.arrivals:
            if tx in skip or not load_balancer_admit(tx, chain_id, n_chains):
                continue
            out.append(tx)
            if limit is not None and len(out) >= limit:
                break
        return out


def select_acks(
    lattice: LatticeView,
    chain_id: int,
    parent: Optional[Block],
    chains: Iterable[int],
    allowed=None,
) -> tuple[AckField, ...]:
    """Ack the latest known block of every other chain that moves past the parent's acks.

    ``allowed(block)`` can veto an ack target (configuration-round rule).
    """
    frontier = lattice.ack_frontier(parent.hash) if parent is not None else {}
    acks = []
    for c in sorted(chains):
        if c == chain_id:
            continue
        tip = lattice.latest(c)
        while tip is not None and allowed is not None and not allowed(tip):
            tip = lattice.block_at(c, tip.height - 1) if tip.height > 0 else None
        if tip is None or tip.height <= frontier.get(c, -1):
            continue
        acks.append(AckField(c, tip.hash, tip.height))
    return tuple(acks)


def build_block(
    chain_id: int,
    height: int,
    proposer_id: int,
    parent: Optional[Block],
    parent_notarization: Optional[ThresholdSignature],
    acks: Sequence[AckField],
    payload: Sequence[Digest],
    now: int,
    epoch: int = 0,
    config_round: int = 0,
    compaction_notes: Sequence[CompactionNote] = (),
) -> Block:
    if height > 0 and (parent is None or parent_notarization is None):
        raise MissingParentNotarization(f"chain {chain_id} height {height}")
    ts = now if parent is None else max(now, parent.block_timestamp + 1)
    return Block(
        chain_id=chain_id,
        height=height,
        proposer_id=proposer_id,
        parent_hash=parent.hash if parent is not None else None,
        acks=tuple(acks),
        payload=tuple(payload),
        block_timestamp=ts,
        parent_notarization=parent_notarization,
        epoch=epoch,
        config_round=config_round,
        compaction_notes=tuple(compaction_notes),
    )


def propose_or_abstain(
    ctx: HeightContext,
    secret_key: SecretKey,
    crs: Digest,
    delta,
    make_block,
) -> Optional[Block]:
    """``make_block()`` builds the candidate; it is only called when the node proposes."""
    if not should_propose(secret_key, ctx.status, crs, Fraction(delta)):
        return None
    ctx.proposal = make_block()
    return ctx.proposal


def check_proposal(
    block: Block,
    chain_id: int,
    height: int,
    sender: int,
    parent: Optional[Block],
    parent_group: Optional[GroupPublicKey],
    n_chains: int,
) -> bool:
    """Cheap checks a notary runs on a proposal before it may be elected."""
    if block.chain_id != chain_id or block.height != height or block.proposer_id != sender:
        return False
    if height == 0:
        if block.parent_hash is not None:
            return False
    else:
        if parent is None or block.parent_hash != parent.hash:
            return False
        if block.block_timestamp <= parent.block_timestamp:
            return False
        if parent_group is None or block.parent_notarization is None:
            return False
        msg = notarization_message(chain_id, height - 1, parent.hash)
        if not verify_threshold(parent_group, msg, block.parent_notarization):
            return False
    return all(load_balancer_admit(tx, chain_id, n_chains) for tx in block.payload)


def decided_block(
    decided: BaValue,
    bodies: Mapping[Digest, Block],
    chain_id: int,
    height: int,
    epoch: int,
    parent: Optional[Block],
    parent_notarization: Optional[ThresholdSignature],
    genesis_time: int = 0,
    config_round: int = 0,
) -> Block:
    """The block that becomes height h once agreement has decided."""
    if decided is SKIP:
        raise ValueError("SKIP is never a decision")
    if decided is BOTTOM:
        return empty_block(chain_id, height, epoch, parent, parent_notarization, genesis_time, config_round)
    body = bodies.get(decided)
    if body is None:
        raise UnknownDecidedBlock(decided)
    return body


def decide_height(ctx: HeightContext, decided: BaValue, bodies, parent, parent_notarization, **kw) -> Block:
    return decided_block(decided, bodies, ctx.chain_id, ctx.height, ctx.epoch_index, parent, parent_notarization, **kw)


def notarization_share(secret: ShareSecret, chain_id: int, height: int, block_hash: Digest) -> ShareSignature:
    return share_sign(secret, notarization_message(chain_id, height, block_hash))


def notarize(
    group: GroupPublicKey,
    chain_id: int,
    height: int,
    block_hash: Digest,
    shares: Iterable[ShareSignature],
) -> ThresholdSignature:
    return combine(group, notarization_message(chain_id, height, block_hash), shares)


def verify_notarization(group: GroupPublicKey, block: Block, sig: ThresholdSignature) -> bool:
    return verify_threshold(group, notarization_message(block.chain_id, block.height, block.hash), sig)


def compaction_share(secret: ShareSecret, position: int, consensus_time: int, block_hash: Digest) -> ShareSignature:
    return share_sign(secret, compaction_message(position, consensus_time, block_hash))


def notarize_compaction(
    group: GroupPublicKey,
    position: int,
    consensus_time: int,
    block_hash: Digest,
    shares: Iterable[ShareSignature],
) -> ThresholdSignature:
    return combine(group, compaction_message(position, consensus_time, block_hash), shares)


def verify_compaction(group: GroupPublicKey, note: CompactionNote) -> bool:
    msg = compaction_message(note.position, note.consensus_timestamp, note.block_hash)
    return verify_threshold(group, msg, note.signature)


# -- configuration change ---------------------------------------------------------


@dataclass(frozen=True)
class RoundParams:
    chains: int
    phi: Optional[int] = None
    notary_size: Optional[int] = None


@dataclass(frozen=True)
class ConfigChange:
    effective_time: int
    old_round: RoundParams
    new_round: RoundParams

    def round_of(self, block_timestamp: int) -> int:
        return 1 if block_timestamp > self.effective_time else 0


def may_ack(own_round: int, target: Block, lattice: LatticeView) -> bool:
    """Round r2 blocks ack r2 blocks or the last r1 block of a chain; r1 blocks ack r1 only."""
    if own_round == 0:
        return target.config_round == 0
    if target.config_round == 1:
        return True
    nxt = lattice.block_at(target.chain_id, target.height + 1)
    return nxt is not None and nxt.config_round == 1


@dataclass(frozen=True)
class Entry:
    position: int
    block: Block
    consensus_time: int
    batch_index: int
    mode: Mode
    config_round: int = 0


class CompactionChain:
    """Ordered output of one node, including a configuration boundary if any."""

    def __init__(
        self,
        n: int,
        phi: Optional[int] = None,
        change: Optional[ConfigChange] = None,
        genesis_time: int = 0,
        monotone: bool = False,
    ):
        self.change = change
        self.n = n
        self.round = 0
        self.orderer = OrderingState(n, phi)
        self.clock = TimestampVector(n, genesis_time, monotone)
        self.entries: list[Entry] = []
        self.batches: list[tuple[int, DeliveryBatch]] = []  # (round, batch)
        self._buffer: list[Block] = []
        self._boundary: dict[int, Digest] = {}
        self._r1_hashes: set[Digest] = set()

    @property
    def boundary_reached(self) -> bool:
        return self.round == 1

    def receive(self, block: Block) -> list[Entry]:
        if self.change is None:
            return self._emit(self.orderer.receive_block(block))
        if self.round == 1:
            if block.config_round == 0:
                raise ValueError(f"{block.label()} from the old round after the boundary")
            if block.chain_id >= self.change.new_round.chains:
                return []  # terminal marker of a deleted chain
            return self._emit(self.orderer.receive_block(block))
        if block.config_round == 0:
            self._r1_hashes.add(block.hash)
            return self._emit(self.orderer.receive_block(block))
        self._buffer.append(block)
        if block.chain_id < self.change.old_round.chains and block.chain_id not in self._boundary:
            self._boundary[block.chain_id] = block.parent_hash
        if len(self._boundary) == self.change.old_round.chains:
            return self._cross_boundary()
        return []

    def _emit(self, batches: Iterable[DeliveryBatch]) -> list[Entry]:
        out = []
        for batch in batches:
            self.batches.append((self.round, batch))
            for h in batch.blocks:
                b = self.orderer.delivered_block(h)
                e = Entry(len(self.entries), b, self.clock.push(b), len(self.batches) - 1, batch.mode, self.round)
                self.entries.append(e)
                out.append(e)
        return out

    def _flush(self) -> list[DeliveryBatch]:
        """Remaining r1 blocks, candidate set by candidate set in hash order."""
        st = self.orderer
        pending = dict(st.pending)
        done = set(st.delivered)
        out = []
        while pending:
            ready = [h for h, b in pending.items() if all(r in done for r in b.acked_hashes)]
            for h in ready:
                del pending[h]
                done.add(h)
            out.append(DeliveryBatch(sort_batch(ready), Mode.FLUSH, len(st.batches) + len(out)))
        return out

    def _cross_boundary(self) -> list[Entry]:
        out = self._emit(self._flush())
        new = self.change.new_round
        last_time = self.clock.last if self.clock.last is not None else 0
        self.round = 1
        self.n = new.chains
        self.orderer = OrderingState(new.chains, new.phi, delivered=self._r1_hashes)
        self.clock.resize(new.chains, last_time)
        self.clock.monotone = True
        buffered, self._buffer = self._buffer, []
        for b in buffered:
            out.extend(self.receive(b))
        return out

    def batch_lines(self) -> list[str]:
        return [f"{i}," + b.log_line().split(",", 1)[1] for i, (_, b) in enumerate(self.batches)]

    def timestamp_pairs(self) -> list[tuple[Digest, int]]:
        return [(e.block.hash, e.consensus_time) for e in self.entries]
