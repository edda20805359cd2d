"""One simulated node: agreement instances, notarization and the local lattice."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Optional

from ..agreement import BOTTOM, BaMessage, ByzantineAgreement, InvalidSignature, Kind
from ..chain import (
    CompactionChain,
    Entry,
    HeightContext,
    Mempool,
    build_block,
    check_proposal,
    compaction_share,
    may_ack,
    notarization_share,
    notarize,
    notarize_compaction,
    propose_or_abstain,
    select_acks,
)
from ..crs import crs_message
from ..crypto import Digest, InvalidShare, ShareSignature, ThresholdSignature, share_sign, verify_share
from ..lattice import Block, CompactionNote, LatticeView, compaction_message, empty_block, notarization_message
from .messages import CompactionShare, CrsShare, NotaryShare, envelope
from .network import Envelope

if TYPE_CHECKING:
    from .runner import World

MAX_NOTES_PER_BLOCK = 64
KEEP_HEIGHTS = 3


@dataclass
class BaRecord:
    chain_id: int
    height: int
    start: int
    members: int
    byzantine: int
    decided_at: Optional[int] = None
    round: Optional[int] = None
    value: Any = None
    heal_round: Optional[int] = None


@dataclass
class ChainState:
    chain_id: int
    next_final: int = 0
    blocks: dict = field(default_factory=dict)  # height -> Block
    sigmas: dict = field(default_factory=dict)  # height -> Σ_h
    bodies: dict = field(default_factory=dict)  # height -> {hash: Block}
    shares: dict = field(default_factory=dict)  # height -> {hash: {index: verified share}}
    unverified: dict = field(default_factory=dict)  # height -> [NotaryShare] awaiting the group key
    bas: dict = field(default_factory=dict)  # height -> ByzantineAgreement
    buffered: dict = field(default_factory=dict)  # height -> [BaMessage]
    started: set = field(default_factory=set)
    halted: bool = False
    included: set = field(default_factory=set)
    notes_recorded: set = field(default_factory=set)


class Node:
    def __init__(self, node_id: int, world: "World", behavior=None):
        self.id = node_id
        self.world = world
        self.sc = world.scenario
        self.behavior = behavior
        self.keys = world.keypairs[node_id]
        self.crs_values: dict[int, Digest] = {0: world.genesis.value}
        self.crs_shares: dict[int, dict[int, ShareSignature]] = {}
        self.chains = {j: ChainState(j) for j in range(self.sc.all_chains)}
        self.seen: dict[Any, set] = {}
        self.armed: dict[tuple[int, int], int] = {}
        self.lattice = LatticeView(self._notary_group_at)
        change = world.config_change
        self.compaction = CompactionChain(
            self.sc.chains,
            self.sc.phi,
            change,
            genesis_time=0,
            monotone=self.sc.monotone_timestamps,
        )
        self.mempool = Mempool()
        self.records: dict[tuple[int, int], BaRecord] = {}
        self.entries: list[Entry] = []
        self.comp_shares: dict[tuple, dict[int, ShareSignature]] = {}
        self.comp_notes: dict[int, CompactionNote] = {}
        self.equivocations: set[tuple[int, int, int]] = set()
        self.invalid = 0
        self.stats = {"proposals": 0, "abstentions": 0, "empty_blocks": 0}

    # -- helpers ----------------------------------------------------------------

    @property
    def byzantine(self) -> bool:
        return self.behavior is not None

    def corrupt(self, now: int) -> bool:
        return self.behavior is not None and self.behavior.corrupt(now)

    def epoch_of(self, height: int) -> int:
        L = self.sc.epoch_length
        return height // L if L else 0

    def epoch_config(self, e: int):
        r = self.crs_values.get(e)
        return None if r is None else self.world.registry.epoch_config(e, r)

    def notary_group(self, chain_id: int, height: int):
        e = self.epoch_of(height)
        r = self.crs_values.get(e)
        if r is None:
            return None, None
        return self.world.registry.notary_group(e, r, chain_id)

    def _notary_group_at(self, chain_id: int, height: int):
        return self.notary_group(chain_id, height)[0]

    def chain_active(self, chain_id: int) -> bool:
        change = self.world.config_change
        if change is None:
            return chain_id < self.sc.chains
        if chain_id < change.old_round.chains:
            return not self.chains[chain_id].halted
        return self.compaction.boundary_reached and chain_id < change.new_round.chains

    def n_chains_for_round(self, r: int) -> int:
        change = self.world.config_change
        if change is None or r == 0:
            return self.sc.chains
        return change.new_round.chains

    def expected_round(self, chain_id: int, parent: Optional[Block], ts: int) -> int:
        change = self.world.config_change
        if change is None:
            return 0
        if chain_id >= change.old_round.chains or (parent is not None and parent.config_round == 1):
            return 1
        return change.round_of(ts)

    def _empty(self, chain_id: int, height: int) -> Block:
        cs = self.chains[chain_id]
        parent = cs.blocks.get(height - 1)
        change = self.world.config_change
        genesis = 0
        if change is not None and chain_id >= change.old_round.chains:
            genesis = change.effective_time + 1
        ts = parent.block_timestamp + 1 if parent is not None else genesis
        return empty_block(
            chain_id, height, self.epoch_of(height), parent, cs.sigmas.get(height - 1),
            genesis_time=genesis, config_round=self.expected_round(chain_id, parent, ts),
        )

    # -- sending -----------------------------------------------------------------

    def send(self, body, now: int) -> None:
        env = envelope(self.id, body)
        self._mark(env)
        if self.behavior is not None and self.behavior.send(self, env, now):
            return
        if self.world.network.record:
            self.world.network.transcript.append((now, self.id, -1, env.kind, env.digest.hex()))
        self.world.network.gossip(self.id, env, now)
        self.world.on_emit(self, body, now)

    def _mark(self, env: Envelope) -> bool:
        bucket = self.seen.setdefault(env.scope, set())
        if env.digest in bucket:
            return False
        bucket.add(env.digest)
        return True

    # -- event entry points ---------------------------------------------------------

    def boot(self, now: int) -> None:
        e0 = self.epoch_config(0)
        if e0 is not None and self.id in e0.crs_committee and self.sc.epoch_length:
            self._send_crs_share(0, now)
        for j in range(self.sc.chains):
            self.try_start(j, now)

    def deliver(self, env: Envelope, src: int, now: int) -> None:
        self.world.network.note_delivery(env, src, self.id)
        if self._stale(env):
            return
        if not self._mark(env):
            return
        if self.behavior is None or self.behavior.relays(self, now):
            self.world.network.gossip(self.id, env, now)
        self.handle(env.body, now)

    def _stale(self, env: Envelope) -> bool:
        if env.scope is None:
            return False
        chain_id, height = env.scope
        return height < self.chains[chain_id].next_final - KEEP_HEIGHTS

    def handle(self, body, now: int) -> None:
        if isinstance(body, BaMessage):
            self._on_ba(body, now)
        elif isinstance(body, NotaryShare):
            cs = self.chains[body.chain_id]
            if body.height >= cs.next_final:
                cs.unverified.setdefault(body.height, []).append(body)
                self.try_finalize(body.chain_id, now)
        elif isinstance(body, CrsShare):
            self.crs_shares.setdefault(body.epoch, {}).setdefault(body.share.share_index, body.share)
            self._try_crs(now)
        elif isinstance(body, CompactionShare):
            self._on_compaction_share(body, now)

    def on_tick(self, chain_id: int, height: int, now: int) -> None:
        if self.armed.get((chain_id, height)) != now:
            return
        del self.armed[(chain_id, height)]
        ba = self.chains[chain_id].bas.get(height)
        if ba is None:
            return
        out = ba.on_clock(now)
        self._after_ba(chain_id, height, ba, out, now)

    def on_tx(self, tx: Digest, now: int) -> None:
        self.mempool.add(tx, now)

    def on_heal(self, now: int) -> None:
        for (chain_id, height), rec in self.records.items():
            ba = self.chains[chain_id].bas.get(height)
            if ba is not None and ba.state.decided is None:
                rec.heal_round = ba.state.round

    # -- agreement ------------------------------------------------------------------

    def _on_ba(self, msg: BaMessage, now: int) -> None:
        cs = self.chains[msg.chain_id]
        if msg.kind is Kind.INIT and msg.block is not None and msg.block.hash == msg.value:
            if msg.height >= cs.next_final:
                cs.bodies.setdefault(msg.height, {})[msg.value] = msg.block
                self.try_finalize(msg.chain_id, now)
        ba = cs.bas.get(msg.height)
        if ba is None:
            if msg.height >= cs.next_final:
                cs.buffered.setdefault(msg.height, []).append(msg)
            return
        self._feed(ba, msg, now)

    def _feed(self, ba: ByzantineAgreement, msg: BaMessage, now: int) -> None:
        try:
            out = ba.on_message(msg, now)
        except InvalidSignature:
            self.invalid += 1
            return
        if msg.sender in ba.ledger.equivocators:
            self.equivocations.add((ba.chain_id, ba.height, msg.sender))
        self._after_ba(ba.chain_id, ba.height, ba, out, now)

    def _after_ba(self, chain_id: int, height: int, ba: ByzantineAgreement, out, now: int) -> None:
        for m in out:
            self.send(m, now)
        rec = self.records.get((chain_id, height))
        if ba.state.decided is not None and rec is not None and rec.decided_at is None:
            rec.decided_at = ba.state.decided_at
            rec.round = ba.state.decided_round
            rec.value = ba.state.decided
            self._on_decide(chain_id, height, ba, now)
        d = ba.next_deadline()
        if d is not None and self.armed.get((chain_id, height)) != d:
            self.armed[(chain_id, height)] = d
            self.world.network.schedule(max(d, now), self.id, ("tick", chain_id, height))

    def _valid_init(self, chain_id: int, height: int, msg: BaMessage) -> bool:
        block = msg.block
        if block is None or block.hash != msg.value:
            return False
        cs = self.chains[chain_id]
        parent = cs.blocks.get(height - 1)
        group = self.notary_group(chain_id, height - 1)[0] if height > 0 else None
        r = self.expected_round(chain_id, parent, block.block_timestamp)
        if block.config_round != r or block.epoch != self.epoch_of(height):
            return False
        return check_proposal(block, chain_id, height, msg.sender, parent, group, self.n_chains_for_round(r))

    def try_start(self, chain_id: int, now: int) -> None:
        cs = self.chains[chain_id]
        h = cs.next_final
        if cs.halted or h in cs.started or not self.chain_active(chain_id):
            return
        if h == 0 and now < self.world.start_offset[self.id]:
            return
        cfg = self.epoch_config(self.epoch_of(h))
        if cfg is None or self.id not in cfg.notary_set(chain_id):
            return
        if self.behavior is not None and not self.behavior.start_height(self, chain_id, h, now):
            cs.started.add(h)
            return
        cs.started.add(h)
        members = cfg.notary_set(chain_id)
        ba = ByzantineAgreement(
            self.id, chain_id, h, members, self.world.public_keys, cfg.crs, self.sc.lam,
            validate_init=lambda m, c=chain_id, hh=h: self._valid_init(c, hh, m),
        )
        cs.bas[h] = ba
        self.records[(chain_id, h)] = BaRecord(
            chain_id, h, now, len(members), sum(1 for x in members if x in self.world.byzantine_ids)
        )
        for m in cs.buffered.pop(h, ()):
            try:
                ba.on_message(m, now)
            except InvalidSignature:
                self.invalid += 1
        ctx = HeightContext(chain_id, h, self.epoch_of(h), status=ba.status)
        proposal = propose_or_abstain(
            ctx, self.keys.secret_key, cfg.crs, self.sc.delta_fraction,
            lambda: self.make_proposal(chain_id, h, now),
        )
        init = None
        if proposal is not None:
            self.stats["proposals"] += 1
            init = ba.make_init(proposal.hash, self.keys.secret_key, proposal)
            cs.bodies.setdefault(h, {})[proposal.hash] = proposal
        else:
            self.stats["abstentions"] += 1
        self.world.on_ba_start(self, chain_id, h, now)
        out = ba.start(now, init)
        for m in ba.ledger.equivocators:
            self.equivocations.add((chain_id, h, m))
        self._after_ba(chain_id, h, ba, out, now)

    def make_proposal(self, chain_id: int, height: int, now: int, timestamp: Optional[int] = None) -> Block:
        cs = self.chains[chain_id]
        parent = cs.blocks.get(height - 1)
        ts = now if timestamp is None else timestamp
        if parent is not None:
            ts = max(ts, parent.block_timestamp + 1)
        r = self.expected_round(chain_id, parent, ts)
        change = self.world.config_change
        deleted = change is not None and r == 1 and chain_id >= change.new_round.chains
        if deleted:
            acks, payload = (), ()
        else:
            n_round = self.n_chains_for_round(r)
            acks = select_acks(
                self.lattice, chain_id, parent, range(n_round),
                allowed=lambda b: may_ack(r, b, self.lattice) and b.chain_id < n_round,
            )
            payload = self.mempool.admitted(chain_id, n_round, cs.included, self.sc.max_block_txs)
        notes = ()
        if chain_id == 0 and self.comp_notes:
            fresh = sorted(p for p in self.comp_notes if p not in cs.notes_recorded)
            notes = tuple(self.comp_notes[p] for p in fresh[:MAX_NOTES_PER_BLOCK])
        return build_block(
            chain_id, height, self.id, parent, cs.sigmas.get(height - 1), acks, payload, ts,
            epoch=self.epoch_of(height), config_round=r, compaction_notes=notes,
        )

    def _on_decide(self, chain_id: int, height: int, ba: ByzantineAgreement, now: int) -> None:
        value = ba.state.decided
        block_hash = self._empty(chain_id, height).hash if value is BOTTOM else value
        group, secrets = self.notary_group(chain_id, height)
        secret = secrets.get(self.id) if secrets else None
        if secret is not None:
            share = notarization_share(secret, chain_id, height, block_hash)
            body = NotaryShare(chain_id, height, block_hash, share)
            cs = self.chains[chain_id]
            if height >= cs.next_final:
                cs.unverified.setdefault(height, []).append(body)
            self.send(body, now)
        self.world.on_decide(self, chain_id, height, now)
        self.try_finalize(chain_id, now)

    # -- notarization and the lattice --------------------------------------------

    def try_finalize(self, chain_id: int, now: int) -> None:
        cs = self.chains[chain_id]
        while not cs.halted:
            h = cs.next_final
            group, _ = self.notary_group(chain_id, h)
            if group is None:
                return
            buckets = cs.shares.setdefault(h, {})
            for body in cs.unverified.pop(h, ()):
                bucket = buckets.setdefault(body.block_hash, {})
                i = body.share.share_index
                vk = group.verification_keys.get(i)
                if i in bucket or vk is None:
                    continue
                if verify_share(vk, notarization_message(chain_id, h, body.block_hash), body.share):
                    bucket[i] = body.share
            found = None
            for block_hash in sorted(buckets):
                if len(buckets[block_hash]) >= group.threshold:
                    found = block_hash
                    break
            if found is None:
                return
            body = cs.bodies.get(h, {}).get(found)
            if body is None:
                empty = self._empty(chain_id, h)
                if empty.hash != found:
                    return  # decided body not received yet
                body = empty
                self.stats["empty_blocks"] += 1
            sigma = notarize(group, chain_id, h, found, list(buckets[found].values()))
            self._finalize(cs, h, body, sigma, now)

    def _finalize(self, cs: ChainState, h: int, block: Block, sigma: ThresholdSignature, now: int) -> None:
        cs.blocks[h] = block
        cs.sigmas[h] = sigma
        cs.next_final = h + 1
        cs.included.update(block.payload)
        if block.chain_id == 0:
            cs.notes_recorded.update(n.position for n in block.compaction_notes)
        change = self.world.config_change
        if change is not None and block.config_round == 1 and block.chain_id >= change.new_round.chains:
            cs.halted = True
        cs.bodies.pop(h, None)
        cs.shares.pop(h, None)
        cs.unverified.pop(h, None)
        self._prune(cs)
        for released in self.lattice.insert_block(block):
            for entry in self.compaction.receive(released):
                self._on_entry(entry, now)
        self.world.on_finalize(self, block.chain_id, h, now)
        if block.chain_id == 0 and self.sc.epoch_length and h % self.sc.epoch_length == 0 and h > 0:
            self._send_crs_share(h // self.sc.epoch_length, now)
        for j in self.chains:
            self.try_start(j, now)

    def _prune(self, cs: ChainState) -> None:
        old = cs.next_final - KEEP_HEIGHTS - 1
        if old < 0:
            return
        cs.bas.pop(old, None)
        cs.buffered.pop(old, None)
        self.seen.pop((cs.chain_id, old), None)
        self.armed.pop((cs.chain_id, old), None)
        self.world.maybe_prune(cs.chain_id, old)

    # -- CRS ------------------------------------------------------------------

    def _send_crs_share(self, e: int, now: int) -> None:
        cfg = self.epoch_config(e)
        if cfg is None or self.id not in cfg.crs_committee or self.corrupt(now):
            return
        group, secrets = self.world.registry.crs_group(e, cfg.crs)
        share = share_sign(secrets[self.id], crs_message(self.world.crs_value(e, cfg.crs)))
        self.crs_shares.setdefault(e, {})[self.id] = share
        self.send(CrsShare(e, share), now)
        self._try_crs(now)

    def _try_crs(self, now: int) -> None:
        progressed = True
        while progressed:
            progressed = False
            for e, shares in sorted(self.crs_shares.items()):
                if e + 1 in self.crs_values or e not in self.crs_values:
                    continue
                r = self.crs_values[e]
                group, _ = self.world.registry.crs_group(e, r)
                message = crs_message(self.world.crs_value(e, r))
                valid = [
                    s for i, s in shares.items()
                    if i in group.verification_keys and verify_share(group.verification_keys[i], message, s)
                ]
                if len(valid) >= group.threshold:
                    nxt = self.world.next_crs(e, r, group, valid)
                    self.crs_values[e + 1] = nxt
                    progressed = True
        for j in self.chains:
            self.try_finalize(j, now)
            self.try_start(j, now)

    # -- compaction chain --------------------------------------------------------

    def _on_entry(self, entry: Entry, now: int) -> None:
        self.entries.append(entry)
        if not self.sc.compaction_notarization:
            return
        e = self.epoch_of(entry.block.height)
        group, secrets = self.notary_group(0, entry.block.height)
        if secrets is None or self.id not in secrets or self.corrupt(now):
            return
        share = compaction_share(secrets[self.id], entry.position, entry.consensus_time, entry.block.hash)
        body = CompactionShare(e, entry.position, entry.consensus_time, entry.block.hash, share)
        self.send(body, now)
        self._on_compaction_share(body, now)

    def _on_compaction_share(self, body: CompactionShare, now: int) -> None:
        if body.position in self.comp_notes:
            return
        key = (body.epoch, body.position, body.consensus_time, body.block_hash)
        bucket = self.comp_shares.setdefault(key, {})
        bucket.setdefault(body.share.share_index, body.share)
        r = self.crs_values.get(body.epoch)
        if r is None:
            return
        group, _ = self.world.registry.notary_group(body.epoch, r, 0)
        message = compaction_message(body.position, body.consensus_time, body.block_hash)
        valid = [
            s for i, s in bucket.items()
            if i in group.verification_keys and verify_share(group.verification_keys[i], message, s)
        ]
        if len(valid) < group.threshold:
            return
        try:
            sig = notarize_compaction(group, body.position, body.consensus_time, body.block_hash, valid)
        except InvalidShare:
            return
        self.comp_notes[body.position] = CompactionNote(body.position, body.consensus_time, body.block_hash, sig)
        self.comp_shares.pop(key, None)
