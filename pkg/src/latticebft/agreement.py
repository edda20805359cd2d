"""Round-based leader-election Byzantine agreement for one (chain, height).

Each round has a 2-lambda pre-commit step and a 4-lambda commit step on the
node's local clock.  Rounds after the first are entered through a forward
condition with the clock set to 2 lambda, so they last 2 lambda.

``ByzantineAgreement`` is driven by its owner: ``start`` once, then
``on_clock`` at every deadline reported by ``next_deadline`` and
``on_message`` for every delivered message.  Each call returns the messages
the node gossips as a result; they are already counted in the node's own
ledger.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Iterable, Mapping, Optional, Union

from .crypto import (
    DIGEST_BYTES,
    DIGEST_MAX,
    Digest,
    PublicKey,
    SecretKey,
    Signature,
    hash_bytes,
    sign,
    verify,
    vrf_distance,
)


class Sentinel(enum.Enum):
    BOTTOM = "bottom"
    SKIP = "skip"

    def __repr__(self) -> str:
        return self.name


BOTTOM = Sentinel.BOTTOM
SKIP = Sentinel.SKIP
BaValue = Union[Digest, Sentinel]

_BOTTOM_BYTES = bytes(DIGEST_BYTES)
_SKIP_BYTES = b"\xff" * DIGEST_BYTES


class Kind(enum.IntEnum):
    INIT = 1
    PRECOM = 2
    COM = 3


class Step(enum.Enum):
    INIT = "init"
    PRECOMMIT = "pre-commit"
    COMMIT = "commit"
    WAIT = "wait"


class AgreementError(Exception):
    pass


class InvalidSignature(AgreementError):
    pass


class EmptySet(AgreementError):
    pass


def max_faulty(n: int) -> int:
    return (n - 1) // 3


def quorum_size(n: int) -> int:
    return 2 * max_faulty(n) + 1


def value_bytes(value: BaValue) -> bytes:
    if value is BOTTOM:
        return _BOTTOM_BYTES
    if value is SKIP:
        return _SKIP_BYTES
    return value.to_bytes()


def value_from_bytes(raw: bytes) -> BaValue:
    if raw == _BOTTOM_BYTES:
        return BOTTOM
    if raw == _SKIP_BYTES:
        return SKIP
    return Digest.from_bytes(raw)


# -- status and messages ------------------------------------------------------

_STATUS_PREFIX = b"status"


def compute_status(shard_id: int, chain_id: int, height: int) -> bytes:
    return (
        _STATUS_PREFIX
        + shard_id.to_bytes(4, "big")
        + chain_id.to_bytes(4, "big")
        + height.to_bytes(8, "big")
    )


def parse_status(raw: bytes) -> tuple[int, int, int]:
    if len(raw) != len(_STATUS_PREFIX) + 16 or not raw.startswith(_STATUS_PREFIX):
        raise ValueError("not a status encoding")
    body = raw[len(_STATUS_PREFIX):]
    return (
        int.from_bytes(body[0:4], "big"),
        int.from_bytes(body[4:8], "big"),
        int.from_bytes(body[8:16], "big"),
    )


@dataclass(frozen=True)
class BaMessage:
    kind: Kind
    chain_id: int
    height: int
    sender: int
    value: BaValue
    round: int = 0
    sigma: Optional[Signature] = None
    # Block body riding along with an init message; its hash must equal value.
    block: Any = field(default=None, compare=False, repr=False)

    def encode(self) -> bytes:
        tag = self.sigma.tag.to_bytes() if self.sigma is not None else bytes(DIGEST_BYTES)
        return (
            bytes([int(self.kind)])
            + self.chain_id.to_bytes(4, "big")
            + self.height.to_bytes(8, "big")
            + self.round.to_bytes(8, "big")
            + value_bytes(self.value)
            + self.sender.to_bytes(8, "big")
            + tag
        )

    @property
    def digest(self) -> Digest:
        return hash_bytes(self.encode())


MESSAGE_BYTES = 1 + 4 + 8 + 8 + DIGEST_BYTES + 8 + DIGEST_BYTES


def parse_message(raw: bytes, shard_id: int = 0) -> BaMessage:
    """Inverse of ``BaMessage.encode`` (the block body is not on the wire)."""
    if len(raw) != MESSAGE_BYTES:
        raise ValueError(f"expected {MESSAGE_BYTES} bytes, got {len(raw)}")
    kind = Kind(raw[0])
    chain_id = int.from_bytes(raw[1:5], "big")
    height = int.from_bytes(raw[5:13], "big")
    rnd = int.from_bytes(raw[13:21], "big")
    value = value_from_bytes(raw[21:53])
    sender = int.from_bytes(raw[53:61], "big")
    sigma = None
    if kind is Kind.INIT:
        status = compute_status(shard_id, chain_id, height)
        sigma = Signature(sender, hash_bytes(status), Digest.from_bytes(raw[61:93]))
    return BaMessage(kind, chain_id, height, sender, value, rnd, sigma)


# -- leader election and proposal threshold -------------------------------------


def elect_leader(valid_inits: Mapping[int, Signature], crs: Digest) -> int:
    """argmin over senders of the VRF distance; ties go to the smallest id."""
    if not valid_inits:
        raise EmptySet("no valid init messages")
    return min(valid_inits, key=lambda j: (vrf_distance(crs, valid_inits[j]), j))


def should_propose(secret_key: SecretKey, status: bytes, crs: Digest, delta) -> bool:
    delta = Fraction(delta)
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    d = vrf_distance(crs, sign(secret_key, status))
    return d * delta.denominator <= delta.numerator * DIGEST_MAX


# -- ledger --------------------------------------------------------------------


class AddResult(enum.Enum):
    NEW = "new"
    DUPLICATE = "duplicate"
    EQUIVOCATION = "equivocation"


class MessageLedger:
    """Distinct-sender tallies of one node's view of one agreement instance."""

    def __init__(self):
        self.inits: dict[int, BaMessage] = {}
        self.votes: dict[tuple[Kind, int], dict[int, BaValue]] = {}
        self.tallies: dict[tuple[Kind, int, BaValue], int] = {}
        self.round_counts: dict[tuple[Kind, int], int] = {}
        self.equivocators: set[int] = set()
        self.twins: dict[tuple[Kind, int, int], set] = {}  # extra values an equivocator voted for

    def add(self, msg: BaMessage) -> AddResult:
        if msg.kind is Kind.INIT:
            first = self.inits.get(msg.sender)
            if first is None:
                self.inits[msg.sender] = msg
                return AddResult.NEW
            if first.value == msg.value:
                return AddResult.DUPLICATE
            self.equivocators.add(msg.sender)
            return AddResult.EQUIVOCATION
        senders = self.votes.setdefault((msg.kind, msg.round), {})
        key = (msg.kind, msg.round, msg.value)
        if msg.sender in senders:
            if senders[msg.sender] == msg.value:
                return AddResult.DUPLICATE
            self.equivocators.add(msg.sender)
            # a signed vote counts toward every value its sender signed; two
            # quorums still share a correct member, so agreement is unaffected
            twins = self.twins.setdefault((msg.kind, msg.round, msg.sender), set())
            if msg.value not in twins:
                twins.add(msg.value)
                self.tallies[key] = self.tallies.get(key, 0) + 1
            return AddResult.EQUIVOCATION
        senders[msg.sender] = msg.value
        self.tallies[key] = self.tallies.get(key, 0) + 1
        rkey = (msg.kind, msg.round)
        self.round_counts[rkey] = self.round_counts.get(rkey, 0) + 1
        return AddResult.NEW

    def tally(self, kind: Kind, rnd: int, value: BaValue) -> int:
        return self.tallies.get((kind, rnd, value), 0)

    def quorum_values(self, kind: Kind, quorum: int) -> list[tuple[int, BaValue]]:
        """(round, value) pairs with at least ``quorum`` distinct senders."""
        return sorted(
            ((r, v) for (k, r, v), c in self.tallies.items() if k is kind and c >= quorum),
            key=lambda rv: rv[0],
        )

    def commit_rounds(self, quorum: int) -> list[int]:
        return sorted(r for (k, r), c in self.round_counts.items() if k is Kind.COM and c >= quorum)

    def decision(self, quorum: int) -> Optional[tuple[int, BaValue]]:
        """Earliest round holding ``quorum`` commits of one value; SKIP never counts."""
        for rnd, value in self.quorum_values(Kind.COM, quorum):
            if value is not SKIP:
                return rnd, value
        return None

    def valid_senders(self) -> dict[int, Signature]:
        return {
            j: m.sigma for j, m in self.inits.items() if j not in self.equivocators
        }


def skip_never_decided(ledger: MessageLedger, quorum: int) -> bool:
    decided = ledger.decision(quorum)
    return decided is None or decided[1] is not SKIP


# -- the state machine ---------------------------------------------------------


@dataclass
class BaState:
    round: int = 1
    lock_value: BaValue = BOTTOM
    lock_round: int = 0
    clock_origin: int = 0
    step: Step = Step.INIT
    decided: Optional[BaValue] = None
    decided_round: Optional[int] = None
    decided_at: Optional[int] = None

    @property
    def locked(self) -> bool:
        # lock_round 0 means "never locked"; a lock on BOTTOM is a real lock.
        return self.lock_round > 0


InitValidator = Callable[[BaMessage], bool]


class ByzantineAgreement:
    def __init__(
        self,
        node_id: int,
        chain_id: int,
        height: int,
        members: Iterable[int],
        public_keys: Mapping[int, PublicKey],
        crs: Digest,
        lam: int,
        shard_id: int = 0,
        validate_init: Optional[InitValidator] = None,
    ):
        self.node_id = node_id
        self.chain_id = chain_id
        self.height = height
        self.members = frozenset(members)
        self.n = len(self.members)
        self.quorum = quorum_size(self.n)
        self.public_keys = public_keys
        self.crs = crs
        self.lam = lam
        self.status = compute_status(shard_id, chain_id, height)
        self.validate_init = validate_init
        self.state = BaState()
        self.ledger = MessageLedger()
        self.started = False
        self.invalid_messages = 0
        self.jumps: list[tuple[int, int]] = []  # (time, round entered)

    # -- helpers

    @property
    def clock_step2(self) -> int:
        return self.state.clock_origin + 2 * self.lam

    @property
    def clock_step3(self) -> int:
        return self.state.clock_origin + 4 * self.lam

    def next_deadline(self) -> Optional[int]:
        if not self.started or self.state.decided is not None:
            return None
        if self.state.step is Step.INIT:
            return self.clock_step2
        if self.state.step is Step.PRECOMMIT:
            return self.clock_step3
        return None

    def leader(self) -> Optional[int]:
        valid = self.ledger.valid_senders()
        return elect_leader(valid, self.crs) if valid else None

    def make_init(self, value: Digest, secret_key: SecretKey, block: Any = None) -> BaMessage:
        return BaMessage(
            Kind.INIT, self.chain_id, self.height, self.node_id, value, 0,
            sign(secret_key, self.status), block,
        )

    def check_message(self, msg: BaMessage) -> None:
        if msg.chain_id != self.chain_id or msg.height != self.height:
            raise InvalidSignature("message for another instance")
        if msg.sender not in self.members:
            raise InvalidSignature(f"sender {msg.sender} not in the notary set")
        if msg.kind is Kind.INIT:
            pk = self.public_keys.get(msg.sender)
            if msg.sigma is None or pk is None or not verify(pk, self.status, msg.sigma):
                raise InvalidSignature(f"bad init signature from {msg.sender}")
            if not isinstance(msg.value, Digest):
                raise InvalidSignature("init value must be a candidate hash")
            if self.validate_init is not None and not self.validate_init(msg):
                raise InvalidSignature(f"init from {msg.sender} carries an invalid block")
        else:
            if msg.round < 1:
                raise InvalidSignature("vote without a round")
            if msg.kind is Kind.PRECOM and msg.value is SKIP:
                raise InvalidSignature("SKIP is only valid in commit messages")

    # -- events

    def start(self, now: int, init: Optional[BaMessage] = None) -> list[BaMessage]:
        """Step 1.  ``init`` is None when the node abstains from proposing."""
        self.started = True
        self.state.clock_origin = now
        out: list[BaMessage] = []
        if init is not None:
            self._emit(init, out)
        self._evaluate(now, out)
        return out

    def on_clock(self, now: int) -> list[BaMessage]:
        out: list[BaMessage] = []
        if not self.started or self.state.decided is not None:
            return out
        if self.state.step is Step.INIT and now >= self.clock_step2:
            self._step2(out)
        elif self.state.step is Step.PRECOMMIT and now >= self.clock_step3:
            self._step3(out)
        self._evaluate(now, out)
        return out

    def on_message(self, msg: BaMessage, now: int) -> list[BaMessage]:
        """Record a delivered message; raises InvalidSignature for malformed input."""
        self.check_message(msg)
        out: list[BaMessage] = []
        result = self.ledger.add(msg)
        if result is not AddResult.DUPLICATE and self.started:
            self._evaluate(now, out)
        return out

    # -- steps

    def _emit(self, msg: BaMessage, out: list[BaMessage]) -> None:
        self.ledger.add(msg)
        out.append(msg)

    def _vote(self, kind: Kind, value: BaValue, out: list[BaMessage]) -> None:
        msg = BaMessage(kind, self.chain_id, self.height, self.node_id, value, self.state.round)
        self._emit(msg, out)

    def _step2(self, out: list[BaMessage]) -> None:
        st = self.state
        if st.locked:
            value = st.lock_value
        else:
            leader = self.leader()
            value = BOTTOM if leader is None else self.ledger.inits[leader].value
        self._vote(Kind.PRECOM, value, out)
        st.step = Step.PRECOMMIT

    def _step3(self, out: list[BaMessage]) -> None:
        st = self.state
        winners = [
            v for (r, v) in self.ledger.quorum_values(Kind.PRECOM, self.quorum) if r == st.round
        ]
        if winners:
            st.lock_value, st.lock_round = winners[0], st.round
            self._vote(Kind.COM, winners[0], out)
        else:
            self._vote(Kind.COM, SKIP, out)
        st.step = Step.WAIT

    def _enter_round(self, rnd: int, now: int, out: list[BaMessage]) -> None:
        st = self.state
        st.round = rnd
        st.clock_origin = now - 2 * self.lam
        st.step = Step.INIT
        self.jumps.append((now, rnd))
        self._step2(out)

    def _evaluate(self, now: int, out: list[BaMessage]) -> None:
        st = self.state
        while st.decided is None:
            decided = self.ledger.decision(self.quorum)
            if decided is not None:
                st.decided_round, st.decided = decided
                st.decided_at = now
                return
            precom = self.ledger.quorum_values(Kind.PRECOM, self.quorum)
            # condition 1
            for r, v in precom:
                if st.round >= r > st.lock_round:
                    st.lock_value, st.lock_round = v, r
            # condition 2
            ahead = [(r, v) for r, v in precom if r > st.round]
            if ahead:
                r, v = ahead[-1]
                st.lock_value, st.lock_round = v, r
                self._enter_round(r, now, out)
                continue
            # condition 3
            commit_rounds = [r for r in self.ledger.commit_rounds(self.quorum) if r >= st.round]
            if commit_rounds:
                self._enter_round(commit_rounds[-1] + 1, now, out)
                continue
            return
