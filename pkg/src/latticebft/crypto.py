"""Deterministic stand-ins for hashing, signatures, threshold signatures and the VRF.

Nothing here is real cryptography.  Tags are keyed SHA-256 digests, which keeps
the properties the protocol leans on: signatures are deterministic, a threshold
signature does not depend on which shares were combined, and every value can be
replayed from the scenario seed.  Verification recomputes the tag from secret
material sealed inside the public objects; protocol code never reads that seal.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Union

DIGEST_BITS = 256
DIGEST_BYTES = DIGEST_BITS // 8
DIGEST_MAX = 1 << DIGEST_BITS

_SIG_TAG = b"latticebft/sig/v1"
_SHARE_TAG = b"latticebft/share/v1"
_TSIG_TAG = b"latticebft/tsig/v1"
_KEYGEN_TAG = b"latticebft/keygen/v1"
_DEAL_TAG = b"latticebft/deal/v1"
_SEAL_TAG = b"latticebft/pk/v1"

Seed = Union[int, bytes, str]


class CryptoError(Exception):
    pass


class InsufficientShares(CryptoError):
    pass


class InvalidShare(CryptoError):
    pass


@dataclass(frozen=True, order=True)
class Digest:
    """A 256-bit value; equality and ordering are on the integer."""

    value: int

    def __post_init__(self):
        if not 0 <= self.value < DIGEST_MAX:
            raise ValueError(f"digest out of range: {self.value}")

    def __hash__(self) -> int:
        return hash(self.value)

    def to_bytes(self) -> bytes:
        return self.value.to_bytes(DIGEST_BYTES, "big")

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Digest":
        if len(raw) != DIGEST_BYTES:
            raise ValueError(f"expected {DIGEST_BYTES} bytes, got {len(raw)}")
        return cls(int.from_bytes(raw, "big"))

    @classmethod
    def from_hex(cls, text: str) -> "Digest":
        return cls.from_bytes(bytes.fromhex(text))

    def hex(self) -> str:
        return self.to_bytes().hex()

    def short(self) -> str:
        return self.hex()[:10]

    def __repr__(self) -> str:
        return f"Digest({self.short()})"


ZERO_DIGEST = Digest(0)


def hash_bytes(data: bytes) -> Digest:
    return Digest(int.from_bytes(hashlib.sha256(data).digest(), "big"))


def encode_parts(*parts: Union[bytes, str, int, Digest]) -> bytes:
    """Length-prefixed concatenation so distinct part lists never collide."""
    out = bytearray()
    for part in parts:
        if isinstance(part, Digest):
            raw = part.to_bytes()
        elif isinstance(part, bool):
            raw = bytes([int(part)])
        elif isinstance(part, int):
            if part < 0:
                raise ValueError("negative integers are not encodable")
            raw = part.to_bytes(max(1, (part.bit_length() + 7) // 8), "big")
        elif isinstance(part, str):
            raw = part.encode()
        else:
            raw = bytes(part)
        out += len(raw).to_bytes(4, "big")
        out += raw
    return bytes(out)


def hash_parts(*parts: Union[bytes, str, int, Digest]) -> Digest:
    return hash_bytes(encode_parts(*parts))


def _seed_bytes(seed: Seed) -> bytes:
    if isinstance(seed, bytes):
        return seed
    if isinstance(seed, int):
        return encode_parts(seed)
    return seed.encode()


# -- plain signatures -------------------------------------------------------


@dataclass(frozen=True)
class SecretKey:
    node_id: int
    material: bytes = field(repr=False)


@dataclass(frozen=True)
class PublicKey:
    node_id: int
    token: Digest
    _seal: bytes = field(repr=False, compare=False, default=b"")


@dataclass(frozen=True)
class KeyPair:
    public_key: PublicKey
    secret_key: SecretKey


@dataclass(frozen=True)
class Signature:
    signer: int
    message_digest: Digest
    tag: Digest


def derive_keypair(seed: Seed, node_id: int) -> KeyPair:
    material = hashlib.sha256(encode_parts(_KEYGEN_TAG, _seed_bytes(seed), node_id)).digest()
    token = hash_parts(_SEAL_TAG, material)
    return KeyPair(PublicKey(node_id, token, material), SecretKey(node_id, material))


def sign(secret_key: SecretKey, message: bytes) -> Signature:
    tag = hash_parts(_SIG_TAG, secret_key.material, message)
    return Signature(secret_key.node_id, hash_bytes(message), tag)


def verify(public_key: PublicKey, message: bytes, sig: Signature) -> bool:
    if sig.signer != public_key.node_id or sig.message_digest != hash_bytes(message):
        return False
    return sig.tag == hash_parts(_SIG_TAG, public_key._seal, message)


# -- threshold signatures ---------------------------------------------------


@dataclass(frozen=True)
class ShareSecret:
    group_id: str
    share_index: int
    material: bytes = field(repr=False)


@dataclass(frozen=True)
class VerificationKey:
    group_id: str
    share_index: int
    _seal: bytes = field(repr=False, compare=False, default=b"")


@dataclass(frozen=True)
class GroupPublicKey:
    group_id: str
    threshold: int
    verification_keys: Mapping[int, VerificationKey] = field(repr=False, compare=False)
    _seal: bytes = field(repr=False, compare=False, default=b"")

    @property
    def members(self) -> tuple[int, ...]:
        return tuple(sorted(self.verification_keys))


@dataclass(frozen=True)
class ShareSignature:
    share_index: int
    message_digest: Digest
    tag: Digest


@dataclass(frozen=True)
class ThresholdSignature:
    group_id: str
    message_digest: Digest
    tag: Digest


def deal_group(
    seed: Seed, group_id: str, members: Iterable[int], threshold: int
) -> tuple[GroupPublicKey, dict[int, ShareSecret]]:
    """Trusted seeded setup standing in for distributed key generation.

    Share indices are the member node ids.
    """
    members = sorted(set(members))
    if not 1 <= threshold <= len(members):
        raise ValueError(f"threshold {threshold} invalid for {len(members)} members")
    base = encode_parts(_DEAL_TAG, _seed_bytes(seed), group_id)
    master = hashlib.sha256(base + b"master").digest()
    secrets = {}
    vks = {}
    for idx in members:
        material = hashlib.sha256(base + encode_parts("share", idx)).digest()
        secrets[idx] = ShareSecret(group_id, idx, material)
        vks[idx] = VerificationKey(group_id, idx, material)
    return GroupPublicKey(group_id, threshold, vks, master), secrets


def share_sign(secret: ShareSecret, message: bytes) -> ShareSignature:
    tag = hash_parts(_SHARE_TAG, secret.material, message)
    return ShareSignature(secret.share_index, hash_bytes(message), tag)


def verify_share(vk: VerificationKey, message: bytes, share: ShareSignature) -> bool:
    if share.share_index != vk.share_index or share.message_digest != hash_bytes(message):
        return False
    return share.tag == hash_parts(_SHARE_TAG, vk._seal, message)


def combine(
    group: GroupPublicKey,
    message: bytes,
    shares: Iterable[ShareSignature],
    t: int | None = None,
) -> ThresholdSignature:
    t = group.threshold if t is None else t
    distinct: dict[int, ShareSignature] = {}
    for share in shares:
        vk = group.verification_keys.get(share.share_index)
        if vk is None or not verify_share(vk, message, share):
            raise InvalidShare(f"share from {share.share_index} does not verify")
        distinct[share.share_index] = share
    if len(distinct) < t:
        raise InsufficientShares(f"need {t} shares, have {len(distinct)}")
    return ThresholdSignature(
        group.group_id, hash_bytes(message), hash_parts(_TSIG_TAG, group._seal, message)
    )


def verify_threshold(group: GroupPublicKey, message: bytes, tsig: ThresholdSignature) -> bool:
    if tsig.group_id != group.group_id or tsig.message_digest != hash_bytes(message):
        return False
    return tsig.tag == hash_parts(_TSIG_TAG, group._seal, message)


# -- VRF ---------------------------------------------------------------------


def vrf_output(sig: Signature) -> Digest:
    return hash_bytes(sig.tag.to_bytes())


def vrf_distance(crs: Digest, sig: Signature) -> int:
    """|crs - Hash(sig)| on plain 256-bit integers, no wraparound."""
    return abs(crs.value - vrf_output(sig).value)
