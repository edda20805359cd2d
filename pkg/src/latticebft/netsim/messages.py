"""Wire messages besides agreement votes, and envelope construction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional

from ..agreement import BaMessage, Kind
from ..crypto import Digest, ShareSignature, hash_parts
from .network import Envelope


@dataclass(frozen=True)
class NotaryShare:
    chain_id: int
    height: int
    block_hash: Digest
    share: ShareSignature


@dataclass(frozen=True)
class CrsShare:
    epoch: int
    share: ShareSignature


@dataclass(frozen=True)
class CompactionShare:
    epoch: int
    position: int
    consensus_time: int
    block_hash: Digest
    share: ShareSignature


def scope_of(body: Any) -> Optional[tuple[int, int]]:
    if isinstance(body, BaMessage):
        return body.chain_id, body.height
    if isinstance(body, NotaryShare):
        return body.chain_id, body.height
    return None


def envelope(origin: int, body: Any) -> Envelope:
    if isinstance(body, BaMessage):
        return Envelope(origin, body.digest, body, Kind(body.kind).name.lower(), scope_of(body))
    if isinstance(body, NotaryShare):
        s = body.share
        d = hash_parts("nshare", body.chain_id, body.height, body.block_hash, s.share_index, s.tag)
        return Envelope(origin, d, body, "share", scope_of(body))
    if isinstance(body, CrsShare):
        d = hash_parts("cshare", body.epoch, body.share.share_index, body.share.tag)
        return Envelope(origin, d, body, "crs")
    if isinstance(body, CompactionShare):
        s = body.share
        d = hash_parts("pshare", body.position, body.consensus_time, body.block_hash, s.share_index, s.tag)
        return Envelope(origin, d, body, "compaction")
    raise TypeError(f"cannot send {type(body).__name__}")
