import math
from collections import Counter
from dataclasses import replace
from fractions import Fraction

import pytest

from latticebft.agreement import BOTTOM, SKIP
from latticebft.chain import (
    CompactionChain,
    ConfigChange,
    HeightContext,
    Mempool,
    MissingParentNotarization,
    RoundParams,
    UnknownDecidedBlock,
    build_block,
    compaction_share,
    decide_height,
    load_balancer_admit,
    notarization_share,
    notarize,
    notarize_compaction,
    notary_threshold,
    propose_or_abstain,
    verify_compaction,
    verify_notarization,
)
from latticebft.crypto import DIGEST_MAX, Digest, InsufficientShares, deal_group, derive_keypair, hash_parts
from latticebft.lattice import Block, CompactionNote
from latticebft.ordering import Mode


def test_notary_threshold():
    assert notary_threshold(4) == 2
    assert notary_threshold(7) == 3
    assert notary_threshold(1) == 1


def test_load_balancer():
    assert load_balancer_admit(hash_parts("x"), 0, 1)
    assert [load_balancer_admit(Digest(7), j, 3) for j in range(3)] == [False, True, False]
    with pytest.raises(ValueError):
        load_balancer_admit(Digest(7), 3, 3)


def test_load_balancer_split():
    counts = Counter()
    for i in range(10_000):
        tx = hash_parts("tx", i)
        owners = [j for j in range(4) if load_balancer_admit(tx, j, 4)]
        assert len(owners) == 1
        counts[owners[0]] += 1
    assert all(abs(counts[j] - 2500) <= 150 for j in range(4))


def test_mempool_admission():
    pool = Mempool()
    txs = [hash_parts("tx", i) for i in range(40)]
    for t, tx in enumerate(txs):
        pool.add(tx, t)
    got = pool.admitted(1, 4, limit=3)
    assert len(got) == 3 and all(tx.value % 4 == 1 for tx in got)
    assert got == [tx for tx in txs if tx.value % 4 == 1][:3]


def test_propose_or_abstain():
    ctx = HeightContext(0, 1, 0)
    kp = derive_keypair(0, 0)
    empty = Block(0, 0, 0, None, (), (), 0)
    assert propose_or_abstain(ctx, kp.secret_key, hash_parts("crs"), 1, lambda: empty) is empty
    assert empty.payload == ()


def test_propose_frequency_matches_closed_form():
    n, heights = 20, 10_000
    delta = Fraction(1, 20)
    kps = [derive_keypair(5, i) for i in range(n)]
    crs = hash_parts("crs")
    hits = 0
    for h in range(heights):
        ctx = HeightContext(0, h, 0)
        hits += any(propose_or_abstain(ctx, k.secret_key, crs, delta, lambda: True) for k in kps)
    # the window |R - H| <= delta * 2^256 extends on both sides of R
    width = min(crs.value + delta * DIGEST_MAX, DIGEST_MAX) - max(crs.value - delta * DIGEST_MAX, 0)
    per_node = float(Fraction(width) / DIGEST_MAX)
    p = 1 - (1 - per_node) ** n
    sigma = math.sqrt(p * (1 - p) / heights)
    assert abs(hits / heights - p) <= 4 * sigma
    # the one-sided closed form is a lower bound
    assert hits / heights > 1 - (1 - float(delta)) ** n


def test_build_block_needs_parent_notarization():
    parent = Block(0, 0, 0, None, (), (), 0)
    with pytest.raises(MissingParentNotarization):
        build_block(0, 1, 0, parent, None, (), (), 5)


def test_decide_height():
    ctx = HeightContext(0, 1, 0)
    parent = Block(0, 0, 0, None, (), (), 3)
    prop = Block(0, 1, 2, parent.hash, (), (), 4)
    assert decide_height(ctx, prop.hash, {prop.hash: prop}, parent, None) is prop
    empty = decide_height(ctx, BOTTOM, {}, parent, None)
    assert empty.is_empty and empty.height == 1 and empty.parent_hash == parent.hash
    assert empty == decide_height(ctx, BOTTOM, {}, parent, None)
    with pytest.raises(UnknownDecidedBlock):
        decide_height(ctx, hash_parts("nope"), {}, parent, None)
    with pytest.raises(ValueError):
        decide_height(ctx, SKIP, {}, parent, None)


@pytest.fixture
def group():
    return deal_group(2, "notary", range(4), notary_threshold(4))


def test_notarize_and_tamper(group):
    pub, secrets = group
    block = Block(0, 3, 1, hash_parts("p"), (), (hash_parts("tx"),), 9)
    sig = notarize(pub, 0, 3, block.hash, [notarization_share(secrets[i], 0, 3, block.hash) for i in (0, 3)])
    assert verify_notarization(pub, block, sig)
    with pytest.raises(InsufficientShares):
        notarize(pub, 0, 3, block.hash, [notarization_share(secrets[0], 0, 3, block.hash)])
    raw = bytearray(block.encode())
    for pos in range(0, len(raw), 7):
        # any changed field changes the digest the next block's signature covers
        tampered = replace(block, block_timestamp=block.block_timestamp + 1 + pos)
        assert not verify_notarization(pub, tampered, sig)
    assert not verify_notarization(pub, replace(block, payload=()), sig)


def test_compaction_notarization(group):
    pub, secrets = group
    h = hash_parts("b")
    sig = notarize_compaction(pub, 5, 1000, h, [compaction_share(secrets[i], 5, 1000, h) for i in (1, 2)])
    assert verify_compaction(pub, CompactionNote(5, 1000, h, sig))
    assert not verify_compaction(pub, CompactionNote(5, 1001, h, sig))


# -- configuration change ------------------------------------------------------------


def blk(chain, height, ts, rnd, parent=None):
    return Block(chain, height, chain, parent.hash if parent else None, (), (), ts, config_round=rnd)


def test_flush_of_undelivered_blocks():
    change = ConfigChange(100, RoundParams(4), RoundParams(4))
    cc = CompactionChain(4, change=change)
    r1 = [blk(c, 0, 10 + c, 0) for c in range(3)]
    for b in r1:
        assert cc.receive(b) == []
    r2 = [blk(c, 1, 200, 1, r1[c]) for c in range(3)] + [blk(3, 0, 200, 1)]
    out = []
    for b in r2:
        out.extend(cc.receive(b))
    assert cc.boundary_reached
    flushed = [e for e in out if e.mode is Mode.FLUSH]
    assert [e.block.hash for e in flushed] == sorted((b.hash for b in r1), key=lambda d: d.to_bytes())
    assert all(e.batch_index == 0 for e in flushed)
    assert out[: len(flushed)] == flushed
    assert cc.batch_lines()[0].startswith("0,flush,")
    times = [e.consensus_time for e in cc.entries]
    assert times == sorted(times)


def test_clean_restart():
    change = ConfigChange(100, RoundParams(2), RoundParams(3))
    cc = CompactionChain(2, change=change)
    a0 = blk(0, 0, 1, 0)
    b0 = Block(1, 0, 1, None, (), (), 2, config_round=0)
    for b in (a0, b0):
        cc.receive(b)
    before = [e.block.hash for e in cc.entries]
    assert set(before) == {a0.hash, b0.hash}
    cc.receive(blk(0, 1, 200, 1, a0))
    cc.receive(blk(1, 1, 200, 1, b0))
    assert cc.boundary_reached
    assert not any(e.mode is Mode.FLUSH for e in cc.entries)
    assert [e.block.hash for e in cc.entries[: len(before)]] == before


def test_round_of():
    change = ConfigChange(100, RoundParams(2), RoundParams(3))
    assert change.round_of(100) == 0
    assert change.round_of(101) == 1
