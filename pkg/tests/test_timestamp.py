import random

from hypothesis import given, settings, strategies as st

from latticebft.lattice import Block
from latticebft.replay import order_arrival
from latticebft.timestamp import (
    TimestampVector,
    as_pairs,
    consensus_timestamps,
    lower_median,
    verify_timestamp_agreement,
)
from latticebft.workload import random_arrival, random_lattice


def blk(chain, ts, height=0):
    return Block(chain, height, chain, None, (), (), ts)


def test_lower_median():
    assert lower_median([1, 2, 3]) == 2
    assert lower_median([1, 2, 3, 10]) == 2
    assert lower_median([1, 2, 3, 100]) == 2
    assert lower_median([5]) == 5


def test_vector_updates():
    tv = TimestampVector(3, 0)
    assert tv.push(blk(0, 1)) == 0
    assert tv.push(blk(1, 2)) == 1
    assert tv.push(blk(2, 3)) == 2


def test_single_chain_identity():
    blocks = [blk(0, t, i) for i, t in enumerate([3, 7, 9])]
    assert [t for _, t in consensus_timestamps(blocks, 1)] == [3, 7, 9]


def test_outlier_resistance():
    base = [blk(0, 1), blk(1, 2), blk(2, 3)]
    a = consensus_timestamps(base + [blk(3, 10)], 4)
    b = consensus_timestamps(base + [blk(3, 100)], 4)
    assert a[-1][1] == b[-1][1] == 2


def test_monotone_clamp_and_resize():
    tv = TimestampVector(2, [10, 10], monotone=True)
    assert tv.push(blk(0, 20)) == 10
    assert tv.push(blk(1, 5)) == 10  # would be 5 without the clamp
    tv.resize(4, 10)
    assert tv.n == 4 and tv.v[2:] == [10, 10]


def test_agreement_check():
    pairs = as_pairs(consensus_timestamps([blk(0, 1), blk(1, 2), blk(2, 3)], 3))
    assert verify_timestamp_agreement([pairs, pairs])
    assert verify_timestamp_agreement([pairs, pairs[:1]])
    bad = [pairs[0], (pairs[1][0], pairs[1][1] + 1)]
    assert not verify_timestamp_agreement([pairs, bad])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(2, 6))
def test_timestamps_agree_across_nodes(seed, n):
    rng = random.Random(seed)
    blocks = random_lattice(n, 40, rng)
    outs = [order_arrival(random_arrival(blocks, rng), n) for _ in range(5)]
    assert verify_timestamp_agreement([[(r[1], r[4]) for r in o.stamps] for o in outs])
