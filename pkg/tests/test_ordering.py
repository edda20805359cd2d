import random

import pytest
from hypothesis import given, settings, strategies as st

from latticebft.lattice import parse_fixture
from latticebft.ordering import INF, Criteria, Mode, NaiveView, OrderingState, default_phi, naive_order
from latticebft.ordering.core import count_less, grade_from_count, precede_from_counts
from latticebft.replay import order_arrival
from latticebft.workload import LatticeBuilder, random_arrival, random_lattice

from conftest import A, B, C, D, E, F, load_six_chain


def six_chain_state(phi):
    delivered, pending, ix = load_six_chain()
    state = OrderingState(6, phi, delivered=[b.hash for b in delivered])
    for b in pending:
        assert state.receive_block(b, deliver=False) == []
    return state, ix


def h(ix, chain, height):
    return ix[chain, height].hash


# -- six-chain worked example ---------------------------------------------------


def test_six_chain_candidates():
    state, ix = six_chain_state(5)
    assert state.candidates == {h(ix, A, 1), h(ix, B, 3), h(ix, E, 0)}


def test_six_chain_ans():
    state, ix = six_chain_state(5)
    assert state.ans_of(h(ix, B, 3)) == {A, B, D}
    assert state.ans_of(h(ix, E, 0)) == {A, B, C, D, E}


def test_six_chain_ahv():
    state, ix = six_chain_state(5)
    assert state.ahv_of(h(ix, E, 0)) == (INF, INF, 2, 1, 0, None)
    assert state.ahv_of(h(ix, A, 1)) == (1, INF, INF, INF, INF, None)
    assert state.ahv_count(h(ix, E, 0)) == 3
    assert state.ahv_count(h(ix, A, 1)) == 1


def test_six_chain_preceding_set_at_phi5():
    state, ix = six_chain_state(5)
    assert state.preceding_set() == {h(ix, A, 1), h(ix, B, 3), h(ix, E, 0)}


def test_six_chain_at_phi3():
    state, ix = six_chain_state(3)
    a1, e0 = h(ix, A, 1), h(ix, E, 0)
    assert state.count(e0, a1) == 3
    assert state.count(a1, e0) == 1
    assert state.grade(a1, e0) == 0
    assert state.grade(e0, a1) is None
    assert state.precede(e0, a1) == 0
    assert state.preceding_set() == {e0}


@pytest.mark.parametrize("phi", [3, 4, 5, 6])
def test_six_chain_naive_agrees(phi):
    state, ix = six_chain_state(phi)
    delivered, pending, _ = load_six_chain()
    view = NaiveView(pending, 6, phi, [b.hash for b in delivered])
    for c in state.candidates:
        assert view.ans_of(c) == state.ans_of(c)
        assert view.ahv_of(c) == state.ahv_of(c)
    assert view.preceding_set() == state.preceding_set()
    assert view.check_criteria() == state.check_criteria()


def test_six_chain_two_arrival_orders():
    delivered, pending, _ = load_six_chain()
    done = [b.hash for b in delivered]
    outs = []
    for seed in (1, 2):
        arrival = random_arrival(pending, random.Random(seed))
        outs.append([b.log_line() for b in naive_order(arrival, 6, 5, done)])
        st_ = OrderingState(6, 5, delivered=done)
        lines = [x.log_line() for b in arrival for x in st_.receive_block(b)]
        assert lines == outs[-1]
    assert outs[0] == outs[1]


# -- core arithmetic -------------------------------------------------------------


def test_count_and_precede_basics():
    v = (0, INF, None, 2)
    assert count_less(v, v) == 0
    assert precede_from_counts(count_less(v, v), count_less(v, v), 3) == 0
    assert count_less((INF,) * 4, (0,) * 4) == 0
    c12 = count_less((0, 0, 0, 0), (INF,) * 4)
    assert c12 == 4
    assert precede_from_counts(c12, 0, 3) == 1
    assert precede_from_counts(0, c12, 3) == -1


def test_grade_rules():
    assert grade_from_count(6, 6, 5, 6) == 1
    assert grade_from_count(1, 6, 3, 5) == 0
    assert grade_from_count(3, 6, 3, 5) is None


def test_default_phi():
    assert default_phi(4) == 3
    assert default_phi(6) == 4  # 2f+1 = 3 would not exceed n/2
    assert default_phi(7) == 5
    assert default_phi(1) == 1
    for n in range(1, 40):
        assert n / 2 < default_phi(n) <= n


# -- small fixtures ---------------------------------------------------------------


def test_fresh_candidate():
    b = parse_fixture("2,0,2,5,acks=\n")[0]
    state = OrderingState(4)
    assert state.receive_block(b, deliver=False) == []
    assert state.ans_of(b.hash) == {2}
    assert state.ahv_of(b.hash) == (None, None, 0, None)


def test_empty_state():
    state = OrderingState(4)
    assert state.candidates == set()
    assert state.preceding_set() == set()
    assert state.matrix() == {}
    assert state.check_criteria()[0] is Criteria.NO_OUTPUT
    assert naive_order([], 4) == []


def test_single_chain_height_order():
    blocks = parse_fixture("".join(f"0,{i},0,{i},acks=\n" for i in range(5)))
    batches = naive_order(blocks, 1)
    assert [b.blocks for b in batches] == [(x.hash,) for x in blocks]
    state = OrderingState(1)
    assert [x.blocks for b in blocks for x in state.receive_block(b)] == [(x.hash,) for x in blocks]


def test_all_chains_ack_candidate_normal():
    blocks = parse_fixture("0,0,0,0,acks=\n1,0,1,1,acks=0:0\n2,0,2,1,acks=0:0\n3,0,3,1,acks=0:0\n")
    state = OrderingState(4)
    out = [x for b in blocks for x in state.receive_block(b)]
    assert out[0].blocks == (blocks[0].hash,)
    assert out[0].mode is Mode.NORMAL
    assert out[0].batch_index == 0


def test_candidate_moved_into_preceding_set():
    # X is acked by three chains; Y only by itself, so Y's row stays below the bound
    blocks = parse_fixture("0,0,0,0,acks=\n1,0,1,0,acks=\n2,0,2,1,acks=0:0\n3,0,3,1,acks=0:0\n")
    state = OrderingState(4, 3)
    for b in blocks:
        state.receive_block(b, deliver=False)
    x, y = blocks[0].hash, blocks[1].hash
    assert state.preceding_set() == {x}
    assert state.precede(x, y) == 0
    assert state.matrix()[x, y] == 3


EARLY = """\
0,0,0,0,acks=
1,0,1,0,acks=
2,0,2,1,acks=0:0
3,0,3,1,acks=0:0
4,0,4,1,acks=0:0
5,0,5,1,acks=0:0
"""


def test_early_delivery():
    blocks = parse_fixture(EARLY)
    state = OrderingState(7, 4)
    for b in blocks:
        state.receive_block(b, deliver=False)
    x, y = blocks[0].hash, blocks[1].hash
    assert len(state.global_ans) == 6
    assert state.count(x, y) == 5
    verdict, pre = state.check_criteria()
    assert verdict is Criteria.EARLY and pre == {x}
    assert NaiveView(blocks, 7, 4).check_criteria() == (Criteria.EARLY, {x})
    batches = naive_order(blocks, 7, 4)
    assert batches[0].mode is Mode.EARLY and batches[0].blocks == (x,)


def test_candidate_set_equal_to_preceding_set_waits():
    blocks = parse_fixture("0,0,0,0,acks=\n1,0,1,0,acks=\n")
    state = OrderingState(4)
    for b in blocks:
        assert state.receive_block(b) == []
    assert state.check_criteria()[0] is Criteria.NO_OUTPUT


def test_batch_log_line_roundtrip():
    from latticebft.ordering import parse_batch_line

    blocks = parse_fixture("0,0,0,0,acks=\n1,0,1,1,acks=0:0\n2,0,2,1,acks=0:0\n3,0,3,1,acks=0:0\n")
    batch = naive_order(blocks, 4)[0]
    assert parse_batch_line(batch.log_line()) == batch


# -- oracle equivalence --------------------------------------------------------------


def incremental_lines(arrival, n, phi=None):
    state = OrderingState(n, phi)
    return [x.log_line() for b in arrival for x in state.receive_block(b)]


def test_random_lattice_permutations_match_oracle():
    rng = random.Random(6)
    blocks = random_lattice(6, 120, rng)
    expected = [b.log_line() for b in naive_order(blocks, 6)]
    assert expected
    for _ in range(50):
        assert incremental_lines(random_arrival(blocks, rng), 6) == expected


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(2, 7),
    size=st.integers(0, 40),
    ack_prob=st.floats(0.0, 1.0),
    seed=st.integers(0, 2**32 - 1),
)
def test_incremental_equals_naive(n, size, ack_prob, seed):
    rng = random.Random(seed)
    blocks = random_lattice(n, size, rng, ack_prob)
    arrival = random_arrival(blocks, rng)
    assert incremental_lines(arrival, n) == [b.log_line() for b in naive_order(arrival, n)]


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 6), size=st.integers(1, 40), seed=st.integers(0, 2**32 - 1))
def test_output_independent_of_arrival_order(n, size, seed):
    rng = random.Random(seed)
    blocks = random_lattice(n, size, rng)
    first = order_arrival(random_arrival(blocks, rng), n)
    second = order_arrival(random_arrival(blocks, rng), n)
    assert first.batch_lines == second.batch_lines
    assert first.stamps == second.stamps


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 6), size=st.integers(1, 40), seed=st.integers(0, 2**32 - 1))
def test_delivered_at_most_once_and_causal(n, size, seed):
    rng = random.Random(seed)
    builder = LatticeBuilder(n)
    for _ in range(size):
        builder.append(rng.randrange(n), rng, 0.5)
    builder.pad(2)
    blocks = builder.blocks
    by_hash = {b.hash: b for b in blocks}
    state = OrderingState(n)
    seen = []
    for b in random_arrival(blocks, rng):
        for batch in state.receive_block(b):
            for x in batch.blocks:
                assert all(r in set(seen) for r in by_hash[x].acked_hashes)
            seen.extend(batch.blocks)
    assert len(seen) == len(set(seen))
    # every block below the padding layers comes out
    assert set(b.hash for b in blocks[:size]) <= set(seen)


def test_ops_counter_grows():
    counts = {}
    for n in (4, 8):
        rng = random.Random(n)
        blocks = random_lattice(n, 40 * n, rng)
        state = OrderingState(n)
        for b in blocks:
            state.receive_block(b)
        counts[n] = state.ops.total / len(blocks)
    assert counts[8] > counts[4]
