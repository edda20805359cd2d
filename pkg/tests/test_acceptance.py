"""Acceptance suite: one test and one summary line per criterion."""

import math
import random
import statistics
from dataclasses import replace

import pytest

from latticebft.chain import verify_notarization
from latticebft.crypto import hash_bytes, verify_threshold
from latticebft.lattice import notarization_message, parse_fixture
from latticebft.netsim.runner import run
from latticebft.netsim.scenario import AdversarySpec, ConfigChangeSpec, PartitionSpec, Scenario, load, validate
from latticebft.ordering import INF, OrderingState, naive_order
from latticebft.replay import permutation_sweep
from latticebft.sizing import reproduce_table
from latticebft.workload import random_arrival, random_lattice

from conftest import SCENARIOS, A, B, C, D, E, load_six_chain, record

LAM = 1000
BEHAVIORS = ("none", "silent", "equivocate_init", "delay_release", "leader_hog", "double_vote")


def adversary(behavior, ids):
    if behavior == "none" or not ids:
        return AdversarySpec()
    if behavior == "double_vote":
        return AdversarySpec(tuple(ids), "custom", 0, "double_vote")
    return AdversarySpec(tuple(ids), behavior)


def random_partition(rng, n, start_max, length):
    ids = list(range(n))
    rng.shuffle(ids)
    k = rng.randint(1, n - 1)
    start = rng.randint(0, start_max)
    return PartitionSpec(start, start + rng.randint(*length), (tuple(sorted(ids[:k])), tuple(sorted(ids[k:]))))


# -- 1 --------------------------------------------------------------------------------


def agreement_scenario(i):
    rng = random.Random(f"agreement/{i}")
    n = (4, 7, 10, 31)[i % 4]
    behavior = BEHAVIORS[(i // 4) % len(BEHAVIORS)]
    t_max = (n - 1) // 3
    t = 0 if behavior == "none" else rng.randint(1, t_max)
    parts = (random_partition(rng, n, 3000, (1000, 8000)),) if rng.random() < 0.3 else ()
    sc = Scenario(
        nodes=n,
        name=f"agreement-{i}",
        seed=i,
        reorder=rng.random() < 0.5,
        skew=rng.choice((0, 500, 3000)),
        partitions=parts,
        adversary=adversary(behavior, sorted(rng.sample(range(n), t))),
        horizon_height=2 if n == 31 else 3,
    )
    validate(sc)
    return sc


RUNS_1 = 1000


def test_criterion_01_agreement():
    disagreements, finality, other = [], 0, []
    for i in range(RUNS_1):
        res = run(agreement_scenario(i))
        for v in res.violations:
            if v.kind == "agreement":
                disagreements.append((i, v.detail))
            elif v.kind == "finality":
                finality += 1
            else:
                other.append((i, v.line()))
    ok = not disagreements and not finality
    record(1, ok, f"{RUNS_1} runs, n in {{4,7,10,31}}, {len(BEHAVIORS)} behaviors: "
                  f"{len(disagreements)} disagreements, {finality} finality conflicts "
                  f"({len(other)} other violations)")
    assert ok, disagreements[:5]
    assert not other, other[:5]


# -- 2 --------------------------------------------------------------------------------


def termination_scenario(i):
    rng = random.Random(f"termination/{i}")
    n = (4, 7, 10)[i % 3]
    behavior = BEHAVIORS[(i // 3) % len(BEHAVIORS)]
    t = (n - 1) // 3 if behavior != "none" else 0
    parts = (random_partition(rng, n, 4000, (2000, 10000)),) if i % 2 else ()
    return Scenario(
        nodes=n,
        name=f"termination-{i}",
        seed=1000 + i,
        skew=rng.choice((0, LAM)),
        reorder=rng.random() < 0.5,
        partitions=parts,
        adversary=adversary(behavior, sorted(rng.sample(range(n), t))),
        horizon_height=4,
    )


def test_criterion_02_termination_bound():
    sync_bad, heal_bad, sync_n, heal_n, worst = [], [], 0, 0, {}
    by_notarization = 0
    for i in range(180):
        sc = termination_scenario(i)
        res = run(sc)
        assert res.ok, res.violations
        t = len(res.byzantine_ids)
        for node in res.correct:
            for (_, h), rec in node.records.items():
                if h >= sc.horizon_height:
                    continue
                if rec.round is None:
                    # the height was finalized from the notarization before this node's instance decided
                    assert node.chains[rec.chain_id].next_final > h, (i, node.id, rec)
                    by_notarization += 1
                    continue
                if rec.heal_round is None:
                    sync_n += 1
                    worst["sync"] = max(worst.get("sync", 0), rec.round - t)
                    if rec.round > t + 1:
                        sync_bad.append((i, rec))
                else:
                    heal_n += 1
                    post = rec.round - rec.heal_round + 1
                    worst["heal"] = max(worst.get("heal", 0), post - t)
                    if post > t + 2:
                        heal_bad.append((i, rec))
    ok = not sync_bad and not heal_bad and heal_n > 0
    record(2, ok, f"{sync_n} synchronous decisions <= t+1 rounds ({len(sync_bad)} over), "
                  f"{heal_n} post-heal decisions <= t+2 ({len(heal_bad)} over); "
                  f"max rounds-t: sync {worst.get('sync')}, heal {worst.get('heal')}; "
                  f"{by_notarization} finalized from a notarization before the local decision")
    assert ok, (sync_bad[:3], heal_bad[:3])


# -- 3 --------------------------------------------------------------------------------


def test_criterion_03_expected_rounds():
    base = load(SCENARIOS / "leader_hog_10.json")
    rounds = []
    for seed in range(10):
        sc = replace(base, seed=seed, horizon_height=1000, max_time=None)
        res = run(sc)
        assert res.ok, res.violations
        per_height = {}
        for node in res.correct:
            for (chain, h), rec in node.records.items():
                if h < 1000:
                    per_height[chain, h] = max(per_height.get((chain, h), 0), rec.round)
        rounds.extend(per_height.values())
    mean = statistics.fmean(rounds)
    sem = statistics.stdev(rounds) / math.sqrt(len(rounds))
    bound = 1.75 + 3 * sem
    ok = len(rounds) >= 10_000 and mean <= bound
    record(3, ok, f"LeaderHog n=10 t=3, {len(rounds)} heights: mean rounds {mean:.4f} "
                  f"<= 1.75 + 3*{sem:.4f} = {bound:.4f}; max {max(rounds)}")
    assert ok


# -- 4 --------------------------------------------------------------------------------


def test_criterion_04_latency():
    sc = load(SCENARIOS / "baseline_4x1.json")
    res = run(sc)
    assert res.ok, res.violations
    recs = [rec for n in res.correct for (_, h), rec in n.records.items() if h < sc.horizon_height]
    assert all(rec.decided_at is not None for rec in recs)
    lat = [rec.decided_at - rec.start for rec in recs]
    ok = bool(lat) and max(lat) <= 6 * LAM
    record(4, ok, f"baseline, {len(lat)} decisions: max latency {max(lat) / LAM:.2f} lambda <= 6 lambda")
    assert ok


# -- 5 and 6 ----------------------------------------------------------------------------

FIXTURE = SCENARIOS / "lattice_6x1000.txt"


@pytest.fixture(scope="module")
def sweep():
    blocks = parse_fixture(FIXTURE.read_text())
    return blocks, permutation_sweep(blocks, 50, seed=5)


def test_criterion_05_ordering_agreement(sweep):
    blocks, outputs = sweep
    lines = {"\n".join(o.batch_lines) for o in outputs}
    stamps = {repr(o.stamps) for o in outputs}
    oracle = [b.log_line() for b in naive_order(blocks, 6)]
    ok = len(lines) == 1 and len(stamps) == 1 and outputs[0].batch_lines == oracle
    record(5, ok, f"6 chains, {len(blocks)} blocks, {len(outputs)} permutations: "
                  f"{len(lines)} distinct batch sequence(s), {len(stamps)} distinct timestamp sequence(s), "
                  f"oracle {'equal' if outputs[0].batch_lines == oracle else 'DIFFERS'}")
    assert ok


def test_criterion_06_ordering_validity(sweep):
    blocks, outputs = sweep
    generated = {b.hash.hex() for b in blocks[:1000]}
    worst_missing, dup = 0, 0
    for o in outputs:
        seen = [r[1] for r in o.stamps]
        dup += len(seen) - len(set(seen))
        worst_missing = max(worst_missing, len(generated - set(seen)))
    ok = worst_missing == 0 and dup == 0
    record(6, ok, f"{len(generated)} generated blocks in each of {len(outputs)} outputs: "
                  f"max missing {worst_missing}, duplicates {dup}")
    assert ok


# -- 7 --------------------------------------------------------------------------------


def test_criterion_07_oracle_equivalence():
    mismatches = 0
    fixtures = 510
    for i in range(fixtures):
        rng = random.Random(f"oracle/{i}")
        n = 4 + i % 13
        blocks = random_lattice(n, rng.randint(n, 6 * n), rng, rng.uniform(0.2, 0.9))
        arrival = random_arrival(blocks, rng)
        state = OrderingState(n)
        inc = [x.log_line() for b in arrival for x in state.receive_block(b)]
        if inc != [x.log_line() for x in naive_order(arrival, n)]:
            mismatches += 1

    def ops_per_arrival(n):
        tot = k = 0
        for s in range(5):
            rng = random.Random(f"ops/{n}/{s}")
            blocks = random_lattice(n, 30 * n, rng, 0.5)
            state = OrderingState(n)
            for b in blocks:
                state.receive_block(b)
            tot += state.ops.total
            k += len(blocks)
        return tot / k

    ops = {n: ops_per_arrival(n) for n in (4, 8, 16)}
    ratios = [ops[8] / ops[4], ops[16] / ops[8]]
    growth_ok = all(4 / 5 <= r <= 4 * 5 for r in ratios)
    ok = mismatches == 0 and growth_ok
    record(7, ok, f"{fixtures} fixtures n=4..16: {mismatches} mismatches; ops/arrival "
                  + ", ".join(f"n={n}: {v:.1f}" for n, v in ops.items())
                  + f"; ratios {ratios[0]:.2f}, {ratios[1]:.2f} (allowed 0.8..20)")
    assert ok


# -- 8 --------------------------------------------------------------------------------


def test_criterion_08_six_chain_example():
    delivered, pending, ix = load_six_chain()
    state = OrderingState(6, 5, delivered=[b.hash for b in delivered])
    for b in pending:
        state.receive_block(b, deliver=False)
    h = {k: v.hash for k, v in ix.items()}
    checks = {
        "ANS(B3)": state.ans_of(h[B, 3]) == {A, B, D},
        "ANS(E0)": state.ans_of(h[E, 0]) == {A, B, C, D, E},
        "AHV(E0)": state.ahv_of(h[E, 0]) == (INF, INF, 2, 1, 0, None),
        "AHV(A1)": state.ahv_of(h[A, 1]) == (1, INF, INF, INF, INF, None),
        "#AHV(E0)": state.ahv_count(h[E, 0]) == 3,
        "#AHV(A1)": state.ahv_count(h[A, 1]) == 1,
        "A": state.preceding_set() == {h[A, 1], h[B, 3], h[E, 0]},
    }
    ok = all(checks.values())
    record(8, ok, "six-chain example (preceding set at phi=5): "
                  + " ".join(f"{k}={'ok' if v else 'WRONG'}" for k, v in checks.items()))
    assert ok


# -- 9 --------------------------------------------------------------------------------


def test_criterion_09_sizing_table():
    cells = reproduce_table()
    bad = [c for c in cells if not c.match]
    detail = f"{len(cells) - len(bad)}/{len(cells)} cells match"
    if bad:
        detail += "; mismatches " + ", ".join(
            f"(N={c.population}, K={c.byzantine}, 2^{c.target_log2}): computed {c.computed} vs published {c.published}"
            for c in bad
        )
    record(9, not bad, detail)
    for c in bad:
        print(f"  diagnosis N={c.population} K={c.byzantine} {c.target_log2}: {c.diagnosis}")
    assert len(cells) == 12
    assert not bad, detail


# -- 10 -------------------------------------------------------------------------------


def test_criterion_10_chain_integrity():
    scenarios = [load(p) for p in sorted(SCENARIOS.glob("*.json")) if p.stem != "invalid_notary_size"]
    scenarios += [agreement_scenario(i) for i in range(0, 200, 7)]
    checked = failed = tamper_checked = tamper_passed = 0
    for sc in scenarios:
        res = run(sc)
        failed += sum(1 for v in res.violations if v.kind == "integrity")
        for node in res.correct[:2]:
            for j, cs in node.chains.items():
                for h in sorted(cs.blocks):
                    if h == 0:
                        continue
                    block, parent = cs.blocks[h], cs.blocks[h - 1]
                    group = node.notary_group(j, h - 1)[0]
                    checked += 1
                    if not verify_notarization(group, parent, block.parent_notarization):
                        failed += 1
                    if h <= 3:
                        raw = bytearray(parent.encode())
                        for pos in range(len(raw)):
                            raw[pos] ^= 0x01
                            msg = notarization_message(j, h - 1, hash_bytes(bytes(raw)))
                            tamper_checked += 1
                            tamper_passed += verify_threshold(group, msg, block.parent_notarization)
                            raw[pos] ^= 0x01
    ok = failed == 0 and checked > 0 and tamper_passed == 0
    record(10, ok, f"{len(scenarios)} runs: {checked - failed}/{checked} parent notarizations verify; "
                   f"{tamper_passed}/{tamper_checked} single-byte tamperings still verify")
    assert ok


# -- 11 -------------------------------------------------------------------------------


def test_criterion_11_load_balancer():
    sc = load(SCENARIOS / "load_balancer_4x4.json")
    res = run(sc)
    assert res.ok, res.violations
    worst = None
    for node in res.correct:
        owners = {}
        for j, cs in node.chains.items():
            for block in cs.blocks.values():
                for tx in block.payload:
                    owners.setdefault(tx, []).append(j)
        multi = sum(1 for v in owners.values() if len(v) != 1)
        wrong = sum(1 for tx, v in owners.items() if v[0] != tx.value % 4)
        stat = (len(owners), multi, wrong)
        worst = stat if worst is None or stat < worst else worst
    packed, multi, wrong = worst
    ok = packed == sc.tx_count and multi == 0 and wrong == 0
    record(11, ok, f"4 chains, {sc.tx_count} transactions: {packed} packed, "
                   f"{multi} packed more than once, {wrong} on the wrong chain")
    assert ok


# -- 12 -------------------------------------------------------------------------------


def test_criterion_12_config_change():
    base = load(SCENARIOS / "config_change_3to4.json")
    diverged = regressions = not_crossed = 0
    for seed in range(100):
        change = base.config_change if seed % 2 == 0 else ConfigChangeSpec(base.config_change.time, 2)
        sc = replace(base, seed=seed, config_change=change)
        res = run(sc)
        assert res.ok, (seed, res.violations)
        outputs = []
        for node in res.correct:
            comp = node.compaction
            if not comp.boundary_reached:
                not_crossed += 1
                continue
            entries = comp.entries
            cut = next(i for i, e in enumerate(entries) if e.config_round == 1 or e.mode.value == "flush")
            last_r2 = next((i for i, e in enumerate(entries) if e.config_round == 1), len(entries))
            window = entries[max(cut - 1, 0): last_r2 + 1]
            times = [e.consensus_time for e in window]
            regressions += any(b < a for a, b in zip(times, times[1:]))
            outputs.append([(e.block.hash, e.consensus_time) for e in entries[: last_r2 + 1]])
        k = min(len(o) for o in outputs)
        diverged += any(o[:k] != outputs[0][:k] for o in outputs) or k == 0
    ok = not (diverged or regressions or not_crossed)
    record(12, ok, f"100 seeds (3->4 and 3->2 chains): {diverged} with differing cross-boundary output, "
                   f"{regressions} node outputs with a timestamp regression at the boundary, "
                   f"{not_crossed} nodes short of the boundary")
    assert ok
