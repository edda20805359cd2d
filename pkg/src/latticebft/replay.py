"""Re-deriving outputs: ordering a lattice fixture under permuted arrivals, and re-running reports."""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

from .lattice import Block
from .netsim.runner import run
from .ordering import OrderingState
from .report import RunReport, read_batches, read_scenario, read_timestamps, read_transcript
from .timestamp import TIMESTAMP_HEADER, TimestampVector
from .workload import random_arrival


@dataclass
class NodeOutput:
    batch_lines: list[str]
    stamps: list[tuple]  # (position, hash hex, chain, block ts, consensus ts)
    ops: int = 0


def order_arrival(arrival: Sequence[Block], n: int, phi: Optional[int] = None, genesis: int = 0) -> NodeOutput:
    st = OrderingState(n, phi)
    tv = TimestampVector(n, genesis)
    lines, stamps = [], []
    for block in arrival:
        for batch in st.receive_block(block):
            lines.append(batch.log_line())
            for h in batch.blocks:
                b = st.delivered_block(h)
                stamps.append((len(stamps), b.hash.hex(), b.chain_id, b.block_timestamp, tv.push(b)))
    return NodeOutput(lines, stamps, st.ops.total)


def chains_of(blocks: Sequence[Block]) -> int:
    return max(b.chain_id for b in blocks) + 1


def permutation_sweep(
    blocks: Sequence[Block], runs: int, seed: int = 0, n: Optional[int] = None, phi: Optional[int] = None
) -> list[NodeOutput]:
    """One ordering per seeded causal permutation of ``blocks``."""
    n = n or chains_of(blocks)
    rng = random.Random(f"perm/{seed}")
    return [order_arrival(random_arrival(blocks, rng), n, phi) for _ in range(runs)]


def write_ordering_report(outputs: Sequence[NodeOutput], out) -> Path:
    out = Path(out)
    (out / "batches").mkdir(parents=True, exist_ok=True)
    (out / "timestamps").mkdir(parents=True, exist_ok=True)
    for i, o in enumerate(outputs):
        (out / "batches" / f"node_{i}.log").write_text("".join(x + "\n" for x in o.batch_lines))
        with open(out / "timestamps" / f"node_{i}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TIMESTAMP_HEADER)
            w.writerows(o.stamps)
    return out


@dataclass
class ReplayCheck:
    report: RunReport
    transcript_match: Optional[bool]  # None when the original run kept no transcript
    outputs_match: bool  # batch logs and timestamp files equal the stored ones


def replay_report(report_dir, out=None) -> ReplayCheck:
    """Re-run the scenario echoed in ``report_dir`` with the transcript on and compare."""
    sc = read_scenario(report_dir)
    recorded = read_transcript(report_dir)
    rep = RunReport.from_result(run(replace(sc, transcript=True)))
    transcript_match = None if recorded is None else [tuple(x) for x in rep.transcript] == recorded
    stored_b = read_batches(report_dir)
    stored_t = read_timestamps(report_dir)
    outputs_match = stored_b == {f"node_{k}": v for k, v in rep.batches.items()} and stored_t == {
        f"node_{k}": [tuple(str(x) for x in row) for row in v] for k, v in rep.timestamps.items()
    }
    if out is not None:
        rep.write(out)
    return ReplayCheck(rep, transcript_match, outputs_match)
