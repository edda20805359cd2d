"""Command line: run scenarios, compare orderings, committee sizing, replay."""

from __future__ import annotations

import os
import sys
from dataclasses import replace
from pathlib import Path

import click

from . import sizing
from .lattice import parse_fixture
from .netsim.runner import run
from .netsim.scenario import ScenarioInvalid, load
from .replay import permutation_sweep, replay_report, write_ordering_report
from .report import RunReport, order_check

OUT_ENV = "LATTICEBFT_OUT"
EXIT_OK, EXIT_VIOLATION, EXIT_SCENARIO = 0, 1, 2


def default_out() -> Path:
    return Path(os.environ.get(OUT_ENV, "reports"))


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Blocklattice consensus simulator and analysis tools."""


@main.command("run")
@click.argument("scenario", type=click.Path(dir_okay=False))
@click.option("--out", "out", type=click.Path(file_okay=False), default=None,
              help=f"Report directory (default: ${OUT_ENV}/<name>-seed<seed>, else ./reports/...).")
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--transcript/--no-transcript", default=None, help="Record every message delivery.")
def run_cmd(scenario, out, seed, transcript):
    """Simulate SCENARIO and write a run report.

    Exit 0 when every invariant holds, 1 on a violation, 2 on a bad scenario.
    """
    try:
        sc = load(scenario)
        if seed is not None:
            sc = sc.with_seed(seed)
    except ScenarioInvalid as exc:
        click.echo(f"scenario error: {exc}", err=True)
        sys.exit(EXIT_SCENARIO)
    if transcript is not None:
        sc = replace(sc, transcript=transcript)
    rep = RunReport.from_result(run(sc))
    target = Path(out) if out else default_out() / f"{sc.name}-seed{sc.seed}"
    rep.write(target)
    click.echo(rep.render())
    click.echo(f"report: {target}")
    if not rep.ok:
        click.echo("invariant violations:", err=True)
        for v in rep.violations:
            click.echo(f"  {v}", err=True)
        sys.exit(EXIT_VIOLATION)
    sys.exit(EXIT_OK)


@main.command("order-check")
@click.argument("reports", nargs=-1, required=True, type=click.Path(exists=True, file_okay=False))
def order_check_cmd(reports):
    """Compare batch logs and timestamp sequences of every node in REPORTS.

    Sequences are compared over their common prefix (nodes stop at different points).
    """
    div = order_check(reports)
    if div is not None:
        click.echo(div.line())
        sys.exit(EXIT_VIOLATION)
    click.echo(f"identical ordering across {len(reports)} report(s)")
    sys.exit(EXIT_OK)


@main.command("sizing")
@click.option("--population", type=int, default=None, help="Population size N.")
@click.option("--byzantine", type=int, default=None, help="Byzantine count K.")
@click.option("--target-log2", type=int, default=None, help="Failure target exponent, e.g. -40.")
def sizing_cmd(population, byzantine, target_log2):
    """Smallest notary set size m* with failure probability <= 2^target.

    Without options, prints the twelve cells of the published table with a match flag.
    """
    given = [x is not None for x in (population, byzantine, target_log2)]
    if any(given) and not all(given):
        raise click.UsageError("--population, --byzantine and --target-log2 go together")
    if all(given):
        try:
            m = sizing.min_notary_size(sizing.SizingQuery(population, byzantine, target_log2))
        except (sizing.DomainError, sizing.Infeasible) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_VIOLATION)
        click.echo(f"m*={m} log2_fail={sizing.log2_fail_prob(population, byzantine, m):.4f} "
                   f"fail={sizing.fail_prob(population, byzantine, m):.6e}")
        return
    click.echo("population,byzantine,target_log2,computed,published,match,log2_fail_computed,diagnosis")
    for c in sizing.reproduce_table():
        click.echo(
            f"{c.population},{c.byzantine},{c.target_log2},{c.computed},{c.published},"
            f"{'match' if c.match else 'MISMATCH'},{c.log2_fail_computed:.4f},{c.diagnosis}"
        )


@main.command("replay")
@click.argument("source", type=click.Path(exists=True))
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Where to write the re-derived report.")
@click.option("--nodes", type=int, default=5, show_default=True, help="Fixture mode: permuted arrivals to order.")
@click.option("--seed", type=int, default=0, show_default=True, help="Fixture mode: permutation seed.")
@click.option("--phi", type=int, default=None, help="Fixture mode: ordering threshold.")
def replay_cmd(source, out, nodes, seed, phi):
    """Re-derive outputs from SOURCE.

    A report directory is re-run from its scenario and checked against the
    stored transcript and outputs.  A lattice fixture file is ordered under
    --nodes seeded causal permutations, one batch log per permutation.
    """
    src = Path(source)
    if src.is_dir():
        try:
            chk = replay_report(src, out)
        except ScenarioInvalid as exc:
            click.echo(f"scenario error: {exc}", err=True)
            sys.exit(EXIT_SCENARIO)
        t = {None: "no stored transcript", True: "transcript identical", False: "TRANSCRIPT DIFFERS"}[chk.transcript_match]
        o = "outputs identical" if chk.outputs_match else "OUTPUTS DIFFER"
        click.echo(f"{t}; {o}")
        sys.exit(EXIT_OK if chk.outputs_match and chk.transcript_match is not False else EXIT_VIOLATION)
    try:
        blocks = parse_fixture(src.read_text())
    except ValueError as exc:
        click.echo(f"fixture error: {exc}", err=True)
        sys.exit(EXIT_SCENARIO)
    outputs = permutation_sweep(blocks, nodes, seed, phi=phi)
    target = Path(out) if out else default_out() / f"{src.stem}-replay-seed{seed}"
    write_ordering_report(outputs, target)
    delivered = min(sum(len(line.split(",", 2)[2].split(";")) for line in o.batch_lines) for o in outputs)
    click.echo(f"{len(blocks)} blocks, {nodes} permutations, min delivered {delivered}; report: {target}")


if __name__ == "__main__":
    main()
